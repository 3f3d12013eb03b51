use std::path::{Path, PathBuf};
use std::time::Instant;

use lfa_core::data_io::{
    load_image, load_mask, load_samples, resize, resize_to, synthetic_sample, write_image_png, write_mask_png,
    Interpolation,
};
use lfa_core::evalx::{confusion_counts, metrics, ConfusionCounts};
use lfa_core::model::{ABLATION_ROWS, SPATIAL_MULTIPLE};
use lfa_core::training::{evaluate, EpochStats};
use lfa_core::{
    ablation_row, build_model, estimate_flops, load_checkpoint, model_forward, run_suite, save_checkpoint,
    LfaConfig, LfaError, Manifest, Mode, Result, SuiteOptions, Trainer,
};

use super::{EvalArgs, Failure, GradcheckArgs, InferArgs, InspectArgs, SynthArgs, TrainArgs};

type Outcome = std::result::Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<LfaConfig> {
    match path {
        Some(p) => LfaConfig::load(p),
        None => Ok(LfaConfig::default()),
    }
}

/// `run.ckpt` → `run.epoch12.ckpt`.
fn periodic_path(out: &Path, epoch: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.epoch{epoch}.{}", ext.to_string_lossy()),
        None => format!("{stem}.epoch{epoch}"),
    };
    out.with_file_name(name)
}

pub fn train(a: TrainArgs) -> Outcome {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(row) = &a.ablation {
        cfg.model = ablation_row(row)?.apply(&cfg.model);
    }
    let run = &mut cfg.train;
    run.epochs = a.epochs.unwrap_or(run.epochs);
    run.seed = a.seed.unwrap_or(run.seed);
    run.input_size = a.input_size.unwrap_or(run.input_size);
    run.split_fraction = a.split.unwrap_or(run.split_fraction);
    run.batch_size = a.batch_size.unwrap_or(run.batch_size);
    run.checkpoint_every = a.checkpoint_every.unwrap_or(run.checkpoint_every);
    run.augment |= a.augment;
    cfg.adam.learning_rate = a.lr.unwrap_or(cfg.adam.learning_rate);
    cfg.validate()?;

    let manifest = Manifest::load(&a.manifest)?.with_split(cfg.train.seed, cfg.train.split_fraction)?;
    let (train_entries, val_entries) = manifest.split();
    if train_entries.is_empty() {
        return Err(LfaError::Data(format!(
            "split fraction {} leaves no training samples out of {}",
            cfg.train.split_fraction,
            manifest.entries.len()
        ))
        .into());
    }
    let size = Some(cfg.train.input_size);
    let train_set = load_samples(&train_entries, size)?;
    let val_set = load_samples(&val_entries, size)?;

    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let optimizer = ck.optimizer.ok_or_else(|| {
                LfaError::config(format!("{} carries no optimizer state to resume from", path.display()))
            })?;
            Trainer::resume(ck.model, optimizer, cfg.train.clone(), cfg.loss)?
        }
        None => {
            let model = build_model(&cfg.model, cfg.train.seed)?;
            Trainer::new(model, cfg.train.clone(), cfg.loss, cfg.adam)?
        }
    };
    println!(
        "training {} parameters on {} samples ({} validation) at {}x{}",
        trainer.model.param_count(),
        train_set.len(),
        val_set.len(),
        cfg.train.input_size,
        cfg.train.input_size
    );
    println!("{}", EpochStats::LOG_HEADER);
    for epoch in 1..=cfg.train.epochs {
        let stats = trainer.epoch(&train_set, &val_set)?;
        println!("{}", stats.log_line());
        let every = cfg.train.checkpoint_every;
        if every > 0 && epoch % every == 0 && epoch < cfg.train.epochs {
            save_checkpoint(&trainer.model, Some(&trainer.optimizer), periodic_path(&a.out, epoch))?;
        }
    }
    save_checkpoint(&trainer.model, Some(&trainer.optimizer), &a.out)?;
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn pngs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| LfaError::io(dir, e))? {
        let path = entry.map_err(|e| LfaError::io(dir, e))?.path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn network_extent(h: usize, w: usize, requested: Option<usize>) -> Result<Option<usize>> {
    match requested {
        Some(s) => Ok(Some(s)),
        None if h.is_multiple_of(SPATIAL_MULTIPLE) && w.is_multiple_of(SPATIAL_MULTIPLE) => Ok(None),
        None => Err(LfaError::config(format!(
            "image extent {h}x{w} is not a multiple of {SPATIAL_MULTIPLE}; pass --input-size"
        ))),
    }
}

pub fn infer(a: InferArgs) -> Outcome {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(LfaError::config(format!("threshold {} outside (0, 1)", a.threshold)).into());
    }
    let model = load_checkpoint(&a.checkpoint)?.model;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        let inputs = pngs_in(&a.input)?;
        if inputs.is_empty() {
            return Err(LfaError::Data(format!("no PNG files in {}", a.input.display())).into());
        }
        std::fs::create_dir_all(&a.output).map_err(|e| LfaError::io(&a.output, e))?;
        inputs
            .into_iter()
            .map(|p| {
                let out = a.output.join(p.file_name().expect("listed file has a name"));
                (p, out)
            })
            .collect()
    } else {
        vec![(a.input.clone(), a.output.clone())]
    };
    for (input, output) in jobs {
        let start = Instant::now();
        let image = load_image(&input)?;
        let (h, w) = (image.shape().h, image.shape().w);
        let size = network_extent(h, w, a.input_size)?;
        let x = match size {
            Some(s) => resize(&image, s, Interpolation::Bilinear)?,
            None => image,
        };
        let probs = model_forward(&model, &x, Mode::Infer, None)?;
        let digest = probs.digest();
        let probs = match size {
            Some(_) => resize_to(&probs, h, w, Interpolation::Bilinear)?,
            None => probs,
        };
        write_mask_png(&probs, a.threshold, &output)?;
        println!(
            "{}  {h}x{w}  {:.1} ms  digest {digest:08x}  -> {}",
            input.display(),
            start.elapsed().as_secs_f64() * 1e3,
            output.display()
        );
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Outcome {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(LfaError::config(format!("threshold {} outside (0, 1)", a.threshold)).into());
    }
    let manifest = Manifest::load(&a.manifest)?;
    let (counts, mean_loss) = match (&a.checkpoint, &a.predictions) {
        (Some(ck), _) => {
            let ck = load_checkpoint(ck)?;
            let samples = load_samples(&manifest.entries, a.input_size)?;
            let e = evaluate(&ck.model, &samples, &Default::default(), a.threshold)?;
            (e.counts, Some(e.mean_loss))
        }
        (None, Some(dir)) => {
            let mut counts = ConfusionCounts::default();
            for entry in &manifest.entries {
                let name = entry.image.file_name().expect("manifest entry has a file name");
                let pred = load_mask(dir.join(name))?;
                let truth = load_mask(&entry.mask)?;
                if pred.shape() != truth.shape() {
                    return Err(LfaError::Data(format!(
                        "prediction for {} is {} but its mask is {}",
                        entry.image.display(),
                        pred.shape(),
                        truth.shape()
                    ))
                    .into());
                }
                counts += confusion_counts(&pred, &truth, a.threshold)?;
            }
            (counts, None)
        }
        (None, None) => unreachable!("clap requires --checkpoint or --predictions"),
    };
    let report = metrics(&counts)?;
    println!("{report}");
    println!(
        "pixels {}  tp {}  fp {}  tn {}  fn {}",
        counts.total(),
        counts.tp,
        counts.fp,
        counts.tn,
        counts.fn_
    );
    if let Some(l) = mean_loss {
        println!("mean loss {l:.6}");
    }
    Ok(())
}

pub fn inspect(a: InspectArgs) -> Outcome {
    let model = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?.model,
        None => {
            let mut cfg = load_config(a.config.as_deref())?.model;
            if let Some(row) = &a.ablation {
                cfg = ablation_row(row)?.apply(&cfg);
            }
            build_model(&cfg, 0)?
        }
    };
    if a.batch == 0 {
        return Err(LfaError::config("batch must be at least 1").into());
    }
    let report = estimate_flops(&model, [a.batch, model.config.in_channels, a.input_size, a.input_size].into())?;
    if a.csv {
        print!("{}", report.layers_csv());
    } else if a.layers {
        print!("{}", report.layers_table());
    } else {
        println!("{report}");
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Outcome {
    let opts = SuiteOptions {
        tolerance: a.tolerance,
        only: a.op,
        seed: a.seed,
    };
    let start = Instant::now();
    let reports = run_suite(&opts)?;
    for r in &reports {
        println!("{}", r.summary());
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.op_name.as_str()).collect();
    println!(
        "{}/{} checks passed in {:.1} s",
        reports.len() - failed.len(),
        reports.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("gradient check failed: {}", failed.join(", "))))
    }
}

pub fn ablation_list() -> Outcome {
    let width = ABLATION_ROWS.iter().map(|r| r.name.len()).max().unwrap_or(0);
    println!("{:<width$}  {:>9}  switches", "row", "params");
    for row in ABLATION_ROWS.iter() {
        let model = build_model(&row.apply(&Default::default()), 0)?;
        println!(
            "{:<width$}  {:>7.3} M  {}\n{:<width$}  {:>9}  {}",
            row.name,
            model.param_count() as f64 / 1e6,
            row.flags(),
            "",
            "",
            row.description
        );
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Outcome {
    if a.size == 0 || !a.size.is_multiple_of(SPATIAL_MULTIPLE) {
        return Err(LfaError::config(format!("size {} must be a positive multiple of {SPATIAL_MULTIPLE}", a.size)).into());
    }
    let images = a.out.join("images");
    let masks = a.out.join("masks");
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(|e| LfaError::io(d, e))?;
    }
    let mut manifest = String::from("# image\tmask\n");
    for k in 0..a.count as u64 {
        let s = synthetic_sample(a.size, a.seed.wrapping_add(k));
        let file = format!("{}.png", s.name);
        write_image_png(&s.image, images.join(&file))?;
        write_mask_png(&s.mask, 0.5, masks.join(&file))?;
        manifest.push_str(&format!("images/{file}\tmasks/{file}\n"));
    }
    let path = a.out.join("manifest.tsv");
    std::fs::write(&path, manifest).map_err(|e| LfaError::io(&path, e))?;
    println!("wrote {} pairs of {}x{} and {}", a.count, a.size, a.size, path.display());
    Ok(())
}
