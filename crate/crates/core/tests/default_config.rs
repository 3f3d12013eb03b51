use std::path::PathBuf;

use lfa_core::{build_model, estimate_flops, LfaConfig};

fn shipped() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/lfa_default.toml")
}

#[test]
fn shipped_config_equals_builtin_defaults() {
    assert_eq!(LfaConfig::load(shipped()).unwrap(), LfaConfig::default());
}

#[test]
fn shipped_config_lands_in_the_complexity_budget() {
    let cfg = LfaConfig::load(shipped()).unwrap();
    let model = build_model(&cfg.model, 0).unwrap();
    let report = estimate_flops(&model, [1, 3, 512, 512].into()).unwrap();
    assert_eq!(report.param_count, 109_527);
    assert!((0.09e6..=0.13e6).contains(&(report.param_count as f64)));
    assert!((3.35e9..=5.58e9).contains(&(report.flops as f64)));
}
