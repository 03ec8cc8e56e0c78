//! Experiment runners behind the `ftn` command-line tool.

pub mod analyze;
pub mod approx;
pub mod classify;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod prep;
pub mod report;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::RunError;

/// Run the experiment named by `cfg.kind` and return a one-line summary.
pub fn run(cfg: &ExperimentConfig) -> Result<String, RunError> {
    match cfg.kind {
        ExperimentKind::Approx => {
            let r = approx::run_approx(cfg)?;
            Ok(r
                .units
                .iter()
                .map(|u| format!("L={} mae T1 {:.4} T2 {:.4} T3 {:.4}", u.len, u.test_mae[0], u.test_mae[1], u.test_mae[2]))
                .collect::<Vec<_>>()
                .join("; "))
        }
        ExperimentKind::Classify => {
            let r = classify::run_classify(cfg)?;
            Ok(format!(
                "final test error {:.4} (best {:.4}) after {} iterations",
                r.final_test_error, r.best_test_error, r.iterations
            ))
        }
        ExperimentKind::AnalyzeLocations => {
            let r = analyze::analyze_locations(cfg)?;
            Ok(format!(
                "{} regions of layer {}: median {} locations, max {}",
                r.regions, r.layer, r.median, r.max
            ))
        }
        ExperimentKind::AnalyzeResponse => {
            let r = analyze::analyze_response(cfg)?;
            Ok(r
                .iter()
                .map(|s| format!("{}: corr(avg) {:.4}", s.name, s.corr_avg))
                .collect::<Vec<_>>()
                .join("; "))
        }
        ExperimentKind::Gradcheck => {
            let rows = gradcheck::run_gradcheck(cfg)?;
            let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
            Ok(format!("{} checks passed, worst relative error {worst:.3e}", rows.len()))
        }
    }
}
