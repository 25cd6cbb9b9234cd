//! Experiment configuration, runners, gradient checks and diagnostics.

pub mod config;
pub mod dump;
pub mod experiment;
pub mod gradcheck;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use dump::dump_similarity;
pub use experiment::{run_experiment, summarize, sweep, RunResult, Summary, RESULTS_HEADER};
pub use gradcheck::{gradcheck, Component, Report};

/// Environment variable that redirects result files into another directory.
pub const OUTPUT_DIR_ENV: &str = "WLDREG_OUTPUT_DIR";

/// Re-roots the config's output files under `dir`, keeping file names.
pub fn redirect_outputs(cfg: &mut ExperimentConfig, dir: &std::path::Path) {
    let rehome = |p: &std::path::Path| dir.join(p.file_name().unwrap_or(p.as_os_str()));
    let output = rehome(&cfg.output);
    cfg.output = output;
    cfg.curves = cfg.curves.as_deref().map(rehome);
}
