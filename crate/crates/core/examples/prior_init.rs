//! Train a small model on part of the corpus, grow it into the large
//! architecture, and race it against random initialization.
//!
//!     cargo run --release --example prior_init -- [out_dir]

use icl_lab::harness::{run_prior_init, ExperimentConfig, PRIOR_COLUMNS};

const CONFIG: &str = "
K = 10
prior_holdout = 3
steps = 1000
small_steps = 600
seeds = 0
";

fn main() -> icl_lab::Result<()> {
    let mut cfg = ExperimentConfig::parse(CONFIG, ExperimentConfig::prior_init())?;
    cfg.out = std::env::args().nth(1).unwrap_or_else(|| "out/prior_init_example".into()).into();
    let summary = run_prior_init(&cfg)?;

    let at = |name: &str| PRIOR_COLUMNS.iter().position(|c| *c == name).unwrap();
    println!("threshold: trailing-{} mean loss <= {}", cfg.smooth_window, cfg.tau);
    println!("{:<7} {:>8} {:>9} {:>9} {:>9}", "arm", "steps", "censored", "initial", "final");
    for rec in csv::Reader::from_path(&summary.table)?.records() {
        let r = rec?;
        println!(
            "{:<7} {:>8} {:>9} {:>9.4} {:>9.4}",
            &r[at("arm")],
            &r[at("steps_to_threshold")],
            &r[at("censored")],
            r[at("initial_loss")].parse::<f64>().unwrap_or(f64::NAN),
            r[at("final_loss")].parse::<f64>().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
