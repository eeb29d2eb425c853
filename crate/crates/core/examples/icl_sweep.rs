//! A reduced K x T_p sweep through the experiment harness, then ICL
//! accuracy and the loss decomposition read back from metrics.csv.
//!
//!     cargo run --release --example icl_sweep -- [out_dir]

use icl_lab::harness::{run_sweep, ExperimentConfig};

const CONFIG: &str = "
K = 2, 10
N = 40
T = 128
T_p = 8, 64
steps = 1500
seeds = 0
eval_topics = 16
eval_prompts = 128
first_level_sequences = 64
sigma_sequences = 2
l_records = 8
";

fn main() -> icl_lab::Result<()> {
    let mut cfg = ExperimentConfig::parse(CONFIG, ExperimentConfig::sweep())?;
    cfg.out = std::env::args().nth(1).unwrap_or_else(|| "out/icl_sweep_example".into()).into();
    let summary = run_sweep(&cfg)?;
    println!("{} runs ({} reused) -> {}", summary.runs, summary.skipped, summary.table.display());

    let mut reader = csv::Reader::from_path(&summary.table)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    println!("{:>3} {:>4}  {:>8}  {:>10}  {:>8} {:>8} {:>8} {:>8}", "K", "T_p", "icl_acc", "population", "I", "II", "III", "IV");
    for rec in reader.records() {
        let r = rec?;
        let f = |name: &str| r[col(name)].parse::<f64>().unwrap_or(f64::NAN);
        println!(
            "{:>3} {:>4}  {:>8.3}  {:>10.4}  {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            &r[col("K")],
            &r[col("T_p")],
            f("icl_accuracy"),
            f("population"),
            f("part_1"),
            f("part_2"),
            f("part_3"),
            f("part_4")
        );
    }
    Ok(())
}
