//! Pre-training on sequences whose transitions carry no topic structure,
//! next to a structured control trained the same way. Accuracy of the
//! first stays near chance.
//!
//!     cargo run --release --example failure_case -- [out_dir]

use icl_lab::harness::{run_failure_case, ExperimentConfig};

const CONFIG: &str = "
K = 10
N = 40
T = 128
T_p = 64
steps = 1500
seeds = 0, 1
eval_topics = 16
eval_prompts = 256
first_level_sequences = 32
sigma_sequences = 2
l_records = 8
";

fn main() -> icl_lab::Result<()> {
    let mut cfg = ExperimentConfig::parse(CONFIG, ExperimentConfig::failure())?;
    cfg.out = std::env::args().nth(1).unwrap_or_else(|| "out/failure_example".into()).into();
    let summary = run_failure_case(&cfg)?;

    let mut reader = csv::Reader::from_path(&summary.table)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    println!("{:<16} {:>4}  {:>8}  {:>8}", "experiment", "seed", "icl_acc", "chance");
    for rec in reader.records() {
        let r = rec?;
        println!("{:<16} {:>4}  {:>8}  {:>8}", &r[col("experiment")], &r[col("seed")], &r[col("icl_accuracy")], &r[col("chance")]);
    }
    Ok(())
}
