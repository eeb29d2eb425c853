//! Linear dynamical systems as topics: a shared linear readout predicts
//! the next observation better late in a sequence than on average.
//!
//!     cargo run --release --example lds_icl -- [out_dir]

use icl_lab::harness::{lds_data, grid, run_lds, ExperimentConfig, Generator};
use icl_lab::metrics::{lds_losses, lds_view};
use icl_lab::model::SequenceModel;
use icl_lab::optim::{train_lds, TrainConfig};

fn main() -> icl_lab::Result<()> {
    let mut cfg = ExperimentConfig::lds();
    cfg.out = std::env::args().nth(1).unwrap_or_else(|| "out/lds_example".into()).into();
    let summary = run_lds(&cfg)?;
    let mut reader = csv::Reader::from_path(&summary.table)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    println!("{:>4}  {:>12}  {:>12}", "seed", "overall MSE", "last MSE");
    for rec in reader.records() {
        let r = rec?;
        println!("{:>4}  {:>12}  {:>12}", &r[col("seed")], &r[col("population")], &r[col("population_last")]);
    }

    // Per-position error of one trained readout.
    let key = &grid(&cfg, "lds", Generator::Lds)[0];
    let data = lds_data(&cfg, key)?;
    let view: Vec<usize> = (0..data.train.records.len()).collect();
    let tc = TrainConfig { schedule: cfg.schedule(cfg.lr), ..TrainConfig::sgd(2000, cfg.batch, cfg.lr, 1) };
    let (model, _) = train_lds(SequenceModel::init(cfg.lds_arch(), 0.0, 0)?, &data.train, &view, &tc)?;
    let held = lds_view(&data.held_out, &(0..data.held_out.records.len()).collect::<Vec<_>>());
    for len in [2, 4, 8, 16, 32] {
        let cut: Vec<Vec<Vec<f64>>> = held.iter().map(|s| s[..len].to_vec()).collect();
        let (_, last) = lds_losses(&model, &cut)?;
        println!("MSE predicting position {len:>2}: {last:.5}");
    }
    Ok(())
}
