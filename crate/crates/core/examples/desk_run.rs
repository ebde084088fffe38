//! Runs the desk-scale synthetic scenario end to end and prints the
//! calibration summary.
//!
//! cargo run --release --example desk_run -- [seed]

use flowattn::detector::SparsityMode;
use flowattn::pipeline::{prepare, run_detection, PipelineConfig};
use flowattn::synth::{generate, ScenarioSpec};

fn main() -> flowattn::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let data = generate(&ScenarioSpec::desk(seed))?;
    let mut cfg = PipelineConfig::default();
    cfg.train.seed = seed;
    cfg.split.seed = seed;
    cfg.loss.sparsity_mode = SparsityMode::Entropy;
    let prepared = prepare(&data.records, &cfg.split, &cfg.train)?;
    println!("{:?}", prepared.summary);
    let start = std::time::Instant::now();
    let run = run_detection(&prepared, &cfg)?;
    println!("trained in {:.2?}", start.elapsed());
    println!("loss {:.4} -> {:.4}", run.curve[0], run.curve.last().unwrap());
    let c = &run.calibration;
    println!("val   {:?}", c.operating_point);
    println!("test  {:?}", c.test_point);
    println!(
        "val sweep endpoints f1 {:.3} / {:.3}",
        c.val_sweep.points[0].f1,
        c.val_sweep.points.last().unwrap().f1
    );
    Ok(())
}
