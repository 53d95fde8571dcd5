//! Trains the consistency model on toy faces (reals plus I2G fakes) and
//! evaluates on videos from texture families never seen in training.
//!
//! cargo run --release --example toy_experiment -- [lambda] [epochs]

use std::time::Instant;

use pcl::synth::ToyExperiment;

fn main() -> pcl::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let lambda: f64 = args.next().map_or(10.0, |s| s.parse().expect("lambda"));
    let mut exp = ToyExperiment::default();
    if let Some(e) = args.next() {
        exp.train.epochs = e.parse().expect("epochs");
    }
    let (corpus, split) = exp.corpus()?;
    let t = Instant::now();
    let run = exp.run(&corpus, &split, lambda)?;
    for s in run.outcome.log.iter().step_by(run.outcome.log.len().div_ceil(12)) {
        println!("step {:5}  lr {:.2e}  l_pcl {:.4}  l_cls {:.4}", s.step, s.lr, s.l_pcl, s.l_cls);
    }
    let ious: Vec<f64> = run.frames.iter().filter_map(|f| f.iou).collect();
    let good = ious.iter().filter(|&&v| v >= 0.3).count();
    println!(
        "lambda {lambda}: video AUC {:.4}  AP {:.4}  EER {:.4}  | IoU>=0.3 on {good}/{}  | {:.1}s",
        run.report.auc,
        run.report.ap,
        run.report.eer,
        ious.len(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
