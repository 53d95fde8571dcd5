//! Recovers the manipulated region of a fake from its real counterpart with
//! the DSSIM mask and compares it to the true blend mask.
//!
//! cargo run --release --example dssim_mask -- [out_dir]

use pcl::data::{dssim_mask, DssimMaskConfig};
use pcl::i2g::generate_with_seed;
use pcl::imaging::{write_gray_png, write_image, Raster};
use pcl::synth::{toy_corpus, toy_i2g_config, ToyCorpusConfig};

fn main() -> pcl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "dssim_out".into());
    std::fs::create_dir_all(&out).expect("create output dir");
    let corpus = toy_corpus(&ToyCorpusConfig {
        train_videos: 6,
        held_out_videos: 0,
        ..ToyCorpusConfig::default()
    })?;
    let real = &corpus.train[0];
    let pair = generate_with_seed(real, &corpus.train, &toy_i2g_config(128, 0), 42)?;
    let cfg = DssimMaskConfig::default();
    let est = dssim_mask(&real.image, &pair.forged, &cfg)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (a, b) in est.data().iter().zip(pair.mask.data()) {
        let (a, b) = (*a > 0.5, *b > 0.5);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    println!(
        "{} <- {}: estimated area {:.3}, true area {:.3}, IoU {:.3}",
        pair.target_id,
        pair.source_id,
        est.mean(),
        pair.mask.mean(),
        inter as f64 / union.max(1) as f64
    );
    write_image(&pair.forged, format!("{out}/fake.png"))?;
    write_gray_png(&pair.mask, format!("{out}/true_mask.png"))?;
    write_gray_png(&est, format!("{out}/dssim_mask.png"))?;
    Ok(())
}
