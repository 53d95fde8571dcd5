//! Renders a few toy faces and blends them into self-inconsistent fakes.
//!
//! cargo run --release --example i2g_generate -- [out_dir]

use pcl::i2g::generate;
use pcl::imaging::{write_gray_png, write_image};
use pcl::synth::{toy_corpus, toy_i2g_config, ToyCorpusConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pcl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "i2g_out".into());
    std::fs::create_dir_all(&out).expect("create output dir");
    let corpus = toy_corpus(&ToyCorpusConfig {
        train_videos: 8,
        held_out_videos: 0,
        ..ToyCorpusConfig::default()
    })?;
    let cfg = toy_i2g_config(128, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (k, target) in corpus.train.iter().step_by(4).take(4).enumerate() {
        let pair = generate(target, &corpus.train, &cfg, &mut rng)?;
        write_image(&target.image, format!("{out}/{k}_target.png"))?;
        write_image(&pair.forged, format!("{out}/{k}_forged.png"))?;
        write_gray_png(&pair.mask, format!("{out}/{k}_mask.png"))?;
        println!(
            "{k}: {} <- {} via {} (seed {:#x}, mask mean {:.3})",
            pair.target_id,
            pair.source_id,
            pair.blend_method.as_str(),
            pair.seed_used,
            pair.mask.mean()
        );
    }
    Ok(())
}
