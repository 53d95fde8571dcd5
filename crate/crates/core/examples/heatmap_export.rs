//! Trains a small model on 64-pixel toy faces for a few epochs, then writes
//! the fused consistency heatmap and overlay of a held-out fake.
//!
//! cargo run --release --example heatmap_export -- [out_dir] [epochs]

use pcl::cli::heatmap_for_image;
use pcl::consistency::overlay;
use pcl::imaging::{write_gray_png, write_image};
use pcl::metrics::low_region_iou;
use pcl::synth::{ToyCorpusConfig, ToyExperiment};

fn main() -> pcl::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "heatmap_out".into());
    let mut exp = ToyExperiment {
        corpus: ToyCorpusConfig {
            size: 64,
            ..ToyCorpusConfig::default()
        },
        ..ToyExperiment::default()
    };
    exp.model.input_size = 64;
    exp.train.epochs = args.next().map_or(8, |s| s.parse().expect("epochs"));
    let (corpus, split) = exp.corpus()?;
    let model = exp.fit(&corpus, 10.0)?.model;
    std::fs::create_dir_all(&out).expect("create output dir");
    for (k, f) in split.iter().filter(|f| f.label == 1).take(3).enumerate() {
        let (pred, heat) = heatmap_for_image(&model, &f.image)?;
        let full = heat.full.expect("full heatmap");
        let iou = low_region_iou(&full, f.mask.as_ref().expect("fake mask"), 0.1)?;
        println!("{}: fake probability {:.3}, bottom-decile IoU {iou:.3}", f.id, pred.fake_prob);
        write_image(&f.image, format!("{out}/{k}_fake.png"))?;
        write_gray_png(&full, format!("{out}/{k}_heatmap.png"))?;
        write_image(&overlay(&f.image, &full, 0.6, false)?, format!("{out}/{k}_overlay.png"))?;
    }
    Ok(())
}
