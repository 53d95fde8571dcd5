//! Builds the ground-truth consistency volume of a spliced mask and prints
//! the fused per-patch heatmap.
//!
//! cargo run --release --example consistency_volume

use pcl::consistency::{downsample_mask, fuse_heatmap, gt_volume};
use pcl::imaging::GrayMap;

fn main() -> pcl::Result<()> {
    // 128 x 128 image, manipulated square in the upper-left quadrant with a
    // soft 8-pixel edge
    let mask = GrayMap::from_fn(128, 128, |r, c| {
        let d = (r.max(c) as f32 - 48.0) / 8.0;
        (1.0 - d).clamp(0.0, 1.0)
    })?;
    let coarse = downsample_mask(&mask, 8, 8)?;
    let v = gt_volume(&coarse);
    println!("coarse mask (8x8):");
    for r in 0..8 {
        let row: Vec<String> = (0..8).map(|c| format!("{:.2}", coarse.get(r, c))).collect();
        println!("  {}", row.join(" "));
    }
    println!("V[(0,0),(7,7)] = {:.3}  V[(0,0),(1,1)] = {:.3}", v.get(0, 0, 7, 7), v.get(0, 0, 1, 1));
    let heat = fuse_heatmap(&v);
    println!("fused consistency (low = disagrees with the rest):");
    for r in 0..8 {
        let row: Vec<String> = (0..8).map(|c| format!("{:.2}", heat.coarse.get(r, c))).collect();
        println!("  {}", row.join(" "));
    }
    let pristine = gt_volume(&downsample_mask(&GrayMap::zeros(128, 128)?, 8, 8)?);
    println!("pristine volume all ones: {}", pristine.is_all_ones());
    Ok(())
}
