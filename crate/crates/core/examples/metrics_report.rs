//! Frame- and video-level AUC, AP and EER of a scores file written by
//! `pcl eval`, or of a small built-in example.
//!
//! cargo run --release --example metrics_report -- [scores.csv]

use pcl::metrics::{auc, average_precision, eer, labeled_set, read_scores_csv, video_metrics, FrameScore};

fn main() -> pcl::Result<()> {
    let rows = match std::env::args().nth(1) {
        Some(p) => read_scores_csv(p)?,
        None => {
            let demo = [("a", 0, 0.1), ("a", 0, 0.4), ("b", 0, 0.35), ("c", 1, 0.8), ("c", 1, 0.3), ("d", 1, 0.7)];
            demo.iter()
                .enumerate()
                .map(|(i, &(v, l, s))| FrameScore {
                    id: format!("{v}#{i}"),
                    video: v.into(),
                    label: Some(l),
                    score: s,
                })
                .collect()
        }
    };
    let Some(set) = labeled_set(&rows) else {
        println!("{} frames, some unlabeled: nothing to report", rows.len());
        return Ok(());
    };
    println!(
        "frame level: AUC {:.4}  AP {:.4}  EER {:.4}",
        auc(&set)?,
        average_precision(&set)?,
        eer(&set)?
    );
    let v = video_metrics(&set)?;
    println!("video level ({} videos, {} frames): AUC {:.4}  AP {:.4}  EER {:.4}", v.n_videos, v.n_frames, v.auc, v.ap, v.eer);
    Ok(())
}
