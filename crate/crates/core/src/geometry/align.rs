use serde::{Deserialize, Serialize};

use super::{Landmarks, Point};
use crate::error::{Error, Result};
use crate::imaging::{sample_bilinear, Image, Raster};

/// `p -> scale * R(rotation) * p + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: 0.0,
            translation: (0.0, 0.0),
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        Point::new(
            self.scale * (c * p.x - s * p.y) + self.translation.0,
            self.scale * (s * p.x + c * p.y) + self.translation.1,
        )
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv_scale = 1.0 / self.scale;
        let rot = -self.rotation;
        let (s, c) = rot.sin_cos();
        let (tx, ty) = self.translation;
        SimilarityTransform {
            scale: inv_scale,
            rotation: rot,
            translation: (-inv_scale * (c * tx - s * ty), -inv_scale * (s * tx + c * ty)),
        }
    }

    pub fn apply_landmarks(&self, lm: &Landmarks) -> Landmarks {
        lm.map(|p| self.apply(p))
    }

    /// Sum of squared distances between transformed `src` and `dst`.
    pub fn residual(&self, src: &Landmarks, dst: &Landmarks) -> f64 {
        src.points()
            .iter()
            .zip(dst.points())
            .map(|(&p, q)| {
                let t = self.apply(p);
                (t.x - q.x).powi(2) + (t.y - q.y).powi(2)
            })
            .sum()
    }
}

fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    Point::new(sx / n, sy / n)
}

/// Closed-form least-squares similarity transform mapping `src` onto `dst`.
pub fn estimate_alignment(src: &Landmarks, dst: &Landmarks) -> Result<SimilarityTransform> {
    let cs = centroid(src.points());
    let cd = centroid(dst.points());
    let (mut a, mut b, mut norm) = (0.0, 0.0, 0.0);
    for (p, q) in src.points().iter().zip(dst.points()) {
        let (x, y) = (p.x - cs.x, p.y - cs.y);
        let (u, v) = (q.x - cd.x, q.y - cd.y);
        a += x * u + y * v;
        b += x * v - y * u;
        norm += x * x + y * y;
    }
    if norm < 1e-12 {
        return Err(Error::DegenerateGeometry("source landmarks have zero spread".into()));
    }
    let scale = (a * a + b * b).sqrt() / norm;
    if scale < 1e-12 {
        return Err(Error::DegenerateGeometry("target landmarks have zero spread".into()));
    }
    let rotation = b.atan2(a);
    let mut t = SimilarityTransform {
        scale,
        rotation,
        translation: (0.0, 0.0),
    };
    let moved = t.apply(cs);
    t.translation = (cd.x - moved.x, cd.y - moved.y);
    Ok(t)
}

/// Backward-mapped bilinear warp of `img` by `t` into an `out_h x out_w`
/// frame, replicating edge pixels for out-of-range lookups.
pub fn warp(img: &Image, t: &SimilarityTransform, out_h: usize, out_w: usize) -> Result<Image> {
    if !(t.scale > 0.0) || !t.scale.is_finite() {
        return Err(Error::Parameter(format!("similarity scale must be positive, got {}", t.scale)));
    }
    let inv = t.inverse();
    let (h, w) = img.dims();
    let mut out = Vec::with_capacity(out_h * out_w * 3);
    for r in 0..out_h {
        for c in 0..out_w {
            let src = inv.apply(Point::new(c as f64, r as f64));
            for ch in 0..3 {
                out.push(sample_bilinear(h, w, 3, img.data(), src.y as f32, src.x as f32, ch).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(out_h, out_w, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LANDMARK_COUNT;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64) -> Landmarks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Landmarks::new(
            (0..LANDMARK_COUNT)
                .map(|_| Point::new(rng.random_range(60.0..190.0), rng.random_range(50.0..200.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_when_equal() {
        let a = cloud(1);
        let t = estimate_alignment(&a, &a).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.rotation.abs() < 1e-12);
        assert!(t.translation.0.abs() < 1e-9 && t.translation.1.abs() < 1e-9);
    }

    #[test]
    fn exact_scale_and_shift() {
        let a = cloud(2);
        let b = a.map(|p| Point::new(2.0 * p.x + 3.0, 2.0 * p.y + 4.0));
        let t = estimate_alignment(&a, &b).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-12);
        assert!(t.rotation.abs() < 1e-12);
        assert!((t.translation.0 - 3.0).abs() < 1e-9 && (t.translation.1 - 4.0).abs() < 1e-9);
        assert!(t.residual(&a, &b) < 1e-12);
    }

    #[test]
    fn degenerate_source() {
        let a = Landmarks::new(vec![Point::new(5.0, 5.0); LANDMARK_COUNT]).unwrap();
        assert!(matches!(estimate_alignment(&a, &cloud(3)), Err(Error::DegenerateGeometry(_))));
    }

    /// Coarse-to-fine grid search over (scale, rotation) with the optimal
    /// translation (centroid matching) for each candidate.
    fn grid_search_residual(src: &Landmarks, dst: &Landmarks) -> f64 {
        let eval = |s: f64, r: f64| {
            let mut t = SimilarityTransform {
                scale: s,
                rotation: r,
                translation: (0.0, 0.0),
            };
            let cs = centroid(src.points());
            let cd = centroid(dst.points());
            let m = t.apply(cs);
            t.translation = (cd.x - m.x, cd.y - m.y);
            t.residual(src, dst)
        };
        let (mut s_lo, mut s_hi) = (0.25, 4.0);
        let (mut r_lo, mut r_hi) = (-std::f64::consts::PI, std::f64::consts::PI);
        let mut best = (f64::INFINITY, 1.0, 0.0);
        for _ in 0..8 {
            for i in 0..=60 {
                for j in 0..=60 {
                    let s = s_lo + (s_hi - s_lo) * i as f64 / 60.0;
                    let r = r_lo + (r_hi - r_lo) * j as f64 / 60.0;
                    let v = eval(s, r);
                    if v < best.0 {
                        best = (v, s, r);
                    }
                }
            }
            let (ds, dr) = ((s_hi - s_lo) / 10.0, (r_hi - r_lo) / 10.0);
            s_lo = (best.1 - ds).max(1e-6);
            s_hi = best.1 + ds;
            r_lo = best.2 - dr;
            r_hi = best.2 + dr;
        }
        best.0
    }

    #[test]
    fn noisy_fit_matches_grid_search_and_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..5 {
            let a = cloud(10 + seed);
            let truth = SimilarityTransform {
                scale: 0.8 + 0.1 * seed as f64,
                rotation: -0.3 + 0.15 * seed as f64,
                translation: (12.0, -7.0),
            };
            let b = a.map(|p| {
                let q = truth.apply(p);
                Point::new(q.x + rng.random_range(-3.0..3.0), q.y + rng.random_range(-3.0..3.0))
            });
            let t = estimate_alignment(&a, &b).unwrap();
            let res = t.residual(&a, &b);
            let oracle = grid_search_residual(&a, &b);
            assert!(res <= oracle + 1e-9, "closed form {res} worse than grid {oracle}");
            assert!((res - oracle).abs() < 1e-3, "{res} vs {oracle}");
            for (ds, dr) in [(1.01, 0.0), (0.99, 0.0), (1.0, 0.01), (1.0, -0.01)] {
                let mut p = t;
                p.scale *= ds;
                p.rotation += dr * t.rotation.abs().max(1.0);
                assert!(p.residual(&a, &b) >= res);
            }
        }
    }

    #[test]
    fn warp_identity_and_unit_shift() {
        let img = Image::from_fn(12, 10, |r, c| [r as f32 / 11.0, c as f32 / 9.0, 0.3]).unwrap();
        assert_eq!(warp(&img, &SimilarityTransform::identity(), 12, 10).unwrap(), img);
        let shift = SimilarityTransform {
            translation: (1.0, 0.0),
            ..SimilarityTransform::identity()
        };
        let out = warp(&img, &shift, 12, 10).unwrap();
        for r in 0..12 {
            for c in 0..10 {
                assert_eq!(out.pixel(r, c), img.pixel(r, c.saturating_sub(1)));
            }
        }
    }

    #[test]
    fn warp_round_trip_on_smooth_image() {
        let img = Image::from_fn(64, 64, |r, c| {
            let (y, x) = (r as f32 / 63.0, c as f32 / 63.0);
            [0.5 + 0.4 * (3.0 * x).sin() * y, x * y, 0.5 * (x + y)]
        })
        .unwrap();
        // rotate and scale about the frame centre so the interior stays in view
        let mut t = SimilarityTransform {
            scale: 1.1,
            rotation: 0.2,
            translation: (0.0, 0.0),
        };
        let centre = Point::new(31.5, 31.5);
        let moved = t.apply(centre);
        t.translation = (centre.x - moved.x + 2.0, centre.y - moved.y - 1.5);
        let there = warp(&img, &t, 64, 64).unwrap();
        let back = warp(&there, &t.inverse(), 64, 64).unwrap();
        let mut worst = 0f32;
        for r in 12..52 {
            for c in 12..52 {
                for (a, b) in back.pixel(r, c).iter().zip(img.pixel(r, c)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        assert!(worst < 0.02, "round trip error {worst}");
    }
}
