use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{GrayMap, Raster};

/// Random elastic deformation of masks: Gaussian displacements on a coarse
/// control grid, bicubically interpolated to every pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeformConfig {
    /// Control points per axis.
    pub grid: usize,
    /// Displacement standard deviation range in pixels; one sigma is drawn
    /// uniformly per mask.
    pub sigma_range: [f64; 2],
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            sigma_range: [6.0, 12.0],
        }
    }
}

impl DeformConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.sigma_range;
        if !(lo > 0.0 && lo <= hi && hi <= 32.0) {
            return Err(Error::Config(format!("deform sigma range {:?} must lie within (0, 32]", self.sigma_range)));
        }
        if self.grid < 2 {
            return Err(Error::Config("deform grid needs at least 2 control points per axis".into()));
        }
        Ok(())
    }
}

/// Dense per-pixel backward displacement; output pixel `(r, c)` samples the
/// input at `(r + dy, c + dx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    pub height: usize,
    pub width: usize,
    pub dx: Vec<f32>,
    pub dy: Vec<f32>,
}

impl DisplacementField {
    pub fn constant(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        Self {
            height,
            width,
            dx: vec![dx; height * width],
            dy: vec![dy; height * width],
        }
    }

    /// Bicubic (Catmull-Rom) interpolation of a `grid x grid` set of control
    /// displacements spread over the box `[top, bottom] x [left, right]`.
    /// Outside the box the field is extended from its border.
    pub fn from_control_grid(
        height: usize,
        width: usize,
        bbox: (f64, f64, f64, f64),
        grid: usize,
        control: &[(f64, f64)],
    ) -> Self {
        assert_eq!(control.len(), grid * grid);
        let (top, left, bottom, right) = bbox;
        let param = |v: f64, lo: f64, hi: f64| {
            if hi > lo {
                ((v - lo) / (hi - lo) * (grid - 1) as f64).clamp(0.0, (grid - 1) as f64)
            } else {
                0.0
            }
        };
        // weights per column / row are separable, precompute them
        let col_w: Vec<[(usize, f64); 4]> = (0..width).map(|c| cubic_weights(param(c as f64, left, right), grid)).collect();
        let row_w: Vec<[(usize, f64); 4]> = (0..height).map(|r| cubic_weights(param(r as f64, top, bottom), grid)).collect();
        let mut dx = vec![0f32; height * width];
        let mut dy = vec![0f32; height * width];
        for (r, rw) in row_w.iter().enumerate() {
            for (c, cw) in col_w.iter().enumerate() {
                let (mut sx, mut sy) = (0.0, 0.0);
                for &(gi, wy) in rw {
                    for &(gj, wx) in cw {
                        let (ux, uy) = control[gi * grid + gj];
                        sx += wy * wx * ux;
                        sy += wy * wx * uy;
                    }
                }
                dx[r * width + c] = sx as f32;
                dy[r * width + c] = sy as f32;
            }
        }
        Self { height, width, dx, dy }
    }
}

fn cubic_weights(u: f64, n: usize) -> [(usize, f64); 4] {
    let base = (u.floor() as isize).min(n as isize - 2).max(0);
    let t = u - base as f64;
    // Catmull-Rom basis (Keys a = -0.5)
    let w = [
        0.5 * (-t * t * t + 2.0 * t * t - t),
        0.5 * (3.0 * t * t * t - 5.0 * t * t + 2.0),
        0.5 * (-3.0 * t * t * t + 4.0 * t * t + t),
        0.5 * (t * t * t - t * t),
    ];
    std::array::from_fn(|k| {
        let idx = (base + k as isize - 1).clamp(0, n as isize - 1) as usize;
        (idx, w[k])
    })
}

/// Backward-warps `mask` through `field` with bilinear lookup and edge replication.
pub fn elastic_deform_with_field(mask: &GrayMap, field: &DisplacementField) -> Result<GrayMap> {
    let (h, w) = mask.dims();
    if (field.height, field.width) != (h, w) {
        return Err(Error::Dimension(format!(
            "displacement field {}x{} for mask {h}x{w}",
            field.height, field.width
        )));
    }
    GrayMap::from_fn(h, w, |r, c| {
        let i = r * w + c;
        mask.sample(r as f32 + field.dy[i], c as f32 + field.dx[i])
    })
}

/// Smooth random deformation of the mask support. The control grid spans the
/// bounding box of the non-zero pixels.
pub fn elastic_deform(mask: &GrayMap, cfg: &DeformConfig, rng: &mut impl Rng) -> Result<GrayMap> {
    cfg.validate()?;
    let (h, w) = mask.dims();
    let Some(bbox) = support_bbox(mask) else {
        return Ok(mask.clone());
    };
    let [lo, hi] = cfg.sigma_range;
    let sigma = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let control: Vec<(f64, f64)> = (0..cfg.grid * cfg.grid)
        .map(|_| (normal.sample(rng), normal.sample(rng)))
        .collect();
    let field = DisplacementField::from_control_grid(h, w, bbox, cfg.grid, &control);
    elastic_deform_with_field(mask, &field)
}

/// `(top, left, bottom, right)` of pixels with value > 0.
pub(crate) fn support_bbox(mask: &GrayMap) -> Option<(f64, f64, f64, f64)> {
    let (h, w) = mask.dims();
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) > 0.0 {
                bbox = Some(match bbox {
                    None => (r, c, r, c),
                    Some((t, l, b, rr)) => (t.min(r), l.min(c), b.max(r), rr.max(c)),
                });
            }
        }
    }
    bbox.map(|(t, l, b, r)| (t as f64, l as f64, b as f64, r as f64))
}
