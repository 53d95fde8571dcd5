//! Patch-consistency volumes: ground truth from a mask, fusion of a volume
//! into a per-patch heatmap, and upsampling back to image resolution.

use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, GrayMap, Image, Raster};

/// A mask at feature-grid resolution (one value per patch).
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseMask {
    pub h_p: usize,
    pub w_p: usize,
    data: Vec<f32>,
}

impl CoarseMask {
    pub fn new(h_p: usize, w_p: usize, data: Vec<f32>) -> Result<Self> {
        if h_p == 0 || w_p == 0 || data.len() != h_p * w_p {
            return Err(Error::Dimension(format!("coarse mask {h_p}x{w_p} with {} values", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parameter("coarse mask values must lie in [0, 1]".into()));
        }
        Ok(Self { h_p, w_p, data })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.w_p + col]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn n_patches(&self) -> usize {
        self.data.len()
    }
}

/// Pairwise patch consistency, `H' x W' x H' x W'`. Entry `(i, j)` for flat
/// patch indices `i = h * W' + w` lives at `data[i * N + j]`, `N = H' * W'`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyVolume {
    pub h_p: usize,
    pub w_p: usize,
    data: Vec<f32>,
}

impl ConsistencyVolume {
    pub fn new(h_p: usize, w_p: usize, data: Vec<f32>) -> Result<Self> {
        let n = h_p * w_p;
        if n == 0 || data.len() != n * n {
            return Err(Error::Dimension(format!("volume {h_p}x{w_p} needs {} values, got {}", n * n, data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parameter("volume values must lie in [0, 1]".into()));
        }
        Ok(Self { h_p, w_p, data })
    }

    /// The pristine volume.
    pub fn ones(h_p: usize, w_p: usize) -> Self {
        let n = h_p * w_p;
        Self {
            h_p,
            w_p,
            data: vec![1.0; n * n],
        }
    }

    pub fn n_patches(&self) -> usize {
        self.h_p * self.w_p
    }

    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.n_patches() + j]
    }

    pub fn get(&self, h: usize, w: usize, h2: usize, w2: usize) -> f32 {
        self.at(h * self.w_p + w, h2 * self.w_p + w2)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_all_ones(&self) -> bool {
        self.data.iter().all(|&v| v == 1.0)
    }
}

/// Bilinear resize of the pixel mask onto the patch grid.
pub fn downsample_mask(mask: &GrayMap, h_p: usize, w_p: usize) -> Result<CoarseMask> {
    let small = resize_bilinear(mask, h_p, w_p)?;
    CoarseMask::new(h_p, w_p, small.into_raw())
}

/// `V[i, j] = 1 - |M[i] - M[j]|`.
pub fn gt_volume(cm: &CoarseMask) -> ConsistencyVolume {
    let m = cm.data();
    let n = m.len();
    let mut data = Vec::with_capacity(n * n);
    for &a in m {
        data.extend(m.iter().map(|&b| 1.0 - (a - b).abs()));
    }
    ConsistencyVolume {
        h_p: cm.h_p,
        w_p: cm.w_p,
        data,
    }
}

/// Per-patch consistency; low values mark regions that disagree with the
/// rest of the image.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub coarse: GrayMap,
    pub full: Option<GrayMap>,
}

/// Averages the volume over the base-patch axes: `H[j] = mean_i V[i, j]`.
pub fn fuse_heatmap(v: &ConsistencyVolume) -> Heatmap {
    let n = v.n_patches();
    let mut acc = vec![0f64; n];
    for row in v.data.chunks_exact(n) {
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += x as f64;
        }
    }
    let data = acc.into_iter().map(|s| ((s / n as f64) as f32).clamp(0.0, 1.0)).collect();
    Heatmap {
        coarse: GrayMap::new(v.h_p, v.w_p, data).expect("valid coarse heatmap"),
        full: None,
    }
}

/// Fills in the full-resolution map by bilinear upsampling of the coarse one.
pub fn upsample_heatmap(hm: &Heatmap, h: usize, w: usize) -> Result<Heatmap> {
    Ok(Heatmap {
        coarse: hm.coarse.clone(),
        full: Some(resize_bilinear(&hm.coarse, h, w)?),
    })
}

/// Tints `img` red where the heatmap is low. With `invert`, high values are
/// tinted instead. `strength` is the maximum tint opacity.
pub fn overlay(img: &Image, heat: &GrayMap, strength: f32, invert: bool) -> Result<Image> {
    if img.dims() != heat.dims() {
        return Err(Error::Dimension(format!(
            "overlay of {:?} heatmap on {:?} image",
            heat.dims(),
            img.dims()
        )));
    }
    let strength = strength.clamp(0.0, 1.0);
    Image::from_fn(img.height(), img.width(), |r, c| {
        let h = heat.get(r, c);
        let a = strength * if invert { h } else { 1.0 - h };
        let p = img.pixel(r, c);
        [(1.0 - a) * p[0] + a, (1.0 - a) * p[1], (1.0 - a) * p[2]]
    })
}
