use super::{gaussian_kernel, convolve_separable, GrayMap, Image, Raster};
use crate::error::{Error, Result};

const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Rec. 601 luma.
pub fn luma(img: &Image) -> GrayMap {
    let (h, w) = img.dims();
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
        .collect();
    GrayMap::new(h, w, data).expect("luma keeps dimensions")
}

/// Per-pixel structural dissimilarity `(1 - SSIM) / 2` on luma, with a
/// Gaussian window of `window` pixels (sigma 1.5 at the standard size 11).
pub fn dssim(a: &Image, b: &Image, window: usize) -> Result<GrayMap> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!("dssim on {:?} vs {:?}", a.dims(), b.dims())));
    }
    if window == 0 {
        return Err(Error::Parameter("dssim window must be positive".into()));
    }
    let (h, w) = a.dims();
    let kernel = gaussian_kernel(1.5 * window as f32 / 11.0, window)?;
    let la = luma(a).into_raw();
    let lb = luma(b).into_raw();
    let prod = |x: &[f32], y: &[f32]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f32>>();
    let blur = |v: &[f32]| convolve_separable(h, w, 1, v, &kernel);
    let mu_a = blur(&la);
    let mu_b = blur(&lb);
    let e_aa = blur(&prod(&la, &la));
    let e_bb = blur(&prod(&lb, &lb));
    let e_ab = blur(&prod(&la, &lb));
    let c1 = (K1 * 1.0) * (K1 * 1.0);
    let c2 = (K2 * 1.0) * (K2 * 1.0);
    let out = (0..h * w)
        .map(|i| {
            let (ma, mb) = (mu_a[i] as f64, mu_b[i] as f64);
            let saa = e_aa[i] as f64 - ma * ma;
            let sbb = e_bb[i] as f64 - mb * mb;
            let sab = e_ab[i] as f64 - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * sab + c2);
            let den = (ma * ma + mb * mb + c1) * (saa + sbb + c2);
            (((1.0 - num / den) / 2.0).clamp(0.0, 1.0)) as f32
        })
        .collect();
    GrayMap::new(h, w, out)
}
