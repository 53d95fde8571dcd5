use super::BlendMethod;
use crate::error::{Error, Result};
use crate::imaging::{GrayMap, Image, Raster};

pub const POISSON_TOL: f32 = 1e-4;
pub const POISSON_MAX_ITERS: usize = 500;

/// Composite `target` and `source` through `mask` (1 = source).
pub fn blend(target: &Image, source: &Image, mask: &GrayMap, method: BlendMethod) -> Result<Image> {
    match method {
        BlendMethod::Alpha => alpha(target, source, mask),
        BlendMethod::PoissonLite => poisson_lite(target, source, mask).map(|(img, _)| img),
    }
}

fn check(target: &Image, source: &Image, mask: &GrayMap) -> Result<()> {
    if target.dims() != source.dims() || target.dims() != mask.dims() {
        return Err(Error::Dimension(format!(
            "blend inputs disagree: target {:?}, source {:?}, mask {:?}",
            target.dims(),
            source.dims(),
            mask.dims()
        )));
    }
    Ok(())
}

fn alpha(target: &Image, source: &Image, mask: &GrayMap) -> Result<Image> {
    check(target, source, mask)?;
    let data = target
        .data()
        .chunks_exact(3)
        .zip(source.data().chunks_exact(3))
        .zip(mask.data())
        .flat_map(|((t, s), &m)| (0..3).map(move |ch| m * s[ch] + (1.0 - m) * t[ch]))
        .collect();
    Image::new(target.height(), target.width(), data)
}

/// Convergence details of a gradient-domain solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonReport {
    pub iterations: usize,
    pub max_change: f32,
}

/// Gradient-domain blend: inside the region `mask > 0.5` the source
/// gradients are kept while the boundary takes target colours (Jacobi
/// iterations, 4-neighbourhood restricted to the image). The solved image
/// is then alpha-composited with the soft mask.
pub fn poisson_lite(target: &Image, source: &Image, mask: &GrayMap) -> Result<(Image, PoissonReport)> {
    check(target, source, mask)?;
    let (h, w) = target.dims();
    let inside: Vec<bool> = mask.data().iter().map(|&m| m > 0.5).collect();
    let (t, s) = (target.data(), source.data());
    let mut cur = s.to_vec();
    let mut next = cur.clone();
    let mut report = PoissonReport {
        iterations: 0,
        max_change: 0.0,
    };
    let neighbours = |r: usize, c: usize| {
        let mut n = [None; 4];
        if r > 0 {
            n[0] = Some((r - 1) * w + c);
        }
        if r + 1 < h {
            n[1] = Some((r + 1) * w + c);
        }
        if c > 0 {
            n[2] = Some(r * w + c - 1);
        }
        if c + 1 < w {
            n[3] = Some(r * w + c + 1);
        }
        n
    };
    if inside.iter().any(|&b| b) {
        for it in 0..POISSON_MAX_ITERS {
            let mut max_change = 0f32;
            for r in 0..h {
                for c in 0..w {
                    let p = r * w + c;
                    if !inside[p] {
                        continue;
                    }
                    let nb = neighbours(r, c);
                    let count = nb.iter().flatten().count() as f32;
                    for ch in 0..3 {
                        let mut acc = 0f32;
                        for &q in nb.iter().flatten() {
                            acc += if inside[q] { cur[q * 3 + ch] } else { t[q * 3 + ch] };
                            acc += s[p * 3 + ch] - s[q * 3 + ch];
                        }
                        let v = acc / count;
                        max_change = max_change.max((v - cur[p * 3 + ch]).abs());
                        next[p * 3 + ch] = v;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            report = PoissonReport {
                iterations: it + 1,
                max_change,
            };
            if max_change < POISSON_TOL {
                break;
            }
        }
    }
    let solved = Image::new(h, w, cur.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    Ok((alpha(target, &solved, mask)?, report))
}
