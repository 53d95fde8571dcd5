//! JPEG-style compression artefacts without a codec: 8x8 block DCT on
//! YCbCr planes, quantised with the standard tables scaled by quality.

use super::{Image, Raster};

const LUMA_Q: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51,
    87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_Q: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99,
];

fn scaled_table(base: &[u16; 64], quality: u8) -> [f32; 64] {
    let q = quality.clamp(1, 100) as i32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0f32; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as i32 * scale + 50) / 100).clamp(1, 255) as f32;
    }
    out
}

fn cos_table() -> [[f32; 8]; 8] {
    let mut t = [[0f32; 8]; 8];
    for (u, row) in t.iter_mut().enumerate() {
        let cu = if u == 0 { (0.5f32).sqrt() } else { 1.0 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = 0.5 * cu * (((2 * x + 1) as f32 * u as f32 * std::f32::consts::PI) / 16.0).cos();
        }
    }
    t
}

fn roundtrip_plane(plane: &mut [f32], h: usize, w: usize, table: &[f32; 64], cos: &[[f32; 8]; 8]) {
    let mut block = [0f32; 64];
    let mut tmp = [0f32; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    let r = (by + y).min(h - 1);
                    let c = (bx + x).min(w - 1);
                    block[y * 8 + x] = plane[r * w + c] - 128.0;
                }
            }
            // forward DCT, rows then columns
            for y in 0..8 {
                for u in 0..8 {
                    tmp[y * 8 + u] = (0..8).map(|x| cos[u][x] * block[y * 8 + x]).sum();
                }
            }
            for v in 0..8 {
                for u in 0..8 {
                    let coef: f32 = (0..8).map(|y| cos[v][y] * tmp[y * 8 + u]).sum();
                    let q = table[v * 8 + u];
                    block[v * 8 + u] = (coef / q).round() * q;
                }
            }
            // inverse
            for v in 0..8 {
                for x in 0..8 {
                    tmp[v * 8 + x] = (0..8).map(|u| cos[u][x] * block[v * 8 + u]).sum();
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    let r = by + y;
                    let c = bx + x;
                    if r < h && c < w {
                        let val: f32 = (0..8).map(|v| cos[v][y] * tmp[v * 8 + x]).sum();
                        plane[r * w + c] = val + 128.0;
                    }
                }
            }
        }
    }
}

/// Compress-decompress round trip at the given quality (1..=100).
pub fn jpeg_roundtrip(img: &Image, quality: u8) -> Image {
    let (h, w) = img.dims();
    let n = h * w;
    let mut planes = vec![vec![0f32; n]; 3];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        let (r, g, b) = (px[0] * 255.0, px[1] * 255.0, px[2] * 255.0);
        planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b;
        planes[1][i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
        planes[2][i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
    }
    let cos = cos_table();
    let luma_t = scaled_table(&LUMA_Q, quality);
    let chroma_t = scaled_table(&CHROMA_Q, quality);
    roundtrip_plane(&mut planes[0], h, w, &luma_t, &cos);
    roundtrip_plane(&mut planes[1], h, w, &chroma_t, &cos);
    roundtrip_plane(&mut planes[2], h, w, &chroma_t, &cos);
    let mut out = Vec::with_capacity(n * 3);
    for i in 0..n {
        let (y, cb, cr) = (planes[0][i], planes[1][i] - 128.0, planes[2][i] - 128.0);
        let rgb = [y + 1.402 * cr, y - 0.344_136 * cb - 0.714_136 * cr, y + 1.772 * cb];
        out.extend(rgb.map(|v| (v.round().clamp(0.0, 255.0)) / 255.0));
    }
    Image::new(h, w, out).expect("jpeg round trip keeps dimensions and range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_image_survives_high_quality() {
        let img = Image::filled(16, 16, [0.4, 0.5, 0.6]).unwrap();
        let out = jpeg_roundtrip(&img, 95);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 2.0 / 255.0);
        }
    }

    #[test]
    fn low_quality_degrades_texture_more() {
        let img = Image::from_fn(24, 20, |r, c| {
            let v = if (r + c) % 2 == 0 { 0.9 } else { 0.1 };
            [v, 0.5, 1.0 - v]
        })
        .unwrap();
        let err = |q| {
            let out = jpeg_roundtrip(&img, q);
            out.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).sum::<f32>()
        };
        assert!(err(10) > err(90));
    }
}
