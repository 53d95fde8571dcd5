use super::model::ParamStore;
use super::train::TrainConfig;
use crate::error::{Error, Result};

/// First and second moment estimates per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0f32; t.numel()]).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &[Vec<f32>],
    state: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients / {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    let [b1, b2] = cfg.adam_betas;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = &grads[i];
        if g.len() != p.numel() {
            return Err(Error::Shape(format!("gradient {i} has {} entries for {}", g.len(), p.numel())));
        }
        for (((w, &gi), m), v) in p.data_mut().iter_mut().zip(g).zip(&mut state.m[i]).zip(&mut state.v[i]) {
            let gi = gi as f64;
            let mn = b1 * *m as f64 + (1.0 - b1) * gi;
            let vn = b2 * *v as f64 + (1.0 - b2) * gi * gi;
            *m = mn as f32;
            *v = vn as f32;
            let update = lr * (mn / c1) / ((vn / c2).sqrt() + cfg.adam_eps);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Linear warm-up over the first quarter of `total` iterations, a plateau at
/// `lr_peak`, then linear decay to zero over the last quarter.
pub fn lr_schedule(iter: usize, total: usize, lr_peak: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let (i, t) = (iter as f64, total as f64);
    let q = t / 4.0;
    if i < q {
        lr_peak * i / q
    } else if i < 3.0 * q {
        lr_peak
    } else {
        (lr_peak * (t - i) / q).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn store(vals: &[f32]) -> ParamStore<f32> {
        let mut p = ParamStore::default();
        p.push("w", Tensor::new(vec![vals.len()], vals.to_vec()).unwrap());
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(&[0.5, -2.0]);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        for _ in 0..3 {
            adam_step(&mut p, &[vec![0.0, 0.0]], &mut s, &TrainConfig::default(), 0.1).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = store(&[1.0, 1.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![3.0, -0.02]], &mut s, &TrainConfig::default(), 1e-3).unwrap();
        // mhat = g, vhat = g^2, so the step is lr * g / (|g| + eps)
        let d = p.tensors()[0].data();
        assert!((d[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((d[1] - (1.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn replay_is_identical() {
        let run = || {
            let mut p = store(&[0.1, 0.2, 0.3]);
            let mut s = AdamState::new(&p);
            for k in 0..20 {
                let g: Vec<f32> = p.tensors()[0].data().iter().map(|w| w * 2.0 - k as f32 * 0.01).collect();
                adam_step(&mut p, &[g], &mut s, &TrainConfig::default(), 0.01).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_shape() {
        let (t, peak) = (400, 5e-5);
        assert_eq!(lr_schedule(0, t, peak), 0.0);
        assert!((lr_schedule(50, t, peak) - peak / 2.0).abs() < 1e-18);
        assert_eq!(lr_schedule(t / 4, t, peak), peak);
        assert_eq!(lr_schedule(t / 2, t, peak), peak);
        let last = lr_schedule(t - 1, t, peak);
        assert!(last > 0.0 && last <= peak / (t as f64 / 4.0) + 1e-18);
        for i in 1..t {
            assert!(lr_schedule(i, t, peak) <= peak);
        }
    }
}
