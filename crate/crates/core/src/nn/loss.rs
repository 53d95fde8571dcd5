use super::graph::PROB_EPS;
use crate::consistency::ConsistencyVolume;
use crate::error::{Error, Result};

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy with the prediction clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(target: f64, p: f64) -> f64 {
    let p = clamp(p);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Mean BCE over all `N^2` volume entries, diagonal included.
pub fn pcl_loss(v: &ConsistencyVolume, v_hat: &ConsistencyVolume) -> Result<f64> {
    if (v.h_p, v.w_p) != (v_hat.h_p, v_hat.w_p) {
        return Err(Error::Shape(format!(
            "volumes {}x{} and {}x{}",
            v.h_p, v.w_p, v_hat.h_p, v_hat.w_p
        )));
    }
    let sum: f64 = v.data().iter().zip(v_hat.data()).map(|(&t, &p)| bce(t as f64, p as f64)).sum();
    Ok(sum / v.data().len() as f64)
}

/// Two-class cross-entropy for label `y` (1 = fake) and fake probability `p`.
pub fn cls_loss(y: u8, p: f64) -> f64 {
    bce(if y == 1 { 1.0 } else { 0.0 }, p)
}

pub fn total_loss(l_pcl: f64, l_cls: f64, lambda: f64) -> f64 {
    lambda * l_pcl + l_cls
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_prediction_on_pristine_is_ln2() {
        let v = ConsistencyVolume::ones(4, 4);
        let vh = ConsistencyVolume::new(4, 4, vec![0.5; 256]).unwrap();
        assert!((pcl_loss(&v, &vh).unwrap() - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn perfect_prediction_hits_clamp_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d: Vec<f32> = (0..16).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let v = ConsistencyVolume::new(2, 2, d).unwrap();
        assert!(pcl_loss(&v, &v).unwrap() <= 1.1e-7);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = ConsistencyVolume::new(2, 2, (0..16).map(|_| rng.random::<f32>()).collect()).unwrap();
        let vh = ConsistencyVolume::new(2, 2, (0..16).map(|_| rng.random_range(0.01f32..0.99)).collect()).unwrap();
        let mut sum = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    for d in 0..2 {
                        let t = v.get(a, b, c, d) as f64;
                        let p = vh.get(a, b, c, d) as f64;
                        sum += -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
                    }
                }
            }
        }
        assert!((pcl_loss(&v, &vh).unwrap() - sum / 16.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        assert!(pcl_loss(&ConsistencyVolume::ones(2, 2), &ConsistencyVolume::ones(1, 4)).is_err());
    }

    #[test]
    fn cls_closed_forms() {
        assert!((cls_loss(1, 0.5) - 2f64.ln()).abs() < 1e-12);
        assert!(cls_loss(0, 1e-12) < 1e-6);
        assert!((cls_loss(1, 0.25) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn total_is_linear_in_lambda() {
        assert_eq!(total_loss(0.1, 0.2, 0.0), 0.2);
        assert!((total_loss(0.1, 0.2, 10.0) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn graph_losses_agree_with_scalar_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..16).map(|_| rng.random()).collect();
        let mut g = Graph::<f64>::new();
        let zv = g.input(Tensor::new(vec![4, 4], z.clone()).unwrap());
        let l = g.sigmoid_bce(zv, &t).unwrap();
        let probs: Vec<f32> = z.iter().map(|&x| (1.0 / (1.0 + (-x).exp())) as f32).collect();
        let v = ConsistencyVolume::new(2, 2, t.iter().map(|&x| x as f32).collect()).unwrap();
        let vh = ConsistencyVolume::new(2, 2, probs).unwrap();
        assert!((g.value(l).item() - pcl_loss(&v, &vh).unwrap()).abs() < 1e-6);

        let logits = g.input(Tensor::new(vec![2], vec![0.3, -1.1]).unwrap());
        let p_fake = 1.0 / (1.0 + (-1.1f64 - 0.3).exp());
        for (label, idx) in [(1u8, 0usize), (0, 1)] {
            let ce = g.softmax_ce(logits, idx).unwrap();
            assert!((g.value(ce).item() - cls_loss(label, p_fake)).abs() < 1e-12);
        }
    }
}
