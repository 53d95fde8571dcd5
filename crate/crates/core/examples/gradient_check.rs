//! Compares the tape gradients of the full training loss with central
//! finite differences on a tiny double-precision model.
//!
//! cargo run --release --example gradient_check -- [lambda]

use pcl::nn::{Graph, ModelConfig, PclModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pcl::Result<()> {
    let lambda: f64 = std::env::args().nth(1).map_or(10.0, |s| s.parse().expect("lambda"));
    let model = PclModel::<f64>::new(ModelConfig {
        widths: [3, 4, 4, 6],
        input_size: 32,
        ..ModelConfig::default()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::new(vec![3, 32, 32], (0..3 * 32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let target: Vec<f64> = (0..16).map(|_| rng.random()).collect();
    let loss_of = |m: &PclModel<f64>| -> pcl::Result<f64> {
        let mut g = Graph::new();
        let vars = m.bind(&mut g, true);
        let l = m.loss(&mut g, &vars, &x, &target, 1, lambda)?;
        Ok(g.value(l.total).item())
    };
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let l = model.loss(&mut g, &vars, &x, &target, 1, lambda)?;
    let grads = g.backward(l.total)?;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for (pi, t) in model.params.tensors().iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[pi], t.numel());
        let mut err: f64 = 0.0;
        for _ in 0..4 {
            let j = rng.random_range(0..t.numel());
            let mut up = model.clone();
            up.params.tensors_mut()[pi].data_mut()[j] += h;
            let mut down = model.clone();
            down.params.tensors_mut()[pi].data_mut()[j] -= h;
            let numeric = (loss_of(&up)? - loss_of(&down)?) / (2.0 * h);
            err = err.max((numeric - analytic[j]).abs() / numeric.abs().max(analytic[j].abs()).max(1e-3));
        }
        println!("{:>14}  max rel err {err:.2e}", model.params.names()[pi]);
        worst = worst.max(err);
    }
    println!("worst {worst:.2e} ({})", if worst < 1e-4 { "ok" } else { "MISMATCH" });
    Ok(())
}
