use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};
use crate::consistency::ConsistencyVolume;
use crate::error::{Error, Result};

/// Total spatial stride of the backbone.
pub const STRIDE: usize = 16;

/// Backbone widths and embedding size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Output channels of the four stride-2 stages.
    pub widths: [usize; 4],
    /// Embedding width `C'` of the consistency head; `None` means `C / 2`.
    pub embed_dim: Option<usize>,
    /// Seed for weight initialization.
    pub init_seed: u64,
    /// Square side every image is resized to before entering the network.
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: [16, 32, 64, 64],
            embed_dim: None,
            init_seed: 0,
            input_size: 256,
        }
    }
}

impl ModelConfig {
    pub fn channels(&self) -> usize {
        self.widths[3]
    }

    pub fn embed(&self) -> usize {
        self.embed_dim.unwrap_or(self.channels() / 2).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.embed_dim == Some(0) {
            return Err(Error::Config("model widths and embedding size must be positive".into()));
        }
        if self.input_size == 0 || self.input_size % STRIDE != 0 {
            return Err(Error::Config(format!("input_size must be a positive multiple of {STRIDE}")));
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Backbone output: one `C`-vector per patch, stored `[C, H', W']`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub h_p: usize,
    pub w_p: usize,
    pub channels: usize,
    pub data: Tensor<T>,
}

impl<T: Real> FeatureMap<T> {
    /// Feature vector of flat patch `i = h * W' + w`.
    pub fn patch(&self, i: usize) -> Vec<T> {
        let n = self.h_p * self.w_p;
        (0..self.channels).map(|c| self.data.data()[c * n + i]).collect()
    }
}

/// The two 1x1 embeddings of the consistency head, each `[C', C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PclHeadParams<T> {
    pub theta: Tensor<T>,
    pub phi: Tensor<T>,
}

impl<T: Real> PclHeadParams<T> {
    pub fn c_embed(&self) -> usize {
        self.theta.shape()[0]
    }
}

/// Graph handles produced by [`PclModel::forward`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardOut {
    pub features: Var,
    /// `[2]`, ordered (fake, real).
    pub cls_logits: Var,
    /// `[N, N]` pre-sigmoid similarities, when the consistency head ran.
    pub pcl_logits: Option<Var>,
    pub grid: (usize, usize),
}

/// Per-sample loss terms on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub pcl: Option<Var>,
    pub cls: Var,
}

/// Inference output for one image.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub fake_prob: f64,
    pub volume: ConsistencyVolume,
}

/// Backbone, classification branch and consistency branch.
#[derive(Clone, Debug, PartialEq)]
pub struct PclModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

fn conv_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.w"), format!("{prefix}.b"))
}

impl<T: Real> PclModel<T> {
    /// He-initialized weights; residual convs start at half scale.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::default();
        let normal = |shape: Vec<usize>, std: f64, rng: &mut ChaCha8Rng| {
            let n: usize = shape.iter().product();
            let d = Normal::new(0.0, std).expect("positive std");
            Tensor::new(shape, (0..n).map(|_| T::from_f64_lossy(d.sample(rng))).collect()).expect("shape")
        };
        let mut cin = 3;
        for (s, &cout) in config.widths.iter().enumerate() {
            let (w, b) = conv_names(&format!("stage{s}.down"));
            params.push(w, normal(vec![cout, cin, 3, 3], (2.0 / (cin * 9) as f64).sqrt(), &mut rng));
            params.push(b, Tensor::zeros(vec![cout]));
            let (w, b) = conv_names(&format!("stage{s}.res"));
            params.push(w, normal(vec![cout, cout, 3, 3], 0.5 * (2.0 / (cout * 9) as f64).sqrt(), &mut rng));
            params.push(b, Tensor::zeros(vec![cout]));
            cin = cout;
        }
        let c = config.channels();
        let ce = config.embed();
        let (w, b) = conv_names("cls.conv");
        params.push(w, normal(vec![c, c, 3, 3], (2.0 / (c * 9) as f64).sqrt(), &mut rng));
        params.push(b, Tensor::zeros(vec![c]));
        let (w, b) = conv_names("cls.fc");
        params.push(w, normal(vec![2, c], (1.0 / c as f64).sqrt(), &mut rng));
        params.push(b, Tensor::zeros(vec![2]));
        params.push("pcl.theta", normal(vec![ce, c], (1.0 / c as f64).sqrt(), &mut rng));
        params.push("pcl.phi", normal(vec![ce, c], (1.0 / c as f64).sqrt(), &mut rng));
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let reference = PclModel::<T>::new(config.clone())?;
        if reference.params.names() != params.names()
            || reference.params.tensors().iter().zip(params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape("parameter set does not match the model configuration".into()));
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> PclModel<U> {
        PclModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn pcl_head_params(&self) -> PclHeadParams<T> {
        PclHeadParams {
            theta: self.params.get("pcl.theta").expect("theta").clone(),
            phi: self.params.get("pcl.phi").expect("phi").clone(),
        }
    }

    /// Places every parameter on `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.input(t.clone()) })
            .collect()
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        vars[self.params.index_of(name).expect("known parameter")]
    }

    fn backbone_on(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[0] != 3 || s[1] % STRIDE != 0 || s[2] % STRIDE != 0 || s[1] == 0 || s[2] == 0 {
            return Err(Error::Shape(format!("backbone input must be [3, 16k, 16m], got {s:?}")));
        }
        let mut h = x;
        for stage in 0..4 {
            let down = g.conv2d(
                h,
                self.var(vars, &format!("stage{stage}.down.w")),
                Some(self.var(vars, &format!("stage{stage}.down.b"))),
                2,
                1,
            )?;
            let down = g.relu(down);
            let res = g.conv2d(
                down,
                self.var(vars, &format!("stage{stage}.res.w")),
                Some(self.var(vars, &format!("stage{stage}.res.b"))),
                1,
                1,
            )?;
            let sum = g.add(down, res)?;
            h = g.relu(sum);
        }
        Ok(h)
    }

    fn cls_on(&self, g: &mut Graph<T>, vars: &[Var], f: Var) -> Result<Var> {
        let h = g.conv2d(f, self.var(vars, "cls.conv.w"), Some(self.var(vars, "cls.conv.b")), 1, 1)?;
        let h = g.relu(h);
        let pooled = g.global_avg_pool(h)?;
        g.linear(pooled, self.var(vars, "cls.fc.w"), self.var(vars, "cls.fc.b"))
    }

    /// `[N, N]` logits `theta(f_i) . phi(f_j) / sqrt(C')`.
    fn pcl_on(&self, g: &mut Graph<T>, theta: Var, phi: Var, f: Var) -> Result<Var> {
        let s = g.shape(f).to_vec();
        let (c, n) = (s[0], s[1] * s[2]);
        let ts = g.shape(theta).to_vec();
        if ts.len() != 2 || ts[1] != c || g.shape(phi) != ts.as_slice() {
            return Err(Error::Shape(format!(
                "embeddings {ts:?} / {:?} for {c}-channel features",
                g.shape(phi)
            )));
        }
        let flat = g.reshape(f, vec![c, n])?;
        let te = g.matmul(theta, flat, false, false)?;
        let pe = g.matmul(phi, flat, false, false)?;
        let sim = g.matmul(te, pe, true, false)?;
        let scale = T::one() / T::from_usize(ts[0]).expect("size").sqrt();
        Ok(g.scale(sim, scale))
    }

    /// Runs both branches. The consistency branch is skipped when
    /// `with_pcl` is false, leaving its embeddings out of the graph.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], x: Var, with_pcl: bool) -> Result<ForwardOut> {
        let features = self.backbone_on(g, vars, x)?;
        let s = g.shape(features).to_vec();
        let cls_logits = self.cls_on(g, vars, features)?;
        let pcl_logits = if with_pcl {
            let (theta, phi) = (self.var(vars, "pcl.theta"), self.var(vars, "pcl.phi"));
            Some(self.pcl_on(g, theta, phi, features)?)
        } else {
            None
        };
        Ok(ForwardOut {
            features,
            cls_logits,
            pcl_logits,
            grid: (s[1], s[2]),
        })
    }

    /// `lambda * L_pcl + L_cls` for one sample. With `lambda == 0` the
    /// consistency branch is not evaluated.
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        input: &Tensor<T>,
        target_volume: &[T],
        label: u8,
        lambda: T,
    ) -> Result<LossVars> {
        let x = g.input(input.clone());
        let out = self.forward(g, vars, x, lambda > T::zero())?;
        let cls = g.softmax_ce(out.cls_logits, class_index(label))?;
        let Some(logits) = out.pcl_logits else {
            return Ok(LossVars { total: cls, pcl: None, cls });
        };
        let n = out.grid.0 * out.grid.1;
        if target_volume.len() != n * n {
            return Err(Error::Shape(format!(
                "target volume has {} entries for a {}x{} grid",
                target_volume.len(),
                out.grid.0,
                out.grid.1
            )));
        }
        let pcl = g.sigmoid_bce(logits, target_volume)?;
        let weighted = g.scale(pcl, lambda);
        let total = g.add(weighted, cls)?;
        Ok(LossVars {
            total,
            pcl: Some(pcl),
            cls,
        })
    }

    pub fn forward_backbone(&self, x: &Tensor<T>) -> Result<FeatureMap<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.input(x.clone());
        let f = self.backbone_on(&mut g, &vars, x)?;
        let t = g.value(f).clone();
        let s = t.shape().to_vec();
        Ok(FeatureMap {
            h_p: s[1],
            w_p: s[2],
            channels: s[0],
            data: t,
        })
    }

    pub fn cls_head(&self, f: &FeatureMap<T>) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let fv = g.input(f.data.clone());
        let z = self.cls_on(&mut g, &vars, fv)?;
        Ok(fake_probability(g.value(z).data()))
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Prediction> {
        let f = self.forward_backbone(x)?;
        Ok(Prediction {
            fake_prob: self.cls_head(&f)?,
            volume: pcl_head(&f, &self.pcl_head_params())?,
        })
    }
}

/// Index into the (fake, real) logit pair for a binary label (1 = fake).
pub fn class_index(label: u8) -> usize {
    if label == 1 {
        0
    } else {
        1
    }
}

/// Softmax probability of the "fake" class from (fake, real) logits.
pub fn fake_probability<T: Real>(logits: &[T]) -> f64 {
    let (a, b) = (logits[0].as_f64(), logits[1].as_f64());
    1.0 / (1.0 + (b - a).exp())
}

/// Predicted volume `sigmoid(theta(f_i) . phi(f_j) / sqrt(C'))`.
pub fn pcl_head<T: Real>(f: &FeatureMap<T>, p: &PclHeadParams<T>) -> Result<ConsistencyVolume> {
    if p.theta.shape().len() != 2 || p.theta.shape() != p.phi.shape() || p.theta.shape()[1] != f.channels {
        return Err(Error::Shape(format!(
            "embeddings {:?} / {:?} for {}-channel features",
            p.theta.shape(),
            p.phi.shape(),
            f.channels
        )));
    }
    let mut g = Graph::new();
    let theta = g.input(p.theta.clone());
    let phi = g.input(p.phi.clone());
    let fv = g.input(f.data.clone());
    let model = PclModel::<T> {
        config: ModelConfig::default(),
        params: ParamStore::default(),
    };
    let logits = model.pcl_on(&mut g, theta, phi, fv)?;
    let probs = g.sigmoid(logits);
    let data = g.value(probs).data().iter().map(|v| v.as_f64() as f32).collect();
    ConsistencyVolume::new(f.h_p, f.w_p, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            widths: [4, 6, 8, 8],
            embed_dim: None,
            init_seed: 3,
            input_size: 32,
        }
    }

    fn rand_input(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![3, h, w], (0..3 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn stride_contract() {
        let m = PclModel::<f32>::new(small()).unwrap();
        let f = m.forward_backbone(&rand_input(1, 64, 64).cast()).unwrap();
        assert_eq!((f.h_p, f.w_p, f.channels), (4, 4, 8));
        let f = m.forward_backbone(&rand_input(1, 32, 48).cast()).unwrap();
        assert_eq!((f.h_p, f.w_p), (2, 3));
        assert!(matches!(m.forward_backbone(&rand_input(1, 40, 48).cast()), Err(Error::Shape(_))));
    }

    #[test]
    fn default_widths_at_full_scale() {
        let m = PclModel::<f32>::new(ModelConfig::default()).unwrap();
        let f = m.forward_backbone(&rand_input(2, 256, 256).cast()).unwrap();
        assert_eq!((f.h_p, f.w_p, f.channels), (16, 16, 64));
        assert_eq!(m.config.embed(), 32);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let m = PclModel::<f32>::new(small()).unwrap();
        let x = rand_input(4, 32, 32).cast();
        let a = m.predict(&x).unwrap();
        let b = m.predict(&x).unwrap();
        assert_eq!(a.fake_prob, b.fake_prob);
        assert_eq!(a.volume, b.volume);
    }

    #[test]
    fn zero_embeddings_give_half() {
        let mut m = PclModel::<f64>::new(small()).unwrap();
        for name in ["pcl.theta", "pcl.phi"] {
            m.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let v = m.predict(&rand_input(5, 32, 32)).unwrap().volume;
        assert!(v.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn zero_fc_gives_half_probability() {
        let mut m = PclModel::<f64>::new(small()).unwrap();
        m.params.get_mut("cls.fc.w").unwrap().data_mut().fill(0.0);
        m.params.get_mut("cls.fc.b").unwrap().data_mut().fill(0.0);
        assert_eq!(m.predict(&rand_input(6, 32, 32)).unwrap().fake_prob, 0.5);
    }

    #[test]
    fn logit_pair_probability() {
        let want = 2f64.exp() / (2f64.exp() + 1.0);
        assert!((fake_probability(&[2.0f64, 0.0]) - want).abs() < 1e-12);
        assert!((want - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn unit_similarity_entry() {
        // one patch pair whose embedded dot product equals sqrt(C') = 2
        let f = FeatureMap {
            h_p: 1,
            w_p: 2,
            channels: 4,
            data: Tensor::new(vec![4, 1, 2], vec![1.0f64, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap(),
        };
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let p = PclHeadParams {
            theta: Tensor::new(vec![4, 4], eye.clone()).unwrap(),
            phi: Tensor::new(vec![4, 4], eye).unwrap(),
        };
        let v = pcl_head(&f, &p).unwrap();
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((v.at(0, 0) as f64 - s1).abs() < 1e-6);
        assert!((v.at(0, 1) - 0.5).abs() < 1e-7);
        assert!((s1 - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn pcl_head_shape_error() {
        let f = FeatureMap {
            h_p: 1,
            w_p: 1,
            channels: 3,
            data: Tensor::<f64>::zeros(vec![3, 1, 1]),
        };
        let p = PclHeadParams {
            theta: Tensor::zeros(vec![2, 4]),
            phi: Tensor::zeros(vec![2, 4]),
        };
        assert!(matches!(pcl_head(&f, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn composite_loss_gradient_matches_finite_differences() {
        let model = PclModel::<f64>::new(small()).unwrap();
        let x = rand_input(7, 32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let target: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let eval = |m: &PclModel<f64>| {
            let mut g = Graph::new();
            let vars = m.bind(&mut g, true);
            let l = m.loss(&mut g, &vars, &x, &target, 1, 10.0).unwrap();
            g.value(l.total).item()
        };
        let mut g = Graph::new();
        let vars = model.bind(&mut g, true);
        let l = model.loss(&mut g, &vars, &x, &target, 1, 10.0).unwrap();
        let grads = g.backward(l.total).unwrap();
        let h = 1e-4;
        // probe a spread of entries across every parameter tensor
        for (pi, t) in model.params.tensors().iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[pi], t.numel());
            for j in [0, t.numel() / 2, t.numel() - 1] {
                let mut up = model.clone();
                up.params.tensors_mut()[pi].data_mut()[j] += h;
                let mut down = model.clone();
                down.params.tensors_mut()[pi].data_mut()[j] -= h;
                let numeric = (eval(&up) - eval(&down)) / (2.0 * h);
                let err = (numeric - analytic[j]).abs() / numeric.abs().max(analytic[j].abs()).max(1e-3);
                assert!(err < 1e-4, "{}[{j}]: analytic {} numeric {numeric}", model.params.names()[pi], analytic[j]);
            }
        }
    }
}
