//! Latent noise: `N` reparameterized t-components `t_i = μ_i + σ_i ⊙ ε`,
//! attention weights `π` computed from the drawn components, their weighted
//! sum `z' = Σ π_i t_i`, and the one-hot class suffix fed to the generator.

use crate::nn::{dense_stack, forward_stack, stack_params, stack_params_mut, Dense, Module};
use crate::rng::Rng;
use crate::tdist::{self, standard_t_variate};
use crate::tensor::{softplus, Activation, Graph, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LatentError {
    #[error("invalid latent configuration: {0}")]
    Config(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("mixture weights of row {row} sum to {sum}, not 1")]
    Simplex { row: usize, sum: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    TDist(#[from] tdist::TDistError),
}

pub type Result<T, E = LatentError> = std::result::Result<T, E>;

/// Offset keeping `σ = softplus(raw) + SIGMA_FLOOR` strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-4;
pub const INITIAL_SIGMA: f64 = 0.2;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentKind {
    /// Attention-weighted mixture of Student's-t components.
    TMixture,
    /// Same pipeline with Gaussian ε.
    GaussianMixture,
    /// `z' ~ N(0, I_p)`, nothing learned.
    SingleGaussian,
}

impl LatentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LatentKind::TMixture => "t_mixture",
            LatentKind::GaussianMixture => "gaussian_mixture",
            LatentKind::SingleGaussian => "single_gaussian",
        }
    }
}

impl std::str::FromStr for LatentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "t_mixture" => Ok(LatentKind::TMixture),
            "gaussian_mixture" => Ok(LatentKind::GaussianMixture),
            "single_gaussian" => Ok(LatentKind::SingleGaussian),
            other => Err(format!("unknown latent kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentConfig {
    pub kind: LatentKind,
    /// `N`
    pub components: usize,
    /// `p`
    pub dim: usize,
    pub nu: f64,
    pub num_classes: usize,
    pub attention_hidden: usize,
    /// Weight of the optional `mean((1 - σ)²)` penalty; 0 disables it.
    pub sigma_reg: f64,
}

impl LatentConfig {
    pub fn new(components: usize, dim: usize, num_classes: usize) -> Self {
        LatentConfig {
            kind: LatentKind::TMixture,
            components,
            dim,
            nu: 5.0,
            num_classes,
            attention_hidden: components.max(32),
            sigma_reg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LatentError::Config(m.to_string()));
        if self.components == 0 {
            return bad("component count must be at least 1");
        }
        if self.dim == 0 {
            return bad("component dimension must be at least 1");
        }
        if self.num_classes == 0 {
            return bad("class count must be at least 1");
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu must be positive");
        }
        if self.attention_hidden == 0 {
            return bad("attention width must be at least 1");
        }
        if !(self.sigma_reg >= 0.0) {
            return bad("sigma_reg must be non-negative");
        }
        Ok(())
    }

    /// Departures from the recommended ranges `N ∈ [5, 50]`, `p ∈ [10, 25]`.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.kind != LatentKind::SingleGaussian && !(5..=50).contains(&self.components) {
            w.push(format!("component count {} outside recommended 5..=50", self.components));
        }
        if !(10..=25).contains(&self.dim) {
            w.push(format!("component dimension {} outside recommended 10..=25", self.dim));
        }
        w
    }
}

/// Learnable `μ` and raw scale of every component, both `N × p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub mu: Tensor,
    pub sigma_raw: Tensor,
}

impl ComponentParams {
    /// `μ ~ U[-1, 1]`, `σ ≈ 0.2`.
    pub fn init(n: usize, p: usize, rng: &mut Rng) -> Self {
        let mu = Tensor::new([n, p], (0..n * p).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
            .expect("shape matches");
        let raw = inverse_softplus(INITIAL_SIGMA - SIGMA_FLOOR);
        ComponentParams {
            mu,
            sigma_raw: Tensor::full([n, p], raw),
        }
    }

    pub fn sigma(&self) -> Tensor {
        self.sigma_raw.map(|r| softplus(r) + SIGMA_FLOOR)
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Two dense layers `N·p → hidden → N` followed by a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionNet {
    pub layers: Vec<Dense>,
}

impl AttentionNet {
    pub fn new(n: usize, p: usize, hidden: usize, rng: &mut Rng) -> Self {
        AttentionNet {
            layers: dense_stack(&[n * p, hidden, n], rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPipeline {
    pub cfg: LatentConfig,
    pub components: ComponentParams,
    pub attention: AttentionNet,
}

impl Module for LatentPipeline {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        if self.cfg.kind == LatentKind::SingleGaussian {
            return Vec::new();
        }
        let mut v = vec![
            ("latent.mu".to_string(), &self.components.mu),
            ("latent.sigma_raw".to_string(), &self.components.sigma_raw),
        ];
        v.extend(stack_params("latent.attention", &self.attention.layers));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        if self.cfg.kind == LatentKind::SingleGaussian {
            return Vec::new();
        }
        let mut v = vec![&mut self.components.mu, &mut self.components.sigma_raw];
        v.extend(stack_params_mut(&mut self.attention.layers));
        v
    }
}

/// Graph handles of one latent draw.
#[derive(Debug, Clone, Copy)]
pub struct LatentDraw {
    /// `[b, p]`
    pub z: Var,
    /// `[b, N, p]` (absent for a single Gaussian)
    pub components: Option<Var>,
    /// `[b, N]`
    pub weights: Option<Var>,
}

impl LatentPipeline {
    pub fn new(cfg: LatentConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let components = ComponentParams::init(cfg.components, cfg.dim, rng);
        let attention = AttentionNet::new(cfg.components, cfg.dim, cfg.attention_hidden, rng);
        Ok(LatentPipeline {
            cfg,
            components,
            attention,
        })
    }

    /// Draws `batch` latent vectors. `vars` are this pipeline's bound
    /// parameters in [`Module::named_params`] order.
    pub fn draw(&self, g: &mut Graph, vars: &[Var], batch: usize, rng: &mut Rng) -> Result<LatentDraw> {
        match self.cfg.kind {
            LatentKind::SingleGaussian => {
                let p = self.cfg.dim;
                let data = (0..batch * p).map(|_| rng.normal()).collect();
                let z = g.constant(Tensor::new([batch, p], data)?)?;
                Ok(LatentDraw {
                    z,
                    components: None,
                    weights: None,
                })
            }
            kind => {
                let noise = draw_noise(kind, &self.cfg, batch, rng)?;
                let comps = draw_components(g, vars[0], vars[1], noise)?;
                let pi = attention_weights(g, &vars[2..6], comps)?;
                let z = compose_noise(g, comps, pi)?;
                Ok(LatentDraw {
                    z,
                    components: Some(comps),
                    weights: Some(pi),
                })
            }
        }
    }

    /// Optional σ penalty `w · mean((1 - σ)²)`, or `None` when disabled.
    pub fn sigma_penalty(&self, g: &mut Graph, vars: &[Var]) -> Result<Option<Var>> {
        if self.cfg.sigma_reg == 0.0 || self.cfg.kind == LatentKind::SingleGaussian {
            return Ok(None);
        }
        let s = g.softplus(vars[1])?;
        let one_minus = g.affine(s, -1.0, 1.0 - SIGMA_FLOOR)?;
        let sq = g.mul(one_minus, one_minus)?;
        let m = g.mean(sq)?;
        Ok(Some(g.affine(m, self.cfg.sigma_reg, 0.0)?))
    }
}

/// Parameter-free noise `ε` of shape `[b, N, p]`: standard t for the
/// t-mixture, standard normal for the Gaussian mixture.
pub fn draw_noise(kind: LatentKind, cfg: &LatentConfig, batch: usize, rng: &mut Rng) -> Result<Tensor> {
    let (n, p) = (cfg.components, cfg.dim);
    let count = batch * n * p;
    let data: Vec<f64> = match kind {
        LatentKind::GaussianMixture => (0..count).map(|_| rng.normal()).collect(),
        _ => (0..count).map(|_| standard_t_variate(cfg.nu, rng)).collect(),
    };
    Ok(Tensor::new([batch, n, p], data)?)
}

/// `t[b, i, :] = μ_i + σ_i ⊙ ε[b, i, :]` with `σ = softplus(raw) + floor`.
/// `ε` is a constant; gradients reach `μ` and the raw scale.
pub fn draw_components(g: &mut Graph, mu: Var, sigma_raw: Var, noise: Tensor) -> Result<Var> {
    let batch = noise.shape()[0];
    let sigma = g.softplus(sigma_raw)?;
    let sigma = g.affine(sigma, 1.0, SIGMA_FLOOR)?;
    let sigma_b = g.repeat_batch(sigma, batch)?;
    let mu_b = g.repeat_batch(mu, batch)?;
    let eps = g.constant(noise)?;
    let scaled = g.mul(sigma_b, eps)?;
    Ok(g.add(mu_b, scaled)?)
}

/// Flattens each row's `N × p` block, applies `dense(leaky) → dense → softmax`.
/// `net` holds `(W1, b1, W2, b2)`.
pub fn attention_weights(g: &mut Graph, net: &[Var], components: Var) -> Result<Var> {
    let shape = g.shape(components).to_vec();
    let [b, n, p] = shape[..] else {
        return Err(TensorError::Shape {
            op: "attention_weights",
            left: shape,
            right: vec![],
        }
        .into());
    };
    let flat = g.reshape(components, [b, n * p])?;
    let logits = forward_stack(
        g,
        net,
        flat,
        &[Activation::LeakyRelu(LEAKY_SLOPE), Activation::Identity],
    )?;
    Ok(g.softmax(logits)?)
}

/// `z'[b] = Σ_i π[b, i] · t[b, i]`. Every weight row must sum to 1 within 1e-9.
pub fn compose_noise(g: &mut Graph, components: Var, weights: Var) -> Result<Var> {
    let w = g.value(weights);
    if let Some(&n) = w.shape().last() {
        if n > 0 {
            for (row, chunk) in w.data().chunks(n).enumerate() {
                let sum: f64 = chunk.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(LatentError::Simplex { row, sum });
                }
            }
        }
    }
    Ok(g.mixture_sum(components, weights)?)
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * num_classes];
    for (r, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(LatentError::Label {
                label: l,
                classes: num_classes,
            });
        }
        data[r * num_classes + l] = 1.0;
    }
    Ok(Tensor::new([labels.len(), num_classes], data)?)
}

/// Appends the one-hot encoding of `labels` after `z'`: `[b, p + C]`.
pub fn concat_condition(g: &mut Graph, z: Var, labels: &[usize], num_classes: usize) -> Result<Var> {
    let oh = one_hot(labels, num_classes)?;
    let c = g.constant(oh)?;
    Ok(g.concat_cols(z, c)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::nn::bind;

    fn cfg(n: usize, p: usize) -> LatentConfig {
        LatentConfig::new(n, p, 3)
    }

    #[test]
    fn config_validation_and_warnings() {
        assert!(cfg(0, 2).validate().is_err());
        assert!(cfg(2, 0).validate().is_err());
        assert!(LatentConfig::new(2, 2, 0).validate().is_err());
        assert_eq!(cfg(2, 2).warnings().len(), 2);
        assert!(cfg(10, 12).warnings().is_empty());
        assert_eq!(cfg(5, 3).attention_hidden, 32);
        assert_eq!(cfg(40, 3).attention_hidden, 40);
    }

    #[test]
    fn collapsed_scale_returns_means() {
        let mut g = Graph::new();
        let mu = g.param(Tensor::zeros([2, 3])).unwrap();
        let raw = g.param(Tensor::full([2, 3], -60.0)).unwrap();
        let mut rng = Rng::new(1);
        let noise = draw_noise(LatentKind::TMixture, &cfg(2, 3), 4, &mut rng).unwrap();
        let t = draw_components(&mut g, mu, raw, noise.clone()).unwrap();
        // σ is exactly the floor; |t| ≤ floor·|ε|
        for (v, e) in g.value(t).data().iter().zip(noise.data()) {
            assert!((v - SIGMA_FLOOR * e).abs() < 1e-15);
            assert!(v.abs() < 1e-2);
        }
    }

    #[test]
    fn component_mean_matches_location() {
        let mut g = Graph::new();
        let mu = g.param(Tensor::full([1, 1], 5.0)).unwrap();
        let raw = g.param(Tensor::full([1, 1], inverse_softplus(1.0 - SIGMA_FLOOR))).unwrap();
        let mut rng = Rng::new(3);
        let noise = draw_noise(LatentKind::TMixture, &cfg(1, 1), 100_000, &mut rng).unwrap();
        let t = draw_components(&mut g, mu, raw, noise).unwrap();
        let mean = g.value(t).data().iter().sum::<f64>() / 100_000.0;
        assert!((mean - 5.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn component_gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        let noise = draw_noise(LatentKind::TMixture, &cfg(2, 3), 4, &mut rng).unwrap();
        let mu = Tensor::new([2, 3], vec![0.1, -0.3, 0.5, 0.9, -1.0, 0.2]).unwrap();
        let raw = Tensor::new([2, 3], vec![-1.0, 0.2, 0.4, -0.5, 1.5, 0.0]).unwrap();
        let report = check_gradients(&[mu, raw], 1e-6, |g, v| {
            let t = draw_components(g, v[0], v[1], noise.clone()).map_err(unwrap_tensor)?;
            g.mean(t)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        // ∂ mean / ∂ μ_ij = b / (b N p) = 1 / (N p)
        for v in report.analytic[0].data() {
            assert!((v - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    fn unwrap_tensor(e: LatentError) -> TensorError {
        match e {
            LatentError::Tensor(t) => t,
            other => panic!("{other}"),
        }
    }

    #[test]
    fn zero_attention_gives_uniform_weights() {
        let mut g = Graph::new();
        let comps = g.constant(Tensor::full([3, 4, 2], 0.7)).unwrap();
        let vars: Vec<Var> = [
            Tensor::zeros([8, 5]),
            Tensor::vector(vec![0.3; 5]),
            Tensor::zeros([5, 4]),
            Tensor::zeros([4]),
        ]
        .into_iter()
        .map(|t| g.param(t).unwrap())
        .collect();
        let pi = attention_weights(&mut g, &vars, comps).unwrap();
        assert_eq!(g.value(pi).shape(), &[3, 4]);
        assert!(g.value(pi).data().iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn attention_bias_closed_form() {
        let mut g = Graph::new();
        let comps = g.constant(Tensor::full([1, 2, 3], -1.0)).unwrap();
        let vars: Vec<Var> = [
            Tensor::zeros([6, 4]),
            Tensor::zeros([4]),
            Tensor::zeros([4, 2]),
            Tensor::vector(vec![2f64.ln(), 0.0]),
        ]
        .into_iter()
        .map(|t| g.param(t).unwrap())
        .collect();
        let pi = attention_weights(&mut g, &vars, comps).unwrap();
        let w = g.value(pi).data();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn attention_permutation_symmetry() {
        let (n, p, h) = (3usize, 2usize, 5usize);
        let mut rng = Rng::new(13);
        let net = AttentionNet::new(n, p, h, &mut rng);
        let mut l2b = net.layers[1].bias.clone();
        l2b.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64);
        let comps = Tensor::new([1, n, p], (0..n * p).map(|_| rng.normal()).collect()).unwrap();
        let perm = [2usize, 0, 1];

        let logits = |comps: &Tensor, w1: &Tensor, w2: &Tensor, b2: &Tensor| {
            let mut g = Graph::new();
            let c = g.constant(comps.clone()).unwrap();
            let vars: Vec<Var> = [w1.clone(), net.layers[0].bias.clone(), w2.clone(), b2.clone()]
                .into_iter()
                .map(|t| g.constant(t).unwrap())
                .collect();
            let pi = attention_weights(&mut g, &vars, c).unwrap();
            g.value(pi).data().to_vec()
        };
        let base = logits(&comps, &net.layers[0].weight, &net.layers[1].weight, &l2b);

        // Permute component blocks, W1 row blocks, W2 columns and b2 alike.
        let mut pc = comps.clone();
        let mut w1 = net.layers[0].weight.clone();
        let mut w2 = net.layers[1].weight.clone();
        let mut b2 = l2b.clone();
        for (new, &old) in perm.iter().enumerate() {
            for j in 0..p {
                pc.data_mut()[new * p + j] = comps.data()[old * p + j];
                for k in 0..h {
                    w1.data_mut()[(new * p + j) * h + k] = net.layers[0].weight.data()[(old * p + j) * h + k];
                }
            }
            for k in 0..h {
                w2.data_mut()[k * n + new] = net.layers[1].weight.data()[k * n + old];
            }
            b2.data_mut()[new] = l2b.data()[old];
        }
        let permuted = logits(&pc, &w1, &w2, &b2);
        for (new, &old) in perm.iter().enumerate() {
            assert!((permuted[new] - base[old]).abs() < 1e-14);
        }
    }

    #[test]
    fn compose_examples() {
        let mut g = Graph::new();
        let c = g
            .constant(Tensor::new([1, 2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let w = g.constant(Tensor::new([1, 2], vec![1.0, 0.0]).unwrap()).unwrap();
        let z = compose_noise(&mut g, c, w).unwrap();
        assert_eq!(g.value(z).data(), &[1.0, -2.0]);

        let c = g
            .constant(Tensor::new([1, 2, 2], vec![1.5, -2.0, -1.5, 2.0]).unwrap())
            .unwrap();
        let w = g.constant(Tensor::new([1, 2], vec![0.5, 0.5]).unwrap()).unwrap();
        let z = compose_noise(&mut g, c, w).unwrap();
        assert_eq!(g.value(z).data(), &[0.0, 0.0]);

        let c = g
            .constant(Tensor::new([1, 3, 2], vec![1.0, 1.0, 2.0, 2.0, 4.0, 4.0]).unwrap())
            .unwrap();
        let w = g.constant(Tensor::new([1, 3], vec![0.2, 0.3, 0.5]).unwrap()).unwrap();
        let z = compose_noise(&mut g, c, w).unwrap();
        for v in g.value(z).data() {
            assert!((v - 2.8).abs() < 1e-14);
        }
    }

    #[test]
    fn compose_rejects_off_simplex_weights() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::zeros([2, 2, 1])).unwrap();
        let w = g.constant(Tensor::new([2, 2], vec![0.5, 0.5, 0.5, 0.6]).unwrap()).unwrap();
        assert!(matches!(compose_noise(&mut g, c, w), Err(LatentError::Simplex { row: 1, .. })));
    }

    #[test]
    fn concat_condition_examples() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::new([2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap()).unwrap();
        let zc = concat_condition(&mut g, z, &[0, 1], 2).unwrap();
        assert_eq!(g.value(zc).data(), &[0.1, 0.2, 1.0, 0.0, 0.3, 0.4, 0.0, 1.0]);

        let z = g.constant(Tensor::zeros([1, 1])).unwrap();
        let zc = concat_condition(&mut g, z, &[9], 10).unwrap();
        let row = g.value(zc).data();
        assert_eq!(row[10], 1.0);
        assert_eq!(row[1..10].iter().sum::<f64>(), 0.0);

        assert!(matches!(
            concat_condition(&mut g, z, &[10], 10),
            Err(LatentError::Label { label: 10, classes: 10 })
        ));
    }

    #[test]
    fn pipeline_draw_shapes_and_gradients() {
        let mut rng = Rng::new(21);
        let mut c = LatentConfig::new(3, 2, 2);
        c.attention_hidden = 4;
        let pipe = LatentPipeline::new(c, &mut rng).unwrap();
        let mut g = Graph::new();
        let vars = bind(&mut g, &pipe, true).unwrap();
        assert_eq!(vars.len(), 6);
        let d = pipe.draw(&mut g, &vars, 5, &mut rng).unwrap();
        assert_eq!(g.value(d.z).shape(), &[5, 2]);
        let s = g.sum(d.z).unwrap();
        g.backward(s).unwrap();
        for v in &vars {
            assert!(g.grad(*v).is_some());
        }
    }

    #[test]
    fn single_gaussian_has_no_parameters() {
        let mut rng = Rng::new(2);
        let mut c = LatentConfig::new(3, 4, 2);
        c.kind = LatentKind::SingleGaussian;
        let pipe = LatentPipeline::new(c, &mut rng).unwrap();
        assert!(pipe.named_params().is_empty());
        let mut g = Graph::new();
        let d = pipe.draw(&mut g, &[], 6, &mut rng).unwrap();
        assert_eq!(g.value(d.z).shape(), &[6, 4]);
        assert!(d.weights.is_none());
    }

    #[test]
    fn sigma_penalty_off_by_default() {
        let mut rng = Rng::new(2);
        let mut pipe = LatentPipeline::new(LatentConfig::new(2, 2, 2), &mut rng).unwrap();
        let mut g = Graph::new();
        let vars = bind(&mut g, &pipe, true).unwrap();
        assert!(pipe.sigma_penalty(&mut g, &vars).unwrap().is_none());
        pipe.cfg.sigma_reg = 2.0;
        let pen = pipe.sigma_penalty(&mut g, &vars).unwrap().unwrap();
        // σ starts at 0.2: 2·(0.8)²
        assert!((g.value(pen).item() - 2.0 * 0.64).abs() < 1e-9);
    }
}
