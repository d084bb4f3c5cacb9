//! Conditional generator, discriminator with a shared trunk feeding an
//! adversarial head and an auxiliary classifier head, the canonicalized
//! (all-minimized) losses, and the alternating training step.
//!
//! Loss conventions, all minimized:
//!
//! * classifier: `L_C = -mean log C(x)[y] - mean log C(G(z,c))[c]`
//! * discriminator: `-mean log D(x) - mean log(1 - D(G(z,c))) + α L_C`
//! * generator (saturating): `mean log(1 - D(G(z,c))) + α·(-mean log C(G(z,c))[c])`
//! * generator (non-saturating): `-mean log D(G(z,c)) + α·(...)`
//!
//! The vanilla baseline drops the class input and the classifier terms.

use sha2::{Digest, Sha256};

use crate::latent::{concat_condition, LatentError, LatentPipeline, LEAKY_SLOPE};
use crate::nn::{bind, collect_grads, dense_stack, forward_stack, stack_params, stack_params_mut, Dense, Module};
use crate::optim::Optimizer;
use crate::rng::Rng;
use crate::tensor::{Activation, Graph, Tensor, TensorError, Var};

/// Floor applied to every probability before taking its log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GanError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("batch has {rows} rows of width {width}, expected width {expected}")]
    Batch {
        rows: usize,
        width: usize,
        expected: usize,
    },
    #[error("numerical abort: {0}")]
    NonFinite(Diagnostics),
}

pub type Result<T, E = GanError> = std::result::Result<T, E>;

/// State dumped when a step produces a non-finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub step: u64,
    pub phase: &'static str,
    pub d_loss: f64,
    pub g_loss: f64,
    pub max_abs_grad: f64,
    pub detail: String,
}

impl std::fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step {} ({}): d_loss={} g_loss={} max|grad|={} {}",
            self.step, self.phase, self.d_loss, self.g_loss, self.max_abs_grad, self.detail
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Conditional generator, auxiliary classifier in both losses.
    TGan,
    /// Unconditional generator, adversarial terms only.
    Vanilla,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::TGan => "tgan",
            Objective::Vanilla => "vanilla",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tgan" => Ok(Objective::TGan),
            "vanilla" => Ok(Objective::Vanilla),
            o => Err(format!("unknown objective `{o}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GMode {
    Saturating,
    NonSaturating,
}

impl GMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GMode::Saturating => "saturating",
            GMode::NonSaturating => "nonsaturating",
        }
    }
}

impl std::str::FromStr for GMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "saturating" => Ok(GMode::Saturating),
            "nonsaturating" => Ok(GMode::NonSaturating),
            o => Err(format!("unknown generator mode `{o}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub data_dim: usize,
    pub num_classes: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub objective: Objective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub layers: Vec<Dense>,
}

const G_ACTS: [Activation; 3] = [
    Activation::LeakyRelu(LEAKY_SLOPE),
    Activation::LeakyRelu(LEAKY_SLOPE),
    Activation::Tanh,
];

impl Generator {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Generator {
            layers: dense_stack(&[input, hidden, hidden, output], rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    /// Maps `[b, input]` to `[b, data_dim]` in `(-1, 1)`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], input: Var) -> Result<Var> {
        Ok(forward_stack(g, vars, input, &G_ACTS)?)
    }
}

impl Module for Generator {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        stack_params("generator", &self.layers)
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        stack_params_mut(&mut self.layers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub trunk: Vec<Dense>,
    pub adv_head: Vec<Dense>,
    pub cls_head: Vec<Dense>,
    pub dropout: f64,
}

const LEAKY: Activation = Activation::LeakyRelu(LEAKY_SLOPE);

impl Discriminator {
    pub fn new(data_dim: usize, hidden: usize, classes: usize, dropout: f64, rng: &mut Rng) -> Self {
        Discriminator {
            trunk: dense_stack(&[data_dim, hidden, hidden, hidden], rng),
            adv_head: dense_stack(&[hidden, hidden, 1], rng),
            cls_head: dense_stack(&[hidden, hidden, classes], rng),
            dropout,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.cls_head.last().map_or(0, Dense::outputs)
    }

    pub fn input_dim(&self) -> usize {
        self.trunk[0].inputs()
    }

    /// Returns `(score [b, 1], class_probs [b, C])`. Dropout in the classifier
    /// head is active only when `train_rng` is given.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var, train_rng: Option<&mut Rng>) -> Result<(Var, Var)> {
        let (trunk, rest) = vars.split_at(6);
        let (adv, cls) = rest.split_at(4);
        let h = forward_stack(g, trunk, x, &[LEAKY; 3])?;
        let score = forward_stack(g, adv, h, &[LEAKY, Activation::Sigmoid])?;
        let c = g.dense(h, cls[0], cls[1], LEAKY)?;
        let c = match train_rng {
            Some(rng) => g.dropout(c, self.dropout, rng)?,
            None => c,
        };
        let logits = g.dense(c, cls[2], cls[3], Activation::Identity)?;
        let probs = g.softmax(logits)?;
        Ok((score, probs))
    }
}

impl Module for Discriminator {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = stack_params("discriminator.trunk", &self.trunk);
        v.extend(stack_params("discriminator.adv", &self.adv_head));
        v.extend(stack_params("discriminator.cls", &self.cls_head));
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = stack_params_mut(&mut self.trunk);
        v.extend(stack_params_mut(&mut self.adv_head));
        v.extend(stack_params_mut(&mut self.cls_head));
        v
    }
}

/// `-mean log probs[r, labels[r]]`, clamped at [`LOG_FLOOR`].
pub fn class_nll(g: &mut Graph, probs: Var, labels: &[usize]) -> Result<Var> {
    let classes = g.shape(probs).last().copied().unwrap_or(0);
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(GanError::Label { label, classes });
    }
    let picked = g.pick(probs, labels)?;
    let logp = g.log_clamped(picked, LOG_FLOOR)?;
    let m = g.mean(logp)?;
    Ok(g.neg(m)?)
}

/// Auxiliary-classifier loss `L_C` over a real and a generated batch.
pub fn loss_classifier(
    g: &mut Graph,
    probs_real: Var,
    real_labels: &[usize],
    probs_fake: Var,
    fake_labels: &[usize],
) -> Result<Var> {
    let a = class_nll(g, probs_real, real_labels)?;
    let b = class_nll(g, probs_fake, fake_labels)?;
    Ok(g.add(a, b)?)
}

/// `-mean log D(x) - mean log(1 - D(G(z)))`.
pub fn adversarial_d_loss(g: &mut Graph, scores_real: Var, scores_fake: Var) -> Result<Var> {
    let lr = g.log_clamped(scores_real, LOG_FLOOR)?;
    let lr = g.mean(lr)?;
    let one_minus = g.affine(scores_fake, -1.0, 1.0)?;
    let lf = g.log_clamped(one_minus, LOG_FLOOR)?;
    let lf = g.mean(lf)?;
    let s = g.add(lr, lf)?;
    Ok(g.neg(s)?)
}

/// Discriminator loss; returns `(total, adversarial part)`.
pub fn loss_d(g: &mut Graph, scores_real: Var, scores_fake: Var, l_c: Option<Var>, alpha: f64) -> Result<(Var, Var)> {
    let adv = adversarial_d_loss(g, scores_real, scores_fake)?;
    let total = match l_c {
        Some(lc) if alpha != 0.0 => {
            let w = g.affine(lc, alpha, 0.0)?;
            g.add(adv, w)?
        }
        _ => adv,
    };
    Ok((total, adv))
}

/// Generator loss. `l_c_fake` is the fake-class part of `L_C`
/// (`-mean log C(G(z,c))[c]`).
pub fn loss_g(g: &mut Graph, scores_fake: Var, l_c_fake: Option<Var>, alpha: f64, mode: GMode) -> Result<Var> {
    let adv = match mode {
        GMode::Saturating => {
            let one_minus = g.affine(scores_fake, -1.0, 1.0)?;
            let l = g.log_clamped(one_minus, LOG_FLOOR)?;
            g.mean(l)?
        }
        GMode::NonSaturating => {
            let l = g.log_clamped(scores_fake, LOG_FLOOR)?;
            let m = g.mean(l)?;
            g.neg(m)?
        }
    };
    Ok(match l_c_fake {
        Some(lc) if alpha != 0.0 => {
            let w = g.affine(lc, alpha, 0.0)?;
            g.add(adv, w)?
        }
        _ => adv,
    })
}

/// Generator + discriminator + latent pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub cfg: ModelConfig,
    pub latent: LatentPipeline,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl GanModel {
    pub fn new(cfg: ModelConfig, latent: LatentPipeline, rng: &mut Rng) -> Self {
        let cond = if cfg.objective == Objective::TGan {
            cfg.num_classes
        } else {
            0
        };
        let generator = Generator::new(latent.cfg.dim + cond, cfg.hidden, cfg.data_dim, rng);
        let discriminator = Discriminator::new(cfg.data_dim, cfg.hidden, cfg.num_classes, cfg.dropout, rng);
        GanModel {
            cfg,
            latent,
            generator,
            discriminator,
        }
    }

    pub fn conditional(&self) -> bool {
        self.cfg.objective == Objective::TGan
    }

    /// Latent draw followed by the generator; returns `(fake, latent draw)`.
    fn generate(
        &self,
        g: &mut Graph,
        lvars: &[Var],
        gvars: &[Var],
        labels: &[usize],
        rng: &mut Rng,
    ) -> Result<Var> {
        let draw = self.latent.draw(g, lvars, labels.len(), rng)?;
        self.g_forward(g, gvars, draw.z, labels)
    }

    /// `G(z', c)`: concatenates the class suffix when conditional.
    pub fn g_forward(&self, g: &mut Graph, gvars: &[Var], z: Var, labels: &[usize]) -> Result<Var> {
        let input = if self.conditional() {
            concat_condition(g, z, labels, self.cfg.num_classes)?
        } else {
            z
        };
        self.generator.forward(g, gvars, input)
    }

    /// `n = labels.len()` conditional samples with dropout off.
    pub fn sample(&self, labels: &[usize], rng: &mut Rng) -> Result<Tensor> {
        if labels.is_empty() {
            return Ok(Tensor::zeros([0, self.cfg.data_dim]));
        }
        let mut g = Graph::new();
        let lvars = bind(&mut g, &self.latent, false)?;
        let gvars = bind(&mut g, &self.generator, false)?;
        let fake = self.generate(&mut g, &lvars, &gvars, labels, rng)?;
        Ok(g.value(fake).clone())
    }

    /// Every parameter, in checkpoint order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.latent.named_params();
        v.extend(self.generator.named_params());
        v.extend(self.discriminator.named_params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.latent.params_mut();
        v.extend(self.generator.params_mut());
        v.extend(self.discriminator.params_mut());
        v
    }
}

/// Short SHA-256 digest over the names and bytes of `params`.
pub fn params_digest<'a>(params: impl IntoIterator<Item = (String, &'a Tensor)>) -> String {
    let mut h = Sha256::new();
    for (name, t) in params {
        h.update(name.as_bytes());
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub alpha: f64,
    pub g_mode: GMode,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    /// Full discriminator loss, `adversarial + α L_C`.
    pub d_loss: f64,
    /// Adversarial part of the discriminator loss.
    pub d_adv: f64,
    pub g_loss: f64,
    /// `L_C` measured in the discriminator update.
    pub c_loss: f64,
}

/// Owns the model and both optimizers; `step` performs one alternating update.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: GanModel,
    pub cfg: TrainConfig,
    d_opt: Optimizer,
    g_opt: Optimizer,
    step: u64,
}

impl Trainer {
    pub fn new(model: GanModel, cfg: TrainConfig, d_opt: Optimizer, g_opt: Optimizer) -> Self {
        Trainer {
            model,
            cfg,
            d_opt,
            g_opt,
            step: 0,
        }
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    fn check_batch(&self, real: &Tensor, labels: &[usize]) -> Result<()> {
        let (rows, width) = real.dims2().unwrap_or((0, 0));
        if real.shape().len() != 2 || width != self.model.cfg.data_dim || rows != labels.len() || rows == 0 {
            return Err(GanError::Batch {
                rows,
                width,
                expected: self.model.cfg.data_dim,
            });
        }
        let classes = self.model.cfg.num_classes;
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(GanError::Label { label, classes });
        }
        Ok(())
    }

    fn abort(&self, phase: &'static str, d_loss: f64, g_loss: f64, max_abs_grad: f64, detail: String) -> GanError {
        GanError::NonFinite(Diagnostics {
            step: self.step,
            phase,
            d_loss,
            g_loss,
            max_abs_grad,
            detail,
        })
    }

    fn lift(&self, phase: &'static str, e: GanError) -> GanError {
        match e {
            GanError::Tensor(t @ (TensorError::NonFinite { .. } | TensorError::Domain { .. })) => {
                self.abort(phase, f64::NAN, f64::NAN, f64::NAN, t.to_string())
            }
            other => other,
        }
    }

    /// One discriminator phase (repeated `d_steps` times) followed by one
    /// generator phase. Randomness comes from the stream `(seed, step)`.
    pub fn step(&mut self, real: &Tensor, labels: &[usize]) -> Result<StepReport> {
        self.check_batch(real, labels)?;
        let mut rng = Rng::stream(self.cfg.seed, self.step);
        let mut d_out = (0.0, 0.0, 0.0);
        for _ in 0..self.cfg.d_steps.max(1) {
            d_out = self.d_phase(real, labels, &mut rng).map_err(|e| self.lift("discriminator", e))?;
        }
        let g_loss = self.g_phase(labels.len(), &mut rng).map_err(|e| self.lift("generator", e))?;
        let report = StepReport {
            step: self.step,
            d_loss: d_out.0,
            d_adv: d_out.1,
            g_loss,
            c_loss: d_out.2,
        };
        self.step += 1;
        Ok(report)
    }

    fn fake_labels(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        (0..n).map(|_| rng.below(self.model.cfg.num_classes)).collect()
    }

    fn d_phase(&mut self, real: &Tensor, labels: &[usize], rng: &mut Rng) -> Result<(f64, f64, f64)> {
        let m = &self.model;
        let fake_labels = self.fake_labels(labels.len(), rng);
        let mut g = Graph::new();
        let lvars = bind(&mut g, &m.latent, false)?;
        let gvars = bind(&mut g, &m.generator, false)?;
        let dvars = bind(&mut g, &m.discriminator, true)?;
        let fake = m.generate(&mut g, &lvars, &gvars, &fake_labels, rng)?;
        let x = g.constant(real.clone())?;
        let (s_real, p_real) = m.discriminator.forward(&mut g, &dvars, x, Some(rng))?;
        let (s_fake, p_fake) = m.discriminator.forward(&mut g, &dvars, fake, Some(rng))?;
        let l_c = if m.conditional() {
            Some(loss_classifier(&mut g, p_real, labels, p_fake, &fake_labels)?)
        } else {
            None
        };
        let (total, adv) = loss_d(&mut g, s_real, s_fake, l_c, self.cfg.alpha)?;
        g.backward(total)?;
        let grads = collect_grads(&g, &dvars);
        let d_loss = g.value(total).item();
        let c_loss = l_c.map_or(0.0, |v| g.value(v).item());
        let max_grad = grads.iter().fold(0.0f64, |a, t| a.max(t.max_abs()));
        if !d_loss.is_finite() || !max_grad.is_finite() {
            return Err(self.abort("discriminator", d_loss, f64::NAN, max_grad, "non-finite gradient".into()));
        }
        let adv = g.value(adv).item();
        self.d_opt.step(&mut self.model.discriminator.params_mut(), &grads);
        Ok((d_loss, adv, c_loss))
    }

    fn g_phase(&mut self, batch: usize, rng: &mut Rng) -> Result<f64> {
        let m = &self.model;
        let fake_labels = self.fake_labels(batch, rng);
        let mut g = Graph::new();
        let lvars = bind(&mut g, &m.latent, true)?;
        let gvars = bind(&mut g, &m.generator, true)?;
        let dvars = bind(&mut g, &m.discriminator, false)?;
        let fake = m.generate(&mut g, &lvars, &gvars, &fake_labels, rng)?;
        let (s_fake, p_fake) = m.discriminator.forward(&mut g, &dvars, fake, Some(rng))?;
        let l_c_fake = if m.conditional() {
            Some(class_nll(&mut g, p_fake, &fake_labels)?)
        } else {
            None
        };
        let mut loss = loss_g(&mut g, s_fake, l_c_fake, self.cfg.alpha, self.cfg.g_mode)?;
        if let Some(pen) = m.latent.sigma_penalty(&mut g, &lvars)? {
            loss = g.add(loss, pen)?;
        }
        g.backward(loss)?;
        let mut vars = lvars;
        vars.extend(gvars);
        let grads = collect_grads(&g, &vars);
        let g_loss = g.value(loss).item();
        let max_grad = grads.iter().fold(0.0f64, |a, t| a.max(t.max_abs()));
        if !g_loss.is_finite() || !max_grad.is_finite() {
            return Err(self.abort("generator", f64::NAN, g_loss, max_grad, "non-finite gradient".into()));
        }
        let mut params = self.model.latent.params_mut();
        params.extend(self.model.generator.params_mut());
        self.g_opt.step(&mut params, &grads);
        Ok(g_loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{LatentConfig, LatentKind};
    use crate::optim::OptimizerKind;

    fn scalar_graph(values: &[&[f64]]) -> (Graph, Vec<Var>) {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|v| g.constant(Tensor::new([v.len(), 1], v.to_vec()).unwrap()).unwrap())
            .collect();
        (g, vars)
    }

    fn probs(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn classifier_loss_examples() {
        let mut g = Graph::new();
        let perfect = g.constant(probs(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        let l = loss_classifier(&mut g, perfect, &[0, 1], perfect, &[0, 1]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        let uni = g.constant(Tensor::full([4, 10], 0.1)).unwrap();
        let l = loss_classifier(&mut g, uni, &[0, 3, 5, 9], uni, &[1, 1, 2, 8]).unwrap();
        assert!((g.value(l).item() - 2.0 * 10f64.ln()).abs() < 1e-12);
        assert!((g.value(l).item() - 4.6052).abs() < 1e-4);

        let half = g.constant(Tensor::full([3, 2], 0.5)).unwrap();
        let l = loss_classifier(&mut g, half, &[0, 1, 0], half, &[1, 1, 0]).unwrap();
        assert!((g.value(l).item() - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn classifier_loss_clamps_zero_probability() {
        let mut g = Graph::new();
        let p = g.constant(probs(&[vec![1.0, 0.0]])).unwrap();
        let l = class_nll(&mut g, p, &[1]).unwrap();
        assert!((g.value(l).item() - (-LOG_FLOOR.ln())).abs() < 1e-9);
        assert_eq!(g.clamp_events(), 1);
        assert!(matches!(class_nll(&mut g, p, &[2]), Err(GanError::Label { label: 2, .. })));
    }

    #[test]
    fn d_loss_examples() {
        let (mut g, v) = scalar_graph(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let (d, adv) = loss_d(&mut g, v[0], v[1], None, 0.0).unwrap();
        assert!((g.value(d).item() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(g.value(d).item(), g.value(adv).item());

        let (mut g, v) = scalar_graph(&[&[1.0, 1.0], &[0.0, 0.0]]);
        let (d, _) = loss_d(&mut g, v[0], v[1], None, 0.0).unwrap();
        assert_eq!(g.value(d).item(), 0.0);

        let (mut g, v) = scalar_graph(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let uni = g.constant(Tensor::full([2, 10], 0.1)).unwrap();
        let lc = loss_classifier(&mut g, uni, &[0, 1], uni, &[2, 3]).unwrap();
        let (d, _) = loss_d(&mut g, v[0], v[1], Some(lc), 1.0).unwrap();
        assert!((g.value(d).item() - (2.0 * 2f64.ln() + 2.0 * 10f64.ln())).abs() < 1e-12);
        assert!((g.value(d).item() - 5.9915).abs() < 1e-4);
    }

    #[test]
    fn d_loss_decomposes_in_alpha() {
        let (mut g, v) = scalar_graph(&[&[0.7, 0.2, 0.9], &[0.4, 0.1, 0.6]]);
        let p = g.constant(probs(&[vec![0.2, 0.8], vec![0.6, 0.4], vec![0.5, 0.5]])).unwrap();
        let lc = loss_classifier(&mut g, p, &[0, 1, 1], p, &[1, 0, 0]).unwrap();
        let (d0, _) = loss_d(&mut g, v[0], v[1], Some(lc), 0.0).unwrap();
        for &alpha in &[0.5, 1.0, 3.0] {
            let (da, adv) = loss_d(&mut g, v[0], v[1], Some(lc), alpha).unwrap();
            let expect = g.value(d0).item() + alpha * g.value(lc).item();
            assert!((g.value(da).item() - expect).abs() < 1e-12);
            assert_eq!(g.value(adv).item(), g.value(d0).item());
        }
    }

    #[test]
    fn g_loss_examples() {
        let (mut g, v) = scalar_graph(&[&[0.5, 0.5]]);
        let s = loss_g(&mut g, v[0], None, 0.0, GMode::Saturating).unwrap();
        assert!((g.value(s).item() + 2f64.ln()).abs() < 1e-12);
        let ns = loss_g(&mut g, v[0], None, 0.0, GMode::NonSaturating).unwrap();
        assert!((g.value(ns).item() - 2f64.ln()).abs() < 1e-12);

        let (mut g, v) = scalar_graph(&[&[1.0 - 1e-12, 1.0 - 1e-12]]);
        let ns = loss_g(&mut g, v[0], None, 0.0, GMode::NonSaturating).unwrap();
        assert!(g.value(ns).item() < 1e-11);
    }

    fn tiny_model(rng: &mut Rng) -> GanModel {
        let mut lc = LatentConfig::new(2, 3, 2);
        lc.attention_hidden = 4;
        let latent = LatentPipeline::new(lc, rng).unwrap();
        let cfg = ModelConfig {
            data_dim: 3,
            num_classes: 2,
            hidden: 4,
            dropout: 0.3,
            objective: Objective::TGan,
        };
        GanModel::new(cfg, latent, rng)
    }

    #[test]
    fn generator_output_range_and_zero_final_layer() {
        let mut rng = Rng::new(4);
        let mut m = tiny_model(&mut rng);
        let out = m.sample(&[0, 1, 1, 0, 1], &mut rng).unwrap();
        assert_eq!(out.shape(), &[5, 3]);
        assert!(out.data().iter().all(|v| v.abs() < 1.0));

        let last = m.generator.layers.last_mut().unwrap();
        last.weight = Tensor::zeros(last.weight.shape().to_vec());
        let out = m.sample(&[0, 1], &mut rng).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_is_deterministic_and_handles_empty() {
        let mut rng = Rng::new(4);
        let m = tiny_model(&mut rng);
        let a = m.sample(&[0, 1, 0], &mut Rng::new(9)).unwrap();
        let b = m.sample(&[0, 1, 0], &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.sample(&[], &mut Rng::new(9)).unwrap().shape(), &[0, 3]);
    }

    #[test]
    fn zero_discriminator_scores_half() {
        let mut rng = Rng::new(6);
        let mut m = tiny_model(&mut rng);
        for p in m.discriminator.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let dv = bind(&mut g, &m.discriminator, false).unwrap();
        let x = g.constant(Tensor::full([2, 3], 0.3)).unwrap();
        let (s, p) = m.discriminator.forward(&mut g, &dv, x, None).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 0.5));
        for row in g.value(p).data().chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trunk_perturbation_moves_both_heads() {
        let mut rng = Rng::new(8);
        let m = tiny_model(&mut rng);
        let x = Tensor::new([2, 3], vec![0.2, -0.5, 0.9, 0.1, 0.4, -0.3]).unwrap();
        let heads = |d: &Discriminator| {
            let mut g = Graph::new();
            let dv = bind(&mut g, d, false).unwrap();
            let xv = g.constant(x.clone()).unwrap();
            let (s, p) = d.forward(&mut g, &dv, xv, None).unwrap();
            (g.value(s).clone(), g.value(p).clone())
        };
        let (s0, p0) = heads(&m.discriminator);
        let mut d = m.discriminator.clone();
        d.trunk[1].weight.data_mut()[0] += 0.5;
        d.trunk[1].weight.data_mut()[5] -= 0.5;
        let (s1, p1) = heads(&d);
        assert_ne!(s0, s1);
        assert_ne!(p0, p1);
    }

    fn trainer(lr: f64, seed: u64) -> (Trainer, Tensor, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let m = tiny_model(&mut rng);
        let cfg = TrainConfig {
            batch: 4,
            alpha: 1.0,
            g_mode: GMode::NonSaturating,
            d_steps: 1,
            seed,
        };
        let kind = OptimizerKind::adam(0.5, 0.999);
        let t = Trainer::new(m, cfg, Optimizer::new(lr, kind), Optimizer::new(lr, kind));
        let real = Tensor::new([4, 3], (0..12).map(|i| ((i as f64) * 0.7).sin() * 0.8).collect()).unwrap();
        (t, real, vec![0, 1, 1, 0])
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (mut t, real, labels) = trainer(0.0, 3);
        let before = t.model.clone();
        let r1 = t.step(&real, &labels).unwrap();
        assert_eq!(t.model, before);
        let (mut t2, _, _) = trainer(0.0, 3);
        let r2 = t2.step(&real, &labels).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn step_is_deterministic() {
        let (mut a, real, labels) = trainer(1e-3, 5);
        let (mut b, _, _) = trainer(1e-3, 5);
        for _ in 0..3 {
            assert_eq!(a.step(&real, &labels).unwrap(), b.step(&real, &labels).unwrap());
        }
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn players_only_touch_their_own_parameters() {
        let (mut t, real, labels) = trainer(1e-2, 7);
        let latent0 = params_digest(t.model.latent.named_params());
        let gen0 = params_digest(t.model.generator.named_params());
        let disc0 = params_digest(t.model.discriminator.named_params());
        let mut rng = Rng::new(1);
        t.d_phase(&real, &labels, &mut rng).unwrap();
        assert_eq!(params_digest(t.model.latent.named_params()), latent0);
        assert_eq!(params_digest(t.model.generator.named_params()), gen0);
        let disc1 = params_digest(t.model.discriminator.named_params());
        assert_ne!(disc1, disc0);
        t.g_phase(4, &mut rng).unwrap();
        assert_eq!(params_digest(t.model.discriminator.named_params()), disc1);
        assert_ne!(params_digest(t.model.generator.named_params()), gen0);
        assert_ne!(params_digest(t.model.latent.named_params()), latent0);
    }

    #[test]
    fn bad_batches_rejected() {
        let (mut t, real, _) = trainer(1e-3, 1);
        assert!(matches!(t.step(&real, &[0, 1]), Err(GanError::Batch { .. })));
        assert!(matches!(t.step(&real, &[0, 1, 2, 0]), Err(GanError::Label { label: 2, .. })));
    }

    #[test]
    fn vanilla_generator_ignores_labels() {
        let mut rng = Rng::new(2);
        let mut lc = LatentConfig::new(2, 3, 2);
        lc.kind = LatentKind::SingleGaussian;
        let latent = LatentPipeline::new(lc, &mut rng).unwrap();
        let cfg = ModelConfig {
            data_dim: 3,
            num_classes: 2,
            hidden: 4,
            dropout: 0.0,
            objective: Objective::Vanilla,
        };
        let m = GanModel::new(cfg, latent, &mut rng);
        assert_eq!(m.generator.input_dim(), 3);
        let a = m.sample(&[0, 0], &mut Rng::new(5)).unwrap();
        let b = m.sample(&[1, 1], &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }
}
