//! Evaluation metrics: ring mode coverage, a proxy inception score computed
//! with a small locally trained classifier, conditional accuracy and the
//! discriminator-loss tail mean.

use sha2::{Digest, Sha256};

use crate::data::{Dataset, RingGeometry};
use crate::nn::{bind, collect_grads, dense_stack, forward_stack, stack_params, stack_params_mut, Dense, Module};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::tensor::{softmax_in_place, Activation, Graph, Tensor, TensorError};

pub const DEFAULT_THRESHOLD_SIGMA: f64 = 3.0;
pub const DEFAULT_SPLITS: usize = 10;
pub const MIN_SERIES_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("classifier is not trained")]
    Untrained,
    #[error("classifier reached {accuracy:.4} accuracy, below the {target} target")]
    BelowTarget { accuracy: f64, target: f64 },
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub modes_recovered: usize,
    pub high_quality_fraction: f64,
}

/// A sample is high quality when it lies within `threshold_sigma·std` of some
/// center; a mode counts as recovered when at least `n/(10k)` high-quality
/// samples have it as their nearest center.
pub fn mode_coverage(samples: &Tensor, centers: &[[f64; 2]], std: f64, threshold_sigma: f64) -> Coverage {
    let n = samples.shape()[0];
    if n == 0 || centers.is_empty() {
        return Coverage {
            modes_recovered: 0,
            high_quality_fraction: 0.0,
        };
    }
    let k = centers.len();
    let radius2 = (threshold_sigma * std).powi(2);
    let mut hits = vec![0usize; k];
    let mut good = 0usize;
    for r in 0..n {
        let x = samples.row(r);
        let (best, d2) = centers
            .iter()
            .enumerate()
            .map(|(j, c)| (j, (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        if d2 <= radius2 {
            good += 1;
            hits[best] += 1;
        }
    }
    let need = n as f64 / (10 * k) as f64;
    Coverage {
        modes_recovered: hits.iter().filter(|&&h| h > 0 && h as f64 >= need).count(),
        high_quality_fraction: good as f64 / n as f64,
    }
}

/// Anything that maps samples to class posteriors.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn is_trained(&self) -> bool;
    /// `[n, d]` samples to `[n, C]` rows on the simplex.
    fn predict_proba(&self, samples: &Tensor) -> Result<Tensor>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyTrainConfig {
    pub hidden: usize,
    /// Epochs run before the accuracy target may stop training.
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub target_accuracy: f64,
    pub seed: u64,
}

impl ProxyTrainConfig {
    /// Defaults for 2-D toy data (97% target).
    pub fn toy(seed: u64) -> Self {
        ProxyTrainConfig {
            hidden: 64,
            min_epochs: 60,
            max_epochs: 300,
            batch: 64,
            lr: 3e-3,
            target_accuracy: 0.97,
            seed,
        }
    }

    /// Defaults for small image data (90% target).
    pub fn images(seed: u64) -> Self {
        ProxyTrainConfig {
            target_accuracy: 0.90,
            hidden: 128,
            ..Self::toy(seed)
        }
    }
}

/// Dense network `d -> h -> h -> C` with softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyClassifier {
    pub layers: Vec<Dense>,
    pub accuracy: f64,
    trained: bool,
}

const ACTS: [Activation; 3] = [
    Activation::LeakyRelu(0.2),
    Activation::LeakyRelu(0.2),
    Activation::Identity,
];

impl Module for ProxyClassifier {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        stack_params("classifier", &self.layers)
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        stack_params_mut(&mut self.layers)
    }
}

impl ProxyClassifier {
    pub fn untrained(input: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Self {
        ProxyClassifier {
            layers: dense_stack(&[input, hidden, hidden, classes], rng),
            accuracy: 0.0,
            trained: false,
        }
    }

    /// Trains on all of `ds` with cross-entropy until the training accuracy
    /// reaches the target, or fails after `max_epochs`.
    pub fn train(ds: &Dataset, cfg: ProxyTrainConfig) -> Result<Self> {
        if ds.is_empty() {
            return Err(EvalError::Contract("cannot train a classifier on an empty dataset".into()));
        }
        let mut rng = Rng::new(cfg.seed);
        let mut clf = Self::untrained(ds.data_dim(), cfg.hidden, ds.num_classes(), &mut rng);
        let mut opt = Optimizer::new(cfg.lr, OptimizerKind::adam(0.9, 0.999));
        let mut order: Vec<usize> = (0..ds.len()).collect();
        for epoch in 0..cfg.max_epochs.max(cfg.min_epochs) {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch.max(1)) {
                let (x, y) = ds.gather(chunk);
                let mut g = Graph::new();
                let vars = bind(&mut g, &clf, true)?;
                let xv = g.constant(x)?;
                let logits = forward_stack(&mut g, &vars, xv, &ACTS)?;
                let p = g.softmax(logits)?;
                let picked = g.pick(p, &y)?;
                let lp = g.log_clamped(picked, 1e-12)?;
                let m = g.mean(lp)?;
                let loss = g.neg(m)?;
                g.backward(loss)?;
                let grads = collect_grads(&g, &vars);
                opt.step(&mut clf.params_mut(), &grads);
            }
            if epoch + 1 < cfg.min_epochs {
                continue;
            }
            clf.trained = true;
            clf.accuracy = accuracy(&clf, ds.samples(), ds.labels())?;
            if clf.accuracy >= cfg.target_accuracy {
                return Ok(clf);
            }
        }
        Err(EvalError::BelowTarget {
            accuracy: clf.accuracy,
            target: cfg.target_accuracy,
        })
    }

    /// Short SHA-256 digest of the weights.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named_params() {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }
}

impl Classifier for ProxyClassifier {
    fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    fn is_trained(&self) -> bool {
        self.trained
    }

    fn predict_proba(&self, samples: &Tensor) -> Result<Tensor> {
        if samples.shape()[0] == 0 {
            return Ok(Tensor::zeros([0, self.num_classes()]));
        }
        let mut g = Graph::new();
        let vars = bind(&mut g, self, false)?;
        let x = g.constant(samples.clone())?;
        let logits = forward_stack(&mut g, &vars, x, &ACTS)?;
        let mut out = g.value(logits).clone();
        let c = self.num_classes();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        Ok(out)
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0
}

fn accuracy<C: Classifier + ?Sized>(clf: &C, samples: &Tensor, labels: &[usize]) -> Result<f64> {
    let p = clf.predict_proba(samples)?;
    let c = clf.num_classes();
    let hits = p
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Fraction of samples whose argmax class equals the requested label.
pub fn conditional_accuracy<C: Classifier + ?Sized>(samples: &Tensor, requested: &[usize], clf: &C) -> Result<f64> {
    if requested.is_empty() || samples.shape()[0] == 0 {
        return Err(EvalError::Contract("conditional accuracy of an empty sample set".into()));
    }
    if samples.shape()[0] != requested.len() {
        return Err(EvalError::Contract(format!(
            "{} samples but {} labels",
            samples.shape()[0],
            requested.len()
        )));
    }
    if !clf.is_trained() {
        return Err(EvalError::Untrained);
    }
    accuracy(clf, samples, requested)
}

/// `exp(mean KL(p(y|x) || p(y)))` over `splits` contiguous chunks of the
/// posterior rows; returns the mean and population standard deviation.
pub fn inception_from_probs(probs: &Tensor, splits: usize) -> Result<(f64, f64)> {
    let (n, c) = probs.dims2().ok_or_else(|| EvalError::Contract("posteriors must be 2-D".into()))?;
    if splits == 0 || splits > n {
        return Err(EvalError::Contract(format!("need 1 <= splits <= {n}, got {splits}")));
    }
    let max_kl = (c as f64).ln();
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let lo = s * n / splits;
        let hi = (s + 1) * n / splits;
        let rows = &probs.data()[lo * c..hi * c];
        let m = (hi - lo) as f64;
        let mut marginal = vec![0.0; c];
        for row in rows.chunks(c) {
            for (a, &p) in marginal.iter_mut().zip(row) {
                *a += p / m;
            }
        }
        let mut kl = 0.0;
        for row in rows.chunks(c) {
            for (&p, &py) in row.iter().zip(&marginal) {
                if p > 0.0 {
                    kl += p * (p / py).ln();
                }
            }
        }
        scores.push((kl / m).clamp(0.0, max_kl).exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

pub fn proxy_inception_score<C: Classifier + ?Sized>(samples: &Tensor, clf: &C, splits: usize) -> Result<(f64, f64)> {
    if !clf.is_trained() {
        return Err(EvalError::Untrained);
    }
    inception_from_probs(&clf.predict_proba(samples)?, splits)
}

/// Mean of the last `tail_fraction` of `series` (at least one entry).
pub fn loss_equilibrium(series: &[f64], tail_fraction: f64) -> Result<f64> {
    if series.len() < MIN_SERIES_LEN {
        return Err(EvalError::Contract(format!(
            "series has {} entries, need at least {MIN_SERIES_LEN}",
            series.len()
        )));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(EvalError::Contract(format!("tail fraction {tail_fraction} outside (0, 1]")));
    }
    let k = ((series.len() as f64 * tail_fraction).round() as usize).clamp(1, series.len());
    let tail = &series[series.len() - k..];
    Ok(tail.iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub name: String,
    pub modes_recovered: Option<usize>,
    pub high_quality_fraction: Option<f64>,
    pub proxy_is_mean: f64,
    pub proxy_is_std: f64,
    pub conditional_accuracy: f64,
    pub d_loss_tail_mean: Option<f64>,
    pub classifier_digest: String,
}

pub const REPORT_HEADER: &str = "name,modes_recovered,high_quality_fraction,proxy_is_mean,proxy_is_std,conditional_accuracy,d_loss_tail_mean,classifier_digest";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.name,
            opt(self.modes_recovered),
            opt(self.high_quality_fraction),
            self.proxy_is_mean,
            self.proxy_is_std,
            self.conditional_accuracy,
            opt(self.d_loss_tail_mean),
            self.classifier_digest
        )
    }

    pub fn text_block(&self) -> String {
        let mut s = format!("[{}]\n", self.name);
        if let (Some(m), Some(h)) = (self.modes_recovered, self.high_quality_fraction) {
            s.push_str(&format!("  modes recovered        {m}\n"));
            s.push_str(&format!("  high-quality fraction  {h:.4}\n"));
        }
        s.push_str(&format!(
            "  proxy inception score  {:.4} ± {:.4}\n",
            self.proxy_is_mean, self.proxy_is_std
        ));
        s.push_str(&format!("  conditional accuracy   {:.4}\n", self.conditional_accuracy));
        if let Some(d) = self.d_loss_tail_mean {
            s.push_str(&format!("  d_loss tail mean       {d:.4}\n"));
        }
        s.push_str(&format!("  classifier digest      {}\n", self.classifier_digest));
        s
    }
}

/// Evaluates a labeled sample set: coverage when ring geometry is known,
/// proxy inception score and conditional accuracy always.
pub fn evaluate(
    name: &str,
    samples: &Tensor,
    labels: &[usize],
    ring: Option<&RingGeometry>,
    clf: &ProxyClassifier,
    splits: usize,
    d_series: Option<&[f64]>,
) -> Result<EvalReport> {
    let cov = ring.map(|g| mode_coverage(samples, &g.centers, g.std, DEFAULT_THRESHOLD_SIGMA));
    let (is_mean, is_std) = proxy_inception_score(samples, clf, splits.min(samples.shape()[0]).max(1))?;
    let acc = conditional_accuracy(samples, labels, clf)?;
    let tail = match d_series {
        Some(s) if s.len() >= MIN_SERIES_LEN => Some(loss_equilibrium(s, 0.2)?),
        _ => None,
    };
    Ok(EvalReport {
        name: name.to_string(),
        modes_recovered: cov.map(|c| c.modes_recovered),
        high_quality_fraction: cov.map(|c| c.high_quality_fraction),
        proxy_is_mean: is_mean,
        proxy_is_std: is_std,
        conditional_accuracy: acc,
        d_loss_tail_mean: tail,
        classifier_digest: clf.digest(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ring_of_gaussians, RingSpec};

    fn ring_centers(k: usize) -> Vec<[f64; 2]> {
        (0..k)
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / k as f64;
                [0.7 * a.cos(), 0.7 * a.sin()]
            })
            .collect()
    }

    fn rows(points: &[[f64; 2]]) -> Tensor {
        Tensor::new([points.len(), 2], points.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn coverage_exact_centers() {
        let c = ring_centers(8);
        let pts: Vec<[f64; 2]> = (0..40).map(|i| c[i % 8]).collect();
        let cov = mode_coverage(&rows(&pts), &c, 0.02, 3.0);
        assert_eq!(cov.modes_recovered, 8);
        assert_eq!(cov.high_quality_fraction, 1.0);
    }

    #[test]
    fn coverage_collapse() {
        let c = ring_centers(8);
        let cov = mode_coverage(&rows(&vec![c[3]; 50]), &c, 0.02, 3.0);
        assert_eq!(cov.modes_recovered, 1);
        assert_eq!(cov.high_quality_fraction, 1.0);
    }

    #[test]
    fn coverage_of_uniform_noise_matches_area_ratio() {
        let c = ring_centers(8);
        let std = 0.02;
        let mut rng = Rng::new(3);
        let n = 200_000;
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)])
            .collect();
        let cov = mode_coverage(&rows(&pts), &c, std, 3.0);
        let p = 8.0 * std::f64::consts::PI * (3.0 * std).powi(2) / 4.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((cov.high_quality_fraction - p).abs() < 4.0 * se, "{} vs {p}", cov.high_quality_fraction);
    }

    /// Classifier returning fixed rows, for metric tests.
    struct Fixed(Tensor);
    impl Classifier for Fixed {
        fn num_classes(&self) -> usize {
            self.0.shape()[1]
        }
        fn is_trained(&self) -> bool {
            true
        }
        fn predict_proba(&self, _: &Tensor) -> Result<Tensor> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn inception_examples() {
        let uni = Tensor::full([20, 4], 0.25);
        let (m, s) = inception_from_probs(&uni, 2).unwrap();
        assert!((m - 1.0).abs() < 1e-12 && s.abs() < 1e-12);

        let one = Tensor::new([6, 3], [0.0, 1.0, 0.0].repeat(6)).unwrap();
        assert!((inception_from_probs(&one, 3).unwrap().0 - 1.0).abs() < 1e-12);

        let mut data = Vec::new();
        for i in 0..40 {
            let mut r = vec![0.0; 4];
            r[i % 4] = 1.0;
            data.extend(r);
        }
        let confident = Tensor::new([40, 4], data).unwrap();
        assert!((inception_from_probs(&confident, 1).unwrap().0 - 4.0).abs() < 1e-12);
        assert!((inception_from_probs(&confident, 10).unwrap().0 - 4.0).abs() < 1e-12);
        assert!(inception_from_probs(&confident, 0).is_err());
        let f = Fixed(confident.clone());
        assert!((proxy_inception_score(&Tensor::zeros([40, 2]), &f, 10).unwrap().0 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn untrained_classifier_rejected() {
        let clf = ProxyClassifier::untrained(2, 4, 3, &mut Rng::new(1));
        assert_eq!(
            proxy_inception_score(&Tensor::zeros([5, 2]), &clf, 1),
            Err(EvalError::Untrained)
        );
    }

    #[test]
    fn conditional_accuracy_examples() {
        let mut data = Vec::new();
        for i in 0..30 {
            let mut r = vec![0.0; 3];
            r[i % 3] = 1.0;
            data.extend(r);
        }
        let f = Fixed(Tensor::new([30, 3], data).unwrap());
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        assert_eq!(conditional_accuracy(&Tensor::zeros([30, 2]), &labels, &f).unwrap(), 1.0);
        assert!(conditional_accuracy(&Tensor::zeros([0, 2]), &[], &f).is_err());
    }

    #[test]
    fn equilibrium_examples() {
        assert!((loss_equilibrium(&[1.3863; 50], 0.3).unwrap() - 1.3863).abs() < 1e-12);
        let n = 100_001;
        let ramp: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64).collect();
        assert!((loss_equilibrium(&ramp, 0.5).unwrap() - 1.5).abs() < 1e-4);
        let conv: Vec<f64> = (0..2000).map(|i| 2.0 * 2f64.ln() + (-(i as f64) / 100.0).exp()).collect();
        assert!((loss_equilibrium(&conv, 0.2).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-5);
        assert!(loss_equilibrium(&[1.0; 9], 0.5).is_err());
        assert!(loss_equilibrium(&[1.0; 10], 0.0).is_err());
        let s: Vec<f64> = (0..17).map(|i| (i as f64).sin()).collect();
        assert!((loss_equilibrium(&s, 1.0).unwrap() - s.iter().sum::<f64>() / 17.0).abs() < 1e-15);
    }

    #[test]
    fn proxy_classifier_learns_ring() {
        let ds = ring_of_gaussians(
            RingSpec {
                n: 2000,
                ..RingSpec::default()
            },
            &mut Rng::new(4),
        )
        .unwrap();
        let clf = ProxyClassifier::train(&ds, ProxyTrainConfig::toy(1)).unwrap();
        assert!(clf.accuracy >= 0.97);
        let acc = conditional_accuracy(ds.samples(), ds.labels(), &clf).unwrap();
        assert_eq!(acc, clf.accuracy);

        let (is_real, _) = proxy_inception_score(ds.samples(), &clf, 10).unwrap();
        assert!(is_real > 6.0 && is_real <= 8.0 + 1e-9, "{is_real}");

        let mut rng = Rng::new(8);
        let noise = Tensor::new([4000, 2], (0..8000).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..4000).map(|_| rng.below(8)).collect();
        let chance = conditional_accuracy(&noise, &labels, &clf).unwrap();
        assert!((chance - 0.125).abs() < 0.03, "{chance}");
        assert_eq!(clf.digest(), clf.clone().digest());
    }

    #[test]
    fn report_formats() {
        let r = EvalReport {
            name: "x".into(),
            modes_recovered: None,
            high_quality_fraction: None,
            proxy_is_mean: 1.5,
            proxy_is_std: 0.0,
            conditional_accuracy: 0.5,
            d_loss_tail_mean: Some(1.25),
            classifier_digest: "ab".into(),
        };
        assert_eq!(r.csv_row(), "x,NA,NA,1.5,0,0.5,1.25,ab");
        assert_eq!(REPORT_HEADER.split(',').count(), r.csv_row().split(',').count());
        assert!(r.text_block().contains("conditional accuracy"));
    }
}
