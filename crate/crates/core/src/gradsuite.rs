//! Finite-difference audit of every differentiable operation and loss on
//! random small instances.

use crate::gan::{self, Discriminator, GMode, Generator, GanError};
use crate::gradcheck::check_gradients;
use crate::latent::{self, LatentConfig, LatentKind};
use crate::nn::{bind, Module};
use crate::rng::Rng;
use crate::tensor::{Activation, Graph, Tensor, Var};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

type Loss = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, GanError>>;

/// One case: a name and a generator of `(inputs, scalar function)`.
struct Case {
    name: &'static str,
    build: fn(&mut Rng) -> (Vec<Tensor>, Loss),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl SuiteEntry {
    pub fn pass(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn rand(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).expect("shape")
}

fn dims(rng: &mut Rng) -> (usize, usize) {
    (1 + rng.below(3), 1 + rng.below(4))
}

/// Sums `tanh` of the output so every entry gets a distinct weight.
fn reduce(g: &mut Graph, x: Var) -> Result<Var, GanError> {
    let t = g.tanh(x)?;
    let w = g.value(t).clone();
    let shape = w.shape().to_vec();
    let weights = Tensor::new(shape, (0..w.len()).map(|i| 0.5 + 0.25 * (i % 5) as f64).collect())?;
    let c = g.constant(weights)?;
    let m = g.mul(t, c)?;
    Ok(g.sum(m)?)
}

macro_rules! unary {
    ($name:literal, $lo:expr, $hi:expr, |$g:ident, $x:ident| $body:expr) => {
        Case {
            name: $name,
            build: |rng| {
                let (r, c) = dims(rng);
                let f: Loss = Box::new(|$g: &mut Graph, v: &[Var]| {
                    let $x = v[0];
                    let y = $body?;
                    reduce($g, y)
                });
                (vec![rand(rng, &[r, c], $lo, $hi)], f)
            },
        }
    };
}

macro_rules! binary {
    ($name:literal, |$g:ident, $a:ident, $b:ident| $body:expr) => {
        Case {
            name: $name,
            build: |rng| {
                let (r, c) = dims(rng);
                let f: Loss = Box::new(|$g: &mut Graph, v: &[Var]| {
                    let ($a, $b) = (v[0], v[1]);
                    let y = $body?;
                    reduce($g, y)
                });
                (vec![rand(rng, &[r, c], -2.0, 2.0), rand(rng, &[r, c], -2.0, 2.0)], f)
            },
        }
    };
}

fn tiny_disc(rng: &mut Rng, dropout: f64) -> Discriminator {
    Discriminator::new(3, 4, 2, dropout, rng)
}

fn params_of<M: Module>(m: &M) -> Vec<Tensor> {
    m.named_params().into_iter().map(|(_, t)| t.clone()).collect()
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "matmul",
            build: |rng| {
                let (m, k, n) = (1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(3));
                let f: Loss = Box::new(|g, v| {
                    let y = g.matmul(v[0], v[1])?;
                    reduce(g, y)
                });
                (vec![rand(rng, &[m, k], -1.0, 1.0), rand(rng, &[k, n], -1.0, 1.0)], f)
            },
        },
        binary!("add", |g, a, b| g.add(a, b)),
        binary!("sub", |g, a, b| g.sub(a, b)),
        binary!("mul", |g, a, b| g.mul(a, b)),
        unary!("neg", -2.0, 2.0, |g, x| g.neg(x)),
        unary!("exp", -2.0, 1.0, |g, x| g.exp(x)),
        unary!("log", 0.2, 3.0, |g, x| g.log(x)),
        unary!("log_clamped", 0.2, 3.0, |g, x| g.log_clamped(x, 1e-12)),
        unary!("leaky_relu", -2.0, 2.0, |g, x| g.leaky_relu(x, 0.2)),
        unary!("sigmoid", -3.0, 3.0, |g, x| g.sigmoid(x)),
        unary!("tanh", -2.0, 2.0, |g, x| g.tanh(x)),
        unary!("softplus", -3.0, 3.0, |g, x| g.softplus(x)),
        unary!("affine", -2.0, 2.0, |g, x| g.affine(x, -1.7, 0.4)),
        unary!("softmax", -2.0, 2.0, |g, x| g.softmax(x)),
        unary!("reshape", -2.0, 2.0, |g, x| {
            let n = g.value(x).len();
            g.reshape(x, [n])
        }),
        Case {
            name: "sum",
            build: |rng| {
                let (r, c) = dims(rng);
                let f: Loss = Box::new(|g, v| {
                    let s = g.mul(v[0], v[0])?;
                    Ok(g.sum(s)?)
                });
                (vec![rand(rng, &[r, c], -2.0, 2.0)], f)
            },
        },
        Case {
            name: "mean",
            build: |rng| {
                let (r, c) = dims(rng);
                let f: Loss = Box::new(|g, v| {
                    let s = g.exp(v[0])?;
                    Ok(g.mean(s)?)
                });
                (vec![rand(rng, &[r, c], -2.0, 1.0)], f)
            },
        },
        Case {
            name: "add_bias",
            build: |rng| {
                let (r, c) = dims(rng);
                let f: Loss = Box::new(|g, v| {
                    let y = g.add_bias(v[0], v[1])?;
                    reduce(g, y)
                });
                (vec![rand(rng, &[r, c], -2.0, 2.0), rand(rng, &[c], -1.0, 1.0)], f)
            },
        },
        Case {
            name: "concat_cols",
            build: |rng| {
                let (r, c) = dims(rng);
                let c2 = 1 + rng.below(3);
                let f: Loss = Box::new(|g, v| {
                    let y = g.concat_cols(v[0], v[1])?;
                    reduce(g, y)
                });
                (vec![rand(rng, &[r, c], -2.0, 2.0), rand(rng, &[r, c2], -2.0, 2.0)], f)
            },
        },
        Case {
            name: "repeat_batch",
            build: |rng| {
                let (r, c) = dims(rng);
                let f: Loss = Box::new(|g, v| {
                    let y = g.repeat_batch(v[0], 3)?;
                    reduce(g, y)
                });
                (vec![rand(rng, &[r, c], -2.0, 2.0)], f)
            },
        },
        Case {
            name: "mixture_sum",
            build: |rng| {
                let (b, n, p) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
                let f: Loss = Box::new(|g, v| {
                    let y = g.mixture_sum(v[0], v[1])?;
                    reduce(g, y)
                });
                (vec![rand(rng, &[b, n, p], -2.0, 2.0), rand(rng, &[b, n], 0.0, 1.0)], f)
            },
        },
        Case {
            name: "pick",
            build: |rng| {
                let (r, c) = dims(rng);
                let idx: Vec<usize> = (0..r).map(|_| rng.below(c)).collect();
                let f: Loss = Box::new(move |g, v| {
                    let y = g.pick(v[0], &idx)?;
                    reduce(g, y)
                });
                (vec![rand(rng, &[r, c], -2.0, 2.0)], f)
            },
        },
        Case {
            name: "dropout",
            build: |rng| {
                let (r, c) = dims(rng);
                let seed = rng.next_u64();
                let f: Loss = Box::new(move |g, v| {
                    let y = g.dropout(v[0], 0.4, &mut Rng::new(seed))?;
                    reduce(g, y)
                });
                (vec![rand(rng, &[r, c], -2.0, 2.0)], f)
            },
        },
        Case {
            name: "dense",
            build: |rng| {
                let (b, i, o) = (1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4));
                let act = [
                    Activation::Identity,
                    Activation::LeakyRelu(0.2),
                    Activation::Sigmoid,
                    Activation::Tanh,
                ][rng.below(4)];
                let f: Loss = Box::new(move |g, v| {
                    let y = g.dense(v[0], v[1], v[2], act)?;
                    reduce(g, y)
                });
                let x = rand(rng, &[b, i], -1.0, 1.0);
                let w = rand(rng, &[i, o], -1.0, 1.0);
                (vec![x, w, rand(rng, &[o], -0.5, 0.5)], f)
            },
        },
        Case {
            name: "draw_components",
            build: |rng| {
                let (b, n, p) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
                let mut cfg = LatentConfig::new(n, p, 1);
                cfg.nu = 3.0;
                let noise = latent::draw_noise(LatentKind::TMixture, &cfg, b, rng).expect("noise");
                let f: Loss = Box::new(move |g, v| {
                    let y = latent::draw_components(g, v[0], v[1], noise.clone())?;
                    reduce(g, y)
                });
                (vec![rand(rng, &[n, p], -1.0, 1.0), rand(rng, &[n, p], -2.0, 1.0)], f)
            },
        },
        Case {
            name: "attention_weights",
            build: |rng| {
                let (b, n, p, h) = (1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(2), 3);
                let f: Loss = Box::new(|g, v| {
                    let y = latent::attention_weights(g, &v[1..5], v[0])?;
                    reduce(g, y)
                });
                let comps = rand(rng, &[b, n, p], -1.0, 1.0);
                let w1 = rand(rng, &[n * p, h], -1.0, 1.0);
                let b1 = rand(rng, &[h], -0.5, 0.5);
                let w2 = rand(rng, &[h, n], -1.0, 1.0);
                (vec![comps, w1, b1, w2, rand(rng, &[n], -0.5, 0.5)], f)
            },
        },
        Case {
            name: "compose_noise",
            build: |rng| {
                let (b, n, p) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
                let f: Loss = Box::new(|g, v| {
                    let pi = g.softmax(v[1])?;
                    let y = latent::compose_noise(g, v[0], pi)?;
                    reduce(g, y)
                });
                (vec![rand(rng, &[b, n, p], -2.0, 2.0), rand(rng, &[b, n], -1.0, 1.0)], f)
            },
        },
        Case {
            name: "concat_condition",
            build: |rng| {
                let (b, p, c) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4));
                let labels: Vec<usize> = (0..b).map(|_| rng.below(c)).collect();
                let f: Loss = Box::new(move |g, v| {
                    let y = latent::concat_condition(g, v[0], &labels, c)?;
                    reduce(g, y)
                });
                (vec![rand(rng, &[b, p], -2.0, 2.0)], f)
            },
        },
        Case {
            name: "latent_pipeline",
            build: |rng| {
                let (n, p) = (1 + rng.below(3), 1 + rng.below(3));
                let mut cfg = LatentConfig::new(n, p, 2);
                cfg.attention_hidden = 3;
                cfg.sigma_reg = 0.5;
                let pipe = latent::LatentPipeline::new(cfg, rng).expect("config");
                let seed = rng.next_u64();
                let inputs = params_of(&pipe);
                let f: Loss = Box::new(move |g, v| {
                    let d = pipe.draw(g, v, 2, &mut Rng::new(seed))?;
                    let y = reduce(g, d.z)?;
                    let pen = pipe.sigma_penalty(g, v)?.expect("enabled");
                    Ok(g.add(y, pen)?)
                });
                (inputs, f)
            },
        },
        Case {
            name: "loss_classifier",
            build: |rng| {
                let (b, c) = (1 + rng.below(3), 2 + rng.below(3));
                let yr: Vec<usize> = (0..b).map(|_| rng.below(c)).collect();
                let yf: Vec<usize> = (0..b).map(|_| rng.below(c)).collect();
                let f: Loss = Box::new(move |g, v| {
                    let pr = g.softmax(v[0])?;
                    let pf = g.softmax(v[1])?;
                    gan::loss_classifier(g, pr, &yr, pf, &yf)
                });
                (vec![rand(rng, &[b, c], -2.0, 2.0), rand(rng, &[b, c], -2.0, 2.0)], f)
            },
        },
        Case {
            name: "loss_d",
            build: |rng| {
                let (b, c) = (1 + rng.below(3), 2 + rng.below(3));
                let alpha = rng.uniform_range(0.0, 2.0);
                let y: Vec<usize> = (0..b).map(|_| rng.below(c)).collect();
                let f: Loss = Box::new(move |g, v| {
                    let sr = g.sigmoid(v[0])?;
                    let sf = g.sigmoid(v[1])?;
                    let p = g.softmax(v[2])?;
                    let lc = gan::loss_classifier(g, p, &y, p, &y)?;
                    Ok(gan::loss_d(g, sr, sf, Some(lc), alpha)?.0)
                });
                let inputs = vec![
                    rand(rng, &[b, 1], -2.0, 2.0),
                    rand(rng, &[b, 1], -2.0, 2.0),
                    rand(rng, &[b, c], -2.0, 2.0),
                ];
                (inputs, f)
            },
        },
        Case {
            name: "loss_g_saturating",
            build: |rng| g_case(rng, GMode::Saturating),
        },
        Case {
            name: "loss_g_nonsaturating",
            build: |rng| g_case(rng, GMode::NonSaturating),
        },
        Case {
            name: "discriminator_objective",
            build: |rng| {
                let disc = tiny_disc(rng, 0.0);
                let real = rand(rng, &[2, 3], -1.0, 1.0);
                let fake = rand(rng, &[2, 3], -1.0, 1.0);
                let inputs = params_of(&disc);
                let f: Loss = Box::new(move |g, v| {
                    let xr = g.constant(real.clone())?;
                    let xf = g.constant(fake.clone())?;
                    let (sr, pr) = disc.forward(g, v, xr, None)?;
                    let (sf, pf) = disc.forward(g, v, xf, None)?;
                    let lc = gan::loss_classifier(g, pr, &[0, 1], pf, &[1, 1])?;
                    Ok(gan::loss_d(g, sr, sf, Some(lc), 1.0)?.0)
                });
                (inputs, f)
            },
        },
        Case {
            name: "generator_objective",
            build: |rng| {
                let disc = tiny_disc(rng, 0.3);
                let gen = Generator::new(2 + 2, 4, 3, rng);
                let mut inputs = params_of(&gen);
                let split = inputs.len();
                inputs.push(rand(rng, &[2, 2], -1.0, 1.0));
                let f: Loss = Box::new(move |g, v| {
                    let dv = bind(g, &disc, false)?;
                    let z = latent::concat_condition(g, v[split], &[1, 0], 2)?;
                    let x = gen.forward(g, &v[..split], z)?;
                    let (s, p) = disc.forward(g, &dv, x, Some(&mut Rng::new(3)))?;
                    let lc = gan::class_nll(g, p, &[1, 0])?;
                    gan::loss_g(g, s, Some(lc), 1.0, GMode::NonSaturating)
                });
                (inputs, f)
            },
        },
    ]
}

fn g_case(rng: &mut Rng, mode: GMode) -> (Vec<Tensor>, Loss) {
    let (b, c) = (1 + rng.below(3), 2 + rng.below(3));
    let alpha = rng.uniform_range(0.0, 2.0);
    let y: Vec<usize> = (0..b).map(|_| rng.below(c)).collect();
    let f: Loss = Box::new(move |g, v| {
        let s = g.sigmoid(v[0])?;
        let p = g.softmax(v[1])?;
        let lc = gan::class_nll(g, p, &y)?;
        gan::loss_g(g, s, Some(lc), alpha, mode)
    });
    (vec![rand(rng, &[b, 1], -2.0, 2.0), rand(rng, &[b, c], -2.0, 2.0)], f)
}

/// Names of every case, in run order.
pub fn case_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

/// Runs every case on `instances` random instances drawn from `seed`.
pub fn run(instances: usize, seed: u64) -> Result<Vec<SuiteEntry>, GanError> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    for case in cases() {
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let (inputs, f) = (case.build)(&mut rng);
            let report = check_gradients(&inputs, STEP, |g, v| f(g, v))?;
            worst = worst.max(report.max_rel_error);
        }
        out.push(SuiteEntry {
            name: case.name,
            instances,
            max_rel_error: worst,
        });
    }
    Ok(out)
}
