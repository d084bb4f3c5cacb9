//! Dense layers and the parameter-binding convention shared by every network.
//!
//! A network owns plain [`Tensor`] parameters. For each forward pass they are
//! bound into a fresh [`Graph`] as leaves (in [`Module::named_params`] order),
//! and after `backward` the gradients are read back in the same order.

use crate::rng::Rng;
use crate::tensor::{Activation, Graph, Result, Tensor, Var};

pub trait Module {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Inserts every parameter of `module` into `g`. With `trainable == false`
/// the leaves are constants and receive no gradient.
pub fn bind<M: Module + ?Sized>(g: &mut Graph, module: &M, trainable: bool) -> Result<Vec<Var>> {
    module
        .named_params()
        .into_iter()
        .map(|(_, t)| g.leaf(t.clone(), trainable))
        .collect()
}

/// Gradients of `vars`, zero-filled where a leaf was not reached.
pub fn collect_grads(g: &Graph, vars: &[Var]) -> Vec<Tensor> {
    vars.iter()
        .map(|&v| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(g.shape(v).to_vec()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Dense {
            weight: Tensor::glorot(inputs, outputs, rng),
            bias: Tensor::zeros([outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// A stack of dense layers; `vars` holds `(weight, bias)` pairs in layer order.
pub fn forward_stack(g: &mut Graph, vars: &[Var], mut x: Var, acts: &[Activation]) -> Result<Var> {
    debug_assert_eq!(vars.len(), 2 * acts.len());
    for (pair, &act) in vars.chunks(2).zip(acts) {
        x = g.dense(x, pair[0], pair[1], act)?;
    }
    Ok(x)
}

pub fn stack_params<'a>(prefix: &str, layers: &'a [Dense]) -> Vec<(String, &'a Tensor)> {
    layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            [
                (format!("{prefix}.{i}.weight"), &l.weight),
                (format!("{prefix}.{i}.bias"), &l.bias),
            ]
        })
        .collect()
}

pub fn stack_params_mut(layers: &mut [Dense]) -> Vec<&mut Tensor> {
    layers
        .iter_mut()
        .flat_map(|l| [&mut l.weight, &mut l.bias])
        .collect()
}

/// Builds layers `widths[0] -> widths[1] -> ...`.
pub fn dense_stack(widths: &[usize], rng: &mut Rng) -> Vec<Dense> {
    widths.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect()
}
