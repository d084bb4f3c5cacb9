//! Central finite-difference oracle for graph gradients.
//!
//! Numerical derivatives are computed from forward values only, so the
//! check stays independent of the backward rules it audits.

use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over all input entries of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// `(input, flat index)` where the maximum was attained.
    pub worst: (usize, usize),
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Compares backprop gradients of the scalar `f(inputs)` against central
/// differences with the given step.
pub fn check_gradients<F, E>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.param(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut work = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut max_rel_error = 0.0;
    let mut worst = (0, 0);
    for i in 0..inputs.len() {
        let mut num = Tensor::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let d = (plus - minus) / (2.0 * step);
            num.data_mut()[j] = d;
            let err = (analytic[i].data()[j] - d).abs() / d.abs().max(1.0);
            if err > max_rel_error {
                max_rel_error = err;
                worst = (i, j);
            }
        }
        numeric.push(num);
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        analytic,
        numeric,
    })
}
