//! Central finite-difference check of analytic gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Check at most this many coordinates per input (evenly strided).
    pub max_coords_per_input: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            max_coords_per_input: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coords_checked: usize,
    pub pass: bool,
}

/// Relative error with the `max(|a|, |n|, 1e-8)` denominator.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks the gradient of the scalar produced by `op` with respect to every
/// input. `op` receives the inputs as leaves `vars[i]`.
pub fn grad_check<F>(inputs: &[Tensor], op: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    run(inputs, 0, &|g, vars| op(g, vars), opts)
}

/// Like [`grad_check`] but the first inputs are the store's parameters, so
/// `op` may address them through [`Graph::param`]. `vars` covers the
/// parameters followed by `extra`.
pub fn grad_check_params<F>(
    store: &ParamStore,
    extra: &[Tensor],
    op: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut inputs: Vec<Tensor> = store.tensors().to_vec();
    inputs.extend_from_slice(extra);
    run(&inputs, store.len(), &|g, vars| op(g, vars), opts)
}

type DynOp<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

fn build(inputs: &[Tensor], n_params: usize, grad: bool) -> (Graph, Vec<Var>) {
    let mut store = ParamStore::new();
    for (i, t) in inputs.iter().take(n_params).enumerate() {
        store.register(format!("p{i}"), t.clone());
    }
    let mut g = Graph::from_params(&store, grad);
    let mut vars: Vec<Var> = store.ids().map(|id| g.param(id)).collect();
    for t in &inputs[n_params..] {
        vars.push(g.leaf(t.clone()));
    }
    (g, vars)
}

fn eval(inputs: &[Tensor], n_params: usize, op: &DynOp) -> Result<f64> {
    let (mut g, vars) = build(inputs, n_params, false);
    let out = op(&mut g, &vars)?;
    scalar_of(&g, out)
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::Shape(format!(
            "gradient check needs a scalar output, got {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

fn run(inputs: &[Tensor], n_params: usize, op: &DynOp, opts: GradCheckOptions) -> Result<GradCheckReport> {
    for t in inputs {
        t.ensure_finite("gradient check input")?;
    }
    let (mut g, vars) = build(inputs, n_params, true);
    let out = op(&mut g, &vars)?;
    let base = scalar_of(&g, out)?;
    let grads = g.backward(out);
    let again = eval(inputs, n_params, op)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "two evaluations gave {base} and {again}"
        )));
    }

    let eps = opts.epsilon;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coords_checked: 0,
        pass: true,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ii, &v) in vars.iter().enumerate() {
        let n = inputs[ii].numel();
        let analytic = grads.get_or_zero(v, n);
        let stride = match opts.max_coords_per_input {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for j in (0..n).step_by(stride) {
            let x0 = inputs[ii].data()[j];
            work[ii].data_mut()[j] = x0 + eps;
            let fp = eval(&work, n_params, op)?;
            work[ii].data_mut()[j] = x0 - eps;
            let fm = eval(&work, n_params, op)?;
            work[ii].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * eps);
            let err = rel_error(analytic[j], numeric);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((ii, j));
                report.analytic_at_worst = analytic[j];
                report.numeric_at_worst = numeric;
            }
        }
    }
    report.pass = report.max_rel_error < opts.tolerance;
    Ok(report)
}

impl Graph {
    /// Identity in the forward pass; multiplies the gradient by `factor` in
    /// the backward pass. Negative control for the gradient checker.
    pub fn corrupt_gradient(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).clone();
        self.push_op(v, &[a], move |g| vec![g.iter().map(|x| x * factor).collect()])
    }
}
