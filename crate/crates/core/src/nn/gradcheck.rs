//! Central-difference validation of tape gradients.

use super::graph::{Graph, Var};
use super::params::Params;
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Human-readable location of the worst entry.
    pub worst: String,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }

    fn empty(tol: f64) -> Self {
        GradCheckReport {
            checked: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst: String::new(),
            tol,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, location: impl FnOnce() -> String) {
        self.checked += 1;
        let abs = (analytic - numeric).abs();
        let rel = relative_error(analytic, numeric);
        self.max_abs_error = self.max_abs_error.max(abs);
        if rel > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = location();
        }
    }

    /// Folds another report into this one.
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.clone();
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Checks the gradient of scalar `f` with respect to every entry of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = f(&mut g, xv)?;
    let grads = g.backward(out)?;
    let analytic = grads.get(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.input(t);
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };

    let mut report = GradCheckReport::empty(tol);
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        report.record(analytic[i], numeric, || format!("x[{i}]"));
    }
    Ok(report)
}

/// Checks gradients of scalar `f` with respect to named parameters.
///
/// `f` must register parameters through [`Graph::param`]. At most
/// `max_per_param` evenly spaced entries of each tensor are probed.
pub fn grad_check_params<F>(f: F, params: &Params, eps: f64, tol: f64, max_per_param: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Params) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    let grads = g.backward(out)?;
    let analytic = g.param_grads(&grads);

    let mut report = GradCheckReport::empty(tol);
    let mut probe = params.clone();
    for (name, t) in params.iter() {
        let n = t.len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = t.data()[i];
            probe.get_mut(name).expect("same names").data_mut()[i] = orig + eps;
            let up = eval_scalar(&f, &probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig - eps;
            let down = eval_scalar(&f, &probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(name).map_or(0.0, |g| g.data()[i]);
            report.record(a, numeric, || format!("{name}[{i}]"));
        }
    }
    Ok(report)
}

fn eval_scalar<F>(f: &F, params: &Params) -> Result<f64>
where
    F: Fn(&mut Graph, &Params) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    Ok(g.value(out).item())
}
