//! Central finite-difference verification of reverse-mode gradients.

use super::{Graph, Tensor, Var};
use crate::error::{GenexError, Result};

/// Elementwise disagreement that exceeded `atol + rtol·|numeric|`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub param: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a−n| / max(|a|,|n|)` over elements whose magnitude exceeds `atol`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub mismatches: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Evaluates `f` once on a fresh graph and returns the value and the gradient
/// of every parameter.
pub fn analytic_grads<F>(f: &mut F, params: &[Tensor<f64>]) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| g.leaf(&p.clone().with_grad()))
        .collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let grads = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();
    Ok((g.value(out)[0], grads))
}

fn eval<F>(f: &mut F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p)).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out)[0])
}

/// Compares supplied analytic gradients against central differences
/// `(f(θ+h) − f(θ−h)) / 2h`.
pub fn compare_with_finite_diff<F>(
    f: &mut F,
    params: &[Tensor<f64>],
    analytic: &[Vec<f64>],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let all: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.numel()).map(move |e| (pi, e)))
        .collect();
    compare_elements(f, params, analytic, &all, h, rtol, atol)
}

/// Like [`compare_with_finite_diff`] but only at the given
/// `(parameter, element)` positions.
pub fn compare_elements<F>(
    f: &mut F,
    params: &[Tensor<f64>],
    analytic: &[Vec<f64>],
    positions: &[(usize, usize)],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut probe: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        mismatches: Vec::new(),
    };
    for &(pi, e) in positions {
        if pi >= probe.len() || e >= probe[pi].numel() {
            return Err(GenexError::Index {
                what: "gradient check position",
                index: e,
                size: probe.get(pi).map_or(0, Tensor::numel),
            });
        }
        let orig = probe[pi].data()[e];
        probe[pi].data_mut()[e] = orig + h;
        let plus = eval(f, &probe)?;
        probe[pi].data_mut()[e] = orig - h;
        let minus = eval(f, &probe)?;
        probe[pi].data_mut()[e] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[pi][e];
        let abs = (a - numeric).abs();
        report.checked += 1;
        let ok = numeric.is_finite() && a.is_finite() && abs <= atol + rtol * numeric.abs();
        if abs.is_finite() {
            report.max_abs_error = report.max_abs_error.max(abs);
            let mag = a.abs().max(numeric.abs());
            if mag > atol {
                report.max_rel_error = report.max_rel_error.max(abs / mag);
            }
        }
        if !ok {
            report.mismatches.push(GradMismatch {
                param: pi,
                element: e,
                analytic: a,
                numeric,
            });
        }
    }
    Ok(report)
}

/// Full check: backward-pass gradients of `f` at `params` against central
/// differences with step `h`.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[Tensor<f64>],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = analytic_grads(&mut f, params)?;
    compare_with_finite_diff(&mut f, params, &analytic, h, rtol, atol)
}
