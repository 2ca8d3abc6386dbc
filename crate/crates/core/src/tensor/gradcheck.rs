//! Central finite-difference oracle for reverse-mode gradients.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub op_name: String,
    pub max_rel_error: f64,
    /// Flat index over all inputs laid end to end.
    pub worst_index: usize,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Check every element of every input.
pub fn grad_check<F>(op_name: &str, f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let all: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    grad_check_at(op_name, f, inputs, eps, &all)
}

/// Check only the listed element indices of each input.
pub fn grad_check_at<F>(
    op_name: &str,
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    indices: &[Vec<usize>],
) -> Result<GradReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    if indices.len() != inputs.len() {
        return Err(Error::Input(format!(
            "{} index lists for {} inputs",
            indices.len(),
            inputs.len()
        )));
    }
    let eval = |values: &[Tensor<f64>], track: bool| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let graph = Graph::with_finite_checks(true);
        let vars: Vec<Var> = values.iter().map(|t| graph.leaf(t.clone(), track)).collect();
        let out = f(&graph, &vars)?;
        if graph.value(out).len() != 1 {
            return Err(Error::Input(format!(
                "gradient check of {op_name} needs a scalar function, got {:?}",
                graph.shape(out)
            )));
        }
        Ok((graph, vars, out))
    };

    let (graph, vars, out) = eval(inputs, true)?;
    let grads = graph.backward(out)?;
    let scalar = |values: &[Tensor<f64>]| -> Result<f64> {
        let (g, _, o) = eval(values, false)?;
        let v = g.value(o).data()[0];
        Ok(v)
    };

    let mut report = GradReport {
        op_name: op_name.to_string(),
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    let mut offset = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]);
        for &j in &indices[i] {
            if j >= input.len() {
                return Err(Error::Input(format!(
                    "index {j} outside input {i} of length {}",
                    input.len()
                )));
            }
            let original = input.data()[j];
            work[i].data_mut()[j] = original + eps;
            let plus = scalar(&work)?;
            work[i].data_mut()[j] = original - eps;
            let minus = scalar(&work)?;
            work[i].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::Numeric {
                    op: op_name.to_string(),
                    detail: format!("finite difference at input {i}[{j}] is {numeric}"),
                });
            }
            let a = analytic.map_or(0.0, |g| g.data()[j]);
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = err;
                report.worst_index = offset + j;
            }
            report.checked += 1;
        }
        offset += input.len();
    }
    Ok(report)
}
