use std::collections::BTreeMap;

use super::{Graph, NodeId};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tolerance: f64,
    /// Check at most this many evenly spaced elements per input.
    pub max_elements: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-5,
            max_elements: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InputCheck {
    pub name: String,
    /// `max|g_analytic - g_fd| / max(max|g_fd|, 1e-8)` over the checked elements.
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|c| c.passed)
    }

    pub fn worst(&self) -> f64 {
        self.inputs
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of `seed` against central finite differences.
///
/// The error for one input is normalized by the largest finite-difference
/// magnitude of that input, so entries with vanishing gradient do not dominate.
pub fn grad_check(
    graph: &Graph<f64>,
    inputs: &BTreeMap<String, Tensor<f64>>,
    seed: NodeId,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let values = graph.forward(inputs)?;
    let analytic = graph.backward(&values, seed)?;
    let eval = |bound: &BTreeMap<String, Tensor<f64>>| -> Result<f64> {
        graph.forward(bound)?.get(seed).item()
    };

    let mut report = Vec::new();
    let mut work = inputs.clone();
    for (name, g_analytic) in &analytic {
        let n = g_analytic.len();
        let stride = match opts.max_elements {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        let mut max_diff = 0.0f64;
        let mut max_fd = 0.0f64;
        let mut checked = 0;
        for i in (0..n).step_by(stride) {
            let original = inputs[name].data()[i];
            work.get_mut(name).expect("bound input").data_mut()[i] = original + opts.step;
            let plus = eval(&work)?;
            work.get_mut(name).expect("bound input").data_mut()[i] = original - opts.step;
            let minus = eval(&work)?;
            work.get_mut(name).expect("bound input").data_mut()[i] = original;
            let fd = (plus - minus) / (2.0 * opts.step);
            max_diff = max_diff.max((g_analytic.data()[i] - fd).abs());
            max_fd = max_fd.max(fd.abs());
            checked += 1;
        }
        let max_rel_error = max_diff / max_fd.max(1e-8);
        report.push(InputCheck {
            name: name.clone(),
            max_rel_error,
            checked,
            passed: max_rel_error <= opts.tolerance,
        });
    }
    Ok(GradCheckReport { inputs: report })
}
