//! Central finite-difference check of analytic gradients.

use super::params::{Gradients, ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::NnError;

/// A scalar function of a parameter store together with its claimed gradient.
pub trait Objective {
    fn loss(&self, params: &ParamStore<f64>) -> f64;
    fn gradient(&self, params: &ParamStore<f64>) -> Gradients<f64>;
}

/// Wraps a closure that records a forward pass on an inference-mode tape
/// (dropout disabled) and returns the scalar loss node.
pub struct TapeObjective<F>(pub F);

impl<F> Objective for TapeObjective<F>
where
    F: for<'a> Fn(&mut Tape<'a, f64>) -> Result<NodeId, NnError>,
{
    fn loss(&self, params: &ParamStore<f64>) -> f64 {
        let mut tape = Tape::new(params);
        let loss = (self.0)(&mut tape).expect("forward pass");
        tape.value(loss).item()
    }

    fn gradient(&self, params: &ParamStore<f64>) -> Gradients<f64> {
        let mut tape = Tape::new(params);
        let loss = (self.0)(&mut tape).expect("forward pass");
        tape.gradients(loss).expect("backward pass")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// parameter name and flat element index of the worst element
    pub worst: Option<(String, usize)>,
    pub elements_checked: usize,
}

/// Compares every analytic partial derivative with
/// `(loss(θ+eps) - loss(θ-eps)) / (2 eps)` and reports the maximum of
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(
    objective: &impl Objective,
    params: &mut ParamStore<f64>,
    eps: f64,
) -> GradCheckReport {
    let analytic = objective.gradient(params);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        elements_checked: 0,
    };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + eps;
            let up = objective.loss(params);
            params.get_mut(id).data_mut()[k] = orig - eps;
            let down = objective.loss(params);
            params.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(id).data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.elements_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    report
}
