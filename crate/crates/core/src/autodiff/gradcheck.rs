use crate::Scalar;

use super::{NodeId, Result, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport<T> {
    pub max_rel_error: T,
    /// `(parameter, element)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: T,
    pub numeric_at_worst: T,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(p+eps) - f(p-eps)) / (2 eps)` on every coordinate of `params`.
///
/// `f` records a scalar on the tape given one parameter leaf per tensor and
/// must be deterministic. The relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], eps: T) -> Result<GradCheckReport<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[NodeId]) -> Result<NodeId>,
{
    let evaluate = |ps: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &ids)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &ids)?;
    let grads = tape.backward(out)?;

    let floor = T::lit(1e-8);
    let two_eps = eps + eps;
    let mut report = GradCheckReport {
        max_rel_error: T::zero(),
        worst: None,
        analytic_at_worst: T::zero(),
        numeric_at_worst: T::zero(),
        coordinates: 0,
    };
    let mut work: Vec<Tensor<T>> = params.to_vec();
    for (pi, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id);
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let plus = evaluate(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let minus = evaluate(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / two_eps;
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((pi, j));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
