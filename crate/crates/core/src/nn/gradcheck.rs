//! Central finite-difference gradient checking.

use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::tensor::{ParamId, ParameterStore};
use crate::error::Result;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Coordinates sampled per parameter; `None` checks all of them.
    pub per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, tolerance: 1e-4, floor: 1e-6, per_param: Some(8), seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct WorstCoordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<WorstCoordinate>,
    pub passed: bool,
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares backprop gradients of `loss_fn` against central differences.
/// `store` is perturbed in place and restored before returning.
pub fn grad_check<F>(
    store: &mut ParameterStore,
    loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };
    let eval = |store: &ParameterStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        Ok(g.scalar(loss))
    };
    let mut rng = stream(opts.seed, Stream::Shuffle);
    let ids: Vec<ParamId> = store.ids().collect();
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None, passed: true };
    for id in ids {
        let n = store.get(id).numel();
        let coords: Vec<usize> = match opts.per_param {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let grad = analytic.get(id);
        for k in coords {
            let orig = store.get(id).data[k];
            store.get_mut(id).data[k] = orig + opts.epsilon;
            let plus = eval(store)?;
            store.get_mut(id).data[k] = orig - opts.epsilon;
            let minus = eval(store)?;
            store.get_mut(id).data[k] = orig;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = grad.map_or(0.0, |g| g[k]);
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(WorstCoordinate {
                    param: store.name(id).to_string(),
                    index: k,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    report.passed = report.max_rel_error <= opts.tolerance;
    Ok(report)
}
