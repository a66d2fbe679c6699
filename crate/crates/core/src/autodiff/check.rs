//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward pass, so it is an
//! independent oracle for the tape's backward rules.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    /// Absolute slack for entries whose true gradient is (numerically) zero.
    pub abs_tol: f64,
    /// Coordinates checked per array; larger arrays are subsampled.
    pub max_coords_per_array: usize,
    pub seed: u64,
    /// Multiple of `ε · max(1, |loss|) / step` added to the absolute
    /// slack: the cancellation error of the difference quotient itself.
    pub roundoff: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            rel_tol: 1e-4,
            abs_tol: 1e-8,
            max_coords_per_array: usize::MAX,
            seed: 0,
            roundoff: 100.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ArrayCheck {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    pub max_abs_error: f64,
    /// Worst `|a - n| / max(|a|, |n|)` over coordinates that failed the
    /// combined tolerance (0 when none failed).
    pub worst_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub arrays: Vec<ArrayCheck>,
    /// Minimum kink margin seen over all forward evaluations.
    pub kink_margin: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.arrays.iter().all(|a| a.failures == 0)
    }

    pub fn failures(&self) -> Vec<&ArrayCheck> {
        self.arrays.iter().filter(|a| a.failures > 0).collect()
    }
}

/// Compares backprop gradients of `loss` against central differences for
/// the arrays in `ids` (all arrays when empty).
pub fn check_gradients<F>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    loss: F,
    opts: &GradCheckOptions,
) -> GradCheckReport
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var,
{
    let ids: Vec<ParamId> = if ids.is_empty() {
        store.ids().collect()
    } else {
        ids.to_vec()
    };

    let mut graph = Graph::new();
    let out = loss(&mut graph, store);
    let mut kink_margin = graph.kink_margin();
    let grads = graph.backward(out).param_grads();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let eval = |work: &ParamStore<f64>, margin: &mut f64| {
        let mut g = Graph::new();
        let v = loss(&mut g, work);
        *margin = margin.min(g.kink_margin());
        g.scalar(v)
    };

    let mut arrays = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).len();
        let coords: Vec<usize> = if n <= opts.max_coords_per_array {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords_per_array).into_vec();
            c.sort_unstable();
            c
        };
        let analytic = grads.get(id);
        let mut check = ArrayCheck {
            name: store.name(id).to_string(),
            checked: coords.len(),
            failures: 0,
            max_abs_error: 0.0,
            worst_rel_error: 0.0,
        };
        for k in coords {
            let original = store.get(id).as_slice()[k];
            work.get_mut(id).as_mut_slice()[k] = original + opts.step;
            let plus = eval(&work, &mut kink_margin);
            work.get_mut(id).as_mut_slice()[k] = original - opts.step;
            let minus = eval(&work, &mut kink_margin);
            work.get_mut(id).as_mut_slice()[k] = original;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.map_or(0.0, |g| g.as_slice()[k]);
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            check.max_abs_error = check.max_abs_error.max(err);
            let noise = opts.roundoff * f64::EPSILON * plus.abs().max(minus.abs()).max(1.0) / opts.step;
            if err > opts.rel_tol * scale + opts.abs_tol + noise {
                check.failures += 1;
                check.worst_rel_error = check.worst_rel_error.max(err / scale.max(f64::MIN_POSITIVE));
            }
        }
        arrays.push(check);
    }
    GradCheckReport { arrays, kink_margin }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[test]
    fn detects_a_wrong_gradient() {
        // d/dx sum(x^2) is 2x; the tape is right, so this passes.
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::from_f64(1, 3, &[0.3, -1.2, 2.0]));
        let ok = check_gradients(
            &store,
            &[x],
            |g, s| {
                let v = g.param(s, x);
                let sq = g.square(v);
                g.sum(sq)
            },
            &GradCheckOptions::default(),
        );
        assert!(ok.passed());

        // A loss whose tape path is cut (value detached through a constant)
        // has a zero analytic gradient but non-zero numeric one.
        let bad = check_gradients(
            &store,
            &[x],
            |g, s| {
                let v = g.param(s, x);
                let detached = g.constant(g.value(v).clone());
                let sq = g.square(detached);
                g.sum(sq)
            },
            &GradCheckOptions::default(),
        );
        assert!(!bad.passed());
    }
}
