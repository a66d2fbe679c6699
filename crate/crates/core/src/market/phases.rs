use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lengths of the sliding-window protocol, in trading days.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGeometry {
    /// Training length of the first phase.
    pub initial_train: usize,
    /// Steady-state training length.
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub stride: usize,
}

impl Default for PhaseGeometry {
    fn default() -> Self {
        Self {
            initial_train: 250,
            train: 450,
            val: 50,
            test: 100,
            stride: 100,
        }
    }
}

impl PhaseGeometry {
    /// Fewest days that fit `n_phases` phases.
    pub fn min_total_days(&self, n_phases: usize) -> usize {
        self.initial_train + self.val + self.test + self.stride * n_phases.saturating_sub(1)
    }
}

/// One train/validation/test split; ranges are calendar day indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub index: usize,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl PhaseSpec {
    /// Whole span covered by the phase.
    pub fn window(&self) -> Range<usize> {
        self.train.start..self.test.end
    }
}

/// Phase `j` tests on `[s_j, s_j + test)` with `s_j = initial_train + val +
/// j * stride`; validation is the `val` days before, and training the up to
/// `train` days before that. Training therefore grows from
/// `initial_train` until it reaches `train`, then slides.
pub fn make_phases(total_days: usize, n_phases: usize, g: &PhaseGeometry) -> Result<Vec<PhaseSpec>> {
    if n_phases == 0 {
        return Err(Error::Config("at least one phase is required".into()));
    }
    if g.initial_train == 0 || g.val == 0 || g.test == 0 || g.stride == 0 || g.train < g.initial_train {
        return Err(Error::Config(format!("invalid phase geometry {g:?}")));
    }
    let need = g.min_total_days(n_phases);
    if total_days < need {
        return Err(Error::Config(format!(
            "{n_phases} phases need at least {need} trading days, only {total_days} available"
        )));
    }
    Ok((0..n_phases)
        .map(|j| {
            let test_start = g.initial_train + g.val + j * g.stride;
            let val_start = test_start - g.val;
            PhaseSpec {
                index: j,
                train: val_start.saturating_sub(g.train)..val_start,
                val: val_start..test_start,
                test: test_start..test_start + g.test,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_history_geometry() {
        let p = make_phases(2800, 24, &PhaseGeometry::default()).unwrap();
        assert_eq!(p.len(), 24);
        assert_eq!((p[0].train.clone(), p[0].val.clone(), p[0].test.clone()), (0..250, 250..300, 300..400));
        assert_eq!(p[23].test.end, 2700);
        assert_eq!(p[5].window().len(), 600);
    }

    #[test]
    fn degenerate_and_infeasible() {
        let g = PhaseGeometry::default();
        assert_eq!(make_phases(400, 1, &g).unwrap().len(), 1);
        let err = make_phases(399, 1, &g).unwrap_err();
        assert!(err.to_string().contains("400"), "{err}");
    }
}
