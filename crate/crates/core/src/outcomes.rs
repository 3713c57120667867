//! Proximal outcomes from sub-outcomes via the maximum property.
//!
//! The binary proximal outcome for decision point `t` over a window of
//! `delta` decision points is the maximum of the `delta` sub-outcomes
//! observed in the window. Alongside the outcome we cache `first_hit`, the
//! 1-based offset of the first sub-outcome equal to 1; every weight
//! computation derives from `first_hit` rather than rescanning the
//! sub-outcome series.

use crate::data::MrtDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Proximal outcomes and cached first event offsets, per individual and
/// decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximalOutcomes {
    delta: usize,
    y: Vec<Vec<u8>>,
    first_hit: Vec<Vec<Option<usize>>>,
}

impl ProximalOutcomes {
    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn t_len(&self, i: usize) -> usize {
        self.y[i].len()
    }

    /// Proximal outcome for individual `i`, decision point `t`.
    pub fn y(&self, i: usize, t: usize) -> u8 {
        self.y[i][t]
    }

    /// 1-based offset `u` of the first sub-outcome equal to 1 in the
    /// window after `(i, t)`, or `None` when no event occurs.
    pub fn first_hit(&self, i: usize, t: usize) -> Option<usize> {
        self.first_hit[i][t]
    }

    pub fn y_rows(&self) -> &[Vec<u8>] {
        &self.y
    }
}

/// Build proximal outcomes from instantaneous-event sub-outcome rows.
///
/// Each row holds the sub-outcome series for one individual; the number of
/// decision points is `row.len() - delta`, so every row must carry `delta`
/// follow-up entries past the last decision point.
pub fn build_proximal_outcomes(sub_outcome: &[Vec<u8>], delta: usize) -> Result<ProximalOutcomes> {
    if delta == 0 {
        return Err(Error::config("delta must be a positive integer"));
    }
    let mut y = Vec::with_capacity(sub_outcome.len());
    let mut first_hit = Vec::with_capacity(sub_outcome.len());
    for (i, row) in sub_outcome.iter().enumerate() {
        if row.len() <= delta {
            return Err(Error::structure(format!(
                "individual {i}: sub_outcome row has {} entries, needs at least {} (T >= 1 plus delta follow-up)",
                row.len(),
                delta + 1
            )));
        }
        if row.iter().any(|&r| r > 1) {
            return Err(Error::validation(format!(
                "individual {i}: sub_outcome entries must be 0/1"
            )));
        }
        let t_len = row.len() - delta;
        let mut y_row = Vec::with_capacity(t_len);
        let mut hit_row = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let hit = row[t..t + delta]
                .iter()
                .position(|&r| r == 1)
                .map(|s| s + 1);
            y_row.push(hit.is_some() as u8);
            hit_row.push(hit);
        }
        y.push(y_row);
        first_hit.push(hit_row);
    }
    Ok(ProximalOutcomes {
        delta,
        y,
        first_hit,
    })
}

/// Build proximal outcomes for every individual in a dataset.
pub fn build_for_dataset<F: Real>(data: &MrtDataset<F>) -> Result<ProximalOutcomes> {
    let rows: Vec<Vec<u8>> = data
        .persons()
        .iter()
        .map(|p| p.sub_outcome.clone())
        .collect();
    build_proximal_outcomes(&rows, data.delta())
}

/// Build proximal outcomes from cumulative window indicators.
///
/// `window_outcome[i][t][s]` indicates whether the event of interest has
/// occurred between decision points `t` and `t + s + 1`; the sequence must
/// be nondecreasing in `s` (an occurred event cannot un-occur). This is the
/// form to use for non-instantaneous events, where the caller determines
/// the first decision point at which the outcome is already known to be 1.
pub fn build_proximal_outcomes_generalized(
    window_outcome: &[Vec<Vec<u8>>],
) -> Result<ProximalOutcomes> {
    let delta = window_outcome
        .first()
        .and_then(|p| p.first())
        .map(Vec::len)
        .ok_or_else(|| Error::structure("window_outcome must be non-empty"))?;
    if delta == 0 {
        return Err(Error::structure(
            "window_outcome windows must have delta >= 1 entries",
        ));
    }
    let mut y = Vec::with_capacity(window_outcome.len());
    let mut first_hit = Vec::with_capacity(window_outcome.len());
    for (i, person) in window_outcome.iter().enumerate() {
        let mut y_row = Vec::with_capacity(person.len());
        let mut hit_row = Vec::with_capacity(person.len());
        for (t, window) in person.iter().enumerate() {
            if window.len() != delta {
                return Err(Error::structure(format!(
                    "individual {i}, decision point {t}: window has {} entries, expected {delta}",
                    window.len()
                )));
            }
            let mut seen = 0u8;
            let mut hit = None;
            for (s, &r) in window.iter().enumerate() {
                if r > 1 {
                    return Err(Error::validation(format!(
                        "individual {i}, decision point {t}: window entries must be 0/1"
                    )));
                }
                if r < seen {
                    return Err(Error::validation(format!(
                        "individual {i}, decision point {t}: cumulative indicator drops back to 0 at offset {}",
                        s + 1
                    )));
                }
                if r == 1 && hit.is_none() {
                    hit = Some(s + 1);
                }
                seen = r;
            }
            y_row.push((window[delta - 1] == 1) as u8);
            hit_row.push(hit);
        }
        y.push(y_row);
        first_hit.push(hit_row);
    }
    Ok(ProximalOutcomes {
        delta,
        y,
        first_hit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_with_middle_event() {
        // window (0, 1, 0) with delta = 3: outcome 1, first event at offset 2
        let out = build_proximal_outcomes(&[vec![0, 1, 0, 0]], 3).unwrap();
        assert_eq!(out.y(0, 0), 1);
        assert_eq!(out.first_hit(0, 0), Some(2));
    }

    #[test]
    fn all_zero_row_has_no_event() {
        let out = build_proximal_outcomes(&[vec![0, 0, 0, 0, 0]], 3).unwrap();
        for t in 0..out.t_len(0) {
            assert_eq!(out.y(0, t), 0);
            assert_eq!(out.first_hit(0, t), None);
        }
    }

    #[test]
    fn delta_one_single_term() {
        let out = build_proximal_outcomes(&[vec![1, 0]], 1).unwrap();
        assert_eq!(out.y(0, 0), 1);
        assert_eq!(out.first_hit(0, 0), Some(1));
    }

    #[test]
    fn short_row_is_a_structural_error() {
        let err = build_proximal_outcomes(&[vec![0, 1]], 3).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
    }

    #[test]
    fn maximum_property_holds_everywhere() {
        let rows = vec![vec![0, 1, 1, 0, 0, 1, 0], vec![1, 0, 0, 0, 0, 0, 0]];
        let delta = 2;
        let out = build_proximal_outcomes(&rows, delta).unwrap();
        for (i, row) in rows.iter().enumerate() {
            for t in 0..row.len() - delta {
                let max = *row[t..t + delta].iter().max().unwrap();
                assert_eq!(out.y(i, t), max);
                assert_eq!(out.y(i, t) == 1, out.first_hit(i, t).is_some());
            }
        }
    }

    #[test]
    fn generalized_first_occurrence() {
        let out = build_proximal_outcomes_generalized(&[vec![vec![0, 1, 1]]]).unwrap();
        assert_eq!(out.y(0, 0), 1);
        assert_eq!(out.first_hit(0, 0), Some(2));

        let out = build_proximal_outcomes_generalized(&[vec![vec![0, 0, 0]]]).unwrap();
        assert_eq!(out.y(0, 0), 0);
        assert_eq!(out.first_hit(0, 0), None);
    }

    #[test]
    fn non_monotone_window_is_rejected() {
        let err = build_proximal_outcomes_generalized(&[vec![vec![0, 1, 0]]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn generalized_matches_instantaneous_by_exhaustive_enumeration() {
        // every binary sub-outcome row with T = 3 and delta <= 4, converted
        // to cumulative indicators, must reproduce the instantaneous build
        let t_len = 3;
        for delta in 1..=4usize {
            let cols = t_len + delta;
            for mask in 0..(1u32 << cols) {
                let row: Vec<u8> = (0..cols).map(|c| ((mask >> c) & 1) as u8).collect();
                let direct = build_proximal_outcomes(std::slice::from_ref(&row), delta).unwrap();
                let windows: Vec<Vec<u8>> = (0..t_len)
                    .map(|t| {
                        (1..=delta)
                            .map(|s| *row[t..t + s].iter().max().unwrap())
                            .collect()
                    })
                    .collect();
                let general = build_proximal_outcomes_generalized(&[windows]).unwrap();
                assert_eq!(direct, general, "delta={delta} mask={mask:b}");
            }
        }
    }
}
