//! Variable-selection and prediction-quality metrics.

use std::collections::BTreeSet;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub selected: BTreeSet<usize>,
    pub truth: BTreeSet<usize>,
}

/// Sensitivity = selected ∩ truth / truth; specificity = unselected ∩ non-truth / non-truth.
///
/// Indices are 1-based over `1..=d`.
pub fn selection_metrics(selected: &BTreeSet<usize>, truth: &BTreeSet<usize>, d: usize) -> Result<SelectionReport> {
    let in_range = |s: &BTreeSet<usize>| s.iter().all(|&j| (1..=d).contains(&j));
    if !in_range(selected) || !in_range(truth) {
        return Err(Error::InvalidConfig(format!("variable indices must lie in 1..={d}")));
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("sensitivity needs at least one active variable".into()));
    }
    if truth.len() == d {
        return Err(Error::UndefinedMetric("specificity needs at least one inactive variable".into()));
    }
    let true_positive = selected.intersection(truth).count();
    let false_positive = selected.len() - true_positive;
    let negatives = d - truth.len();
    Ok(SelectionReport {
        sensitivity: true_positive as f64 / truth.len() as f64,
        specificity: (negatives - false_positive) as f64 / negatives as f64,
        selected: selected.clone(),
        truth: truth.clone(),
    })
}

/// `sqrt(Σ (f - f̂)² / Σ f²)`.
pub fn relative_test_error(f_true: ArrayView1<f64>, f_hat: ArrayView1<f64>) -> Result<f64> {
    if f_true.len() != f_hat.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true values vs {} predictions",
            f_true.len(),
            f_hat.len()
        )));
    }
    let denom: f64 = f_true.iter().map(|v| v * v).sum();
    if !(denom > 0.0) {
        return Err(Error::UndefinedMetric("relative error of an all-zero target".into()));
    }
    let num: f64 = f_true.iter().zip(f_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((num / denom).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_selection() {
        let truth = BTreeSet::from([23, 24, 25, 26]);
        let r = selection_metrics(&truth, &truth, 40).unwrap();
        assert_eq!((r.sensitivity, r.specificity), (1.0, 1.0));
    }

    #[test]
    fn selecting_everything() {
        let truth = BTreeSet::from([23, 24, 25, 26]);
        let all: BTreeSet<usize> = (1..=40).collect();
        let r = selection_metrics(&all, &truth, 40).unwrap();
        assert_eq!((r.sensitivity, r.specificity), (1.0, 0.0));
    }

    #[test]
    fn partial_selection() {
        let truth = BTreeSet::from([23, 24, 25, 26]);
        let r = selection_metrics(&BTreeSet::from([23, 24, 25]), &truth, 40).unwrap();
        assert_eq!((r.sensitivity, r.specificity), (0.75, 1.0));
    }

    #[test]
    fn undefined_cases() {
        let all: BTreeSet<usize> = (1..=5).collect();
        assert!(matches!(
            selection_metrics(&all, &BTreeSet::new(), 5),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(selection_metrics(&all, &all, 5), Err(Error::UndefinedMetric(_))));
        assert!(matches!(
            selection_metrics(&BTreeSet::from([6]), &BTreeSet::from([1]), 5),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn relative_error_identities() {
        let f = array![1.0, -2.0, 3.5];
        assert_eq!(relative_test_error(f.view(), f.view()).unwrap(), 0.0);
        assert_eq!(relative_test_error(f.view(), (&f * 0.0).view()).unwrap(), 1.0);
        assert_eq!(relative_test_error(f.view(), (&f * 2.0).view()).unwrap(), 1.0);
        let z = array![0.0, 0.0];
        assert!(matches!(relative_test_error(z.view(), z.view()), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn relative_error_scale_invariant() {
        let f = array![1.0, -2.0, 3.5, 0.25];
        let g = array![0.9, -2.2, 3.0, 0.5];
        let base = relative_test_error(f.view(), g.view()).unwrap();
        for c in [-3.0, 0.5, 1e3] {
            let scaled = relative_test_error((&f * c).view(), (&g * c).view()).unwrap();
            assert!((scaled - base).abs() < 1e-14);
        }
    }
}
