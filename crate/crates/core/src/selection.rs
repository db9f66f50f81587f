//! Regularization-path sweeps scored by the Bayesian information criterion.
//!
//! `BIC = m ln(MSE) + dof ln(m)`. Every grid point is fitted independently
//! (no warm start along the path), so grid points run in parallel and the
//! chosen λ does not depend on grid order: the minimum BIC wins and ties go
//! to the larger λ.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::network::Architecture;
use crate::par::{self, Execution};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    /// Strictly decreasing positive values.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("lambda grid is empty".into()));
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("lambda grid values must be positive and finite".into()));
        }
        if values.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidConfig("lambda grid must be strictly decreasing".into()));
        }
        Ok(LambdaGrid { values })
    }

    /// `n` log-spaced points from `hi` down to `lo`.
    pub fn log_spaced(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n == 0 || !(lo > 0.0) || !(hi >= lo) {
            return Err(Error::InvalidConfig(format!("bad log grid: n={n}, [{lo}, {hi}]")));
        }
        if n == 1 {
            return LambdaGrid::new(vec![hi]);
        }
        let (a, b) = (hi.ln(), lo.ln());
        let values = (0..n)
            .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
            .collect();
        LambdaGrid::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for LambdaGrid {
    /// 25 points in `[1e-5, 1e1]`.
    fn default() -> Self {
        LambdaGrid::log_spaced(25, 1e-5, 1e1).expect("static grid")
    }
}

impl TryFrom<Vec<f64>> for LambdaGrid {
    type Error = String;
    fn try_from(v: Vec<f64>) -> std::result::Result<Self, String> {
        LambdaGrid::new(v).map_err(|e| e.to_string())
    }
}

impl From<LambdaGrid> for Vec<f64> {
    fn from(g: LambdaGrid) -> Vec<f64> {
        g.values
    }
}

/// `m ln(mse) + dof ln(m)`; negative infinity when `mse` is zero.
pub fn bic_score(mse: f64, dof: usize, m: usize) -> f64 {
    if mse <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let m = m as f64;
    m * mse.ln() + dof as f64 * m.ln()
}

/// How free parameters of a group-sparse network are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DofConvention {
    /// Surviving columns of the penalized layer plus every other weight and bias.
    #[default]
    FreeParameters,
    /// Only the surviving columns of the penalized layer.
    SelectedGroups,
}

/// Degrees of freedom of a network with `selected` surviving columns in
/// weight layer `penalized_layer` (1-based).
pub fn network_dof(arch: &Architecture, penalized_layer: usize, selected: usize, convention: DofConvention) -> usize {
    let rows = arch.layer_dims[penalized_layer];
    let group_part = selected * rows;
    match convention {
        DofConvention::SelectedGroups => group_part,
        DofConvention::FreeParameters => {
            let other_weights: usize = arch
                .layer_dims
                .windows(2)
                .enumerate()
                .filter(|(l, _)| l + 1 != penalized_layer)
                .map(|(_, w)| w[0] * w[1])
                .sum();
            let biases: usize = arch.layer_dims[1..].iter().sum();
            group_part + other_weights + biases
        }
    }
}

/// What a fit at one λ must report back to the sweep.
pub trait PathPoint {
    /// Training mean squared error.
    fn mse(&self) -> f64;
    fn dof(&self) -> usize;
    /// Selected groups (variables or units), 1-based.
    fn support(&self) -> BTreeSet<usize>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicRecord {
    pub lambda: f64,
    pub mse: f64,
    pub dof: usize,
    pub bic: f64,
    pub support_size: usize,
    pub support: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// MSE values below this are raised to it before scoring, so fits that
    /// are exact to rounding compare by their parameter count alone.
    pub mse_floor: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { mse_floor: 1e-12 }
    }
}

#[derive(Debug)]
pub struct SweepResult<T> {
    pub chosen_lambda: f64,
    pub chosen: T,
    /// One record per successful grid point, in grid order.
    pub path: Vec<BicRecord>,
    /// Grid points whose fit failed, with the error message.
    pub failures: Vec<(f64, String)>,
}

/// Fit at every λ, score by BIC on `m` training rows, and keep the minimizer.
pub fn sweep<T, F>(lambdas: &[f64], m: usize, opts: &SweepOptions, exec: Execution, fit: F) -> Result<SweepResult<T>>
where
    T: PathPoint + Send,
    F: Fn(f64) -> Result<T> + Sync + Send,
{
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    if lambdas.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidConfig("lambda values must be nonnegative".into()));
    }
    let outcomes = par::map(exec, lambdas, |&lambda| fit(lambda));

    let mut path = Vec::new();
    let mut failures = Vec::new();
    let mut best: Option<(f64, f64, T)> = None;
    for (&lambda, outcome) in lambdas.iter().zip(outcomes) {
        match outcome {
            Ok(point) => {
                let mse = point.mse();
                let dof = point.dof();
                let support = point.support();
                let bic = bic_score(mse.max(opts.mse_floor), dof, m);
                path.push(BicRecord { lambda, mse, dof, bic, support_size: support.len(), support });
                let better = match &best {
                    None => true,
                    Some((b, l, _)) => bic < *b || (bic == *b && lambda > *l),
                };
                if better {
                    best = Some((bic, lambda, point));
                }
            }
            Err(e) => failures.push((lambda, e.to_string())),
        }
    }
    match best {
        Some((_, chosen_lambda, chosen)) => Ok(SweepResult { chosen_lambda, chosen, path, failures }),
        None => Err(Error::SweepFailed(failures)),
    }
}

/// `lambda,mse,dof,bic,support_size,support`, support as `;`-joined indices.
pub fn write_path_csv<W: Write>(path: &[BicRecord], mut out: W) -> Result<()> {
    writeln!(out, "lambda,mse,dof,bic,support_size,support")?;
    for r in path {
        let support: Vec<String> = r.support.iter().map(|j| j.to_string()).collect();
        writeln!(
            out,
            "{:e},{:e},{},{},{},{}",
            r.lambda,
            r.mse,
            r.dof,
            r.bic,
            r.support_size,
            support.join(";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;

    #[derive(Debug)]
    struct Fake {
        mse: f64,
        dof: usize,
    }

    impl PathPoint for Fake {
        fn mse(&self) -> f64 {
            self.mse
        }
        fn dof(&self) -> usize {
            self.dof
        }
        fn support(&self) -> BTreeSet<usize> {
            (1..=self.dof).collect()
        }
    }

    #[test]
    fn bic_values() {
        let m = 8000;
        assert_eq!(bic_score(0.5, 0, m), 8000.0 * 0.5f64.ln());
        let a = bic_score(0.01, 10, m);
        let b = bic_score(0.01, 20, m);
        assert!((b - a - 10.0 * (8000f64).ln()).abs() < 1e-9);
        assert_eq!(bic_score(0.0, 3, m), f64::NEG_INFINITY);
    }

    #[test]
    fn bic_reference_value() {
        // 8000 ln(0.01) + 100 ln(8000), each log from its series-independent form
        let ln_001 = -2.0 * std::f64::consts::LN_10;
        let ln_8000 = 3.0 * std::f64::consts::LN_10 + 3.0 * std::f64::consts::LN_2;
        let want = 8000.0 * ln_001 + 100.0 * ln_8000;
        let got = bic_score(0.01, 100, 8000);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        assert!((got - (-35942.6418)).abs() < 1e-4);
    }

    #[test]
    fn grid_validation() {
        assert!(LambdaGrid::new(vec![]).is_err());
        assert!(LambdaGrid::new(vec![1.0, 1.0]).is_err());
        assert!(LambdaGrid::new(vec![1.0, 2.0]).is_err());
        assert!(LambdaGrid::new(vec![1.0, -1.0]).is_err());
        let g = LambdaGrid::default();
        assert_eq!(g.values().len(), 25);
        assert!((g.values()[0] - 10.0).abs() < 1e-12);
        assert!((g.values()[24] - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn single_point_chosen() {
        let r = sweep(&[0.3], 100, &SweepOptions::default(), Execution::Sequential, |_| {
            Ok(Fake { mse: 0.1, dof: 3 })
        })
        .unwrap();
        assert_eq!(r.chosen_lambda, 0.3);
        assert_eq!(r.path.len(), 1);
    }

    #[test]
    fn dominating_point_chosen_regardless_of_order() {
        let fit = |l: f64| {
            Ok(if l == 0.1 {
                Fake { mse: 0.01, dof: 2 }
            } else {
                Fake { mse: 0.02 + l, dof: 5 }
            })
        };
        for grid in [[1.0, 0.1, 0.01], [0.01, 1.0, 0.1], [0.1, 0.01, 1.0]] {
            let r = sweep(&grid, 500, &SweepOptions::default(), Execution::Parallel, fit).unwrap();
            assert_eq!(r.chosen_lambda, 0.1);
        }
    }

    #[test]
    fn ties_go_to_larger_lambda() {
        for grid in [[0.5, 0.2], [0.2, 0.5]] {
            let r = sweep(&grid, 50, &SweepOptions::default(), Execution::Sequential, |_| {
                Ok(Fake { mse: 0.1, dof: 1 })
            })
            .unwrap();
            assert_eq!(r.chosen_lambda, 0.5);
        }
    }

    #[test]
    fn floor_breaks_exact_fit_ties_by_dof() {
        let r = sweep(&[1.0, 0.1], 50, &SweepOptions::default(), Execution::Sequential, |l| {
            Ok(if l == 1.0 { Fake { mse: 3e-31, dof: 4 } } else { Fake { mse: 1e-31, dof: 9 } })
        })
        .unwrap();
        assert_eq!(r.chosen_lambda, 1.0);
    }

    #[test]
    fn failures_are_reported() {
        let r = sweep(&[1.0, 0.1], 50, &SweepOptions::default(), Execution::Sequential, |l| {
            if l == 1.0 {
                Err(Error::Divergence { stage: "test", step: 3 })
            } else {
                Ok(Fake { mse: 0.2, dof: 1 })
            }
        })
        .unwrap();
        assert_eq!(r.chosen_lambda, 0.1);
        assert_eq!(r.failures.len(), 1);
        let err = sweep(&[1.0], 50, &SweepOptions::default(), Execution::Sequential, |_| {
            Err::<Fake, _>(Error::Divergence { stage: "test", step: 3 })
        })
        .unwrap_err();
        assert!(matches!(err, Error::SweepFailed(ref v) if v.len() == 1));
    }

    #[test]
    fn dof_conventions() {
        let arch = Architecture::new(40, 20, 3, Activation::Tanh);
        // 4 columns of W1 (4·20) + W2, W3, W4 (400+400+20) + biases (61)
        assert_eq!(network_dof(&arch, 1, 4, DofConvention::FreeParameters), 80 + 820 + 61);
        assert_eq!(network_dof(&arch, 1, 40, DofConvention::FreeParameters), arch.parameter_count());
        assert_eq!(network_dof(&arch, 1, 4, DofConvention::SelectedGroups), 80);
        // layer 2 has 20 columns of 20 rows
        assert_eq!(network_dof(&arch, 2, 3, DofConvention::FreeParameters), 60 + 800 + 400 + 20 + 61);
    }

    #[test]
    fn path_csv_format() {
        let path = vec![BicRecord {
            lambda: 0.5,
            mse: 0.25,
            dof: 3,
            bic: -1.5,
            support_size: 2,
            support: BTreeSet::from([4, 7]),
        }];
        let mut buf = Vec::new();
        write_path_csv(&path, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "lambda,mse,dof,bic,support_size,support\n5e-1,2.5e-1,3,-1.5,2,4;7\n");
    }
}
