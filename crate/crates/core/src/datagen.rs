//! Regression datasets built from Lorenz-96 trajectories.
//!
//! Inputs are clean states plus Gaussian noise scaled by the largest absolute
//! clean state; outputs are the target evaluated on the clean state plus
//! Gaussian noise scaled by the largest absolute clean output. Both are then
//! divided by their sample standard deviations (no centering).

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::rng;
use crate::{Error, Result};

/// Variables 16..19 used by the non-polynomial settings.
const SETTING_SUPPORT: [usize; 4] = [16, 17, 18, 19];

/// Real power `x^(p/q)` for odd `q`, taking the sign-preserving real root.
pub fn real_root_pow(x: f64, p: i32, q: u32) -> f64 {
    debug_assert!(q % 2 == 1, "real roots of negatives need an odd q");
    let root = match q {
        1 => x,
        3 => x.cbrt(),
        _ => x.signum() * x.abs().powf(1.0 / f64::from(q)),
    };
    root.powi(p)
}

/// Config-level name of a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TargetId {
    /// Right-hand side of Lorenz-96 equation `k` (1-based).
    LorenzRhs(usize),
    Setting1,
    Setting2,
    Setting3,
    LinearCombo,
}

impl TryFrom<String> for TargetId {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<TargetId> for String {
    fn from(id: TargetId) -> String {
        id.to_string()
    }
}

impl std::str::FromStr for TargetId {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "setting1" => Ok(TargetId::Setting1),
            "setting2" => Ok(TargetId::Setting2),
            "setting3" => Ok(TargetId::Setting3),
            "linear_combo" => Ok(TargetId::LinearCombo),
            _ => s
                .strip_prefix("lorenz_rhs_")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(TargetId::LorenzRhs)
                .ok_or_else(|| format!("unknown target `{s}`")),
        }
    }
}

impl std::fmt::Display for TargetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetId::LorenzRhs(k) => write!(f, "lorenz_rhs_{k}"),
            TargetId::Setting1 => f.write_str("setting1"),
            TargetId::Setting2 => f.write_str("setting2"),
            TargetId::Setting3 => f.write_str("setting3"),
            TargetId::LinearCombo => f.write_str("linear_combo"),
        }
    }
}

/// A target function resolved for a given input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFunction {
    pub id: TargetId,
    pub dim: usize,
    /// `k × d` mixing matrix, only for [`TargetId::LinearCombo`].
    pub combo: Option<Array2<f64>>,
}

impl TargetFunction {
    /// Resolve `id` on `dim` inputs. `combo_seed` seeds the Gaussian mixing
    /// matrix of the linear-combination target (4 × `dim`).
    pub fn new(id: TargetId, dim: usize, combo_seed: u64) -> Result<Self> {
        match id {
            TargetId::LorenzRhs(k) if k > dim => {
                return Err(Error::InvalidConfig(format!("equation index {k} exceeds dimension {dim}")))
            }
            TargetId::LorenzRhs(_) if dim < 4 => {
                return Err(Error::InvalidConfig("Lorenz targets need at least 4 inputs".into()))
            }
            TargetId::Setting1 | TargetId::Setting2 | TargetId::Setting3 if dim < 19 => {
                return Err(Error::InvalidConfig("settings 1-3 need at least 19 inputs".into()))
            }
            _ => {}
        }
        let combo = (id == TargetId::LinearCombo).then(|| {
            let mut rng = rng::stream(combo_seed, 0);
            Array2::from_shape_fn((4, dim), |_| rng.sample::<f64, _>(StandardNormal))
        });
        Ok(TargetFunction { id, dim, combo })
    }

    /// Linear-combination target with an explicit mixing matrix.
    pub fn with_combo(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() != 4 {
            return Err(Error::InvalidConfig("mixing matrix must have 4 rows".into()));
        }
        Ok(TargetFunction {
            id: TargetId::LinearCombo,
            dim: matrix.ncols(),
            combo: Some(matrix),
        })
    }

    /// 1-based indices of the active variables; empty for the linear combination.
    pub fn true_support(&self) -> BTreeSet<usize> {
        match self.id {
            TargetId::LorenzRhs(k) => {
                let d = self.dim;
                let wrap = |off: isize| ((k as isize - 1 + off).rem_euclid(d as isize) + 1) as usize;
                [-2, -1, 0, 1].into_iter().map(wrap).collect()
            }
            TargetId::Setting1 | TargetId::Setting2 | TargetId::Setting3 => {
                SETTING_SUPPORT.into_iter().collect()
            }
            TargetId::LinearCombo => BTreeSet::new(),
        }
    }

    pub fn evaluate(&self, x: ArrayView1<f64>) -> f64 {
        // 1-based accessor
        let v = |j: usize| x[j - 1];
        match self.id {
            TargetId::LorenzRhs(k) => {
                let d = x.len();
                let at = |off: isize| x[(k as isize - 1 + off).rem_euclid(d as isize) as usize];
                -at(-2) * at(-1) + at(-1) * at(1) - at(0) + 8.0
            }
            TargetId::Setting1 => {
                let p = |j| real_root_pow(v(j), 4, 3);
                (p(19) - p(16)) * p(17) - p(18) + 8.0
            }
            TargetId::Setting2 => {
                let e = |j: usize| (v(j) / 50.0).exp();
                (e(19) - e(16)) * e(17) - e(18) + 8.0
            }
            TargetId::Setting3 => {
                ((v(19) / 10.0).exp() - real_root_pow(v(16), 2, 3)) * v(17) - real_root_pow(v(18), 4, 5)
                    + 8.0
            }
            TargetId::LinearCombo => {
                let a = self.combo.as_ref().expect("linear_combo target without a matrix");
                let z = a.dot(&x);
                (z[3] - z[0]) * z[1] - z[2] + 8.0
            }
        }
    }

    pub fn evaluate_rows(&self, states: &Array2<f64>) -> Array1<f64> {
        Array1::from_iter(states.rows().into_iter().map(|r| self.evaluate(r)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec { sigma_x: 0.0, sigma_y: 0.0, seed: 0 }
    }
}

/// Per-column input scales and the output scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub sigma: Vec<f64>,
    pub alpha: f64,
}

fn sample_std(values: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = values.len() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

impl Scales {
    /// Sample standard deviations of each input column and of the outputs.
    pub fn fit(raw_x: &Array2<f64>, raw_y: &Array1<f64>) -> Result<Self> {
        if raw_x.nrows() < 2 {
            return Err(Error::InvalidConfig("need at least two samples to standardize".into()));
        }
        let mut sigma = Vec::with_capacity(raw_x.ncols());
        for (j, col) in raw_x.axis_iter(Axis(1)).enumerate() {
            let s = sample_std(col.iter().copied());
            if !(s > 0.0) {
                return Err(Error::DegenerateData { column: j + 1 });
            }
            sigma.push(s);
        }
        let alpha = sample_std(raw_y.iter().copied());
        if !(alpha > 0.0) {
            // the output is reported as column d+1
            return Err(Error::DegenerateData { column: raw_x.ncols() + 1 });
        }
        Ok(Scales { sigma, alpha })
    }

    pub fn identity(dim: usize) -> Self {
        Scales { sigma: vec![1.0; dim], alpha: 1.0 }
    }

    pub fn apply_x(&self, raw_x: &Array2<f64>) -> Array2<f64> {
        let mut x = raw_x.clone();
        for (mut col, s) in x.axis_iter_mut(Axis(1)).zip(&self.sigma) {
            col.mapv_inplace(|v| v / s);
        }
        x
    }

    pub fn apply_y(&self, raw_y: &Array1<f64>) -> Array1<f64> {
        raw_y.mapv(|v| v / self.alpha)
    }

    /// Map standardized predictions back to original output units.
    pub fn invert_y(&self, y: &Array1<f64>) -> Array1<f64> {
        y.mapv(|v| v * self.alpha)
    }

    pub fn invert_x(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut raw = x.clone();
        for (mut col, s) in raw.axis_iter_mut(Axis(1)).zip(&self.sigma) {
            col.mapv_inplace(|v| v * s);
        }
        raw
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Standardized inputs, `m × d`.
    pub x: Array2<f64>,
    /// Standardized outputs.
    pub y: Array1<f64>,
    pub scales: Scales,
    pub true_support: BTreeSet<usize>,
    pub raw_x: Array2<f64>,
    pub raw_y: Array1<f64>,
    pub times: Array1<f64>,
    pub noise: NoiseSpec,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Same raw data standardized with its own sample statistics.
    pub fn restandardize(&self) -> Result<Dataset> {
        let scales = Scales::fit(&self.x, &self.y)?;
        Ok(Dataset {
            x: scales.apply_x(&self.x),
            y: scales.apply_y(&self.y),
            scales,
            ..self.clone()
        })
    }

    /// Write `x1..xd,y` in original units plus a JSON sidecar.
    pub fn save(&self, csv_path: &Path, sidecar_path: &Path, target: &TargetId) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        for j in 1..=self.dim() {
            write!(out, "x{j},")?;
        }
        writeln!(out, "y")?;
        for (row, y) in self.raw_x.rows().into_iter().zip(self.raw_y.iter()) {
            for v in row {
                write!(out, "{v:.16e},")?;
            }
            writeln!(out, "{y:.16e}")?;
        }
        out.flush()?;
        let sidecar = DatasetSidecar {
            target: target.clone(),
            scales: self.scales.clone(),
            noise: self.noise,
            true_support: self.true_support.clone(),
            times: self.times.to_vec(),
        };
        std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Load a dataset written by [`Dataset::save`]. Standardization reuses the
    /// sidecar's scales unless `scales` overrides them.
    pub fn load(csv_path: &Path, sidecar_path: &Path, scales: Option<&Scales>) -> Result<(Dataset, DatasetSidecar)> {
        let sidecar: DatasetSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
        let (raw_x, raw_y) = read_xy_csv(csv_path)?;
        let scales = scales.cloned().unwrap_or_else(|| sidecar.scales.clone());
        if scales.sigma.len() != raw_x.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "scales cover {} inputs, data has {}",
                scales.sigma.len(),
                raw_x.ncols()
            )));
        }
        let times = if sidecar.times.len() == raw_y.len() {
            Array1::from(sidecar.times.clone())
        } else {
            Array1::from_iter((0..raw_y.len()).map(|i| i as f64))
        };
        let ds = Dataset {
            x: scales.apply_x(&raw_x),
            y: scales.apply_y(&raw_y),
            scales,
            true_support: sidecar.true_support.clone(),
            raw_x,
            raw_y,
            times,
            noise: sidecar.noise,
        };
        Ok((ds, sidecar))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub target: TargetId,
    pub scales: Scales,
    pub noise: NoiseSpec,
    pub true_support: BTreeSet<usize>,
    #[serde(default)]
    pub times: Vec<f64>,
}

fn read_xy_csv(path: &Path) -> Result<(Array2<f64>, Array1<f64>)> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is empty", path.display())))??;
    let ncols = header.split(',').count();
    if ncols < 2 {
        return Err(Error::InvalidConfig("dataset CSV needs at least one input column".into()));
    }
    let mut flat = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 2)))?;
        if vals.len() != ncols {
            return Err(Error::ShapeMismatch(format!(
                "line {} has {} fields, header has {ncols}",
                lineno + 2,
                vals.len()
            )));
        }
        flat.extend_from_slice(&vals[..ncols - 1]);
        ys.push(vals[ncols - 1]);
    }
    let m = ys.len();
    let x = Array2::from_shape_vec((m, ncols - 1), flat).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((x, Array1::from(ys)))
}

/// Build a noisy training set on the time window `(t_a, t_b]`.
///
/// `scale_window` selects where the noise amplitudes `M_x`, `M_y` are
/// measured; `None` uses the training window itself.
pub fn make_dataset(
    traj: &Trajectory,
    target: &TargetFunction,
    noise: &NoiseSpec,
    range: (f64, f64),
    scale_window: Option<(f64, f64)>,
) -> Result<Dataset> {
    if !(noise.sigma_x >= 0.0 && noise.sigma_y >= 0.0) {
        return Err(Error::InvalidConfig("noise levels must be nonnegative".into()));
    }
    check_span(traj, range)?;
    let rows = traj.window(range.0, range.1);
    if rows.is_empty() {
        return Err(Error::InvalidConfig(format!("time window ({}, {}] is empty", range.0, range.1)));
    }
    if traj.dim() != target.dim {
        return Err(Error::ShapeMismatch(format!(
            "target expects {} inputs, trajectory has {}",
            target.dim,
            traj.dim()
        )));
    }
    let clean_x = traj.states.slice(ndarray::s![rows.clone(), ..]).to_owned();
    let clean_y = target.evaluate_rows(&clean_x);

    let (m_x, m_y) = match scale_window {
        None => (max_abs(clean_x.iter()), max_abs(clean_y.iter())),
        Some(w) => {
            check_span(traj, w)?;
            let srows = traj.window(w.0, w.1);
            if srows.is_empty() {
                return Err(Error::InvalidConfig("noise-scale window is empty".into()));
            }
            let sx = traj.states.slice(ndarray::s![srows, ..]).to_owned();
            let sy = target.evaluate_rows(&sx);
            (max_abs(sx.iter()), max_abs(sy.iter()))
        }
    };

    let mut raw_x = clean_x;
    if noise.sigma_x > 0.0 {
        let mut rng = rng::stream(noise.seed, 0);
        let amp = noise.sigma_x * m_x;
        raw_x.mapv_inplace(|v| v + amp * rng.sample::<f64, _>(StandardNormal));
    }
    let mut raw_y = clean_y;
    if noise.sigma_y > 0.0 {
        let mut rng = rng::stream(noise.seed, 1);
        let amp = noise.sigma_y * m_y;
        raw_y.mapv_inplace(|v| v + amp * rng.sample::<f64, _>(StandardNormal));
    }

    let scales = Scales::fit(&raw_x, &raw_y)?;
    Ok(Dataset {
        x: scales.apply_x(&raw_x),
        y: scales.apply_y(&raw_y),
        scales,
        true_support: target.true_support(),
        raw_x,
        raw_y,
        times: traj.times.slice(ndarray::s![rows]).to_owned(),
        noise: *noise,
    })
}

/// Noiseless samples on `(t_a, t_b]`, standardized with the training scales.
pub fn make_test_set_window(
    traj: &Trajectory,
    target: &TargetFunction,
    train_scales: &Scales,
    range: (f64, f64),
) -> Result<Dataset> {
    check_span(traj, range)?;
    let rows = traj.window(range.0, range.1);
    if rows.is_empty() {
        return Err(Error::InvalidConfig("test window is empty".into()));
    }
    if train_scales.sigma.len() != traj.dim() {
        return Err(Error::ShapeMismatch("training scales do not match trajectory dimension".into()));
    }
    let raw_x = traj.states.slice(ndarray::s![rows.clone(), ..]).to_owned();
    let raw_y = target.evaluate_rows(&raw_x);
    Ok(Dataset {
        x: train_scales.apply_x(&raw_x),
        y: train_scales.apply_y(&raw_y),
        scales: train_scales.clone(),
        true_support: target.true_support(),
        raw_x,
        raw_y,
        times: traj.times.slice(ndarray::s![rows]).to_owned(),
        noise: NoiseSpec::noiseless(),
    })
}

/// The standard held-out set: noiseless states on `(80, 100]`.
pub fn make_test_set(traj: &Trajectory, target: &TargetFunction, train_scales: &Scales) -> Result<Dataset> {
    make_test_set_window(traj, target, train_scales, (80.0, 100.0))
}

fn check_span(traj: &Trajectory, (t_a, t_b): (f64, f64)) -> Result<()> {
    if traj.is_empty() {
        return Err(Error::InvalidConfig("empty trajectory".into()));
    }
    let tol = traj.dt().unwrap_or(1.0) * 1e-6;
    let (first, last) = (traj.times[0], traj.times[traj.len() - 1]);
    if !(t_a < t_b) {
        return Err(Error::InvalidConfig(format!("empty time window ({t_a}, {t_b}]")));
    }
    if t_a < first - tol || t_b > last + tol {
        return Err(Error::InvalidConfig(format!(
            "window ({t_a}, {t_b}] is outside the trajectory span [{first}, {last}]"
        )));
    }
    Ok(())
}

fn max_abs<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    values.fold(0.0f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, OdeConfig};
    use ndarray::Array1;

    fn short_traj(t_final: f64) -> Trajectory {
        integrate(&OdeConfig::lorenz96_standard(t_final)).unwrap()
    }

    #[test]
    fn target_ids_parse_and_print() {
        for s in ["lorenz_rhs_25", "setting1", "setting2", "setting3", "linear_combo"] {
            let id: TargetId = s.parse().unwrap();
            assert_eq!(id.to_string(), s);
        }
        assert!("lorenz_rhs_0".parse::<TargetId>().is_err());
        assert!("nope".parse::<TargetId>().is_err());
    }

    #[test]
    fn lorenz_target_at_equilibrium() {
        let tf = TargetFunction::new(TargetId::LorenzRhs(25), 40, 0).unwrap();
        assert_eq!(tf.evaluate(Array1::from_elem(40, 8.0).view()), 0.0);
        assert_eq!(tf.true_support(), BTreeSet::from([23, 24, 25, 26]));
    }

    #[test]
    fn lorenz_support_wraps() {
        let tf = TargetFunction::new(TargetId::LorenzRhs(1), 40, 0).unwrap();
        assert_eq!(tf.true_support(), BTreeSet::from([39, 40, 1, 2]));
    }

    #[test]
    fn setting2_at_origin() {
        let tf = TargetFunction::new(TargetId::Setting2, 40, 0).unwrap();
        assert_eq!(tf.evaluate(Array1::zeros(40).view()), 7.0);
    }

    #[test]
    fn setting1_real_root_convention() {
        let tf = TargetFunction::new(TargetId::Setting1, 40, 0).unwrap();
        let mut x = Array1::zeros(40);
        x[15] = -1.0;
        x[16] = 1.0;
        // independent route: cube root then fourth power
        let p = |v: f64| v.cbrt().powi(4);
        let expect = (p(0.0) - p(-1.0)) * p(1.0) - p(0.0) + 8.0;
        assert_eq!(expect, 7.0);
        assert!((tf.evaluate(x.view()) - expect).abs() < 1e-15);
    }

    #[test]
    fn setting3_negative_fractional_powers_are_real() {
        let tf = TargetFunction::new(TargetId::Setting3, 40, 0).unwrap();
        let mut x = Array1::zeros(40);
        x[15] = -8.0; // (-8)^(2/3) = 4
        x[16] = 2.0;
        x[17] = -32.0; // (-32)^(4/5) = 16
        x[18] = 0.0;
        let want = (1.0 - 4.0) * 2.0 - 16.0 + 8.0;
        assert!((tf.evaluate(x.view()) - want).abs() < 1e-12);
    }

    #[test]
    fn linear_combo_uses_matrix() {
        let mut a = Array2::zeros((4, 5));
        for k in 0..4 {
            a[[k, k]] = 1.0;
        }
        let tf = TargetFunction::with_combo(a).unwrap();
        let x = ndarray::array![1.0, 2.0, 3.0, 4.0, 100.0];
        assert_eq!(tf.evaluate(x.view()), (4.0 - 1.0) * 2.0 - 3.0 + 8.0);
        assert!(tf.true_support().is_empty());
        let seeded = TargetFunction::new(TargetId::LinearCombo, 40, 9).unwrap();
        assert_eq!(seeded.combo.as_ref().unwrap().dim(), (4, 40));
        assert_eq!(seeded, TargetFunction::new(TargetId::LinearCombo, 40, 9).unwrap());
    }

    #[test]
    fn support_correctness_by_perturbation() {
        let traj = short_traj(5.0);
        let tf = TargetFunction::new(TargetId::LorenzRhs(25), 40, 0).unwrap();
        let support = tf.true_support();
        for i in (100..traj.len()).step_by(4).take(100) {
            let x = traj.states.row(i).to_owned();
            let base = tf.evaluate(x.view());
            for j in 1..=40 {
                let mut p = x.clone();
                p[j - 1] += 0.1;
                let changed = tf.evaluate(p.view()) != base;
                assert_eq!(changed, support.contains(&j), "row {i} var {j}");
            }
        }
    }

    #[test]
    fn noiseless_dataset_is_exact() {
        let traj = short_traj(2.0);
        let tf = TargetFunction::new(TargetId::LorenzRhs(25), 40, 0).unwrap();
        let ds = make_dataset(&traj, &tf, &NoiseSpec::noiseless(), (0.0, 2.0), None).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.raw_x, traj.states.slice(ndarray::s![1.., ..]));
        assert_eq!(ds.raw_y, tf.evaluate_rows(&ds.raw_x));
    }

    #[test]
    fn dataset_is_standardized_and_reproducible() {
        let traj = short_traj(5.0);
        let tf = TargetFunction::new(TargetId::LorenzRhs(25), 40, 0).unwrap();
        let noise = NoiseSpec { sigma_x: 0.02, sigma_y: 0.02, seed: 3 };
        let a = make_dataset(&traj, &tf, &noise, (0.0, 5.0), None).unwrap();
        let b = make_dataset(&traj, &tf, &noise, (0.0, 5.0), None).unwrap();
        assert_eq!(a, b);
        for col in a.x.axis_iter(Axis(1)) {
            assert!((sample_std(col.iter().copied()) - 1.0).abs() < 1e-9);
        }
        assert!((sample_std(a.y.iter().copied()) - 1.0).abs() < 1e-9);
        let again = a.restandardize().unwrap();
        assert!(again.scales.sigma.iter().all(|s| (s - 1.0).abs() < 1e-9));
        assert!((again.scales.alpha - 1.0).abs() < 1e-9);
    }

    #[test]
    fn output_noise_independent_of_input_noise_level() {
        let traj = short_traj(2.0);
        let tf = TargetFunction::new(TargetId::LorenzRhs(25), 40, 0).unwrap();
        let a = make_dataset(&traj, &tf, &NoiseSpec { sigma_x: 0.01, sigma_y: 0.02, seed: 5 }, (0.0, 2.0), None)
            .unwrap();
        let b = make_dataset(&traj, &tf, &NoiseSpec { sigma_x: 0.05, sigma_y: 0.02, seed: 5 }, (0.0, 2.0), None)
            .unwrap();
        assert_eq!(a.raw_y, b.raw_y);
        assert_ne!(a.raw_x, b.raw_x);
    }

    #[test]
    fn empty_window_rejected() {
        let traj = short_traj(1.0);
        let tf = TargetFunction::new(TargetId::LorenzRhs(25), 40, 0).unwrap();
        let err = make_dataset(&traj, &tf, &NoiseSpec::noiseless(), (0.5, 0.5), None).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn constant_column_is_degenerate() {
        let x = Array2::from_shape_fn((10, 3), |(i, j)| if j == 1 { 2.0 } else { i as f64 });
        let y = Array1::from_iter((0..10).map(f64::from));
        assert!(matches!(Scales::fit(&x, &y), Err(Error::DegenerateData { column: 2 })));
    }

    #[test]
    fn test_set_too_short() {
        let traj = short_traj(50.0);
        let tf = TargetFunction::new(TargetId::LorenzRhs(25), 40, 0).unwrap();
        let err = make_test_set(&traj, &tf, &Scales::identity(40)).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn test_set_roundtrip_through_training_scales() {
        let traj = short_traj(100.0);
        let tf = TargetFunction::new(TargetId::LorenzRhs(25), 40, 0).unwrap();
        let train = make_dataset(&traj, &tf, &NoiseSpec::noiseless(), (0.0, 80.0), None).unwrap();
        assert_eq!(train.len(), 8000);
        let test = make_test_set(&traj, &tf, &train.scales).unwrap();
        assert_eq!(test.len(), 2000);
        assert_eq!(test.raw_y, tf.evaluate_rows(&test.raw_x));
        let back_x = test.scales.invert_x(&test.x);
        let back_y = test.scales.invert_y(&test.y);
        let err_x = (&back_x - &test.raw_x).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err_y = (&back_y - &test.raw_y).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err_x < 1e-12 && err_y < 1e-12, "{err_x} {err_y}");
    }

    #[test]
    fn save_and_load_roundtrip() {
        let traj = short_traj(1.0);
        let tf = TargetFunction::new(TargetId::LorenzRhs(10), 40, 0).unwrap();
        let noise = NoiseSpec { sigma_x: 0.02, sigma_y: 0.01, seed: 1 };
        let ds = make_dataset(&traj, &tf, &noise, (0.0, 1.0), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (csv, json) = (dir.path().join("d.csv"), dir.path().join("d.json"));
        ds.save(&csv, &json, &tf.id).unwrap();
        let (back, side) = Dataset::load(&csv, &json, None).unwrap();
        assert_eq!(side.target, tf.id);
        assert_eq!(back, ds);
    }
}
