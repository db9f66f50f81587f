//! Lorenz-96 vector field and a fixed-step classical RK4 integrator.
//!
//! Indices are 0-based internally with cyclic wrap-around; anything written
//! out uses 1-based variable labels (`x1..xd`).

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest dimension for which `j-2`, `j-1`, `j+1` are distinct modulo `d`.
pub const MIN_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub forcing: f64,
    pub dt: f64,
    pub t0: f64,
    pub t_final: f64,
    pub x0: Vec<f64>,
}

impl OdeConfig {
    /// The standard setup used throughout the experiments: `d = 40`, `F = 8`,
    /// `dt = 0.01`, all ones except `x20(0) = 1.008`.
    pub fn lorenz96_standard(t_final: f64) -> Self {
        let mut x0 = vec![1.0; 40];
        x0[19] = 1.008;
        OdeConfig {
            forcing: 8.0,
            dt: 0.01,
            t0: 0.0,
            t_final,
            x0,
        }
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Number of RK4 steps, after checking the config.
    pub fn steps(&self) -> Result<usize> {
        if self.dim() < MIN_DIM {
            return Err(Error::InvalidConfig(format!(
                "Lorenz-96 needs at least {MIN_DIM} variables, got {}",
                self.dim()
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !self.forcing.is_finite() || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("forcing and x0 must be finite".into()));
        }
        let span = self.t_final - self.t0;
        if !(span >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "t_final ({}) precedes t0 ({})",
                self.t_final, self.t0
            )));
        }
        let ratio = span / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "(t_final - t0) / dt = {ratio} is not an integer"
            )));
        }
        Ok(steps as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Array1<f64>,
    /// One row per time, one column per variable.
    pub states: Array2<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> Option<f64> {
        (self.times.len() > 1).then(|| self.times[1] - self.times[0])
    }

    /// Row indices whose times lie in `(t_a, t_b]` (left-open).
    ///
    /// A small tolerance absorbs the rounding of `t0 + i*dt`.
    pub fn window(&self, t_a: f64, t_b: f64) -> std::ops::Range<usize> {
        let tol = self.dt().unwrap_or(1.0) * 1e-6;
        let start = self.times.iter().position(|&t| t > t_a + tol).unwrap_or(self.len());
        let end = self
            .times
            .iter()
            .rposition(|&t| t <= t_b + tol)
            .map_or(0, |i| i + 1);
        start..end.max(start)
    }

    /// CSV with header `t,x1,...,xd`, 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "t")?;
        for j in 1..=self.dim() {
            write!(out, ",x{j}")?;
        }
        writeln!(out)?;
        for (t, row) in self.times.iter().zip(self.states.rows()) {
            write!(out, "{t:.16e}")?;
            for v in row {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Right-hand side of Lorenz-96, written into `out`.
pub fn lorenz96_rhs_into(x: ArrayView1<f64>, forcing: f64, out: &mut [f64]) {
    let d = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        let xm2 = x[(j + d - 2) % d];
        let xm1 = x[(j + d - 1) % d];
        let xp1 = x[(j + 1) % d];
        *o = -xm2 * xm1 + xm1 * xp1 - x[j] + forcing;
    }
}

/// Right-hand side of Lorenz-96: `dx_j/dt = -x_{j-2} x_{j-1} + x_{j-1} x_{j+1} - x_j + F`.
pub fn lorenz96_rhs(x: ArrayView1<f64>, forcing: f64) -> Result<Array1<f64>> {
    if x.len() < MIN_DIM {
        return Err(Error::InvalidConfig(format!(
            "Lorenz-96 needs at least {MIN_DIM} variables, got {}",
            x.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    lorenz96_rhs_into(x, forcing, &mut out);
    Ok(Array1::from(out))
}

/// Integrate with classical RK4, recording every step.
pub fn integrate(cfg: &OdeConfig) -> Result<Trajectory> {
    let steps = cfg.steps()?;
    let d = cfg.dim();
    let dt = cfg.dt;
    let mut states = Array2::<f64>::zeros((steps + 1, d));
    states.row_mut(0).assign(&ArrayView1::from(&cfg.x0[..]));

    let mut x = Array1::from(cfg.x0.clone());
    let mut stage = Array1::<f64>::zeros(d);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);

    for step in 1..=steps {
        lorenz96_rhs_into(x.view(), cfg.forcing, &mut k1);
        for j in 0..d {
            stage[j] = x[j] + 0.5 * dt * k1[j];
        }
        lorenz96_rhs_into(stage.view(), cfg.forcing, &mut k2);
        for j in 0..d {
            stage[j] = x[j] + 0.5 * dt * k2[j];
        }
        lorenz96_rhs_into(stage.view(), cfg.forcing, &mut k3);
        for j in 0..d {
            stage[j] = x[j] + dt * k3[j];
        }
        lorenz96_rhs_into(stage.view(), cfg.forcing, &mut k4);
        for j in 0..d {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                stage: "integration",
                step,
            });
        }
        states.row_mut(step).assign(&x);
    }

    let times = Array1::from_iter((0..=steps).map(|i| cfg.t0 + i as f64 * dt));
    Ok(Trajectory { times, states })
}
