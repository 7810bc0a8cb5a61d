//! A smooth forced solution of the one-dimensional system on `[0, 1]` with
//! no-slip walls, used for refinement studies:
//!
//! `rho = 1 - c π cos(πx) sin t`, `m = c sin(πx) cos t`.
//!
//! Continuity holds exactly; the momentum equation is balanced by a body
//! force computed from analytic derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{total_energy, PressureLaw, ViscosityPair};
use crate::state::{Boundary, Grid, InitialData, ScalarField, VectorField};
use crate::systems::ns::{ns_solve_forced, Scheme, SolverConfig};
use crate::trajectory::Trajectory;
use crate::weakform::{continuity_residual, momentum_residual, RenormalizationPair, TestFunctionSuite};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Manufactured {
    pub amplitude: f64,
    pub law: PressureLaw,
    pub visc: ViscosityPair,
}

impl Manufactured {
    pub fn new(amplitude: f64, law: PressureLaw, visc: ViscosityPair) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude * PI < 1.0) {
            return Err(Error::Domain(format!(
                "amplitude {amplitude} must keep the density positive"
            )));
        }
        Ok(Self { amplitude, law, visc })
    }

    /// `c = 0.05`, `gamma = 2`, `mu = 0.01`, bulk `0.01`.
    pub fn standard() -> Self {
        Self {
            amplitude: 0.05,
            law: PressureLaw::gamma_law(1.0, 2.0).expect("valid law"),
            visc: ViscosityPair::new(0.01, 0.01).expect("valid viscosity"),
        }
    }

    pub fn rho(&self, t: f64, x: f64) -> f64 {
        1.0 - self.amplitude * PI * (PI * x).cos() * t.sin()
    }

    pub fn m(&self, t: f64, x: f64) -> f64 {
        self.amplitude * (PI * x).sin() * t.cos()
    }

    /// Body force balancing `m_t + (m²/rho)_x + p(rho)_x = (bulk u_x)_x`.
    pub fn forcing(&self, t: f64, x: f64) -> Result<f64> {
        let c = self.amplitude;
        let (s, co) = ((PI * x).sin(), (PI * x).cos());
        let rho = self.rho(t, x);
        let j = self.m(t, x);
        let j_t = -c * s * t.sin();
        let j_x = c * PI * co * t.cos();
        let j_xx = -c * PI * PI * s * t.cos();
        let rho_x = c * PI * PI * s * t.sin();
        let rho_xx = c * PI.powi(3) * co * t.sin();
        let convective = 2.0 * j * j_x / rho - j * j * rho_x / (rho * rho);
        let u_xx = j_xx / rho - 2.0 * j_x * rho_x / rho.powi(2) - j * rho_xx / rho.powi(2)
            + 2.0 * j * rho_x.powi(2) / rho.powi(3);
        Ok(j_t + convective + self.law.derivative(rho)? * rho_x - self.visc.bulk() * u_xx)
    }

    pub fn exact(&self, grid: Grid, t: f64) -> (ScalarField, VectorField) {
        (
            ScalarField::from_fn(grid, |x| self.rho(t, x[0])),
            VectorField::from_fn(grid, |x, _| self.m(t, x[0])),
        )
    }

    pub fn initial_data(&self, grid: Grid) -> Result<InitialData> {
        let (rho, m) = self.exact(grid, 0.0);
        let e0 = total_energy(&rho, &m, &self.law)?;
        InitialData::new(rho, m, e0)
    }

    /// Runs the solver with the balancing force.
    pub fn solve(&self, cfg: &SolverConfig) -> Result<Trajectory> {
        if cfg.grid.dim() != 1 || cfg.grid.boundary() != Boundary::DirichletNoslip || cfg.grid.extent(0) != 1.0 {
            return Err(Error::Config(
                "the manufactured solution lives on the unit interval with walls".into(),
            ));
        }
        ns_solve_forced(
            &self.initial_data(cfg.grid)?,
            cfg,
            Some(&self.force_fn()),
            "manufactured",
        )
    }

    /// The forcing in the solver's calling convention. The density stays
    /// inside the law's domain by construction, so failures surface as NaN.
    pub fn force_fn(&self) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + Sync + '_ {
        move |t, x| [self.forcing(t, x[0]).unwrap_or(f64::NAN), 0.0]
    }

    /// Weak continuity and forced momentum residuals at the final time.
    pub fn residuals(&self, traj: &Trajectory) -> Result<(f64, f64)> {
        let suite = TestFunctionSuite::default_for(traj.grid(), traj.t_end())?;
        let t = traj.t_end();
        let cont = continuity_residual(traj, RenormalizationPair::Identity, &suite, t)?;
        let mom = momentum_residual(traj, &self.law, self.visc, &suite, t, Some(&self.force_fn()))?;
        Ok((cont, mom))
    }

    /// Discrete `L²` errors of density and momentum at the final time.
    pub fn errors(&self, traj: &Trajectory) -> (f64, f64) {
        let grid = *traj.grid();
        let (rho, m) = self.exact(grid, traj.t_end());
        let l2 = |a: &[f64], b: &[f64]| {
            (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * grid.cell_volume()).sqrt()
        };
        let last = traj.len() - 1;
        (
            l2(traj.rho()[last].values(), rho.values()),
            l2(traj.m()[last].component(0), m.component(0)),
        )
    }
}

/// One row of a refinement table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub cells: usize,
    pub h: f64,
    /// Sampled time step.
    pub dt: f64,
    pub err_rho: f64,
    pub err_m: f64,
    pub res_continuity: f64,
    pub res_momentum: f64,
}

/// How the time step follows the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    /// `dt = courant * h`, every step sampled.
    Proportional { courant: f64 },
    /// The solver still steps at `courant * h`, but samples are kept only
    /// every `sample_dt`, so the time quadrature of the weak residuals is
    /// never refined.
    Frozen { courant: f64, sample_dt: f64 },
}

impl StepRule {
    /// Solver step and sampling stride for mesh width `h`.
    pub fn plan(&self, h: f64, t_end: f64) -> Result<(f64, usize)> {
        match *self {
            StepRule::Proportional { courant } => Ok((t_end / (t_end / (courant * h)).ceil(), 1)),
            StepRule::Frozen { courant, sample_dt } => {
                let samples = t_end / sample_dt;
                if (samples - samples.round()).abs() > 1e-9 * samples {
                    return Err(Error::Config(format!(
                        "sample_dt {sample_dt} does not divide t_end {t_end}"
                    )));
                }
                let stride = (sample_dt / (courant * h)).ceil() as usize;
                Ok((sample_dt / stride as f64, stride))
            }
        }
    }
}

pub fn refinement_study(
    problem: &Manufactured,
    cells: &[usize],
    t_end: f64,
    rule: StepRule,
    scheme: Scheme,
) -> Result<Vec<RefinementRow>> {
    cells
        .iter()
        .map(|&n| {
            let grid = Grid::new_1d(1.0, n, Boundary::DirichletNoslip)?;
            let h = grid.spacing(0);
            let (dt, stride) = rule.plan(h, t_end)?;
            let mut cfg = SolverConfig::new(grid, dt, t_end, problem.law.clone(), problem.visc);
            cfg.scheme = scheme;
            cfg.save_every = stride;
            let traj = problem.solve(&cfg)?;
            let (err_rho, err_m) = problem.errors(&traj);
            let (res_continuity, res_momentum) = problem.residuals(&traj)?;
            Ok(RefinementRow {
                cells: n,
                h,
                dt: traj.dt(),
                err_rho,
                err_m,
                res_continuity,
                res_momentum,
            })
        })
        .collect()
}

/// Least-squares slope of `log err` against `log h`.
pub fn fitted_order(hs: &[f64], errs: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = hs
        .iter()
        .zip(errs)
        .filter(|(h, e)| **h > 0.0 && **e > 0.0)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forcing_vanishes_for_zero_amplitude_limit() {
        let p = Manufactured::new(
            1e-9,
            PressureLaw::gamma_law(1.0, 2.0).unwrap(),
            ViscosityPair::new(0.01, 0.01).unwrap(),
        )
        .unwrap();
        assert!(p.forcing(0.3, 0.2).unwrap().abs() < 1e-8);
    }

    #[test]
    fn forcing_matches_finite_differences() {
        let p = Manufactured::standard();
        let (t, x, h) = (0.4, 0.3, 1e-4);
        let j = |t: f64, x: f64| p.m(t, x);
        let flux = |t: f64, x: f64| j(t, x).powi(2) / p.rho(t, x) + p.law.pressure(p.rho(t, x)).unwrap();
        let u = |t: f64, x: f64| j(t, x) / p.rho(t, x);
        let j_t = (j(t + h, x) - j(t - h, x)) / (2.0 * h);
        let flux_x = (flux(t, x + h) - flux(t, x - h)) / (2.0 * h);
        let u_xx = (u(t, x + h) - 2.0 * u(t, x) + u(t, x - h)) / (h * h);
        let expected = j_t + flux_x - p.visc.bulk() * u_xx;
        assert!((p.forcing(t, x).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn fitted_order_of_exact_power() {
        let hs = [0.1, 0.05, 0.025];
        let errs: Vec<f64> = hs.iter().map(|h| 3.0 * h * h).collect();
        assert!((fitted_order(&hs, &errs).unwrap() - 2.0).abs() < 1e-12);
    }
}
