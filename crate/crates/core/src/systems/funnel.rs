//! The non-unique scalar ODE `x' = 2 sqrt|x|` embedded in the trajectory
//! space, so the selection machinery has a genuinely multi-valued system to
//! act on.
//!
//! The scalar `x` rides in the first momentum component as
//! `m(t) = m0 + (x0 - x(t)) e1` with `x0 = Y - <m0, e1> / |Ω|`. Larger `x`
//! means smaller momentum, so the field energy `E(t+) = ∫ ½|m|²/rho + P(rho)`
//! falls as `x` grows and branches that leave zero early dissipate more.
//! Density is carried along unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{total_energy, PressureLaw};
use crate::selection::CandidateGenerator;
use crate::state::{Boundary, Grid, InitialData, ScalarField, VectorField};
use crate::trajectory::{EnergySignal, Trajectory, TrajectorySet};

/// Below this `|x0|` the restart point counts as the branching state.
const AT_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FunnelConfig {
    pub grid: Grid,
    pub dt: f64,
    pub t_end: f64,
    /// Branch times `c` of the members leaving zero; each on the time grid.
    pub branch_times: Vec<f64>,
    /// Anchor `Y`; keeps `Y - x` positive over every restart.
    pub anchor: f64,
    pub law: PressureLaw,
    /// Freeze the energy across one step starting at this time, so that
    /// `E(τ+)` differs from the field energy there.
    pub inject_jump: Option<f64>,
}

impl FunnelConfig {
    /// One-dimensional default: 32 cells on the unit interval, `gamma = 2`.
    pub fn new(branch_times: Vec<f64>, t_end: f64, dt: f64) -> Result<Self> {
        Ok(Self {
            grid: Grid::new_1d(1.0, 32, Boundary::DirichletNoslip)?,
            dt,
            t_end,
            branch_times,
            anchor: (2.0 * t_end).powi(2) + 1.0,
            law: PressureLaw::gamma_law(1.0, 2.0)?,
            inject_jump: None,
        })
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    fn on_grid(&self, t: f64, what: &str) -> Result<usize> {
        let k = (t / self.dt).round();
        if (t - k * self.dt).abs() > 1e-9 * self.dt {
            let below = (t / self.dt).floor() * self.dt;
            return Err(Error::OffGrid {
                requested: t,
                below,
                above: below + self.dt,
            });
        }
        if k < 0.0 {
            return Err(Error::Domain(format!("{what} {t} is negative")));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.dt > 0.0) || !(self.t_end > 0.0) {
            return Err(Error::Config("dt and t_end must be positive".into()));
        }
        self.on_grid(self.t_end, "horizon")?;
        if self.branch_times.is_empty() {
            return Err(Error::Config("at least one branch time is required".into()));
        }
        for &c in &self.branch_times {
            self.on_grid(c, "branch time")?;
            if c >= self.t_end {
                return Err(Error::Domain(format!(
                    "branch time {c} must precede the horizon {}",
                    self.t_end
                )));
            }
        }
        if !(self.anchor > (2.0 * self.t_end).powi(2)) {
            return Err(Error::Config(format!(
                "anchor {} must exceed (2 t_end)^2 = {}",
                self.anchor,
                (2.0 * self.t_end).powi(2)
            )));
        }
        if let Some(tau) = self.inject_jump {
            let k = self.on_grid(tau, "jump time")?;
            if k == 0 || k >= self.steps() {
                return Err(Error::Domain(format!(
                    "jump time {tau} must lie strictly inside (0, t_end)"
                )));
            }
        }
        Ok(())
    }

    /// Initial data with `x(0) = x0` and unit density.
    pub fn initial_data(&self, x0: f64) -> Result<InitialData> {
        let rho = ScalarField::constant(self.grid, 1.0);
        let mut comp = vec![0.0; self.grid.dim()];
        comp[0] = self.anchor - x0;
        let m = VectorField::constant(self.grid, &comp);
        let e0 = total_energy(&rho, &m, &self.law)?;
        InitialData::new(rho, m, e0)
    }

    fn unit(&self) -> VectorField {
        let mut comp = vec![0.0; self.grid.dim()];
        comp[0] = 1.0;
        VectorField::constant(self.grid, &comp)
    }

    /// `x` encoded by a momentum field.
    pub fn decode(&self, m: &VectorField) -> Result<f64> {
        Ok(self.anchor - m.pairing(&self.unit())? / self.grid.measure())
    }
}

/// One branch of the funnel as a function of time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Branch {
    /// `(t + sqrt(x0))^2`, the only solution from `x0 > 0`.
    Unique { x0: f64 },
    /// `max(t - c, 0)^2`.
    Delayed { c: f64 },
    /// `x ≡ 0`.
    Rest,
}

impl Branch {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Branch::Unique { x0 } => (t + x0.sqrt()).powi(2),
            Branch::Delayed { c } => (t - c).max(0.0).powi(2),
            Branch::Rest => 0.0,
        }
    }

    fn id(&self) -> String {
        match *self {
            Branch::Unique { .. } => "funnel_unique".into(),
            Branch::Delayed { c } => format!("funnel_c{c:09.6}"),
            Branch::Rest => "funnel_rest".into(),
        }
    }
}

/// Largest midpoint defect `|(x_{i+1} - x_i)/dt - (sqrt x_i + sqrt x_{i+1})|`.
/// The midpoint average of `2 sqrt x` is exact on every branch.
pub fn ode_residual(xs: &[f64], dt: f64) -> f64 {
    xs.windows(2)
        .map(|w| ((w[1] - w[0]) / dt - (w[0].abs().sqrt() + w[1].abs().sqrt())).abs())
        .fold(0.0, f64::max)
}

/// The generator: every funnel branch compatible with the data.
#[derive(Debug, Clone)]
pub struct FunnelSystem {
    pub config: FunnelConfig,
}

impl FunnelSystem {
    pub fn new(config: FunnelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Branches reachable from `x0`.
    pub fn branches(&self, x0: f64) -> Result<Vec<Branch>> {
        if x0 > AT_ZERO {
            Ok(vec![Branch::Unique { x0 }])
        } else if x0 >= -AT_ZERO {
            let mut cs = self.config.branch_times.clone();
            cs.sort_by(f64::total_cmp);
            cs.dedup();
            let mut out: Vec<Branch> = cs.into_iter().map(|c| Branch::Delayed { c }).collect();
            out.push(Branch::Rest);
            Ok(out)
        } else {
            Err(Error::Domain(format!("funnel state x0 = {x0} is negative")))
        }
    }

    fn embed(&self, data: &InitialData, x0: f64, branch: Branch) -> Result<Trajectory> {
        let cfg = &self.config;
        let steps = cfg.steps();
        let unit = self.config.unit();
        let mut rho = Vec::with_capacity(steps + 1);
        let mut m = Vec::with_capacity(steps + 1);
        let mut energy = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let x = branch.eval(i as f64 * cfg.dt);
            // Branching members treat a numerically zero x0 as exactly zero,
            // so every member starts from m0 itself.
            let start = if matches!(branch, Branch::Unique { .. }) {
                x0
            } else {
                0.0
            };
            let mi = data.m0.lincomb(1.0, &unit, start - x)?;
            energy.push(total_energy(&data.rho0, &mi, &cfg.law)?);
            rho.push(data.rho0.clone());
            m.push(mi);
        }
        if let Some(tau) = cfg.inject_jump {
            let k = (tau / cfg.dt).round() as usize;
            energy[k] = energy[k - 1];
        }
        if energy[0] > data.e0 {
            return Err(Error::EnergyIncrease {
                time: 0.0,
                incoming: energy[0],
                outgoing: data.e0,
            });
        }
        let signal = EnergySignal::new(cfg.dt, data.e0, energy)?;
        Trajectory::new(branch.id(), cfg.dt, rho, m, signal)
    }

    /// Decoded `x(t_i)` of a trajectory.
    pub fn path(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        traj.m().iter().map(|m| self.config.decode(m)).collect()
    }
}

impl CandidateGenerator for FunnelSystem {
    fn generate(&self, data: &InitialData) -> Result<TrajectorySet> {
        if data.grid() != &self.config.grid {
            return Err(Error::Shape("initial data grid differs from the funnel grid".into()));
        }
        let x0 = self.config.decode(&data.m0)?;
        let members = self
            .branches(x0)?
            .into_iter()
            .map(|b| self.embed(data, x0, b))
            .collect::<Result<Vec<_>>>()?;
        TrajectorySet::new(data.clone(), members)
    }
}

/// The branching family from `x(0) = 0`: `max(t - c, 0)^2` for each `c`,
/// plus the rest state.
pub fn toy_funnel_solutions(branch_times: &[f64], t_end: f64, dt: f64) -> Result<TrajectorySet> {
    let system = FunnelSystem::new(FunnelConfig::new(branch_times.to_vec(), t_end, dt)?)?;
    let data = system.config.initial_data(0.0)?;
    system.generate(&data)
}
