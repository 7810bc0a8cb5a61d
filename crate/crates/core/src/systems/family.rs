//! Parameter families of solver runs from one initial datum, deduplicated
//! in the trajectory metric and certified against restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::CandidateGenerator;
use crate::state::{InitialData, NegNormConfig};
use crate::trajectory::{shift, QMetric, Trajectory, TrajectorySet};

use super::ns::{ns_solve_forced, SolverConfig};

/// What varies across the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum FamilyParams {
    /// Artificial viscosity levels.
    Eps(Vec<f64>),
    /// Seeds of a per-cell perturbation `eps_art (1 + xi / 2)`,
    /// `xi ~ U[-1, 1]`, of the solver's artificial viscosity.
    Seed(Vec<u64>),
}

impl FamilyParams {
    pub fn len(&self) -> usize {
        match self {
            FamilyParams::Eps(v) => v.len(),
            FamilyParams::Seed(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, i: usize) -> String {
        match self {
            FamilyParams::Eps(v) => format!("eps{:.3e}", v[i]),
            FamilyParams::Seed(v) => format!("seed{:020}", v[i]),
        }
    }

    fn apply(&self, i: usize, base: &SolverConfig) -> SolverConfig {
        let mut cfg = base.clone();
        match self {
            FamilyParams::Eps(v) => cfg.eps_art = v[i],
            FamilyParams::Seed(v) => {
                let mut rng = ChaCha8Rng::seed_from_u64(v[i]);
                let profile = (0..cfg.grid.len())
                    .map(|_| 1.0 + 0.5 * rng.random_range(-1.0..=1.0))
                    .collect();
                cfg.eps_profile = Some(profile);
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub params: FamilyParams,
    pub delta_dup: f64,
    /// Times at which each member is restarted to certify its tail.
    #[serde(default)]
    pub restart_times: Vec<f64>,
}

impl FamilyConfig {
    pub fn new(params: FamilyParams, delta_dup: f64) -> Self {
        Self {
            params,
            delta_dup,
            restart_times: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::Config("family needs at least one parameter".into()));
        }
        if let FamilyParams::Eps(v) = &self.params {
            if v.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
                return Err(Error::Config(
                    "artificial viscosities must be finite and nonnegative".into(),
                ));
            }
        }
        if !(self.delta_dup >= 0.0) {
            return Err(Error::Config("delta_dup must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Rerunning the generator from `member(time)` reproduced its tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCertificate {
    pub member: String,
    pub time: f64,
    pub distance: f64,
    pub passed: bool,
}

/// A run merged into an earlier member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duplicate {
    pub id: String,
    pub kept: String,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct Family {
    pub set: TrajectorySet,
    pub certificates: Vec<ShiftCertificate>,
    pub dropped: Vec<Duplicate>,
}

fn run_all(data: &InitialData, family: &FamilyConfig, solver: &SolverConfig) -> Result<Vec<Trajectory>> {
    (0..family.params.len())
        .into_par_iter()
        .map(|i| {
            let cfg = family.params.apply(i, solver);
            ns_solve_forced(data, &cfg, None, &family.params.label(i))
        })
        .collect()
}

/// Runs every parameter, keeps runs farther than `delta_dup` from all
/// earlier keepers and certifies each keeper at the restart times.
pub fn generate_candidates(data: &InitialData, family: &FamilyConfig, solver: &SolverConfig) -> Result<Family> {
    family.validate()?;
    let runs = run_all(data, family, solver)?;
    let grid = data.grid();
    let metric = QMetric::new(grid, NegNormConfig::default_for(grid))?;
    let horizon = solver.t_end;
    let mut kept: Vec<(usize, Trajectory)> = Vec::new();
    let mut dropped = Vec::new();
    for (i, run) in runs.into_iter().enumerate() {
        let mut nearest: Option<(f64, &str)> = None;
        for (_, k) in &kept {
            let d = metric.distance(&run, k, horizon)?;
            if nearest.is_none_or(|(best, _)| d < best) {
                nearest = Some((d, k.id()));
            }
        }
        match nearest {
            Some((d, id)) if d <= family.delta_dup => dropped.push(Duplicate {
                id: run.id().to_string(),
                kept: id.to_string(),
                distance: d,
            }),
            _ => kept.push((i, run)),
        }
    }
    if kept.is_empty() {
        return Err(Error::Generator("family is empty after deduplication".into()));
    }
    let certificates = certify(&kept, family, solver, &metric)?;
    let set = TrajectorySet::new(data.clone(), kept.into_iter().map(|(_, q)| q).collect())?;
    Ok(Family {
        set,
        certificates,
        dropped,
    })
}

fn certify(
    kept: &[(usize, Trajectory)],
    family: &FamilyConfig,
    solver: &SolverConfig,
    metric: &QMetric,
) -> Result<Vec<ShiftCertificate>> {
    let jobs: Vec<(usize, f64)> = kept
        .iter()
        .enumerate()
        .flat_map(|(j, _)| family.restart_times.iter().map(move |&t| (j, t)))
        .collect();
    jobs.into_par_iter()
        .map(|(j, t)| {
            let (param, member) = &kept[j];
            let mut cfg = family.params.apply(*param, solver);
            cfg.t_end = solver.t_end - t;
            let tail = shift(member, t)?;
            let rerun = ns_solve_forced(&member.evaluate(t)?.to_initial_data(), &cfg, None, member.id())?;
            let distance = metric.distance(&tail, &rerun, cfg.t_end)?;
            Ok(ShiftCertificate {
                member: member.id().to_string(),
                time: t,
                distance,
                passed: distance <= family.delta_dup,
            })
        })
        .collect()
}

/// The NS solver as a candidate generator. Every restart reruns the whole
/// family over the full configured horizon.
#[derive(Debug, Clone)]
pub struct NsSystem {
    pub solver: SolverConfig,
    pub family: FamilyConfig,
}

impl CandidateGenerator for NsSystem {
    fn generate(&self, data: &InitialData) -> Result<TrajectorySet> {
        let mut family = self.family.clone();
        family.restart_times.clear();
        Ok(generate_candidates(data, &family, &self.solver)?.set)
    }
}
