//! Trajectories on a uniform time grid, the shift and continuation
//! operators, the trajectory-space metric and the Hausdorff distance between
//! finite trajectory sets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{
    read_scalar, read_vector, write_scalar, write_vector, Field, Grid, InitialData, NegNormConfig, NegSobolev,
    ScalarField, VectorField,
};

/// Relative slack used when deciding whether a time lies on the grid.
const GRID_SNAP: f64 = 1e-9;

/// Largest splice discrepancy accepted by [`continue_at`].
pub const SPLICE_TOL: f64 = 1e-10;

/// Right-continuous step function `E(t) = values[i]` on `[t_i, t_{i+1})`
/// with an explicit `E(0-)` slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySignal {
    dt: f64,
    initial: f64,
    values: Vec<f64>,
}

impl EnergySignal {
    pub fn new(dt: f64, initial: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        if values.is_empty() {
            return Err(Error::Domain("energy signal needs at least one sample".into()));
        }
        if !initial.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("energy samples must be finite".into()));
        }
        Ok(Self { dt, initial, values })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `E(0-)`.
    pub fn initial(&self) -> f64 {
        self.initial
    }

    /// `E(t_i+)` for every sample.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| i as f64 * self.dt).collect()
    }

    /// `E(t_i+)`.
    pub fn right(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// `E(t_i-)`.
    pub fn left(&self, i: usize) -> f64 {
        if i == 0 {
            self.initial
        } else {
            self.values[i - 1]
        }
    }

    /// Value of the step function at an arbitrary `t >= 0`.
    pub fn at(&self, t: f64) -> f64 {
        let i = ((t / self.dt) + GRID_SNAP).floor().max(0.0) as usize;
        self.values[i.min(self.values.len() - 1)]
    }

    /// First index where the signal increases, counting the `E(0-)` slot.
    pub fn first_increase(&self) -> Option<usize> {
        if self.values[0] > self.initial {
            return Some(0);
        }
        self.values.windows(2).position(|w| w[1] > w[0]).map(|i| i + 1)
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.first_increase().is_none()
    }

    /// `∫_0^horizon |E - F| dt` for two signals on the same time step.
    pub fn l1_distance(&self, other: &Self, horizon: f64) -> f64 {
        let full = ((horizon / self.dt) + GRID_SNAP).floor() as usize;
        let mut acc = 0.0;
        let n = self.values.len().min(other.values.len());
        for i in 0..full.min(n) {
            acc += (self.values[i] - other.values[i]).abs();
        }
        acc *= self.dt;
        let rest = horizon - full as f64 * self.dt;
        if rest > GRID_SNAP * self.dt && full < n {
            acc += rest * (self.values[full] - other.values[full]).abs();
        }
        acc
    }
}

/// State at a grid time, borrowed from a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct StateAt<'a> {
    pub rho: &'a ScalarField,
    pub m: &'a VectorField,
    pub e_minus: f64,
    pub e_plus: f64,
}

impl StateAt<'_> {
    /// Restart data `[rho(t), m(t), E(t-)]`.
    pub fn to_initial_data(&self) -> InitialData {
        InitialData {
            rho0: self.rho.clone(),
            m0: self.m.clone(),
            e0: self.e_minus,
        }
    }
}

/// An element of the trajectory space: density and momentum snapshots on a
/// uniform time grid plus the energy signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    id: String,
    grid: Grid,
    dt: f64,
    rho: Vec<ScalarField>,
    m: Vec<VectorField>,
    energy: EnergySignal,
    raw_energy: Option<Vec<f64>>,
    continuity: [f64; 2],
}

impl Trajectory {
    /// Builds a trajectory and records its weak time-continuity constants
    /// `max_i ‖q(t_{i+1}) - q(t_i)‖_{-ell} / dt` for density and momentum.
    pub fn new(
        id: impl Into<String>,
        dt: f64,
        rho: Vec<ScalarField>,
        m: Vec<VectorField>,
        energy: EnergySignal,
    ) -> Result<Self> {
        let Some(first) = rho.first() else {
            return Err(Error::Shape("trajectory needs at least one snapshot".into()));
        };
        let grid = *first.grid();
        if rho.len() != m.len() || rho.len() != energy.len() {
            return Err(Error::Shape(format!(
                "{} density, {} momentum and {} energy samples",
                rho.len(),
                m.len(),
                energy.len()
            )));
        }
        if rho.iter().any(|f| *f.grid() != grid) || m.iter().any(|f| *f.grid() != grid) {
            return Err(Error::Shape("snapshots live on different grids".into()));
        }
        if (energy.dt() - dt).abs() > GRID_SNAP * dt {
            return Err(Error::Shape("energy signal uses a different time step".into()));
        }
        let norm = NegSobolev::new(&grid, NegNormConfig::default_for(&grid))?;
        let rate = |fields: &[Vec<&[f64]>]| -> f64 {
            fields
                .windows(2)
                .map(|w| norm.distance(&w[1], &w[0]) / dt)
                .fold(0.0, f64::max)
        };
        let rc: Vec<Vec<&[f64]>> = rho.iter().map(|f| f.components()).collect();
        let mc: Vec<Vec<&[f64]>> = m.iter().map(|f| f.components()).collect();
        let continuity = [rate(&rc), rate(&mc)];
        Ok(Self {
            id: id.into(),
            grid,
            dt,
            rho,
            m,
            energy,
            raw_energy: None,
            continuity,
        })
    }

    /// Attaches the unmonotonised energy samples a solver produced.
    pub fn with_raw_energy(mut self, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != self.rho.len() {
            return Err(Error::Shape("raw energy length differs from the time grid".into()));
        }
        self.raw_energy = Some(raw);
        Ok(self)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Replaces the energy signal (same time grid).
    pub fn with_energy(mut self, energy: EnergySignal) -> Result<Self> {
        if energy.len() != self.rho.len() || (energy.dt() - self.dt).abs() > GRID_SNAP * self.dt {
            return Err(Error::Shape("replacement energy does not match the time grid".into()));
        }
        self.energy = energy;
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of time samples (steps + 1).
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        (self.rho.len() - 1) as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        self.energy.times()
    }

    pub fn rho(&self) -> &[ScalarField] {
        &self.rho
    }

    pub fn m(&self) -> &[VectorField] {
        &self.m
    }

    pub fn energy(&self) -> &EnergySignal {
        &self.energy
    }

    pub fn raw_energy(&self) -> Option<&[f64]> {
        self.raw_energy.as_deref()
    }

    /// Largest gap between the stored (monotone) and raw energy.
    pub fn monotonization_gap(&self) -> f64 {
        self.raw_energy
            .as_ref()
            .map(|raw| {
                raw.iter()
                    .zip(self.energy.values())
                    .map(|(r, e)| (r - e).abs())
                    .fold(0.0, f64::max)
            })
            .unwrap_or(0.0)
    }

    /// Recorded weak time-continuity constants `[C_rho, C_m]`.
    pub fn continuity_constants(&self) -> [f64; 2] {
        self.continuity
    }

    /// Index of grid time `t`, or an off-grid error naming its neighbours.
    pub fn step_index(&self, t: f64) -> Result<usize> {
        step_index(t, self.dt, self.rho.len() - 1)
    }

    /// State at grid time `t` with both one-sided energies.
    pub fn evaluate(&self, t: f64) -> Result<StateAt<'_>> {
        let k = self.step_index(t)?;
        Ok(self.state(k))
    }

    pub fn state(&self, k: usize) -> StateAt<'_> {
        StateAt {
            rho: &self.rho[k],
            m: &self.m[k],
            e_minus: self.energy.left(k),
            e_plus: self.energy.right(k),
        }
    }
}

pub(crate) fn step_index(t: f64, dt: f64, last: usize) -> Result<usize> {
    let t_end = last as f64 * dt;
    if !(t >= -GRID_SNAP * dt) || t > t_end + GRID_SNAP * dt.max(t_end) {
        return Err(Error::Domain(format!("time {t} outside [0, {t_end}]")));
    }
    let k = (t / dt).round();
    if (t - k * dt).abs() > GRID_SNAP * dt.max(t.abs()) {
        let below = (t / dt).floor() * dt;
        return Err(Error::OffGrid {
            requested: t,
            below,
            above: below + dt,
        });
    }
    Ok((k.max(0.0) as usize).min(last))
}

/// `S_T q`: the trajectory restarted at grid time `T`, with
/// `E(0-) := E(T-)`.
pub fn shift(traj: &Trajectory, t: f64) -> Result<Trajectory> {
    let k = traj.step_index(t)?;
    if k == traj.len() - 1 && traj.len() > 1 {
        return Err(Error::Domain(format!(
            "shift time {t} must lie before the horizon {}",
            traj.t_end()
        )));
    }
    let energy = EnergySignal::new(traj.dt, traj.energy.left(k), traj.energy.values[k..].to_vec())?;
    let raw = traj.raw_energy.as_ref().map(|r| r[k..].to_vec());
    Ok(Trajectory {
        id: if k == 0 {
            traj.id.clone()
        } else {
            format!("{}+{}", traj.id, k)
        },
        grid: traj.grid,
        dt: traj.dt,
        rho: traj.rho[k..].to_vec(),
        m: traj.m[k..].to_vec(),
        energy,
        raw_energy: raw,
        continuity: traj.continuity,
    })
}

/// `q1 ∪_T q2`: `q1` up to `T`, then `q2` restarted at `T`. `q2` must start
/// from `q1(T)` and its `E(0-)` must not exceed `q1.E(T-)`.
pub fn continue_at(q1: &Trajectory, q2: &Trajectory, t: f64) -> Result<Trajectory> {
    if q1.grid != q2.grid || (q1.dt - q2.dt).abs() > GRID_SNAP * q1.dt {
        return Err(Error::Shape("spliced trajectories use different grids".into()));
    }
    let k = q1.step_index(t)?;
    let norm = NegSobolev::new(&q1.grid, NegNormConfig::default_for(&q1.grid))?;
    let discrepancy = state_distance(&norm, q1.state(k), q2.state(0));
    if discrepancy > SPLICE_TOL {
        return Err(Error::Continuation {
            time: t,
            discrepancy,
            tolerance: SPLICE_TOL,
        });
    }
    let outgoing = q1.energy.left(k);
    let incoming = q2.energy.initial;
    if incoming > outgoing {
        return Err(Error::EnergyIncrease {
            time: t,
            incoming,
            outgoing,
        });
    }
    let mut rho = q1.rho[..=k].to_vec();
    rho.extend_from_slice(&q2.rho[1..]);
    let mut m = q1.m[..=k].to_vec();
    m.extend_from_slice(&q2.m[1..]);
    let mut values = q1.energy.values[..k].to_vec();
    values.extend_from_slice(&q2.energy.values);
    let energy = EnergySignal::new(q1.dt, q1.energy.initial, values)?;
    let raw = match (&q1.raw_energy, &q2.raw_energy) {
        (Some(a), Some(b)) => {
            let mut r = a[..k].to_vec();
            r.extend_from_slice(b);
            Some(r)
        }
        _ => None,
    };
    Ok(Trajectory {
        id: q1.id.clone(),
        grid: q1.grid,
        dt: q1.dt,
        rho,
        m,
        energy,
        raw_energy: raw,
        continuity: [
            q1.continuity[0].max(q2.continuity[0]),
            q1.continuity[1].max(q2.continuity[1]),
        ],
    })
}

fn state_distance(norm: &NegSobolev, a: StateAt<'_>, b: StateAt<'_>) -> f64 {
    norm.distance(&a.rho.components(), &b.rho.components()) + norm.distance(&a.m.components(), &b.m.components())
}

/// Weights of the three components of the trajectory metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QWeights {
    pub rho: f64,
    pub m: f64,
    pub energy: f64,
}

impl Default for QWeights {
    fn default() -> Self {
        Self {
            rho: 1.0,
            m: 1.0,
            energy: 1.0,
        }
    }
}

/// Metric on trajectories: `w_rho sup_t ‖Δrho‖_{-ell} + w_m sup_t ‖Δm‖_{-ell}
/// + w_E ∫ |ΔE| dt`, all over `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct QMetric {
    norm: NegSobolev,
    pub weights: QWeights,
}

/// A trajectory mapped to weighted spectral coefficients, so distances
/// reduce to Euclidean norms.
#[derive(Debug, Clone)]
pub struct Embedded<'a> {
    traj: &'a Trajectory,
    rho: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
}

impl QMetric {
    pub fn new(grid: &Grid, cfg: NegNormConfig) -> Result<Self> {
        Ok(Self {
            norm: NegSobolev::new(grid, cfg)?,
            weights: QWeights::default(),
        })
    }

    pub fn with_weights(mut self, weights: QWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn norm(&self) -> &NegSobolev {
        &self.norm
    }

    /// Distance between two states (fields only).
    pub fn state_distance(&self, a: StateAt<'_>, b: StateAt<'_>) -> f64 {
        self.weights.rho * self.norm.distance(&a.rho.components(), &b.rho.components())
            + self.weights.m * self.norm.distance(&a.m.components(), &b.m.components())
    }

    pub fn embed<'a>(&self, traj: &'a Trajectory) -> Result<Embedded<'a>> {
        if traj.grid() != self.norm.grid() {
            return Err(Error::Shape("trajectory grid differs from the metric grid".into()));
        }
        let weighted = |values: &[f64]| self.norm.weighted_coefficients(values);
        let rho = traj.rho.iter().map(|f| weighted(f.values())).collect();
        let m = traj
            .m
            .iter()
            .map(|f| f.comps().iter().flat_map(|c| weighted(c)).collect())
            .collect();
        Ok(Embedded { traj, rho, m })
    }

    fn steps_for(&self, a: &Trajectory, b: &Trajectory, horizon: f64) -> Result<usize> {
        if a.grid != b.grid {
            return Err(Error::Shape("trajectories on different grids".into()));
        }
        if (a.dt - b.dt).abs() > GRID_SNAP * a.dt {
            return Err(Error::Shape("trajectories on different time grids".into()));
        }
        let limit = a.t_end().min(b.t_end());
        if !(horizon >= 0.0) || horizon > limit * (1.0 + GRID_SNAP) + GRID_SNAP {
            return Err(Error::Domain(format!(
                "horizon {horizon} exceeds the common range {limit}"
            )));
        }
        Ok((((horizon / a.dt) + GRID_SNAP).floor() as usize)
            .min(a.len() - 1)
            .min(b.len() - 1))
    }

    pub fn distance_embedded(&self, a: &Embedded<'_>, b: &Embedded<'_>, horizon: f64) -> Result<f64> {
        let k = self.steps_for(a.traj, b.traj, horizon)?;
        let sup = |x: &[Vec<f64>], y: &[Vec<f64>]| -> f64 {
            (0..=k)
                .map(|i| {
                    x[i].iter()
                        .zip(&y[i])
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max)
        };
        Ok(self.weights.rho * sup(&a.rho, &b.rho)
            + self.weights.m * sup(&a.m, &b.m)
            + self.weights.energy * a.traj.energy.l1_distance(&b.traj.energy, horizon))
    }

    pub fn distance(&self, a: &Trajectory, b: &Trajectory, horizon: f64) -> Result<f64> {
        self.distance_embedded(&self.embed(a)?, &self.embed(b)?, horizon)
    }
}

/// Trajectory-space distance on `[0, horizon]` with unit weights.
pub fn q_distance(q1: &Trajectory, q2: &Trajectory, horizon: f64, cfg: NegNormConfig) -> Result<f64> {
    QMetric::new(q1.grid(), cfg)?.distance(q1, q2, horizon)
}

/// Finite solution set sharing one initial datum.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    data: InitialData,
    members: Vec<Trajectory>,
}

/// Largest initial-state mismatch tolerated among set members.
pub const SET_INITIAL_TOL: f64 = 1e-12;

impl TrajectorySet {
    /// Validates that members share grid, time grid and initial fields.
    pub fn new(data: InitialData, members: Vec<Trajectory>) -> Result<Self> {
        let grid = *data.grid();
        let norm = NegSobolev::new(&grid, NegNormConfig::default_for(&grid))?;
        if let Some(first) = members.first() {
            for q in &members {
                if *q.grid() != grid {
                    return Err(Error::Shape(format!("member {} uses a different grid", q.id)));
                }
                if (q.dt - first.dt).abs() > GRID_SNAP * first.dt || q.len() != first.len() {
                    return Err(Error::Shape(format!("member {} uses a different time grid", q.id)));
                }
                let s = q.state(0);
                let gap = norm.distance(&s.rho.components(), &data.rho0.components())
                    + norm.distance(&s.m.components(), &data.m0.components());
                if gap > SET_INITIAL_TOL {
                    return Err(Error::Shape(format!(
                        "member {} starts {gap:e} away from the shared initial data",
                        q.id
                    )));
                }
            }
        }
        let mut ids: Vec<&str> = members.iter().map(|q| q.id()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Shape("member ids must be unique".into()));
        }
        Ok(Self { data, members })
    }

    pub fn data(&self) -> &InitialData {
        &self.data
    }

    pub fn members(&self) -> &[Trajectory] {
        &self.members
    }

    pub fn into_members(self) -> Vec<Trajectory> {
        self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.members.iter().map(|q| q.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Trajectory> {
        self.members.iter().find(|q| q.id == id)
    }

    /// Members whose id is in `keep`, in original order.
    pub fn retain_ids(&self, keep: &[String]) -> Self {
        Self {
            data: self.data.clone(),
            members: self
                .members
                .iter()
                .filter(|q| keep.iter().any(|k| k == q.id()))
                .cloned()
                .collect(),
        }
    }

    /// Common horizon of all members.
    pub fn t_end(&self) -> f64 {
        self.members.iter().map(|q| q.t_end()).fold(f64::INFINITY, f64::min)
    }
}

/// Hausdorff distance between two finite sets under the trajectory metric.
pub fn hausdorff(a: &TrajectorySet, b: &TrajectorySet, horizon: f64, cfg: NegNormConfig) -> Result<f64> {
    let grid = a.data.grid();
    let metric = QMetric::new(grid, cfg)?;
    hausdorff_with(&metric, a.members(), b.members(), horizon)
}

/// Hausdorff distance between member lists with a prepared metric.
pub fn hausdorff_with(metric: &QMetric, a: &[Trajectory], b: &[Trajectory], horizon: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("Hausdorff distance of an empty set".into()));
    }
    let ea: Vec<Embedded<'_>> = a.iter().map(|q| metric.embed(q)).collect::<Result<_>>()?;
    let eb: Vec<Embedded<'_>> = b.iter().map(|q| metric.embed(q)).collect::<Result<_>>()?;
    let mut d = vec![vec![0.0; eb.len()]; ea.len()];
    for (i, x) in ea.iter().enumerate() {
        for (j, y) in eb.iter().enumerate() {
            d[i][j] = metric.distance_embedded(x, y, horizon)?;
        }
    }
    let ab = d
        .iter()
        .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let ba = (0..eb.len())
        .map(|j| d.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    Ok(ab.max(ba))
}

// ---------------------------------------------------------------------------
// Trajectory bundles.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotEntry {
    t: f64,
    rho: String,
    m: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleManifest {
    id: String,
    grid: Grid,
    dt: f64,
    steps: usize,
    energy: EnergySignal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_energy: Option<Vec<f64>>,
    continuity_constants: [f64; 2],
    snapshots: Vec<SnapshotEntry>,
}

/// Writes a trajectory bundle: `manifest.json` plus one field file pair per
/// snapshot.
pub fn write_bundle(dir: &Path, traj: &Trajectory) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut snapshots = Vec::with_capacity(traj.len());
    for (k, t) in traj.times().into_iter().enumerate() {
        let rho = format!("rho_{k:06}");
        let m = format!("m_{k:06}");
        write_scalar(&dir.join(&rho), &traj.rho[k], "density")?;
        write_vector(&dir.join(&m), &traj.m[k], "momentum")?;
        snapshots.push(SnapshotEntry {
            t,
            rho: format!("{rho}.json"),
            m: format!("{m}.json"),
        });
    }
    let manifest = BundleManifest {
        id: traj.id.clone(),
        grid: traj.grid,
        dt: traj.dt,
        steps: traj.len() - 1,
        energy: traj.energy.clone(),
        raw_energy: traj.raw_energy.clone(),
        continuity_constants: traj.continuity,
        snapshots,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<Trajectory> {
    let manifest: BundleManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    manifest.grid.validate()?;
    if manifest.snapshots.len() != manifest.steps + 1 {
        return Err(Error::Format("snapshot count does not match the step count".into()));
    }
    let mut rho = Vec::with_capacity(manifest.snapshots.len());
    let mut m = Vec::with_capacity(manifest.snapshots.len());
    for s in &manifest.snapshots {
        rho.push(read_scalar(&dir.join(&s.rho))?);
        m.push(read_vector(&dir.join(&s.m))?);
    }
    let mut traj = Trajectory::new(manifest.id, manifest.dt, rho, m, manifest.energy)?;
    if let Some(raw) = manifest.raw_energy {
        traj = traj.with_raw_energy(raw)?;
    }
    Ok(traj)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetManifest {
    e0: f64,
    rho0: String,
    m0: String,
    members: Vec<String>,
}

/// Writes a trajectory set: `set.json`, the shared initial fields and one
/// bundle directory per member.
pub fn write_set(dir: &Path, set: &TrajectorySet) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_scalar(&dir.join("rho0"), &set.data.rho0, "density")?;
    write_vector(&dir.join("m0"), &set.data.m0, "momentum")?;
    let mut members = Vec::new();
    for (i, q) in set.members.iter().enumerate() {
        let name = format!("member_{i:03}");
        write_bundle(&dir.join(&name), q)?;
        members.push(name);
    }
    let manifest = SetManifest {
        e0: set.data.e0,
        rho0: "rho0.json".into(),
        m0: "m0.json".into(),
        members,
    };
    fs::write(dir.join("set.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_set(dir: &Path) -> Result<TrajectorySet> {
    let manifest: SetManifest = serde_json::from_str(&fs::read_to_string(dir.join("set.json"))?)?;
    let data = InitialData::new(
        read_scalar(&dir.join(&manifest.rho0))?,
        read_vector(&dir.join(&manifest.m0))?,
        manifest.e0,
    )?;
    let members = manifest
        .members
        .iter()
        .map(|name| read_bundle(&dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    TrajectorySet::new(data, members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Boundary;
    use approx::assert_abs_diff_eq;

    fn grid() -> Grid {
        Grid::new_1d(1.0, 16, Boundary::DirichletNoslip).unwrap()
    }

    /// Travelling-bump trajectory with a decreasing energy.
    fn wave(id: &str, n: usize, dt: f64, phase: f64) -> Trajectory {
        let g = grid();
        let rho = (0..=n)
            .map(|k| {
                let t = k as f64 * dt;
                ScalarField::from_fn(g, |x| {
                    1.0 + 0.1 * (std::f64::consts::PI * x[0]).sin() * (t + phase).cos()
                })
            })
            .collect();
        let m = (0..=n)
            .map(|k| {
                let t = k as f64 * dt;
                VectorField::from_fn(g, |x, _| {
                    0.05 * (2.0 * std::f64::consts::PI * x[0]).sin() * (t * 3.0).sin()
                })
            })
            .collect();
        let e = EnergySignal::new(dt, 2.0, (0..=n).map(|k| 2.0 - 0.1 * k as f64 * dt).collect()).unwrap();
        Trajectory::new(id, dt, rho, m, e).unwrap()
    }

    fn constant(id: &str, n: usize, dt: f64, e: f64) -> Trajectory {
        let g = grid();
        Trajectory::new(
            id,
            dt,
            vec![ScalarField::constant(g, 1.0); n + 1],
            vec![VectorField::zeros(g); n + 1],
            EnergySignal::new(dt, e, vec![e; n + 1]).unwrap(),
        )
        .unwrap()
    }

    fn cfg() -> NegNormConfig {
        NegNormConfig::new(2, 8)
    }

    #[test]
    fn energy_signal_limits() {
        let e = EnergySignal::new(0.5, 3.0, vec![3.0, 3.0, 1.0, 1.0]).unwrap();
        assert_eq!(e.left(2), 3.0);
        assert_eq!(e.right(2), 1.0);
        assert_eq!(e.left(0), 3.0);
        assert!(e.is_nonincreasing());
        assert_eq!(e.at(0.99), 3.0);
        assert_eq!(e.at(1.0), 1.0);
        let up = EnergySignal::new(0.5, 1.0, vec![1.0, 2.0]).unwrap();
        assert_eq!(up.first_increase(), Some(1));
    }

    #[test]
    fn evaluate_on_and_off_grid() {
        let q = wave("a", 10, 0.1, 0.0);
        let s = q.evaluate(0.0).unwrap();
        assert_eq!(s.rho, &q.rho()[0]);
        assert_eq!(s.e_minus, 2.0);
        let s = q.evaluate(0.3).unwrap();
        assert!(s.e_minus > s.e_plus);
        match q.evaluate(0.35) {
            Err(Error::OffGrid { below, above, .. }) => {
                assert_abs_diff_eq!(below, 0.3, epsilon = 1e-12);
                assert_abs_diff_eq!(above, 0.4, epsilon = 1e-12);
            }
            other => panic!("expected off-grid error, got {other:?}"),
        }
        assert!(q.evaluate(1.5).is_err());
        let c = constant("c", 5, 0.2, 1.0);
        assert_eq!(c.evaluate(0.6).unwrap().rho, &ScalarField::constant(grid(), 1.0));
    }

    #[test]
    fn shift_algebra() {
        let q = wave("a", 20, 0.05, 0.3);
        assert_eq!(q_distance(&shift(&q, 0.0).unwrap(), &q, 1.0, cfg()).unwrap(), 0.0);
        let once = shift(&shift(&q, 0.2).unwrap(), 0.35).unwrap();
        let direct = shift(&q, 0.55).unwrap();
        assert!(q_distance(&once, &direct, once.t_end(), cfg()).unwrap() < 1e-15);
        let s = shift(&q, 0.4).unwrap();
        assert_eq!(s.energy().initial(), q.evaluate(0.4).unwrap().e_minus);
        assert!(shift(&q, 0.41).is_err());
        assert!(shift(&q, 1.0).is_err());
    }

    #[test]
    fn continuation_algebra() {
        let q = wave("a", 20, 0.05, 0.3);
        let tail = shift(&q, 0.25).unwrap();
        let spliced = continue_at(&q, &tail, 0.25).unwrap();
        assert!(q_distance(&spliced, &q, 1.0, cfg()).unwrap() <= 1e-12);
        assert_eq!(spliced.energy(), q.energy());

        // early part equals q1, shifted result equals q2
        let other = wave("b", 20, 0.05, 0.3);
        let head = constant("h", 20, 0.05, 5.0);
        assert!(matches!(
            continue_at(&head, &other, 0.25),
            Err(Error::Continuation { .. })
        ));
        let q2 = shift(&other, 0.25).unwrap();
        let joined = continue_at(&q, &q2, 0.25).unwrap();
        for k in 0..=5 {
            assert_eq!(joined.rho()[k], q.rho()[k]);
        }
        let back = shift(&joined, 0.25).unwrap();
        assert!(q_distance(&back, &q2, q2.t_end(), cfg()).unwrap() < 1e-12);
        assert!(joined.energy().is_nonincreasing());

        let hot = q2
            .clone()
            .with_energy(EnergySignal::new(0.05, 10.0, q2.energy().values().to_vec()).unwrap())
            .unwrap();
        assert!(matches!(continue_at(&q, &hot, 0.25), Err(Error::EnergyIncrease { .. })));
    }

    #[test]
    fn metric_examples() {
        let a = wave("a", 10, 0.1, 0.0);
        let b = wave("b", 10, 0.1, 0.5);
        assert_eq!(q_distance(&a, &a, 1.0, cfg()).unwrap(), 0.0);
        let ab = q_distance(&a, &b, 1.0, cfg()).unwrap();
        let ba = q_distance(&b, &a, 1.0, cfg()).unwrap();
        assert!((ab - ba).abs() <= 1e-15);
        assert!(ab > 0.0);
        let e1 = constant("e1", 10, 0.1, 1.0);
        let e2 = constant("e2", 10, 0.1, 2.0);
        assert_abs_diff_eq!(q_distance(&e1, &e2, 1.0, cfg()).unwrap(), 1.0, epsilon = 1e-14);
        assert!(q_distance(&e1, &e2, 1.5, cfg()).is_err());
    }

    #[test]
    fn hausdorff_examples() {
        let g = grid();
        let data = InitialData::new(ScalarField::constant(g, 1.0), VectorField::zeros(g), 2.0).unwrap();
        let q = constant("q", 10, 0.1, 1.0);
        let q2 = constant("q2", 10, 0.1, 1.5);
        let a = TrajectorySet::new(data.clone(), vec![q.clone()]).unwrap();
        let b = TrajectorySet::new(data.clone(), vec![q.clone(), q2.clone()]).unwrap();
        assert_eq!(hausdorff(&a, &a, 1.0, cfg()).unwrap(), 0.0);
        let d = q_distance(&q, &q2, 1.0, cfg()).unwrap();
        assert_abs_diff_eq!(hausdorff(&a, &b, 1.0, cfg()).unwrap(), d, epsilon = 1e-15);
        let empty = TrajectorySet::new(data, vec![]).unwrap();
        assert!(matches!(hausdorff(&a, &empty, 1.0, cfg()), Err(Error::Empty(_))));
    }

    #[test]
    fn set_rejects_mismatched_initial_data() {
        let g = grid();
        let data = InitialData::new(ScalarField::constant(g, 2.0), VectorField::zeros(g), 2.0).unwrap();
        assert!(TrajectorySet::new(data, vec![constant("q", 4, 0.1, 1.0)]).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let q = wave("wave/a", 6, 0.1, 0.2).with_raw_energy(vec![2.0; 7]).unwrap();
        write_bundle(&dir.path().join("q"), &q).unwrap();
        let back = read_bundle(&dir.path().join("q")).unwrap();
        assert_eq!(back, q);

        let data = InitialData::new(q.rho()[0].clone(), q.m()[0].clone(), 2.0).unwrap();
        let set = TrajectorySet::new(data, vec![q.clone(), q.clone().with_id("other")]).unwrap();
        write_set(&dir.path().join("set"), &set).unwrap();
        assert_eq!(read_set(&dir.path().join("set")).unwrap(), set);
    }

    #[test]
    fn continuity_constant_recorded() {
        let c = constant("c", 4, 0.1, 1.0);
        assert_eq!(c.continuity_constants(), [0.0, 0.0]);
        let w = wave("w", 10, 0.1, 0.0);
        assert!(w.continuity_constants()[0] > 0.0);
    }
}
