//! Laplace functionals, the admissibility filter, the minimization cascade
//! and the semigroup checks built on top of it.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{total_energy, PressureLaw};
use crate::state::{Field, Grid, InitialData, NegNormConfig, NegSobolev, ScalarField, SpectralBasis, VectorField};
use crate::trajectory::{shift, QMetric, StateAt, Trajectory, TrajectorySet};

/// Smooth, bounded, strictly increasing map applied to observables.
#[derive(Clone)]
pub struct MonotoneWrapper {
    scale: f64,
    map: WrapperMap,
}

#[derive(Clone)]
enum WrapperMap {
    Tanh,
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for MonotoneWrapper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.map {
            WrapperMap::Tanh => write!(f, "tanh(x / {})", self.scale),
            WrapperMap::Custom { name, .. } => write!(f, "{name}"),
        }
    }
}

impl MonotoneWrapper {
    /// `tanh(x / scale)`.
    pub fn tanh(scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Domain(format!("wrapper scale must be positive, got {scale}")));
        }
        Ok(Self {
            scale,
            map: WrapperMap::Tanh,
        })
    }

    /// `tanh(x / max(1, e0))`, scaled to the energies in play.
    pub fn for_energy(e0: f64) -> Self {
        let scale = if e0.is_finite() { e0.max(1.0) } else { 1.0 };
        Self {
            scale,
            map: WrapperMap::Tanh,
        }
    }

    /// Arbitrary map; the caller vouches for smoothness, monotonicity and
    /// `|f| <= 1`.
    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            scale: 1.0,
            map: WrapperMap::Custom {
                name: name.into(),
                f: Arc::new(f),
            },
        }
    }

    /// `self ∘ beta`.
    pub fn compose(&self, name: &str, beta: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let outer = self.clone();
        Self::custom(format!("{self:?} ∘ {name}"), move |x| outer.apply(beta(x)))
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply(&self, x: f64) -> f64 {
        match &self.map {
            WrapperMap::Tanh => (x / self.scale).tanh(),
            WrapperMap::Custom { f, .. } => f(x),
        }
    }

    /// Bound on `|alpha|`.
    pub fn bound(&self) -> f64 {
        1.0
    }
}

/// First `count` positive rationals in breadth-first Stern–Brocot order:
/// `1, 1/2, 2, 1/3, 2/3, 3/2, 3, 1/4, …`.
pub fn stern_brocot(count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut queue = std::collections::VecDeque::from([((0u64, 1u64), (1u64, 0u64))]);
    while out.len() < count {
        let Some(((a, b), (c, d))) = queue.pop_front() else {
            break;
        };
        let (p, q) = (a + c, b + d);
        out.push(p as f64 / q as f64);
        queue.push_back(((a, b), (p, q)));
        queue.push_back(((p, q), (c, d)));
    }
    out
}

/// Pairs `(k, n)` with `1 <= k <= rates`, `0 <= n <= basis`, ordered by
/// `k + n`, then `k`.
pub fn diagonal_enumeration(rates: usize, basis: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (1..=rates).flat_map(|k| (0..=basis).map(move |n| (k, n))).collect();
    pairs.sort_by_key(|&(k, n)| (k + n, k));
    pairs
}

/// Rates, basis size, stage order and tolerances of the cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSchedule {
    pub rates: Vec<f64>,
    pub basis_size: usize,
    /// `(k, n)`: rate index `k` (1-based) and basis index `n`, where `n = 0`
    /// stands for the energy observable.
    pub enumeration: Vec<(usize, usize)>,
    pub eps_tie: f64,
    pub delta_dup: f64,
    /// Norm used for the duplicate test; defaults to the grid's default.
    #[serde(default)]
    pub metric: Option<NegNormConfig>,
}

impl Default for SelectionSchedule {
    fn default() -> Self {
        Self::new(8, 16, 1e-9, 1e-8).expect("default schedule is valid")
    }
}

impl SelectionSchedule {
    pub fn new(rates: usize, basis_size: usize, eps_tie: f64, delta_dup: f64) -> Result<Self> {
        let s = Self {
            rates: stern_brocot(rates),
            basis_size,
            enumeration: diagonal_enumeration(rates, basis_size),
            eps_tie,
            delta_dup,
            metric: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Config("rates must be positive and finite".into()));
        }
        if !(self.eps_tie >= 0.0) || !(self.delta_dup >= 0.0) {
            return Err(Error::Config("tolerances must be nonnegative".into()));
        }
        if let Some(&(k, n)) = self
            .enumeration
            .iter()
            .find(|&&(k, n)| k == 0 || k > self.rates.len() || n > self.basis_size)
        {
            return Err(Error::Config(format!("stage ({k}, {n}) outside the schedule")));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.enumeration.len()
    }
}

/// First elements of an orthonormal vector basis: vector slot `(n-1) % N`
/// times the scalar eigenmodes in increasing eigenvalue order.
#[derive(Debug, Clone)]
pub struct VectorBasis {
    grid: Grid,
    elements: Vec<VectorField>,
}

impl VectorBasis {
    pub fn new(grid: &Grid, count: usize) -> Result<Self> {
        let dim = grid.dim();
        let spatial = count.div_ceil(dim).max(1);
        if (0..dim).any(|a| grid.cells(a) / 2 < spatial) {
            return Err(Error::Shape(format!(
                "{count} basis elements need at least {} cells per axis",
                2 * spatial
            )));
        }
        let basis = SpectralBasis::new(grid, spatial)?;
        let order = basis.modes_by_eigenvalue();
        let elements = (1..=count)
            .map(|n| {
                let comp = (n - 1) % dim;
                let samples = basis.mode_samples(order[(n - 1) / dim]);
                let mut comps = vec![vec![0.0; grid.len()]; dim];
                comps[comp] = samples;
                VectorField::new(*grid, comps)
            })
            .collect::<Result<_>>()?;
        Ok(Self { grid: *grid, elements })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Element `e_n`, `n >= 1`.
    pub fn element(&self, n: usize) -> Result<&VectorField> {
        n.checked_sub(1)
            .and_then(|i| self.elements.get(i))
            .ok_or_else(|| Error::Domain(format!("basis index {n} outside 1..={}", self.elements.len())))
    }

    /// `∫ m · e_n dx`.
    pub fn pairing(&self, m: &VectorField, n: usize) -> Result<f64> {
        if m.grid() != &self.grid {
            return Err(Error::Shape("momentum and basis live on different grids".into()));
        }
        m.pairing(self.element(n)?)
    }
}

/// How samples are continued between grid times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Right-continuous steps, as for the energy.
    Step,
    /// Piecewise linear, as for weakly continuous fields.
    Linear,
}

/// A bounded observable sampled on a trajectory's time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledObservable {
    pub dt: f64,
    pub values: Vec<f64>,
    pub interp: Interpolation,
    pub bound: f64,
}

/// Truncated Laplace integral and the bound on what lies past the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceValue {
    pub value: f64,
    pub tail_bound: f64,
}

/// `∫_0^Δ e^{-λs} ds / Δ` and `∫_0^Δ (s/Δ) e^{-λs} ds / Δ` with `z = λΔ`.
fn segment_moments(z: f64) -> (f64, f64) {
    if z < 0.5 {
        let mut a = 0.0;
        let mut b = 0.0;
        let mut term = 1.0; // (-z)^k / k!
        for k in 0..30 {
            a += term / (k + 1) as f64;
            b += term / (k + 2) as f64;
            term *= -z / (k + 1) as f64;
        }
        (a, b)
    } else {
        let e = (-z).exp();
        (-(-z).exp_m1() / z, (1.0 - e * (1.0 + z)) / (z * z))
    }
}

/// Quadrature weights `w` with `∫_0^T e^{-λt} f(t) dt = Σ w_i f_i` for the
/// interpolated samples.
pub fn laplace_weights(samples: usize, dt: f64, rate: f64, interp: Interpolation) -> Result<Vec<f64>> {
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("Laplace rate must be positive, got {rate}")));
    }
    let mut w = vec![0.0; samples];
    let (a, b) = segment_moments(rate * dt);
    for i in 0..samples.saturating_sub(1) {
        let decay = (-rate * i as f64 * dt).exp() * dt;
        match interp {
            Interpolation::Step => w[i] += decay * a,
            Interpolation::Linear => {
                w[i] += decay * (a - b);
                w[i + 1] += decay * b;
            }
        }
    }
    Ok(w)
}

/// `∫_0^T e^{-λt} F(t) dt` with the tail bound `F_max e^{-λT} / λ`.
pub fn laplace_functional(obs: &SampledObservable, rate: f64) -> Result<LaplaceValue> {
    let w = laplace_weights(obs.values.len(), obs.dt, rate, obs.interp)?;
    let t_end = (obs.values.len().saturating_sub(1)) as f64 * obs.dt;
    Ok(LaplaceValue {
        value: w.iter().zip(&obs.values).map(|(a, b)| a * b).sum(),
        tail_bound: obs.bound * (-rate * t_end).exp() / rate,
    })
}

/// `t ↦ alpha(E(t))`.
pub fn functional_f_energy(traj: &Trajectory, wrapper: &MonotoneWrapper) -> SampledObservable {
    SampledObservable {
        dt: traj.dt(),
        values: traj.energy().values().iter().map(|&e| wrapper.apply(e)).collect(),
        interp: Interpolation::Step,
        bound: wrapper.bound(),
    }
}

/// `t ↦ alpha(∫ m(t) · e_n dx)`.
pub fn functional_f_momentum(
    traj: &Trajectory,
    wrapper: &MonotoneWrapper,
    basis: &VectorBasis,
    n: usize,
) -> Result<SampledObservable> {
    let values = traj
        .m()
        .iter()
        .map(|m| basis.pairing(m, n).map(|p| wrapper.apply(p)))
        .collect::<Result<_>>()?;
    Ok(SampledObservable {
        dt: traj.dt(),
        values,
        interp: Interpolation::Linear,
        bound: wrapper.bound(),
    })
}

/// Indices whose value lies within `eps_tie · max(|min|, 1)` of the minimum.
pub fn argmin_within(values: &[f64], eps_tie: f64) -> Vec<usize> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let cut = min + eps_tie * min.abs().max(1.0);
    (0..values.len()).filter(|&i| values[i] <= cut).collect()
}

/// Members minimizing `functional` up to the tie tolerance.
pub fn minimize_step<F>(set: &TrajectorySet, functional: F, eps_tie: f64) -> Result<TrajectorySet>
where
    F: Fn(&Trajectory) -> Result<f64> + Sync,
{
    if set.is_empty() {
        return Err(Error::Empty("minimization over an empty set".into()));
    }
    let values: Vec<f64> = set.members().par_iter().map(&functional).collect::<Result<_>>()?;
    let keep: Vec<String> = argmin_within(&values, eps_tie)
        .into_iter()
        .map(|i| set.members()[i].id().to_string())
        .collect();
    Ok(set.retain_ids(&keep))
}

/// `I_{1, alpha(E)}` minimization: the admissible members.
pub fn admissible_filter(set: &TrajectorySet, wrapper: &MonotoneWrapper, eps_tie: f64) -> Result<TrajectorySet> {
    minimize_step(
        set,
        |q| laplace_functional(&functional_f_energy(q, wrapper), 1.0).map(|v| v.value),
        eps_tie,
    )
}

/// `a ≺ b`: `E_a <= E_b` at every time and `E_a < E_b` on a set of
/// positive measure.
pub fn precedes(a: &Trajectory, b: &Trajectory) -> bool {
    let (ea, eb) = (a.energy().values(), b.energy().values());
    let n = ea.len().min(eb.len());
    let dominated = (0..n).all(|i| ea[i] <= eb[i]);
    // the last sample only covers a single instant
    let strict = (0..n.saturating_sub(1)).any(|i| ea[i] < eb[i]);
    dominated && strict
}

/// Discarded members that strictly precede every survivor.
pub fn admissibility_violations(set: &TrajectorySet, survivors: &TrajectorySet) -> Vec<String> {
    set.members()
        .iter()
        .filter(|d| survivors.get(d.id()).is_none())
        .filter(|d| survivors.members().iter().all(|s| precedes(d, s)))
        .map(|d| d.id().to_string())
        .collect()
}

/// Functional of one stage: rate index `k`, basis index `n` (0 = energy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalIndex {
    pub k: usize,
    pub n: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub functional: FunctionalIndex,
    /// Functional value of every member entering the stage.
    pub values: BTreeMap<String, f64>,
    pub survivors: Vec<String>,
    pub tail_bound: f64,
    /// The gap to the best rejected member is below the summed tail bounds.
    pub tail_sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub candidates: Vec<String>,
    /// Stage 0 is the admissibility filter.
    pub stages: Vec<StageRecord>,
    pub selected: String,
    /// Distinct members survived every stage; `selected` is the
    /// lexicographically smallest of them.
    pub incomplete: bool,
    /// Survivors closer than the duplicate threshold were merged.
    pub deduplicated: bool,
    pub final_survivors: Vec<String>,
    pub final_diameter: f64,
    pub admissibility_violations: Vec<String>,
}

impl SelectionTrace {
    /// Every stage is nonempty and contained in its predecessor.
    pub fn is_nested(&self) -> bool {
        let mut prev: &[String] = &self.candidates;
        for s in &self.stages {
            if s.survivors.is_empty() || !s.survivors.iter().all(|id| prev.contains(id)) {
                return false;
            }
            prev = &s.survivors;
        }
        true
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub trajectory: Trajectory,
    pub trace: SelectionTrace,
}

/// Anything that maps a candidate set to one trajectory.
pub trait Selector: Sync {
    fn select(&self, set: &TrajectorySet) -> Result<Selection>;
}

impl Selector for SelectionSchedule {
    fn select(&self, set: &TrajectorySet) -> Result<Selection> {
        cascade(set, self)
    }
}

/// Schedule paired with an explicit wrapper.
#[derive(Debug, Clone)]
pub struct WrappedSchedule {
    pub schedule: SelectionSchedule,
    pub wrapper: MonotoneWrapper,
}

impl Selector for WrappedSchedule {
    fn select(&self, set: &TrajectorySet) -> Result<Selection> {
        cascade_with(set, &self.schedule, &self.wrapper)
    }
}

/// Produces candidate sets from initial data.
pub trait CandidateGenerator: Sync {
    fn generate(&self, data: &InitialData) -> Result<TrajectorySet>;
}

impl<F> CandidateGenerator for F
where
    F: Fn(&InitialData) -> Result<TrajectorySet> + Sync,
{
    fn generate(&self, data: &InitialData) -> Result<TrajectorySet> {
        self(data)
    }
}

/// Per-member samples of every observable the schedule touches.
struct Observables {
    energy: Vec<f64>,
    momentum: Vec<Vec<f64>>,
}

fn observables(q: &Trajectory, wrapper: &MonotoneWrapper, basis: &VectorBasis) -> Result<Observables> {
    let energy = functional_f_energy(q, wrapper).values;
    let momentum = (1..=basis.len())
        .map(|n| functional_f_momentum(q, wrapper, basis, n).map(|o| o.values))
        .collect::<Result<_>>()?;
    Ok(Observables { energy, momentum })
}

struct Weights {
    samples: usize,
    dt: f64,
    cache: BTreeMap<(usize, bool), Vec<f64>>,
}

impl Weights {
    fn get(&mut self, k: usize, rate: f64, linear: bool) -> Result<&[f64]> {
        if !self.cache.contains_key(&(k, linear)) {
            let interp = if linear {
                Interpolation::Linear
            } else {
                Interpolation::Step
            };
            let w = laplace_weights(self.samples, self.dt, rate, interp)?;
            self.cache.insert((k, linear), w);
        }
        Ok(&self.cache[&(k, linear)])
    }
}

fn dot(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b).sum()
}

struct Prepared {
    obs: Vec<Observables>,
    weights: Weights,
    horizon: f64,
}

fn prepare(set: &TrajectorySet, schedule: &SelectionSchedule, wrapper: &MonotoneWrapper) -> Result<Prepared> {
    schedule.validate()?;
    if set.is_empty() {
        return Err(Error::Empty("selection over an empty candidate set".into()));
    }
    let basis = VectorBasis::new(set.data().grid(), schedule.basis_size)?;
    let obs = set
        .members()
        .par_iter()
        .map(|q| observables(q, wrapper, &basis))
        .collect::<Result<Vec<_>>>()?;
    let first = &set.members()[0];
    Ok(Prepared {
        obs,
        weights: Weights {
            samples: first.len(),
            dt: first.dt(),
            cache: BTreeMap::new(),
        },
        horizon: first.t_end(),
    })
}

fn stage_values(p: &mut Prepared, members: &[usize], k: usize, n: usize, rate: f64) -> Result<Vec<f64>> {
    let w = p.weights.get(k, rate, n > 0)?.to_vec();
    Ok(members
        .iter()
        .map(|&i| {
            let o = &p.obs[i];
            if n == 0 {
                dot(&w, &o.energy)
            } else {
                dot(&w, &o.momentum[n - 1])
            }
        })
        .collect())
}

/// Values of every functional in schedule order (admissibility stage first)
/// for every member.
pub fn functional_values(
    set: &TrajectorySet,
    schedule: &SelectionSchedule,
    wrapper: &MonotoneWrapper,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut p = prepare(set, schedule, wrapper)?;
    let all: Vec<usize> = (0..set.len()).collect();
    let mut columns = vec![stage_values(&mut p, &all, 1, 0, 1.0)?];
    for &(k, n) in &schedule.enumeration {
        columns.push(stage_values(&mut p, &all, k, n, schedule.rates[k - 1])?);
    }
    Ok(set
        .members()
        .iter()
        .enumerate()
        .map(|(i, q)| (q.id().to_string(), columns.iter().map(|c| c[i]).collect()))
        .collect())
}

/// Cascade with the default wrapper `tanh(x / max(1, E0))`.
pub fn cascade(set: &TrajectorySet, schedule: &SelectionSchedule) -> Result<Selection> {
    cascade_with(set, schedule, &MonotoneWrapper::for_energy(set.data().e0))
}

/// Admissibility filter followed by every scheduled stage, stopping early
/// once one member is left.
pub fn cascade_with(set: &TrajectorySet, schedule: &SelectionSchedule, wrapper: &MonotoneWrapper) -> Result<Selection> {
    let mut p = prepare(set, schedule, wrapper)?;
    let ids: Vec<String> = set.ids();
    let mut survivors: Vec<usize> = (0..set.len()).collect();
    let mut stages = Vec::new();

    let plan = std::iter::once((1usize, 0usize, 1.0f64))
        .chain(schedule.enumeration.iter().map(|&(k, n)| (k, n, schedule.rates[k - 1])));
    for (stage, (k, n, rate)) in plan.enumerate() {
        if stage > 0 && survivors.len() == 1 {
            break;
        }
        let values = stage_values(&mut p, &survivors, k, n, rate)?;
        let keep = argmin_within(&values, schedule.eps_tie);
        let tail_bound = (-rate * p.horizon).exp() / rate;
        let worst_kept = keep.iter().map(|&i| values[i]).fold(f64::NEG_INFINITY, f64::max);
        let best_rejected = (0..values.len())
            .filter(|i| !keep.contains(i))
            .map(|i| values[i])
            .fold(f64::INFINITY, f64::min);
        let tail_sensitive = best_rejected.is_finite() && best_rejected - worst_kept < 2.0 * tail_bound;
        stages.push(StageRecord {
            stage,
            functional: FunctionalIndex { k, n, rate },
            values: survivors
                .iter()
                .zip(&values)
                .map(|(&i, &v)| (ids[i].clone(), v))
                .collect(),
            survivors: keep.iter().map(|&i| ids[survivors[i]].clone()).collect(),
            tail_bound,
            tail_sensitive,
        });
        survivors = keep.into_iter().map(|i| survivors[i]).collect();
    }

    let admissible = set.retain_ids(&stages[0].survivors);
    let violations = admissibility_violations(set, &admissible);

    let mut final_ids: Vec<String> = survivors.iter().map(|&i| ids[i].clone()).collect();
    final_ids.sort();
    let (diameter, incomplete, deduplicated) = if survivors.len() > 1 {
        let grid = set.data().grid();
        let cfg = schedule.metric.unwrap_or_else(|| NegNormConfig::default_for(grid));
        let metric = QMetric::new(grid, cfg)?;
        let emb: Vec<_> = survivors
            .iter()
            .map(|&i| metric.embed(&set.members()[i]))
            .collect::<Result<_>>()?;
        let mut diam: f64 = 0.0;
        for a in 0..emb.len() {
            for b in a + 1..emb.len() {
                diam = diam.max(metric.distance_embedded(&emb[a], &emb[b], p.horizon)?);
            }
        }
        (diam, diam > schedule.delta_dup, diam <= schedule.delta_dup)
    } else {
        (0.0, false, false)
    };
    let selected = final_ids[0].clone();
    let trajectory = set.get(&selected).expect("selected id is a member").clone();
    Ok(Selection {
        trajectory,
        trace: SelectionTrace {
            candidates: ids,
            stages,
            selected,
            incomplete,
            deduplicated,
            final_survivors: final_ids,
            final_diameter: diameter,
            admissibility_violations: violations,
        },
    })
}

/// Distance between two states at single times: negative-Sobolev norms of
/// the density and momentum differences plus the gap in `E(t+)`.
pub fn state_deviation(norm: &NegSobolev, a: StateAt<'_>, b: StateAt<'_>) -> f64 {
    norm.distance(&a.rho.components(), &b.rho.components())
        + norm.distance(&a.m.components(), &b.m.components())
        + (a.e_plus - b.e_plus).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupOutcome {
    pub t1: f64,
    pub t2: f64,
    /// Gap between `U{data}(t1 + t2)` and `U{U{data}(t1)}(t2)`.
    pub deviation: f64,
    /// Trajectory distance between the shifted selection and the restarted
    /// selection over their common horizon.
    pub trajectory_deviation: f64,
    pub selected: String,
    pub restarted: String,
}

/// Select from `data`, restart at `t1` from `[rho, m, E(t1-)]`, reselect and
/// compare at `t2`.
pub fn semigroup_check(
    selector: &dyn Selector,
    system: &dyn CandidateGenerator,
    data: &InitialData,
    t1: f64,
    t2: f64,
) -> Result<SemigroupOutcome> {
    let first = selector.select(&system.generate(data)?)?;
    semigroup_from(selector, system, &first.trajectory, t1, t2, |s| Ok(s.to_initial_data()))
}

fn semigroup_from(
    selector: &dyn Selector,
    system: &dyn CandidateGenerator,
    selected: &Trajectory,
    t1: f64,
    t2: f64,
    restart: impl Fn(&StateAt<'_>) -> Result<InitialData>,
) -> Result<SemigroupOutcome> {
    if !(t1 >= 0.0) || !(t2 >= 0.0) || t1 + t2 > selected.t_end() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "t1 + t2 = {} beyond the horizon {}",
            t1 + t2,
            selected.t_end()
        )));
    }
    let k1 = selected.step_index(t1)?;
    let k2 = selected.step_index(t1 + t2)?;
    let restart_data = restart(&selected.state(k1))?;
    let set = system
        .generate(&restart_data)
        .map_err(|e| Error::Generator(format!("restart at t1={t1}: {e}")))?;
    let second = selector.select(&set)?;
    let grid = selected.grid();
    let norm = NegSobolev::new(grid, NegNormConfig::default_for(grid))?;
    let later = second.trajectory.evaluate(t2)?;
    let deviation = state_deviation(&norm, selected.state(k2), later);
    let tail = shift_or_self(selected, k1)?;
    let horizon = tail.t_end().min(second.trajectory.t_end());
    let trajectory_deviation =
        QMetric::new(grid, NegNormConfig::default_for(grid))?.distance(&tail, &second.trajectory, horizon)?;
    Ok(SemigroupOutcome {
        t1,
        t2,
        deviation,
        trajectory_deviation,
        selected: selected.id().to_string(),
        restarted: second.trajectory.id().to_string(),
    })
}

fn shift_or_self(q: &Trajectory, k: usize) -> Result<Trajectory> {
    if k == 0 {
        Ok(q.clone())
    } else if k + 1 >= q.len() {
        // a restart at the horizon leaves a single-sample tail
        Trajectory::new(
            q.id(),
            q.dt(),
            vec![q.rho()[k].clone()],
            vec![q.m()[k].clone()],
            crate::trajectory::EnergySignal::new(q.dt(), q.energy().left(k), vec![q.energy().right(k)])?,
        )
    } else {
        shift(q, k as f64 * q.dt())
    }
}

/// Grid times where the energy signal matches the energy of the fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullMeasureReport {
    pub times: Vec<f64>,
    pub excluded: Vec<f64>,
    /// Times where the field energy exceeds `E(t±) + eta`, which no
    /// dissipative solution allows.
    pub lsc_violations: Vec<f64>,
    pub max_gap: f64,
}

impl FullMeasureReport {
    pub fn contains(&self, t: f64, dt: f64) -> bool {
        self.times.iter().any(|&s| (s - t).abs() <= 1e-9 * dt)
    }
}

/// `{ t_i : |E(t_i+) - ∫ (½|m|²/rho + P(rho)) dx| <= eta }` with the
/// semicontinuity check alongside.
pub fn full_measure_times(traj: &Trajectory, law: &PressureLaw, eta: f64) -> Result<FullMeasureReport> {
    let mut report = FullMeasureReport {
        times: Vec::new(),
        excluded: Vec::new(),
        lsc_violations: Vec::new(),
        max_gap: 0.0,
    };
    for (i, t) in traj.times().into_iter().enumerate() {
        let field = total_energy(&traj.rho()[i], &traj.m()[i], law)?;
        let e_plus = traj.energy().right(i);
        let e_minus = traj.energy().left(i);
        let gap = (e_plus - field).abs();
        report.max_gap = report.max_gap.max(gap);
        if gap <= eta {
            report.times.push(t);
        } else {
            report.excluded.push(t);
        }
        if field > e_plus.min(e_minus) + eta {
            report.lsc_violations.push(t);
        }
    }
    Ok(report)
}

/// `V{rho0, m0} = U{rho0, m0, ∫ (½|m0|²/rho0 + P(rho0)) dx}`.
pub fn restricted_selection_v(
    rho0: &ScalarField,
    m0: &VectorField,
    law: &PressureLaw,
    selector: &dyn Selector,
    system: &dyn CandidateGenerator,
) -> Result<Selection> {
    selector.select(&system.generate(&restricted_data(rho0, m0, law)?)?)
}

fn restricted_data(rho0: &ScalarField, m0: &VectorField, law: &PressureLaw) -> Result<InitialData> {
    let e0 = total_energy(rho0, m0, law)?;
    if !e0.is_finite() {
        return Err(Error::Domain("initial data carry infinite energy".into()));
    }
    InitialData::new(rho0.clone(), m0.clone(), e0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RestrictedOutcome {
    Checked(SemigroupOutcome),
    OutOfT { t1: f64, t2: f64, reason: String },
}

/// Semigroup check for `V`, confined to pairs with `t1` in the full-measure
/// set of the selection and `t2` in that of the restarted selection.
#[allow(clippy::too_many_arguments)]
pub fn restricted_semigroup_check(
    selector: &dyn Selector,
    system: &dyn CandidateGenerator,
    law: &PressureLaw,
    rho0: &ScalarField,
    m0: &VectorField,
    t1: f64,
    t2: f64,
    eta: f64,
) -> Result<RestrictedOutcome> {
    let first = restricted_selection_v(rho0, m0, law, selector, system)?;
    let u = &first.trajectory;
    if t1 + t2 > u.t_end() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "t1 + t2 = {} beyond the horizon {}",
            t1 + t2,
            u.t_end()
        )));
    }
    let k1 = u.step_index(t1)?;
    let times = full_measure_times(u, law, eta)?;
    if !times.contains(t1, u.dt()) {
        return Ok(RestrictedOutcome::OutOfT {
            t1,
            t2,
            reason: format!("t1 = {t1} is outside the full-measure set of the selection"),
        });
    }
    let state = u.state(k1);
    let restarted = restricted_selection_v(state.rho, state.m, law, selector, system)?;
    let later = full_measure_times(&restarted.trajectory, law, eta)?;
    if !later.contains(t2, u.dt()) {
        return Ok(RestrictedOutcome::OutOfT {
            t1,
            t2,
            reason: format!("t2 = {t2} is outside the full-measure set of the restarted selection"),
        });
    }
    let outcome = semigroup_from(selector, system, u, t1, t2, |s| restricted_data(s.rho, s.m, law))?;
    Ok(RestrictedOutcome::Checked(outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Boundary;
    use crate::trajectory::EnergySignal;
    use approx::assert_abs_diff_eq;

    fn grid() -> Grid {
        Grid::new_1d(1.0, 32, Boundary::DirichletNoslip).unwrap()
    }

    fn member(id: &str, energy: Vec<f64>, dt: f64) -> Trajectory {
        let g = grid();
        let n = energy.len();
        Trajectory::new(
            id,
            dt,
            vec![ScalarField::constant(g, 1.0); n],
            vec![VectorField::zeros(g); n],
            EnergySignal::new(dt, energy[0], energy).unwrap(),
        )
        .unwrap()
    }

    fn set_of(members: Vec<Trajectory>) -> TrajectorySet {
        let g = grid();
        let data = InitialData::new(ScalarField::constant(g, 1.0), VectorField::zeros(g), 3.0).unwrap();
        TrajectorySet::new(data, members).unwrap()
    }

    #[test]
    fn stern_brocot_prefix() {
        assert_eq!(
            stern_brocot(8),
            vec![1.0, 0.5, 2.0, 1.0 / 3.0, 2.0 / 3.0, 1.5, 3.0, 0.25]
        );
    }

    #[test]
    fn enumeration_covers_every_pair_once() {
        let e = diagonal_enumeration(8, 16);
        assert_eq!(e.len(), 8 * 17);
        let mut sorted = e.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), e.len());
        assert_eq!(&e[..3], &[(1, 0), (1, 1), (2, 0)]);
    }

    #[test]
    fn wrapper_properties() {
        let a = MonotoneWrapper::for_energy(4.0);
        assert_eq!(a.scale(), 4.0);
        assert_eq!(MonotoneWrapper::for_energy(0.2).scale(), 1.0);
        assert_eq!(a.apply(0.0), 0.0);
        assert!(a.apply(1e9) <= 1.0 && a.apply(-1e9) >= -1.0);
        assert!(a.apply(1.0) < a.apply(1.5));
        assert!(MonotoneWrapper::tanh(0.0).is_err());
    }

    #[test]
    fn laplace_examples() {
        let n = 20_001;
        let dt = 20.0 / (n - 1) as f64;
        let ones = SampledObservable {
            dt,
            values: vec![1.0; n],
            interp: Interpolation::Step,
            bound: 1.0,
        };
        let v = laplace_functional(&ones, 2.0).unwrap();
        assert_abs_diff_eq!(v.value, 0.5, epsilon = 1e-12);
        let v = laplace_functional(&ones, 1.0).unwrap();
        assert_abs_diff_eq!(v.tail_bound, (-20.0f64).exp(), epsilon = 1e-15);
        let decay = SampledObservable {
            dt,
            values: (0..n).map(|i| (-(i as f64) * dt).exp()).collect(),
            interp: Interpolation::Linear,
            bound: 1.0,
        };
        assert_abs_diff_eq!(laplace_functional(&decay, 1.0).unwrap().value, 0.5, epsilon = 1e-7);
        assert!(laplace_functional(&ones, 0.0).is_err());
        assert!(laplace_functional(&ones, -1.0).is_err());
    }

    #[test]
    fn linear_weights_integrate_linear_functions_exactly() {
        // ∫_0^1 e^{-3t} t dt
        let exact = (1.0 - 4.0 * (-3.0f64).exp()) / 9.0;
        for &n in &[3usize, 11, 101] {
            let dt = 1.0 / (n - 1) as f64;
            let w = laplace_weights(n, dt, 3.0, Interpolation::Linear).unwrap();
            let v: f64 = (0..n).map(|i| w[i] * i as f64 * dt).sum();
            assert_abs_diff_eq!(v, exact, epsilon = 1e-14);
        }
    }

    #[test]
    fn basis_pairings() {
        let g = grid();
        let basis = VectorBasis::new(&g, 16).unwrap();
        let e1 = basis.element(1).unwrap().clone();
        assert_abs_diff_eq!(basis.pairing(&e1, 1).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(basis.pairing(&e1, 2).unwrap(), 0.0, epsilon = 1e-12);
        let wrapper = MonotoneWrapper::for_energy(1.0);
        let q = Trajectory::new(
            "e1",
            0.1,
            vec![ScalarField::constant(g, 1.0); 3],
            vec![e1; 3],
            EnergySignal::new(0.1, 1.0, vec![1.0; 3]).unwrap(),
        )
        .unwrap();
        let f = functional_f_momentum(&q, &wrapper, &basis, 1).unwrap();
        assert!(f.values.iter().all(|v| (v - 1f64.tanh()).abs() < 1e-12));
        let zero = functional_f_momentum(&member("z", vec![1.0; 3], 0.1), &wrapper, &basis, 3).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        assert!(basis.element(17).is_err());
        assert!(VectorBasis::new(&Grid::new_1d(1.0, 16, Boundary::DirichletNoslip).unwrap(), 16).is_err());
    }

    #[test]
    fn minimize_examples() {
        let s = set_of(vec![member("a", vec![1.0; 11], 0.1), member("b", vec![2.0; 11], 0.1)]);
        let w = MonotoneWrapper::for_energy(3.0);
        assert_eq!(admissible_filter(&s, &w, 1e-9).unwrap().ids(), vec!["a"]);
        let twins = set_of(vec![member("a", vec![1.0; 11], 0.1), member("b", vec![1.0; 11], 0.1)]);
        assert_eq!(admissible_filter(&twins, &w, 1e-9).unwrap().len(), 2);
        let eps = 1e-9;
        let vals = [0.30, 0.30 + eps / 2.0, 0.9];
        assert_eq!(argmin_within(&vals, eps), vec![0, 1]);
        let empty = set_of(vec![]);
        assert!(matches!(admissible_filter(&empty, &w, eps), Err(Error::Empty(_))));
    }

    #[test]
    fn crossing_energies() {
        // a is lower early, b is lower late; the discounted integral prefers
        // the early advantage.
        let a = member("a", vec![1.0, 1.0, 1.0, 3.0, 3.0, 3.0], 0.5);
        let b = member("b", vec![2.0, 2.0, 2.0, 2.0, 2.0, 2.0], 0.5);
        assert!(!precedes(&a, &b) && !precedes(&b, &a));
        let s = set_of(vec![a.clone(), b.clone()]);
        let w = MonotoneWrapper::for_energy(3.0);
        let i = |q: &Trajectory| laplace_functional(&functional_f_energy(q, &w), 1.0).unwrap().value;
        let expect = if i(&a) < i(&b) { "a" } else { "b" };
        assert_eq!(admissible_filter(&s, &w, 1e-9).unwrap().ids(), vec![expect]);
    }

    #[test]
    fn cascade_picks_lowest_constant_energy() {
        let s = set_of(vec![
            member("c", vec![3.0; 11], 0.1),
            member("a", vec![1.0; 11], 0.1),
            member("b", vec![2.0; 11], 0.1),
        ]);
        let sel = cascade(&s, &SelectionSchedule::default()).unwrap();
        assert_eq!(sel.trace.selected, "a");
        assert_eq!(sel.trace.stages.len(), 1);
        assert!(!sel.trace.incomplete);
        assert!(sel.trace.is_nested());
        assert!(sel.trace.admissibility_violations.is_empty());
    }

    #[test]
    fn identical_members_deduplicate() {
        let s = set_of(vec![member("b", vec![1.0; 11], 0.1), member("a", vec![1.0; 11], 0.1)]);
        let sel = cascade(&s, &SelectionSchedule::default()).unwrap();
        assert_eq!(sel.trace.selected, "a");
        assert!(sel.trace.deduplicated);
        assert!(!sel.trace.incomplete);
        assert_eq!(sel.trace.stages.len(), SelectionSchedule::default().stages() + 1);
    }

    #[test]
    fn full_measure_examples() {
        let law = PressureLaw::gamma_law(1.0, 2.0).unwrap();
        let g = grid();
        let p1 = law.potential(1.0).unwrap();
        let exact = member("q", vec![p1; 6], 0.1);
        let r = full_measure_times(&exact, &law, 1e-12).unwrap();
        assert_eq!(r.times.len(), 6);
        assert!(r.lsc_violations.is_empty());

        let mut e = vec![p1 + 0.5, p1 + 0.5, p1, p1, p1, p1];
        let jump = Trajectory::new(
            "j",
            0.1,
            vec![ScalarField::constant(g, 1.0); 6],
            vec![VectorField::zeros(g); 6],
            EnergySignal::new(0.1, e[0], e.clone()).unwrap(),
        )
        .unwrap();
        let r = full_measure_times(&jump, &law, 1e-12).unwrap();
        assert_eq!(r.excluded.len(), 2);
        assert!(r.lsc_violations.is_empty());

        e[3] = p1 - 0.1;
        let low = jump
            .clone()
            .with_energy(EnergySignal::new(0.1, e[0], e).unwrap())
            .unwrap();
        let r = full_measure_times(&low, &law, 1e-12).unwrap();
        // the dip is seen from the right at t3 and from the left at t4
        assert_eq!(r.lsc_violations.len(), 2);
    }

    #[test]
    fn restricted_data_energy() {
        let law = PressureLaw::gamma_law(1.0, 2.0).unwrap();
        let g = grid();
        let d = restricted_data(&ScalarField::constant(g, 1.0), &VectorField::zeros(g), &law).unwrap();
        assert_abs_diff_eq!(d.e0, law.potential(1.0).unwrap(), epsilon = 1e-14);
        let mut rho = vec![1.0; 32];
        rho[0] = 0.0;
        let vacuum = ScalarField::new(g, rho).unwrap();
        assert!(restricted_data(&vacuum, &VectorField::constant(g, &[1.0]), &law).is_err());
    }
}
