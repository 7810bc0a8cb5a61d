//! Residual-based verifiers for dissipative weak solutions: renormalized
//! continuity, momentum balance, the energy inequality and energy
//! monotonicity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{dissipation_density, stress_fixed, PressureLaw, ViscosityPair};
use crate::state::{AxisBasis, Grid, ScalarField, VectorField};
use crate::trajectory::{EnergySignal, Trajectory};

/// Densities below this are treated as vacuum when recovering `u = m / rho`.
pub const VACUUM_DENSITY: f64 = 1e-10;

/// Largest tolerated fraction of vacuum cells.
pub const VACUUM_FRACTION: f64 = 0.01;

/// Default tolerance on the energy-inequality margin.
pub const TOL_ENERGY: f64 = 1e-6;

/// Velocity and its centred-difference gradient at one time sample.
#[derive(Debug, Clone)]
pub(crate) struct Kinematics {
    pub u: Vec<[f64; 2]>,
    /// `grad[c][a] = d u_c / d x_a`
    pub grad: Vec<[[f64; 2]; 2]>,
}

impl Kinematics {
    pub(crate) fn new(rho: &ScalarField, m: &VectorField) -> Result<Self> {
        let grid = *rho.grid();
        let dim = grid.dim();
        let n = grid.len();
        let mut u = vec![[0.0; 2]; n];
        let mut vacuum = 0;
        let mut mv = [0.0; 2];
        for (idx, &r) in rho.values().iter().enumerate() {
            if r < VACUUM_DENSITY {
                vacuum += 1;
                continue;
            }
            m.write_at(idx, &mut mv);
            for c in 0..dim {
                u[idx][c] = mv[c] / r;
            }
        }
        if vacuum as f64 > VACUUM_FRACTION * n as f64 {
            return Err(Error::Vacuum {
                cells: vacuum,
                total: n,
            });
        }
        let grad = velocity_gradient(&grid, &u);
        Ok(Self { u, grad })
    }

    pub(crate) fn divergence(&self, idx: usize, dim: usize) -> f64 {
        (0..dim).map(|a| self.grad[idx][a][a]).sum()
    }

    /// `S(grad u) : grad u` in cell `idx`.
    pub(crate) fn dissipation(&self, idx: usize, dim: usize, visc: ViscosityPair) -> f64 {
        let g = self.grad[idx];
        if dim == 1 {
            dissipation_density(&[[g[0][0]]], visc)
        } else {
            dissipation_density(&g, visc)
        }
    }

    pub(crate) fn stress(&self, idx: usize, dim: usize, visc: ViscosityPair) -> [[f64; 2]; 2] {
        let g = self.grad[idx];
        if dim == 1 {
            let s = stress_fixed(&[[g[0][0]]], visc);
            [[s[0][0], 0.0], [0.0, 0.0]]
        } else {
            stress_fixed(&g, visc)
        }
    }
}

/// Centred differences with reflected (no-slip) or wrapped ghost values.
fn velocity_gradient(grid: &Grid, u: &[[f64; 2]]) -> Vec<[[f64; 2]; 2]> {
    let dim = grid.dim();
    let nx = grid.cells(0);
    let ny = if dim == 2 { grid.cells(1) } else { 1 };
    let periodic = grid.boundary() == crate::state::Boundary::Periodic;
    let mut grad = vec![[[0.0; 2]; 2]; u.len()];
    let neighbour = |i: isize, n: usize| -> (usize, f64) {
        if i < 0 {
            if periodic {
                (n - 1, 1.0)
            } else {
                (0, -1.0)
            }
        } else if i as usize >= n {
            if periodic {
                (0, 1.0)
            } else {
                (n - 1, -1.0)
            }
        } else {
            (i as usize, 1.0)
        }
    };
    for j in 0..ny {
        for i in 0..nx {
            let idx = grid.index(i, j);
            for a in 0..dim {
                let (n, pos) = if a == 0 { (nx, i) } else { (ny, j) };
                let h = grid.spacing(a);
                let (lo, slo) = neighbour(pos as isize - 1, n);
                let (hi, shi) = neighbour(pos as isize + 1, n);
                let at = |p: usize| if a == 0 { grid.index(p, j) } else { grid.index(i, p) };
                for c in 0..dim {
                    grad[idx][c][a] = (shi * u[at(hi)][c] - slo * u[at(lo)][c]) / (2.0 * h);
                }
            }
        }
    }
    grad
}

/// Time profile of a test function on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeFactor {
    /// `1 - t / (2T)`
    Linear,
    /// `16 s^2 (1 - s)^2` with `s = t / T`
    Bump,
}

impl TimeFactor {
    pub fn eval(self, t: f64, horizon: f64) -> (f64, f64) {
        match self {
            TimeFactor::Linear => (1.0 - t / (2.0 * horizon), -1.0 / (2.0 * horizon)),
            TimeFactor::Bump => {
                let s = t / horizon;
                let v = 16.0 * s * s * (1.0 - s) * (1.0 - s);
                let d = 32.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / horizon;
                (v, d)
            }
        }
    }
}

/// `coef * theta(t) * Phi_modes(x)` with `Phi` a tensor eigenmode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestTerm {
    pub coef: f64,
    pub time: TimeFactor,
    pub modes: [usize; 2],
}

/// Sum of separable terms; `component` selects the nonzero vector slot
/// when used as a vector test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub terms: Vec<TestTerm>,
    pub component: usize,
}

impl TestFunction {
    pub fn single(time: TimeFactor, modes: [usize; 2], component: usize) -> Self {
        Self {
            terms: vec![TestTerm { coef: 1.0, time, modes }],
            component,
        }
    }

    /// Pointwise sum (components must agree).
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.component != other.component {
            return Err(Error::Shape(
                "summed vector test functions use different components".into(),
            ));
        }
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Ok(Self {
            terms,
            component: self.component,
        })
    }
}

/// Scalar and vector test functions with closed-form derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctionSuite {
    grid: Grid,
    horizon: f64,
    scalar: Vec<TestFunction>,
    vector: Vec<TestFunction>,
}

/// Per-cell samples of one term.
struct SampledTerm {
    coef: f64,
    time: TimeFactor,
    phi: Vec<f64>,
    grad: Vec<[f64; 2]>,
}

impl TestFunctionSuite {
    /// Eight functions per kind: the four lowest spatial modes times the
    /// linear and bump time profiles. Vector members alternate components.
    pub fn default_for(grid: &Grid, horizon: f64) -> Result<Self> {
        let modes: Vec<[usize; 2]> = if grid.dim() == 1 {
            (0..4).map(|j| [j, 0]).collect()
        } else {
            vec![[0, 0], [1, 0], [0, 1], [1, 1]]
        };
        let mut scalar = Vec::new();
        let mut vector = Vec::new();
        for (k, mode) in modes.iter().enumerate() {
            for (l, time) in [TimeFactor::Linear, TimeFactor::Bump].into_iter().enumerate() {
                scalar.push(TestFunction::single(time, *mode, 0));
                vector.push(TestFunction::single(time, *mode, (k + l) % grid.dim()));
            }
        }
        Self::new(grid, horizon, scalar, vector)
    }

    pub fn new(grid: &Grid, horizon: f64, scalar: Vec<TestFunction>, vector: Vec<TestFunction>) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Domain(format!(
                "test-function horizon must be positive, got {horizon}"
            )));
        }
        if vector.iter().any(|f| f.component >= grid.dim()) {
            return Err(Error::Shape(
                "vector test function component exceeds the dimension".into(),
            ));
        }
        Ok(Self {
            grid: *grid,
            horizon,
            scalar,
            vector,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn scalar(&self) -> &[TestFunction] {
        &self.scalar
    }

    pub fn vector(&self) -> &[TestFunction] {
        &self.vector
    }

    fn sample(&self, f: &TestFunction) -> Vec<SampledTerm> {
        let g = &self.grid;
        let b = g.boundary();
        f.terms
            .iter()
            .map(|term| {
                let mut phi = Vec::with_capacity(g.len());
                let mut grad = Vec::with_capacity(g.len());
                for idx in 0..g.len() {
                    let x = g.coords(idx);
                    let (v0, d0) = AxisBasis::eval(g.extent(0), term.modes[0], b, x[0]);
                    if g.dim() == 1 {
                        phi.push(v0);
                        grad.push([d0, 0.0]);
                    } else {
                        let (v1, d1) = AxisBasis::eval(g.extent(1), term.modes[1], b, x[1]);
                        phi.push(v0 * v1);
                        grad.push([d0 * v1, v0 * d1]);
                    }
                }
                SampledTerm {
                    coef: term.coef,
                    time: term.time,
                    phi,
                    grad,
                }
            })
            .collect()
    }
}

/// Value and spatial gradient of a sampled test function in one cell.
fn test_at(terms: &[SampledTerm], t: f64, horizon: f64, idx: usize) -> (f64, [f64; 2]) {
    let mut v = 0.0;
    let mut g = [0.0; 2];
    for term in terms {
        let (th, _) = term.time.eval(t, horizon);
        v += term.coef * th * term.phi[idx];
        g[0] += term.coef * th * term.grad[idx][0];
        g[1] += term.coef * th * term.grad[idx][1];
    }
    (v, g)
}

/// `∫ F d_t phi` with `F` linear between samples and the time factor
/// integrated exactly, so a field frozen in time pairs to exactly
/// `[∫ F phi]_0^tau`. `moments[i][j]` is `∫ F(t_i) Phi_j`.
fn time_derivative_pairing(terms: &[SampledTerm], moments: &[Vec<f64>], dt: f64, horizon: f64) -> f64 {
    let mut total = 0.0;
    for (j, term) in terms.iter().enumerate() {
        let theta = |i: usize| term.time.eval(i as f64 * dt, horizon).0;
        for (i, w) in moments.windows(2).enumerate() {
            total += term.coef * 0.5 * (w[0][j] + w[1][j]) * (theta(i + 1) - theta(i));
        }
    }
    total
}

/// Renormalization `B` with `b(z) = z B'(z) - B(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RenormalizationPair {
    /// `B(z) = z`
    Identity,
    /// `B(z) = z log(z + eps)`
    Entropy { eps: f64 },
    /// `B(z) = z^2 / (1 + z)`
    Rational,
}

impl RenormalizationPair {
    /// The library of pairs exercised by default.
    pub fn library() -> Vec<Self> {
        vec![Self::Identity, Self::Entropy { eps: 1e-3 }, Self::Rational]
    }

    pub fn big_b(&self, z: f64) -> f64 {
        match *self {
            Self::Identity => z,
            Self::Entropy { eps } => z * (z + eps).ln(),
            Self::Rational => z * z / (1.0 + z),
        }
    }

    pub fn big_b_prime(&self, z: f64) -> f64 {
        match *self {
            Self::Identity => 1.0,
            Self::Entropy { eps } => (z + eps).ln() + z / (z + eps),
            Self::Rational => (z * z + 2.0 * z) / ((1.0 + z) * (1.0 + z)),
        }
    }

    /// Closed form of `z B'(z) - B(z)`.
    pub fn small_b(&self, z: f64) -> f64 {
        match *self {
            Self::Identity => 0.0,
            Self::Entropy { eps } => z * z / (z + eps),
            Self::Rational => z * z / ((1.0 + z) * (1.0 + z)),
        }
    }

    /// Whether `b` is bounded on the whole half-line.
    pub fn b_bounded(&self) -> bool {
        !matches!(self, Self::Entropy { .. })
    }

    /// `|b(z) - (z B'(z) - B(z))|` relative to the size of the terms.
    pub fn identity_residual(&self, z: f64) -> f64 {
        let direct = z * self.big_b_prime(z) - self.big_b(z);
        let scale = 1.0f64.max((z * self.big_b_prime(z)).abs()).max(self.big_b(z).abs());
        (self.small_b(z) - direct).abs() / scale
    }
}

fn trapezoid(samples: &[f64], dt: f64) -> f64 {
    match samples.len() {
        0 | 1 => 0.0,
        n => dt * (0.5 * samples[0] + samples[1..n - 1].iter().sum::<f64>() + 0.5 * samples[n - 1]),
    }
}

fn kinematics_upto(traj: &Trajectory, k: usize) -> Result<Vec<Kinematics>> {
    (0..=k).map(|i| Kinematics::new(&traj.rho()[i], &traj.m()[i])).collect()
}

/// `max_phi |[∫ B(rho) phi]_0^tau - ∫_0^tau ∫ (B(rho) d_t phi + B(rho) u . grad phi - b(rho) div u phi)|`.
pub fn continuity_residual(
    traj: &Trajectory,
    pair: RenormalizationPair,
    suite: &TestFunctionSuite,
    tau: f64,
) -> Result<f64> {
    let k = traj.step_index(tau)?;
    let kin = kinematics_upto(traj, k)?;
    continuity_residual_with(traj, &kin, pair, suite, k)
}

fn check_suite(traj: &Trajectory, suite: &TestFunctionSuite) -> Result<()> {
    if traj.grid() != &suite.grid {
        return Err(Error::Shape("test-function suite built for another grid".into()));
    }
    Ok(())
}

fn continuity_residual_with(
    traj: &Trajectory,
    kin: &[Kinematics],
    pair: RenormalizationPair,
    suite: &TestFunctionSuite,
    k: usize,
) -> Result<f64> {
    check_suite(traj, suite)?;
    let grid = traj.grid();
    let dim = grid.dim();
    let dv = grid.cell_volume();
    let dt = traj.dt();
    let mut worst: f64 = 0.0;
    for f in suite.scalar() {
        let terms = suite.sample(f);
        let mut bracket = [0.0; 2];
        let mut integrand = Vec::with_capacity(k + 1);
        let mut moments = Vec::with_capacity(k + 1);
        for (i, kin_i) in kin.iter().enumerate().take(k + 1) {
            let t = i as f64 * dt;
            let rho = traj.rho()[i].values();
            let mut acc = 0.0;
            let mut mass = 0.0;
            let mut moment = vec![0.0; terms.len()];
            for idx in 0..grid.len() {
                let z = rho[idx].max(0.0);
                let (phi, gphi) = test_at(&terms, t, suite.horizon, idx);
                let bz = pair.big_b(z);
                let u = kin_i.u[idx];
                let adv = (0..dim).map(|a| u[a] * gphi[a]).sum::<f64>();
                acc += bz * adv - pair.small_b(z) * kin_i.divergence(idx, dim) * phi;
                mass += bz * phi;
                for (mo, term) in moment.iter_mut().zip(&terms) {
                    *mo += bz * term.phi[idx];
                }
            }
            integrand.push(acc * dv);
            moments.push(moment.into_iter().map(|v| v * dv).collect());
            if i == 0 {
                bracket[0] = mass * dv;
            }
            if i == k {
                bracket[1] = mass * dv;
            }
        }
        let transport = trapezoid(&integrand, dt) + time_derivative_pairing(&terms, &moments, dt, suite.horizon);
        let r = (bracket[1] - bracket[0] - transport).abs();
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Body force added to the momentum balance, `f(t, x) -> [f_x, f_y]`.
pub type Forcing<'a> = &'a (dyn Fn(f64, &[f64; 2]) -> [f64; 2] + Sync);

/// `max_phi |[∫ m . phi]_0^tau - ∫_0^tau ∫ (m . d_t phi + rho u ⊗ u : grad phi
/// + p div phi - S : grad phi + f . phi)|`.
pub fn momentum_residual(
    traj: &Trajectory,
    law: &PressureLaw,
    visc: ViscosityPair,
    suite: &TestFunctionSuite,
    tau: f64,
    forcing: Option<Forcing<'_>>,
) -> Result<f64> {
    let k = traj.step_index(tau)?;
    let kin = kinematics_upto(traj, k)?;
    momentum_residual_with(traj, &kin, law, visc, suite, k, forcing)
}

fn momentum_residual_with(
    traj: &Trajectory,
    kin: &[Kinematics],
    law: &PressureLaw,
    visc: ViscosityPair,
    suite: &TestFunctionSuite,
    k: usize,
    forcing: Option<Forcing<'_>>,
) -> Result<f64> {
    check_suite(traj, suite)?;
    let grid = traj.grid();
    let dim = grid.dim();
    let dv = grid.cell_volume();
    let dt = traj.dt();
    let pressures: Vec<Vec<f64>> = (0..=k)
        .map(|i| {
            traj.rho()[i]
                .values()
                .iter()
                .map(|&r| law.pressure(r.max(0.0)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for f in suite.vector() {
        let c = f.component;
        let terms = suite.sample(f);
        let mut bracket = [0.0; 2];
        let mut integrand = Vec::with_capacity(k + 1);
        let mut moments = Vec::with_capacity(k + 1);
        for (i, kin_i) in kin.iter().enumerate().take(k + 1) {
            let t = i as f64 * dt;
            let rho = traj.rho()[i].values();
            let mc = traj.m()[i].component(c);
            let mut acc = 0.0;
            let mut pair = 0.0;
            moments.push(
                terms
                    .iter()
                    .map(|term| dv * mc.iter().zip(&term.phi).map(|(a, b)| a * b).sum::<f64>())
                    .collect(),
            );
            for idx in 0..grid.len() {
                let (phi, gphi) = test_at(&terms, t, suite.horizon, idx);
                let u = kin_i.u[idx];
                let s = kin_i.stress(idx, dim, visc);
                let mut flux = 0.0;
                for a in 0..dim {
                    flux += (rho[idx] * u[c] * u[a] - s[c][a]) * gphi[a];
                }
                acc += flux + pressures[i][idx] * gphi[c];
                if let Some(force) = forcing {
                    acc += force(t, &grid.coords(idx))[c] * phi;
                }
                pair += mc[idx] * phi;
            }
            integrand.push(acc * dv);
            if i == 0 {
                bracket[0] = pair * dv;
            }
            if i == k {
                bracket[1] = pair * dv;
            }
        }
        let transport = trapezoid(&integrand, dt) + time_derivative_pairing(&terms, &moments, dt, suite.horizon);
        worst = worst.max((bracket[1] - bracket[0] - transport).abs());
    }
    Ok(worst)
}

/// Nonnegative time weights for the energy inequality, relative to the
/// trajectory horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psi {
    One,
    /// `1 - t/T`
    Falling,
    /// `t/T`
    Rising,
    /// `16 s^2 (1 - s)^2`
    Bump,
}

impl Psi {
    pub fn suite() -> Vec<Psi> {
        vec![Psi::One, Psi::Falling, Psi::Rising, Psi::Bump]
    }

    pub fn eval(self, t: f64, horizon: f64) -> f64 {
        let s = t / horizon;
        match self {
            Psi::One => 1.0,
            Psi::Falling => 1.0 - s,
            Psi::Rising => s,
            Psi::Bump => 16.0 * s * s * (1.0 - s) * (1.0 - s),
        }
    }
}

/// Samples of `∫ S(grad u) : grad u dx` at every time index.
pub fn dissipation_rates(traj: &Trajectory, visc: ViscosityPair) -> Result<Vec<f64>> {
    let dim = traj.grid().dim();
    let dv = traj.grid().cell_volume();
    (0..traj.len())
        .map(|i| {
            let kin = Kinematics::new(&traj.rho()[i], &traj.m()[i])?;
            Ok((0..traj.grid().len())
                .map(|idx| kin.dissipation(idx, dim, visc))
                .sum::<f64>()
                * dv)
        })
        .collect()
}

/// `∫_{t0}^{t1} ∫ S(grad u) : grad u dx dt` by the trapezoid rule in time.
pub fn dissipation_integral(traj: &Trajectory, visc: ViscosityPair, t0: f64, t1: f64) -> Result<f64> {
    let a = traj.step_index(t0)?;
    let b = traj.step_index(t1)?;
    if a > b {
        return Err(Error::Domain(format!("t0={t0} exceeds t1={t1}")));
    }
    let rates = dissipation_rates(traj, visc)?;
    Ok(trapezoid(&rates[a..=b], traj.dt()))
}

/// `max_{psi, [tau1, tau2]} ([E psi]_{tau1-}^{tau2+} - ∫ E psi' + ∫ psi D)`
/// over the whole horizon and its four quarters. Positive values measure a
/// violation.
pub fn energy_inequality_margin(traj: &Trajectory, visc: ViscosityPair, psi_suite: &[Psi]) -> Result<f64> {
    let rates = dissipation_rates(traj, visc)?;
    Ok(energy_margin_from_rates(traj.energy(), &rates, psi_suite))
}

fn energy_margin_from_rates(energy: &EnergySignal, rates: &[f64], psi_suite: &[Psi]) -> f64 {
    let last = energy.len() - 1;
    let dt = energy.dt();
    let horizon = (last as f64 * dt).max(dt);
    let mut intervals = vec![(0, last)];
    if last >= 4 {
        let q: Vec<usize> = (0..=4).map(|j| j * last / 4).collect();
        intervals.extend(q.windows(2).map(|w| (w[0], w[1])));
    }
    let mut worst = f64::NEG_INFINITY;
    for &psi in psi_suite {
        let w: Vec<f64> = (0..=last).map(|i| psi.eval(i as f64 * dt, horizon)).collect();
        for &(a, b) in &intervals {
            // For a right-continuous step signal the bracket minus ∫ E psi'
            // telescopes to the psi-weighted jumps.
            let jumps: f64 = (a..=b).map(|i| w[i] * (energy.right(i) - energy.left(i))).sum();
            let weighted: Vec<f64> = (a..=b).map(|i| w[i] * rates[i]).collect();
            worst = worst.max(jumps + trapezoid(&weighted, dt));
        }
    }
    worst
}

/// True iff the signal never increases, counting the `E(0-)` slot.
pub fn bv_monotone_check(energy: &EnergySignal) -> bool {
    energy.is_nonincreasing()
}

/// Acceptance thresholds for a verification run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub continuity: f64,
    pub momentum: f64,
    pub energy: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            continuity: 1e-3,
            momentum: 1e-3,
            energy: TOL_ENERGY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckResult {
    fn at_most(value: f64, threshold: f64) -> Self {
        Self {
            value,
            threshold,
            pass: value <= threshold,
        }
    }
}

/// Per-check residuals of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub id: String,
    pub bv_monotone: bool,
    pub energy_margin: CheckResult,
    pub dissipation_integral: f64,
    pub continuity: Vec<(RenormalizationPair, CheckResult)>,
    pub momentum: CheckResult,
    pub density_range: [f64; 2],
    pub monotonization_gap: f64,
    pub pass: bool,
}

/// Runs every check at the quarter times of the horizon and keeps the
/// largest residual.
pub fn verify_trajectory(
    traj: &Trajectory,
    law: &PressureLaw,
    visc: ViscosityPair,
    thresholds: &Thresholds,
    forcing: Option<Forcing<'_>>,
) -> Result<VerificationReport> {
    let last = traj.len() - 1;
    let kin = kinematics_upto(traj, last)?;
    let horizon = traj.t_end().max(traj.dt());
    let suite = TestFunctionSuite::default_for(traj.grid(), horizon)?;
    let taus: Vec<usize> = if last >= 4 {
        (1..=4).map(|j| j * last / 4).collect()
    } else {
        vec![last]
    };

    let mut continuity = Vec::new();
    for pair in RenormalizationPair::library() {
        let mut worst: f64 = 0.0;
        for &k in &taus {
            worst = worst.max(continuity_residual_with(traj, &kin, pair, &suite, k)?);
        }
        continuity.push((pair, CheckResult::at_most(worst, thresholds.continuity)));
    }
    let mut mom: f64 = 0.0;
    for &k in &taus {
        mom = mom.max(momentum_residual_with(traj, &kin, law, visc, &suite, k, forcing)?);
    }
    let momentum = CheckResult::at_most(mom, thresholds.momentum);

    let dim = traj.grid().dim();
    let dv = traj.grid().cell_volume();
    let rates: Vec<f64> = kin
        .iter()
        .map(|k| {
            (0..traj.grid().len())
                .map(|idx| k.dissipation(idx, dim, visc))
                .sum::<f64>()
                * dv
        })
        .collect();
    let margin = energy_margin_from_rates(traj.energy(), &rates, &Psi::suite());
    let energy_margin = CheckResult::at_most(margin, thresholds.energy);
    let bv = bv_monotone_check(traj.energy());
    let density_range = traj.rho().iter().fold([f64::INFINITY, f64::NEG_INFINITY], |r, f| {
        [r[0].min(f.min()), r[1].max(f.max())]
    });
    let pass = bv && energy_margin.pass && momentum.pass && continuity.iter().all(|(_, c)| c.pass);
    Ok(VerificationReport {
        id: traj.id().to_string(),
        bv_monotone: bv,
        energy_margin,
        dissipation_integral: trapezoid(&rates, traj.dt()),
        continuity,
        momentum,
        density_range,
        monotonization_gap: traj.monotonization_gap(),
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Boundary;
    use std::f64::consts::PI;

    fn steady(rho: ScalarField, m: VectorField, n: usize, dt: f64, e: f64) -> Trajectory {
        Trajectory::new(
            "steady",
            dt,
            vec![rho; n + 1],
            vec![m; n + 1],
            EnergySignal::new(dt, e, vec![e; n + 1]).unwrap(),
        )
        .unwrap()
    }

    fn law() -> PressureLaw {
        PressureLaw::gamma_law(1.0, 2.0).unwrap()
    }

    #[test]
    fn renormalization_identities() {
        for pair in RenormalizationPair::library() {
            assert_eq!(pair.big_b(0.0), 0.0);
            assert_eq!(pair.small_b(0.0), 0.0);
            for i in 1..=200 {
                let z = i as f64 * 0.05;
                assert!(pair.identity_residual(z) <= 1e-12, "{pair:?} at {z}");
            }
        }
        assert!(RenormalizationPair::Rational.b_bounded());
        assert!(!RenormalizationPair::Entropy { eps: 1e-3 }.b_bounded());
    }

    #[test]
    fn equilibrium_is_conforming() {
        let g = Grid::new_1d(1.0, 32, Boundary::DirichletNoslip).unwrap();
        let e = 1.0;
        let q = steady(ScalarField::constant(g, 1.0), VectorField::zeros(g), 10, 0.01, e);
        let suite = TestFunctionSuite::default_for(&g, 0.1).unwrap();
        for pair in RenormalizationPair::library() {
            assert!(continuity_residual(&q, pair, &suite, 0.1).unwrap() <= 1e-12);
        }
        let visc = ViscosityPair::new(0.1, 0.0).unwrap();
        assert!(momentum_residual(&q, &law(), visc, &suite, 0.1, None).unwrap() <= 1e-12);
        assert_eq!(energy_inequality_margin(&q, visc, &Psi::suite()).unwrap(), 0.0);
        assert_eq!(dissipation_integral(&q, visc, 0.0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn uniform_flow_on_periodic_grid() {
        let g = Grid::new_1d(1.0, 32, Boundary::Periodic).unwrap();
        let q = steady(
            ScalarField::constant(g, 1.0),
            VectorField::constant(g, &[0.3]),
            10,
            0.01,
            1.0,
        );
        let suite = TestFunctionSuite::default_for(&g, 0.1).unwrap();
        let visc = ViscosityPair::new(0.1, 0.0).unwrap();
        assert!(momentum_residual(&q, &law(), visc, &suite, 0.1, None).unwrap() <= 1e-12);
        assert!(continuity_residual(&q, RenormalizationPair::Identity, &suite, 0.1).unwrap() <= 1e-12);
    }

    #[test]
    fn increasing_energy_is_flagged() {
        let g = Grid::new_1d(1.0, 8, Boundary::DirichletNoslip).unwrap();
        let n = 8;
        let dt = 0.1;
        let e = EnergySignal::new(dt, 1.0, (0..=n).map(|i| 1.0 + 0.01 * i as f64).collect()).unwrap();
        let q = Trajectory::new(
            "up",
            dt,
            vec![ScalarField::constant(g, 1.0); n + 1],
            vec![VectorField::zeros(g); n + 1],
            e,
        )
        .unwrap();
        let visc = ViscosityPair::new(0.1, 0.0).unwrap();
        assert!(!bv_monotone_check(q.energy()));
        assert!(energy_inequality_margin(&q, visc, &Psi::suite()).unwrap() > 0.0);
    }

    #[test]
    fn monotone_examples() {
        assert!(bv_monotone_check(&EnergySignal::new(0.1, 1.0, vec![1.0; 4]).unwrap()));
        assert!(bv_monotone_check(
            &EnergySignal::new(0.1, 1.0, vec![1.0, 0.5, 0.5]).unwrap()
        ));
        assert!(!bv_monotone_check(
            &EnergySignal::new(0.1, 1.0, vec![1.0, 0.5, 0.6]).unwrap()
        ));
        assert!(!bv_monotone_check(&EnergySignal::new(0.1, 1.0, vec![1.1]).unwrap()));
    }

    #[test]
    fn one_dimensional_dissipation_is_bulk_only() {
        let g = Grid::new_1d(1.0, 400, Boundary::DirichletNoslip).unwrap();
        let m = VectorField::from_fn(g, |x, _| (PI * x[0]).sin());
        let q = steady(ScalarField::constant(g, 1.0), m, 10, 0.1, 1.0);
        let shear_only = ViscosityPair::new(1.0, 0.0).unwrap();
        assert!(dissipation_integral(&q, shear_only, 0.0, 1.0).unwrap().abs() <= 1e-12);
        let bulk = ViscosityPair::new(1.0, 1.0).unwrap();
        let d = dissipation_integral(&q, bulk, 0.0, 1.0).unwrap();
        assert!((d - PI * PI / 2.0).abs() < 1e-3, "{d}");
    }

    #[test]
    fn vacuum_is_rejected() {
        let g = Grid::new_1d(1.0, 10, Boundary::DirichletNoslip).unwrap();
        let rho = ScalarField::new(g, (0..10).map(|i| if i < 2 { 0.0 } else { 1.0 }).collect()).unwrap();
        let q = steady(rho, VectorField::zeros(g), 2, 0.1, 1.0);
        let suite = TestFunctionSuite::default_for(&g, 0.2).unwrap();
        assert!(matches!(
            continuity_residual(&q, RenormalizationPair::Identity, &suite, 0.2),
            Err(Error::Vacuum { cells: 2, total: 10 })
        ));
    }
}
