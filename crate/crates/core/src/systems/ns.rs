//! Explicit finite-volume solver for barotropic compressible Navier–Stokes
//! on a uniform grid with no-slip walls or periodic boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{stress_fixed, total_energy, PressureLaw, ViscosityPair};
use crate::state::{Boundary, Grid, InitialData, ScalarField, VectorField};
use crate::trajectory::{EnergySignal, Trajectory};
use crate::weakform::Forcing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Rusanov interface fluxes with forward Euler: first order, dissipative.
    LaxFriedrichsViscous,
    /// Forward/backward predictor–corrector: second order.
    MacCormackViscous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub grid: Grid,
    pub dt: f64,
    pub t_end: f64,
    pub law: PressureLaw,
    pub visc: ViscosityPair,
    pub scheme: Scheme,
    /// Extra diffusion `eps_art Δ` applied to density and momentum.
    pub eps_art: f64,
    /// Optional per-cell multiplier of `eps_art`.
    pub eps_profile: Option<Vec<f64>>,
    pub cfl: f64,
    /// Store every `save_every`-th step.
    pub save_every: usize,
    /// Lift the desk-scale cap on 2D runs.
    pub large: bool,
}

/// Default limits for 2D runs: cells per axis and final time.
pub const DESK_CELLS_2D: usize = 64;
pub const DESK_T_END_2D: f64 = 2.0;

impl SolverConfig {
    pub fn new(grid: Grid, dt: f64, t_end: f64, law: PressureLaw, visc: ViscosityPair) -> Self {
        Self {
            grid,
            dt,
            t_end,
            law,
            visc,
            scheme: Scheme::MacCormackViscous,
            eps_art: 0.0,
            eps_profile: None,
            cfl: 0.9,
            save_every: 1,
            large: false,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.dt > 0.0) || !(self.t_end > 0.0) {
            return Err(Error::Config("dt and t_end must be positive".into()));
        }
        let steps = self.t_end / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Config(format!(
                "t_end {} is not a multiple of dt {}",
                self.t_end, self.dt
            )));
        }
        if self.save_every == 0 || !self.steps().is_multiple_of(self.save_every) {
            return Err(Error::Config("save_every must divide the step count".into()));
        }
        if self.grid.dim() == 2
            && !self.large
            && (self.grid.cells(0).max(self.grid.cells(1)) > DESK_CELLS_2D || self.t_end > DESK_T_END_2D)
        {
            return Err(Error::Config(format!(
                "2D runs are capped at {DESK_CELLS_2D}x{DESK_CELLS_2D} cells and t_end <= {DESK_T_END_2D}; set `large` to lift the cap"
            )));
        }
        if !(self.eps_art >= 0.0) {
            return Err(Error::Config("eps_art must be nonnegative".into()));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Config("cfl factor must lie in (0, 1]".into()));
        }
        if let Some(p) = &self.eps_profile {
            if p.len() != self.grid.len() || p.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Config(
                    "eps_profile must be nonnegative with one entry per cell".into(),
                ));
            }
        }
        self.law.validate(self.grid.dim())
    }

    /// Largest stable step for the given state, from the wave speed and the
    /// effective diffusion coefficient.
    pub fn stable_dt(&self, rho: &[f64], m: &[Vec<f64>]) -> Result<f64> {
        let g = &self.grid;
        let dim = g.dim();
        let mut speed: f64 = 0.0;
        let mut rho_min = f64::INFINITY;
        for (idx, &r) in rho.iter().enumerate() {
            let u: f64 = (0..dim).map(|c| (m[c][idx] / r).powi(2)).sum::<f64>().sqrt();
            speed = speed.max(u + self.law.sound_speed_sq(r)?.sqrt());
            rho_min = rho_min.min(r);
        }
        let inv_h: f64 = (0..dim).map(|a| 1.0 / g.spacing(a)).sum();
        let inv_h2: f64 = (0..dim).map(|a| 1.0 / g.spacing(a).powi(2)).sum();
        // In one dimension the shear part of the stress vanishes identically.
        let shear = if dim == 1 { 0.0 } else { 2.0 * self.visc.mu() };
        let eps_max = self.eps_art
            * self
                .eps_profile
                .as_ref()
                .map_or(1.0, |p| p.iter().copied().fold(0.0, f64::max));
        let nu = (shear + self.visc.bulk()) / rho_min + eps_max;
        let wave = if speed > 0.0 {
            self.cfl / (speed * inv_h)
        } else {
            f64::INFINITY
        };
        let diff = if nu > 0.0 {
            self.cfl / (2.0 * nu * inv_h2)
        } else {
            f64::INFINITY
        };
        Ok(wave.min(diff))
    }
}

/// Conserved state: density and momentum components on the cells.
#[derive(Debug, Clone)]
struct State {
    rho: Vec<f64>,
    m: Vec<Vec<f64>>,
}

/// Maps a possibly out-of-range cell to an interior cell and the sign picked
/// up by the momentum (mirror for walls, wrap for periodic).
fn resolve(i: isize, n: usize, periodic: bool) -> (usize, f64) {
    if i < 0 {
        if periodic {
            ((i + n as isize) as usize, 1.0)
        } else {
            ((-1 - i) as usize, -1.0)
        }
    } else if i as usize >= n {
        if periodic {
            (i as usize - n, 1.0)
        } else {
            (2 * n - 1 - i as usize, -1.0)
        }
    } else {
        (i as usize, 1.0)
    }
}

struct Operator<'a> {
    cfg: &'a SolverConfig,
    nx: usize,
    ny: usize,
    periodic: bool,
}

#[derive(Clone, Copy)]
enum FluxKind {
    Rusanov,
    Forward,
    Backward,
}

impl<'a> Operator<'a> {
    fn new(cfg: &'a SolverConfig) -> Self {
        let g = &cfg.grid;
        Self {
            cfg,
            nx: g.cells(0),
            ny: if g.dim() == 2 { g.cells(1) } else { 1 },
            periodic: g.boundary() == Boundary::Periodic,
        }
    }

    fn dim(&self) -> usize {
        self.cfg.grid.dim()
    }

    /// Cell index and momentum sign of `(i, j)` with ghosts resolved.
    fn at(&self, i: isize, j: isize) -> (usize, f64) {
        let (ii, si) = resolve(i, self.nx, self.periodic);
        let (jj, sj) = if self.dim() == 2 {
            resolve(j, self.ny, self.periodic)
        } else {
            (0, 1.0)
        };
        (self.cfg.grid.index(ii, jj), si * sj)
    }

    /// Physical flux in direction `a` of the conserved vector `(rho, m)`.
    fn flux(&self, a: usize, rho: f64, m: [f64; 2]) -> Result<[f64; 3]> {
        let p = self.cfg.law.pressure(rho)?;
        let dim = self.dim();
        let mut f = [m[a], 0.0, 0.0];
        for c in 0..dim {
            f[1 + c] = m[a] * m[c] / rho + if c == a { p } else { 0.0 };
        }
        Ok(f)
    }

    fn wave_speed(&self, a: usize, rho: f64, m: [f64; 2]) -> Result<f64> {
        Ok((m[a] / rho).abs() + self.cfg.law.sound_speed_sq(rho)?.sqrt())
    }

    fn cell(&self, s: &State, i: isize, j: isize) -> (f64, [f64; 2]) {
        let (idx, sign) = self.at(i, j);
        let mut m = [0.0; 2];
        for (c, mc) in m.iter_mut().enumerate().take(self.dim()) {
            *mc = sign * s.m[c][idx];
        }
        (s.rho[idx], m)
    }

    fn velocity(&self, s: &State, i: isize, j: isize) -> [f64; 2] {
        let (rho, m) = self.cell(s, i, j);
        [m[0] / rho, m[1] / rho]
    }

    fn is_wall(&self, a: usize, left: isize) -> bool {
        if self.periodic {
            return false;
        }
        let n = if a == 0 { self.nx } else { self.ny } as isize;
        left < 0 || left + 1 >= n
    }

    /// Convective and pressure flux through the face between `left` and
    /// `left + 1` along axis `a` (the other index fixed at `other`).
    fn face_flux(&self, s: &State, a: usize, left: isize, other: isize, kind: FluxKind) -> Result<[f64; 3]> {
        let (l, r) = if a == 0 {
            ((left, other), (left + 1, other))
        } else {
            ((other, left), (other, left + 1))
        };
        let (rl, ml) = self.cell(s, l.0, l.1);
        let (rr, mr) = self.cell(s, r.0, r.1);
        if self.is_wall(a, left) && !matches!(kind, FluxKind::Rusanov) {
            // One-sided fluxes would leak mass through the wall; keep only
            // the pressure of the adjacent cell. Rusanov against the mirror
            // cell already has zero mass flux and keeps its dissipation.
            let rho = if left < 0 { rr } else { rl };
            let mut f = [0.0; 3];
            f[1 + a] = self.cfg.law.pressure(rho)?;
            return Ok(f);
        }
        Ok(match kind {
            FluxKind::Forward => self.flux(a, rr, mr)?,
            FluxKind::Backward => self.flux(a, rl, ml)?,
            FluxKind::Rusanov => {
                let fl = self.flux(a, rl, ml)?;
                let fr = self.flux(a, rr, mr)?;
                let speed = self.wave_speed(a, rl, ml)?.max(self.wave_speed(a, rr, mr)?);
                let ul = [rl, ml[0], ml[1]];
                let ur = [rr, mr[0], mr[1]];
                let mut f = [0.0; 3];
                for v in 0..3 {
                    f[v] = 0.5 * (fl[v] + fr[v]) - 0.5 * speed * (ur[v] - ul[v]);
                }
                f
            }
        })
    }

    /// Viscous stress row `S[:, a]` and artificial diffusion at a face.
    fn face_diffusion(&self, s: &State, a: usize, left: isize, other: isize) -> [f64; 3] {
        let dim = self.dim();
        let g = &self.cfg.grid;
        let h = g.spacing(a);
        let pos = |shift_a: isize, shift_b: isize| -> (isize, isize) {
            if a == 0 {
                (left + shift_a, other + shift_b)
            } else {
                (other + shift_b, left + shift_a)
            }
        };
        let (il, jl) = pos(0, 0);
        let (ir, jr) = pos(1, 0);
        let ul = self.velocity(s, il, jl);
        let ur = self.velocity(s, ir, jr);
        // grad[c][b] = d u_c / d x_b at the face
        let mut grad = [[0.0; 2]; 2];
        for c in 0..dim {
            grad[c][a] = (ur[c] - ul[c]) / h;
        }
        if dim == 2 {
            let b = 1 - a;
            let hb = g.spacing(b);
            let (p0, p1) = (pos(0, 1), pos(0, -1));
            let (q0, q1) = (pos(1, 1), pos(1, -1));
            let (u_p0, u_p1) = (self.velocity(s, p0.0, p0.1), self.velocity(s, p1.0, p1.1));
            let (u_q0, u_q1) = (self.velocity(s, q0.0, q0.1), self.velocity(s, q1.0, q1.1));
            for c in 0..2 {
                grad[c][b] = 0.25 * ((u_p0[c] - u_p1[c]) + (u_q0[c] - u_q1[c])) / hb;
            }
        }
        let stress = if dim == 1 {
            let s1 = stress_fixed(&[[grad[0][0]]], self.cfg.visc);
            [[s1[0][0], 0.0], [0.0, 0.0]]
        } else {
            stress_fixed(&grad, self.cfg.visc)
        };
        let mut f = [0.0; 3];
        for c in 0..dim {
            f[1 + c] = stress[c][a];
        }
        if self.cfg.eps_art > 0.0 {
            let (idx_l, _) = self.at(il, jl);
            let (idx_r, _) = self.at(ir, jr);
            let weight = |idx: usize| self.cfg.eps_profile.as_ref().map_or(1.0, |p| p[idx]);
            let eps = self.cfg.eps_art * 0.5 * (weight(idx_l) + weight(idx_r));
            let (rl, ml) = self.cell(s, il, jl);
            let (rr, mr) = self.cell(s, ir, jr);
            f[0] += eps * (rr - rl) / h;
            for c in 0..dim {
                f[1 + c] += eps * (mr[c] - ml[c]) / h;
            }
        }
        f
    }

    /// Time derivative of the conserved state.
    fn rhs(&self, s: &State, kind: FluxKind, t: f64, forcing: Option<Forcing<'_>>) -> Result<State> {
        let g = &self.cfg.grid;
        let dim = self.dim();
        let mut d = State {
            rho: vec![0.0; g.len()],
            m: vec![vec![0.0; g.len()]; dim],
        };
        for a in 0..dim {
            let h = g.spacing(a);
            let (n_along, n_other) = if a == 0 { (self.nx, self.ny) } else { (self.ny, self.nx) };
            for o in 0..n_other as isize {
                // fluxes through faces -1/2 .. n-1/2
                let mut prev = None;
                for left in -1..n_along as isize {
                    let conv = self.face_flux(s, a, left, o, kind)?;
                    let diff = self.face_diffusion(s, a, left, o);
                    let total = [conv[0] - diff[0], conv[1] - diff[1], conv[2] - diff[2]];
                    if let Some(p) = prev {
                        let p: [f64; 3] = p;
                        let idx = if a == 0 {
                            g.index(left as usize, o as usize)
                        } else {
                            g.index(o as usize, left as usize)
                        };
                        d.rho[idx] -= (total[0] - p[0]) / h;
                        for c in 0..dim {
                            d.m[c][idx] -= (total[1 + c] - p[1 + c]) / h;
                        }
                    }
                    prev = Some(total);
                }
            }
        }
        if let Some(force) = forcing {
            for idx in 0..g.len() {
                let f = force(t, &g.coords(idx));
                for c in 0..dim {
                    d.m[c][idx] += f[c];
                }
            }
        }
        Ok(d)
    }
}

fn axpy(base: &State, dt: f64, d: &State) -> State {
    State {
        rho: base.rho.iter().zip(&d.rho).map(|(a, b)| a + dt * b).collect(),
        m: base
            .m
            .iter()
            .zip(&d.m)
            .map(|(x, y)| x.iter().zip(y).map(|(a, b)| a + dt * b).collect())
            .collect(),
    }
}

fn average(a: &State, b: &State) -> State {
    State {
        rho: a.rho.iter().zip(&b.rho).map(|(x, y)| 0.5 * (x + y)).collect(),
        m: a.m
            .iter()
            .zip(&b.m)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| 0.5 * (p + q)).collect())
            .collect(),
    }
}

fn check_positive(s: &State, step: usize) -> Result<()> {
    match s.rho.iter().enumerate().find(|(_, r)| !(**r > 0.0)) {
        Some((cell, &value)) => Err(Error::Positivity { step, cell, value }),
        None => Ok(()),
    }
}

/// Runs the solver from `data` and returns the stored trajectory. The
/// energy signal is the running minimum of the discrete energy over stored
/// samples, starting from `E(0-) = data.e0`; the raw energy rides along.
pub fn ns_solve(data: &InitialData, cfg: &SolverConfig) -> Result<Trajectory> {
    ns_solve_forced(data, cfg, None, "ns")
}

/// [`ns_solve`] with an optional body force and a chosen trajectory id.
pub fn ns_solve_forced(
    data: &InitialData,
    cfg: &SolverConfig,
    forcing: Option<Forcing<'_>>,
    id: &str,
) -> Result<Trajectory> {
    cfg.validate()?;
    if data.grid() != &cfg.grid {
        return Err(Error::Shape("initial data grid differs from the solver grid".into()));
    }
    let op = Operator::new(cfg);
    let mut s = State {
        rho: data.rho0.values().to_vec(),
        m: data.m0.comps().to_vec(),
    };
    check_positive(&s, 0)?;
    let steps = cfg.steps();
    let mut rho_out = vec![data.rho0.clone()];
    let mut m_out = vec![data.m0.clone()];
    let raw0 = total_energy(&data.rho0, &data.m0, &cfg.law)?;
    let mut raw = vec![raw0];
    let mut energy = vec![raw0.min(data.e0)];
    for step in 1..=steps {
        let limit = cfg.stable_dt(&s.rho, &s.m)?;
        if cfg.dt > limit {
            return Err(Error::Cfl {
                step,
                dt: cfg.dt,
                limit,
            });
        }
        let t = (step - 1) as f64 * cfg.dt;
        s = match cfg.scheme {
            Scheme::LaxFriedrichsViscous => axpy(&s, cfg.dt, &op.rhs(&s, FluxKind::Rusanov, t, forcing)?),
            Scheme::MacCormackViscous => {
                let pred = axpy(&s, cfg.dt, &op.rhs(&s, FluxKind::Forward, t, forcing)?);
                check_positive(&pred, step)?;
                let corr = axpy(&pred, cfg.dt, &op.rhs(&pred, FluxKind::Backward, t + cfg.dt, forcing)?);
                average(&s, &corr)
            }
        };
        check_positive(&s, step)?;
        if step % cfg.save_every == 0 {
            let rho = ScalarField::new(cfg.grid, s.rho.clone())?;
            let m = VectorField::new(cfg.grid, s.m.clone())?;
            let e = total_energy(&rho, &m, &cfg.law)?;
            raw.push(e);
            energy.push(e.min(*energy.last().expect("nonempty")));
            rho_out.push(rho);
            m_out.push(m);
        }
    }
    let dt_out = cfg.dt * cfg.save_every as f64;
    let signal = EnergySignal::new(dt_out, data.e0, energy)?;
    Trajectory::new(id, dt_out, rho_out, m_out, signal)?.with_raw_energy(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dimensional_runs_are_capped() {
        let grid = Grid::new_2d(1.0, 1.0, 65, 8, Boundary::Periodic).unwrap();
        let law = PressureLaw::gamma_law(1.0, 2.0).unwrap();
        let mut cfg = SolverConfig::new(grid, 1e-3, 0.01, law, ViscosityPair::new(0.1, 0.0).unwrap());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.large = true;
        assert!(cfg.validate().is_ok());
    }

    fn setup(cells: usize, boundary: Boundary) -> SolverConfig {
        let grid = Grid::new_1d(1.0, cells, boundary).unwrap();
        SolverConfig::new(
            grid,
            1e-3,
            0.05,
            PressureLaw::gamma_law(1.0, 2.0).unwrap(),
            ViscosityPair::new(0.1, 0.01).unwrap(),
        )
    }

    fn bump(cfg: &SolverConfig) -> InitialData {
        let rho = ScalarField::from_fn(cfg.grid, |x| 1.0 + 0.2 * (-((x[0] - 0.5) / 0.1).powi(2)).exp());
        let m = VectorField::zeros(cfg.grid);
        let e0 = total_energy(&rho, &m, &cfg.law).unwrap();
        InitialData::new(rho, m, e0).unwrap()
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        for scheme in [Scheme::LaxFriedrichsViscous, Scheme::MacCormackViscous] {
            let mut cfg = setup(32, Boundary::DirichletNoslip);
            cfg.scheme = scheme;
            let rho = ScalarField::constant(cfg.grid, 1.0);
            let m = VectorField::zeros(cfg.grid);
            let e0 = total_energy(&rho, &m, &cfg.law).unwrap();
            let q = ns_solve(&InitialData::new(rho.clone(), m, e0).unwrap(), &cfg).unwrap();
            for r in q.rho() {
                assert!(r.values().iter().all(|v| (v - 1.0).abs() <= 1e-12));
            }
            assert!(q.energy().values().iter().all(|e| (e - e0).abs() <= 1e-12));
        }
    }

    #[test]
    fn mass_is_conserved_and_energy_decays() {
        for scheme in [Scheme::LaxFriedrichsViscous, Scheme::MacCormackViscous] {
            let mut cfg = setup(64, Boundary::DirichletNoslip);
            cfg.scheme = scheme;
            let data = bump(&cfg);
            let q = ns_solve(&data, &cfg).unwrap();
            let m0 = data.rho0.integral();
            for r in q.rho() {
                assert!((r.integral() - m0).abs() < 1e-12);
            }
            assert!(q.energy().is_nonincreasing());
            assert_eq!(q.len(), 51);
        }
    }

    #[test]
    fn two_dimensional_run() {
        let grid = Grid::new_2d(1.0, 1.0, 16, 16, Boundary::DirichletNoslip).unwrap();
        let mut cfg = SolverConfig::new(
            grid,
            2e-3,
            0.02,
            PressureLaw::gamma_law(1.0, 2.0).unwrap(),
            ViscosityPair::new(0.01, 0.0).unwrap(),
        );
        cfg.save_every = 5;
        let rho = ScalarField::from_fn(grid, |x| {
            1.0 + 0.1 * (-((x[0] - 0.5).powi(2) + (x[1] - 0.4).powi(2)) / 0.02).exp()
        });
        let m = VectorField::zeros(grid);
        let e0 = total_energy(&rho, &m, &cfg.law).unwrap();
        let q = ns_solve(&InitialData::new(rho.clone(), m, e0).unwrap(), &cfg).unwrap();
        assert_eq!(q.len(), 3);
        assert!((q.rho()[2].integral() - rho.integral()).abs() < 1e-12);
        assert!(q.energy().is_nonincreasing());
    }

    #[test]
    fn cfl_violation_is_reported() {
        let mut cfg = setup(256, Boundary::DirichletNoslip);
        cfg.dt = 1e-2;
        cfg.t_end = 0.1;
        let data = bump(&cfg);
        assert!(matches!(ns_solve(&data, &cfg), Err(Error::Cfl { step: 1, .. })));
    }

    #[test]
    fn restart_reproduces_the_tail() {
        let cfg = setup(32, Boundary::DirichletNoslip);
        let data = bump(&cfg);
        let q = ns_solve(&data, &cfg).unwrap();
        let mut tail_cfg = cfg.clone();
        tail_cfg.t_end = 0.03;
        let restart = q.evaluate(0.02).unwrap().to_initial_data();
        let r = ns_solve(&restart, &tail_cfg).unwrap();
        let k = 20;
        for i in 0..r.len() {
            assert_eq!(r.rho()[i], q.rho()[k + i]);
            assert_eq!(r.energy().right(i), q.energy().right(k + i));
        }
    }

    #[test]
    fn periodic_uniform_flow_is_steady() {
        let cfg = setup(32, Boundary::Periodic);
        let rho = ScalarField::constant(cfg.grid, 1.0);
        let m = VectorField::constant(cfg.grid, &[0.3]);
        let e0 = total_energy(&rho, &m, &cfg.law).unwrap();
        let q = ns_solve(&InitialData::new(rho, m.clone(), e0).unwrap(), &cfg).unwrap();
        let last = q.m().last().unwrap();
        assert!(last.component(0).iter().all(|v| (v - 0.3).abs() < 1e-12));
    }
}
