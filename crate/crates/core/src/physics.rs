//! Constitutive laws: barotropic pressure, pressure potential, Newtonian
//! viscous stress and the total energy functional.
//!
//! The pressure potential `P` solves `rho * P'(rho) - P(rho) = p(rho)` and is
//! normalised by `P(0) = 0` together with the representative
//!
//! ```text
//! P(rho) = rho * ( ∫_1^rho p(z) / z^2 dz + c ),   c = p(1) / (gamma - 1)
//! ```
//!
//! which reproduces `a rho^gamma / (gamma - 1)` for the gamma law. Any other
//! representative differs by `c' rho`, which shifts energies by a multiple of
//! the (conserved) total mass.

use std::io::BufRead;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{ScalarField, VectorField};

/// Tolerance used when checking `p(0) = 0` for tabulated laws.
const ZERO_PRESSURE_TOL: f64 = 1e-12;

/// Barotropic pressure law together with the growth constants `a1, a2, b`
/// and the adiabatic exponent `gamma` appearing in the pressure bounds
///
/// ```text
/// p'(rho) >= a1 rho^(gamma-1) - b   (rho > 0)
/// p(rho)  <= a2 rho^gamma + b       (rho >= 0)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct PressureLaw {
    kind: PressureKind,
    gamma: f64,
    a1: f64,
    a2: f64,
    b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PressureKind {
    /// `p(rho) = a rho^gamma`.
    GammaLaw { a: f64 },
    /// Sampled `(rho, p)` pairs joined by a shape-preserving cubic.
    Tabulated(Tabulated),
}

impl PressureLaw {
    /// Gamma law `a rho^gamma` with the tightest bound constants
    /// `a1 = a gamma`, `a2 = a`, `b = 0`.
    pub fn gamma_law(a: f64, gamma: f64) -> Result<Self> {
        if !(a > 0.0) || !(gamma > 0.0) || !a.is_finite() || !gamma.is_finite() {
            return Err(Error::Domain(format!(
                "gamma law needs a > 0 and gamma > 0, got a={a}, gamma={gamma}"
            )));
        }
        Ok(Self {
            kind: PressureKind::GammaLaw { a },
            gamma,
            a1: a * gamma,
            a2: a,
            b: 0.0,
        })
    }

    /// Tabulated law. The first pair must be `(0, 0)`, densities strictly
    /// increasing, and the table must reach `rho = 1` (the reference density
    /// of the potential).
    pub fn tabulated(points: Vec<(f64, f64)>, gamma: f64, a1: f64, a2: f64, b: f64) -> Result<Self> {
        let table = Tabulated::new(points)?;
        if !(gamma > 0.0) {
            return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
        }
        let law = Self {
            kind: PressureKind::Tabulated(table),
            gamma,
            a1,
            a2,
            b,
        };
        Ok(law)
    }

    /// Reads a two-column `rho,p` CSV. Blank lines, `#` comments and a
    /// non-numeric header line are skipped.
    pub fn from_csv_reader<R: BufRead>(reader: R, gamma: f64, a1: f64, a2: f64, b: f64) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(Error::Format(format!(
                    "line {}: expected two columns, found {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(r), Ok(p)) => points.push((r, p)),
                _ if points.is_empty() => continue,
                _ => {
                    return Err(Error::Format(format!("line {}: not a number pair", lineno + 1)));
                }
            }
        }
        Self::tabulated(points, gamma, a1, a2, b)
    }

    pub fn from_csv_path(path: &Path, gamma: f64, a1: f64, a2: f64, b: f64) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file), gamma, a1, a2, b)
    }

    /// Replaces the bound constants.
    pub fn with_bounds(mut self, a1: f64, a2: f64, b: f64) -> Self {
        self.a1 = a1;
        self.a2 = a2;
        self.b = b;
        self
    }

    pub fn kind(&self) -> &PressureKind {
        &self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn bounds(&self) -> (f64, f64, f64) {
        (self.a1, self.a2, self.b)
    }

    /// Largest admissible density, if the law has one (tabulated laws).
    pub fn max_density(&self) -> Option<f64> {
        match &self.kind {
            PressureKind::GammaLaw { .. } => None,
            PressureKind::Tabulated(t) => Some(t.max_rho()),
        }
    }

    /// Checks the standing assumptions `p(0) = 0`, `a1 > 0` and
    /// `gamma > dim / 2`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let p0 = self.pressure(0.0)?;
        if p0.abs() > ZERO_PRESSURE_TOL {
            return Err(Error::Domain(format!("p(0) must vanish, got {p0}")));
        }
        if !(self.a1 > 0.0) {
            return Err(Error::Domain(format!(
                "bound constant a1 must be positive, got {}",
                self.a1
            )));
        }
        if !(self.gamma > dim as f64 / 2.0) {
            return Err(Error::Domain(format!(
                "adiabatic exponent {} must exceed N/2 = {}",
                self.gamma,
                dim as f64 / 2.0
            )));
        }
        Ok(())
    }

    /// Pressure `p(rho)`.
    pub fn pressure(&self, rho: f64) -> Result<f64> {
        check_density(rho)?;
        match &self.kind {
            PressureKind::GammaLaw { a } => Ok(a * rho.powf(self.gamma)),
            PressureKind::Tabulated(t) => t.eval(rho),
        }
    }

    /// Derivative `p'(rho)`.
    pub fn derivative(&self, rho: f64) -> Result<f64> {
        check_density(rho)?;
        match &self.kind {
            PressureKind::GammaLaw { a } => {
                if rho == 0.0 {
                    // rho^(gamma-1) at 0: 0 for gamma > 1, a for gamma = 1, +inf below.
                    return Ok(if self.gamma > 1.0 {
                        0.0
                    } else if self.gamma == 1.0 {
                        *a
                    } else {
                        f64::INFINITY
                    });
                }
                Ok(a * self.gamma * rho.powf(self.gamma - 1.0))
            }
            PressureKind::Tabulated(t) => t.derivative(rho),
        }
    }

    /// Pressure potential `P(rho)` with `P(0) = 0`.
    pub fn potential(&self, rho: f64) -> Result<f64> {
        check_density(rho)?;
        if rho == 0.0 {
            return Ok(0.0);
        }
        match &self.kind {
            PressureKind::GammaLaw { a } => {
                if (self.gamma - 1.0).abs() < 1e-12 {
                    Ok(a * rho * rho.ln())
                } else {
                    Ok(a * rho.powf(self.gamma) / (self.gamma - 1.0))
                }
            }
            PressureKind::Tabulated(t) => {
                let c = if (self.gamma - 1.0).abs() < 1e-12 {
                    0.0
                } else {
                    t.eval(1.0)? / (self.gamma - 1.0)
                };
                Ok(rho * (t.integral_from_one(rho)? + c))
            }
        }
    }

    /// Sound speed squared `p'(rho)`, clamped below at zero.
    pub(crate) fn sound_speed_sq(&self, rho: f64) -> Result<f64> {
        Ok(self.derivative(rho)?.max(0.0))
    }
}

fn check_density(rho: f64) -> Result<()> {
    if rho < 0.0 || rho.is_nan() {
        return Err(Error::Domain(format!("density must be nonnegative, got {rho}")));
    }
    Ok(())
}

/// `p(rho)`.
pub fn pressure(rho: f64, law: &PressureLaw) -> Result<f64> {
    law.pressure(rho)
}

/// `P(rho)`, the normalised pressure potential.
pub fn pressure_potential(rho: f64, law: &PressureLaw) -> Result<f64> {
    law.potential(rho)
}

/// Evaluator for the pressure potential paired with the tolerance at which
/// the defining identity is expected to hold.
#[derive(Debug, Clone)]
pub struct PressurePotential<'a> {
    law: &'a PressureLaw,
    pub quadrature_tol: f64,
}

impl<'a> PressurePotential<'a> {
    pub fn new(law: &'a PressureLaw) -> Self {
        Self {
            law,
            quadrature_tol: 1e-10,
        }
    }

    pub fn eval(&self, rho: f64) -> Result<f64> {
        self.law.potential(rho)
    }

    /// Relative residual of `rho P'(rho) - P(rho) = p(rho)`, with `P'` from
    /// the derivative of a degree-six interpolant through seven samples. For a
    /// tabulated law the samples stay inside the interpolation segment that
    /// holds `rho`, where the potential is smooth.
    pub fn identity_residual(&self, rho: f64) -> Result<f64> {
        if !(rho > 0.0) {
            return Err(Error::Domain(format!("identity check needs rho > 0, got {rho}")));
        }
        let (lo, hi) = match &self.law.kind {
            PressureKind::Tabulated(t) => t.segment_bounds(rho)?,
            PressureKind::GammaLaw { .. } => (0.9 * rho, 1.1 * rho),
        };
        let s = ((hi - lo) / 14.0).min(0.02 * rho);
        let centre = rho.clamp(lo + 3.5 * s, hi - 3.5 * s);
        let nodes: Vec<f64> = (0..7).map(|k| centre + (k as f64 - 3.0) * s).collect();
        let mut dp = 0.0;
        for (j, &xj) in nodes.iter().enumerate() {
            dp += self.eval(xj)? * lagrange_derivative_weight(&nodes, j, rho);
        }
        let big_p = self.eval(rho)?;
        let p = self.law.pressure(rho)?;
        let scale = (rho * dp).abs() + big_p.abs() + p.abs();
        let res = rho * dp - big_p - p;
        Ok(if scale > 0.0 { res.abs() / scale } else { res.abs() })
    }
}

/// `l_j'(x)` for the Lagrange basis polynomial of node `j`.
fn lagrange_derivative_weight(nodes: &[f64], j: usize, x: f64) -> f64 {
    let xj = nodes[j];
    let denom: f64 = nodes
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != j)
        .map(|(_, &xi)| xj - xi)
        .product();
    let mut num = 0.0;
    for k in (0..nodes.len()).filter(|&k| k != j) {
        let prod: f64 = nodes
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j && i != k)
            .map(|(_, &xi)| x - xi)
            .product();
        num += prod;
    }
    num / denom
}

/// Which inequality of the pressure-bound pair a sample violates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundViolation {
    /// `p'(rho) < a1 rho^(gamma-1) - b`.
    Derivative { rho: f64, derivative: f64, bound: f64 },
    /// `p(rho) > a2 rho^gamma + b`.
    Growth { rho: f64, pressure: f64, bound: f64 },
    /// The law could not be evaluated at this sample.
    Unevaluable { rho: f64, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub violations: Vec<BoundViolation>,
}

impl BoundsReport {
    pub fn is_conforming(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Scans every sample against both pressure bounds. The derivative bound is
/// only tested for `rho > 0`.
pub fn check_pressure_bounds(law: &PressureLaw, rho_samples: &[f64]) -> BoundsReport {
    let (a1, a2, b) = law.bounds();
    let gamma = law.gamma();
    let mut report = BoundsReport::default();
    for &rho in rho_samples {
        let evaluated = law.pressure(rho).and_then(|p| Ok((p, law.derivative(rho)?)));
        let (p, dp) = match evaluated {
            Ok(v) => v,
            Err(e) => {
                report.violations.push(BoundViolation::Unevaluable {
                    rho,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if rho > 0.0 {
            let bound = a1 * rho.powf(gamma - 1.0) - b;
            if dp < bound {
                report.violations.push(BoundViolation::Derivative {
                    rho,
                    derivative: dp,
                    bound,
                });
            }
        }
        let bound = a2 * rho.powf(gamma) + b;
        if p > bound {
            report.violations.push(BoundViolation::Growth {
                rho,
                pressure: p,
                bound,
            });
        }
    }
    report
}

/// Shear and bulk viscosity of the Newtonian stress law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscosityPair {
    mu: f64,
    bulk: f64,
}

impl ViscosityPair {
    pub fn new(mu: f64, bulk: f64) -> Result<Self> {
        if !(mu > 0.0) || !(bulk >= 0.0) || !mu.is_finite() || !bulk.is_finite() {
            return Err(Error::Domain(format!(
                "viscosities need mu > 0 and bulk >= 0, got mu={mu}, bulk={bulk}"
            )));
        }
        Ok(Self { mu, bulk })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn bulk(&self) -> f64 {
        self.bulk
    }
}

/// Newtonian stress on a fixed-size gradient, `grad[i][j] = d u_i / d x_j`.
pub fn stress_fixed<const N: usize>(grad: &[[f64; N]; N], visc: ViscosityPair) -> [[f64; N]; N] {
    let div: f64 = (0..N).map(|i| grad[i][i]).sum();
    let mut out = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            out[i][j] = visc.mu * (grad[i][j] + grad[j][i]);
        }
        out[i][i] += (visc.bulk - 2.0 * visc.mu / N as f64) * div;
    }
    out
}

/// `S(grad u) : grad u` for a fixed-size gradient.
pub fn dissipation_density<const N: usize>(grad: &[[f64; N]; N], visc: ViscosityPair) -> f64 {
    let s = stress_fixed(grad, visc);
    let mut acc = 0.0;
    for i in 0..N {
        for j in 0..N {
            acc += s[i][j] * grad[i][j];
        }
    }
    acc
}

/// `mu (grad u + grad u^T - (2/N) div u I) + bulk div u I`.
pub fn stress(grad_u: &DMatrix<f64>, visc: ViscosityPair, dim: usize) -> Result<DMatrix<f64>> {
    if !grad_u.is_square() {
        return Err(Error::Shape(format!(
            "velocity gradient must be square, got {}x{}",
            grad_u.nrows(),
            grad_u.ncols()
        )));
    }
    if !(1..=3).contains(&dim) || grad_u.nrows() != dim {
        return Err(Error::Shape(format!(
            "dimension {dim} does not match a {}x{} gradient",
            grad_u.nrows(),
            grad_u.ncols()
        )));
    }
    let div = grad_u.trace();
    let mut s = (grad_u + grad_u.transpose()) * visc.mu;
    for i in 0..dim {
        s[(i, i)] += (visc.bulk - 2.0 * visc.mu / dim as f64) * div;
    }
    Ok(s)
}

/// `|m|^2 / rho` extended as a convex lower semicontinuous function:
/// zero when `m = 0`, `+inf` when `rho = 0` and `m != 0`. Negative densities
/// lie outside the domain and yield NaN.
pub fn kinetic_density(rho: f64, m: &[f64]) -> f64 {
    let m2: f64 = m.iter().map(|v| v * v).sum();
    if rho < 0.0 || rho.is_nan() {
        return f64::NAN;
    }
    if m2 == 0.0 {
        0.0
    } else if rho > 0.0 {
        m2 / rho
    } else {
        f64::INFINITY
    }
}

/// `∫ ( ½ |m|²/rho + P(rho) ) dx` by the cell-centred rule. Returns `+inf`
/// when some cell carries momentum without mass.
pub fn total_energy(rho: &ScalarField, m: &VectorField, law: &PressureLaw) -> Result<f64> {
    if rho.grid() != m.grid() {
        return Err(Error::Shape("density and momentum live on different grids".into()));
    }
    let grid = rho.grid();
    let mut acc = 0.0;
    let mut mv = [0.0; 2];
    for (idx, &r) in rho.values().iter().enumerate() {
        m.write_at(idx, &mut mv);
        let kin = kinetic_density(r, &mv[..grid.dim()]);
        if kin.is_nan() {
            return Err(Error::Domain(format!("negative density {r} in cell {idx}")));
        }
        acc += 0.5 * kin + law.potential(r)?;
    }
    Ok(acc * grid.cell_volume())
}

/// Shape-preserving (Fritsch–Carlson) cubic through `(rho, p)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
    /// `∫_1^{x_k} p(z)/z^2 dz` at every knot with `x_k > 0`.
    cumulative: Vec<f64>,
}

impl Tabulated {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Domain("tabulated law needs at least three points".into()));
        }
        if points[0].0 != 0.0 || points[0].1.abs() > ZERO_PRESSURE_TOL {
            return Err(Error::Domain(format!(
                "first table row must be (0, 0), got ({}, {})",
                points[0].0, points[0].1
            )));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Domain(format!(
                    "densities must increase strictly ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if points.iter().any(|(r, p)| !r.is_finite() || !p.is_finite()) {
            return Err(Error::Domain("table contains non-finite values".into()));
        }
        let x: Vec<f64> = points.iter().map(|p| p.0).collect();
        let mut y: Vec<f64> = points.iter().map(|p| p.1).collect();
        y[0] = 0.0;
        if *x.last().unwrap() < 1.0 {
            return Err(Error::Domain("table must cover the reference density rho = 1".into()));
        }
        let d = pchip_slopes(&x, &y);
        let mut table = Self {
            x,
            y,
            d,
            cumulative: Vec::new(),
        };
        table.cumulative = table.knot_integrals();
        Ok(table)
    }

    pub fn max_rho(&self) -> f64 {
        *self.x.last().unwrap()
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    fn segment(&self, rho: f64) -> Result<usize> {
        if rho > self.max_rho() {
            return Err(Error::Domain(format!(
                "density {rho} beyond the table range [0, {}]",
                self.max_rho()
            )));
        }
        let k = self.x.partition_point(|&xk| xk <= rho);
        Ok(k.saturating_sub(1).min(self.x.len() - 2))
    }

    fn segment_bounds(&self, rho: f64) -> Result<(f64, f64)> {
        let k = self.segment(rho)?;
        Ok((self.x[k], self.x[k + 1]))
    }

    /// Cubic coefficients in the local variable `s = rho - x_k`.
    fn local_coeffs(&self, k: usize) -> [f64; 4] {
        let h = self.x[k + 1] - self.x[k];
        let delta = (self.y[k + 1] - self.y[k]) / h;
        let (d0, d1) = (self.d[k], self.d[k + 1]);
        [
            self.y[k],
            d0,
            (3.0 * delta - 2.0 * d0 - d1) / h,
            (d0 + d1 - 2.0 * delta) / (h * h),
        ]
    }

    fn eval(&self, rho: f64) -> Result<f64> {
        let k = self.segment(rho)?;
        let c = self.local_coeffs(k);
        let s = rho - self.x[k];
        Ok(c[0] + s * (c[1] + s * (c[2] + s * c[3])))
    }

    fn derivative(&self, rho: f64) -> Result<f64> {
        let k = self.segment(rho)?;
        let c = self.local_coeffs(k);
        let s = rho - self.x[k];
        Ok(c[1] + s * (2.0 * c[2] + s * 3.0 * c[3]))
    }

    /// `∫_u^v p(z)/z^2 dz` inside segment `k`, `0 < u <= v`. The first
    /// segment starts at zero and is integrated in closed form; elsewhere
    /// 16-point Gauss–Legendre on the local cubic. There the integrand's only
    /// singularity, `z = 0`, sits at least three half-widths from the
    /// segment, so the rule is exact to rounding, and the local form avoids
    /// the cancellation a global monomial expansion suffers far from zero.
    fn segment_integral(&self, k: usize, u: f64, v: f64) -> f64 {
        let w = v - u;
        if k == 0 {
            // p(0) = 0, so p(z)/z^2 = a1/z + a2 + a3 z on the first segment.
            let [_, a1, a2, a3] = self.local_coeffs(0);
            return a1 * (w / u).ln_1p() + a2 * w + 0.5 * a3 * w * (u + v);
        }
        let c = self.local_coeffs(k);
        let (mid, half) = (0.5 * (u + v), 0.5 * w);
        let mut acc = 0.0;
        for &(node, weight) in gauss_legendre_16() {
            let z = mid + half * node;
            let s = z - self.x[k];
            acc += weight * (c[0] + s * (c[1] + s * (c[2] + s * c[3]))) / (z * z);
        }
        half * acc
    }

    fn knot_integrals(&self) -> Vec<f64> {
        // Integrate outward from rho = 1.
        let n = self.x.len();
        let one = self.segment(1.0).expect("table covers rho = 1");
        let mut cum = vec![f64::NAN; n];
        // knot one+1 is the first knot >= 1 unless 1 is itself a knot
        let mut acc_up = self.segment_integral(one, 1.0, self.x[one + 1]);
        cum[one + 1] = acc_up;
        for k in one + 1..n - 1 {
            acc_up += self.segment_integral(k, self.x[k], self.x[k + 1]);
            cum[k + 1] = acc_up;
        }
        if self.x[one] > 0.0 {
            let mut acc_down = -self.segment_integral(one, self.x[one], 1.0);
            cum[one] = acc_down;
            for k in (1..one).rev() {
                acc_down -= self.segment_integral(k, self.x[k], self.x[k + 1]);
                cum[k] = acc_down;
            }
        }
        cum
    }

    /// `∫_1^rho p(z)/z^2 dz` for `0 < rho <= max`.
    fn integral_from_one(&self, rho: f64) -> Result<f64> {
        let k = self.segment(rho)?;
        let one = self.segment(1.0)?;
        if k == one {
            let (u, v, sign) = if rho >= 1.0 { (1.0, rho, 1.0) } else { (rho, 1.0, -1.0) };
            return Ok(sign * self.segment_integral(k, u, v));
        }
        if k > one {
            Ok(self.cumulative[k] + self.segment_integral(k, self.x[k], rho))
        } else {
            Ok(self.cumulative[k + 1] - self.segment_integral(k, rho, self.x[k + 1]))
        }
    }
}

/// Nodes and weights of the 16-point Gauss–Legendre rule on `[-1, 1]`.
fn gauss_legendre_16() -> &'static [(f64, f64); 16] {
    static RULE: OnceLock<[(f64, f64); 16]> = OnceLock::new();
    RULE.get_or_init(|| {
        const N: usize = 16;
        let mut rule = [(0.0, 0.0); N];
        for i in 0..N {
            // Newton from the Chebyshev-like initial guess
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for n in 2..=N {
                    let nf = n as f64;
                    (p0, p1) = (p1, ((2.0 * nf - 1.0) * x * p1 - (nf - 1.0) * p0) / nf);
                }
                dp = N as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            rule[i] = (x, 2.0 / ((1.0 - x * x) * dp * dp));
        }
        rule
    })
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    d[0] = pchip_end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = pchip_end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn pchip_end(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() || del0 == 0.0 {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{Boundary, Grid};
    use approx::assert_abs_diff_eq;

    fn quadratic() -> PressureLaw {
        PressureLaw::gamma_law(1.0, 2.0).unwrap()
    }

    fn wiggly_table(n: usize, max: f64) -> Vec<(f64, f64)> {
        (0..=n)
            .map(|i| {
                let r = max * i as f64 / n as f64;
                (r, r * r - 0.1 * (5.0 * r).sin())
            })
            .collect()
    }

    #[test]
    fn gamma_law_values() {
        let law = quadratic();
        assert_eq!(pressure(0.0, &law).unwrap(), 0.0);
        assert_eq!(pressure(1.0, &law).unwrap(), 1.0);
        assert_eq!(pressure(2.0, &law).unwrap(), 4.0);
        assert!(matches!(pressure(-1.0, &law), Err(Error::Domain(_))));
    }

    #[test]
    fn potential_closed_form() {
        let law = quadratic();
        assert_eq!(pressure_potential(0.0, &law).unwrap(), 0.0);
        assert_abs_diff_eq!(pressure_potential(2.0, &law).unwrap(), 4.0, epsilon = 1e-14);
        // 3 P'(3) - P(3) - p(3) by central differences; P = rho^2 makes the
        // difference quotient exact up to rounding.
        let h = 1e-4;
        let dp = (law.potential(3.0 + h).unwrap() - law.potential(3.0 - h).unwrap()) / (2.0 * h);
        let res = 3.0 * dp - law.potential(3.0).unwrap() - law.pressure(3.0).unwrap();
        assert!(res.abs() < 1e-12 * 1e3, "residual {res}");
        assert!(PressurePotential::new(&law).identity_residual(3.0).unwrap() < 1e-12);
    }

    #[test]
    fn tabulated_gamma_law_converges_to_closed_form() {
        let exact = quadratic();
        let error = |n: usize| -> f64 {
            let pts = (0..=n).map(|i| {
                let r = 4.0 * i as f64 / n as f64;
                (r, r * r)
            });
            let tab = PressureLaw::tabulated(pts.collect(), 2.0, 2.0, 1.0, 0.0).unwrap();
            [0.3, 1.0, 1.7, 3.9]
                .iter()
                .map(|&r| (tab.potential(r).unwrap() - exact.potential(r).unwrap()).abs())
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (error(40), error(160));
        assert!(coarse < 1e-2, "{coarse}");
        assert!(fine < coarse / 4.0, "{coarse} -> {fine}");
    }

    #[test]
    fn tabulated_potential_identity() {
        let law = PressureLaw::tabulated(wiggly_table(400, 4.0), 2.0, 1.0, 2.0, 1.0).unwrap();
        let pot = PressurePotential::new(&law);
        for i in 0..50 {
            let rho = 0.031 + 3.9 * (i as f64 + 0.37) / 50.0;
            let r = pot.identity_residual(rho).unwrap();
            assert!(r < 1e-10, "rho={rho}: {r}");
        }
        assert_eq!(law.potential(0.0).unwrap(), 0.0);
        assert!(law.potential(1e-12).unwrap().abs() < 1e-9);
    }

    #[test]
    fn gauss_rule_is_exact_to_degree_31() {
        let rule = gauss_legendre_16();
        for deg in [0, 8, 30] {
            let q: f64 = rule.iter().map(|(x, w)| w * x.powi(deg)).sum();
            assert_abs_diff_eq!(q, 2.0 / (deg as f64 + 1.0), epsilon = 1e-14);
        }
    }

    #[test]
    fn table_rejects_bad_input() {
        assert!(PressureLaw::tabulated(vec![(0.0, 0.0), (2.0, 1.0), (1.0, 3.0)], 2.0, 1.0, 1.0, 0.0).is_err());
        assert!(PressureLaw::tabulated(vec![(0.1, 0.0), (1.0, 1.0), (2.0, 3.0)], 2.0, 1.0, 1.0, 0.0).is_err());
        assert!(PressureLaw::tabulated(vec![(0.0, 0.0), (0.5, 1.0), (0.7, 3.0)], 2.0, 1.0, 1.0, 0.0).is_err());
        let law = PressureLaw::tabulated(wiggly_table(10, 2.0), 2.0, 1.0, 2.0, 1.0).unwrap();
        assert!(law.pressure(2.5).is_err());
    }

    #[test]
    fn csv_reader_skips_header() {
        let text = "rho,p\n0,0\n0.5,0.25\n1,1\n2,4\n";
        let law = PressureLaw::from_csv_reader(text.as_bytes(), 2.0, 1.0, 2.0, 0.0).unwrap();
        assert_abs_diff_eq!(law.pressure(1.0).unwrap(), 1.0, epsilon = 1e-14);
        let bad = "0,0\n1,x\n";
        assert!(PressureLaw::from_csv_reader(bad.as_bytes(), 2.0, 1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn bounds_report() {
        let law = quadratic().with_bounds(2.0, 1.0, 0.0);
        assert!(check_pressure_bounds(&law, &[0.5, 1.0, 2.0]).is_conforming());

        let law = PressureLaw::tabulated(wiggly_table(400, 4.0), 2.0, 1.0, 2.0, 1.0).unwrap();
        let grid: Vec<f64> = (0..100).map(|i| 3.0 * i as f64 / 99.0).collect();
        let report = check_pressure_bounds(&law, &grid);
        assert!(report.is_conforming(), "{report:?}");

        let neg = PressureLaw::tabulated(vec![(0.0, 0.0), (1.0, -1.0), (2.0, -2.0)], 2.0, 1.0, 1.0, 0.0).unwrap();
        let report = check_pressure_bounds(&neg, &[1.0]);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(report.violations[0], BoundViolation::Derivative { .. }));
    }

    #[test]
    fn validate_exponent() {
        assert!(quadratic().validate(2).is_ok());
        let soft = PressureLaw::gamma_law(1.0, 1.0).unwrap();
        assert!(soft.validate(1).is_ok());
        assert!(soft.validate(2).is_err());
    }

    #[test]
    fn stress_examples() {
        let v = ViscosityPair::new(1.0, 1.0).unwrap();
        let zero = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(stress(&zero, v, 2).unwrap(), zero);
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(stress(&id, v, 2).unwrap(), &id * 2.0);
        let shear = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let v0 = ViscosityPair::new(1.0, 0.0).unwrap();
        let s = stress(&shear, v0, 2).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert!(stress(&DMatrix::zeros(2, 3), v, 2).is_err());
        assert!(stress(&id, v, 3).is_err());
    }

    #[test]
    fn stress_fixed_agrees_with_matrix_form() {
        let v = ViscosityPair::new(0.7, 0.3).unwrap();
        let g = [[0.3, -1.2], [2.0, 0.5]];
        let a = stress_fixed(&g, v);
        let b = stress(&DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 2.0, 0.5]), v, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(a[i][j], b[(i, j)], epsilon = 1e-15);
            }
        }
        // In one dimension only the bulk part survives.
        assert_abs_diff_eq!(stress_fixed(&[[2.0]], v)[0][0], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn kinetic_density_cases() {
        assert_eq!(kinetic_density(0.0, &[0.0, 0.0]), 0.0);
        assert_eq!(kinetic_density(1.0, &[2.0, 0.0]), 4.0);
        assert_eq!(kinetic_density(0.0, &[1.0, 0.0]), f64::INFINITY);
    }

    #[test]
    fn total_energy_examples() {
        let grid = Grid::new_1d(1.0, 8, Boundary::DirichletNoslip).unwrap();
        let law = quadratic();
        let rho = ScalarField::constant(grid, 1.0);
        let zero = VectorField::zeros(grid);
        assert_abs_diff_eq!(total_energy(&rho, &zero, &law).unwrap(), 1.0, epsilon = 1e-14);
        let m = VectorField::constant(grid, &[1.0]);
        assert_abs_diff_eq!(total_energy(&rho, &m, &law).unwrap(), 1.5, epsilon = 1e-14);
        let vac = ScalarField::constant(grid, 0.0);
        assert_eq!(total_energy(&vac, &zero, &law).unwrap(), 0.0);
        assert_eq!(total_energy(&vac, &m, &law).unwrap(), f64::INFINITY);
        let other = Grid::new_1d(1.0, 16, Boundary::DirichletNoslip).unwrap();
        assert!(matches!(
            total_energy(&rho, &VectorField::zeros(other), &law),
            Err(Error::Shape(_))
        ));
    }
}
