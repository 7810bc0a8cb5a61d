//! Grids, cell-centred fields, the negative Sobolev norm used as the weak
//! topology, and membership in the initial-data set `D`.
//!
//! Every integral in the crate uses the same cell-centred rule: the sum of
//! cell values times the cell volume. On a uniform grid with the sine or
//! Fourier eigenbasis this rule makes the sampled basis exactly orthonormal.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{total_energy, PressureLaw};

/// Boundary treatment. No-slip walls pair with the sine (Dirichlet
/// Laplacian) eigenbasis, periodic boxes with the Fourier basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    DirichletNoslip,
    Periodic,
}

/// Uniform rectangular grid in one or two dimensions. Cells are stored
/// row-major with the x index fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    extents: [f64; 2],
    cells: [usize; 2],
    boundary: Boundary,
}

pub const MIN_CELLS: usize = 4;

impl Grid {
    pub fn new_1d(length: f64, cells: usize, boundary: Boundary) -> Result<Self> {
        let g = Self {
            dim: 1,
            extents: [length, 1.0],
            cells: [cells, 1],
            boundary,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn new_2d(lx: f64, ly: f64, nx: usize, ny: usize, boundary: Boundary) -> Result<Self> {
        let g = Self {
            dim: 2,
            extents: [lx, ly],
            cells: [nx, ny],
            boundary,
        };
        g.validate()?;
        Ok(g)
    }

    /// Re-checks the invariants; used after deserialisation.
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dim) {
            return Err(Error::Config(format!(
                "grid dimension must be 1 or 2, got {}",
                self.dim
            )));
        }
        for axis in 0..self.dim {
            if self.cells[axis] < MIN_CELLS {
                return Err(Error::Config(format!(
                    "axis {axis} has {} cells, need at least {MIN_CELLS}",
                    self.cells[axis]
                )));
            }
            if !(self.extents[axis] > 0.0) || !self.extents[axis].is_finite() {
                return Err(Error::Config(format!("axis {axis} extent must be positive")));
            }
        }
        if self.dim == 1 && self.cells[1] != 1 {
            return Err(Error::Config("1D grid must have a single row".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extents[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extents[axis] / self.cells[axis] as f64
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// Volume of the domain.
    pub fn measure(&self) -> f64 {
        (0..self.dim).map(|a| self.extents[a]).product()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.cells[0] + i
    }

    pub fn center(&self, axis: usize, i: usize) -> f64 {
        (i as f64 + 0.5) * self.spacing(axis)
    }

    /// Cell-centre coordinates of a flat index.
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let i = idx % self.cells[0];
        let j = idx / self.cells[0];
        [self.center(0, i), if self.dim == 2 { self.center(1, j) } else { 0.0 }]
    }
}

/// Common view of scalar and vector fields as lists of component arrays.
pub trait Field {
    fn grid(&self) -> &Grid;
    fn components(&self) -> Vec<&[f64]>;
}

/// Cell-centred scalar samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// A density field: rejects negative or non-finite samples.
    pub fn density(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if let Some((cell, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!(
                "density {v} in cell {cell} is not a nonnegative number"
            )));
        }
        Self::new(grid, values)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f` at cell centres; `f` receives `[x]` or `[x, y]`.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|idx| f(&grid.coords(idx)[..grid.dim()])).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `a self + b other`.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.zip_with(other, |x, y| a * x + b * y)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Shape("scalar fields on different grids".into()));
        }
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

impl Field for ScalarField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn components(&self) -> Vec<&[f64]> {
        vec![&self.values]
    }
}

/// Cell-centred vector samples with one component per spatial dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: Grid, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != grid.dim() {
            return Err(Error::Shape(format!(
                "{} components for a {}-dimensional grid",
                comps.len(),
                grid.dim()
            )));
        }
        if comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::Shape("component length does not match the grid".into()));
        }
        Ok(Self { grid, comps })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            comps: vec![vec![0.0; grid.len()]; grid.dim()],
        }
    }

    pub fn constant(grid: Grid, value: &[f64]) -> Self {
        Self {
            grid,
            comps: (0..grid.dim()).map(|c| vec![value[c]; grid.len()]).collect(),
        }
    }

    /// Samples `f(x, component)` at cell centres.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64], usize) -> f64) -> Self {
        let comps = (0..grid.dim())
            .map(|c| {
                (0..grid.len())
                    .map(|idx| f(&grid.coords(idx)[..grid.dim()], c))
                    .collect()
            })
            .collect();
        Self { grid, comps }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.comps[c]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.comps[c]
    }

    pub fn comps(&self) -> &[Vec<f64>] {
        &self.comps
    }

    /// Copies the vector at cell `idx` into `out` (unused slots untouched).
    pub fn write_at(&self, idx: usize, out: &mut [f64; 2]) {
        for (c, comp) in self.comps.iter().enumerate() {
            out[c] = comp[idx];
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.lincomb(1.0, other, -1.0)
    }

    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Shape("vector fields on different grids".into()));
        }
        Ok(Self {
            grid: self.grid,
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect())
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            comps: self.comps.iter().map(|c| c.iter().map(|v| v * s).collect()).collect(),
        }
    }

    /// `∫ m · e dx` by the cell-centred rule.
    pub fn pairing(&self, e: &VectorField) -> Result<f64> {
        if self.grid != e.grid {
            return Err(Error::Shape("pairing fields on different grids".into()));
        }
        let s: f64 = self
            .comps
            .iter()
            .zip(&e.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        Ok(s * self.grid.cell_volume())
    }
}

impl Field for VectorField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn components(&self) -> Vec<&[f64]> {
        self.comps.iter().map(|c| c.as_slice()).collect()
    }
}

/// Order `ell` and per-axis mode count of the truncated `W^{-ell,2}` norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegNormConfig {
    pub ell: u32,
    pub modes: usize,
}

impl NegNormConfig {
    pub fn new(ell: u32, modes: usize) -> Self {
        Self { ell, modes }
    }

    /// Smallest integer order above `N/2 + 1` and up to 16 modes per axis.
    pub fn default_for(grid: &Grid) -> Self {
        let ell = if grid.dim() == 1 { 2 } else { 3 };
        let max_modes = (0..grid.dim()).map(|a| grid.cells(a) / 2).min().unwrap_or(1);
        Self {
            ell,
            modes: max_modes.clamp(1, 16),
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let floor = grid.dim() as f64 / 2.0 + 1.0;
        if !(self.ell as f64 > floor) {
            return Err(Error::Config(format!(
                "ell = {} must exceed N/2 + 1 = {floor}",
                self.ell
            )));
        }
        if self.modes == 0 {
            return Err(Error::Config("need at least one mode".into()));
        }
        for axis in 0..grid.dim() {
            if self.modes > grid.cells(axis) / 2 {
                return Err(Error::Config(format!(
                    "{} modes exceed half the {} cells on axis {axis}",
                    self.modes,
                    grid.cells(axis)
                )));
            }
        }
        Ok(())
    }
}

/// Sampled 1D Laplacian eigenfunctions on one axis, orthonormal under the
/// cell-centred rule.
#[derive(Debug, Clone)]
pub struct AxisBasis {
    /// `samples[mode][cell]`
    pub samples: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl AxisBasis {
    pub fn new(length: f64, cells: usize, modes: usize, boundary: Boundary) -> Self {
        let h = length / cells as f64;
        let x = |i: usize| (i as f64 + 0.5) * h;
        let norm = (2.0 / length).sqrt();
        let mut samples = Vec::with_capacity(modes);
        let mut eigenvalues = Vec::with_capacity(modes);
        for j in 0..modes {
            match boundary {
                Boundary::DirichletNoslip => {
                    let k = (j + 1) as f64 * PI / length;
                    samples.push((0..cells).map(|i| norm * (k * x(i)).sin()).collect());
                    eigenvalues.push(k * k);
                }
                Boundary::Periodic => {
                    if j == 0 {
                        samples.push(vec![1.0 / length.sqrt(); cells]);
                        eigenvalues.push(0.0);
                    } else {
                        let wav = j.div_ceil(2) as f64 * 2.0 * PI / length;
                        let s: Vec<f64> = if j % 2 == 1 {
                            (0..cells).map(|i| norm * (wav * x(i)).cos()).collect()
                        } else {
                            (0..cells).map(|i| norm * (wav * x(i)).sin()).collect()
                        };
                        samples.push(s);
                        eigenvalues.push(wav * wav);
                    }
                }
            }
        }
        Self { samples, eigenvalues }
    }

    /// Closed-form value and derivative of mode `j` at `x`.
    pub fn eval(length: f64, j: usize, boundary: Boundary, x: f64) -> (f64, f64) {
        let norm = (2.0 / length).sqrt();
        match boundary {
            Boundary::DirichletNoslip => {
                let k = (j + 1) as f64 * PI / length;
                (norm * (k * x).sin(), norm * k * (k * x).cos())
            }
            Boundary::Periodic => {
                if j == 0 {
                    (1.0 / length.sqrt(), 0.0)
                } else {
                    let w = j.div_ceil(2) as f64 * 2.0 * PI / length;
                    if j % 2 == 1 {
                        (norm * (w * x).cos(), -norm * w * (w * x).sin())
                    } else {
                        (norm * (w * x).sin(), norm * w * (w * x).cos())
                    }
                }
            }
        }
    }
}

/// Tensor-product eigenbasis for a grid, truncated to `modes` per axis.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    grid: Grid,
    modes: usize,
    axes: Vec<AxisBasis>,
}

impl SpectralBasis {
    pub fn new(grid: &Grid, modes: usize) -> Result<Self> {
        for axis in 0..grid.dim() {
            if modes == 0 || modes > grid.cells(axis) / 2 {
                return Err(Error::Config(format!(
                    "{modes} modes not admissible on an axis with {} cells",
                    grid.cells(axis)
                )));
            }
        }
        let axes = (0..grid.dim())
            .map(|a| AxisBasis::new(grid.extent(a), grid.cells(a), modes, grid.boundary()))
            .collect();
        Ok(Self {
            grid: *grid,
            modes,
            axes,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Number of tensor modes, `modes^dim`.
    pub fn len(&self) -> usize {
        self.modes.pow(self.grid.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Laplacian eigenvalue of tensor mode `(j1 + modes * j2)`.
    pub fn eigenvalue(&self, idx: usize) -> f64 {
        let j1 = idx % self.modes;
        let mut lam = self.axes[0].eigenvalues[j1];
        if self.grid.dim() == 2 {
            lam += self.axes[1].eigenvalues[idx / self.modes];
        }
        lam
    }

    /// Basis coefficients `∫ f e_j dx` of one scalar component.
    pub fn coefficients(&self, values: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let nx = g.cells(0);
        let hx = g.spacing(0);
        let bx = &self.axes[0].samples;
        if g.dim() == 1 {
            return bx
                .iter()
                .map(|e| e.iter().zip(values).map(|(a, b)| a * b).sum::<f64>() * hx)
                .collect();
        }
        let ny = g.cells(1);
        let hy = g.spacing(1);
        let by = &self.axes[1].samples;
        // partial[j1][row]
        let partial: Vec<Vec<f64>> = bx
            .iter()
            .map(|e| {
                (0..ny)
                    .map(|row| {
                        let r = &values[row * nx..(row + 1) * nx];
                        e.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() * hx
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; self.modes * self.modes];
        for (j2, ey) in by.iter().enumerate() {
            for (j1, p) in partial.iter().enumerate() {
                out[j1 + self.modes * j2] = ey.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() * hy;
            }
        }
        out
    }

    /// Samples of tensor mode `idx` on the grid.
    pub fn mode_samples(&self, idx: usize) -> Vec<f64> {
        let g = &self.grid;
        let j1 = idx % self.modes;
        if g.dim() == 1 {
            return self.axes[0].samples[j1].clone();
        }
        let j2 = idx / self.modes;
        let (nx, ny) = (g.cells(0), g.cells(1));
        let mut out = Vec::with_capacity(nx * ny);
        for row in 0..ny {
            for i in 0..nx {
                out.push(self.axes[0].samples[j1][i] * self.axes[1].samples[j2][row]);
            }
        }
        out
    }

    /// Tensor mode indices ordered by increasing eigenvalue (ties by index).
    pub fn modes_by_eigenvalue(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|a, b| self.eigenvalue(*a).total_cmp(&self.eigenvalue(*b)).then(a.cmp(b)));
        idx
    }
}

/// Evaluator for `(Σ_j (1 + Λ_j)^(-ell) |c_j|^2)^(1/2)` with a cached basis.
#[derive(Debug, Clone)]
pub struct NegSobolev {
    basis: SpectralBasis,
    weights: Vec<f64>,
}

impl NegSobolev {
    pub fn new(grid: &Grid, cfg: NegNormConfig) -> Result<Self> {
        if cfg.modes == 0 || (0..grid.dim()).any(|a| cfg.modes > grid.cells(a) / 2) {
            return Err(Error::Config(format!(
                "{} modes per axis too many for the grid (max cells/2)",
                cfg.modes
            )));
        }
        let basis = SpectralBasis::new(grid, cfg.modes)?;
        let weights = (0..basis.len())
            .map(|j| (1.0 + basis.eigenvalue(j)).powi(-(cfg.ell as i32)))
            .collect();
        Ok(Self { basis, weights })
    }

    pub fn grid(&self) -> &Grid {
        self.basis.grid()
    }

    /// Coefficients scaled by `(1 + Λ_j)^(-ell/2)`, so the norm is their
    /// Euclidean length.
    pub fn weighted_coefficients(&self, values: &[f64]) -> Vec<f64> {
        self.basis
            .coefficients(values)
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w.sqrt() * c)
            .collect()
    }

    /// Squared norm of one component.
    pub fn component_sq(&self, values: &[f64]) -> f64 {
        self.basis
            .coefficients(values)
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c * c)
            .sum()
    }

    pub fn norm<F: Field>(&self, field: &F) -> Result<f64> {
        if field.grid() != self.basis.grid() {
            return Err(Error::Shape("field grid differs from the norm's grid".into()));
        }
        Ok(field
            .components()
            .iter()
            .map(|c| self.component_sq(c))
            .sum::<f64>()
            .sqrt())
    }

    /// Norm of the difference of two component lists, without allocating the
    /// difference field.
    pub fn distance(&self, a: &[&[f64]], b: &[&[f64]]) -> f64 {
        let mut diff = Vec::new();
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            diff.clear();
            diff.extend(x.iter().zip(y.iter()).map(|(p, q)| p - q));
            acc += self.component_sq(&diff);
        }
        acc.sqrt()
    }
}

/// `‖field‖_{W^{-ell,2}}` realised spectrally on the boundary-matched basis.
pub fn neg_sobolev_norm<F: Field>(field: &F, cfg: NegNormConfig) -> Result<f64> {
    NegSobolev::new(field.grid(), cfg)?.norm(field)
}

/// Initial data `[rho0, m0, E0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub rho0: ScalarField,
    pub m0: VectorField,
    pub e0: f64,
}

impl InitialData {
    pub fn new(rho0: ScalarField, m0: VectorField, e0: f64) -> Result<Self> {
        if rho0.grid() != m0.grid() {
            return Err(Error::Shape("initial density and momentum grids differ".into()));
        }
        Ok(Self { rho0, m0, e0 })
    }

    pub fn grid(&self) -> &Grid {
        self.rho0.grid()
    }
}

/// Why a triple failed membership in `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MembershipDiagnostic {
    NegativeDensity {
        cell: usize,
        value: f64,
    },
    /// Momentum without mass: the kinetic energy is `+inf`.
    Vacuum {
        cells: usize,
    },
    EnergyDeficit {
        required: f64,
        given: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    /// `E0 - total_energy`, `-inf` for vacuum data and NaN when the energy
    /// cannot be evaluated.
    pub margin: f64,
    pub diagnostic: Option<MembershipDiagnostic>,
}

/// Membership in `D = { rho0 >= 0, total_energy(rho0, m0) <= E0 }`.
pub fn in_data_set(data: &InitialData, law: &PressureLaw) -> Result<Membership> {
    if data.rho0.grid() != data.m0.grid() {
        return Err(Error::Shape("initial density and momentum grids differ".into()));
    }
    if let Some((cell, &value)) = data.rho0.values().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Ok(Membership {
            member: false,
            margin: f64::NAN,
            diagnostic: Some(MembershipDiagnostic::NegativeDensity { cell, value }),
        });
    }
    let energy = total_energy(&data.rho0, &data.m0, law)?;
    if energy.is_infinite() {
        let mut mv = [0.0; 2];
        let cells = (0..data.grid().len())
            .filter(|&idx| {
                data.m0.write_at(idx, &mut mv);
                data.rho0.values()[idx] == 0.0 && mv.iter().any(|v| *v != 0.0)
            })
            .count();
        return Ok(Membership {
            member: false,
            margin: f64::NEG_INFINITY,
            diagnostic: Some(MembershipDiagnostic::Vacuum { cells }),
        });
    }
    let margin = data.e0 - energy;
    let member = margin >= 0.0;
    Ok(Membership {
        member,
        margin,
        diagnostic: (!member).then_some(MembershipDiagnostic::EnergyDeficit {
            required: energy,
            given: data.e0,
        }),
    })
}

// ---------------------------------------------------------------------------
// Field files: a JSON manifest next to a raw little-endian f64 array.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Scalar,
    Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldManifest {
    pub kind: FieldKind,
    pub grid: Grid,
    pub units: String,
    pub endianness: String,
    pub components: usize,
    /// Data file name, relative to the manifest.
    pub data: String,
}

fn write_raw(path: &Path, chunks: &[&[f64]]) -> Result<()> {
    let n: usize = chunks.iter().map(|c| c.len()).sum();
    let mut bytes = Vec::with_capacity(8 * n);
    for c in chunks {
        for v in c.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_raw(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != 8 * expected {
        return Err(Error::Format(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            8 * expected,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect())
}

fn manifest_paths(stem: &Path) -> (PathBuf, PathBuf, String) {
    let json = stem.with_extension("json");
    let bin = stem.with_extension("bin");
    let name = bin
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    (json, bin, name)
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn write_scalar(stem: &Path, field: &ScalarField, units: &str) -> Result<()> {
    let (json, bin, name) = manifest_paths(stem);
    let manifest = FieldManifest {
        kind: FieldKind::Scalar,
        grid: *field.grid(),
        units: units.to_string(),
        endianness: "little".into(),
        components: 1,
        data: name,
    };
    write_raw(&bin, &[field.values()])?;
    fs::write(json, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn write_vector(stem: &Path, field: &VectorField, units: &str) -> Result<()> {
    let (json, bin, name) = manifest_paths(stem);
    let manifest = FieldManifest {
        kind: FieldKind::Vector,
        grid: *field.grid(),
        units: units.to_string(),
        endianness: "little".into(),
        components: field.grid().dim(),
        data: name,
    };
    let chunks: Vec<&[f64]> = field.comps().iter().map(|c| c.as_slice()).collect();
    write_raw(&bin, &chunks)?;
    fs::write(json, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn read_manifest(json: &Path, kind: FieldKind) -> Result<(FieldManifest, Vec<f64>)> {
    let manifest: FieldManifest = serde_json::from_str(&fs::read_to_string(json)?)?;
    manifest.grid.validate()?;
    if manifest.kind != kind {
        return Err(Error::Format(format!("{}: expected a {kind:?} field", json.display())));
    }
    if manifest.endianness != "little" {
        return Err(Error::Format(format!("unsupported endianness {}", manifest.endianness)));
    }
    let dir = json.parent().unwrap_or_else(|| Path::new("."));
    let values = read_raw(&dir.join(&manifest.data), manifest.components * manifest.grid.len())?;
    Ok((manifest, values))
}

/// Reads a scalar field from its manifest path.
pub fn read_scalar(json: &Path) -> Result<ScalarField> {
    let (m, values) = read_manifest(json, FieldKind::Scalar)?;
    ScalarField::new(m.grid, values)
}

pub fn read_vector(json: &Path) -> Result<VectorField> {
    let (m, values) = read_manifest(json, FieldKind::Vector)?;
    if m.components != m.grid.dim() {
        return Err(Error::Format("component count does not match grid dimension".into()));
    }
    let n = m.grid.len();
    VectorField::new(m.grid, values.chunks(n).map(|c| c.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::PressureLaw;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_line(n: usize) -> Grid {
        Grid::new_1d(1.0, n, Boundary::DirichletNoslip).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid::new_1d(1.0, 3, Boundary::Periodic).is_err());
        assert!(Grid::new_1d(0.0, 8, Boundary::Periodic).is_err());
        let g = Grid::new_2d(2.0, 1.0, 8, 4, Boundary::DirichletNoslip).unwrap();
        assert_eq!(g.len(), 32);
        assert_abs_diff_eq!(g.cell_volume(), 0.25 * 0.25);
        assert_eq!(g.coords(g.index(1, 2)), [0.375, 0.625]);
    }

    #[test]
    fn sampled_basis_is_orthonormal() {
        for boundary in [Boundary::DirichletNoslip, Boundary::Periodic] {
            let g = Grid::new_2d(1.0, 2.0, 16, 12, boundary).unwrap();
            let b = SpectralBasis::new(&g, 5).unwrap();
            for i in 0..b.len() {
                let c = b.coefficients(&b.mode_samples(i));
                for (j, cj) in c.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(*cj, want, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn norm_examples() {
        let g = unit_line(64);
        let zero = ScalarField::constant(g, 0.0);
        assert_eq!(neg_sobolev_norm(&zero, NegNormConfig::new(2, 8)).unwrap(), 0.0);

        let f = ScalarField::from_fn(g, |x| (PI * x[0]).sin());
        let expected = (1.0 + PI * PI).powi(-1) / 2f64.sqrt();
        for modes in [1, 4, 32] {
            let n = neg_sobolev_norm(&f, NegNormConfig::new(2, modes)).unwrap();
            assert_abs_diff_eq!(n, expected, epsilon = 1e-14);
        }
        let n3 = neg_sobolev_norm(&f, NegNormConfig::new(3, 8)).unwrap();
        assert!(n3 <= expected);
        assert!(matches!(
            neg_sobolev_norm(&f, NegNormConfig::new(2, 33)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn norm_config_validation() {
        let g1 = unit_line(16);
        assert!(NegNormConfig::new(2, 4).validate(&g1).is_ok());
        assert!(NegNormConfig::new(1, 4).validate(&g1).is_err());
        let g2 = Grid::new_2d(1.0, 1.0, 16, 16, Boundary::Periodic).unwrap();
        assert!(NegNormConfig::new(2, 4).validate(&g2).is_err());
        assert_eq!(NegNormConfig::default_for(&g2), NegNormConfig::new(3, 8));
    }

    #[test]
    fn norm_monotone_in_order_and_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Grid::new_2d(1.0, 1.0, 16, 16, Boundary::Periodic).unwrap();
        let f = ScalarField::new(g, (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut prev = f64::INFINITY;
        for ell in 3..7 {
            let n = neg_sobolev_norm(&f, NegNormConfig::new(ell, 6)).unwrap();
            assert!(n <= prev);
            prev = n;
        }
        let mut prev = 0.0;
        for modes in 1..=8 {
            let n = neg_sobolev_norm(&f, NegNormConfig::new(3, modes)).unwrap();
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn data_set_membership() {
        let g = unit_line(8);
        let law = PressureLaw::gamma_law(1.0, 2.0).unwrap();
        let rho = ScalarField::constant(g, 1.0);
        let data = InitialData::new(rho.clone(), VectorField::zeros(g), 1.0).unwrap();
        let m = in_data_set(&data, &law).unwrap();
        assert!(m.member);
        assert_abs_diff_eq!(m.margin, 0.0, epsilon = 1e-14);

        let low = InitialData::new(rho.clone(), VectorField::zeros(g), 0.5).unwrap();
        assert!(!in_data_set(&low, &law).unwrap().member);

        let mut vals = vec![1.0; 8];
        vals[3] = -0.1;
        let neg = InitialData::new(ScalarField::new(g, vals).unwrap(), VectorField::zeros(g), 10.0).unwrap();
        let res = in_data_set(&neg, &law).unwrap();
        assert!(!res.member);
        assert!(matches!(
            res.diagnostic,
            Some(MembershipDiagnostic::NegativeDensity { cell: 3, .. })
        ));

        let vac = InitialData::new(ScalarField::constant(g, 0.0), VectorField::constant(g, &[1.0]), 10.0).unwrap();
        let res = in_data_set(&vac, &law).unwrap();
        assert!(!res.member);
        assert!(matches!(
            res.diagnostic,
            Some(MembershipDiagnostic::Vacuum { cells: 8 })
        ));
    }

    #[test]
    fn field_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new_2d(1.0, 2.0, 4, 6, Boundary::Periodic).unwrap();
        let rho = ScalarField::from_fn(g, |x| 1.0 + x[0] * x[1]);
        let m = VectorField::from_fn(g, |x, c| x[c] - 0.3);
        write_scalar(&dir.path().join("rho"), &rho, "kg/m^3").unwrap();
        write_vector(&dir.path().join("m"), &m, "kg/(m^2 s)").unwrap();
        assert_eq!(read_scalar(&dir.path().join("rho.json")).unwrap(), rho);
        assert_eq!(read_vector(&dir.path().join("m.json")).unwrap(), m);
        assert!(read_vector(&dir.path().join("rho.json")).is_err());
    }
}
