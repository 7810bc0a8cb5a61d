//! The experiment file: one TOML document, unknown keys rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use semiflow::physics::{PressureLaw, ViscosityPair};
use semiflow::selection::SelectionSchedule;
use semiflow::state::{Boundary, Grid, InitialData, ScalarField, VectorField};
use semiflow::systems::{FamilyConfig, FamilyParams, FunnelConfig, FunnelSystem, NsSystem, Scheme, SolverConfig};
use semiflow::weakform::Thresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    #[serde(rename = "ns_1d")]
    Ns1d,
    #[serde(rename = "ns_2d")]
    Ns2d,
    Funnel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` wins. Not part of the config hash.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub grid: Option<GridBlock>,
    pub initial: Option<InitialBlock>,
    pub law: Option<LawBlock>,
    pub viscosity: Option<ViscosityBlock>,
    pub solver: Option<SolverBlock>,
    pub family: Option<FamilyBlock>,
    pub funnel: Option<FunnelBlock>,
    #[serde(default)]
    pub schedule: ScheduleBlock,
    #[serde(default)]
    pub thresholds: ThresholdBlock,
    #[serde(default)]
    pub verify: SourceBlock,
    #[serde(default)]
    pub select: SourceBlock,
    #[serde(default)]
    pub semigroup: SemigroupBlock,
    pub convergence: Option<ConvergenceBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub cells: Vec<usize>,
    #[serde(default = "unit_extent")]
    pub extent: Vec<f64>,
    #[serde(default = "walls")]
    pub boundary: Boundary,
}

fn unit_extent() -> Vec<f64> {
    vec![1.0, 1.0]
}

fn walls() -> Boundary {
    Boundary::DirichletNoslip
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialBlock {
    /// `rho = 1`, `m = 0`.
    Equilibrium,
    /// Gaussian density bump at rest centred in the box.
    Bump { amplitude: f64, width: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawBlock {
    Gamma {
        a: f64,
        gamma: f64,
    },
    /// CSV of `rho,p` rows; relative paths resolve against the config file.
    Tabulated {
        csv: PathBuf,
        gamma: f64,
        a1: f64,
        a2: f64,
        b: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViscosityBlock {
    pub mu: f64,
    pub bulk: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub eps_art: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "one")]
    pub save_every: usize,
    /// Lift the 64x64 / t_end <= 2 cap on 2D runs.
    #[serde(default)]
    pub large: bool,
}

fn default_scheme() -> Scheme {
    Scheme::MacCormackViscous
}

fn default_cfl() -> f64 {
    0.9
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyBlock {
    /// One member per artificial viscosity.
    Eps {
        values: Vec<f64>,
        #[serde(default = "default_dup")]
        delta_dup: f64,
        #[serde(default)]
        restart_times: Vec<f64>,
    },
    /// `count` members seeded `seed, seed + 1, ...`.
    Seed {
        count: u64,
        #[serde(default = "default_dup")]
        delta_dup: f64,
        #[serde(default)]
        restart_times: Vec<f64>,
    },
}

fn default_dup() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelBlock {
    pub branch_times: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub inject_jump: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub rates: usize,
    pub basis_size: usize,
    pub eps_tie: f64,
    pub delta_dup: f64,
}

impl Default for ScheduleBlock {
    fn default() -> Self {
        Self {
            rates: 8,
            basis_size: 16,
            eps_tie: 1e-9,
            delta_dup: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdBlock {
    pub continuity: f64,
    pub momentum: f64,
    pub energy: f64,
    pub semigroup: f64,
    /// Energy gap defining the full-measure set of times.
    pub eta: f64,
}

impl Default for ThresholdBlock {
    fn default() -> Self {
        let t = Thresholds::default();
        Self {
            continuity: t.continuity,
            momentum: t.momentum,
            energy: t.energy,
            semigroup: 1e-8,
            eta: 1e-10,
        }
    }
}

/// Optional on-disk input in place of generated trajectories.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceBlock {
    pub bundle: Option<PathBuf>,
    pub set: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemigroupBlock {
    #[serde(default)]
    pub t1: Vec<f64>,
    #[serde(default)]
    pub t2: Vec<f64>,
    #[serde(default)]
    pub restricted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Manufactured,
    Equilibrium,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceBlock {
    pub problem: Problem,
    pub cells: Vec<usize>,
    pub t_end: f64,
    #[serde(default = "default_courant")]
    pub courant: f64,
    /// Keep samples only this far apart, whatever the mesh (negative control).
    #[serde(default)]
    pub sample_dt: Option<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_order")]
    pub min_order: f64,
}

fn default_courant() -> f64 {
    0.15
}

fn default_amplitude() -> f64 {
    0.05
}

fn default_order() -> f64 {
    1.8
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let de = toml::Deserializer::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| anyhow::anyhow!("{}: field `{}`: {}", path.display(), e.path(), e.inner()))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(LawBlock::Tabulated { csv, .. }) = &mut self.law {
            fix(csv);
        }
        for src in [&mut self.verify, &mut self.select] {
            src.bundle.iter_mut().chain(src.set.iter_mut()).for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        for (name, v) in [
            ("thresholds.continuity", t.continuity),
            ("thresholds.momentum", t.momentum),
            ("thresholds.energy", t.energy),
            ("thresholds.semigroup", t.semigroup),
            ("thresholds.eta", t.eta),
        ] {
            ensure!(v > 0.0 && v.is_finite(), "{name} must be positive, got {v}");
        }
        let s = &self.schedule;
        ensure!(s.rates > 0, "schedule.rates must be positive");
        ensure!(s.eps_tie >= 0.0, "schedule.eps_tie must be nonnegative");
        ensure!(s.delta_dup >= 0.0, "schedule.delta_dup must be nonnegative");
        for src in [("verify", &self.verify), ("select", &self.select)] {
            ensure!(
                src.1.bundle.is_none() || src.1.set.is_none(),
                "{}: give either bundle or set, not both",
                src.0
            );
        }
        if let Some(g) = &self.grid {
            let dim = match self.system {
                SystemKind::Ns2d => 2,
                _ => 1,
            };
            ensure!(
                g.cells.len() == dim,
                "grid.cells needs {dim} entries for {:?}",
                self.system
            );
            ensure!(g.extent.len() >= dim, "grid.extent needs {dim} entries");
        }
        if let Some(c) = &self.convergence {
            ensure!(
                c.cells.len() >= 3,
                "convergence.cells needs at least 3 resolutions, got {}",
                c.cells.len()
            );
            ensure!(c.t_end > 0.0, "convergence.t_end must be positive");
            ensure!(c.courant > 0.0, "convergence.courant must be positive");
        }
        Ok(())
    }

    /// `sha256` of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out = None;
        let json = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            continuity: self.thresholds.continuity,
            momentum: self.thresholds.momentum,
            energy: self.thresholds.energy,
        }
    }

    pub fn schedule(&self) -> Result<SelectionSchedule> {
        let s = &self.schedule;
        SelectionSchedule::new(s.rates, s.basis_size, s.eps_tie, s.delta_dup).context("schedule")
    }

    pub fn law(&self) -> Result<PressureLaw> {
        match self.law.as_ref().context("missing [law] block")? {
            LawBlock::Gamma { a, gamma } => PressureLaw::gamma_law(*a, *gamma).context("law"),
            LawBlock::Tabulated { csv, gamma, a1, a2, b } => PressureLaw::from_csv_path(csv, *gamma, *a1, *a2, *b)
                .with_context(|| format!("law.csv {}", csv.display())),
        }
    }

    pub fn viscosity(&self) -> Result<ViscosityPair> {
        let v = self.viscosity.as_ref().context("missing [viscosity] block")?;
        ViscosityPair::new(v.mu, v.bulk).context("viscosity")
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = self.grid.as_ref().context("missing [grid] block")?;
        let grid = match self.system {
            SystemKind::Ns2d => Grid::new_2d(g.extent[0], g.extent[1], g.cells[0], g.cells[1], g.boundary),
            _ => Grid::new_1d(g.extent[0], g.cells[0], g.boundary),
        };
        grid.context("grid")
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        let s = self.solver.as_ref().context("missing [solver] block")?;
        let mut cfg = SolverConfig::new(self.grid()?, s.dt, s.t_end, self.law()?, self.viscosity()?);
        cfg.scheme = s.scheme;
        cfg.eps_art = s.eps_art;
        cfg.cfl = s.cfl;
        cfg.save_every = s.save_every;
        cfg.large = s.large;
        cfg.validate().context("solver")?;
        Ok(cfg)
    }

    /// Without a `[family]` block the family is the single solver run.
    pub fn family(&self) -> Result<FamilyConfig> {
        let fam = match &self.family {
            None => {
                let eps = self.solver.as_ref().map_or(0.0, |s| s.eps_art);
                FamilyConfig::new(FamilyParams::Eps(vec![eps]), default_dup())
            }
            Some(FamilyBlock::Eps {
                values,
                delta_dup,
                restart_times,
            }) => {
                let mut f = FamilyConfig::new(FamilyParams::Eps(values.clone()), *delta_dup);
                f.restart_times = restart_times.clone();
                f
            }
            Some(FamilyBlock::Seed {
                count,
                delta_dup,
                restart_times,
            }) => {
                let seeds = (0..*count).map(|i| self.seed.wrapping_add(i)).collect();
                let mut f = FamilyConfig::new(FamilyParams::Seed(seeds), *delta_dup);
                f.restart_times = restart_times.clone();
                f
            }
        };
        fam.validate().context("family")?;
        Ok(fam)
    }

    pub fn ns_system(&self) -> Result<NsSystem> {
        Ok(NsSystem {
            solver: self.solver()?,
            family: self.family()?,
        })
    }

    pub fn initial_data(&self) -> Result<InitialData> {
        let grid = self.grid()?;
        let law = self.law()?;
        let (rho, m) = match self.initial.as_ref().context("missing [initial] block")? {
            InitialBlock::Equilibrium => (ScalarField::constant(grid, 1.0), VectorField::zeros(grid)),
            InitialBlock::Bump { amplitude, width } => {
                ensure!(*width > 0.0, "initial.width must be positive");
                let centre: Vec<f64> = (0..grid.dim()).map(|a| 0.5 * grid.extent(a)).collect();
                let rho = ScalarField::from_fn(grid, |x| {
                    let r2: f64 = centre.iter().zip(x).map(|(c, x)| (x - c).powi(2)).sum();
                    1.0 + amplitude * (-r2 / (width * width)).exp()
                });
                (rho, VectorField::zeros(grid))
            }
        };
        let e0 = semiflow::physics::total_energy(&rho, &m, &law)?;
        Ok(InitialData::new(rho, m, e0)?)
    }

    pub fn funnel_system(&self) -> Result<FunnelSystem> {
        let f = self.funnel.as_ref().context("missing [funnel] block")?;
        let mut cfg = FunnelConfig::new(f.branch_times.clone(), f.t_end, f.dt).context("funnel")?;
        cfg.inject_jump = f.inject_jump;
        if self.law.is_some() {
            cfg.law = self.law()?;
        }
        FunnelSystem::new(cfg).context("funnel")
    }

    pub fn funnel_x0(&self) -> f64 {
        self.funnel.as_ref().map_or(0.0, |f| f.x0)
    }

    pub fn require_ns(&self, command: &str) -> Result<()> {
        if self.system == SystemKind::Funnel {
            bail!("{command} needs an ns_1d or ns_2d system");
        }
        Ok(())
    }
}
