use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use semiflow::manufactured::{fitted_order, refinement_study, Manufactured, RefinementRow, StepRule};
use semiflow::physics::{total_energy, PressureLaw};
use semiflow::selection::{
    cascade, restricted_semigroup_check, semigroup_check, CandidateGenerator, RestrictedOutcome, SemigroupOutcome,
};
use semiflow::state::{Boundary, Grid, InitialData, ScalarField, VectorField};
use semiflow::systems::{generate_candidates, ns_solve, Duplicate, ShiftCertificate, SolverConfig};
use semiflow::trajectory::{read_bundle, read_set, write_bundle, Trajectory, TrajectorySet};
use semiflow::weakform::{
    continuity_residual, momentum_residual, verify_trajectory, RenormalizationPair, TestFunctionSuite,
    VerificationReport,
};

use crate::config::{ExperimentConfig, Problem, ScheduleBlock, SystemKind, ThresholdBlock};

/// Residuals this small count as exact; no order is fitted through them.
const FLOOR: f64 = 1e-12;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    tolerances: Tolerances<'a>,
    pass: bool,
    result: T,
}

#[derive(Serialize)]
struct Tolerances<'a> {
    thresholds: &'a ThresholdBlock,
    schedule: &'a ScheduleBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_order: Option<f64>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    config_hash: String,
    version: &'a str,
    started_unix: u64,
    finished_unix: u64,
    elapsed_seconds: f64,
}

pub struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub out: &'a Path,
}

impl Run<'_> {
    fn write_report<T: Serialize>(&self, command: &str, pass: bool, result: T) -> Result<()> {
        let envelope = Envelope {
            command,
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            tolerances: Tolerances {
                thresholds: &self.cfg.thresholds,
                schedule: &self.cfg.schedule,
                min_order: self.cfg.convergence.as_ref().map(|c| c.min_order),
            },
            pass,
            result,
        };
        let path = self.out.join(format!("{command}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&envelope)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_metadata(&self, command: &str, started: std::time::SystemTime) -> Result<()> {
        let unix = |t: std::time::SystemTime| t.duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let now = std::time::SystemTime::now();
        let meta = Metadata {
            command,
            config_hash: self.cfg.hash(),
            version: env!("CARGO_PKG_VERSION"),
            started_unix: unix(started),
            finished_unix: unix(now),
            elapsed_seconds: now.duration_since(started).map_or(0.0, |d| d.as_secs_f64()),
        };
        let path = self.out.join(format!("{command}.metadata.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    fn generator(&self) -> Result<(Box<dyn CandidateGenerator>, InitialData, PressureLaw)> {
        let cfg = self.cfg;
        Ok(match cfg.system {
            SystemKind::Funnel => {
                let system = cfg.funnel_system()?;
                let data = system.config.initial_data(cfg.funnel_x0())?;
                let law = system.config.law.clone();
                (Box::new(system), data, law)
            }
            SystemKind::Ns1d | SystemKind::Ns2d => (Box::new(cfg.ns_system()?), cfg.initial_data()?, cfg.law()?),
        })
    }

    /// `verify`: every weak-form and energy check on each member.
    pub fn verify(&self) -> Result<bool> {
        #[derive(Serialize)]
        struct Out {
            members: Vec<VerificationReport>,
            dropped: Vec<Duplicate>,
            certificates: Vec<ShiftCertificate>,
        }
        let cfg = self.cfg;
        let law = cfg.law()?;
        let visc = cfg.viscosity()?;
        let (members, dropped, certificates) = if let Some(path) = &cfg.verify.bundle {
            (
                vec![read_bundle(path).with_context(|| format!("verify.bundle {}", path.display()))?],
                vec![],
                vec![],
            )
        } else if let Some(path) = &cfg.verify.set {
            let set = read_set(path).with_context(|| format!("verify.set {}", path.display()))?;
            (set.into_members(), vec![], vec![])
        } else {
            cfg.require_ns("verify")?;
            let family = generate_candidates(&cfg.initial_data()?, &cfg.family()?, &cfg.solver()?)?;
            (family.set.into_members(), family.dropped, family.certificates)
        };
        let thresholds = cfg.thresholds();
        let reports = members
            .iter()
            .map(|q| verify_trajectory(q, &law, visc, &thresholds, None))
            .collect::<semiflow::Result<Vec<_>>>()?;
        let pass = reports.iter().all(|r| r.pass) && certificates.iter().all(|c| c.passed);
        for r in &reports {
            eprintln!(
                "{}: {} (energy margin {:.3e}, momentum {:.3e})",
                r.id,
                if r.pass { "pass" } else { "FAIL" },
                r.energy_margin.value,
                r.momentum.value
            );
        }
        self.write_report(
            "verify",
            pass,
            Out {
                members: reports,
                dropped,
                certificates,
            },
        )?;
        Ok(pass)
    }

    /// `select`: the full cascade, its trace and the selected bundle.
    pub fn select(&self) -> Result<bool> {
        #[derive(Serialize)]
        struct Out {
            candidates: usize,
            selected: String,
            incomplete: bool,
            stages: usize,
            final_survivors: Vec<String>,
            nested: bool,
            admissibility_violations: Vec<String>,
        }
        let cfg = self.cfg;
        let set: TrajectorySet = if let Some(path) = &cfg.select.set {
            read_set(path).with_context(|| format!("select.set {}", path.display()))?
        } else if let Some(path) = &cfg.select.bundle {
            let q = read_bundle(path).with_context(|| format!("select.bundle {}", path.display()))?;
            let s = q.state(0);
            TrajectorySet::new(
                InitialData::new(s.rho.clone(), s.m.clone(), q.energy().initial())?,
                vec![q],
            )?
        } else {
            let (system, data, _) = self.generator()?;
            system.generate(&data).context("generating candidates")?
        };
        let sel = cascade(&set, &cfg.schedule()?)?;
        std::fs::write(self.out.join("trace.json"), sel.trace.to_json()? + "\n")?;
        write_bundle(&self.out.join("selected"), &sel.trajectory)?;
        let nested = sel.trace.is_nested();
        let pass = nested && sel.trace.admissibility_violations.is_empty();
        eprintln!("selected {} of {} candidates", sel.trace.selected, set.len());
        self.write_report(
            "select",
            pass,
            Out {
                candidates: set.len(),
                selected: sel.trace.selected.clone(),
                incomplete: sel.trace.incomplete,
                stages: sel.trace.stages.len(),
                final_survivors: sel.trace.final_survivors.clone(),
                nested,
                admissibility_violations: sel.trace.admissibility_violations.clone(),
            },
        )?;
        Ok(pass)
    }

    /// `semigroup`: restart deviation for every configured `(t1, t2)`.
    pub fn semigroup(&self) -> Result<bool> {
        #[derive(Serialize)]
        struct Out {
            restricted: bool,
            outcomes: Vec<RestrictedOutcome>,
            checked: usize,
            out_of_t: usize,
            max_deviation: f64,
            mean_deviation: f64,
        }
        let cfg = self.cfg;
        let block = &cfg.semigroup;
        anyhow::ensure!(
            !block.t1.is_empty() && !block.t2.is_empty(),
            "semigroup needs t1 and t2 (config [semigroup] or --t1/--t2)"
        );
        let schedule = cfg.schedule()?;
        let (system, data, law) = self.generator()?;
        let mut outcomes = Vec::new();
        for &t1 in &block.t1 {
            for &t2 in &block.t2 {
                let outcome = if block.restricted {
                    restricted_semigroup_check(
                        &schedule,
                        system.as_ref(),
                        &law,
                        &data.rho0,
                        &data.m0,
                        t1,
                        t2,
                        cfg.thresholds.eta,
                    )?
                } else {
                    RestrictedOutcome::Checked(semigroup_check(&schedule, system.as_ref(), &data, t1, t2)?)
                };
                outcomes.push(outcome);
            }
        }
        let checked: Vec<&SemigroupOutcome> = outcomes
            .iter()
            .filter_map(|o| match o {
                RestrictedOutcome::Checked(c) => Some(c),
                RestrictedOutcome::OutOfT { .. } => None,
            })
            .collect();
        let max_deviation = checked.iter().map(|c| c.deviation).fold(0.0, f64::max);
        let mean_deviation = if checked.is_empty() {
            0.0
        } else {
            checked.iter().map(|c| c.deviation).sum::<f64>() / checked.len() as f64
        };
        let pass = max_deviation <= cfg.thresholds.semigroup;
        eprintln!(
            "{} pairs checked, {} outside T, max deviation {max_deviation:.3e}",
            checked.len(),
            outcomes.len() - checked.len()
        );
        let out = Out {
            restricted: block.restricted,
            checked: checked.len(),
            out_of_t: outcomes.len() - checked.len(),
            max_deviation,
            mean_deviation,
            outcomes,
        };
        self.write_report("semigroup", pass, out)?;
        Ok(pass)
    }

    /// `convergence`: refinement table as CSV plus a JSON report.
    pub fn convergence(&self) -> Result<bool> {
        #[derive(Serialize)]
        struct Out {
            rows: Vec<RefinementRow>,
            orders: Orders,
        }
        let cfg = self.cfg;
        let conv = cfg.convergence.as_ref().context("missing [convergence] block")?;
        anyhow::ensure!(cfg.system == SystemKind::Ns1d, "convergence runs on the ns_1d system");
        let rule = match conv.sample_dt {
            Some(sample_dt) => StepRule::Frozen {
                courant: conv.courant,
                sample_dt,
            },
            None => StepRule::Proportional { courant: conv.courant },
        };
        let law = cfg.law()?;
        let visc = cfg.viscosity()?;
        let rows = match conv.problem {
            Problem::Manufactured => {
                let problem = Manufactured::new(conv.amplitude, law, visc)?;
                refinement_study(&problem, &conv.cells, conv.t_end, rule, conv.scheme)?
            }
            Problem::Equilibrium => conv
                .cells
                .iter()
                .map(|&n| equilibrium_row(n, conv.t_end, rule, &law, visc, conv.scheme))
                .collect::<Result<_>>()?,
        };
        let orders = Orders::fit(&rows);
        let pass = match orders.res_continuity {
            Some(p) => p >= conv.min_order,
            None => rows.iter().all(|r| r.res_continuity <= FLOOR),
        };
        std::fs::write(self.out.join("convergence.csv"), table(&rows, &orders))?;
        eprint!("{}", table(&rows, &orders));
        self.write_report("convergence", pass, Out { rows, orders })?;
        Ok(pass)
    }
}

#[derive(Debug, Serialize)]
struct Orders {
    err_rho: Option<f64>,
    err_m: Option<f64>,
    res_continuity: Option<f64>,
    res_momentum: Option<f64>,
}

impl Orders {
    fn fit(rows: &[RefinementRow]) -> Self {
        let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let order = |f: fn(&RefinementRow) -> f64| {
            let v: Vec<f64> = rows.iter().map(f).collect();
            if v.iter().all(|x| *x <= FLOOR) {
                None
            } else {
                fitted_order(&hs, &v)
            }
        };
        Self {
            err_rho: order(|r| r.err_rho),
            err_m: order(|r| r.err_m),
            res_continuity: order(|r| r.res_continuity),
            res_momentum: order(|r| r.res_momentum),
        }
    }
}

fn table(rows: &[RefinementRow], orders: &Orders) -> String {
    let mut s = String::from("cells,h,dt,err_rho,err_m,res_continuity,res_momentum\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.cells, r.h, r.dt, r.err_rho, r.err_m, r.res_continuity, r.res_momentum
        );
    }
    let o = |p: Option<f64>| p.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    let _ = writeln!(
        s,
        "order,,,{},{},{},{}",
        o(orders.err_rho),
        o(orders.err_m),
        o(orders.res_continuity),
        o(orders.res_momentum)
    );
    s
}

fn equilibrium_row(
    cells: usize,
    t_end: f64,
    rule: StepRule,
    law: &PressureLaw,
    visc: semiflow::ViscosityPair,
    scheme: semiflow::systems::Scheme,
) -> Result<RefinementRow> {
    let grid = Grid::new_1d(1.0, cells, Boundary::DirichletNoslip)?;
    let h = grid.spacing(0);
    let (dt, stride) = rule.plan(h, t_end)?;
    let mut solver = SolverConfig::new(grid, dt, t_end, law.clone(), visc);
    solver.scheme = scheme;
    solver.save_every = stride;
    let rho = ScalarField::constant(grid, 1.0);
    let m = VectorField::zeros(grid);
    let e0 = total_energy(&rho, &m, law)?;
    let q: Trajectory = ns_solve(&InitialData::new(rho, m, e0)?, &solver)?;
    let last = q.len() - 1;
    let l2 = |v: &[f64], c: f64| (v.iter().map(|x| (x - c).powi(2)).sum::<f64>() * grid.cell_volume()).sqrt();
    let suite = TestFunctionSuite::default_for(&grid, t_end)?;
    Ok(RefinementRow {
        cells,
        h,
        dt: q.dt(),
        err_rho: l2(q.rho()[last].values(), 1.0),
        err_m: l2(q.m()[last].component(0), 0.0),
        res_continuity: continuity_residual(&q, RenormalizationPair::Identity, &suite, q.t_end())?,
        res_momentum: momentum_residual(&q, law, visc, &suite, q.t_end(), None)?,
    })
}
