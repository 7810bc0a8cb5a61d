use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use semiflow::physics::{total_energy, PressureLaw};
use semiflow::state::{Boundary, Grid, InitialData, ScalarField, VectorField};
use semiflow::trajectory::{write_bundle, write_set, EnergySignal, Trajectory, TrajectorySet};

const NS_SMALL: &str = r#"
system = "ns_1d"

[grid]
cells = [32]

[initial]
kind = "equilibrium"

[law]
kind = "gamma"
a = 1.0
gamma = 2.0

[viscosity]
mu = 0.1
bulk = 0.01

[solver]
dt = 2e-3
t_end = 0.1
"#;

const FUNNEL: &str = r#"
system = "funnel"

[funnel]
branch_times = [0.0, 0.25, 0.5, 0.75, 1.0]
t_end = 2.0
dt = 0.015625
"#;

const CONVERGENCE: &str = r#"
system = "ns_1d"

[law]
kind = "gamma"
a = 1.0
gamma = 2.0

[viscosity]
mu = 0.01
bulk = 0.01
"#;

struct Case {
    dir: TempDir,
}

impl Case {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("exp.toml"), config).unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_into("out", args)
    }

    fn run_into(&self, out: &str, args: &[&str]) -> Output {
        let config = self.path().join("exp.toml");
        let out = self.path().join(out);
        Command::new(env!("CARGO_BIN_EXE_semiflow"))
            .args(args)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
    }

    fn report(&self, name: &str) -> Value {
        let text = std::fs::read_to_string(self.path().join("out").join(format!("{name}.json"))).unwrap();
        serde_json::from_str(&text).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn grid() -> Grid {
    Grid::new_1d(1.0, 32, Boundary::DirichletNoslip).unwrap()
}

/// Fluid at rest carrying a prescribed energy signal; `wobble` moves density
/// around after the first sample.
fn still(id: &str, energy: Vec<f64>, wobble: f64) -> Trajectory {
    let g = grid();
    let n = energy.len();
    let rho = (0..n)
        .map(|k| {
            ScalarField::from_fn(g, |x| {
                1.0 + wobble * k as f64 * (2.0 * std::f64::consts::PI * x[0]).cos()
            })
        })
        .collect();
    Trajectory::new(
        id,
        0.1,
        rho,
        vec![VectorField::zeros(g); n],
        EnergySignal::new(0.1, energy[0], energy).unwrap(),
    )
    .unwrap()
}

#[test]
fn equilibrium_verifies() {
    let case = Case::new(NS_SMALL);
    let out = case.run(&["verify"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = case.report("verify");
    assert_eq!(report["pass"], true);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["tolerances"]["thresholds"]["continuity"], 1e-3);
    let member = &report["result"]["members"][0];
    assert!(member["momentum"]["value"].as_f64().unwrap() <= 1e-12);
    assert!(case.path().join("out/verify.metadata.json").exists());
}

#[test]
fn increasing_energy_fails_verification() {
    let case = Case::new(&format!("{NS_SMALL}\n[verify]\nbundle = \"adversarial\"\n"));
    let law = PressureLaw::gamma_law(1.0, 2.0).unwrap();
    let e = total_energy(&ScalarField::constant(grid(), 1.0), &VectorField::zeros(grid()), &law).unwrap();
    let q = still("adversarial", (0..11).map(|i| e + 0.01 * i as f64).collect(), 0.0);
    write_bundle(&case.path().join("adversarial"), &q).unwrap();
    let out = case.run(&["verify"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let member = &case.report("verify")["result"]["members"][0];
    assert_eq!(member["bv_monotone"], false);
    assert_eq!(member["energy_margin"]["pass"], false);
    assert!(member["energy_margin"]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn funnel_selects_the_earliest_branch() {
    let case = Case::new(FUNNEL);
    let out = case.run(&["select"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = case.report("select");
    assert_eq!(report["result"]["selected"], "funnel_c00.000000");
    assert_eq!(report["result"]["incomplete"], false);
    let trace: Value =
        serde_json::from_str(&std::fs::read_to_string(case.path().join("out/trace.json")).unwrap()).unwrap();
    // admissibility already leaves a single member
    assert_eq!(trace["stages"][0]["survivors"].as_array().unwrap().len(), 1);
    assert!(case.path().join("out/selected/manifest.json").exists());
}

#[test]
fn singleton_family_has_a_trivial_trace() {
    let case = Case::new(NS_SMALL);
    assert_eq!(code(&case.run(&["select"])), 0);
    let report = case.report("select");
    assert_eq!(report["result"]["candidates"], 1);
    assert_eq!(report["result"]["final_survivors"].as_array().unwrap().len(), 1);
}

#[test]
fn ties_are_flagged_incomplete() {
    let case = Case::new(&format!("{NS_SMALL}\n[select]\nset = \"tie\"\n"));
    let energy = vec![3.0, 2.5, 2.0];
    let data = InitialData::new(ScalarField::constant(grid(), 1.0), VectorField::zeros(grid()), 3.0).unwrap();
    let set = TrajectorySet::new(data, vec![still("a", energy.clone(), 0.0), still("b", energy, 0.1)]).unwrap();
    write_set(&case.path().join("tie"), &set).unwrap();
    let out = case.run(&["select"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = case.report("select");
    assert_eq!(report["result"]["incomplete"], true);
    assert_eq!(report["result"]["selected"], "a");
}

#[test]
fn funnel_semigroup_deviation() {
    let case = Case::new(FUNNEL);
    let out = case.run(&["semigroup", "--t1", "0.25", "--t2", "0.5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(case.report("semigroup")["result"]["max_deviation"].as_f64().unwrap() <= 1e-8);

    let out = case.run(&["semigroup", "--t1", "0", "--t2", "0.5"]);
    assert_eq!(code(&out), 0);
    let report = case.report("semigroup");
    assert_eq!(report["result"]["outcomes"][0]["deviation"], 0.0);
}

#[test]
fn restricted_check_skips_the_jump() {
    let case = Case::new(&FUNNEL.replace("dt = 0.015625", "dt = 0.015625\ninject_jump = 0.5"));
    let out = case.run(&["semigroup", "--restricted", "--t1", "0.5", "--t2", "0.25"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let result = &case.report("semigroup")["result"];
    assert_eq!(result["checked"], 0);
    assert_eq!(result["out_of_t"], 1);
    assert_eq!(result["outcomes"][0]["status"], "out_of_t");
}

#[test]
fn semigroup_beyond_the_horizon_is_a_usage_error() {
    let case = Case::new(FUNNEL);
    let out = case.run(&["semigroup", "--t1", "1.5", "--t2", "1.0"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("horizon"), "{}", stderr(&out));
}

#[test]
fn manufactured_convergence_is_second_order() {
    let case = Case::new(&format!(
        "{CONVERGENCE}\n[convergence]\nproblem = \"manufactured\"\ncells = [64, 128, 256]\nt_end = 0.5\n"
    ));
    let out = case.run(&["convergence"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let order = case.report("convergence")["result"]["orders"]["res_continuity"]
        .as_f64()
        .unwrap();
    assert!(order >= 1.8, "{order}");
    let csv = std::fs::read_to_string(case.path().join("out/convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn equilibrium_convergence_has_no_order() {
    let case = Case::new(&format!(
        "{CONVERGENCE}\n[convergence]\nproblem = \"equilibrium\"\ncells = [16, 32, 64]\nt_end = 0.2\n"
    ));
    let out = case.run(&["convergence"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(case.path().join("out/convergence.csv")).unwrap();
    assert_eq!(csv.lines().last().unwrap(), "order,,,n/a,n/a,n/a,n/a");
}

#[test]
fn frozen_sampling_degrades_the_order() {
    let case = Case::new(&format!(
        "{CONVERGENCE}\n[convergence]\nproblem = \"manufactured\"\ncells = [64, 128, 256]\nt_end = 0.5\nsample_dt = 0.05\n"
    ));
    let out = case.run(&["convergence"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let order = case.report("convergence")["result"]["orders"]["res_continuity"]
        .as_f64()
        .unwrap();
    assert!(order < 1.8, "{order}");
}

#[test]
fn too_few_resolutions_is_a_config_error() {
    let case = Case::new(&format!(
        "{CONVERGENCE}\n[convergence]\nproblem = \"manufactured\"\ncells = [64, 128]\nt_end = 0.5\n"
    ));
    let out = case.run(&["convergence"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("convergence.cells"), "{}", stderr(&out));
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let case = Case::new(&NS_SMALL.replace("mu = 0.1", "mu = 0.1\nshear = 2.0"));
    let out = case.run(&["verify"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("shear") && err.contains("viscosity"), "{err}");
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_semiflow"))
        .arg("verify")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_semiflow"))
        .arg("frobnicate")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let case = Case::new(&format!("{FUNNEL}\n[semigroup]\nt1 = [0.25]\nt2 = [0.25]\n"));
    for out in ["a", "b"] {
        assert_eq!(code(&case.run_into(out, &["select"])), 0);
        assert_eq!(code(&case.run_into(out, &["semigroup"])), 0);
    }
    for file in ["select.json", "trace.json", "semigroup.json", "selected/manifest.json"] {
        let read = |d: &str| std::fs::read(case.path().join(d).join(file)).unwrap();
        assert_eq!(read("a"), read("b"), "{file}");
    }
}

#[test]
fn seed_enters_the_config_hash() {
    let case = Case::new(FUNNEL);
    assert_eq!(code(&case.run_into("a", &["select", "--seed", "1"])), 0);
    assert_eq!(code(&case.run_into("b", &["select", "--seed", "2"])), 0);
    let hash = |d: &str| {
        let v: Value =
            serde_json::from_str(&std::fs::read_to_string(case.path().join(d).join("select.json")).unwrap()).unwrap();
        (v["config_hash"].clone(), v["seed"].clone())
    };
    let (a, b) = (hash("a"), hash("b"));
    assert_ne!(a.0, b.0);
    assert_eq!(a.1, 1);
    assert_eq!(b.1, 2);
}
