use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sescc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sescc"))
        .args(args)
        .current_dir(dir)
        .env_remove("SESCC_MAX_DETERMINANTS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn result(dir: &Path, out: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(out).join("result.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

const DIMER: &str = r#"
task = "fci"
[hamiltonian.model]
kind = "hubbard_chain"
sites = 2
onsite = 4.0
electrons = 2
"#;

const HUBBARD4: &str = r#"
task = "cc"
[hamiltonian.model]
kind = "hubbard_chain"
sites = 4
onsite = 2.0
electrons = 6
[cc]
residual_tolerance = 1e-12
[flow]
occupied_tuples = 2
"#;

#[test]
fn fci_on_the_dimer() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "job.toml", DIMER);
    let out = sescc(&["run", "job.toml", "-o", "dimer"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = result(tmp.path(), "dimer");
    let e = r["results"]["energy"].as_f64().unwrap();
    assert!((e - (2.0 - 8f64.sqrt())).abs() < 1e-11, "{e}");
    assert_eq!(r["status"], "converged");
    assert_eq!(r["config"]["task"], "fci");
    assert_eq!(r["results"]["dimension"], 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains("-8.28427124746e-1"));
}

#[test]
fn results_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "job.toml", HUBBARD4);
    for dir in ["a", "b"] {
        let out = sescc(&["run", "job.toml", "--set", "task=flow", "-o", dir], tmp.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["result.json", "history.csv", "blocks.csv", "summary.txt"] {
        let a = std::fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(file)).unwrap();
        if file == "result.json" {
            let strip = |bytes: Vec<u8>| {
                let mut v: Value = serde_json::from_slice(&bytes).unwrap();
                v["config"]["output"] = Value::Null;
                v
            };
            assert_eq!(strip(a), strip(b));
        } else {
            assert_eq!(a, b, "{file}");
        }
    }
}

#[test]
fn flow_and_cc_on_the_union_compare_equal() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "job.toml", HUBBARD4);
    // on L=4 N=6 the pair-block union is the whole singles-and-doubles manifold
    let cc = sescc(&["run", "job.toml", "-o", "cc"], tmp.path());
    assert_eq!(cc.status.code(), Some(0), "{}", String::from_utf8_lossy(&cc.stderr));
    for mode in ["serial", "parallel"] {
        let set = format!("flow.mode={mode}");
        let flow = sescc(&["run", "job.toml", "--set", "task=flow", "--set", &set, "-o", mode], tmp.path());
        assert_eq!(flow.status.code(), Some(0), "{}", String::from_utf8_lossy(&flow.stderr));
    }
    let cmp = sescc(&["compare", "cc/result.json", "serial/result.json", "parallel/result.json"], tmp.path());
    let table = String::from_utf8_lossy(&cmp.stdout);
    assert_eq!(cmp.status.code(), Some(0), "{table}");
    assert_eq!(table.matches("PASS").count(), 3, "{table}");

    let same = sescc(&["compare", "cc/result.json", "cc/result.json", "--tolerance", "0"], tmp.path());
    assert_eq!(same.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&same.stdout).contains("0.000e0"));
}

#[test]
fn compare_refuses_different_hamiltonians() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "job.toml", DIMER);
    sescc(&["run", "job.toml", "-o", "u4"], tmp.path());
    sescc(&["run", "job.toml", "--set", "hamiltonian.model.onsite=3.0", "-o", "u3"], tmp.path());
    let out = sescc(&["compare", "u4/result.json", "u3/result.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different Hamiltonians"));

    sescc(&["run", "job.toml", "--set", "task=estimate", "--set", "estimate.y=4", "-o", "est"], tmp.path());
    let out = sescc(&["compare", "u4/result.json", "est/result.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn estimate_reports_the_cost_bound() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "est.toml",
        "task = \"estimate\"\n[estimate]\nblocks = 10\ny = 4\nn_v = 20\nsolver = \"ccsdt\"\n",
    );
    let out = sescc(&["run", "est.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("cost estimate: 16000"));
    let r = result(tmp.path(), "sescc-out");
    assert_eq!(r["results"]["cost"].as_f64(), Some(16000.0));
    assert!(r["hamiltonian"].is_null());
}

#[test]
fn malformed_fcidump_exits_one_with_the_line() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad.fcidump", "&FCI NORB=2,NELEC=2,MS2=0\n&END\n4.0 1 1 1 1\n-1.0 1 x 0 0\n");
    write(tmp.path(), "job.toml", "task = \"fci\"\n[hamiltonian]\nfcidump = \"bad.fcidump\"\n");
    let out = sescc(&["run", "job.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn fcidump_input_matches_the_model() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "dimer.fcidump", "&FCI NORB=2,NELEC=2,MS2=0,\n ORBSYM=1,1,\n ISYM=1,\n&END\n4.0 1 1 1 1\n4.0 2 2 2 2\n-1.0 2 1 0 0\n0.0 0 0 0 0\n");
    write(tmp.path(), "job.toml", "task = \"fci\"\n[hamiltonian]\nfcidump = \"dimer.fcidump\"\ncanonicalize = false\n");
    let out = sescc(&["run", "job.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let e = result(tmp.path(), "sescc-out")["results"]["energy"].as_f64().unwrap();
    assert!((e - (2.0 - 8f64.sqrt())).abs() < 1e-11);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "job.toml", DIMER);
    assert_eq!(sescc(&["run", "missing.toml"], tmp.path()).status.code(), Some(1));
    assert_eq!(sescc(&["run", "job.toml", "--set", "fci.bogus=1"], tmp.path()).status.code(), Some(1));
    assert_eq!(sescc(&["run", "job.toml", "--set", "task=flow"], tmp.path()).status.code(), Some(1));
    assert_eq!(sescc(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(sescc(&["compare", "only-one.json"], tmp.path()).status.code(), Some(1));
}

#[test]
fn determinant_cap_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "job.toml", HUBBARD4);
    let out = Command::new(env!("CARGO_BIN_EXE_sescc"))
        .args(["run", "job.toml"])
        .current_dir(tmp.path())
        .env("SESCC_MAX_DETERMINANTS", "10")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds determinant cap 10"));
}

#[test]
fn non_convergence_exits_two() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "job.toml", HUBBARD4);
    let out = sescc(&["run", "job.toml", "--set", "cc.max_iterations=2"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let r = result(tmp.path(), "sescc-out");
    assert_eq!(r["status"], "not_converged");
    let history = std::fs::read_to_string(tmp.path().join("sescc-out/history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("iteration,energy,residual_norm"));
}

#[test]
fn ducc_exports_downfolded_blocks() {
    let tmp = TempDir::new().unwrap();
    let job = r#"
task = "ducc"
[hamiltonian.model]
kind = "hubbard_chain"
sites = 3
onsite = 2.0
electrons = 4
[ducc]
occupied_tuples = 1
"#;
    write(tmp.path(), "job.toml", job);
    let out = sescc(&["run", "job.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = result(tmp.path(), "sescc-out");
    let exports = r["results"]["exports"].as_array().unwrap();
    assert_eq!(exports.len(), 2);
    assert_eq!(r["results"]["qubits"]["full"], 6);
    for (k, e) in exports.iter().enumerate() {
        assert!(e["symmetry_defect"].as_f64().unwrap() <= 1e-10);
        let dim = e["dimension"].as_u64().unwrap() as usize;
        let matrix = std::fs::read_to_string(tmp.path().join(format!("sescc-out/downfold_{k}_matrix.csv"))).unwrap();
        assert_eq!(matrix.lines().count(), dim + 1);
        let dets =
            std::fs::read_to_string(tmp.path().join(format!("sescc-out/downfold_{k}_determinants.csv"))).unwrap();
        assert_eq!(dets.lines().nth(1).unwrap(), "0,111100,");
        let op = std::fs::read_to_string(tmp.path().join(format!("sescc-out/downfold_{k}_operator.csv"))).unwrap();
        assert!(op.starts_with("term,p,q,r,s,value\ncore,0,0,0,0,"), "{op}");
        assert!(e["operator_residual"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn bare_downfold_exports_a_readable_fcidump() {
    let tmp = TempDir::new().unwrap();
    let job = r#"
task = "ducc"
[hamiltonian.model]
kind = "hubbard_chain"
sites = 3
onsite = 2.0
electrons = 2
[ducc]
subalgebras = ["R=[1];S=[2]"]
"#;
    write(tmp.path(), "job.toml", job);
    let out = sescc(&["run", "job.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = result(tmp.path(), "sescc-out");
    let files: Vec<&str> = r["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    // the bare block fit keeps real-orbital symmetry, so a plain FCIDUMP is written
    assert!(files.contains(&"downfold_0.fcidump"), "{files:?}");
    let small = "task = \"fci\"\n[hamiltonian]\nfcidump = \"sescc-out/downfold_0.fcidump\"\ncanonicalize = false\n";
    write(tmp.path(), "small.toml", small);
    let out = sescc(&["run", "small.toml", "-o", "small"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let e = result(tmp.path(), "small")["results"]["energy"].as_f64().unwrap();
    let lowest = r["results"]["exports"][0]["lowest_eigenvalue"].as_f64().unwrap();
    assert!((e - lowest).abs() < 1e-9, "{e} vs {lowest}");
}

#[test]
fn td_trajectory_with_oracle() {
    let tmp = TempDir::new().unwrap();
    let job = r#"
task = "td"
[hamiltonian.model]
kind = "hubbard_chain"
sites = 3
onsite = 2.0
electrons = 4
[cc]
max_rank = 0
[td]
mode = "global"
dt = 0.01
t_final = 0.5
oracle = true
trace = ["2>4"]
"#;
    write(tmp.path(), "job.toml", job);
    let out = sescc(&["run", "job.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = result(tmp.path(), "sescc-out");
    assert_eq!(r["results"]["states"], 51);
    // the full manifold is exact, so the overlap stays at one
    assert!(r["results"]["max_overlap_defect"].as_f64().unwrap() < 1e-9);
    let traj = std::fs::read_to_string(tmp.path().join("sescc-out/trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("t,energy_re,energy_im,re[2>4],im[2>4],overlap"));
    assert_eq!(traj.lines().count(), 52);

    let flow = sescc(
        &[
            "run",
            "job.toml",
            "--set",
            "td.mode=flow",
            "--set",
            "td.occupied_tuples=1",
            "--set",
            "td.trace=[]",
            "-o",
            "flow",
        ],
        tmp.path(),
    );
    assert_eq!(flow.status.code(), Some(0), "{}", String::from_utf8_lossy(&flow.stderr));

    let blow = sescc(
        &["run", "job.toml", "--set", "td.amplitude_bound=1e-6", "--set", "td.initial='cc'", "-o", "blow"],
        tmp.path(),
    );
    assert_eq!(blow.status.code(), Some(2));
    assert_eq!(result(tmp.path(), "blow")["status"], "unstable");
}
