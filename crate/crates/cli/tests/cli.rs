use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_enrich-npp"));
    c.env_remove("ENRICH_NPP_THREADS");
    c
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

const SMALL: &str = r#"
[[scenario]]
id = "small"
family = "bernoulli_logit"
beta_true = [-0.2, 0.4, 0.0, 0.0]
n_reps = 10
base_seed = 5

[scenario.sampler]
n_iter = 300
n_warmup = 200

[scenario.design]
n_max = 200
interim_ns = [120]
alpha = 0.05
clinical_threshold = 0.0
efficacy_margin = 0.0
futility_margin = 0.0
efficacy_cutoff = 0.99
futility_cutoff = 0.8
direction = "lower_better"

[[scenario.summary]]
kind = "generated"
mapping = "MAPPING"
n_t = 500
"#;

fn small(dir: &Path, mapping: &str) -> PathBuf {
    let p = dir.join(format!("{mapping}.toml"));
    std::fs::write(&p, SMALL.replace("MAPPING", mapping)).unwrap();
    p
}

#[test]
fn unknown_key_exits_with_config_code_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, SMALL.replace("MAPPING", "logit_logit").replace("n_reps = 10", "n_reps = 10\nn_repz = 3")).unwrap();
    let out = run(&["oc", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_repz"));
}

#[test]
fn missing_file_is_a_config_error() {
    let out = run(&["oc", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn smoke_oc_writes_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let p = small(dir.path(), "logit_logit");
    let csv_path = dir.path().join("oc.csv");
    let out = run(&["oc", p.to_str().unwrap(), "--reps", "6", "--seed", "11", "--out", csv_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        [
            "scenario_id",
            "n_t",
            "delta",
            "mu_x_hist",
            "method",
            "mean_a",
            "efficacy_rate",
            "gen_power",
            "futility_rate",
            "ess",
            "mc_se_efficacy",
            "n_failed",
            "base_seed"
        ]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][12], "11");
    assert!(rows[0][10].parse::<f64>().is_ok());
    assert!(rows[0][5].parse::<f64>().is_ok_and(|a| a > 0.0 && a < 1.0));
}

#[test]
fn json_output_embeds_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = small(dir.path(), "logit_logit");
    let out = run(&["oc", p.to_str().unwrap(), "--reps", "3", "--format", "json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["config"]["base_seed"], 5);
    assert_eq!(v[0]["config"]["n_reps"], 3);
    assert_eq!(v[0]["row"]["scenario_id"], "small");
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_deterministic_and_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = small(dir.path(), "logit_logit");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = run(&["simulate", p.to_str().unwrap(), "--seed", "3", "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b));
    assert_eq!(fa, fb);
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    for n in ["config.json", "draws_look0.csv", "subjects.csv", "summary.json", "trace.json"] {
        assert!(names.contains(&n), "{names:?}");
    }
    let draws = String::from_utf8(fa.iter().find(|f| f.0 == "draws_look0.csv").unwrap().1.clone()).unwrap();
    assert!(draws.starts_with("chain,iter,beta0,beta1,beta2,beta3,a_1,sigma\n"));
    let subjects = String::from_utf8(fa.iter().find(|f| f.0 == "subjects.csv").unwrap().1.clone()).unwrap();
    assert!(subjects.lines().count() > 120);
}

#[test]
fn trace_probabilities_follow_the_direction() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("MAPPING", "logit_logit")
        .replace("[-0.2, 0.4, 0.0, 0.0]", "[-0.2, 0.4, -1.2, 0.0]");
    let mut probs = Vec::new();
    for direction in ["lower_better", "higher_better"] {
        let p = dir.path().join(format!("{direction}.toml"));
        std::fs::write(&p, text.replace("\"lower_better\"", &format!("\"{direction}\""))).unwrap();
        let out_dir = dir.path().join(direction);
        let out = run(&["simulate", p.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let trace: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("trace.json")).unwrap()).unwrap();
        probs.push(trace["trace"][0]["prob_efficacy"].as_f64().unwrap());
    }
    // a large reduction is efficacious only when lower is better
    assert!(probs[0] > 0.99 && probs[1] < 0.01, "{probs:?}");
}

#[test]
fn simulate_rejects_a_multi_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        scenarios().join("table3.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

fn logc_rows(path: &Path) -> Vec<(f64, f64, f64)> {
    let out = run(&["logc", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(rdr.headers().unwrap(), vec!["a", "logC", "logC_closed_form"]);
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn logc_linear_mapping_agrees_with_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let rows = logc_rows(&small(dir.path(), "identity_identity"));
    assert_eq!(rows.len(), 101);
    assert_eq!((rows[0].1, rows[0].2), (0.0, 0.0));
    let worst = rows.iter().map(|r| (r.1 - r.2).abs()).fold(0.0, f64::max);
    assert!(worst <= 0.05, "max gap {worst}");
}

#[test]
fn logc_nonlinear_mapping_reports_the_working_model_column() {
    let dir = tempfile::tempdir().unwrap();
    let rows = logc_rows(&small(dir.path(), "logit_logit"));
    assert_eq!(rows[0].0, 0.0);
    assert_eq!((rows[0].1, rows[0].2), (0.0, 0.0));
    assert!(rows.iter().all(|r| r.1.is_finite() && r.2.is_finite() && r.1 <= 1e-12));
}

#[test]
fn logc_without_summary_is_a_config_error() {
    let out = run(&["logc", scenarios().join("table5.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn quick_validation_runs_only_analytic_suites() {
    let out = run(&["validate", "--level", "quick"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().all(|l| l.starts_with("[PASS]")));
    assert!(!text.contains("conjugate_sampler"));
}

#[test]
fn perturbed_jacobian_fails_validation() {
    let out = run(&["validate", "--level", "quick", "--perturb-jacobian", "0.001"]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[FAIL] jacobian"));
}

#[test]
fn full_validation_passes() {
    let out = run(&["validate", "--level", "full", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 8);
}

#[test]
fn bundled_scenarios_round_trip() {
    for name in ["table2", "table3", "table4", "table5", "osa_illustration"] {
        let file = enrich_npp_cli::ScenarioFile::load(&scenarios().join(format!("{name}.toml"))).unwrap();
        let again = enrich_npp_cli::ScenarioFile::parse(&file.to_toml().unwrap()).unwrap();
        assert_eq!(file, again, "{name}");
    }
}
