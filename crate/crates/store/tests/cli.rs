use planit_core::costmap::CostMap;
use planit_core::io::{parse_model, parse_trajectory};
use planit_store::cli::{main_with, EXIT_OK, EXIT_VALIDATION};
use std::path::Path;
use std::process::Command;

fn planit(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["planit"];
    argv.extend_from_slice(args);
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_on_empty_data_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let (code, _, err) = planit(&["train", "--data", p(dir.path()), "--out", p(&model)]);
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("empty training set"), "{err}");
    assert!(!model.exists());
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test, model, csv) =
        (dir.path().join("train"), dir.path().join("test"), dir.path().join("model.json"), dir.path().join("eval.csv"));
    assert_eq!(planit(&["synth", "--envs", "12", "--seed", "3", "--out", p(&train)]).0, EXIT_OK);
    assert_eq!(planit(&["synth", "--envs", "6", "--seed", "4", "--prefix", "test-", "--out", p(&test)]).0, EXIT_OK);
    assert_eq!(planit(&["ingest", p(&train)]).0, EXIT_OK);
    assert!(train.join("index.json").exists());
    let (code, _, err) = planit(&["train", "--data", p(&train), "--out", p(&model), "--restarts", "2", "--seed", "1"]);
    assert_eq!(code, EXIT_OK, "{err}");
    parse_model(&std::fs::read_to_string(&model).unwrap()).unwrap();
    let (code, _, err) = planit(&["eval", "--data", p(&test), "--model", p(&model), "--baselines", "all", "--out", p(&csv)]);
    assert_eq!(code, EXIT_OK, "{err}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("algorithm,misclassification,stderr,ndcg@1,ndcg@3,ndcg@5,ndcg@10"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let algos: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(algos, ["learned", "chance", "mcp", "mcc", "hic", "hicmcc"]);
    let mis = |name: &str| -> f64 { rows.iter().find(|r| r[0] == name).unwrap()[1].parse().unwrap() };
    assert!(mis("learned") < mis("chance"), "{text}");
}

#[test]
fn heatmap_and_plan() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.json");
    assert_eq!(planit(&["synth", "--envs", "3", "--seed", "9", "--out", p(&data)]).0, EXIT_OK);
    assert_eq!(planit(&["train", "--data", p(&data), "--out", p(&model), "--restarts", "1"]).0, EXIT_OK);

    let (a, b) = (dir.path().join("a.grid"), dir.path().join("b.grid"));
    for out in [&a, &b] {
        let (code, _, err) =
            planit(&["heatmap", "--data", p(&data), "--env", "env-001", "--model", p(&model), "--res", "0.1", "--out", p(out)]);
        assert_eq!(code, EXIT_OK, "{err}");
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let map = CostMap::decode(&bytes).unwrap();
    assert!(map.values.iter().all(|v| v.is_finite() && *v > 0.0));

    let (code, out, err) = planit(&[
        "plan", "--data", p(&data), "--env", "env-001", "--model", p(&model), "--start", "0.5,0.5", "--goal", "4,3", "--seed", "2",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let t = parse_trajectory(&out).unwrap();
    assert_eq!(t.environment_id, "env-001");

    let (code, _, _) = planit(&["heatmap", "--data", p(&data), "--env", "nope", "--model", p(&model), "--out", p(&a)]);
    assert_eq!(code, EXIT_VALIDATION);
    let (code, _, _) = planit(&["plan", "--data", p(&data), "--env", "env-001", "--model", p(&model), "--start", "x", "--goal", "1,1"]);
    assert_eq!(code, EXIT_VALIDATION);
}

#[test]
fn ingest_reports_schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(planit(&["synth", "--envs", "1", "--seed", "1", "--out", p(dir.path())]).0, EXIT_OK);
    let env = dir.path().join("environments").join("env-000.json");
    let text = std::fs::read_to_string(&env).unwrap().replacen("\"bounds\"", "\"boundz\"", 1);
    std::fs::write(&env, text).unwrap();
    let (code, _, err) = planit(&["ingest", p(dir.path())]);
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("env-000.json") && err.contains("line"), "{err}");
}

#[test]
fn binary_reads_data_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let exe = env!("CARGO_BIN_EXE_planit");
    let status = Command::new(exe).args(["synth", "--envs", "1", "--seed", "5", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    let out = dir.path().join("m.json");
    let run = Command::new(exe)
        .env("PLANIT_DATA_DIR", dir.path())
        .args(["train", "--restarts", "1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.exists());
    let empty = tempfile::tempdir().unwrap();
    let run = Command::new(exe).env("PLANIT_DATA_DIR", empty.path()).args(["train", "--out"]).arg(&out).output().unwrap();
    assert_eq!(run.status.code(), Some(1));
    let run = Command::new(exe).args(["frobnicate"]).output().unwrap();
    assert_eq!(run.status.code(), Some(1));
}
