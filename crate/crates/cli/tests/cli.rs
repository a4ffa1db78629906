use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ckdctx_core::config::PipelineConfig;

const SUBCOMMANDS: [&str; 12] = [
    "generate-data",
    "build-cohort",
    "train",
    "evaluate",
    "explain",
    "prototypes",
    "ingest-guidelines",
    "ask",
    "context",
    "serve",
    "report",
    "",
];

fn ckdctx(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ckdctx"));
    c.args(args)
        .env_remove("CKDCTX_CONFIG")
        .env_remove("CKDCTX_DATA_DIR")
        .env_remove("CKDCTX_PORT")
        .env_remove("CKDCTX_TOKEN")
        .env("NO_COLOR", "1");
    c
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn small_config(path: &Path, data_dir: &Path) {
    let mut cfg = PipelineConfig::default();
    cfg.synth.n_patients = 1200;
    cfg.model.epochs = 10;
    cfg.model.hidden = vec![16];
    cfg.model.learning_rates = vec![1e-2];
    cfg.explain.k = 4;
    cfg.explain.n_samples = 200;
    cfg.service.data_dir = data_dir.to_path_buf();
    std::fs::write(path, cfg.to_json()).unwrap();
}

#[test]
fn help_matches_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    std::fs::create_dir_all(golden_dir()).unwrap();
    for sub in SUBCOMMANDS {
        let args: Vec<&str> = if sub.is_empty() { vec!["--help"] } else { vec![sub, "--help"] };
        let out = run(&mut ckdctx(&args));
        assert!(out.status.success(), "{sub}: {}", stderr(&out));
        let file = golden_dir().join(format!("{}.txt", if sub.is_empty() { "ckdctx" } else { sub }));
        if update {
            std::fs::write(&file, &out.stdout).unwrap();
            continue;
        }
        let expected = std::fs::read_to_string(&file)
            .unwrap_or_else(|_| panic!("{} missing; rerun with UPDATE_GOLDEN=1", file.display()));
        assert_eq!(stdout(&out), expected, "help for `{sub}` drifted from {}", file.display());
    }
}

#[test]
fn help_lists_every_flag() {
    let expect: [(&str, &[&str]); 11] = [
        ("generate-data", &["--seed", "--n-patients"]),
        ("build-cohort", &[]),
        ("train", &["--kind", "--seed", "--epochs"]),
        ("evaluate", &["--kind"]),
        ("explain", &["--kind", "--seed", "--k"]),
        ("prototypes", &["--k", "--summary"]),
        ("ingest-guidelines", &["--html", "--parse-config"]),
        ("ask", &["--k", "--format", "<QUESTION>"]),
        ("context", &["--patient", "--format", "<QUESTION>"]),
        ("serve", &["--port", "--workers", "--ui-dir", "--bearer-token"]),
        ("report", &["--sections", "--format", "--patient", "--out"]),
    ];
    for (sub, flags) in expect {
        let help = stdout(&run(&mut ckdctx(&[sub, "--help"])));
        for flag in flags.iter().chain(&["--config", "--data-dir", "--log-level"]) {
            assert!(help.contains(flag), "`{sub} --help` lacks {flag}");
        }
    }
}

#[test]
fn usage_errors_exit_two_and_name_the_flag() {
    let out = run(&mut ckdctx(&["train"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--kind"), "{}", stderr(&out));

    let out = run(&mut ckdctx(&["train", "--kind", "SVM"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("SVM"));

    let out = run(&mut ckdctx(&["generate-data", "--n-patients", "many"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--n-patients"));

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let out = run(&mut ckdctx(&["--data-dir", dir, "report", "--sections", "metrics,charts"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("charts"), "{}", stderr(&out));
}

#[test]
fn domain_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let out = run(&mut ckdctx(&["--data-dir", dir, "report", "--sections", "metrics"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("model-mlp.json"), "{}", stderr(&out));

    let out = run(&mut ckdctx(&["--data-dir", dir, "build-cohort"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("generate"), "{}", stderr(&out));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"synth": {"n_patients": 0}}"#).unwrap();
    let out = run(&mut ckdctx(&["--config", bad.to_str().unwrap(), "--data-dir", dir, "generate-data"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n_patients"), "{}", stderr(&out));
}

#[test]
fn ask_after_ingest_finds_insulin() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let out = run(&mut ckdctx(&["--data-dir", dir, "ingest-guidelines"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&mut ckdctx(&["--data-dir", dir, "ask", "What should be done if A1C levels are greater than 10?"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let first = stdout(&out).lines().take(2).collect::<Vec<_>>().join("\n");
    assert!(first.contains("introduction of insulin"), "{first}");

    let out = run(&mut ckdctx(&["--data-dir", dir, "ask", "--format", "json", "--k", "2", "treatment goals"]));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn training_twice_writes_identical_models() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    small_config(&cfg, &tmp.path().join("data"));
    let cfg = cfg.to_str().unwrap();
    for step in [&["generate-data"][..], &["build-cohort"]] {
        let mut args = vec!["--config", cfg];
        args.extend_from_slice(step);
        let out = run(&mut ckdctx(&args));
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let train = || {
        let out = run(&mut ckdctx(&["--config", cfg, "train", "--kind", "MLP", "--seed", "7"]));
        assert!(out.status.success(), "{}", stderr(&out));
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let snap = report["snapshot"].as_str().unwrap().to_string();
        let path = tmp.path().join("data/snapshots").join(&snap).join("model-mlp.json");
        (snap, std::fs::read(path).unwrap())
    };
    let (a, model_a) = train();
    let (b, model_b) = train();
    assert_eq!(a, b);
    assert_eq!(model_a, model_b);

    let out = run(&mut ckdctx(&["--config", cfg, "evaluate", "--kind", "MLP"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(m["test"]["auc_roc"].is_number());
}

#[test]
fn flag_beats_env_beats_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    small_config(&cfg, &tmp.path().join("from-config"));
    let cfg = cfg.to_str().unwrap();
    let env_dir = tmp.path().join("from-env");
    let flag_dir = tmp.path().join("from-flag");

    let out = run(&mut ckdctx(&["--config", cfg, "ingest-guidelines"]));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("from-config/CURRENT").exists());

    let out = run(ckdctx(&["--config", cfg, "ingest-guidelines"]).env("CKDCTX_DATA_DIR", &env_dir));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(env_dir.join("CURRENT").exists());

    let out = run(ckdctx(&["--config", cfg, "--data-dir", flag_dir.to_str().unwrap(), "ingest-guidelines"])
        .env("CKDCTX_DATA_DIR", &env_dir));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(flag_dir.join("CURRENT").exists());

    // The config file itself can come from the environment.
    let other = tmp.path().join("via-env-config");
    let out = run(ckdctx(&["--data-dir", other.to_str().unwrap(), "ingest-guidelines"]).env("CKDCTX_CONFIG", cfg));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(other.join("CURRENT").exists());
}

#[test]
fn full_flow_report_and_context() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    small_config(&cfg, &tmp.path().join("data"));
    let cfg = cfg.to_str().unwrap();
    for step in [
        &["generate-data"][..],
        &["build-cohort"],
        &["train", "--kind", "MLP"],
        &["explain"],
        &["ingest-guidelines"],
    ] {
        let mut args = vec!["--config", cfg];
        args.extend_from_slice(step);
        let out = run(&mut ckdctx(&args));
        assert!(out.status.success(), "{step:?}: {}", stderr(&out));
    }

    let out = run(&mut ckdctx(&["--config", cfg, "prototypes", "--summary"]));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("Count (%)"));

    let out = run(&mut ckdctx(&["--config", cfg, "prototypes", "--k", "2"]));
    let protos: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let pid = protos[0]["patient_id"].as_str().unwrap().to_string();

    let out = run(&mut ckdctx(&["--config", cfg, "context", "Q4", "--patient", &pid]));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("risk is found to be 0."), "{}", stdout(&out));

    let out = run(&mut ckdctx(&["--config", cfg, "context", "Q2"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("patient"));

    let report = tmp.path().join("report.md");
    let out = run(&mut ckdctx(&["--config", cfg, "report", "--out", report.to_str().unwrap()]));
    assert!(out.status.success(), "{}", stderr(&out));
    let md = std::fs::read_to_string(&report).unwrap();
    for heading in ["## Model performance", "## Prototype summary", "## Top", "## Question flow"] {
        assert!(md.contains(heading), "{heading} missing");
    }

    let out = run(&mut ckdctx(&["--config", cfg, "report", "--sections", "metrics", "--format", "json"]));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["metrics"].is_array() || v["metrics"].is_object(), "{v}");
    assert!(v.get("question_flow").is_none_or(|q| q.is_null()));
}
