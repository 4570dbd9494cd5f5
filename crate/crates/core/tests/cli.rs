use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use act_slam::bench::CSV_HEADER;
use act_slam::io::{parse_labels, ReportFile, TruthFile};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_act-slam")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: TempDir::new().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, text: &str) -> String {
        fs::write(self.path(name), text).unwrap();
        self.arg(name)
    }
}

fn metric(csv: &Path, name: &str) -> f64 {
    fs::read_to_string(csv)
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name},")).map(|v| v.parse().unwrap()))
        .unwrap_or_else(|| panic!("metric {name} missing"))
}

#[test]
fn zero_noise_round_trip_has_zero_ate() {
    let w = Workspace::new();
    let sc = w.write(
        "sc.json",
        r#"{"odometry_sigma":[0,0,0,0,0,0],"measurement_sigma":[0,0,0,0,0,0]}"#,
    );
    ok(&["simulate", "--config", &sc, "--seed", "1", "--out", &w.arg("g.g2o"), "--gt", &w.arg("gt.tum")]);
    ok(&["optimize", "--graph", &w.arg("g.g2o"), "--method", "lm", "--out", &w.arg("est.tum")]);
    ok(&["evaluate", "--est", &w.arg("est.tum"), "--gt", &w.arg("gt.tum"), "--out", &w.arg("m.csv")]);
    assert!(metric(&w.path("m.csv"), "ate_m") < 1e-9);
}

#[test]
fn act_report_recovers_sidecar_outliers() {
    let w = Workspace::new();
    let sc = w.write(
        "sc.json",
        r#"{"outlier_rate":0.3,"outlier_translation":[0.5,1.5],"outlier_rotation":[0.5236,3.14159]}"#,
    );
    ok(&["simulate", "--config", &sc, "--seed", "4", "--out", &w.arg("g.g2o"), "--gt", &w.arg("gt.tum")]);
    ok(&[
        "optimize", "--graph", &w.arg("g.g2o"), "--method", "act", "--lambda-prime", "10", "--chi2-conf", "0.95",
        "--max-outer", "10", "--out", &w.arg("est.tum"), "--report", &w.arg("report.json"),
    ]);
    let truth: TruthFile = serde_json::from_str(&fs::read_to_string(w.path("gt.json")).unwrap()).unwrap();
    let report: ReportFile = serde_json::from_str(&fs::read_to_string(w.path("report.json")).unwrap()).unwrap();
    assert_eq!(report.method, "act");
    let (mut tp, mut outliers) = (0, 0);
    for f in &report.factors {
        if truth.outlier_flags[f.id] {
            outliers += 1;
            tp += usize::from(!f.inlier);
        }
    }
    assert!(outliers > 0);
    assert!(tp as f64 / outliers as f64 >= 0.9);
}

#[test]
fn full_pipeline_produces_consistent_labels() {
    let w = Workspace::new();
    let sc = w.write("sc.json", r#"{"outlier_rate":0.2}"#);
    let models = w.write(
        "models.json",
        r#"{"0":{"dimensions":[0.1,0.15,0.2]},"1":{"dimensions":[0.1,0.15,0.2]},"2":{"dimensions":[0.1,0.15,0.2]}}"#,
    );
    let cam = w.write("cam.json", r#"{"fx":500,"fy":500,"cx":320,"cy":240,"width":640,"height":480}"#);
    ok(&["simulate", "--config", &sc, "--seed", "2", "--out", &w.arg("g.g2o"), "--gt", &w.arg("gt.tum")]);
    ok(&["optimize", "--graph", &w.arg("g.g2o"), "--out", &w.arg("est.tum"), "--report", &w.arg("r.json")]);
    ok(&[
        "label", "--graph", &w.arg("g.g2o"), "--report", &w.arg("r.json"), "--models", &models, "--intrinsics",
        &cam, "--out", &w.arg("labels.jsonl"), "--gt", &w.arg("gt.tum"), "--truth", &w.arg("gt.json"), "--s-pgo",
        "0.9", "--s-in", "0.3",
    ]);
    let labels = parse_labels(&fs::read_to_string(w.path("labels.jsonl")).unwrap()).unwrap();
    assert!(!labels.is_empty());
    ok(&[
        "evaluate", "--est", &w.arg("est.tum"), "--gt", &w.arg("gt.tum"), "--report", &w.arg("r.json"), "--truth",
        &w.arg("gt.json"), "--labels", &w.arg("labels.jsonl"), "--models", &models, "--intrinsics", &cam, "--out",
        &w.arg("m.csv"),
    ]);
    let m = w.path("m.csv");
    assert_eq!(metric(&m, "label_count") as usize, labels.len());
    assert!(metric(&m, "label_px_median_kpmean") < 5.0);
    assert!(metric(&m, "obj_trans_m") < 0.05);
}

#[test]
fn outputs_are_byte_deterministic() {
    let w = Workspace::new();
    let sc = w.write("sc.json", r#"{"outlier_rate":0.3}"#);
    for tag in ["a", "b"] {
        ok(&["simulate", "--config", &sc, "--seed", "7", "--out", &w.arg(&format!("{tag}.g2o")), "--gt", &w.arg(&format!("{tag}.tum"))]);
        ok(&[
            "optimize", "--graph", &w.arg(&format!("{tag}.g2o")), "--method", "huber", "--out",
            &w.arg(&format!("{tag}.est")), "--report", &w.arg(&format!("{tag}.r.json")),
        ]);
    }
    for ext in ["g2o", "tum", "json", "est", "r.json"] {
        assert_eq!(
            fs::read(w.path(&format!("a.{ext}"))).unwrap(),
            fs::read(w.path(&format!("b.{ext}"))).unwrap(),
            "{ext}"
        );
    }
}

#[test]
fn bench_schema_is_fixed() {
    let w = Workspace::new();
    fs::create_dir(w.path("scen")).unwrap();
    fs::write(w.path("scen/clean.json"), "{}").unwrap();
    fs::write(w.path("scen/dirty.json"), r#"{"outlier_rate":0.3}"#).unwrap();
    let args = |out: &str| {
        vec![
            "bench".to_string(), "--scenarios".into(), w.arg("scen"), "--methods".into(), "lm,huber,act".into(),
            "--seeds".into(), "2".into(), "--out".into(), w.arg(out),
        ]
    };
    for out in ["t1.csv", "t2.csv"] {
        let a = args(out);
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let text = fs::read_to_string(w.path("t1.csv")).unwrap();
    assert_eq!(text, fs::read_to_string(w.path("t2.csv")).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    let keys: Vec<(&str, &str)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 8);
            (f[0], f[1])
        })
        .collect();
    assert_eq!(
        keys,
        [("clean", "lm"), ("clean", "huber"), ("clean", "act"), ("dirty", "lm"), ("dirty", "huber"), ("dirty", "act")]
    );
}

#[test]
fn failures_emit_json_and_nonzero_exit() {
    let w = Workspace::new();
    let bad = w.write("bad.g2o", "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nNOPE\n");
    let out = run(&["optimize", "--graph", &bad, "--out", &w.arg("x.tum")]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "parse");
    assert!(err["error"]["message"].as_str().unwrap().contains("line 2"));

    let out = run(&["optimize", "--graph", &w.arg("missing.g2o"), "--out", &w.arg("x.tum")]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");

    let out = run(&["optimize", "--graph", &bad, "--method", "ransac", "--out", &w.arg("x.tum")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(serde_json::from_slice::<serde_json::Value>(&out.stderr).is_ok());
}
