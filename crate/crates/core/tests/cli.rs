use std::path::Path;
use std::process::Command;

const PAIR1_A: [&str; 2] = [
    "0.2*x2 + 0.6*pi*sin(pi*x1)^2*sin(pi*x2)*cos(pi*x2)",
    "0.1*x1 - 0.6*pi*sin(pi*x1)*cos(pi*x1)*sin(pi*x2)^2",
];

fn small_config(extra: serde_json::Value) -> serde_json::Value {
    let mut cfg = serde_json::json!({
        "grid": {"nx": 17, "nt": 16},
        "fields": {
            "pair1": {"a": {"components": PAIR1_A}, "q": "1"},
            "pair2": {"a": {"components": ["0.2*x2", "0.1*x1"]}, "q": "1"},
            "probes": 3, "power_iters": 30,
            "gauge": "0.2*sin(pi*x1)^3*sin(pi*x2)^3"
        },
        "go": {"lambdas": [8, 16], "transport_nx": [17, 33], "transport_nt": 8, "min_order": 1.5, "max_slope_l2": 0.0, "max_slope_h1": 1.0},
        "carleman": {"lambdas": [4, 8, 16], "suite_size": 3},
        "reconstruction": {"kmax": 1, "lambda": 16},
        "experiment": {"scales": [0, 0.2, 0.4, 0.8], "laws": ["power"], "min_rank_correlation": 0.5}
    });
    for (section, fields) in extra.as_object().unwrap() {
        for (k, v) in fields.as_object().unwrap() {
            cfg[section][k] = v.clone();
        }
    }
    cfg
}

fn run(cmd: &str, cfg: &serde_json::Value, dir: &Path) -> (i32, std::path::PathBuf) {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join(format!("{cmd}.json"));
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = dir.join(cmd);
    let status = Command::new(env!("CARGO_BIN_EXE_cdlab"))
        .args([cmd, "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("CDLAB_THREADS", "1")
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    (status.code().unwrap(), out)
}

fn assert_files(dir: &Path, names: &[&str]) {
    for n in names {
        let p = dir.join(n);
        assert!(p.is_file() && std::fs::metadata(&p).unwrap().len() > 0, "missing {}", p.display());
    }
}

#[test]
fn every_subcommand_writes_its_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(serde_json::json!({}));
    let expected: [(&str, &[&str]); 6] = [
        ("forward", &["boundary.csv", "coefficients.csv", "solution_final.csv", "neumann.csv", "summary.json"]),
        ("dnmap", &["neumann_pair1.csv", "neumann_pair2.csv", "dn_norm.json"]),
        ("go-check", &["go_check.csv", "transport.csv", "remainder_decay.svg", "go_study.json"]),
        ("carleman-check", &["carleman.csv", "carleman_summary.json", "carleman_ratio.svg"]),
        ("reconstruct", &["a_reconstructed.csv", "error_report.json"]),
        ("stability-curve", &["records.csv", "fits.json", "err_a_vs_dn.svg", "err_q_vs_dn.svg"]),
    ];
    for (cmd, files) in expected {
        let (code, out) = run(cmd, &cfg, tmp.path());
        assert_eq!(code, 0, "{cmd} failed");
        assert_files(&out, files);
    }
    let header = std::fs::read_to_string(tmp.path().join("go-check/go_check.csv")).unwrap();
    assert!(header.starts_with("lambda,delta,tau,xi_norm,norm_R_L2,norm_R_H1"));
    let header = std::fs::read_to_string(tmp.path().join("carleman-check/carleman.csv")).unwrap();
    assert!(header.starts_with("lambda,test_id,group1,group2,group3,group4,group5,lhs,rhs,ratio"));
    let dn: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("dnmap/dn_norm.json")).unwrap()).unwrap();
    for key in ["pairs", "eps", "omega0", "basis_size", "norm", "iters"] {
        assert!(dn[0].get(key).is_some(), "dn record lacks {key}");
    }
}

#[test]
fn failing_check_gives_exit_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(serde_json::json!({"go": {"min_order": 100.0}}));
    let (code, out) = run("go-check", &cfg, tmp.path());
    assert_eq!(code, 1);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["checks"].as_array().unwrap().iter().any(|c| c["passed"] == false));
}

#[test]
fn disabled_section_passes_without_running() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(serde_json::json!({"carleman": {"enabled": false}}));
    let (code, out) = run("carleman-check", &cfg, tmp.path());
    assert_eq!(code, 0);
    assert!(!out.join("carleman.csv").exists());
}

#[test]
fn bad_config_gives_exit_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(serde_json::json!({"grid": {"nx": 17, "bogus": 3}}));
    assert_eq!(run("forward", &cfg, tmp.path()).0, 2);
}

#[test]
fn stability_curve_csv_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(serde_json::json!({}));
    let (a, out_a) = run("stability-curve", &cfg, &tmp.path().join("a"));
    let (b, out_b) = run("stability-curve", &cfg, &tmp.path().join("b"));
    assert_eq!((a, b), (0, 0));
    let read = |p: &Path| std::fs::read(p.join("records.csv")).unwrap();
    assert_eq!(read(&out_a), read(&out_b));
}

#[test]
fn empty_family_writes_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(serde_json::json!({"experiment": {"scales": []}}));
    let (code, out) = run("stability-curve", &cfg, tmp.path());
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(!out.join("err_a_vs_dn.svg").exists());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = cdlab::config::Config::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.grid.build().unwrap();
            cfg.fields.pairs(cfg.grid.n).unwrap();
            count += 1;
        }
    }
    assert!(count >= 6);
}
