use std::path::Path;
use std::process::{Command, Output};

fn onebit(args: &[&str], env_threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_onebit"));
    cmd.args(args).env_remove("ONEBIT_THREADS");
    if let Some(n) = env_threads {
        cmd.env("ONEBIT_THREADS", n);
    }
    cmd.output().expect("spawn onebit")
}

const SMALL: &str = r#"{
  "nr": 4, "nu": 2, "snr_db_grid": [-5, 5, 15], "n_tr": 20, "n_trials": 6,
  "n_data_per_trial": 40, "record_wall_time": false,
  "detectors": ["csi-ml", "naive-ml", "biased-ml", "dither-ml", "dither-ml-est-snr", "zf"],
  "offline": {"snr_db_grid": [-10, -5, 0, 5, 10, 15, 20], "trials": 3, "degree": 3}
}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn ser_sweep_is_bit_exact_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let out = onebit(
        &[
            "ser-sweep",
            "--config",
            &cfg,
            "--out",
            a.to_str().unwrap(),
            "--threads",
            "1",
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = onebit(
        &["ser-sweep", "--config", &cfg, "--out", b.to_str().unwrap()],
        Some("3"),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (a, b) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with(
        "detector,snr_db,n_tr,symbols_tested,symbol_errors,ser,vector_errors,vser,mean_zero_count,wall_time_ms\n"
    ));
    assert_eq!(text.lines().count(), 1 + 3 * 6);
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.csv.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["zf_variant"], "pinv-slice");
}

#[test]
fn seed_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |seed: &str| {
        let out = onebit(&["zero-count", "--config", &cfg, "--seed", seed], None);
        assert!(out.status.success());
        out.stdout
    };
    assert_eq!(run("7"), run("7"));
    assert_ne!(run("7"), run("8"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [r#"{"unknown_key": 1}"#, r#"{"detectors": []}"#, "not json"] {
        let cfg = write_config(dir.path(), bad);
        let out = onebit(&["ser-sweep", "--config", &cfg], None);
        assert_eq!(out.status.code(), Some(2), "{bad}");
    }
    let out = onebit(&["ser-sweep", "--config", "/nonexistent/cfg.json"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = onebit(&["bogus-command"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn snr_train_writes_model_and_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let model = dir.path().join("model.json");
    let out = onebit(
        &[
            "snr-train",
            "--config",
            &cfg,
            "--out",
            model.to_str().unwrap(),
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(&model).unwrap()).unwrap();
    assert_eq!(m["coeffs"].as_array().unwrap().len(), 4);
    let ds = std::fs::read_to_string(dir.path().join("model.json.dataset.csv")).unwrap();
    assert!(ds.starts_with("gamma_db,n_zero_avg\n"));
    assert_eq!(ds.lines().count(), 8);

    // the saved model can drive the estimated-SNR detector
    let with_model = SMALL.replace(
        r#""offline": {"#,
        &format!(
            r#""offline": {{"model_path": {:?}, "#,
            model.to_str().unwrap()
        ),
    );
    let cfg = write_config(dir.path(), &with_model);
    let out = onebit(&["ser-sweep", "--config", &cfg], None);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn adaptive_writes_one_trace_per_detector() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"nr": 4, "nu": 2, "n_tr": 10, "n_trials": 2, "detectors": ["biased-ml", "dither-ml"],
            "adaptive": {"d": 5, "n_d_sub": 32, "snr_db": 20}}"#,
    );
    let base = dir.path().join("trace");
    let out = onebit(
        &[
            "adaptive",
            "--config",
            &cfg,
            "--out",
            base.to_str().unwrap(),
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for det in ["biased-ml", "dither-ml"] {
        let text = std::fs::read_to_string(dir.path().join(format!("trace.{det}.csv"))).unwrap();
        assert!(text.starts_with("subframe_index,crc_pass,cumulative_v,subframe_ser\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
