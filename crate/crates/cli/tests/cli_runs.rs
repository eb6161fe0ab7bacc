use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use conflow::datagen::{Gp1dParams, Gp2dParams};
use conflow::Tensor;
use conflow_cli::config::{DataSpec, ExperimentConfig, ExperimentKind};
use conflow_cli::plot::plot_table;
use conflow_cli::table::Table;
use conflow_cli::tensor_file::{read_bank, write_bank};

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn conflow(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_conflow"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("CONFLOW_THREADS", t.to_string());
    }
    cmd.output().unwrap()
}

fn run_ok(sub: &str, config: &Path, out: &Path) {
    let o = conflow(&[sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{sub} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn small_linear() -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seed: 3, data: DataSpec::LinearGaussian { p: 6, n: 60 }, ..ExperimentConfig::default() };
    cfg.sample.samples = 12;
    cfg
}

#[test]
fn sampling_subcommands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_linear();
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    for sub in ["datagen", "calibrate", "sample-boundary", "repulse", "sample-cpd", "metrics"] {
        run_ok(sub, &config, &out);
    }
    for f in ["train_x.ncf", "test_y.ncf", "thresholds.csv", "calibration.json", "boundary.ncf", "repulsed.ncf", "cpd_samples.csv", "metrics.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let boundary = read_bank(&out.join("boundary.ncf")).unwrap();
    assert_eq!(boundary.len(), 12);
    assert_eq!(boundary[0].shape(), &[6]);
    let thr = Table::read_csv(&out.join("thresholds.csv")).unwrap();
    assert_eq!(&thr.header[..2], &["config_hash".to_string(), "seed".to_string()]);
    assert_eq!(thr.get(0, "config_hash").unwrap(), cfg.resolve(None, false).unwrap().hash());
    assert_eq!(thr.get(0, "seed").unwrap(), "3");
    let rep = Table::read_csv(&out.join("repulsion.csv")).unwrap();
    assert!(rep.get_f64(1, "min_pairwise").unwrap() >= rep.get_f64(0, "min_pairwise").unwrap());
}

#[test]
fn band_and_field_metrics_run_on_gp_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        data: DataSpec::Gp1d(Gp1dParams { n: 40, p: 32, ..Gp1dParams::default() }),
        ..ExperimentConfig::default()
    };
    cfg.sample.samples = 10;
    let out = dir.path().join("band");
    run_ok("band", &write_config(dir.path(), &cfg), &out);
    let lower = read_bank(&out.join("band_lower.ncf")).unwrap();
    let upper = read_bank(&out.join("band_upper.ncf")).unwrap();
    assert_eq!(lower.len(), 40);
    for (l, u) in lower.iter().zip(&upper) {
        assert!(l.data().iter().zip(u.data()).all(|(a, b)| a <= b));
    }

    cfg.data = DataSpec::Gp2d(Gp2dParams { n: 30, p: 16, ..Gp2dParams::default() });
    let out = dir.path().join("field");
    run_ok("metrics", &write_config(dir.path(), &cfg), &out);
    let m = Table::read_csv(&out.join("metrics.csv")).unwrap();
    let names: Vec<&str> = (0..m.rows.len()).map(|r| m.get(r, "metric").unwrap()).collect();
    assert_eq!(names, ["energy_distance", "vendi_ratio", "lsd", "patch_mmd"]);
}

#[test]
fn external_banks_drive_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let preds: Vec<Tensor> = (0..30).map(|i| Tensor::vector(vec![i as f64 * 0.1, 1.0, -1.0])).collect();
    let targets: Vec<Tensor> = preds.iter().enumerate().map(|(i, p)| p.map(|v| v + ((i * 7 % 11) as f64 - 5.0) * 0.1)).collect();
    let (pp, tp) = (dir.path().join("p.ncf"), dir.path().join("t.ncf"));
    write_bank(&pp, &preds).unwrap();
    write_bank(&tp, &targets).unwrap();
    let mut cfg = ExperimentConfig {
        data: DataSpec::External { cal_predictions: pp, cal_targets: tp, predictions: None, targets: None },
        ..ExperimentConfig::default()
    };
    cfg.sample.samples = 5;
    let out = dir.path().join("out");
    run_ok("sample-boundary", &write_config(dir.path(), &cfg), &out);
    assert_eq!(read_bank(&out.join("boundary.ncf")).unwrap().len(), 5);
}

#[test]
fn corrupt_tensor_files_exit_with_their_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.ncf");
    write_bank(&good, &[Tensor::vector(vec![1.0, 2.0])]).unwrap();
    let bad_magic = dir.path().join("magic.ncf");
    fs::write(&bad_magic, b"XXXX\x01\x00\x00\x00").unwrap();
    let truncated = dir.path().join("short.ncf");
    let bytes = fs::read(&good).unwrap();
    fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
    for (file, code) in [(bad_magic, 10), (truncated, 13)] {
        let cfg = ExperimentConfig {
            data: DataSpec::External { cal_predictions: file, cal_targets: good.clone(), predictions: None, targets: None },
            ..ExperimentConfig::default()
        };
        let config = write_config(dir.path(), &cfg);
        let o = conflow(&["calibrate", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(code), "{}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn missing_files_and_bad_levels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.sample.alpha = 1.5;
    let o = conflow(&["calibrate", "--config", write_config(dir.path(), &cfg).to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert!(!o.status.success());
    let cfg = ExperimentConfig {
        data: DataSpec::External {
            cal_predictions: dir.path().join("nope.ncf"),
            cal_targets: dir.path().join("nope.ncf"),
            predictions: None,
            targets: None,
        },
        ..ExperimentConfig::default()
    };
    let o = conflow(&["calibrate", "--config", write_config(dir.path(), &cfg).to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn bench_csv_is_reproducible_and_svg_follows_from_it() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig { experiment: ExperimentKind::CpdAudit, seed: 21, ..ExperimentConfig::default() };
    cfg.audit.n_cal = 99;
    cfg.audit.samples = 500;
    let config = write_config(dir.path(), &cfg);
    let mut csvs = Vec::new();
    for (i, threads) in [1, 1, 3].into_iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = conflow(&["audit-cpd", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()], Some(threads));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let csv = fs::read(out.join("cpd_audit.csv")).unwrap();
        let svg = fs::read_to_string(out.join("cpd_audit.svg")).unwrap();
        let table = Table::read_csv(&out.join("cpd_audit.csv")).unwrap();
        assert_eq!(svg, plot_table(ExperimentKind::CpdAudit, &table).unwrap());
        csvs.push(csv);
    }
    assert!(csvs.iter().all(|c| *c == csvs[0]));

    let out = dir.path().join("seeded");
    conflow(&["audit-cpd", "--config", config.to_str().unwrap(), "--seed", "22", "--out", out.to_str().unwrap()], None);
    let other = Table::read_csv(&out.join("cpd_audit.csv")).unwrap();
    assert_eq!(other.get(0, "seed").unwrap(), "22");
    assert_ne!(fs::read(out.join("cpd_audit.csv")).unwrap(), csvs[0]);
}
