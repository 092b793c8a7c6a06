use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lava_cli::ModelFile;
use lava_core::Dataset;
use tempfile::TempDir;

fn lava(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lava"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &TempDir, name: &str, amplitude: &str, samples: &str, seed: &str) -> PathBuf {
    let out = dir.path().join(name);
    let o = lava(&[
        "gen",
        "--system",
        "saturation",
        "--amplitude",
        amplitude,
        "--samples",
        samples,
        "--seed",
        seed,
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn channel_values(o: &Output) -> Vec<f64> {
    let text = stdout(o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("channel,value"));
    lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn gen_writes_requested_rows_deterministically() {
    let dir = TempDir::new().unwrap();
    let a = gen(&dir, "a.csv", "5", "1000", "1");
    let b = gen(&dir, "b.csv", "5", "1000", "1");
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("u1,u2,y1,y2"));
    assert_eq!(lines.clone().count(), 1000);
    assert!(lines.all(|l| l.split(',').count() == 4));
    let c = gen(&dir, "c.csv", "5", "1000", "2");
    assert_ne!(text, fs::read_to_string(&c).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let o = lava(&[
        "gen",
        "--system",
        "saturation",
        "--amplitude",
        "5",
        "--samples",
        "10",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = lava(&[
        "gen",
        "--system",
        "pendulum",
        "--amplitude",
        "5",
        "--samples",
        "10",
        "--seed",
        "1",
        "--out",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    let o = lava(&[
        "gen",
        "--system",
        "saturation",
        "--amplitude",
        "-1",
        "--samples",
        "10",
        "--seed",
        "1",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_reports_benchmark_dimensions() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "d.csv", "5", "600", "3");
    let model = dir.path().join("m.json");
    let o = lava(&[
        "fit",
        "--data",
        path_str(&data),
        "--na",
        "1",
        "--nb",
        "1",
        "--M",
        "4",
        "--out",
        path_str(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout(&o);
    assert!(summary.contains("p=5 q=256"), "{summary}");
    assert!(summary.contains("(10 entries)"), "{summary}");
    assert!(summary.contains("z_capacity=512"), "{summary}");

    let file = ModelFile::read(&model).unwrap();
    assert_eq!((file.dims.p, file.dims.q), (5, 256));
    assert_eq!(file.theta.len(), 10);
    let nnz = format!("z_nonzero={}", file.z_sparse.len());
    assert!(summary.contains(&nnz), "{summary}");
    assert_eq!(file.provenance.cycles, Some(5));
    assert_eq!(file.provenance.data_fingerprint.len(), 64);
}

#[test]
fn fit_rejects_mismatched_model_and_data() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "d.csv", "2", "300", "4");
    let model = dir.path().join("m.json");
    assert!(lava(&[
        "fit",
        "--data",
        path_str(&data),
        "--na",
        "1",
        "--nb",
        "1",
        "--M",
        "2",
        "--out",
        path_str(&model)
    ])
    .status
    .success());
    let narrow = dir.path().join("narrow.csv");
    fs::write(&narrow, "u1,y1\n0.1,0.2\n0.3,0.4\n0.5,0.6\n").unwrap();
    let o = lava(&[
        "simulate",
        "--model",
        path_str(&model),
        "--data",
        path_str(&narrow),
        "--out",
        path_str(&dir.path().join("s.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn model_round_trip_gives_identical_simulation() {
    let dir = TempDir::new().unwrap();
    let train = gen(&dir, "t.csv", "4", "500", "5");
    let val = gen(&dir, "v.csv", "4", "300", "6");
    let model = dir.path().join("m.json");
    assert!(lava(&[
        "fit",
        "--data",
        path_str(&train),
        "--na",
        "1",
        "--nb",
        "1",
        "--M",
        "3",
        "--out",
        path_str(&model)
    ])
    .status
    .success());
    let file = ModelFile::read(&model).unwrap();
    let copy = dir.path().join("copy.json");
    file.to_model()
        .map(|m| ModelFile::from_model(&m, file.provenance.clone()))
        .unwrap()
        .write(&copy)
        .unwrap();
    assert_eq!(ModelFile::read(&copy).unwrap(), file);

    let run = |m: &Path, out: &str| {
        let o = lava(&[
            "simulate",
            "--model",
            path_str(m),
            "--data",
            path_str(&val),
            "--out",
            path_str(&dir.path().join(out)),
            "--metric",
            "rmse",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (stdout(&o), fs::read(dir.path().join(out)).unwrap())
    };
    assert_eq!(run(&model, "a.csv"), run(&copy, "b.csv"));
}

/// Writes a model JSON with `n_u = n_y = 1`, `n_a = n_b = 1`, empty `Ẑ`.
fn linear_model(dir: &TempDir, theta: [f64; 3]) -> PathBuf {
    let path = dir.path().join("linear.json");
    let json = format!(
        r#"{{
  "schema_version": 1,
  "dims": {{"n_u": 1, "n_y": 1, "n_a": 1, "n_b": 1, "M": 2, "p": 3, "q": 4}},
  "ell": [10.0, 10.0],
  "theta": [{}, {}, {}],
  "z_sparse": [],
  "provenance": {{"solver": "lava-r", "L": 5, "c": 10000.0, "data_fingerprint": ""}}
}}"#,
        theta[0], theta[1], theta[2]
    );
    fs::write(&path, json).unwrap();
    path
}

fn linear_data(dir: &TempDir) -> PathBuf {
    // y(t) = 0.7 y(t-1) + 0.5 u(t-1) + 0.2, zero initial conditions.
    let n = 200;
    let u: Vec<f64> = (0..n).map(|t| ((t * 37 % 11) as f64 - 5.0) / 5.0).collect();
    let mut y = vec![0.0; n];
    for t in 0..n {
        let (yp, up) = if t > 0 { (y[t - 1], u[t - 1]) } else { (0.0, 0.0) };
        y[t] = 0.7 * yp + 0.5 * up + 0.2;
    }
    let data = Dataset::new(
        lava_core::DMatrix::from_row_slice(1, n, &u),
        lava_core::DMatrix::from_row_slice(1, n, &y),
        1.0,
    )
    .unwrap();
    let path = dir.path().join("linear.csv");
    data.write_csv(&path).unwrap();
    path
}

#[test]
fn exact_model_fits_perfectly() {
    let dir = TempDir::new().unwrap();
    let model = linear_model(&dir, [0.7, 0.5, 0.2]);
    let data = linear_data(&dir);
    let o = lava(&[
        "simulate",
        "--model",
        path_str(&model),
        "--data",
        path_str(&data),
        "--out",
        path_str(&dir.path().join("s.csv")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit = channel_values(&o);
    assert_eq!(fit.len(), 1);
    assert!((fit[0] - 100.0).abs() < 1e-9, "FIT {}", fit[0]);
}

#[test]
fn zero_model_on_zero_mean_data_fits_zero() {
    let dir = TempDir::new().unwrap();
    let model = linear_model(&dir, [0.0, 0.0, 0.0]);
    // One warm-up sample is skipped; the remaining 400 average to zero.
    let n = 401;
    let y: Vec<f64> = (0..n).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let u = vec![0.0; n];
    let data = Dataset::new(
        lava_core::DMatrix::from_row_slice(1, n, &u),
        lava_core::DMatrix::from_row_slice(1, n, &y),
        1.0,
    )
    .unwrap();
    let path = dir.path().join("zm.csv");
    data.write_csv(&path).unwrap();
    let o = lava(&[
        "simulate",
        "--model",
        path_str(&model),
        "--data",
        path_str(&path),
        "--out",
        path_str(&dir.path().join("s.csv")),
    ]);
    assert!(o.status.success());
    let fit = channel_values(&o);
    assert!(fit[0].abs() < 1e-9, "FIT {}", fit[0]);
}

#[test]
fn divergent_model_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let model = linear_model(&dir, [1.5, 0.5, 0.2]);
    let data = linear_data(&dir);
    let o = lava(&[
        "simulate",
        "--model",
        path_str(&model),
        "--data",
        path_str(&data),
        "--out",
        path_str(&dir.path().join("s.csv")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).starts_with("diverged,"));
}

#[test]
fn lava_beats_arx_at_large_amplitude() {
    let dir = TempDir::new().unwrap();
    let train = gen(&dir, "t.csv", "8", "1000", "11");
    let val = gen(&dir, "v.csv", "8", "1000", "12");
    let model = dir.path().join("m.json");
    assert!(lava(&[
        "fit",
        "--data",
        path_str(&train),
        "--na",
        "1",
        "--nb",
        "1",
        "--M",
        "4",
        "--out",
        path_str(&model)
    ])
    .status
    .success());
    // The ARX baseline is not a CLI fit mode; build it from the same record.
    let train_data = Dataset::load_csv_auto(&train).unwrap();
    let reg = lava_core::RegressorConfig::from_data(&train_data, 1, 1, 4, 1.2).unwrap();
    let solver = lava_core::LavaSolver::fit(&reg, &train_data, lava_core::LavaConfig::default()).unwrap();
    let file = ModelFile::read(&model).unwrap();
    let arx = ModelFile::from_model(&solver.arx_model(&reg).unwrap(), file.provenance.clone());
    let arx_path = dir.path().join("arx.json");
    arx.write(&arx_path).unwrap();

    let rmse = |m: &Path| {
        let o = lava(&[
            "simulate",
            "--model",
            path_str(m),
            "--data",
            path_str(&val),
            "--out",
            path_str(&dir.path().join("s.csv")),
            "--metric",
            "rmse",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        channel_values(&o)
    };
    let (lava_rmse, arx_rmse) = (rmse(&model), rmse(&arx_path));
    assert!(lava_rmse[0] < arx_rmse[0], "{lava_rmse:?} vs {arx_rmse:?}");
}

#[test]
fn batch_fit_records_mm_provenance() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "d.csv", "3", "200", "8");
    let model = dir.path().join("m.json");
    let o = lava(&[
        "fit",
        "--data",
        path_str(&data),
        "--na",
        "1",
        "--nb",
        "1",
        "--M",
        "2",
        "--mm-iters",
        "3",
        "--out",
        path_str(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let file = ModelFile::read(&model).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(v["provenance"]["solver"], "mm-batch");
    assert_eq!(file.provenance.k_max, Some(3));
    assert!(file.to_model().is_ok());
}

/// White-noise outputs: the summary's nonzero count matches the stored
/// sparse entries and stays a small fraction of the capacity.
#[test]
fn noise_only_fit_stays_sparse() {
    let dir = TempDir::new().unwrap();
    let n = 2000;
    let u = lava_core::dataset::generate_rs(&lava_core::RsSignalSpec::new(1.0, n, 1)).unwrap();
    // Deterministic pseudo-noise independent of u.
    let mut state = 0x9e3779b97f4a7c15u64;
    let y: Vec<f64> = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let data = Dataset::new(
        lava_core::DMatrix::from_row_slice(1, n, &u),
        lava_core::DMatrix::from_row_slice(1, n, &y),
        1.0,
    )
    .unwrap();
    let path = dir.path().join("noise.csv");
    data.write_csv(&path).unwrap();
    let model = dir.path().join("m.json");
    let o = lava(&[
        "fit",
        "--data",
        path_str(&path),
        "--na",
        "1",
        "--nb",
        "1",
        "--M",
        "6",
        "--out",
        path_str(&model),
    ]);
    assert!(o.status.success());
    let file = ModelFile::read(&model).unwrap();
    assert!(stdout(&o).contains(&format!("z_nonzero={}", file.z_sparse.len())));
    assert!(
        file.z_sparse.len() * 5 < file.dims.q,
        "{} of {}",
        file.z_sparse.len(),
        file.dims.q
    );
}

#[test]
fn sweep_writes_schema_deterministically() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = lava(&[
            "sweep",
            "--amplitudes",
            "0.5,8",
            "--mc-runs",
            "2",
            "--seed",
            "3",
            "--out",
            path_str(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let mut lines = a.lines();
    assert_eq!(lines.next(), Some("estimator,amplitude,channel,rmse"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 2 * 2);
    for r in &rows {
        assert!(r[0] == "lava-r" || r[0] == "arx");
        assert!(r[1] == "0.5" || r[1] == "8");
        assert!(r[2] == "1" || r[2] == "2");
        assert!(r[3].parse::<f64>().unwrap() > 0.0);
    }
}
