use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ekfprop::data_io::{read_report, write_idx, write_vectors_csv};
use ekfprop::{load_model, save_model, LayerParams, Network};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ekfprop")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Small 4x4-pixel, 3-class dataset and a [16, 8, 3] model with positive biases.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(42);
        let labels: Vec<u8> = (0..60).map(|i| (i % 3) as u8).collect();
        let images: Vec<Vec<u8>> = labels
            .iter()
            .map(|&l| (0..16).map(|p| if p % 3 == l as usize { 200 } else { r.random_range(0..40) }).collect())
            .collect();
        write_idx(dir.path().join("img.idx"), dir.path().join("lab.idx"), 4, 4, &images, &labels).unwrap();

        let layer = |rows, cols, r: &mut ChaCha8Rng| {
            let w = DMatrix::from_fn(rows, cols, |_, _| r.random_range(-0.5..0.5));
            LayerParams::new(w, DVector::from_element(rows, 0.3)).unwrap()
        };
        let net = Network::new(vec![layer(8, 16, &mut r), layer(3, 8, &mut r)]).unwrap();
        save_model(&net, dir.path().join("model.json")).unwrap();

        let xs: Vec<DVector<f64>> = (0..3).map(|_| DVector::from_fn(16, |_, _| r.random_range(0.0..1.0))).collect();
        write_vectors_csv(&xs, dir.path().join("x.csv")).unwrap();
        Fixture { dir }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn ps(&self, name: &str) -> String {
        s(&self.p(name))
    }

    fn data(&self) -> Vec<String> {
        vec!["--dataset-images".into(), self.ps("img.idx"), "--dataset-labels".into(), self.ps("lab.idx")]
    }

    fn noise(&self) -> String {
        let out = self.ps("noise.json");
        let mut args = vec!["estimate-noise".to_string(), "--model".into(), self.ps("model.json")];
        args.extend(self.data());
        args.extend(["--out".into(), out.clone()]);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
        out
    }
}

#[test]
fn propagate_writes_covariance_and_bars() {
    let f = Fixture::new();
    let (out, plot) = (f.ps("r.json"), f.ps("bars.csv"));
    let (model, input) = (f.ps("model.json"), f.ps("x.csv"));
    ok(&["propagate", "--model", &model, "--input", &input, "--var", "0.0025", "--mode", "perfect"]
        .into_iter()
        .chain(["--out", &out, "--plot-out", &plot, "--sigma-mult", "2"])
        .collect::<Vec<_>>());
    let report = read_report(&out).unwrap();
    assert_eq!(report.command, "propagate");
    assert_eq!(report.mode.as_deref(), Some("perfect"));
    assert_eq!(report.input_variance, Some(0.0025));
    assert!(report.timestamp_unix.is_some());
    let prop = report.propagation.unwrap();
    let cov = prop.output_cov.to_matrix().unwrap();
    assert_eq!(cov.shape(), (3, 3));
    assert_eq!(cov, cov.transpose());
    assert_eq!(prop.sigma_mult, 2.0);
    for i in 0..3 {
        assert_eq!(prop.sigma_raw[i], cov[(i, i)].sqrt());
        assert!(prop.bar_low[i] >= 0.0);
    }
    let csv = std::fs::read_to_string(&plot).unwrap();
    assert!(csv.starts_with("index,prediction,sigma_raw,sigma_truncated,bar_low,bar_high\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn zero_input_variance_gives_zero_sigma() {
    let f = Fixture::new();
    let out = f.ps("r.json");
    ok(&["propagate", "--model", &f.ps("model.json"), "--input", &f.ps("x.csv"), "--var", "0"]
        .into_iter()
        .chain(["--mode", "perfect", "--out", &out])
        .collect::<Vec<_>>());
    let prop = read_report(&out).unwrap().propagation.unwrap();
    assert!(prop.sigma_raw.iter().all(|v| *v == 0.0));
    assert!(prop.output_cov.data.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn noisy_mode_records_noise_and_adds_variance() {
    let f = Fixture::new();
    let noise = f.noise();
    let (perfect, noisy) = (f.ps("p.json"), f.ps("n.json"));
    let base = ["propagate", "--input", &f.ps("x.csv"), "--var", "0.01", "--model", &f.ps("model.json")];
    ok(&[&base[..], &["--out", &perfect]].concat());
    ok(&[&base[..], &["--mode", "noisy", "--noise", &noise, "--out", &noisy]].concat());
    let p = read_report(&perfect).unwrap();
    let n = read_report(&noisy).unwrap();
    assert_eq!(n.mode.as_deref(), Some("noisy"));
    assert_eq!(n.noise_sample_count, Some(60));
    assert!(n.files.contains_key("noise"));
    assert!(p.noise_sample_count.is_none());
    let (sp, sn) = (p.propagation.unwrap().sigma_raw, n.propagation.unwrap().sigma_raw);
    assert!(sp.iter().zip(&sn).all(|(a, b)| b >= a));
}

#[test]
fn usage_errors_exit_with_2() {
    let f = Fixture::new();
    let (model, input, out) = (f.ps("model.json"), f.ps("x.csv"), f.ps("r.json"));
    let cases: Vec<Vec<&str>> = vec![
        vec!["propagate", "--model", &model, "--input", &input, "--out", &out],
        vec!["propagate", "--model", &model, "--input", &input, "--var", "0.1", "--mode", "noisy", "--out", &out],
        vec!["propagate", "--model", &model, "--input", &input, "--var", "-1", "--out", &out],
        vec!["propagate", "--model", &model, "--input", &input, "--var", "0.1", "--mode", "sideways", "--out", &out],
        vec!["frobnicate"],
        vec!["mc", "--model", &model],
    ];
    for args in cases {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn runtime_errors_exit_with_1() {
    let f = Fixture::new();
    let (model, out) = (f.ps("model.json"), f.ps("r.json"));
    write_vectors_csv(&[DVector::from_element(5, 0.5)], f.p("short.csv")).unwrap();
    std::fs::write(f.p("bad.json"), "{not json").unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["propagate", "--model", "/nonexistent/model.json", "--input", &f.ps("x.csv"), "--var", "0.1"],
        vec!["propagate", "--model", &model, "--input", &f.ps("short.csv"), "--var", "0.1"],
        vec!["propagate", "--model", &f.ps("bad.json"), "--input", &f.ps("x.csv"), "--var", "0.1"],
        vec!["propagate", "--model", &model, "--input", &f.ps("x.csv"), "--row", "7", "--var", "0.1"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).chain(["--out".into(), out.clone()]).collect())
    .collect();
    for args in cases {
        let res = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(res.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
    }
}

#[test]
fn full_covariance_file_is_accepted() {
    let f = Fixture::new();
    let rows: Vec<DVector<f64>> =
        (0..16).map(|i| DVector::from_fn(16, |j, _| if i == j { 0.01 } else { 0.001 })).collect();
    write_vectors_csv(&rows, f.p("cov.csv")).unwrap();
    let (by_cov, out) = (f.ps("cov.json"), f.ps("mc.json"));
    ok(&["propagate", "--model", &f.ps("model.json"), "--input", &f.ps("x.csv"), "--cov", &f.ps("cov.csv")]
        .into_iter()
        .chain(["--out", &by_cov])
        .collect::<Vec<_>>());
    let report = read_report(&by_cov).unwrap();
    assert!(report.input_variance.is_none());
    assert!(report.files.contains_key("cov"));
    ok(&["mc", "--model", &f.ps("model.json"), "--input", &f.ps("x.csv"), "--cov", &f.ps("cov.csv")]
        .into_iter()
        .chain(["--samples", "200", "--seed", "1", "--out", &out])
        .collect::<Vec<_>>());
    assert_eq!(read_report(&out).unwrap().monte_carlo.unwrap().samples, 200);
}

#[test]
fn config_supplies_defaults_and_flags_override() {
    let f = Fixture::new();
    std::fs::write(f.p("cfg.toml"), "samples = 150\nseed = 4\nvar = 0.02\nno_timestamp = true\n").unwrap();
    let (a, b) = (f.ps("a.json"), f.ps("b.json"));
    let base = ["--config", &f.ps("cfg.toml"), "mc", "--model", &f.ps("model.json"), "--input", &f.ps("x.csv")];
    ok(&[&base[..], &["--out", &a]].concat());
    ok(&[&base[..], &["--samples", "300", "--out", &b]].concat());
    let (ra, rb) = (read_report(&a).unwrap(), read_report(&b).unwrap());
    assert_eq!(ra.seed, Some(4));
    assert_eq!(ra.input_variance, Some(0.02));
    assert!(ra.timestamp_unix.is_none());
    assert_eq!(ra.monte_carlo.unwrap().samples, 150);
    assert_eq!(rb.monte_carlo.unwrap().samples, 300);

    std::fs::write(f.p("bad.toml"), "unknown_key = 1\n").unwrap();
    let res = run(&["--config", &f.ps("bad.toml"), "mc", "--model", &f.ps("model.json"), "--input", "x", "--out", &a]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn seeded_commands_are_byte_identical() {
    let f = Fixture::new();
    let noise = f.noise();
    let model = f.ps("model.json");
    let input = f.ps("x.csv");
    let data = f.data();
    let data: Vec<&str> = data.iter().map(String::as_str).collect();
    let bytes = |tag: &str| {
        let out = f.ps(&format!("{tag}.json"));
        let plot = f.ps(&format!("{tag}.csv"));
        ok(&[
            &["compare", "--model", &model, "--input", &input, "--var", "0.01", "--samples", "400"][..],
            &["--seed", "8", "--label", "1", "--no-timestamp", "--out", &out, "--plot-out", &plot],
            &data,
        ]
        .concat());
        let sweep = f.ps(&format!("{tag}-sweep.json"));
        ok(&[
            "sweep",
            "--model",
            &model,
            "--input",
            &input,
            "--vars",
            "0.001,0.01",
            "--mode",
            "noisy",
            "--noise",
            &noise,
            "--no-timestamp",
            "--out",
            &sweep,
        ]);
        [std::fs::read(out).unwrap(), std::fs::read(plot).unwrap(), std::fs::read(sweep).unwrap()]
    };
    assert_eq!(bytes("one"), bytes("two"));
}

#[test]
fn timestamps_differ_only_in_their_field() {
    let f = Fixture::new();
    let (a, b) = (f.ps("a.json"), f.ps("b.json"));
    let base = ["mc", "--model", &f.ps("model.json"), "--input", &f.ps("x.csv"), "--var", "0.01", "--samples", "50"];
    ok(&[&base[..], &["--out", &a]].concat());
    ok(&[&base[..], &["--out", &b, "--no-timestamp"]].concat());
    let (mut ra, rb) = (read_report(&a).unwrap(), read_report(&b).unwrap());
    assert!(ra.timestamp_unix.is_some() && rb.timestamp_unix.is_none());
    ra.timestamp_unix = None;
    ra.files = rb.files.clone();
    assert_eq!(ra, rb);
}

#[test]
fn train_extract_rmse_and_sweep_run_end_to_end() {
    let f = Fixture::new();
    let data = f.data();
    let data: Vec<&str> = data.iter().map(String::as_str).collect();
    let model = f.ps("trained.json");
    let stdout = ok(&[
        &["train", "--dims", "16,6,3", "--epochs", "30", "--lr", "0.05", "--batch", "8", "--seed", "2"][..],
        &["--out", &model],
        &data,
    ]
    .concat());
    assert!(stdout.contains("training accuracy"));
    assert_eq!(load_model(&model).unwrap().dims(), vec![16, 6, 3]);

    let x = f.ps("item.csv");
    let label = ok(&[&["extract", "--index", "4", "--offset", "10", "--out", &x][..], &data].concat());
    assert_eq!(label.trim(), "label 2");

    let noise = f.noise();
    let rmse = f.ps("rmse.json");
    ok(&[
        &["rmse", "--model", &f.ps("model.json"), "--label", "2", "--noise", &noise, "--input", &x][..],
        &["--out", &rmse, "--plot-out", &f.ps("rmse.csv")],
        &data,
    ]
    .concat());
    let section = read_report(&rmse).unwrap().rmse.unwrap();
    assert_eq!(section.count, 20);
    assert_eq!(section.rmse.len(), 3);
    assert!(section.ekf_std.unwrap().iter().all(|v| *v >= 0.0));
    assert!(std::fs::read_to_string(f.p("rmse.csv")).unwrap().starts_with("index,rmse,ekf_std\n"));

    let sweep = f.ps("sweep.json");
    ok(&[
        &["sweep", "--model", &f.ps("model.json"), "--input", &x, "--vars", "0,0.01,0.04", "--label", "2"][..],
        &["--out", &sweep, "--plot-out", &f.ps("sweep.csv")],
        &data,
    ]
    .concat());
    let section = read_report(&sweep).unwrap().sweep.unwrap();
    assert_eq!(section.curves.len(), 3);
    assert!(section.curves[0].std.iter().all(|v| *v == 0.0));
    assert!(section.rmse.is_some());
    let header = std::fs::read_to_string(f.p("sweep.csv")).unwrap();
    assert!(header.starts_with("index,var=0,var=0.01,var=0.04,rmse\n"));
}
