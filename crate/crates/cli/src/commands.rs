use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use ekfprop::data_io::{
    write_plot_data, write_report, write_series_csv, write_vectors_csv, ComparisonSection, MonteCarloSection,
    PropagationSection, RmseSection, SweepCurve, SweepSection,
};
use ekfprop::{
    compare_stats, estimate_process_noise, evaluate_accuracy, load_model, load_noise, make_error_bars, mc_propagate,
    propagate, read_idx, read_vectors_csv, rmse_by_label, save_model, save_noise, train, LabeledDataset, Network,
    ProcessNoiseSet, PropagationMode, Report, TrainConfig,
};
use nalgebra::{DMatrix, DVector};

use crate::config::Config;
use crate::{
    Cli, Command, CompareArgs, DatasetArgs, EstimateNoiseArgs, ExtractArgs, InputArgs, McArgs, Mode, PropagateArgs,
    RmseArgs, Sigma0Args, SweepArgs, TrainArgs,
};

const DEFAULT_SAMPLES: usize = 5000;
const DEFAULT_SEED: u64 = 0;
const DEFAULT_SIGMA_MULT: f64 = 1.0;

/// Invalid combination of arguments; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(message: impl Into<String>) -> Result<T> {
    Err(UsageError(message.into()).into())
}

struct Ctx {
    config: Config,
    no_timestamp: bool,
}

impl Ctx {
    fn report(&self, command: &str) -> Report {
        let mut report = Report::new(command);
        if !self.no_timestamp {
            report.timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
        }
        report
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.config.seed).unwrap_or(DEFAULT_SEED)
    }

    fn samples(&self, flag: Option<usize>) -> usize {
        flag.or(self.config.samples).unwrap_or(DEFAULT_SAMPLES)
    }

    fn mode(&self, flag: Option<Mode>) -> Result<Mode> {
        if let Some(m) = flag {
            return Ok(m);
        }
        match self.config.mode.as_deref() {
            None | Some("perfect") => Ok(Mode::Perfect),
            Some("noisy") => Ok(Mode::Noisy),
            Some(other) => usage(format!("config mode must be \"perfect\" or \"noisy\", got {other:?}")),
        }
    }

    /// `Σ₀` from `--cov`, `--var` or the config variance, plus the scalar
    /// variance when it was given that way.
    fn sigma0(&self, args: &Sigma0Args, dim: usize) -> Result<(DMatrix<f64>, Option<f64>)> {
        if let Some(path) = &args.cov {
            let rows = read_vectors_csv(path)?;
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                bail!("covariance {} must be {dim}x{dim}", path.display());
            }
            return Ok((DMatrix::from_fn(dim, dim, |i, j| rows[i][j]), None));
        }
        let Some(var) = args.var.or(self.config.var) else {
            return usage("one of --var or --cov is required");
        };
        if !(var >= 0.0) || !var.is_finite() {
            return usage(format!("--var must be a finite non-negative number, got {var}"));
        }
        Ok((DMatrix::from_diagonal_element(dim, dim, var), Some(var)))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    let no_timestamp = cli.no_timestamp || config.no_timestamp.unwrap_or(false);
    let ctx = Ctx { config, no_timestamp };
    match cli.command {
        Command::Train(a) => command_train(&ctx, a),
        Command::EstimateNoise(a) => command_estimate_noise(&ctx, a),
        Command::Propagate(a) => command_propagate(&ctx, a),
        Command::Mc(a) => command_mc(&ctx, a),
        Command::Compare(a) => command_compare(&ctx, a),
        Command::Rmse(a) => command_rmse(&ctx, a),
        Command::Sweep(a) => command_sweep(&ctx, a),
        Command::Extract(a) => command_extract(a),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn load_dataset(args: &DatasetArgs, report: Option<&mut Report>) -> Result<LabeledDataset> {
    let (Some(images), Some(labels)) = (&args.dataset_images, &args.dataset_labels) else {
        return usage("--dataset-images and --dataset-labels must be given together");
    };
    let data = read_idx(images, labels)?.slice(args.offset, args.limit);
    if data.is_empty() {
        bail!("no dataset items left after offset {}", args.offset);
    }
    if let Some(report) = report {
        report.files.insert("dataset_images".into(), path_str(images));
        report.files.insert("dataset_labels".into(), path_str(labels));
    }
    Ok(data)
}

fn optional_dataset(args: &DatasetArgs, report: &mut Report) -> Result<Option<LabeledDataset>> {
    if args.dataset_images.is_none() && args.dataset_labels.is_none() {
        return Ok(None);
    }
    load_dataset(args, Some(report)).map(Some)
}

fn load_input(args: &InputArgs, report: &mut Report) -> Result<DVector<f64>> {
    let rows = read_vectors_csv(&args.input)?;
    let Some(x) = rows.into_iter().nth(args.row) else {
        bail!("{} has no row {}", args.input.display(), args.row);
    };
    report.files.insert("input".into(), path_str(&args.input));
    Ok(x)
}

fn load_model_into(path: &Path, report: &mut Report) -> Result<Network> {
    let net = load_model(path)?;
    report.files.insert("model".into(), path_str(path));
    Ok(net)
}

fn load_noise_for(net: &Network, path: &Path, report: &mut Report) -> Result<ProcessNoiseSet> {
    let (noise, d0) = load_noise(path)?;
    if d0 != net.input_dim() {
        bail!("noise file {} was estimated for input width {d0}, model has {}", path.display(), net.input_dim());
    }
    noise.check_matches(net)?;
    report.files.insert("noise".into(), path_str(path));
    report.noise_sample_count = Some(noise.sample_count());
    Ok(noise)
}

/// Noise is loaded exactly when the mode asks for it.
fn noise_for_mode(
    mode: Mode,
    noise: Option<&PathBuf>,
    net: &Network,
    report: &mut Report,
) -> Result<Option<ProcessNoiseSet>> {
    match (mode, noise) {
        (Mode::Perfect, None) => Ok(None),
        (Mode::Perfect, Some(_)) => usage("--noise is only used with --mode noisy"),
        (Mode::Noisy, None) => usage("--mode noisy requires --noise"),
        (Mode::Noisy, Some(p)) => load_noise_for(net, p, report).map(Some),
    }
}

fn propagation_mode(noise: Option<&ProcessNoiseSet>) -> PropagationMode<'_> {
    match noise {
        Some(q) => PropagationMode::WithProcessNoise(q),
        None => PropagationMode::PerfectModel,
    }
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Per-label RMSE over the items of `data` carrying `label`.
fn label_rmse(net: &Network, data: &LabeledDataset, label: usize) -> Result<(DVector<f64>, usize)> {
    let count = data.labels.iter().filter(|&&l| l == label).count();
    if count == 0 {
        bail!("dataset holds no items with label {label}");
    }
    Ok((rmse_by_label(net, &data.vectors, &data.labels, label)?, count))
}

fn command_train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let data = load_dataset(&a.data, None)?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: a.epochs.or(ctx.config.epochs).unwrap_or(defaults.epochs),
        learning_rate: a.lr.or(ctx.config.lr).unwrap_or(defaults.learning_rate),
        batch_size: a.batch.or(ctx.config.batch).unwrap_or(defaults.batch_size),
        seed: ctx.seed(a.seed),
    };
    let net = train(&data, &a.dims, &config)?;
    let accuracy = evaluate_accuracy(&net, &data)?;
    save_model(&net, &a.out)?;
    println!("trained {:?} on {} items, training accuracy {accuracy:.4}", a.dims, data.len());
    Ok(())
}

fn command_estimate_noise(_ctx: &Ctx, a: EstimateNoiseArgs) -> Result<()> {
    let net = load_model(&a.model)?;
    let calibration = match &a.input {
        Some(path) => read_vectors_csv(path)?,
        None => load_dataset(&a.data, None).context("calibration data needs --input or a dataset")?.vectors,
    };
    let noise = estimate_process_noise(&net, &calibration)?;
    save_noise(&noise, net.input_dim(), &a.out)?;
    println!("estimated process noise for {} layers from {} samples", net.depth(), noise.sample_count());
    Ok(())
}

fn command_propagate(ctx: &Ctx, a: PropagateArgs) -> Result<()> {
    let mut report = ctx.report("propagate");
    let net = load_model_into(&a.model, &mut report)?;
    let x0 = load_input(&a.input, &mut report)?;
    let (sigma0, var) = ctx.sigma0(&a.sigma0, x0.len())?;
    let mode = ctx.mode(a.mode)?;
    let noise = noise_for_mode(mode, a.noise.as_ref(), &net, &mut report)?;
    let sigma_mult = a.sigma_mult.or(ctx.config.sigma_mult).unwrap_or(DEFAULT_SIGMA_MULT);
    let truncate = a.truncate || ctx.config.truncate.unwrap_or(false);

    let pmode = propagation_mode(noise.as_ref());
    let result = propagate(&net, &x0, &sigma0, pmode)?;
    let out = result.output();
    let bars = make_error_bars(out, sigma_mult, truncate)?;

    report.mode = Some(pmode.name().into());
    report.input_variance = var;
    if let Some(p) = &a.sigma0.cov {
        report.files.insert("cov".into(), path_str(p));
    }
    report.propagation = Some(PropagationSection::new(&out.cov, &bars));
    write_report(&report, &a.output.out)?;
    if let Some(plot) = &a.output.plot_out {
        write_plot_data(&bars, plot)?;
    }
    Ok(())
}

fn command_mc(ctx: &Ctx, a: McArgs) -> Result<()> {
    let mut report = ctx.report("mc");
    let net = load_model_into(&a.model, &mut report)?;
    let x0 = load_input(&a.input, &mut report)?;
    let (sigma0, var) = ctx.sigma0(&a.sigma0, x0.len())?;
    let (n, seed) = (ctx.samples(a.samples), ctx.seed(a.seed));
    let stats = mc_propagate(&net, &x0, &sigma0, n, seed)?;

    report.input_variance = var;
    report.seed = Some(seed);
    if let Some(p) = &a.sigma0.cov {
        report.files.insert("cov".into(), path_str(p));
    }
    report.monte_carlo = Some(MonteCarloSection {
        samples: n,
        mean: to_vec(&stats.mean),
        cov: (&stats.cov).into(),
        std: to_vec(&stats.std),
    });
    write_report(&report, &a.output.out)?;
    if let Some(plot) = &a.output.plot_out {
        write_series_csv(&[("mean".into(), to_vec(&stats.mean)), ("std".into(), to_vec(&stats.std))], plot)?;
    }
    Ok(())
}

fn command_compare(ctx: &Ctx, a: CompareArgs) -> Result<()> {
    let mut report = ctx.report("compare");
    let net = load_model_into(&a.model, &mut report)?;
    let x0 = load_input(&a.input, &mut report)?;
    let (sigma0, var) = ctx.sigma0(&a.sigma0, x0.len())?;
    let (n, seed) = (ctx.samples(a.samples), ctx.seed(a.seed));
    let data = optional_dataset(&a.data, &mut report)?;
    let rmse = match (&data, a.label) {
        (None, None) => None,
        (Some(d), Some(label)) => Some(label_rmse(&net, d, label)?.0),
        _ => return usage("an RMSE column needs both a dataset and --label"),
    };

    let ekf_std = propagate(&net, &x0, &sigma0, PropagationMode::PerfectModel)?.output().std_devs();
    let mc = mc_propagate(&net, &x0, &sigma0, n, seed)?;
    let stats = compare_stats(&ekf_std, &mc.std)?;

    report.mode = Some(PropagationMode::PerfectModel.name().into());
    report.input_variance = var;
    report.seed = Some(seed);
    if let Some(p) = &a.sigma0.cov {
        report.files.insert("cov".into(), path_str(p));
    }
    report.monte_carlo =
        Some(MonteCarloSection { samples: n, mean: to_vec(&mc.mean), cov: (&mc.cov).into(), std: to_vec(&mc.std) });
    report.comparison = Some(ComparisonSection {
        ekf_std: to_vec(&ekf_std),
        mc_std: to_vec(&mc.std),
        rmse: rmse.as_ref().map(to_vec),
        stats,
    });
    write_report(&report, &a.output.out)?;
    if let Some(plot) = &a.output.plot_out {
        let mut series = vec![("ekf_std".to_string(), to_vec(&ekf_std)), ("mc_std".to_string(), to_vec(&mc.std))];
        if let Some(r) = &rmse {
            series.push(("rmse".into(), to_vec(r)));
        }
        write_series_csv(&series, plot)?;
    }
    Ok(())
}

fn command_rmse(ctx: &Ctx, a: RmseArgs) -> Result<()> {
    let mut report = ctx.report("rmse");
    let net = load_model_into(&a.model, &mut report)?;
    let data = load_dataset(&a.data, Some(&mut report))?;
    let (rmse, count) = label_rmse(&net, &data, a.label)?;

    // EKF std with no input noise: all uncertainty comes from Q.
    let ekf_std = match (&a.noise, &a.input) {
        (Some(noise_path), Some(input)) => {
            let noise = load_noise_for(&net, noise_path, &mut report)?;
            let x0 = load_input(&InputArgs { input: input.clone(), row: a.row }, &mut report)?;
            let sigma0 = DMatrix::zeros(x0.len(), x0.len());
            let result = propagate(&net, &x0, &sigma0, PropagationMode::WithProcessNoise(&noise))?;
            report.mode = Some(PropagationMode::WithProcessNoise(&noise).name().into());
            report.input_variance = Some(0.0);
            Some(result.output().std_devs())
        }
        (None, None) => None,
        _ => return usage("--noise and --input must be given together"),
    };

    report.rmse =
        Some(RmseSection { label: a.label, count, rmse: to_vec(&rmse), ekf_std: ekf_std.as_ref().map(to_vec) });
    write_report(&report, &a.output.out)?;
    if let Some(plot) = &a.output.plot_out {
        let mut series = vec![("rmse".to_string(), to_vec(&rmse))];
        if let Some(s) = &ekf_std {
            series.push(("ekf_std".into(), to_vec(s)));
        }
        write_series_csv(&series, plot)?;
    }
    Ok(())
}

fn command_sweep(ctx: &Ctx, a: SweepArgs) -> Result<()> {
    if let Some(v) = a.vars.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return usage(format!("--vars entries must be finite and non-negative, got {v}"));
    }
    let mut report = ctx.report("sweep");
    let net = load_model_into(&a.model, &mut report)?;
    let x0 = load_input(&a.input, &mut report)?;
    let mode = ctx.mode(a.mode)?;
    let noise = noise_for_mode(mode, a.noise.as_ref(), &net, &mut report)?;
    let data = optional_dataset(&a.data, &mut report)?;
    let rmse = match (&data, a.label) {
        (None, None) => None,
        (Some(d), Some(label)) => Some(label_rmse(&net, d, label)?.0),
        _ => return usage("an RMSE curve needs both a dataset and --label"),
    };

    let pmode = propagation_mode(noise.as_ref());
    let d0 = x0.len();
    let curves = a
        .vars
        .iter()
        .map(|&variance| {
            let sigma0 = DMatrix::from_diagonal_element(d0, d0, variance);
            let std = propagate(&net, &x0, &sigma0, pmode)?.output().std_devs();
            Ok(SweepCurve { variance, std: to_vec(&std) })
        })
        .collect::<Result<Vec<_>>>()?;

    report.mode = Some(pmode.name().into());
    if let Some(p) = &a.output.plot_out {
        let mut series: Vec<(String, Vec<f64>)> =
            curves.iter().map(|c| (format!("var={}", c.variance), c.std.clone())).collect();
        if let Some(r) = &rmse {
            series.push(("rmse".into(), to_vec(r)));
        }
        write_series_csv(&series, p)?;
    }
    report.sweep = Some(SweepSection { curves, rmse: rmse.as_ref().map(to_vec) });
    write_report(&report, &a.output.out)?;
    Ok(())
}

fn command_extract(a: ExtractArgs) -> Result<()> {
    let data = load_dataset(&a.data, None)?;
    let Some(x) = data.vectors.get(a.index) else {
        bail!("dataset has {} items, no index {}", data.len(), a.index);
    };
    write_vectors_csv(std::slice::from_ref(x), &a.out)?;
    println!("label {}", data.labels[a.index]);
    Ok(())
}
