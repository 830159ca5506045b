use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kmscope::pipeline::{self, io, InputConfig, InputKind, PipelineConfig};
use kmscope::rolling::parse_bin_counts;
use kmscope::{Error, LangevinModel, Result, SigmaMode};

#[derive(Parser)]
#[command(
    name = "kmscope",
    version,
    about = "Kramers-Moyal analysis of return series"
)]
struct Cli {
    /// TOML configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for stage outputs (default: `output_dir` from the config, else `out`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a price file into canonical log-returns plus metadata.
    Ingest(IngestArgs),
    /// Stationarity curve and Chapman-Kolmogorov Markov test.
    Diagnose(DiagnoseArgs),
    /// Whole-series Kramers-Moyal profile and coefficient fits.
    Km(KmArgs),
    /// Rolling-window coefficient track and optional sensitivity report.
    Rolling(RollingArgs),
    /// Breakpoints of the coefficient track and their calendar density.
    Breaks(BreaksArgs),
    /// Euler-Maruyama path of a polynomial Langevin model.
    Simulate(SimulateArgs),
    /// Every stage in order, plot data and a run manifest.
    Run(RunArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    date_col: Option<String>,
    #[arg(long)]
    price_col: Option<String>,
    /// chrono format string, e.g. `%d/%m/%Y`.
    #[arg(long)]
    date_format: Option<String>,
    #[arg(long)]
    delimiter: Option<char>,
    /// Treat the input as an existing `date,return` file.
    #[arg(long)]
    returns: bool,
    #[arg(long)]
    clip_k: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Output returns file (default: `<out-dir>/returns.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    returns: Option<PathBuf>,
    /// `a..b` (inclusive) or a comma-separated list.
    #[arg(long)]
    lags: Option<String>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    min_occupancy: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    window_sizes: Option<Vec<usize>>,
    #[arg(long)]
    clip_k: Option<f64>,
}

#[derive(Args)]
struct KmArgs {
    #[arg(long)]
    returns: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    /// Subset of `1,2,4`.
    #[arg(long)]
    orders: Option<String>,
    #[arg(long)]
    diffusion_constant_term: bool,
    #[arg(long)]
    clip_k: Option<f64>,
}

#[derive(Args)]
struct RollingArgs {
    #[arg(long)]
    returns: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    step: Option<usize>,
    /// `start:end:step` or a comma-separated list.
    #[arg(long)]
    bins: Option<String>,
    #[arg(long)]
    r2: Option<f64>,
    /// `per-window` or `global`.
    #[arg(long)]
    sigma: Option<SigmaMode>,
    #[arg(long)]
    clip_k: Option<f64>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    diffusion_constant_term: bool,
    /// Alternative window lengths for the sensitivity report.
    #[arg(long, value_delimiter = ',')]
    alt_windows: Option<Vec<usize>>,
}

#[derive(Args)]
struct BreaksArgs {
    #[arg(long)]
    track: Option<PathBuf>,
    #[arg(long)]
    n_bkps: Option<usize>,
    #[arg(long)]
    min_segment: Option<usize>,
    #[arg(long)]
    jump: Option<usize>,
    #[arg(long)]
    bin_months: Option<u32>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Drift polynomial a0,a1,a2.
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    drift: [f64; 3],
    /// Diffusion polynomial eps,delta,beta.
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    d2: [f64; 3],
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, default_value_t = 500_000)]
    steps: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    /// Reflecting bounds lo,hi.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    domain: Option<(f64, f64)>,
    /// Write `date,price` with price = exp(cumulative sum) instead of returns.
    #[arg(long)]
    prices: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_floats<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    parse_floats::<3>(s)
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    parse_floats::<2>(s).map(|[a, b]| (a, b))
}

fn parse_lags(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Argument(format!("bad lag spec {spec:?}"));
    if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| bad())?;
        if a == 0 || a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    spec.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect()
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_file(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn stage_err(stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| e.in_stage(stage)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref()).map_err(stage_err("config"))?;
    if let Some(dir) = cli.out_dir {
        cfg.output_dir = dir;
    }
    let out_dir = cfg.output_dir.clone();
    let returns_default = out_dir.join(pipeline::RETURNS_FILE);

    match cli.command {
        Command::Ingest(a) => {
            if let Some(path) = a.input {
                let prev = cfg.input.take();
                let mut input = prev.unwrap_or(InputConfig {
                    path: path.clone(),
                    kind: InputKind::Prices,
                    date_col: "date".into(),
                    price_col: "price".into(),
                    date_format: None,
                    delimiter: ',',
                });
                input.path = path;
                cfg.input = Some(input);
                cfg.simulate = None;
            }
            if let Some(input) = cfg.input.as_mut() {
                if let Some(c) = a.date_col {
                    input.date_col = c;
                }
                if let Some(c) = a.price_col {
                    input.price_col = c;
                }
                if a.date_format.is_some() {
                    input.date_format = a.date_format;
                }
                if let Some(d) = a.delimiter {
                    input.delimiter = d;
                }
                if a.returns {
                    input.kind = InputKind::Returns;
                }
            }
            cfg.clip_k = a.clip_k.unwrap_or(cfg.clip_k);
            cfg.step = a.step.or(cfg.step);
            let out = a.out.unwrap_or(returns_default);
            let files = pipeline::stage_ingest(&cfg, &out).map_err(stage_err("ingest"))?;
            report(&files);
        }
        Command::Diagnose(a) => {
            let d = &mut cfg.diagnostics;
            if let Some(l) = a.lags {
                d.lags = parse_lags(&l).map_err(stage_err("diagnose"))?;
            }
            d.bins = a.bins.unwrap_or(d.bins);
            d.min_occupancy = a.min_occupancy.unwrap_or(d.min_occupancy);
            if a.window_sizes.is_some() {
                d.window_sizes = a.window_sizes;
            }
            let clip_k = a.clip_k.unwrap_or(cfg.clip_k);
            let returns = a.returns.unwrap_or(returns_default);
            let files = pipeline::stage_diagnose(&returns, &cfg.diagnostics, clip_k, &out_dir)
                .map_err(stage_err("diagnose"))?;
            report(&files);
        }
        Command::Km(a) => {
            let k = &mut cfg.km;
            k.bins = a.bins.unwrap_or(k.bins);
            k.min_count = a.min_count.unwrap_or(k.min_count);
            k.orders = a.orders.unwrap_or(k.orders.clone());
            k.diffusion_constant_term |= a.diffusion_constant_term;
            let clip_k = a.clip_k.unwrap_or(cfg.clip_k);
            let returns = a.returns.unwrap_or(returns_default);
            let files =
                pipeline::stage_km(&returns, &cfg.km, clip_k, &out_dir).map_err(stage_err("km"))?;
            report(&files);
        }
        Command::Rolling(a) => {
            let r = &mut cfg.rolling.rolling;
            r.window_length = a.window.unwrap_or(r.window_length);
            r.step = a.step.unwrap_or(r.step);
            if let Some(b) = a.bins {
                r.bin_counts = parse_bin_counts(&b).map_err(stage_err("rolling"))?;
            }
            r.r2_threshold = a.r2.unwrap_or(r.r2_threshold);
            r.sigma_mode = a.sigma.unwrap_or(r.sigma_mode);
            r.clip_k = a.clip_k.unwrap_or(r.clip_k);
            r.min_count = a.min_count.unwrap_or(r.min_count);
            r.diffusion_constant_term |= a.diffusion_constant_term;
            if let Some(w) = a.alt_windows {
                cfg.rolling.alt_windows = w;
            }
            cfg.rolling
                .rolling
                .validate()
                .map_err(stage_err("rolling"))?;
            let returns = a.returns.unwrap_or(returns_default);
            let files = pipeline::stage_rolling(&returns, &cfg.rolling, &out_dir)
                .map_err(stage_err("rolling"))?;
            report(&files);
        }
        Command::Breaks(a) => {
            let b = &mut cfg.breaks;
            b.n_bkps = a.n_bkps.unwrap_or(b.n_bkps);
            b.min_segment = a.min_segment.unwrap_or(b.min_segment);
            b.jump = a.jump.unwrap_or(b.jump);
            b.bin_months = a.bin_months.unwrap_or(b.bin_months);
            let track = a
                .track
                .unwrap_or_else(|| out_dir.join(pipeline::TRACK_FILE));
            let files = pipeline::stage_breaks(&track, &cfg.breaks, &out_dir)
                .map_err(stage_err("breaks"))?;
            report(&files);
        }
        Command::Simulate(a) => {
            simulate(&a, a.seed.unwrap_or(cfg.seed), cfg.clip_k).map_err(stage_err("simulate"))?;
            report(std::slice::from_ref(&a.out));
        }
        Command::Run(a) => {
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            let manifest = pipeline::run_full(&cfg)?;
            for stage in &manifest.stages {
                for f in &stage.outputs {
                    println!("{}\t{}", stage.name, out_dir.join(&f.path).display());
                }
            }
            println!(
                "manifest\t{}",
                out_dir.join(pipeline::MANIFEST_FILE).display()
            );
        }
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, seed: u64, clip_k: f64) -> Result<()> {
    let mut model = LangevinModel {
        drift: a.drift,
        diffusion: a.d2,
        dt: a.dt,
        x0: a.x0,
        domain: None,
    };
    if let Some((lo, hi)) = a.domain {
        model = model.with_domain(lo, hi);
    }
    let path = kmscope::euler_maruyama(&model, a.steps, seed)?;
    if a.prices {
        let dates = kmscope::ingest::synthetic_dates(path.values.len() + 1);
        let mut log_price = 0.0;
        let mut prices = vec![io::fmt_f64(1.0)];
        for x in &path.values {
            log_price += x;
            prices.push(io::fmt_f64(log_price.exp()));
        }
        io::write_table(
            &a.out,
            &["date", "price"],
            dates
                .iter()
                .zip(prices)
                .map(|(d, p)| vec![d.to_string(), p]),
        )
    } else {
        let series = kmscope::ReturnSeries::synthetic(path.values, a.dt)?;
        io::write_returns(&a.out, &series, "synthetic", clip_k)
    }
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
