use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use locstat::espec::{chi2_tail_study, clt_variance_check, TailStudySpec};
use locstat::estimator::{fit_monotone_tvar, BoundsMode, FitConfig};
use locstat::harness::{
    default_candidates, default_rate_model, equivalence_decay, rate_study, write_csv, write_json,
    RateStudySpec,
};
use locstat::likelihood::{conditional_likelihood, whittle_contrast, SpectrumField};
use locstat::process::{simulate_tvar, Curve, ModelSpec, TimeSeries, TvARModel};
use locstat::spectral::{preperiodogram, FrequencyGrid, TestFunction};
use locstat::{Error, Result};

#[derive(Parser)]
#[command(name = "locstat", version, about = "Locally stationary spectral estimation experiments")]
struct Cli {
    /// Master seed; overrides any seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// JSON config for the subcommand; replaces its flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a tvAR path (config: model JSON).
    Simulate {
        #[arg(long, default_value_t = 1024)]
        n: usize,
    },
    /// Evaluate the pre-periodogram on a frequency grid.
    Preperiodogram {
        #[arg(long)]
        input: PathBuf,
        /// Grid size (even).
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
    /// Whittle and conditional contrasts of a series under a model (config: model JSON).
    LikelihoodEval {
        #[arg(long)]
        input: PathBuf,
    },
    /// Fit a tvAR model with monotone variance (config: fit JSON).
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Log-log error rates of the monotone fit (config: rate study JSON).
    RateStudy {
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        reps: usize,
    },
    /// Tail probabilities of weighted chi-square sums (config: tail study JSON).
    TailStudy {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Design::Flat)]
        design: Design,
        #[arg(long, default_value_t = 100_000)]
        reps: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,2.5,3,3.5,4,4.5,5")]
        eta: Vec<f64>,
    },
    /// Limiting versus Monte Carlo variance of the empirical spectral process.
    CltStudy {
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 5000)]
        reps: usize,
    },
    /// Gap between the Whittle and conditional contrasts as n grows (config: model JSON).
    Equivalence {
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        reps: usize,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long)]
    k_n: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum, default_value_t = Bounds::Clip)]
    bounds: Bounds,
}

#[derive(Clone, Copy, ValueEnum)]
enum Design {
    Flat,
    Ramp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bounds {
    Clip,
    ConstrainedSlope,
    Unbounded,
}

impl From<Bounds> for BoundsMode {
    fn from(b: Bounds) -> Self {
        match b {
            Bounds::Clip => BoundsMode::Clip,
            Bounds::ConstrainedSlope => BoundsMode::ConstrainedSlope,
            Bounds::Unbounded => BoundsMode::Unbounded,
        }
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    threads: Option<usize>,
    config_sha256: String,
    config: serde_json::Value,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct PrePeriodogramRow {
    t: usize,
    lambda: f64,
    value: f64,
}

#[derive(Serialize)]
struct Contrasts {
    whittle: f64,
    /// Only for constant AR coefficients.
    conditional: Option<f64>,
}

const DEFAULT_SEED: u64 = 1;

struct Ctx {
    out: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn load<T: DeserializeOwned>(&self) -> Result<Option<T>> {
        self.config.as_ref().map(|p| read_json_file(p)).transpose()
    }

    fn model(&self) -> Result<ModelSpec> {
        Ok(self.load()?.unwrap_or_else(default_rate_model))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `<command>.meta.json` next to the outputs.
    fn finish<C: Serialize>(&self, command: &str, config: &C, outputs: &[&str]) -> Result<()> {
        let config = serde_json::to_value(config)?;
        let hash = Sha256::digest(serde_json::to_vec(&config)?);
        let meta = Metadata {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed(),
            threads: self.threads,
            config_sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
            config,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        };
        write_json(&meta, create(&self.path(&format!("{command}.meta.json")))?)
    }
}

fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(with_path(path))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn read_series(path: &Path) -> Result<TimeSeries> {
    TimeSeries::read_csv(BufReader::new(File::open(path).map_err(with_path(path))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(with_path(path))?))
}

fn run(cli: Cli) -> Result<()> {
    fs::create_dir_all(&cli.out)?;
    let ctx = Ctx {
        out: cli.out,
        config: cli.config,
        seed: cli.seed,
        threads: cli.threads,
    };
    match cli.command {
        Command::Simulate { n } => {
            let spec = ctx.model()?;
            let x = simulate_tvar(&spec.to_model()?, n, ctx.seed(), spec.burn_in)?;
            x.write_csv(create(&ctx.path("simulate.csv"))?)?;
            ctx.finish("simulate", &spec, &["simulate.csv"])
        }
        Command::Preperiodogram { input, grid } => {
            let x = read_series(&input)?;
            let g = FrequencyGrid::new(grid)?;
            let pp = preperiodogram(x.values())?;
            let mut rows = Vec::with_capacity(x.len() * grid);
            for t in 1..=x.len() {
                for (lambda, value) in g.nodes().zip(pp.eval_grid(t, &g)) {
                    rows.push(PrePeriodogramRow { t, lambda, value });
                }
            }
            write_csv(&rows, create(&ctx.path("preperiodogram.csv"))?)?;
            let cfg = serde_json::json!({ "input": input, "grid": grid });
            ctx.finish("preperiodogram", &cfg, &["preperiodogram.csv"])
        }
        Command::LikelihoodEval { input } => {
            let spec = ctx.model()?;
            let model = spec.to_model()?;
            let x = read_series(&input)?;
            let grid = FrequencyGrid::default();
            let whittle = whittle_contrast(
                &preperiodogram(x.values())?,
                &SpectrumField::from_model(&model),
                &grid,
            )?;
            let conditional = if model.alpha().iter().all(Curve::is_constant) {
                let alpha = model.coefficients_at(0.5);
                Some(conditional_likelihood(x.values(), &alpha, model.sigma2())?)
            } else {
                None
            };
            let out = Contrasts {
                whittle,
                conditional,
            };
            write_json(&out, create(&ctx.path("likelihood.json"))?)?;
            ctx.finish("likelihood-eval", &spec, &["likelihood.json"])
        }
        Command::Fit { input, fit } => {
            let cfg = match ctx.load::<FitConfig>()? {
                Some(c) => c,
                None => FitConfig {
                    k_n: fit.k_n,
                    eps: fit.eps,
                    bounds: fit.bounds.into(),
                    ..FitConfig::new(fit.p)
                },
            };
            let x = read_series(&input)?;
            let result = fit_monotone_tvar(x.values(), &cfg)?;
            write_json(&result, create(&ctx.path("fit.json"))?)?;
            ctx.finish("fit", &cfg, &["fit.json"])
        }
        Command::RateStudy { n_list, reps } => {
            let mut spec = ctx
                .load::<RateStudySpec>()?
                .unwrap_or_else(|| RateStudySpec::default_with(n_list, reps, DEFAULT_SEED));
            if let Some(s) = ctx.seed {
                spec.seed = s;
            }
            let report = rate_study(&spec)?;
            write_csv(&report.rows, create(&ctx.path("rate_study.csv"))?)?;
            write_json(&report, create(&ctx.path("rate_study.json"))?)?;
            ctx.finish("rate-study", &spec, &["rate_study.csv", "rate_study.json"])
        }
        Command::TailStudy {
            n,
            design,
            reps,
            eta,
        } => {
            let mut spec = match ctx.load::<TailStudySpec>()? {
                Some(s) => s,
                None => match design {
                    Design::Flat => TailStudySpec::flat(n, reps, eta, DEFAULT_SEED),
                    Design::Ramp => TailStudySpec::ramp(n, reps, eta, DEFAULT_SEED),
                },
            };
            if let Some(s) = ctx.seed {
                spec.seed = s;
            }
            let report = chi2_tail_study(&spec)?;
            write_csv(&report.rows, create(&ctx.path("tail_study.csv"))?)?;
            ctx.finish("tail-study", &spec, &["tail_study.csv"])
        }
        Command::CltStudy { n, reps } => {
            let model = TvARModel::white_noise(1.0)?;
            let ar = TestFunction::ar_inverse(vec![Curve::constant(0.5)], Curve::constant(1.0));
            let rows = vec![
                clt_variance_check("constant", &model, &TestFunction::constant(1.0), n, reps, ctx.seed())?,
                clt_variance_check("ar1_inverse", &model, &ar, n, reps, ctx.seed() + 1)?,
            ];
            write_csv(&rows, create(&ctx.path("clt_study.csv"))?)?;
            let cfg = serde_json::json!({ "n": n, "replications": reps });
            ctx.finish("clt-study", &cfg, &["clt_study.csv"])
        }
        Command::Equivalence { n_list, reps } => {
            let spec = ctx.model()?;
            let model = spec.to_model()?;
            let cands = default_candidates(&model)?;
            let report = equivalence_decay(&model, &cands, &n_list, reps, ctx.seed())?;
            write_csv(&report.rows, create(&ctx.path("equivalence.csv"))?)?;
            let cfg = serde_json::json!({ "model": spec, "n_list": n_list, "replications": reps });
            ctx.finish("equivalence", &cfg, &["equivalence.csv"])
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {}", Error::Resource(e.to_string()));
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
