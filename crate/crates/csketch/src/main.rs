use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Deserialize;
use std::path::PathBuf;

use csketch::decode::{decode_with_mode, DecodeConfig, DecodeMode};
use csketch::freq::{
    load_frequencies, sample_dirac_frequencies, sample_gauss_frequencies, save_frequencies,
    FREQ_FORMAT_VERSION,
};
use csketch::kernel::{separation_for_scale, Family, KernelParams};
use csketch::mixture::{load_hypothesis, save_hypothesis};
use csketch::risk::{clustering_risk, gmm_nll, Task};
use csketch::sketch::{load_sketch, save_sketch, sketch_stream, Sketch, SKETCH_FORMAT_VERSION};
use csketch::synth::{
    generate_synthetic, phase_csv, phase_diagram, phase_times_csv, Balance, ExperimentConfig,
};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (frequency-file v1, sketch-file v1)"
);

#[derive(Parser)]
#[command(name = "csketch", version = LONG_VERSION, about = "Compressive sketching, decoding, and verification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Dirac,
    Gauss,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Kmeans,
    Kmedians,
    Gmm,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Kmeans => Task::KMeans,
            TaskArg::Kmedians => Task::KMedians,
            TaskArg::Gmm => Task::Gmm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BalanceArg {
    Uniform,
    Random,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a frequency set and write it to a frequency file.
    Freq {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        s: f64,
        /// Separation scale; defaults to the critical value for --k.
        #[arg(long)]
        eps: Option<f64>,
        /// Component budget used to derive eps when --eps is absent.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: u64,
        /// CSV file holding the d x d lower Cholesky factor of Sigma
        /// (Gaussian family only; identity when omitted).
        #[arg(long)]
        sigma_chol: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sketch a CSV dataset against a frequency file.
    Sketch {
        #[arg(long)]
        freq: PathBuf,
        /// Headerless CSV, one sample per row, d comma-separated floats.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Process the input in chunks of this many rows, merging partial
        /// sketches (exercises the merge path; same result either way).
        #[arg(long)]
        chunk: Option<usize>,
    },
    /// Decode a sketch into a hypothesis.
    Decode {
        #[arg(long)]
        freq: PathBuf,
        #[arg(long)]
        sketch: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        radius: f64,
        /// Use base-distribution embeddings (mixture fitting) instead of
        /// raw feature atoms (clustering).
        #[arg(long)]
        gmm: bool,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        enforce_separation: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a hypothesis against a dataset.
    Eval {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        hypothesis: PathBuf,
        /// CSV file with the lower Cholesky factor for the GMM likelihood
        /// (identity when omitted).
        #[arg(long)]
        sigma_chol: Option<PathBuf>,
    },
    /// Run one of the numerical verifiers.
    Verify {
        #[arg(value_parser = ["rip", "moments", "separation", "pinsker"])]
        what: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with known ground truth.
    Gen {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        radius: f64,
        #[arg(long, value_enum, default_value = "uniform")]
        balance: BalanceArg,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the ground-truth hypothesis as JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Sweep a phase diagram over (k, d, m) and write it as CSV.
    Phase {
        #[arg(long)]
        config: PathBuf,
        /// Diagram CSV destination; defaults to the config's `out` key.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Wall-time sidecar (kept out of the main CSV so re-runs diff
        /// clean); defaults to the config's `times_out` key.
        #[arg(long)]
        times: Option<PathBuf>,
    },
}

fn read_csv_matrix(path: &PathBuf) -> anyhow::Result<Array2<f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .with_context(|| format!("line {}: bad float {tok:?}", lineno + 1))
            })
            .collect::<anyhow::Result<_>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                bail!("line {}: ragged row width", lineno + 1);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), d), flat)?)
}

fn write_csv_matrix(path: &PathBuf, data: &Array2<f64>) -> anyhow::Result<()> {
    let mut out = String::new();
    for row in data.rows() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_chol(path: &Option<PathBuf>, d: usize) -> anyhow::Result<Array2<f64>> {
    match path {
        None => Ok(Array2::eye(d)),
        Some(p) => {
            let m = read_csv_matrix(p)?;
            if m.nrows() != d || m.ncols() != d {
                bail!("{}: expected a {d}x{d} matrix", p.display());
            }
            Ok(m)
        }
    }
}

#[derive(Debug, Deserialize)]
struct VerifyRipConfig {
    family: String,
    d: usize,
    k: usize,
    s: f64,
    m: usize,
    r_over_eps: f64,
    trials: usize,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct VerifyMomentsConfig {
    family: String,
    d: usize,
    s: f64,
    eps: f64,
    q: Vec<u32>,
    samples: usize,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct VerifySeparationConfig {
    d: usize,
    s: f64,
    m: usize,
    r: f64,
    power: u32,
    eps_list: Vec<f64>,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct VerifyPinskerConfig {
    d: usize,
    s: f64,
    m: usize,
    trials: usize,
    shift: f64,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct VerifyConfig {
    rip: Option<VerifyRipConfig>,
    moments: Option<VerifyMomentsConfig>,
    separation: Option<VerifySeparationConfig>,
    pinsker: Option<VerifyPinskerConfig>,
}

fn parse_family(name: &str) -> anyhow::Result<Family> {
    match name {
        "dirac" => Ok(Family::DiracWeighted),
        "gauss" | "gaussian" => Ok(Family::GaussianPlain),
        other => bail!("unknown family {other:?}"),
    }
}

fn run_verify(what: &str, config: &PathBuf, out: &PathBuf) -> anyhow::Result<()> {
    let text =
        std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: VerifyConfig = toml::from_str(&text)?;
    let json = match what {
        "rip" => {
            let c = cfg.rip.context("config has no [rip] section")?;
            let family = parse_family(&c.family)?;
            let eps = separation_for_scale(family, c.s, c.k);
            let fs = match family {
                Family::DiracWeighted => sample_dirac_frequencies(c.d, c.m, c.s, eps, c.seed)?,
                Family::GaussianPlain => {
                    let p = KernelParams::gaussian(c.d, c.s, eps, Array2::eye(c.d))?;
                    sample_gauss_frequencies(&p, c.m, c.seed)?
                }
            };
            let report =
                csketch::checks::empirical_rip(&fs, c.k, c.r_over_eps * eps, c.trials, c.seed)?;
            serde_json::to_string_pretty(&report)?
        }
        "moments" => {
            let c = cfg.moments.context("config has no [moments] section")?;
            let family = parse_family(&c.family)?;
            let p = match family {
                Family::DiracWeighted => KernelParams::dirac(c.d, c.s, c.eps)?,
                Family::GaussianPlain => KernelParams::gaussian(c.d, c.s, c.eps, Array2::eye(c.d))?,
            };
            let reports: Vec<_> =
                c.q.iter()
                    .map(|&q| csketch::checks::moment_bound_check(&p, q, c.samples, c.seed))
                    .collect::<csketch::Result<_>>()?;
            serde_json::to_string_pretty(&reports)?
        }
        "separation" => {
            let c = cfg
                .separation
                .context("config has no [separation] section")?;
            let eps_min = c.eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
            let fs = sample_dirac_frequencies(c.d, c.m, c.s, eps_min, c.seed)?;
            let rows = csketch::checks::separation_witness(&c.eps_list, c.r, c.power, &fs)?;
            serde_json::to_string_pretty(&rows)?
        }
        "pinsker" => {
            let c = cfg.pinsker.context("config has no [pinsker] section")?;
            let p = KernelParams::gaussian(c.d, c.s, 1.0, Array2::eye(c.d))?;
            let mut theta_prime = vec![0.0; c.d];
            theta_prime[0] = c.shift;
            let report = csketch::checks::pinsker_check(
                &p,
                &vec![0.0; c.d],
                &theta_prime,
                c.m,
                c.trials,
                c.seed,
            )?;
            serde_json::to_string_pretty(&report)?
        }
        other => bail!("unknown verifier {other:?}"),
    };
    std::fs::write(out, json)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Freq {
            family,
            d,
            m,
            s,
            eps,
            k,
            seed,
            sigma_chol,
            out,
        } => {
            let fam = match family {
                FamilyArg::Dirac => Family::DiracWeighted,
                FamilyArg::Gauss => Family::GaussianPlain,
            };
            let eps = match (eps, k) {
                (Some(e), _) => e,
                (None, Some(k)) => separation_for_scale(fam, s, k),
                (None, None) => bail!("provide --eps or --k to derive it"),
            };
            let fs = match fam {
                Family::DiracWeighted => {
                    if sigma_chol.is_some() {
                        bail!("--sigma-chol only applies to the Gaussian family");
                    }
                    sample_dirac_frequencies(d, m, s, eps, seed)?
                }
                Family::GaussianPlain => {
                    let chol = read_chol(&sigma_chol, d)?;
                    let p = KernelParams::gaussian(d, s, eps, chol)?;
                    sample_gauss_frequencies(&p, m, seed)?
                }
            };
            save_frequencies(&fs, &out)?;
            eprintln!(
                "wrote {} ({} frequencies, d = {d}, format v{FREQ_FORMAT_VERSION})",
                out.display(),
                fs.m()
            );
        }
        Cmd::Sketch {
            freq,
            input,
            out,
            chunk,
        } => {
            let fs = load_frequencies(&freq)?;
            let data = read_csv_matrix(&input)?;
            if data.ncols() != fs.d() {
                bail!(
                    "data has {} columns but the frequency set expects d = {}",
                    data.ncols(),
                    fs.d()
                );
            }
            let rows: Vec<&[f64]> = data
                .rows()
                .into_iter()
                .map(|r| r.to_slice().unwrap())
                .collect();
            let sk = match chunk {
                None => sketch_stream(&fs, rows.iter().copied())?,
                Some(size) => {
                    if size == 0 {
                        bail!("--chunk must be positive");
                    }
                    let mut acc: Option<Sketch> = None;
                    for block in rows.chunks(size) {
                        let part = sketch_stream(&fs, block.iter().copied())?;
                        acc = Some(match acc {
                            None => part,
                            Some(prev) => prev.merge(&part)?,
                        });
                    }
                    acc.context("empty input")?
                }
            };
            save_sketch(&sk, &out)?;
            eprintln!(
                "wrote {} (n = {}, m = {}, format v{SKETCH_FORMAT_VERSION})",
                out.display(),
                sk.n(),
                sk.m()
            );
        }
        Cmd::Decode {
            freq,
            sketch,
            k,
            eps,
            radius,
            gmm,
            seed,
            restarts,
            enforce_separation,
            out,
        } => {
            let fs = load_frequencies(&freq)?;
            let sk = load_sketch(&sketch)?;
            if !sk.matches(&fs) {
                bail!("sketch was not built from this frequency set (hash mismatch)");
            }
            let y = sk.finalize()?;
            let mut cfg = DecodeConfig::new(k, eps, radius, seed);
            cfg.enforce_separation = enforce_separation;
            if let Some(r) = restarts {
                cfg.restarts = r;
            }
            let mode = if gmm {
                DecodeMode::Gmm
            } else {
                DecodeMode::Clustering
            };
            let res = decode_with_mode(&fs, &y, &cfg, mode)?;
            save_hypothesis(&out, &res.hypothesis, fs.params().family, eps, radius)?;
            eprintln!(
                "wrote {} (residual {:.3e}, converged: {})",
                out.display(),
                res.residual_norm,
                res.converged
            );
            if !res.converged {
                std::process::exit(2);
            }
        }
        Cmd::Eval {
            task,
            data,
            hypothesis,
            sigma_chol,
        } => {
            let data = read_csv_matrix(&data)?;
            let (h, _family, _eps, _r) = load_hypothesis(&hypothesis)?;
            let report = match Task::from(task) {
                Task::KMeans => clustering_risk(data.view(), &h, 2)?,
                Task::KMedians => clustering_risk(data.view(), &h, 1)?,
                Task::Gmm => {
                    let chol = read_chol(&sigma_chol, h.d())?;
                    gmm_nll(data.view(), &h, chol.view())?
                }
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Verify { what, config, out } => {
            run_verify(&what, &config, &out)?;
        }
        Cmd::Gen {
            task,
            k,
            d,
            n,
            eps,
            radius,
            balance,
            noise,
            seed,
            out,
            truth,
        } => {
            let task = Task::from(task);
            let balance = match balance {
                BalanceArg::Uniform => Balance::Uniform,
                BalanceArg::Random => Balance::Random,
            };
            let ds = generate_synthetic(task, k, d, n, eps, radius, balance, noise, seed)?;
            write_csv_matrix(&out, &ds.data)?;
            if let Some(path) = truth {
                let family = match task {
                    Task::Gmm => Family::GaussianPlain,
                    _ => Family::DiracWeighted,
                };
                save_hypothesis(&path, &ds.truth, family, eps, radius)?;
            }
            eprintln!("wrote {} ({n} samples)", out.display());
        }
        Cmd::Phase { config, out, times } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let cfg = ExperimentConfig::from_toml(&text)?;
            let out = out
                .or_else(|| cfg.out.as_ref().map(PathBuf::from))
                .context("no output path: pass --out or set `out` in the config")?;
            let times = times.or_else(|| cfg.times_out.as_ref().map(PathBuf::from));
            let diagram = phase_diagram(&cfg)?;
            std::fs::write(&out, phase_csv(&diagram, &cfg))?;
            if let Some(path) = times {
                std::fs::write(&path, phase_times_csv(&diagram))?;
            }
            eprintln!("wrote {} ({} cells)", out.display(), diagram.rows.len());
        }
    }
    Ok(())
}
