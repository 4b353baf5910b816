//! Synthetic data generation, classical baselines, end-to-end pipeline
//! cells, and phase-transition sweeps.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::decode::{decode_with_mode, DecodeConfig, DecodeMode};
use crate::error::{Error, Result};
use crate::freq::{sample_dirac_frequencies, sample_gauss_frequencies};
use crate::hungarian::matched_max_distance;
use crate::kernel::KernelParams;
use crate::linalg;
use crate::mixture::{separation_check, Hypothesis, Metric};
use crate::risk::{clustering_risk, gmm_nll, Task};
use crate::sketch::sketch_stream;

/// How component weights are drawn for synthetic mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Balance {
    /// Equal sampling probability per component.
    Uniform,
    /// Weights drawn uniformly from the simplex.
    Random,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-cell seed derivation.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}

fn uniform_in_metric_ball(metric: &Metric, d: usize, r: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = linalg::norm2(&z).max(1e-12);
    let radius = r * rng.random::<f64>().powf(1.0 / d as f64);
    match metric {
        Metric::Euclidean => z.iter().map(|x| x * radius / n).collect(),
        Metric::Mahalanobis(l) => {
            let mut out = vec![0.0; d];
            for i in 0..d {
                for j in 0..=i {
                    out[i] += l[[i, j]] * z[j];
                }
            }
            out.iter().map(|x| x * radius / n).collect()
        }
    }
}

/// Draw a hypothesis with k centroids in the radius-r metric ball, pairwise
/// 2eps-separated. Rejection sampling with a bounded attempt budget; if
/// `repair` is set the last draw is fixed up with the greedy separated
/// cover instead of failing.
pub fn random_separated_hypothesis(
    p: &KernelParams,
    k: usize,
    r: f64,
    repair: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Hypothesis> {
    let metric = Metric::from_params(p);
    let d = p.d;
    let raw_weights: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().ln()).collect();
    let total: f64 = raw_weights.iter().sum();
    let alphas: Vec<f64> = raw_weights.iter().map(|w| w / total).collect();
    let mut last: Option<Hypothesis> = None;
    for _ in 0..1000 {
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| uniform_in_metric_ball(&metric, d, r, rng))
            .collect();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let h = Hypothesis::new(
            Array2::from_shape_vec((k, d), flat).expect("sampled shape"),
            Some(alphas.clone()),
        )?;
        if separation_check(&h, p.eps, r, &metric).ok {
            return Ok(h);
        }
        last = Some(h);
    }
    if !repair {
        return Err(Error::invalid(format!(
            "could not place {k} centroids 2x{} apart in the radius-{r} ball",
            p.eps
        )));
    }
    // deterministic repair: whiten if needed, cover at 2 eps, un-whiten
    let h = last.expect("at least one attempt");
    let covered = match &metric {
        Metric::Euclidean => crate::risk::separated_cover(&h, 2.0 * p.eps, r)?.cover,
        Metric::Mahalanobis(l) => {
            let mut white = Array2::zeros((k, d));
            for i in 0..k {
                let z = linalg::solve_lower(l.view(), h.centroid(i));
                for (t, &v) in z.iter().enumerate() {
                    white[[i, t]] = v;
                }
            }
            let res = crate::risk::separated_cover(&Hypothesis::new(white, None)?, 2.0 * p.eps, r)?;
            let mut unwhite = Array2::zeros((k, d));
            for i in 0..k {
                let z = res.cover.centroid(i);
                for row in 0..d {
                    let mut acc = 0.0;
                    for col in 0..=row {
                        acc += l[[row, col]] * z[col];
                    }
                    unwhite[[i, row]] = acc;
                }
            }
            Hypothesis::new(unwhite, None)?
        }
    };
    Hypothesis::new(covered.centroids().to_owned(), Some(alphas))
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub data: Array2<f64>,
    pub truth: Hypothesis,
}

/// Generate a synthetic dataset with a 2eps-separated ground truth inside
/// the radius-r ball. Clustering data are centroids plus optional isotropic
/// noise; GMM data are exact draws from the fixed-covariance mixture.
#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic(
    task: Task,
    k: usize,
    d: usize,
    n: usize,
    eps: f64,
    r: f64,
    balance: Balance,
    noise: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    generate_synthetic_with_params(
        &task_params(task, d, eps)?,
        task,
        k,
        n,
        r,
        balance,
        noise,
        seed,
    )
}

fn task_params(task: Task, d: usize, eps: f64) -> Result<KernelParams> {
    // scale is irrelevant for geometry; any positive value works here
    match task {
        Task::KMeans | Task::KMedians => KernelParams::dirac(d, 1.0, eps),
        Task::Gmm => KernelParams::gaussian(d, 1.0, eps, Array2::eye(d)),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic_with_params(
    p: &KernelParams,
    task: Task,
    k: usize,
    n: usize,
    r: f64,
    balance: Balance,
    noise: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if noise < 0.0 {
        return Err(Error::invalid("noise must be nonnegative"));
    }
    let d = p.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let metric = Metric::from_params(p);
    // place the ground truth by pure rejection; infeasible packings error out
    let mut truth: Option<Hypothesis> = None;
    for _ in 0..1000 {
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| uniform_in_metric_ball(&metric, d, r, &mut rng))
            .collect();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let h = Hypothesis::new(Array2::from_shape_vec((k, d), flat).unwrap(), None)?;
        if separation_check(&h, p.eps, r, &metric).ok {
            truth = Some(h);
            break;
        }
    }
    let base = truth.ok_or_else(|| {
        Error::invalid(format!(
            "could not pack {k} centers 2x{} apart in the radius-{r} ball after 1000 attempts",
            p.eps
        ))
    })?;
    let alphas: Vec<f64> = match balance {
        Balance::Uniform => vec![1.0 / k as f64; k],
        Balance::Random => {
            let raw: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().ln()).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|w| w / total).collect()
        }
    };
    let truth = Hypothesis::new(base.centroids().to_owned(), Some(alphas))?;

    let chol = p.sigma_chol();
    let mut data = Array2::zeros((n, d));
    for i in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = truth.k() - 1;
        for (l, &a) in truth.alphas().iter().enumerate() {
            acc += a;
            if u <= acc {
                pick = l;
                break;
            }
        }
        let c = truth.centroid(pick);
        match task {
            Task::KMeans | Task::KMedians => {
                for t in 0..d {
                    let jitter: f64 = if noise > 0.0 {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        noise * g
                    } else {
                        0.0
                    };
                    data[[i, t]] = c[t] + jitter;
                }
            }
            Task::Gmm => {
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                for row in 0..d {
                    let mut acc = c[row];
                    for col in 0..=row {
                        acc += chol[[row, col]] * z[col];
                    }
                    data[[i, row]] = acc;
                }
            }
        }
    }
    Ok(SyntheticDataset { data, truth })
}

/// Lloyd's k-means with random-point initialization and multiple restarts;
/// returns the best hypothesis by k-means risk.
pub fn lloyd(
    data: ArrayView2<f64>,
    k: usize,
    restarts: usize,
    iters: usize,
    seed: u64,
) -> Result<Hypothesis> {
    let n = data.nrows();
    let d = data.ncols();
    if n == 0 || k == 0 {
        return Err(Error::invalid("lloyd needs data and k >= 1"));
    }
    let mut best: Option<(f64, Hypothesis)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for restart in 0..restarts.max(1) {
        rng.set_stream(restart as u64);
        let mut centers: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let i = rng.random_range(0..n);
                data.row(i).to_vec()
            })
            .collect();
        let mut assign = vec![0usize; n];
        for _ in 0..iters {
            let mut changed = false;
            for i in 0..n {
                let x = data.row(i);
                let mut bi = 0;
                let mut bd = f64::INFINITY;
                for (l, c) in centers.iter().enumerate() {
                    let dist: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    if dist < bd {
                        bd = dist;
                        bi = l;
                    }
                }
                if assign[i] != bi {
                    assign[i] = bi;
                    changed = true;
                }
            }
            let mut sums = vec![vec![0.0; d]; k];
            let mut counts = vec![0usize; k];
            for i in 0..n {
                counts[assign[i]] += 1;
                for t in 0..d {
                    sums[assign[i]][t] += data[[i, t]];
                }
            }
            for l in 0..k {
                if counts[l] == 0 {
                    // restart an empty cluster at the point farthest from
                    // its current center
                    let far = (0..n)
                        .max_by(|&a, &b| {
                            let da: f64 = data
                                .row(a)
                                .iter()
                                .zip(&centers[assign[a]])
                                .map(|(x, c)| (x - c) * (x - c))
                                .sum();
                            let db: f64 = data
                                .row(b)
                                .iter()
                                .zip(&centers[assign[b]])
                                .map(|(x, c)| (x - c) * (x - c))
                                .sum();
                            da.partial_cmp(&db).unwrap()
                        })
                        .unwrap();
                    centers[l] = data.row(far).to_vec();
                    changed = true;
                } else {
                    for t in 0..d {
                        centers[l][t] = sums[l][t] / counts[l] as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let flat: Vec<f64> = centers.iter().flatten().copied().collect();
        let weights: Vec<f64> = {
            let mut counts = vec![0.0; k];
            for &a in &assign {
                counts[a] += 1.0;
            }
            counts.iter().map(|c| c / n as f64).collect()
        };
        let h = Hypothesis::new(Array2::from_shape_vec((k, d), flat).unwrap(), Some(weights))?;
        let risk = clustering_risk(data, &h, 2)?.risk;
        if best.as_ref().map_or(true, |(r, _)| risk < *r) {
            best = Some((risk, h));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Expectation-maximization for a mixture of Gaussians with fixed, known
/// covariance: only means and weights are updated. Returns the best
/// hypothesis by likelihood over the restarts.
pub fn em_fixed_cov(
    data: ArrayView2<f64>,
    k: usize,
    chol: ArrayView2<f64>,
    restarts: usize,
    iters: usize,
    seed: u64,
) -> Result<Hypothesis> {
    let n = data.nrows();
    let d = data.ncols();
    if n == 0 || k == 0 {
        return Err(Error::invalid("EM needs data and k >= 1"));
    }
    let logdet: f64 = (0..d).map(|i| chol[[i, i]].ln()).sum::<f64>() * 2.0;
    let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet);
    let log_density = |x: &[f64], c: &[f64]| {
        let diff: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
        let z = linalg::solve_lower(chol, &diff);
        log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Hypothesis)> = None;
    for restart in 0..restarts.max(1) {
        rng.set_stream(restart as u64);
        let mut means: Vec<Vec<f64>> = (0..k)
            .map(|_| data.row(rng.random_range(0..n)).to_vec())
            .collect();
        let mut weights = vec![1.0 / k as f64; k];
        let mut resp = vec![vec![0.0; k]; n];
        for _ in 0..iters {
            // E-step
            for i in 0..n {
                let x = data.row(i);
                let x = x.to_slice().unwrap();
                let mut logs: Vec<f64> = (0..k)
                    .map(|l| {
                        if weights[l] > 0.0 {
                            weights[l].ln() + log_density(x, &means[l])
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in logs.iter_mut() {
                    *v = (*v - peak).exp();
                    total += *v;
                }
                for (l, v) in logs.iter().enumerate() {
                    resp[i][l] = v / total;
                }
            }
            // M-step
            for l in 0..k {
                let mass: f64 = (0..n).map(|i| resp[i][l]).sum();
                weights[l] = mass / n as f64;
                if mass > 1e-12 {
                    for t in 0..d {
                        means[l][t] = (0..n).map(|i| resp[i][l] * data[[i, t]]).sum::<f64>() / mass;
                    }
                } else {
                    means[l] = data.row(rng.random_range(0..n)).to_vec();
                    weights[l] = 1e-6;
                }
            }
            let total: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w /= total;
            }
        }
        let flat: Vec<f64> = means.iter().flatten().copied().collect();
        let h = Hypothesis::new(
            Array2::from_shape_vec((k, d), flat).unwrap(),
            Some(weights.clone()),
        )?;
        let nll = gmm_nll(data, &h, chol)?.risk;
        if best.as_ref().map_or(true, |(r, _)| nll < *r) {
            best = Some((nll, h));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// One experiment cell: geometry, sizes, and seeds for a single
/// sketch-decode-evaluate run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineCell {
    pub task: Task,
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub eps: f64,
    pub r: f64,
    pub s: f64,
    pub noise: f64,
    /// Success tolerance as a fraction of eps.
    pub tolerance: f64,
    pub seed: u64,
    /// Restarts for the baseline (Lloyd or EM).
    pub baseline_restarts: usize,
    pub decode_restarts: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTimes {
    pub generate_ms: f64,
    pub frequencies_ms: f64,
    pub sketch_ms: f64,
    pub decode_ms: f64,
    pub evaluate_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub success: bool,
    /// Hungarian-matched maximum centroid error, in the task metric.
    pub centroid_error: f64,
    pub decoded_risk: f64,
    pub baseline_risk: f64,
    pub times: StageTimes,
}

/// Frequencies -> sketch -> decode -> evaluate on one synthetic cell, with
/// the classical baseline fitted to the same data.
pub fn run_pipeline(cell: &PipelineCell) -> Result<PipelineOutcome> {
    let t0 = Instant::now();
    let params = match cell.task {
        Task::KMeans | Task::KMedians => KernelParams::dirac(cell.d, cell.s, cell.eps)?,
        Task::Gmm => KernelParams::gaussian(cell.d, cell.s, cell.eps, Array2::eye(cell.d))?,
    };
    let dataset = generate_synthetic_with_params(
        &params,
        cell.task,
        cell.k,
        cell.n,
        cell.r,
        Balance::Uniform,
        cell.noise,
        derive_seed(cell.seed, 1),
    )?;
    let generate_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let fs = match cell.task {
        Task::KMeans | Task::KMedians => {
            sample_dirac_frequencies(cell.d, cell.m, cell.s, cell.eps, derive_seed(cell.seed, 2))?
        }
        Task::Gmm => sample_gauss_frequencies(&params, cell.m, derive_seed(cell.seed, 2))?,
    };
    let frequencies_ms = t1.elapsed().as_secs_f64() * 1e3;

    let t2 = Instant::now();
    let rows: Vec<&[f64]> = dataset
        .data
        .rows()
        .into_iter()
        .map(|r| r.to_slice().unwrap())
        .collect();
    let sk = sketch_stream(&fs, rows.iter().copied())?;
    let y = sk.finalize()?;
    let sketch_ms = t2.elapsed().as_secs_f64() * 1e3;

    let t3 = Instant::now();
    let mut cfg = DecodeConfig::new(cell.k, cell.eps, cell.r, derive_seed(cell.seed, 3));
    cfg.restarts = cell.decode_restarts;
    let mode = match cell.task {
        Task::Gmm => DecodeMode::Gmm,
        _ => DecodeMode::Clustering,
    };
    let decoded = decode_with_mode(&fs, &y, &cfg, mode)?;
    let decode_ms = t3.elapsed().as_secs_f64() * 1e3;

    let t4 = Instant::now();
    let metric = Metric::from_params(&params);
    let cost: Vec<Vec<f64>> = (0..cell.k)
        .map(|i| {
            (0..cell.k)
                .map(|j| metric.distance(dataset.truth.centroid(i), decoded.hypothesis.centroid(j)))
                .collect()
        })
        .collect();
    let centroid_error = matched_max_distance(&cost);
    let success = centroid_error <= cell.tolerance * cell.eps;

    let (decoded_risk, baseline_risk) = match cell.task {
        Task::KMeans | Task::KMedians => {
            let p = if cell.task == Task::KMedians { 1 } else { 2 };
            let baseline = lloyd(
                dataset.data.view(),
                cell.k,
                cell.baseline_restarts,
                100,
                derive_seed(cell.seed, 4),
            )?;
            (
                clustering_risk(dataset.data.view(), &decoded.hypothesis, p)?.risk,
                clustering_risk(dataset.data.view(), &baseline, p)?.risk,
            )
        }
        Task::Gmm => {
            let baseline = em_fixed_cov(
                dataset.data.view(),
                cell.k,
                params.sigma_chol(),
                cell.baseline_restarts,
                60,
                derive_seed(cell.seed, 4),
            )?;
            (
                gmm_nll(
                    dataset.data.view(),
                    &decoded.hypothesis,
                    params.sigma_chol(),
                )?
                .risk,
                gmm_nll(dataset.data.view(), &baseline, params.sigma_chol())?.risk,
            )
        }
    };
    let evaluate_ms = t4.elapsed().as_secs_f64() * 1e3;

    Ok(PipelineOutcome {
        success,
        centroid_error,
        decoded_risk,
        baseline_risk,
        times: StageTimes {
            generate_ms,
            frequencies_ms,
            sketch_ms,
            decode_ms,
            evaluate_ms,
        },
    })
}

/// Scale policy for the frequency distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalePolicy {
    /// Explicit scale value.
    Fixed(f64),
    /// s^2 = 2.
    S2Two,
    /// s^2 = d.
    S2Dim,
    /// s^2 = d / log(e k).
    S2DimOverLogK,
}

impl ScalePolicy {
    pub fn scale(&self, k: usize, d: usize) -> f64 {
        match self {
            ScalePolicy::Fixed(s) => *s,
            ScalePolicy::S2Two => 2f64.sqrt(),
            ScalePolicy::S2Dim => (d as f64).sqrt(),
            ScalePolicy::S2DimOverLogK => (d as f64 / (1.0 + (k as f64).ln())).sqrt(),
        }
    }
}

/// Full sweep configuration, readable from a TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub k_grid: Vec<usize>,
    pub d_grid: Vec<usize>,
    /// Sketch sizes as multiples of k*d.
    pub m_multipliers: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    pub eps: f64,
    pub r: f64,
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub s_policy: Option<String>,
    #[serde(default)]
    pub noise: f64,
    /// Success tolerance as a fraction of eps, in (0, 1].
    pub tolerance: f64,
    pub seed: u64,
    #[serde(default = "default_baseline_restarts")]
    pub baseline_restarts: usize,
    #[serde(default = "default_decode_restarts")]
    pub decode_restarts: usize,
    /// Output path for the diagram CSV (a CLI flag overrides it).
    #[serde(default)]
    pub out: Option<String>,
    /// Output path for the wall-time sidecar.
    #[serde(default)]
    pub times_out: Option<String>,
}

fn default_baseline_restarts() -> usize {
    20
}

fn default_decode_restarts() -> usize {
    20
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_grid.is_empty() || self.d_grid.is_empty() || self.m_multipliers.is_empty() {
            return Err(Error::invalid("grids must be non-empty"));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1.0) {
            return Err(Error::invalid("tolerance must lie in (0, 1]"));
        }
        if self.s.is_none() && self.s_policy.is_none() {
            return Err(Error::invalid("either s or s_policy must be given"));
        }
        Ok(())
    }

    pub fn scale_for(&self, k: usize, d: usize) -> Result<f64> {
        if let Some(s) = self.s {
            return Ok(s);
        }
        match self.s_policy.as_deref() {
            Some("s2=2") => Ok(ScalePolicy::S2Two.scale(k, d)),
            Some("s2=d") => Ok(ScalePolicy::S2Dim.scale(k, d)),
            Some("s2=d/log(ek)") => Ok(ScalePolicy::S2DimOverLogK.scale(k, d)),
            Some(other) => Err(Error::invalid(format!("unknown scale policy {other:?}"))),
            None => unreachable!("validated"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseRow {
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub kd: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseDiagram {
    pub rows: Vec<PhaseRow>,
    pub wall_times_ms: Vec<f64>,
}

/// Sweep the full (k, d, m) grid; deterministic given the config seed.
pub fn phase_diagram(cfg: &ExperimentConfig) -> Result<PhaseDiagram> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut wall_times = Vec::new();
    for &k in &cfg.k_grid {
        for &d in &cfg.d_grid {
            let s = cfg.scale_for(k, d)?;
            for (mi, &mult) in cfg.m_multipliers.iter().enumerate() {
                let m = ((mult * (k * d) as f64).ceil() as usize).max(2);
                let start = Instant::now();
                let mut successes = 0usize;
                for trial in 0..cfg.trials {
                    let salt = ((k as u64) << 48)
                        ^ ((d as u64) << 36)
                        ^ ((mi as u64) << 24)
                        ^ trial as u64;
                    let cell = PipelineCell {
                        task: cfg.task,
                        k,
                        d,
                        n: cfg.n,
                        m,
                        eps: cfg.eps,
                        r: cfg.r,
                        s,
                        noise: cfg.noise,
                        tolerance: cfg.tolerance,
                        seed: derive_seed(cfg.seed, salt),
                        baseline_restarts: 1, // success is matching-based
                        decode_restarts: cfg.decode_restarts,
                    };
                    if run_pipeline(&cell)?.success {
                        successes += 1;
                    }
                }
                rows.push(PhaseRow {
                    m,
                    k,
                    d,
                    kd: k * d,
                    success_rate: successes as f64 / cfg.trials as f64,
                });
                wall_times.push(start.elapsed().as_secs_f64() * 1e3);
            }
        }
    }
    Ok(PhaseDiagram {
        rows,
        wall_times_ms: wall_times,
    })
}

/// First sketch size (linearly interpolated) at which the success rate
/// crosses one half, per (k, d) column.
pub fn transition_midpoint(rows: &[PhaseRow], k: usize, d: usize) -> Option<f64> {
    let mut col: Vec<&PhaseRow> = rows.iter().filter(|r| r.k == k && r.d == d).collect();
    col.sort_by_key(|r| r.m);
    let mut prev: Option<&PhaseRow> = None;
    for row in col {
        if row.success_rate >= 0.5 {
            return Some(match prev {
                None => row.m as f64,
                Some(p) => {
                    let span = row.success_rate - p.success_rate;
                    if span <= 0.0 {
                        row.m as f64
                    } else {
                        p.m as f64 + (0.5 - p.success_rate) / span * (row.m as f64 - p.m as f64)
                    }
                }
            });
        }
        prev = Some(row);
    }
    None
}

/// Regress the transition midpoint against k*d over all grid columns;
/// returns (slope, intercept, r_squared, points).
pub fn phase_regression(diagram: &PhaseDiagram, cfg: &ExperimentConfig) -> (f64, f64, f64, usize) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &k in &cfg.k_grid {
        for &d in &cfg.d_grid {
            if let Some(mid) = transition_midpoint(&diagram.rows, k, d) {
                xs.push((k * d) as f64);
                ys.push(mid);
            }
        }
    }
    if xs.len() < 2 {
        return (0.0, 0.0, 0.0, xs.len());
    }
    let (slope, intercept, r2) = linalg::linear_fit(&xs, &ys);
    (slope, intercept, r2, xs.len())
}

/// CSV rendering with '#'-prefixed metadata rows; wall times go to a
/// separate artifact so repeated runs stay byte-identical.
pub fn phase_csv(diagram: &PhaseDiagram, cfg: &ExperimentConfig) -> String {
    let task = match cfg.task {
        Task::KMeans => "kmeans",
        Task::KMedians => "kmedians",
        Task::Gmm => "gmm",
    };
    let mut out = String::new();
    out.push_str("# phase diagram\n");
    out.push_str(&format!(
        "# task={task} n={} trials={} eps={} r={} tolerance={} seed={}\n",
        cfg.n, cfg.trials, cfg.eps, cfg.r, cfg.tolerance, cfg.seed
    ));
    out.push_str("m,k,d,kd,success_rate\n");
    for row in &diagram.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.m, row.k, row.d, row.kd, row.success_rate
        ));
    }
    out
}

pub fn phase_times_csv(diagram: &PhaseDiagram) -> String {
    let mut out = String::from("cell_index,wall_ms\n");
    for (i, t) in diagram.wall_times_ms.iter().enumerate() {
        out.push_str(&format!("{i},{t}\n"));
    }
    out
}
