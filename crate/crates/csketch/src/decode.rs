//! Greedy decoding of sketches into constrained mixture hypotheses.
//!
//! The decoder minimizes the sketch-domain least-squares proxy over k
//! centroids (plus simplex weights) with a continuous greedy loop: pick the
//! atom best correlated with the residual by multi-start gradient ascent,
//! re-solve the simplex-constrained weights, locally refine all parameters
//! jointly, overshoot to `max_atoms` atoms, then hard-reduce to the k
//! heaviest and refine again. Weights are solved by accelerated projected
//! gradient with exact Euclidean simplex projection; the joint refinement is
//! a projected Barzilai-Borwein descent with monotone backtracking.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::freq::FrequencySet;
use crate::kernel::Family;
use crate::linalg::{self, project_simplex};
use crate::mixture::{Hypothesis, Metric};
use crate::risk::separated_cover;
use crate::sketch::complex_norm;

/// Which dictionary the proxy is built on: raw features (clustering) or
/// base-distribution embeddings (mixture fitting).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Clustering,
    Gmm,
}

#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub k: usize,
    pub eps: f64,
    pub r: f64,
    /// Greedy overshoot budget; the loop selects this many atoms before
    /// reducing to k.
    pub max_atoms: usize,
    /// Refinement iteration budget after each atom selection.
    pub local_iters: usize,
    /// Refinement iteration budget after the reduction to k atoms.
    pub global_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Random initializations per atom selection.
    pub restarts: usize,
    pub seed: u64,
    pub enforce_separation: bool,
}

impl DecodeConfig {
    pub fn new(k: usize, eps: f64, r: f64, seed: u64) -> DecodeConfig {
        DecodeConfig {
            k,
            eps,
            r,
            max_atoms: 2 * k,
            local_iters: 200,
            global_iters: 600,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            restarts: 30,
            seed,
            enforce_separation: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if self.max_atoms < self.k {
            return Err(Error::invalid("max_atoms must be >= k"));
        }
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if !(self.eps > 0.0 && self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::invalid("eps and r must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub hypothesis: Hypothesis,
    /// Proxy value at the output, recomputed from scratch.
    pub residual_norm: f64,
    /// Residual after each greedy step, then one entry per iteration of the
    /// final refinement.
    pub trace: Vec<f64>,
    /// Index into `trace` where the post-reduction refinement begins.
    pub reduction_index: usize,
    pub converged: bool,
}

/// Dictionary context: every atom is `gain_j * exp(i omega_j . c)`, so the
/// two modes differ only in the per-frequency gains.
struct Dictionary<'a> {
    fs: &'a FrequencySet,
    gains: Vec<f64>,
    atom_norm: f64,
    metric: Metric,
}

impl<'a> Dictionary<'a> {
    fn new(fs: &'a FrequencySet, mode: DecodeMode) -> Dictionary<'a> {
        let m = fs.m();
        let root_m = (m as f64).sqrt();
        let gains: Vec<f64> = match (mode, fs.params().family) {
            (DecodeMode::Clustering, _) | (DecodeMode::Gmm, Family::DiracWeighted) => {
                fs.weights().iter().map(|w| 1.0 / (root_m * w)).collect()
            }
            (DecodeMode::Gmm, Family::GaussianPlain) => {
                let chol = fs.params().sigma_chol();
                (0..m)
                    .map(|j| (-linalg::quadratic_form(chol, fs.omega(j)) / 2.0).exp() / root_m)
                    .collect()
            }
        };
        let atom_norm = gains.iter().map(|g| g * g).sum::<f64>().sqrt();
        let metric = match mode {
            DecodeMode::Clustering => Metric::Euclidean,
            DecodeMode::Gmm => Metric::from_params(fs.params()),
        };
        Dictionary {
            fs,
            gains,
            atom_norm,
            metric,
        }
    }

    fn atom(&self, c: &[f64]) -> Vec<Complex64> {
        let m = self.fs.m();
        let mut out = Vec::with_capacity(m);
        for j in 0..m {
            let phase = linalg::dot(self.fs.omega(j), c);
            let (sin, cos) = phase.sin_cos();
            out.push(Complex64::new(cos * self.gains[j], sin * self.gains[j]));
        }
        out
    }

    fn project_ball(&self, c: &mut [f64], r: f64) {
        let norm = self.metric.norm(c);
        if norm > r {
            let scale = r / norm;
            for x in c.iter_mut() {
                *x *= scale;
            }
        }
    }

    fn random_in_ball(&self, rng: &mut ChaCha8Rng, r: f64) -> Vec<f64> {
        let d = self.fs.d();
        // uniform in the metric ball: uniform direction in the metric's unit
        // sphere image, radius ~ U^(1/d)
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let radius = r * rng.random::<f64>().powf(1.0 / d as f64);
        match &self.metric {
            Metric::Euclidean => {
                let n = linalg::norm2(&z).max(1e-12);
                z.iter().map(|x| x * radius / n).collect()
            }
            Metric::Mahalanobis(l) => {
                // x = L z / ||z|| has Mahalanobis norm ||z||-normalized
                let n = linalg::norm2(&z).max(1e-12);
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
}

/// Residual correlation and its gradient at a centroid:
/// corr(c) = Re <r, atom(c)> with the real part of the conjugated pairing.
fn correlation(dict: &Dictionary, residual: &[Complex64], c: &[f64]) -> (f64, Vec<f64>) {
    let d = c.len();
    let mut corr = 0.0;
    let mut grad = vec![0.0; d];
    for j in 0..dict.fs.m() {
        let omega = dict.fs.omega(j);
        let phase = linalg::dot(omega, c);
        let (sin, cos) = phase.sin_cos();
        let psi = Complex64::new(cos * dict.gains[j], sin * dict.gains[j]);
        let r = residual[j];
        // corr contribution: Re(r * conj(psi))
        corr += r.re * psi.re + r.im * psi.im;
        // gradient: Im(r * conj(psi)) * omega
        let im = r.im * psi.re - r.re * psi.im;
        for t in 0..d {
            grad[t] += im * omega[t];
        }
    }
    (corr, grad)
}

/// Multi-start projected gradient ascent of the normalized correlation
/// |corr(c)| / ||atom(c)|| over the radius-r ball. The atom norm is a
/// constant of the dictionary (the phase factors are unimodular), so the
/// ascent maximizes corr^2 and the division happens once at scoring.
fn select_atom(
    dict: &Dictionary,
    residual: &[Complex64],
    cfg: &DecodeConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut best_val = f64::NEG_INFINITY;
    let mut best_c: Vec<f64> = vec![0.0; dict.fs.d()];
    for _ in 0..cfg.restarts.max(1) {
        let mut c = dict.random_in_ball(rng, cfg.r);
        let (corr, _) = correlation(dict, residual, &c);
        let mut f = corr * corr;
        let mut step = 0.25 * dict.fs.params().bandwidth().powi(2);
        for _ in 0..120 {
            let (corr, grad_corr) = correlation(dict, residual, &c);
            // ascend corr^2
            let grad: Vec<f64> = grad_corr.iter().map(|g| 2.0 * corr * g).collect();
            let gnorm = linalg::norm2(&grad);
            if gnorm < 1e-15 {
                break;
            }
            let mut accepted = false;
            for _ in 0..30 {
                let mut trial: Vec<f64> = c.iter().zip(&grad).map(|(x, g)| x + step * g).collect();
                dict.project_ball(&mut trial, cfg.r);
                let (tc, _) = correlation(dict, residual, &trial);
                let tf = tc * tc;
                if tf > f {
                    c = trial;
                    f = tf;
                    step *= 1.4;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted || step < 1e-18 {
                break;
            }
        }
        if f.sqrt() / dict.atom_norm > best_val {
            best_val = f.sqrt() / dict.atom_norm;
            best_c = c;
        }
    }
    best_c
}

/// Quadratic form data for the weight subproblem:
/// minimize alpha^T G alpha - 2 alpha^T b over the simplex.
struct WeightProblem {
    gram: Vec<Vec<f64>>,
    rhs: Vec<f64>,
}

impl WeightProblem {
    fn from_atoms(atoms: &[Vec<Complex64>], y: &[Complex64]) -> WeightProblem {
        let k = atoms.len();
        let mut gram = vec![vec![0.0; k]; k];
        let mut rhs = vec![0.0; k];
        for l in 0..k {
            for j in l..k {
                let g: f64 = atoms[l]
                    .iter()
                    .zip(&atoms[j])
                    .map(|(a, b)| a.re * b.re + a.im * b.im)
                    .sum();
                gram[l][j] = g;
                gram[j][l] = g;
            }
            rhs[l] = atoms[l]
                .iter()
                .zip(y)
                .map(|(a, b)| a.re * b.re + a.im * b.im)
                .sum();
        }
        WeightProblem { gram, rhs }
    }

    fn subproblem(&self, subset: &[usize]) -> WeightProblem {
        let gram = subset
            .iter()
            .map(|&i| subset.iter().map(|&j| self.gram[i][j]).collect())
            .collect();
        let rhs = subset.iter().map(|&i| self.rhs[i]).collect();
        WeightProblem { gram, rhs }
    }

    /// Objective up to the constant ||y||^2.
    fn qvalue(&self, alpha: &[f64]) -> f64 {
        let k = alpha.len();
        let mut q = 0.0;
        for l in 0..k {
            let mut row = 0.0;
            for j in 0..k {
                row += self.gram[l][j] * alpha[j];
            }
            q += alpha[l] * (row - 2.0 * self.rhs[l]);
        }
        q
    }

    fn gradient(&self, alpha: &[f64]) -> Vec<f64> {
        let k = alpha.len();
        (0..k)
            .map(|l| {
                let mut g = -self.rhs[l];
                for j in 0..k {
                    g += self.gram[l][j] * alpha[j];
                }
                2.0 * g
            })
            .collect()
    }

    /// Exact equality-constrained solve on the active support; accepted
    /// when it stays (numerically) inside the simplex.
    fn active_set_polish(&self, alpha: &[f64]) -> Option<Vec<f64>> {
        let support: Vec<usize> = alpha
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 1e-10)
            .map(|(i, _)| i)
            .collect();
        if support.is_empty() {
            return None;
        }
        let t = support.len();
        // KKT system [2 G_T, 1; 1^T, 0] [a; lambda] = [2 b_T; 1]
        let mut a = vec![vec![0.0; t + 1]; t + 1];
        let mut b = vec![0.0; t + 1];
        for (r, &i) in support.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                a[r][c] = 2.0 * self.gram[i][j];
            }
            a[r][t] = 1.0;
            a[t][r] = 1.0;
            b[r] = 2.0 * self.rhs[i];
        }
        b[t] = 1.0;
        let sol = linalg::solve_dense(a, b)?;
        if sol[..t].iter().any(|&x| x < -1e-12 || !x.is_finite()) {
            return None;
        }
        let mut out = vec![0.0; alpha.len()];
        let mut total = 0.0;
        for (r, &i) in support.iter().enumerate() {
            out[i] = sol[r].max(0.0);
            total += out[i];
        }
        if total <= 0.0 {
            return None;
        }
        for x in out.iter_mut() {
            *x /= total;
        }
        Some(out)
    }

    /// FISTA with exact simplex projection, then the active-set polish.
    fn solve(&self, tol: f64) -> Vec<f64> {
        let k = self.rhs.len();
        assert!(k > 0);
        // Lipschitz constant 2 lambda_max(G) by power iteration
        let mut v = vec![1.0 / (k as f64).sqrt(); k];
        let mut lam = 1.0;
        for _ in 0..60 {
            let mut w = vec![0.0; k];
            for l in 0..k {
                for j in 0..k {
                    w[l] += self.gram[l][j] * v[j];
                }
            }
            lam = linalg::norm2(&w);
            if lam < 1e-30 {
                break;
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / lam;
            }
        }
        let lip = (2.0 * lam).max(1e-12);

        let mut alpha = vec![1.0 / k as f64; k];
        let mut momentum = alpha.clone();
        let mut t_acc = 1.0f64;
        for _ in 0..20_000 {
            let g = self.gradient(&momentum);
            let next = project_simplex(
                &momentum
                    .iter()
                    .zip(&g)
                    .map(|(a, gi)| a - gi / lip)
                    .collect::<Vec<f64>>(),
            );
            let t_next = (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt()) / 2.0;
            momentum = next
                .iter()
                .zip(&alpha)
                .map(|(n, a)| n + (t_acc - 1.0) / t_next * (n - a))
                .collect();
            let moved = linalg::dist2(&next, &alpha);
            alpha = next;
            t_acc = t_next;
            let g_here = self.gradient(&alpha);
            let mapped = project_simplex(
                &alpha
                    .iter()
                    .zip(&g_here)
                    .map(|(a, gi)| a - gi / lip)
                    .collect::<Vec<f64>>(),
            );
            let stat = lip * linalg::dist2(&alpha, &mapped);
            if stat <= tol && moved <= tol {
                break;
            }
        }
        if let Some(polished) = self.active_set_polish(&alpha) {
            if self.qvalue(&polished) <= self.qvalue(&alpha) {
                return polished;
            }
        }
        alpha
    }
}

/// Simplex-constrained least squares min_alpha || y - A alpha ||, solved to
/// stationarity `tol` and finished with an exact active-set solve.
fn simplex_least_squares(atoms: &[Vec<Complex64>], y: &[Complex64], tol: f64) -> Vec<f64> {
    WeightProblem::from_atoms(atoms, y).solve(tol)
}

/// Packed objective: f(c_1..c_k, alpha) = || y - sum alpha_l atom(c_l) ||^2.
/// Parameters are packed centroids-first, weights last.
fn objective_and_gradient(
    dict: &Dictionary,
    y: &[Complex64],
    centroids: &[Vec<f64>],
    alphas: &[f64],
) -> (f64, Vec<f64>) {
    let k = centroids.len();
    let d = dict.fs.d();
    let m = dict.fs.m();
    let atoms: Vec<Vec<Complex64>> = centroids.iter().map(|c| dict.atom(c)).collect();
    let mut residual: Vec<Complex64> = y.to_vec();
    for (a, atom) in alphas.iter().zip(&atoms) {
        for (r, z) in residual.iter_mut().zip(atom) {
            *r -= a * z;
        }
    }
    let f: f64 = residual.iter().map(|z| z.norm_sqr()).sum();
    let mut grad = vec![0.0; k * d + k];
    for l in 0..k {
        let mut gc = vec![0.0; d];
        let mut ga = 0.0;
        for j in 0..m {
            let psi = atoms[l][j];
            let r = residual[j];
            // d f / d alpha_l = -2 Re(conj(r) psi)
            ga += r.re * psi.re + r.im * psi.im;
            // d f / d c_l = 2 alpha_l Im(conj(r) psi) omega
            let im = r.re * psi.im - r.im * psi.re;
            let omega = dict.fs.omega(j);
            for t in 0..d {
                gc[t] += im * omega[t];
            }
        }
        for t in 0..d {
            grad[l * d + t] = 2.0 * alphas[l] * gc[t];
        }
        grad[k * d + l] = -2.0 * ga;
    }
    (f, grad)
}

/// Projected quasi-Newton descent (Barzilai-Borwein step with monotone
/// backtracking) on the packed parameters. Returns the per-iteration
/// residual-norm trace and whether the gradient tolerance was met.
fn refine(
    dict: &Dictionary,
    y: &[Complex64],
    centroids: &mut Vec<Vec<f64>>,
    alphas: &mut Vec<f64>,
    cfg: &DecodeConfig,
    iters: usize,
    trace: Option<&mut Vec<f64>>,
) -> bool {
    let k = centroids.len();
    let d = dict.fs.d();
    let project = |cs: &mut Vec<Vec<f64>>, al: &mut Vec<f64>| {
        for c in cs.iter_mut() {
            dict.project_ball(c, cfg.r);
        }
        *al = project_simplex(al);
    };
    project(centroids, alphas);
    let (mut f, mut grad) = objective_and_gradient(dict, y, centroids, alphas);
    let mut prev_x: Option<(Vec<f64>, Vec<f64>)> = None; // packed x, grad
    let mut step = 0.1 * dict.fs.params().bandwidth().powi(2).min(1.0);
    let mut converged = false;
    let mut local_trace = Vec::new();
    for _ in 0..iters {
        let packed: Vec<f64> = centroids
            .iter()
            .flatten()
            .copied()
            .chain(alphas.iter().copied())
            .collect();
        // BB step from the previous iterate
        if let Some((px, pg)) = &prev_x {
            let dx: Vec<f64> = packed.iter().zip(px).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = grad.iter().zip(pg).map(|(a, b)| a - b).collect();
            let dxdg = linalg::dot(&dx, &dg);
            let dgdg = linalg::dot(&dg, &dg);
            if dxdg.abs() > 1e-30 && dgdg > 1e-30 {
                step = (dxdg / dgdg).abs().clamp(1e-12, 1e3);
            }
        }
        let mut accepted = false;
        let mut t = step;
        for _ in 0..40 {
            let mut cs: Vec<Vec<f64>> = (0..k)
                .map(|l| {
                    (0..d)
                        .map(|i| centroids[l][i] - t * grad[l * d + i])
                        .collect()
                })
                .collect();
            let mut al: Vec<f64> = (0..k).map(|l| alphas[l] - t * grad[k * d + l]).collect();
            project(&mut cs, &mut al);
            let (tf, tg) = objective_and_gradient(dict, y, &cs, &al);
            if tf < f {
                let moved: f64 = cs
                    .iter()
                    .flatten()
                    .copied()
                    .chain(al.iter().copied())
                    .zip(packed.iter())
                    .map(|(a, &b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                prev_x = Some((packed.clone(), grad.clone()));
                *centroids = cs;
                *alphas = al;
                f = tf;
                grad = tg;
                accepted = true;
                local_trace.push(f.sqrt());
                if moved <= cfg.step_tol {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = true; // no descent direction left at step_tol scale
            break;
        }
        let gnorm = linalg::norm2(&grad);
        if gnorm <= cfg.grad_tol {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    if let Some(tr) = trace {
        tr.extend(local_trace);
    }
    converged
}

/// Damped Gauss-Newton polish on all parameters jointly. The descent phase
/// lands near the optimum; the normal-equation steps recover the last
/// digits when the residual is smooth there. Steps are accepted only while
/// the objective decreases and the constraints keep holding.
fn gauss_newton_polish(
    dict: &Dictionary,
    y: &[Complex64],
    centroids: &mut Vec<Vec<f64>>,
    alphas: &mut Vec<f64>,
    r_ball: f64,
    iters: usize,
) {
    let k = centroids.len();
    let d = dict.fs.d();
    let m = dict.fs.m();
    let p_dim = k * (d + 1);
    let (mut f, _) = objective_and_gradient(dict, y, centroids, alphas);
    for _ in 0..iters {
        let atoms: Vec<Vec<Complex64>> = centroids.iter().map(|c| dict.atom(c)).collect();
        let mut residual: Vec<Complex64> = y.to_vec();
        for (a, atom) in alphas.iter().zip(&atoms) {
            for (r, z) in residual.iter_mut().zip(atom) {
                *r -= a * z;
            }
        }
        // jacobian of the model: columns are d model / d c_l[t] and
        // d model / d alpha_l
        let mut jac = vec![vec![Complex64::new(0.0, 0.0); p_dim]; m];
        for j in 0..m {
            let omega = dict.fs.omega(j);
            for l in 0..k {
                let psi = atoms[l][j];
                for t in 0..d {
                    jac[j][l * d + t] = Complex64::new(0.0, alphas[l] * omega[t]) * psi;
                }
                jac[j][k * d + l] = psi;
            }
        }
        let mut h = vec![vec![0.0; p_dim]; p_dim];
        let mut g = vec![0.0; p_dim];
        for j in 0..m {
            for p in 0..p_dim {
                let jp = jac[j][p];
                g[p] += jp.re * residual[j].re + jp.im * residual[j].im;
                for q in p..p_dim {
                    let jq = jac[j][q];
                    h[p][q] += jp.re * jq.re + jp.im * jq.im;
                }
            }
        }
        for p in 0..p_dim {
            for q in 0..p {
                h[p][q] = h[q][p];
            }
            h[p][p] += 1e-12; // mild Tikhonov floor against rank loss
        }
        let delta = match linalg::solve_dense(h, g) {
            Some(x) => x,
            None => return,
        };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..25 {
            let mut cs: Vec<Vec<f64>> = centroids.clone();
            let mut al: Vec<f64> = alphas.clone();
            for l in 0..k {
                for t in 0..d {
                    cs[l][t] += scale * delta[l * d + t];
                }
                al[l] += scale * delta[k * d + l];
            }
            for c in cs.iter_mut() {
                dict.project_ball(c, r_ball);
            }
            let total: f64 = al.iter().sum();
            if al.iter().any(|&a| a < -1e-9) || (total - 1.0).abs() > 1e-6 {
                scale *= 0.5;
                continue;
            }
            for a in al.iter_mut() {
                *a = a.max(0.0);
            }
            let total: f64 = al.iter().sum();
            for a in al.iter_mut() {
                *a /= total;
            }
            let (tf, _) = objective_and_gradient(dict, y, &cs, &al);
            if tf < f {
                *centroids = cs;
                *alphas = al;
                f = tf;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved || f < 1e-28 {
            return;
        }
    }
}

/// Proxy value of a hypothesis against a finalized sketch: for clustering
/// the inner simplex-constrained least squares is solved to stationarity,
/// for GMM the stored weights are used as-is.
pub fn proxy_value(
    fs: &FrequencySet,
    y: &[Complex64],
    h: &Hypothesis,
    mode: DecodeMode,
) -> Result<f64> {
    if y.len() != fs.m() {
        return Err(Error::DimensionMismatch {
            expected: fs.m(),
            got: y.len(),
        });
    }
    if h.d() != fs.d() {
        return Err(Error::DimensionMismatch {
            expected: fs.d(),
            got: h.d(),
        });
    }
    let dict = Dictionary::new(fs, mode);
    let atoms: Vec<Vec<Complex64>> = (0..h.k()).map(|i| dict.atom(h.centroid(i))).collect();
    let alphas = match mode {
        DecodeMode::Clustering => simplex_least_squares(&atoms, y, 1e-10),
        DecodeMode::Gmm => h.alphas().to_vec(),
    };
    Ok(residual_with_weights(&dict, y, &atoms, &alphas))
}

/// Residual norm at the hypothesis exactly as stored (no inner weight
/// solve), in the given dictionary mode.
pub fn residual_norm_at(
    fs: &FrequencySet,
    y: &[Complex64],
    h: &Hypothesis,
    mode: DecodeMode,
) -> Result<f64> {
    if y.len() != fs.m() {
        return Err(Error::DimensionMismatch {
            expected: fs.m(),
            got: y.len(),
        });
    }
    let dict = Dictionary::new(fs, mode);
    let atoms: Vec<Vec<Complex64>> = (0..h.k()).map(|i| dict.atom(h.centroid(i))).collect();
    Ok(residual_with_weights(&dict, y, &atoms, h.alphas()))
}

fn residual_with_weights(
    _dict: &Dictionary,
    y: &[Complex64],
    atoms: &[Vec<Complex64>],
    alphas: &[f64],
) -> f64 {
    let mut residual: Vec<Complex64> = y.to_vec();
    for (a, atom) in alphas.iter().zip(atoms) {
        for (r, z) in residual.iter_mut().zip(atom) {
            *r -= a * z;
        }
    }
    complex_norm(&residual)
}

/// Objective value and analytic gradient of the squared proxy at raw
/// (centroids, weights), packed centroids-first. The weights need not lie
/// on the simplex, which lets finite-difference probes wander off it.
pub fn proxy_objective_gradient(
    fs: &FrequencySet,
    y: &[Complex64],
    centroids: &[Vec<f64>],
    alphas: &[f64],
    mode: DecodeMode,
) -> Result<(f64, Vec<f64>)> {
    if y.len() != fs.m() {
        return Err(Error::DimensionMismatch {
            expected: fs.m(),
            got: y.len(),
        });
    }
    if centroids.len() != alphas.len() {
        return Err(Error::DimensionMismatch {
            expected: centroids.len(),
            got: alphas.len(),
        });
    }
    for c in centroids {
        fs.params().check_dim(c)?;
    }
    let dict = Dictionary::new(fs, mode);
    Ok(objective_and_gradient(&dict, y, centroids, alphas))
}

pub fn decode(fs: &FrequencySet, y: &[Complex64], cfg: &DecodeConfig) -> Result<DecodeResult> {
    decode_with_mode(fs, y, cfg, DecodeMode::Clustering)
}

pub fn decode_gmm(fs: &FrequencySet, y: &[Complex64], cfg: &DecodeConfig) -> Result<DecodeResult> {
    decode_with_mode(fs, y, cfg, DecodeMode::Gmm)
}

pub fn decode_with_mode(
    fs: &FrequencySet,
    y: &[Complex64],
    cfg: &DecodeConfig,
    mode: DecodeMode,
) -> Result<DecodeResult> {
    cfg.validate()?;
    if y.len() != fs.m() {
        return Err(Error::DimensionMismatch {
            expected: fs.m(),
            got: y.len(),
        });
    }
    if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::invalid("sketch vector contains non-finite entries"));
    }
    if fs.m() < cfg.k {
        log::warn!(
            "sketch size m = {} below k = {}: the proxy is underdetermined",
            fs.m(),
            cfg.k
        );
    }
    let dict = Dictionary::new(fs, mode);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = fs.d();

    let mut centroids: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut residual: Vec<Complex64> = y.to_vec();

    for _ in 0..cfg.max_atoms {
        let mut c_new = select_atom(&dict, &residual, cfg, &mut rng);
        // degenerate double selection: nudge the new atom off its twin
        let too_close = centroids
            .iter()
            .any(|c| dict.metric.distance(c, &c_new) < 1e-3 * cfg.eps);
        if too_close {
            let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = linalg::norm2(&dir).max(1e-12);
            for (x, di) in c_new.iter_mut().zip(&dir) {
                *x += di / n * 1e-3 * cfg.eps;
            }
            dict.project_ball(&mut c_new, cfg.r);
        }
        centroids.push(c_new);
        let atoms: Vec<Vec<Complex64>> = centroids.iter().map(|c| dict.atom(c)).collect();
        alphas = simplex_least_squares(&atoms, y, 1e-10);
        refine(
            &dict,
            y,
            &mut centroids,
            &mut alphas,
            cfg,
            cfg.local_iters,
            None,
        );
        // refresh the residual for the next selection
        residual = y.to_vec();
        for (a, c) in alphas.iter().zip(&centroids) {
            let atom = dict.atom(c);
            for (r, z) in residual.iter_mut().zip(&atom) {
                *r -= a * z;
            }
        }
        trace.push(complex_norm(&residual));
    }

    // hard reduction to k atoms. The primary rule keeps the k heaviest
    // weights; a backward-elimination pass (drop the atom whose removal
    // costs least, repeatedly) is evaluated as well, and the better refined
    // candidate wins. On clean recoveries the two subsets coincide.
    let atoms: Vec<Vec<Complex64>> = centroids.iter().map(|c| dict.atom(c)).collect();
    let problem = WeightProblem::from_atoms(&atoms, y);
    let heaviest: Vec<usize> = {
        let mut order: Vec<usize> = (0..centroids.len()).collect();
        order.sort_by(|&a, &b| alphas[b].partial_cmp(&alphas[a]).unwrap());
        order.truncate(cfg.k);
        order.sort_unstable();
        order
    };
    let backward: Vec<usize> = {
        let mut active: Vec<usize> = (0..centroids.len()).collect();
        while active.len() > cfg.k {
            let mut best_drop = (0usize, f64::INFINITY);
            for pos in 0..active.len() {
                let trial: Vec<usize> = active
                    .iter()
                    .enumerate()
                    .filter(|&(p, _)| p != pos)
                    .map(|(_, &i)| i)
                    .collect();
                let sub = problem.subproblem(&trial);
                let al = sub.solve(1e-8);
                let q = sub.qvalue(&al);
                if q < best_drop.1 {
                    best_drop = (pos, q);
                }
            }
            active.remove(best_drop.0);
        }
        active
    };

    let reduction_index = trace.len();
    let mut candidates = vec![heaviest];
    if candidates[0] != backward {
        candidates.push(backward);
    }
    let mut best: Option<(f64, Vec<Vec<f64>>, Vec<f64>, Vec<f64>, bool)> = None;
    for subset in candidates {
        let mut cs: Vec<Vec<f64>> = subset.iter().map(|&i| centroids[i].clone()).collect();
        let sub_atoms: Vec<Vec<Complex64>> = subset.iter().map(|&i| atoms[i].clone()).collect();
        let mut al = simplex_least_squares(&sub_atoms, y, 1e-13);
        let mut local_trace = Vec::new();
        let conv = refine(
            &dict,
            y,
            &mut cs,
            &mut al,
            cfg,
            cfg.global_iters,
            Some(&mut local_trace),
        );
        let (fval, _) = objective_and_gradient(&dict, y, &cs, &al);
        let res = fval.sqrt();
        if best.as_ref().map_or(true, |(b, ..)| res < *b) {
            best = Some((res, cs, al, local_trace, conv));
        }
    }
    let (_, best_cs, best_al, best_trace, converged) = best.expect("at least one candidate");
    centroids = best_cs;
    alphas = best_al;
    trace.extend(best_trace);
    gauss_newton_polish(&dict, y, &mut centroids, &mut alphas, cfg.r, 40);
    {
        let (fval, _) = objective_and_gradient(&dict, y, &centroids, &alphas);
        trace.push(fval.sqrt());
    }

    if cfg.enforce_separation {
        let flat: Vec<f64> = centroids.iter().flatten().copied().collect();
        let h = Hypothesis::new(
            Array2::from_shape_vec((centroids.len(), d), flat).expect("packed shape"),
            None,
        )?;
        // cover in the decoder metric; Euclidean covers suffice for the
        // clustering class, Mahalanobis handled by pre-whitening
        let cover = match &dict.metric {
            Metric::Euclidean => separated_cover(&h, 2.0 * cfg.eps, cfg.r)?.cover,
            Metric::Mahalanobis(l) => {
                let mut white = Array2::zeros((h.k(), d));
                for i in 0..h.k() {
                    let z = linalg::solve_lower(l.view(), h.centroid(i));
                    for (t, &v) in z.iter().enumerate() {
                        white[[i, t]] = v;
                    }
                }
                let wh = Hypothesis::new(white, None)?;
                let res = separated_cover(&wh, 2.0 * cfg.eps, cfg.r)?;
                let mut unwhite = Array2::zeros((h.k(), d));
                for i in 0..h.k() {
                    // x = L z
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
        centroids = (0..cover.k()).map(|i| cover.centroid(i).to_vec()).collect();
        let atoms: Vec<Vec<Complex64>> = centroids.iter().map(|c| dict.atom(c)).collect();
        alphas = simplex_least_squares(&atoms, y, 1e-10);
    }

    let flat: Vec<f64> = centroids.iter().flatten().copied().collect();
    let hypothesis = Hypothesis::new(
        Array2::from_shape_vec((cfg.k, d), flat).expect("packed shape"),
        Some(alphas.clone()),
    )?;
    let residual_norm = residual_norm_at(fs, y, &hypothesis, mode)?;
    Ok(DecodeResult {
        hypothesis,
        residual_norm,
        trace,
        reduction_index,
        converged,
    })
}
