//! Separated mixture models, dipoles, and empirical coherence measurement.
//!
//! A hypothesis is a k-tuple of centroids with simplex weights. Mixtures of
//! a location family (Diracs or fixed-covariance Gaussians) built on a
//! hypothesis support exact MMD geometry through the closed-form kernel, and
//! differences of separated mixtures decompose into pairwise-separated
//! dipoles, the unit on which the coherence machinery operates.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::{
    coherence_constants_at, critical_bandwidth, gaussian_profile, mean_embedding_kernel, Family,
    KernelParams,
};
use crate::linalg;

const SIMPLEX_TOL: f64 = 1e-12;

/// k centroids plus simplex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    centroids: Array2<f64>,
    alphas: Vec<f64>,
}

impl Hypothesis {
    /// Build a hypothesis; `None` weights mean uniform. Weights must be
    /// nonnegative and sum to 1 within 1e-12; they are renormalized exactly
    /// on construction so downstream sum identities hold.
    pub fn new(centroids: Array2<f64>, alphas: Option<Vec<f64>>) -> Result<Self> {
        let k = centroids.nrows();
        if k == 0 {
            return Err(Error::invalid("hypothesis needs at least one centroid"));
        }
        if centroids.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("centroids must be finite"));
        }
        let alphas = match alphas {
            None => vec![1.0 / k as f64; k],
            Some(a) => {
                if a.len() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        got: a.len(),
                    });
                }
                if a.iter().any(|&x| !x.is_finite() || x < -SIMPLEX_TOL) {
                    return Err(Error::invalid("weights must be nonnegative"));
                }
                let total: f64 = a.iter().sum();
                if (total - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::invalid(format!(
                        "weights must sum to 1 within {SIMPLEX_TOL}, got {total}"
                    )));
                }
                a.iter().map(|&x| x.max(0.0) / total).collect()
            }
        };
        Ok(Hypothesis { centroids, alphas })
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn d(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn centroids(&self) -> ArrayView2<'_, f64> {
        self.centroids.view()
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        self.centroids.row(i).to_slice().unwrap()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// Distance used for separation checks and ball constraints.
#[derive(Debug, Clone)]
pub enum Metric {
    Euclidean,
    Mahalanobis(Array2<f64>),
}

impl Metric {
    pub fn from_params(p: &KernelParams) -> Metric {
        match p.family {
            Family::DiracWeighted => Metric::Euclidean,
            Family::GaussianPlain => Metric::Mahalanobis(p.sigma_chol().to_owned()),
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.norm(&diff)
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => linalg::norm2(v),
            Metric::Mahalanobis(l) => linalg::mahalanobis_norm(l.view(), v),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum SeparationViolation {
    PairTooClose { i: usize, j: usize, distance: f64 },
    NormTooLarge { i: usize, norm: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct SeparationReport {
    pub ok: bool,
    pub violations: Vec<SeparationViolation>,
}

/// Check membership in the constrained class: all pairs of *distinct*
/// centroids at distance >= 2 eps, all centroid norms <= r. Exact
/// repetitions are allowed.
pub fn separation_check(h: &Hypothesis, eps: f64, r: f64, metric: &Metric) -> SeparationReport {
    let mut violations = Vec::new();
    let k = h.k();
    for i in 0..k {
        let norm = metric.norm(h.centroid(i));
        if norm > r {
            violations.push(SeparationViolation::NormTooLarge { i, norm });
        }
        for j in i + 1..k {
            let dist = metric.distance(h.centroid(i), h.centroid(j));
            if dist > 0.0 && dist < 2.0 * eps {
                violations.push(SeparationViolation::PairTooClose {
                    i,
                    j,
                    distance: dist,
                });
            }
        }
    }
    SeparationReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// A weighted mixture of the base family located at the hypothesis
/// centroids. Duplicated centroids are merged so the component list is the
/// canonical support of the measure.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    params: KernelParams,
    hypothesis: Hypothesis,
    support: Vec<(f64, Vec<f64>)>,
}

impl MixtureModel {
    pub fn new(params: KernelParams, hypothesis: Hypothesis) -> Result<Self> {
        if hypothesis.d() != params.d {
            return Err(Error::DimensionMismatch {
                expected: params.d,
                got: hypothesis.d(),
            });
        }
        let mut support: Vec<(f64, Vec<f64>)> = Vec::new();
        for i in 0..hypothesis.k() {
            let c = hypothesis.centroid(i);
            match support.iter_mut().find(|(_, s)| s.as_slice() == c) {
                Some((w, _)) => *w += hypothesis.alphas()[i],
                None => support.push((hypothesis.alphas()[i], c.to_vec())),
            }
        }
        support.retain(|(w, _)| *w > 0.0);
        Ok(MixtureModel {
            params,
            hypothesis,
            support,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn hypothesis(&self) -> &Hypothesis {
        &self.hypothesis
    }

    /// Canonical components: distinct locations with merged weights.
    pub fn components(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.support.iter().map(|(w, c)| (*w, c.as_slice()))
    }

    pub fn n_components(&self) -> usize {
        self.support.len()
    }
}

/// Difference of two 1-close weighted components of the location family;
/// a monopole when one weight is zero.
#[derive(Debug, Clone)]
pub struct Dipole {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Dipole {
    pub fn monopole(theta: Vec<f64>, alpha: f64, positive: bool) -> Dipole {
        if positive {
            Dipole {
                theta2: theta.clone(),
                theta1: theta,
                alpha1: alpha,
                alpha2: 0.0,
            }
        } else {
            Dipole {
                theta1: theta.clone(),
                theta2: theta,
                alpha1: 0.0,
                alpha2: alpha,
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.alpha1 == 0.0 && self.alpha2 == 0.0
    }
}

/// Decompose tau - tau' into at most 2k pairwise 1-separated dipoles.
/// Both mixtures must pass the separation check at rescaled distance 2;
/// each component of tau then has at most one component of tau' within
/// rescaled distance 1 (nearest first, ties to the lowest index), and every
/// unmatched component becomes a monopole.
pub fn decompose_into_dipoles(tau: &MixtureModel, tau_prime: &MixtureModel) -> Result<Vec<Dipole>> {
    let p = tau.params();
    if !p.compatible(tau_prime.params()) {
        return Err(Error::FamilyMismatch(
            "dipole decomposition needs a shared kernel geometry".into(),
        ));
    }
    let metric = Metric::from_params(p);
    for (name, m) in [("tau", tau), ("tau_prime", tau_prime)] {
        let rep = separation_check(m.hypothesis(), p.eps, f64::INFINITY, &metric);
        if !rep.ok {
            return Err(Error::invalid(format!(
                "{name} is not 2-separated in the rescaled metric: {:?}",
                rep.violations
            )));
        }
    }

    let comps_a: Vec<(f64, Vec<f64>)> = tau.components().map(|(w, c)| (w, c.to_vec())).collect();
    let comps_b: Vec<(f64, Vec<f64>)> = tau_prime
        .components()
        .map(|(w, c)| (w, c.to_vec()))
        .collect();
    let mut used_b = vec![false; comps_b.len()];
    let mut out = Vec::new();

    for (wa, ca) in &comps_a {
        let mut best: Option<(usize, f64)> = None;
        for (j, (_, cb)) in comps_b.iter().enumerate() {
            if used_b[j] {
                continue;
            }
            let rho = p.rescaled_distance(ca, cb);
            if rho <= 1.0 {
                match best {
                    Some((_, cur)) if cur <= rho => {}
                    _ => best = Some((j, rho)),
                }
            }
        }
        match best {
            Some((j, _)) => {
                used_b[j] = true;
                out.push(Dipole {
                    theta1: ca.clone(),
                    theta2: comps_b[j].1.clone(),
                    alpha1: *wa,
                    alpha2: comps_b[j].0,
                });
            }
            None => out.push(Dipole::monopole(ca.clone(), *wa, true)),
        }
    }
    for (j, (wb, cb)) in comps_b.iter().enumerate() {
        if !used_b[j] {
            out.push(Dipole::monopole(cb.clone(), *wb, false));
        }
    }
    Ok(out)
}

/// Squared kernel norm of a dipole via the exact bilinear expansion.
pub fn dipole_mmd_sq(p: &KernelParams, nu: &Dipole) -> f64 {
    let base = p.base_norm_sq();
    let cross = if nu.alpha1 > 0.0 && nu.alpha2 > 0.0 {
        mean_embedding_kernel(p, &nu.theta1, &nu.theta2)
            .expect("dipole dimensions validated on construction")
            .raw
    } else {
        0.0
    };
    (nu.alpha1 * nu.alpha1 * base + nu.alpha2 * nu.alpha2 * base
        - 2.0 * nu.alpha1 * nu.alpha2 * cross)
        .max(0.0)
}

/// Kernel norm of a dipole.
pub fn dipole_mmd(p: &KernelParams, nu: &Dipole) -> f64 {
    dipole_mmd_sq(p, nu).sqrt()
}

/// Signed kernel inner product between two dipoles.
pub fn dipole_inner(p: &KernelParams, a: &Dipole, b: &Dipole) -> f64 {
    let mut acc = 0.0;
    for (sa, wa, ta) in [(1.0, a.alpha1, &a.theta1), (-1.0, a.alpha2, &a.theta2)] {
        if wa == 0.0 {
            continue;
        }
        for (sb, wb, tb) in [(1.0, b.alpha1, &b.theta1), (-1.0, b.alpha2, &b.theta2)] {
            if wb == 0.0 {
                continue;
            }
            acc += sa
                * sb
                * wa
                * wb
                * mean_embedding_kernel(p, ta, tb)
                    .expect("dipole dimensions validated on construction")
                    .raw;
        }
    }
    acc
}

/// Quasi-Pythagorean ratio ||sum nu_l||^2 / sum ||nu_l||^2 for a family of
/// pairwise 1-separated dipoles, by exact bilinear expansion.
pub fn ell_coherence_ratio(p: &KernelParams, dipoles: &[Dipole]) -> Result<f64> {
    let denom: f64 = dipoles.iter().map(|nu| dipole_mmd_sq(p, nu)).sum();
    if denom <= 0.0 {
        return Err(Error::invalid(
            "ell-coherence ratio needs at least one nonzero dipole",
        ));
    }
    for (i, a) in dipoles.iter().enumerate() {
        for b in dipoles.iter().skip(i + 1) {
            for (wa, ta) in [(a.alpha1, &a.theta1), (a.alpha2, &a.theta2)] {
                for (wb, tb) in [(b.alpha1, &b.theta1), (b.alpha2, &b.theta2)] {
                    if wa > 0.0 && wb > 0.0 && p.rescaled_distance(ta, tb) < 1.0 - 1e-9 {
                        return Err(Error::invalid(
                            "dipoles must be pairwise 1-separated in the rescaled metric",
                        ));
                    }
                }
            }
        }
    }
    let mut total = 0.0;
    for (i, a) in dipoles.iter().enumerate() {
        total += dipole_mmd_sq(p, a);
        for b in dipoles.iter().skip(i + 1) {
            total += 2.0 * dipole_inner(p, a, b);
        }
    }
    Ok(total / denom)
}

/// Argmax configuration of the coherence search, in eps-rescaled
/// coordinates: each dipole is pole1 minus `weight` times pole2.
#[derive(Debug, Clone, Serialize)]
pub struct CoherencePair {
    pub pole1: Vec<f64>,
    pub pole2: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoherenceMeasurement {
    /// Largest |normalized inner product| found over 1-separated dipole pairs.
    pub max_observed: f64,
    /// Closed-form bound it is checked against.
    pub bound: f64,
    pub sigma: f64,
    pub trials: usize,
    pub argmax: (CoherencePair, CoherencePair),
}

/// State of the coherence ascent, in rescaled coordinates. Packing:
/// [x1, x2, x1', x2'] each of length d, then the two dipole weights.
struct CoherenceState {
    x: Vec<f64>,
    d: usize,
}

impl CoherenceState {
    fn pole(&self, idx: usize) -> &[f64] {
        &self.x[idx * self.d..(idx + 1) * self.d]
    }

    fn weight(&self, which: usize) -> f64 {
        self.x[4 * self.d + which]
    }

    /// Ratio objective F = g^2 / (n1 n2) and a validity flag for the
    /// near-degenerate corner where a dipole collapses to zero.
    fn objective(&self, sigma: f64) -> Option<f64> {
        let kf = |a: &[f64], b: &[f64]| {
            gaussian_profile(linalg::dist2(a, b), sigma).expect("distances are finite")
        };
        let (a, ap) = (self.weight(0), self.weight(1));
        let g = kf(self.pole(0), self.pole(2))
            - ap * kf(self.pole(0), self.pole(3))
            - a * kf(self.pole(1), self.pole(2))
            + a * ap * kf(self.pole(1), self.pole(3));
        let n1 = 1.0 + a * a - 2.0 * a * kf(self.pole(0), self.pole(1));
        let n2 = 1.0 + ap * ap - 2.0 * ap * kf(self.pole(2), self.pole(3));
        if n1 < 1e-10 || n2 < 1e-10 {
            return None;
        }
        Some(g * g / (n1 * n2))
    }

    fn gradient(&self, sigma: f64) -> Option<Vec<f64>> {
        let d = self.d;
        let kf = |a: &[f64], b: &[f64]| {
            gaussian_profile(linalg::dist2(a, b), sigma).expect("distances are finite")
        };
        let (a, ap) = (self.weight(0), self.weight(1));
        let k02 = kf(self.pole(0), self.pole(2));
        let k03 = kf(self.pole(0), self.pole(3));
        let k12 = kf(self.pole(1), self.pole(2));
        let k13 = kf(self.pole(1), self.pole(3));
        let k01 = kf(self.pole(0), self.pole(1));
        let k23 = kf(self.pole(2), self.pole(3));
        let g = k02 - ap * k03 - a * k12 + a * ap * k13;
        let n1 = 1.0 + a * a - 2.0 * a * k01;
        let n2 = 1.0 + ap * ap - 2.0 * ap * k23;
        if n1 < 1e-10 || n2 < 1e-10 {
            return None;
        }
        let inv_s2 = 1.0 / (sigma * sigma);
        // d/dx K(x, y) = -(x - y)/sigma^2 * K
        let mut grad = vec![0.0; 4 * d + 2];
        let add_pair = |grad: &mut Vec<f64>, i: usize, j: usize, coef: f64, kij: f64| {
            for t in 0..d {
                let diff = self.pole(i)[t] - self.pole(j)[t];
                let gk = -diff * inv_s2 * kij;
                grad[i * d + t] += coef * gk;
                grad[j * d + t] -= coef * gk;
            }
        };
        // dF = (2 g dg n1 n2 - g^2 (dn1 n2 + n1 dn2)) / (n1 n2)^2
        let scale_g = 2.0 * g / (n1 * n2);
        add_pair(&mut grad, 0, 2, scale_g, k02);
        add_pair(&mut grad, 0, 3, -ap * scale_g, k03);
        add_pair(&mut grad, 1, 2, -a * scale_g, k12);
        add_pair(&mut grad, 1, 3, a * ap * scale_g, k13);
        let scale_n1 = -g * g / (n1 * n1 * n2);
        add_pair(&mut grad, 0, 1, -2.0 * a * scale_n1, k01);
        let scale_n2 = -g * g / (n1 * n2 * n2);
        add_pair(&mut grad, 2, 3, -2.0 * ap * scale_n2, k23);
        // weights
        grad[4 * d] = scale_g * (-k12 + ap * k13) + scale_n1 * (2.0 * a - 2.0 * k01);
        grad[4 * d + 1] = scale_g * (-k03 + a * k13) + scale_n2 * (2.0 * ap - 2.0 * k23);
        Some(grad)
    }

    /// Project back onto the constraint set: weights in [0,1], intra-dipole
    /// distances <= 1, cross distances >= 1. Alternating repair; the
    /// constraints are mildly conflicting so a handful of rounds suffices.
    fn project(&mut self) {
        let d = self.d;
        self.x[4 * d] = self.x[4 * d].clamp(0.0, 1.0);
        self.x[4 * d + 1] = self.x[4 * d + 1].clamp(0.0, 1.0);
        for _ in 0..12 {
            let mut moved = false;
            for (hi, lo) in [(1usize, 0usize), (3, 2)] {
                let dist = linalg::dist2(self.pole(hi), self.pole(lo));
                if dist > 1.0 {
                    moved = true;
                    let scale = 1.0 / dist;
                    for t in 0..d {
                        let anchor = self.x[lo * d + t];
                        self.x[hi * d + t] = anchor + (self.x[hi * d + t] - anchor) * scale;
                    }
                }
            }
            for i in [0usize, 1] {
                for j in [2usize, 3] {
                    let dist = linalg::dist2(self.pole(i), self.pole(j));
                    if dist < 1.0 {
                        moved = true;
                        let push = if dist > 1e-12 {
                            (1.0 - dist) / dist / 2.0
                        } else {
                            0.5
                        };
                        for t in 0..d {
                            let diff = if dist > 1e-12 {
                                self.x[i * d + t] - self.x[j * d + t]
                            } else if t == 0 {
                                1.0
                            } else {
                                0.0
                            };
                            self.x[i * d + t] += diff * push;
                            self.x[j * d + t] -= diff * push;
                        }
                    }
                }
            }
            if !moved {
                break;
            }
        }
    }

    fn feasible(&self, tol: f64) -> bool {
        let intra = linalg::dist2(self.pole(0), self.pole(1)) <= 1.0 + tol
            && linalg::dist2(self.pole(2), self.pole(3)) <= 1.0 + tol;
        let mut cross = true;
        for i in [0usize, 1] {
            for j in [2usize, 3] {
                cross &= linalg::dist2(self.pole(i), self.pole(j)) >= 1.0 - tol;
            }
        }
        intra
            && cross
            && (0.0..=1.0).contains(&self.weight(0))
            && (0.0..=1.0).contains(&self.weight(1))
    }
}

/// Search for the largest coherence between 1-separated normalized dipole
/// pairs by projected gradient ascent from `trials` random starts, `budget`
/// ascent steps each. The returned maximum is an observation to hold
/// against the closed-form bound, not a certificate.
pub fn measure_mutual_coherence(
    p: &KernelParams,
    k: usize,
    trials: usize,
    seed: u64,
    budget: usize,
) -> Result<CoherenceMeasurement> {
    let sigma = p.effective_bandwidth();
    let sigma_star = critical_bandwidth(k);
    if sigma > sigma_star + 1e-12 {
        return Err(Error::OutOfDomain(format!(
            "mutual coherence search requires effective bandwidth {sigma} <= \
             critical bandwidth {sigma_star} for k = {k}"
        )));
    }
    let constants = coherence_constants_at(sigma, k)?;
    let d = p.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_f = 0.0f64;
    let mut best_state: Option<CoherenceState> = None;

    for _ in 0..trials.max(1) {
        let mut x = vec![0.0; 4 * d + 2];
        // first dipole near the origin, second at distance ~ [1, 4]
        let dir: Vec<f64> = {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = linalg::norm2(&v).max(1e-12);
            v.iter().map(|t| t / n).collect()
        };
        let gap = rng.random_range(1.0..4.0);
        for t in 0..d {
            x[t] = rng.random_range(-0.5..0.5);
            x[d + t] = x[t] + rng.random_range(-0.7..0.7);
            x[2 * d + t] = x[t] + gap * dir[t];
            x[3 * d + t] = x[2 * d + t] + rng.random_range(-0.7..0.7);
        }
        x[4 * d] = rng.random_range(0.0..1.0);
        x[4 * d + 1] = rng.random_range(0.0..1.0);
        let mut state = CoherenceState { x, d };
        state.project();
        let mut f = match state.objective(sigma) {
            Some(v) => v,
            None => continue,
        };
        let mut step = 0.5 * sigma * sigma;
        for _ in 0..budget {
            let grad = match state.gradient(sigma) {
                Some(g) => g,
                None => break,
            };
            let gnorm = linalg::norm2(&grad);
            if gnorm < 1e-15 {
                break;
            }
            let mut accepted = false;
            for _ in 0..40 {
                let mut trial = CoherenceState {
                    x: state
                        .x
                        .iter()
                        .zip(&grad)
                        .map(|(xi, gi)| xi + step * gi)
                        .collect(),
                    d,
                };
                trial.project();
                match trial.objective(sigma) {
                    Some(tf) if tf > f => {
                        state = trial;
                        f = tf;
                        step *= 1.4;
                        accepted = true;
                        break;
                    }
                    _ => step *= 0.5,
                }
            }
            if !accepted || step < 1e-16 {
                break;
            }
        }
        if f > best_f && state.feasible(1e-6) {
            best_f = f;
            best_state = Some(state);
        }
    }

    let argmax = match &best_state {
        Some(st) => (
            CoherencePair {
                pole1: st.pole(0).to_vec(),
                pole2: st.pole(1).to_vec(),
                weight: st.weight(0),
            },
            CoherencePair {
                pole1: st.pole(2).to_vec(),
                pole2: st.pole(3).to_vec(),
                weight: st.weight(1),
            },
        ),
        None => {
            // fall back to the monopole pair at distance exactly 1
            let a = vec![0.0; d];
            let mut b = vec![0.0; d];
            b[0] = 1.0;
            best_f = gaussian_profile(1.0, sigma).unwrap().powi(2);
            (
                CoherencePair {
                    pole1: a.clone(),
                    pole2: a,
                    weight: 0.0,
                },
                CoherencePair {
                    pole1: b.clone(),
                    pole2: b,
                    weight: 0.0,
                },
            )
        }
    };

    Ok(CoherenceMeasurement {
        max_observed: best_f.sqrt(),
        bound: constants.mutual_coherence_bound,
        sigma,
        trials,
        argmax,
    })
}

// ----------------------------------------------------------------------------
// Hypothesis JSON interchange
// ----------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct HypothesisDoc {
    family: String,
    d: usize,
    k: usize,
    centroids: Vec<Vec<f64>>,
    alphas: Vec<f64>,
    eps: f64,
    #[serde(rename = "R")]
    r: f64,
}

/// JSON serializer emitting floats with 17 significant digits so documents
/// round-trip bit-exactly.
struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{value:.16e}")
    }
}

pub fn hypothesis_to_json(h: &Hypothesis, family: Family, eps: f64, r: f64) -> Result<String> {
    let doc = HypothesisDoc {
        family: match family {
            Family::DiracWeighted => "dirac".into(),
            Family::GaussianPlain => "gaussian".into(),
        },
        d: h.d(),
        k: h.k(),
        centroids: (0..h.k()).map(|i| h.centroid(i).to_vec()).collect(),
        alphas: h.alphas().to_vec(),
        eps,
        r,
    };
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFormatter);
    serde::Serialize::serialize(&doc, &mut ser)?;
    Ok(String::from_utf8(out).expect("json output is utf-8"))
}

pub fn hypothesis_from_json(text: &str) -> Result<(Hypothesis, Family, f64, f64)> {
    let doc: HypothesisDoc = serde_json::from_str(text)?;
    let family = match doc.family.as_str() {
        "dirac" => Family::DiracWeighted,
        "gaussian" => Family::GaussianPlain,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "unknown hypothesis family {other:?}"
            )))
        }
    };
    if doc.centroids.len() != doc.k {
        return Err(Error::Corruption("centroid count disagrees with k".into()));
    }
    let mut flat = Vec::with_capacity(doc.k * doc.d);
    for row in &doc.centroids {
        if row.len() != doc.d {
            return Err(Error::Corruption(
                "centroid row width disagrees with d".into(),
            ));
        }
        flat.extend_from_slice(row);
    }
    let centroids = Array2::from_shape_vec((doc.k, doc.d), flat)
        .map_err(|e| Error::Corruption(e.to_string()))?;
    let h = Hypothesis::new(centroids, Some(doc.alphas))?;
    Ok((h, family, doc.eps, doc.r))
}

pub fn save_hypothesis(
    path: &Path,
    h: &Hypothesis,
    family: Family,
    eps: f64,
    r: f64,
) -> Result<()> {
    std::fs::write(path, hypothesis_to_json(h, family, eps, r)?)?;
    Ok(())
}

pub fn load_hypothesis(path: &Path) -> Result<(Hypothesis, Family, f64, f64)> {
    let text = std::fs::read_to_string(path)?;
    hypothesis_from_json(&text)
}
