//! Numerical verification of the probabilistic claims behind the pipeline:
//! restricted-isometry ratios of the random sketching operator on separated
//! mixtures, frequency-moment bounds, the small-separation blow-up that
//! makes the separation constraint necessary, and the Pinsker-type
//! domination of sketch distances by KL divergence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::freq::{sample_dirac_frequencies, sample_gauss_frequencies, FrequencySet};
#[cfg(test)]
use crate::kernel::mean_embedding_kernel;
use crate::kernel::{mmd, Family, KernelParams};
use crate::linalg;
use crate::mixture::{Hypothesis, MixtureModel};
use crate::sketch::{complex_dist, sketch_of_mixture};
use crate::synth::random_separated_hypothesis;

#[derive(Debug, Clone, Serialize)]
pub struct RipReport {
    pub trials: usize,
    /// Squared sketch distance over squared MMD, one entry per usable trial.
    pub ratios: Vec<f64>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub s: f64,
    pub eps: f64,
    pub seed: u64,
}

/// Sample pairs of random 2eps-separated mixtures in the radius-r ball and
/// record the isometry ratio of the sketching operator on their difference.
pub fn empirical_rip(
    fs: &FrequencySet,
    k: usize,
    r: f64,
    trials: usize,
    seed: u64,
) -> Result<RipReport> {
    let p = fs.params();
    if p.eps > r {
        return Err(Error::invalid(format!(
            "infeasible geometry: eps = {} exceeds r = {r}",
            p.eps
        )));
    }
    let mut ratios = Vec::with_capacity(trials);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        rng.set_stream(trial as u64);
        let ha = random_separated_hypothesis(p, k, r, true, &mut rng)?;
        let hb = random_separated_hypothesis(p, k, r, true, &mut rng)?;
        let tau = MixtureModel::new(p.clone(), ha.clone())?;
        let tau_p = MixtureModel::new(p.clone(), hb.clone())?;
        let denom = mmd(p, &tau, &tau_p)?;
        if denom * denom < 1e-24 {
            continue; // identical mixtures carry no secant information
        }
        let ya = sketch_of_mixture(fs, &ha)?;
        let yb = sketch_of_mixture(fs, &hb)?;
        let num = complex_dist(&ya, &yb);
        ratios.push((num * num) / (denom * denom));
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(RipReport {
        trials,
        ratios,
        min_ratio,
        max_ratio,
        m: fs.m(),
        k,
        d: p.d,
        s: p.s,
        eps: p.eps,
        seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentBoundReport {
    pub q: u32,
    pub lhs_mc: f64,
    pub stderr: f64,
    pub rhs: f64,
    pub pass: bool,
    pub samples: usize,
}

/// Monte-Carlo check of the frequency-moment bound: the 2q-th moment of the
/// base-feature magnitude times a directional frequency power stays below
/// the closed-form right-hand side.
pub fn moment_bound_check(
    p: &KernelParams,
    q: u32,
    mc_samples: usize,
    seed: u64,
) -> Result<MomentBoundReport> {
    if !(2..=4).contains(&q) {
        return Err(Error::invalid("moment order q must be 2, 3, or 4"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // uniform unit direction, mapped so its rescaled norm is 1
    let v: Vec<f64> = {
        let z: Vec<f64> = (0..p.d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = linalg::norm2(&z).max(1e-12);
        z.iter().map(|x| x / n).collect()
    };
    let u: Vec<f64> = match p.family {
        Family::DiracWeighted => v.iter().map(|x| x * p.eps).collect(),
        Family::GaussianPlain => {
            // u = eps L v has Mahalanobis norm eps
            let l = p.sigma_chol();
            (0..p.d)
                .map(|i| {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += l[[i, j]] * v[j];
                    }
                    acc * p.eps
                })
                .collect()
        }
    };

    let fs = match p.family {
        Family::DiracWeighted => {
            sample_dirac_frequencies(p.d, mc_samples, p.s, p.eps, seed.wrapping_add(1))?
        }
        Family::GaussianPlain => sample_gauss_frequencies(p, mc_samples, seed.wrapping_add(1))?,
    };
    let chol = p.sigma_chol();
    let vals: Vec<f64> = (0..fs.m())
        .map(|j| {
            let omega = fs.omega(j);
            let base_mag = match p.family {
                Family::DiracWeighted => 1.0 / fs.weights()[j],
                Family::GaussianPlain => (-linalg::quadratic_form(chol, omega) / 2.0).exp(),
            };
            let dir = linalg::dot(omega, &u);
            base_mag.powi(2 * q as i32) * dir.powi(2 * q as i32)
        })
        .collect();
    let (lhs_mc, stderr) = linalg::mean_stderr(&vals);
    let factorial: f64 = (1..=q as u64).map(|x| x as f64).product();
    let bandwidth = p.bandwidth();
    let rhs = p.base_norm_sq()
        * (2.0 * p.eps * p.eps / (bandwidth * bandwidth)).powi(q as i32)
        * factorial
        / 2.0;
    Ok(MomentBoundReport {
        q,
        lhs_mc,
        stderr,
        rhs,
        pass: lhs_mc - 4.0 * stderr <= rhs,
        samples: mc_samples,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WitnessRow {
    pub eps: f64,
    /// Lower bound p (R/2)^p eps / R on the excess-loss gap of the witness.
    pub loss_gap_lower: f64,
    /// Exact witness value (R/2)^p ((1 + eps/R)^p - 1) + (eps/2)^p.
    pub loss_gap_exact: f64,
    /// || A(tau) - A(tau') ||_2 on the supplied frequency set.
    pub sketch_gap: f64,
    /// loss_gap_lower / sketch_gap; diverges as eps -> 0.
    pub ratio: f64,
}

/// Build the two-Dirac witness pair at each separation: tau places half
/// masses at +-(eps/2) e1, tau' a unit mass at the origin. The loss gap
/// stays linear in eps while the sketch gap is quadratic, so the ratio
/// blows up as eps shrinks.
pub fn separation_witness(
    eps_list: &[f64],
    r: f64,
    p_pow: u32,
    fs: &FrequencySet,
) -> Result<Vec<WitnessRow>> {
    if !(p_pow == 1 || p_pow == 2) {
        return Err(Error::invalid("witness power must be 1 or 2"));
    }
    let d = fs.d();
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        if !(eps > 0.0 && eps <= r) {
            return Err(Error::invalid(format!(
                "witness separation must satisfy 0 < eps <= R, got eps = {eps}"
            )));
        }
        let mut plus = vec![0.0; d];
        let mut minus = vec![0.0; d];
        plus[0] = eps / 2.0;
        minus[0] = -eps / 2.0;
        let tau = Hypothesis::new(
            ndarray::Array2::from_shape_vec((2, d), [plus, minus].concat()).expect("witness shape"),
            Some(vec![0.5, 0.5]),
        )?;
        let tau_prime = Hypothesis::new(ndarray::Array2::zeros((1, d)), None)?;
        let ya = sketch_of_mixture(fs, &tau)?;
        let yb = sketch_of_mixture(fs, &tau_prime)?;
        let sketch_gap = complex_dist(&ya, &yb);
        let half_r = r / 2.0;
        let loss_gap_exact = half_r.powi(p_pow as i32) * ((1.0 + eps / r).powi(p_pow as i32) - 1.0)
            + (eps / 2.0).powi(p_pow as i32);
        let loss_gap_lower = p_pow as f64 * half_r.powi(p_pow as i32) * eps / r;
        rows.push(WitnessRow {
            eps,
            loss_gap_lower,
            loss_gap_exact,
            sketch_gap,
            ratio: loss_gap_lower / sketch_gap,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct PinskerReport {
    pub trials: usize,
    pub failures: usize,
    /// Per-trial slack sqrt(2 KL) - ||A(pi) - A(pi*)||_2 (nonnegative when
    /// the inequality holds).
    pub margins: Vec<f64>,
    pub kl: f64,
    pub kl_bound: f64,
    pub mmd_closed_form: f64,
}

/// Check || A(pi) - A(pi*) ||_2 <= sqrt(2 KL(pi || pi*)) for two Gaussians
/// with the model covariance, over fresh frequency draws per trial.
pub fn pinsker_check(
    p: &KernelParams,
    theta: &[f64],
    theta_prime: &[f64],
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<PinskerReport> {
    if p.family != Family::GaussianPlain {
        return Err(Error::FamilyMismatch(
            "the Pinsker comparison applies to the Gaussian family".into(),
        ));
    }
    p.check_dim(theta)?;
    p.check_dim(theta_prime)?;
    let kl = {
        let diff: Vec<f64> = theta.iter().zip(theta_prime).map(|(a, b)| a - b).collect();
        let m_norm = linalg::mahalanobis_norm(p.sigma_chol(), &diff);
        0.5 * m_norm * m_norm
    };
    let kl_bound = (2.0 * kl).sqrt();
    let mk_hyp = |c: &[f64]| {
        Hypothesis::new(
            ndarray::Array2::from_shape_vec((1, p.d), c.to_vec()).expect("single row"),
            None,
        )
    };
    let ha = mk_hyp(theta)?;
    let hb = mk_hyp(theta_prime)?;
    let mmd_closed_form = {
        let ta = MixtureModel::new(p.clone(), ha.clone())?;
        let tb = MixtureModel::new(p.clone(), hb.clone())?;
        mmd(p, &ta, &tb)?
    };
    let mut margins = Vec::with_capacity(trials);
    let mut failures = 0;
    for t in 0..trials {
        let fs = sample_gauss_frequencies(p, m, seed.wrapping_add(t as u64))?;
        let ya = sketch_of_mixture(&fs, &ha)?;
        let yb = sketch_of_mixture(&fs, &hb)?;
        let left = complex_dist(&ya, &yb);
        let margin = kl_bound - left;
        if margin < 0.0 {
            failures += 1;
        }
        margins.push(margin);
    }
    Ok(PinskerReport {
        trials,
        failures,
        margins,
        kl,
        kl_bound,
        mmd_closed_form,
    })
}

/// Convenience: tail-deviation quantile of |ratio - 1| from a RIP report.
pub fn rip_deviation_quantile(report: &RipReport, q: f64) -> f64 {
    let mut devs: Vec<f64> = report.ratios.iter().map(|r| (r - 1.0).abs()).collect();
    devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    linalg::quantile(&devs, q)
}

/// The squared sketch gap, exposed for slope studies over m.
pub fn sketch_gap_sq(fs: &FrequencySet, a: &Hypothesis, b: &Hypothesis) -> Result<f64> {
    let ya = sketch_of_mixture(fs, a)?;
    let yb = sketch_of_mixture(fs, b)?;
    let gap = complex_dist(&ya, &yb);
    Ok(gap * gap)
}

/// Closed-form check value ||pi_0||^2 used by report consumers.
pub fn base_norm_sq(p: &KernelParams) -> f64 {
    p.base_norm_sq()
}

/// One-sided monotone-quantile audit used by the concentration check: the
/// 0.99-quantile of |ratio - 1| should shrink as m grows, allowing at most
/// one inversion per run.
pub fn quantile_inversions(quantiles: &[f64]) -> usize {
    quantiles
        .windows(2)
        .filter(|w| w[1] > w[0] * (1.0 + 1e-12))
        .count()
}
