//! Closed-form Gaussian kernels and their mean embeddings.
//!
//! Two location families are supported: weighted Diracs (for sketched
//! clustering) and Gaussians with a fixed, known covariance (for sketched
//! mixture estimation). In both cases the kernel mean embedding between two
//! translates of the base distribution is an explicit Gaussian of the
//! parameter distance, which gives exact MMD values between finite mixtures
//! and exact coherence constants without any sampling.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mixture::MixtureModel;

/// Which base distribution the feature map and frequency distribution target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Diracs sketched with frequency-reweighted Fourier features.
    DiracWeighted,
    /// Gaussians with fixed covariance, plain Fourier features.
    GaussianPlain,
}

impl Family {
    pub fn tag(self) -> u8 {
        match self {
            Family::DiracWeighted => 0,
            Family::GaussianPlain => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Family::DiracWeighted),
            1 => Ok(Family::GaussianPlain),
            other => Err(Error::UnsupportedFormat(format!(
                "unknown family tag {other}"
            ))),
        }
    }
}

/// Kernel geometry shared by every stage: family, ambient dimension, scale of
/// the frequency distribution, separation scale, and the lower Cholesky
/// factor of the fixed covariance (identity for the Dirac family).
#[derive(Debug, Clone)]
pub struct KernelParams {
    pub family: Family,
    pub d: usize,
    pub s: f64,
    pub eps: f64,
    sigma_chol: Array2<f64>,
}

impl KernelParams {
    pub fn dirac(d: usize, s: f64, eps: f64) -> Result<Self> {
        Self::new(Family::DiracWeighted, d, s, eps, Array2::eye(d))
    }

    pub fn gaussian(d: usize, s: f64, eps: f64, sigma_chol: Array2<f64>) -> Result<Self> {
        Self::new(Family::GaussianPlain, d, s, eps, sigma_chol)
    }

    pub fn new(
        family: Family,
        d: usize,
        s: f64,
        eps: f64,
        sigma_chol: Array2<f64>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::invalid(format!("scale s must be positive, got {s}")));
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::invalid(format!(
                "separation eps must be positive, got {eps}"
            )));
        }
        if sigma_chol.nrows() != d || sigma_chol.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigma_chol.nrows(),
            });
        }
        for i in 0..d {
            if !(sigma_chol[[i, i]] > 0.0) {
                return Err(Error::invalid(
                    "sigma_chol must have strictly positive diagonal",
                ));
            }
            for j in i + 1..d {
                if sigma_chol[[i, j]] != 0.0 {
                    return Err(Error::invalid("sigma_chol must be lower triangular"));
                }
            }
        }
        if family == Family::DiracWeighted {
            let eye: Array2<f64> = Array2::eye(d);
            if sigma_chol != eye {
                return Err(Error::invalid(
                    "the Dirac family uses the identity covariance",
                ));
            }
        }
        Ok(KernelParams {
            family,
            d,
            s,
            eps,
            sigma_chol,
        })
    }

    pub fn sigma_chol(&self) -> ArrayView2<'_, f64> {
        self.sigma_chol.view()
    }

    /// Kernel bandwidth in parameter space before rescaling by eps:
    /// `s` for Diracs, `sqrt(2 + s^2)` for Gaussians (base-distribution
    /// smoothing widens the effective kernel).
    pub fn bandwidth(&self) -> f64 {
        match self.family {
            Family::DiracWeighted => self.s,
            Family::GaussianPlain => (2.0 + self.s * self.s).sqrt(),
        }
    }

    /// Bandwidth of the normalized kernel in the eps-rescaled metric.
    pub fn effective_bandwidth(&self) -> f64 {
        self.bandwidth() / self.eps
    }

    /// Squared kernel norm of the base distribution. For Diracs this is
    /// 1 / (4 + 2/d), the exact normalization of the reweighted frequency
    /// density; for Gaussians it is (1 + 2/s^2)^(-d/2).
    pub fn base_norm_sq(&self) -> f64 {
        match self.family {
            Family::DiracWeighted => 1.0 / dirac_weight_second_moment(self.d),
            Family::GaussianPlain => (1.0 + 2.0 / (self.s * self.s)).powf(-(self.d as f64) / 2.0),
        }
    }

    /// Kernel norm of the base distribution.
    pub fn base_norm(&self) -> f64 {
        self.base_norm_sq().sqrt()
    }

    /// Distance in the family metric: Euclidean for Diracs, Mahalanobis for
    /// Gaussians (computed through the Cholesky factor).
    pub fn metric_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        match self.family {
            Family::DiracWeighted => linalg::norm2(&diff),
            Family::GaussianPlain => linalg::mahalanobis_norm(self.sigma_chol.view(), &diff),
        }
    }

    /// Distance rescaled so that the separation constraint reads `>= 2`.
    pub fn rescaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.metric_distance(a, b) / self.eps
    }

    pub fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Structural compatibility for mixture comparisons.
    pub fn compatible(&self, other: &KernelParams) -> bool {
        self.family == other.family
            && self.d == other.d
            && self.s == other.s
            && self.eps == other.eps
            && self.sigma_chol == other.sigma_chol
    }
}

/// Second moment of the Dirac feature weight under the base Gaussian
/// frequency draw; equals 4 + 2/d exactly.
pub fn dirac_weight_second_moment(d: usize) -> f64 {
    4.0 + 2.0 / d as f64
}

/// Gaussian profile `exp(-u^2 / (2 sigma^2))`: the normalized kernel as a
/// function of rescaled parameter distance.
pub fn gaussian_profile(u: f64, sigma: f64) -> Result<f64> {
    if !u.is_finite() || u < 0.0 {
        return Err(Error::invalid(format!(
            "u must be finite and >= 0, got {u}"
        )));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "sigma must be finite and positive, got {sigma}"
        )));
    }
    Ok((-u * u / (2.0 * sigma * sigma)).exp())
}

/// A kernel evaluation, both unnormalized and normalized.
#[derive(Debug, Clone, Copy)]
pub struct KernelValue {
    /// Normalized kernel in [-1, 1]; equals the Gaussian profile of the
    /// rescaled distance.
    pub value: f64,
    /// Mean-embedding value before normalization by the base norm.
    pub raw: f64,
}

/// Mean-embedding kernel between two translates of the base distribution.
pub fn mean_embedding_kernel(
    p: &KernelParams,
    theta: &[f64],
    theta_prime: &[f64],
) -> Result<KernelValue> {
    p.check_dim(theta)?;
    p.check_dim(theta_prime)?;
    let dist = p.metric_distance(theta, theta_prime);
    let raw = match p.family {
        Family::DiracWeighted => p.base_norm_sq() * (-dist * dist / (2.0 * p.s * p.s)).exp(),
        Family::GaussianPlain => {
            p.base_norm_sq() * (-dist * dist / (2.0 * (2.0 + p.s * p.s))).exp()
        }
    };
    let value = raw / p.base_norm_sq();
    Ok(KernelValue { value, raw })
}

/// Maximum mean discrepancy between two mixtures of the same family,
/// evaluated through the closed-form bilinear expansion.
pub fn mmd(p: &KernelParams, tau: &MixtureModel, tau_prime: &MixtureModel) -> Result<f64> {
    if !p.compatible(tau.params()) || !p.compatible(tau_prime.params()) {
        return Err(Error::FamilyMismatch(
            "mixtures must share family, dimension, scale and covariance".into(),
        ));
    }
    let gram = |a: &MixtureModel, b: &MixtureModel| -> Result<f64> {
        let mut acc = 0.0;
        for (wa, ca) in a.components() {
            for (wb, cb) in b.components() {
                acc += wa * wb * mean_embedding_kernel(p, ca, cb)?.raw;
            }
        }
        Ok(acc)
    };
    let aa = gram(tau, tau)?;
    let bb = gram(tau_prime, tau_prime)?;
    let ab = gram(tau, tau_prime)?;
    Ok((aa - 2.0 * ab + bb).max(0.0).sqrt())
}

/// Critical normalized bandwidth `1 / (4 sqrt(log(e k)))` below which the
/// coherence bounds for k-component mixtures hold.
pub fn critical_bandwidth(k: usize) -> f64 {
    assert!(k >= 1);
    1.0 / (4.0 * (1.0 + (k as f64).ln()).sqrt())
}

/// Separation for which the effective bandwidth lands exactly at the
/// critical value for k components.
pub fn separation_for_scale(family: Family, s: f64, k: usize) -> f64 {
    let bandwidth = match family {
        Family::DiracWeighted => s,
        Family::GaussianPlain => (2.0 + s * s).sqrt(),
    };
    bandwidth / critical_bandwidth(k)
}

/// Coherence constants of the normalized Gaussian kernel at a given
/// component budget.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoherenceConstants {
    /// Effective (rescaled) bandwidth the constants were evaluated at.
    pub sigma: f64,
    /// Component budget.
    pub k: usize,
    /// Tail-curvature constant of the kernel profile,
    /// `2 sigma^-4 exp(-1/(2 sigma^2))`.
    pub kernel_constant: f64,
    /// Bound on the mutual coherence between 1-separated normalized dipoles.
    pub mutual_coherence_bound: f64,
    /// Critical bandwidth for this k.
    pub sigma_star: f64,
    /// Quasi-orthogonality defect bound for sums of up to 2k dipoles.
    pub ell_coherence_bound: f64,
}

/// Evaluate the closed-form coherence constants. Only valid for effective
/// bandwidth sigma <= 1/2; larger bandwidths are refused because the tail
/// analysis behind the closed form holds on sigma^2 <= 1/4 and the toolkit
/// never operates above the critical-bandwidth regime.
pub fn coherence_constants(p: &KernelParams, k: usize) -> Result<CoherenceConstants> {
    if k == 0 {
        return Err(Error::invalid("component budget k must be >= 1"));
    }
    let sigma = p.effective_bandwidth();
    coherence_constants_at(sigma, k)
}

/// Same as [`coherence_constants`] but at an explicit bandwidth.
pub fn coherence_constants_at(sigma: f64, k: usize) -> Result<CoherenceConstants> {
    if k == 0 {
        return Err(Error::invalid("component budget k must be >= 1"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if sigma > 0.5 {
        return Err(Error::OutOfDomain(format!(
            "coherence constants require effective bandwidth sigma <= 1/2 \
             (sigma^2 <= 1/4); got sigma = {sigma}"
        )));
    }
    let kernel_constant = kernel_tail_constant(sigma);
    let mutual_coherence_bound = 4.0 * kernel_constant;
    let ell = 2 * k;
    Ok(CoherenceConstants {
        sigma,
        k,
        kernel_constant,
        mutual_coherence_bound,
        sigma_star: critical_bandwidth(k),
        ell_coherence_bound: mutual_coherence_bound * (ell as f64 - 1.0),
    })
}

/// `2 sigma^-4 exp(-1/(2 sigma^2))`, the closed-form tail constant of the
/// Gaussian profile used in every coherence bound.
pub fn kernel_tail_constant(sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    2.0 / (s2 * s2) * (-1.0 / (2.0 * s2)).exp()
}
