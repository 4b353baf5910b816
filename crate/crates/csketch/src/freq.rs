//! Frequency sampling for the two designed distributions, and the on-disk
//! frequency-set format.
//!
//! The Dirac-family distribution reweights a Gaussian by the squared feature
//! weight `w(omega) = 1 + s^2 ||omega||^2 / d`. Writing `t = s^2 ||omega||^2`,
//! the radial law of `t` factorizes exactly into a three-component chi-square
//! mixture, so draws are one mixture pick plus one gamma variate plus a
//! uniform direction; no rejection step is needed, and the mixture
//! normalization `4 + 2/d` doubles as a free self-check of the sampler.
//!
//! All randomness flows through ChaCha8, a counter-based stream cipher RNG
//! with a published specification, so a `(d, m, s, seed)` tuple reproduces
//! the same frequency set on every platform. The seed is stored in the file.
//!
//! File layout (version 1, all integers and floats little-endian):
//!
//! ```text
//! magic "CSKF" | u32 version | u8 family | u32 d | u32 m | f64 s | f64 eps
//! | d*d f64 sigma_chol (row-major) | u64 seed | m*d f64 omegas (row-major)
//! | m f64 weights | 32-byte SHA-256 of all preceding bytes
//! ```

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::{dirac_weight_second_moment, Family, KernelParams};
use crate::linalg;

pub const FREQ_MAGIC: &[u8; 4] = b"CSKF";
pub const FREQ_FORMAT_VERSION: u32 = 1;

/// An immutable set of m sampled frequencies with weights, shared read-only
/// by every feature evaluation.
#[derive(Debug, Clone)]
pub struct FrequencySet {
    params: KernelParams,
    m: usize,
    omegas: Array2<f64>,
    weights: Vec<f64>,
    seed: u64,
    content_hash: [u8; 32],
}

impl FrequencySet {
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.params.d
    }

    pub fn omegas(&self) -> ArrayView2<'_, f64> {
        self.omegas.view()
    }

    pub fn omega(&self, j: usize) -> &[f64] {
        self.omegas.row(j).to_slice().unwrap()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Digest binding sketches to the exact frequency set they were built
    /// with.
    pub fn content_hash(&self) -> &[u8; 32] {
        &self.content_hash
    }

    fn assemble(params: KernelParams, omegas: Array2<f64>, weights: Vec<f64>, seed: u64) -> Self {
        let m = omegas.nrows();
        let mut fs = FrequencySet {
            params,
            m,
            omegas,
            weights,
            seed,
            content_hash: [0; 32],
        };
        let payload = fs.payload_bytes();
        fs.content_hash = sha256(&payload);
        fs
    }

    fn payload_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut buf = Vec::with_capacity(37 + 8 * (p.d * p.d + self.m * p.d + self.m) + 8);
        buf.extend_from_slice(FREQ_MAGIC);
        buf.extend_from_slice(&FREQ_FORMAT_VERSION.to_le_bytes());
        buf.push(p.family.tag());
        buf.extend_from_slice(&(p.d as u32).to_le_bytes());
        buf.extend_from_slice(&(self.m as u32).to_le_bytes());
        buf.extend_from_slice(&p.s.to_le_bytes());
        buf.extend_from_slice(&p.eps.to_le_bytes());
        for x in p.sigma_chol().iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for x in self.omegas.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for x in &self.weights {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf
    }
}

fn sha256(bytes: &[u8]) -> [u8; 32] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

fn unit_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = linalg::norm2(&v);
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Sample m frequencies for the Dirac family at scale s: radial mixture of
/// chi-squares in t = s^2 ||omega||^2, uniform direction.
pub fn sample_dirac_frequencies(
    d: usize,
    m: usize,
    s: f64,
    eps: f64,
    seed: u64,
) -> Result<FrequencySet> {
    let params = KernelParams::dirac(d, s, eps)?;
    if m == 0 {
        return Err(Error::invalid("need at least one frequency"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p1, p2, _p3) = dirac_radial_mixture_weights(d);
    let df = d as f64;
    // chi-square with f degrees of freedom = Gamma(f/2, scale 2)
    let comp = [
        Gamma::new(df / 2.0, 2.0).expect("valid shape"),
        Gamma::new(df / 2.0 + 1.0, 2.0).expect("valid shape"),
        Gamma::new(df / 2.0 + 2.0, 2.0).expect("valid shape"),
    ];
    let mut omegas = Array2::zeros((m, d));
    let mut weights = vec![0.0; m];
    for j in 0..m {
        let u: f64 = rng.random();
        let pick = if u < p1 {
            0
        } else if u < p1 + p2 {
            1
        } else {
            2
        };
        let t: f64 = comp[pick].sample(&mut rng);
        let dir = unit_direction(&mut rng, d);
        let radius = t.sqrt() / s;
        for (i, &di) in dir.iter().enumerate() {
            omegas[[j, i]] = radius * di;
        }
        weights[j] = 1.0 + t / df;
    }
    Ok(FrequencySet::assemble(params, omegas, weights, seed))
}

/// Mixture weights of the radial chi-square decomposition
/// `(1, 2, (d+2)/d) / (4 + 2/d)` over degrees of freedom d, d+2, d+4.
pub fn dirac_radial_mixture_weights(d: usize) -> (f64, f64, f64) {
    let df = d as f64;
    let norm = dirac_weight_second_moment(d);
    (1.0 / norm, 2.0 / norm, (df + 2.0) / df / norm)
}

/// Sample m frequencies for the Gaussian family: omega ~ N(0, s^-2 Sigma^-1),
/// realized by solving sigma_chol^T omega = z / s for standard normal z.
/// Weights are identically 1.
pub fn sample_gauss_frequencies(p: &KernelParams, m: usize, seed: u64) -> Result<FrequencySet> {
    if p.family != Family::GaussianPlain {
        return Err(Error::FamilyMismatch(
            "gaussian frequency sampling needs the Gaussian family".into(),
        ));
    }
    if m == 0 {
        return Err(Error::invalid("need at least one frequency"));
    }
    let chol = p.sigma_chol();
    for i in 0..p.d {
        if chol[[i, i]].abs() < 1e-300 {
            return Err(Error::invalid("singular covariance factor"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omegas = Array2::zeros((m, p.d));
    for j in 0..m {
        let z: Vec<f64> = (0..p.d)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g / p.s
            })
            .collect();
        let omega = linalg::solve_lower_transpose(chol, &z);
        for (i, &oi) in omega.iter().enumerate() {
            omegas[[j, i]] = oi;
        }
    }
    let weights = vec![1.0; m];
    Ok(FrequencySet::assemble(p.clone(), omegas, weights, seed))
}

pub fn save_frequencies(fs: &FrequencySet, path: &Path) -> Result<()> {
    let mut bytes = fs.payload_bytes();
    bytes.extend_from_slice(&fs.content_hash[..]);
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_frequencies(path: &Path) -> Result<FrequencySet> {
    let bytes = std::fs::read(path)?;
    parse_frequencies(&bytes)
}

pub fn parse_frequencies(bytes: &[u8]) -> Result<FrequencySet> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4)?;
    if magic != FREQ_MAGIC {
        return Err(Error::UnsupportedFormat(
            "not a frequency-set file (bad magic)".into(),
        ));
    }
    let version = cur.u32()?;
    if version != FREQ_FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "frequency file version {version}, expected {FREQ_FORMAT_VERSION}"
        )));
    }
    let family = Family::from_tag(cur.u8()?)?;
    let d = cur.u32()? as usize;
    let m = cur.u32()? as usize;
    let s = cur.f64()?;
    let eps = cur.f64()?;
    let mut chol = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            chol[[i, j]] = cur.f64()?;
        }
    }
    let seed = cur.u64()?;
    let mut omegas = Array2::zeros((m, d));
    for i in 0..m {
        for j in 0..d {
            omegas[[i, j]] = cur.f64()?;
        }
    }
    let mut weights = vec![0.0; m];
    for w in weights.iter_mut() {
        *w = cur.f64()?;
    }
    let payload_len = cur.pos;
    let stored = cur.take(32)?;
    if cur.pos != bytes.len() {
        return Err(Error::UnsupportedFormat(
            "trailing bytes after digest".into(),
        ));
    }
    let actual = sha256(&bytes[..payload_len]);
    if stored != actual {
        return Err(Error::Corruption("frequency file digest mismatch".into()));
    }
    let params = KernelParams::new(family, d, s, eps, chol)?;
    let fs = FrequencySet::assemble(params, omegas, weights, seed);
    debug_assert_eq!(&fs.content_hash[..], &actual[..]);
    Ok(fs)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::UnsupportedFormat("file truncated or empty".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn radial_mixture_weights_d2() {
        let (p1, p2, p3) = dirac_radial_mixture_weights(2);
        assert_relative_eq!(p1, 0.2, epsilon = 1e-15);
        assert_relative_eq!(p2, 0.4, epsilon = 1e-15);
        assert_relative_eq!(p3, 0.4, epsilon = 1e-15);
        assert_relative_eq!(p1 + p2 + p3, 1.0, epsilon = 1e-15);
    }

    // Quadrature oracle: the chi-square mixture CDF matches the normalized
    // integral of the raw radial density (1 + t/d)^2 chi2_d(t) / (4 + 2/d).
    #[test]
    fn radial_mixture_matches_quadrature_oracle() {
        for d in [1usize, 2, 3, 5] {
            let df = d as f64;
            let (p1, p2, p3) = dirac_radial_mixture_weights(d);
            let c_d = ChiSquared::new(df).unwrap();
            let c_d2 = ChiSquared::new(df + 2.0).unwrap();
            let c_d4 = ChiSquared::new(df + 4.0).unwrap();
            let density = |t: f64| {
                let w = 1.0 + t / df;
                // chi-square pdf via statrs, times the squared weight
                use statrs::distribution::Continuous;
                w * w * c_d.pdf(t) / dirac_weight_second_moment(d)
            };
            // Simpson on [0, X] after substituting t = x^2, which removes
            // the integrable t^(d/2 - 1) singularity at the origin for d < 2
            let quad_cdf = |upper: f64| {
                let n = 4000;
                let xmax = upper.sqrt();
                let h = xmax / n as f64;
                let g = |x: f64| {
                    let x = x.max(1e-10);
                    density(x * x) * 2.0 * x
                };
                let mut acc = g(0.0) + g(xmax);
                for i in 1..n {
                    acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
                }
                acc * h / 3.0
            };
            for x in [0.5, 1.0, 2.0, 5.0, 10.0] {
                let mixture = p1 * c_d.cdf(x) + p2 * c_d2.cdf(x) + p3 * c_d4.cdf(x);
                assert_relative_eq!(quad_cdf(x), mixture, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn dirac_sampler_deterministic() {
        let a = sample_dirac_frequencies(3, 50, 0.7, 1.0, 99).unwrap();
        let b = sample_dirac_frequencies(3, 50, 0.7, 1.0, 99).unwrap();
        assert_eq!(a.omegas(), b.omegas());
        assert_eq!(a.content_hash(), b.content_hash());
        let c = sample_dirac_frequencies(3, 50, 0.7, 1.0, 100).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn dirac_weights_match_radius() {
        let fs = sample_dirac_frequencies(4, 200, 1.3, 1.0, 1).unwrap();
        for j in 0..fs.m() {
            let r2: f64 = fs.omega(j).iter().map(|x| x * x).sum();
            let expected = 1.0 + fs.params().s.powi(2) * r2 / 4.0;
            assert_relative_eq!(fs.weights()[j], expected, epsilon = 1e-12);
            assert!(fs.weights()[j] >= 1.0);
        }
    }

    // Importance identity: the harmonic mean of w^2 over the sample recovers
    // the normalization 4 + 2/d within four standard errors at m = 1e5.
    #[test]
    fn dirac_importance_estimate_recovers_normalization() {
        let d = 3;
        let fs = sample_dirac_frequencies(d, 100_000, 0.9, 1.0, 7).unwrap();
        let inv: Vec<f64> = fs.weights().iter().map(|w| 1.0 / (w * w)).collect();
        let (mean, se) = linalg::mean_stderr(&inv);
        let target = 1.0 / dirac_weight_second_moment(d);
        assert!(
            (mean - target).abs() <= 4.0 * se,
            "mean {mean} vs {target} (se {se})"
        );
        let estimate = 1.0 / mean;
        assert_relative_eq!(estimate, 4.0 + 2.0 / 3.0, epsilon = 0.05);
    }

    // Kolmogorov-Smirnov distance between the empirical radial law of
    // s^2 ||omega||^2 and the analytic mixture CDF.
    #[test]
    fn dirac_radial_ks_distance_small() {
        let d = 2;
        let s = 1.1;
        let fs = sample_dirac_frequencies(d, 100_000, s, 1.0, 21).unwrap();
        let mut ts: Vec<f64> = (0..fs.m())
            .map(|j| {
                let r2: f64 = fs.omega(j).iter().map(|x| x * x).sum();
                s * s * r2
            })
            .collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (p1, p2, p3) = dirac_radial_mixture_weights(d);
        let c_d = ChiSquared::new(d as f64).unwrap();
        let c_d2 = ChiSquared::new(d as f64 + 2.0).unwrap();
        let c_d4 = ChiSquared::new(d as f64 + 4.0).unwrap();
        let mut ks = 0.0f64;
        let n = ts.len() as f64;
        for (i, &t) in ts.iter().enumerate() {
            let cdf = p1 * c_d.cdf(t) + p2 * c_d2.cdf(t) + p3 * c_d4.cdf(t);
            ks = ks.max(((i + 1) as f64 / n - cdf).abs());
            ks = ks.max((i as f64 / n - cdf).abs());
        }
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn dirac_directions_isotropic() {
        let fs = sample_dirac_frequencies(3, 100_000, 0.8, 1.0, 5).unwrap();
        let mut mean_dir = vec![0.0; 3];
        for j in 0..fs.m() {
            let o = fs.omega(j);
            let n = linalg::norm2(o);
            for (t, &oi) in o.iter().enumerate() {
                mean_dir[t] += oi / n;
            }
        }
        for v in mean_dir.iter_mut() {
            *v /= fs.m() as f64;
        }
        assert!(linalg::norm2(&mean_dir) < 0.02);
    }

    #[test]
    fn gauss_sampler_covariance() {
        let p = KernelParams::gaussian(2, 1.0, 1.0, Array2::eye(2)).unwrap();
        let fs = sample_gauss_frequencies(&p, 100_000, 3).unwrap();
        assert!(fs.weights().iter().all(|&w| w == 1.0));
        let mut cov = [[0.0f64; 2]; 2];
        for j in 0..fs.m() {
            let o = fs.omega(j);
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += o[a] * o[b];
                }
            }
        }
        for (a, row) in cov.iter_mut().enumerate() {
            for (b, entry) in row.iter_mut().enumerate() {
                *entry /= fs.m() as f64;
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((*entry - target).abs() < 0.02, "cov[{a}][{b}] = {entry}");
            }
        }
    }

    // E exp(-omega^T Sigma omega / 2) = (1 + 1/s^2)^(-d/2) for the Gaussian
    // frequency law (Gaussian-integral oracle).
    #[test]
    fn gauss_sampler_laplace_functional() {
        let s = 1.4;
        let d = 3;
        let p = KernelParams::gaussian(d, s, 1.0, Array2::eye(d)).unwrap();
        let fs = sample_gauss_frequencies(&p, 100_000, 11).unwrap();
        let vals: Vec<f64> = (0..fs.m())
            .map(|j| {
                let o = fs.omega(j);
                let q: f64 = o.iter().map(|x| x * x).sum();
                (-q / 2.0).exp()
            })
            .collect();
        let (mean, se) = linalg::mean_stderr(&vals);
        let target = (1.0 + 1.0 / (s * s)).powf(-(d as f64) / 2.0);
        assert!(
            (mean - target).abs() <= 4.0 * se,
            "mean {mean} vs {target} (se {se})"
        );
    }

    #[test]
    fn gauss_sampler_respects_covariance_factor() {
        // Sigma = L L^T with non-trivial correlation; empirical covariance of
        // omega should approximate s^-2 Sigma^-1.
        let l = ndarray::array![[1.0, 0.0], [0.8, 0.6]];
        let p = KernelParams::gaussian(2, 1.0, 1.0, l.clone()).unwrap();
        let fs = sample_gauss_frequencies(&p, 200_000, 17).unwrap();
        // Sigma^-1 = L^-T L^-1
        let sigma = l.dot(&l.t());
        let det = sigma[[0, 0]] * sigma[[1, 1]] - sigma[[0, 1]] * sigma[[1, 0]];
        let inv = [
            [sigma[[1, 1]] / det, -sigma[[0, 1]] / det],
            [-sigma[[1, 0]] / det, sigma[[0, 0]] / det],
        ];
        let mut cov = [[0.0f64; 2]; 2];
        for j in 0..fs.m() {
            let o = fs.omega(j);
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += o[a] * o[b];
                }
            }
        }
        for (a, row) in cov.iter().enumerate() {
            for (b, entry) in row.iter().enumerate() {
                let got = entry / fs.m() as f64;
                assert!(
                    (got - inv[a][b]).abs() < 0.05,
                    "cov[{a}][{b}] = {got}, want {}",
                    inv[a][b]
                );
            }
        }
    }

    #[test]
    fn file_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("freqs.cskf");
        let fs = sample_dirac_frequencies(3, 64, 0.5, 0.8, 4242).unwrap();
        save_frequencies(&fs, &path).unwrap();
        let back = load_frequencies(&path).unwrap();
        assert_eq!(fs.omegas(), back.omegas());
        assert_eq!(fs.weights(), back.weights());
        assert_eq!(fs.seed(), back.seed());
        assert_eq!(fs.content_hash(), back.content_hash());
        assert_eq!(fs.params().eps, back.params().eps);
    }

    #[test]
    fn corrupted_payload_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("freqs.cskf");
        let fs = sample_dirac_frequencies(2, 16, 0.5, 1.0, 1).unwrap();
        save_frequencies(&fs, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        match load_frequencies(&path) {
            Err(Error::Corruption(_)) => {}
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn empty_and_foreign_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.cskf");
        std::fs::write(&path, b"").unwrap();
        match load_frequencies(&path) {
            Err(Error::UnsupportedFormat(_)) => {}
            other => panic!("expected unsupported format, got {other:?}"),
        }
        std::fs::write(&path, b"NOPEnope").unwrap();
        match load_frequencies(&path) {
            Err(Error::UnsupportedFormat(_)) => {}
            other => panic!("expected unsupported format, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v2.cskf");
        let fs = sample_dirac_frequencies(2, 4, 0.5, 1.0, 1).unwrap();
        save_frequencies(&fs, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 2; // bump the version field
        std::fs::write(&path, &bytes).unwrap();
        match load_frequencies(&path) {
            Err(Error::UnsupportedFormat(msg)) => assert!(msg.contains("version")),
            other => panic!("expected unsupported format, got {other:?}"),
        }
    }
}
