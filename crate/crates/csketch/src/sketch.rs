//! Feature maps, mergeable streaming sketches, and closed-form embeddings of
//! Diracs and Gaussians under the sketching operator.
//!
//! A sketch holds the *unnormalized* complex feature sums plus the sample
//! count; merging two sketches is exact (component-wise sum, integer count),
//! and the `1/(n sqrt(m))` normalization is applied only at finalize. While
//! streaming, per-coordinate compensated summation keeps the merge-versus-
//! single-pass divergence within the contracted 1e-12.
//!
//! Sketch file layout (version 1, little-endian):
//!
//! ```text
//! magic "CSKS" | u32 version | 32-byte freq hash | u32 m | u64 n
//! | 2m f64 interleaved (re, im) sums | 32-byte SHA-256 trailer
//! ```

use num_complex::Complex64;
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::freq::FrequencySet;
use crate::kernel::Family;
use crate::linalg::{self, Kahan};
use crate::mixture::Hypothesis;

pub const SKETCH_MAGIC: &[u8; 4] = b"CSKS";
pub const SKETCH_FORMAT_VERSION: u32 = 1;

/// Mergeable running sum of unnormalized features plus sample count.
#[derive(Debug, Clone)]
pub struct Sketch {
    freq_hash: [u8; 32],
    m: usize,
    sum: Vec<Complex64>,
    n: u64,
}

impl Sketch {
    pub fn empty(fs: &FrequencySet) -> Sketch {
        Sketch {
            freq_hash: *fs.content_hash(),
            m: fs.m(),
            sum: vec![Complex64::new(0.0, 0.0); fs.m()],
            n: 0,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn sum(&self) -> &[Complex64] {
        &self.sum
    }

    pub fn freq_hash(&self) -> &[u8; 32] {
        &self.freq_hash
    }

    pub fn matches(&self, fs: &FrequencySet) -> bool {
        &self.freq_hash == fs.content_hash() && self.m == fs.m()
    }

    /// Exact merge: component-wise sum of the running sums, sum of counts.
    pub fn merge(&self, other: &Sketch) -> Result<Sketch> {
        if self.freq_hash != other.freq_hash {
            return Err(Error::IncompatibleSketch(
                "sketches were built from different frequency sets".into(),
            ));
        }
        if self.m != other.m {
            return Err(Error::IncompatibleSketch(format!(
                "sketch sizes differ: {} vs {}",
                self.m, other.m
            )));
        }
        let sum = self
            .sum
            .iter()
            .zip(&other.sum)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Sketch {
            freq_hash: self.freq_hash,
            m: self.m,
            sum,
            n: self.n + other.n,
        })
    }

    /// Normalized sketch vector `y = sum / (n sqrt(m))`.
    pub fn finalize(&self) -> Result<Vec<Complex64>> {
        if self.n == 0 {
            return Err(Error::EmptySketch);
        }
        let scale = 1.0 / (self.n as f64 * (self.m as f64).sqrt());
        Ok(self.sum.iter().map(|z| z * scale).collect())
    }
}

/// Evaluate the feature map at one sample:
/// `Phi(x)_j = exp(i omega_j . x) / (sqrt(m) w_j)`.
pub fn feature_map(fs: &FrequencySet, x: &[f64]) -> Result<Vec<Complex64>> {
    fs.params().check_dim(x)?;
    let root_m = (fs.m() as f64).sqrt();
    let mut out = Vec::with_capacity(fs.m());
    for j in 0..fs.m() {
        let phase = linalg::dot(fs.omega(j), x);
        let (sin, cos) = phase.sin_cos();
        let scale = 1.0 / (root_m * fs.weights()[j]);
        out.push(Complex64::new(cos * scale, sin * scale));
    }
    Ok(out)
}

/// Sketch a stream of samples. Accumulation is compensated per coordinate;
/// the stored sums carry no `1/sqrt(m)` factor.
pub fn sketch_stream<'a, I>(fs: &FrequencySet, data: I) -> Result<Sketch>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let m = fs.m();
    let mut re = vec![Kahan::default(); m];
    let mut im = vec![Kahan::default(); m];
    let mut n = 0u64;
    for x in data {
        fs.params().check_dim(x)?;
        for j in 0..m {
            let phase = linalg::dot(fs.omega(j), x);
            let (sin, cos) = phase.sin_cos();
            let w = fs.weights()[j];
            re[j].add(cos / w);
            im[j].add(sin / w);
        }
        n += 1;
    }
    let sum = re
        .iter()
        .zip(&im)
        .map(|(r, i)| Complex64::new(r.value(), i.value()))
        .collect();
    Ok(Sketch {
        freq_hash: *fs.content_hash(),
        m,
        sum,
        n,
    })
}

/// Closed-form embedding of one mixture component under the sketching
/// operator: the feature map itself for a Dirac, the characteristic-function
/// damped features for a Gaussian.
pub fn atom_embedding(fs: &FrequencySet, c: &[f64]) -> Result<Vec<Complex64>> {
    fs.params().check_dim(c)?;
    match fs.params().family {
        Family::DiracWeighted => feature_map(fs, c),
        Family::GaussianPlain => {
            let root_m = (fs.m() as f64).sqrt();
            let chol = fs.params().sigma_chol();
            let mut out = Vec::with_capacity(fs.m());
            for j in 0..fs.m() {
                let omega = fs.omega(j);
                let phase = linalg::dot(omega, c);
                let (sin, cos) = phase.sin_cos();
                let damp = (-linalg::quadratic_form(chol, omega) / 2.0).exp() / root_m;
                out.push(Complex64::new(cos * damp, sin * damp));
            }
            Ok(out)
        }
    }
}

/// Sketch of a full mixture: the weight-linear combination of atom
/// embeddings.
pub fn sketch_of_mixture(fs: &FrequencySet, h: &Hypothesis) -> Result<Vec<Complex64>> {
    if h.d() != fs.d() {
        return Err(Error::DimensionMismatch {
            expected: fs.d(),
            got: h.d(),
        });
    }
    let alphas = h.alphas();
    let total: f64 = alphas.iter().sum();
    if (total - 1.0).abs() > 1e-9 || alphas.iter().any(|&a| a < 0.0) {
        return Err(Error::invalid("mixture weights must lie on the simplex"));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); fs.m()];
    for i in 0..h.k() {
        let atom = atom_embedding(fs, h.centroid(i))?;
        for (acc, a) in out.iter_mut().zip(&atom) {
            *acc += alphas[i] * a;
        }
    }
    Ok(out)
}

pub fn save_sketch(sk: &Sketch, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + 4 + 32 + 4 + 8 + 16 * sk.m + 32);
    buf.extend_from_slice(SKETCH_MAGIC);
    buf.extend_from_slice(&SKETCH_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&sk.freq_hash);
    buf.extend_from_slice(&(sk.m as u32).to_le_bytes());
    buf.extend_from_slice(&sk.n.to_le_bytes());
    for z in &sk.sum {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_sketch(path: &Path) -> Result<Sketch> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 + 4 + 32 + 4 + 8 + 32 {
        return Err(Error::UnsupportedFormat("file truncated or empty".into()));
    }
    if &bytes[0..4] != SKETCH_MAGIC {
        return Err(Error::UnsupportedFormat(
            "not a sketch file (bad magic)".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SKETCH_FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "sketch file version {version}, expected {SKETCH_FORMAT_VERSION}"
        )));
    }
    let mut freq_hash = [0u8; 32];
    freq_hash.copy_from_slice(&bytes[8..40]);
    let m = u32::from_le_bytes(bytes[40..44].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[44..52].try_into().unwrap());
    let need = 52 + 16 * m + 32;
    if bytes.len() != need {
        return Err(Error::UnsupportedFormat(format!(
            "sketch file length {} does not match m = {m}",
            bytes.len()
        )));
    }
    let payload_end = 52 + 16 * m;
    let digest = Sha256::digest(&bytes[..payload_end]);
    if digest[..] != bytes[payload_end..] {
        return Err(Error::Corruption("sketch file digest mismatch".into()));
    }
    let mut sum = Vec::with_capacity(m);
    for j in 0..m {
        let off = 52 + 16 * j;
        let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
        sum.push(Complex64::new(re, im));
    }
    Ok(Sketch {
        freq_hash,
        m,
        sum,
        n,
    })
}

pub fn complex_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn complex_dist(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}
