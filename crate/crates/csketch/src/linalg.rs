//! Small dense helpers shared across the crate: dot products, triangular
//! solves against a Cholesky factor, compensated summation, simplex
//! projection, and a couple of scalar statistics used by the verifiers.

use ndarray::{Array2, ArrayView1, ArrayView2};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Solve L z = v with L lower triangular (forward substitution).
pub fn solve_lower(l: ArrayView2<f64>, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut acc = v[i];
        for j in 0..i {
            acc -= l[[i, j]] * z[j];
        }
        z[i] = acc / l[[i, i]];
    }
    z
}

/// Solve L^T z = v with L lower triangular (backward substitution).
pub fn solve_lower_transpose(l: ArrayView2<f64>, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = v[i];
        for j in i + 1..n {
            acc -= l[[j, i]] * z[j];
        }
        z[i] = acc / l[[i, i]];
    }
    z
}

/// Mahalanobis norm ||v||_Sigma = ||L^{-1} v||_2 given the lower Cholesky
/// factor of Sigma. Solving the triangular system avoids forming Sigma^{-1}.
pub fn mahalanobis_norm(l: ArrayView2<f64>, v: &[f64]) -> f64 {
    norm2(&solve_lower(l, v))
}

/// Quadratic form v^T Sigma v = ||L^T v||_2^2 given the lower Cholesky factor.
pub fn quadratic_form(l: ArrayView2<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        // (L^T v)_i = sum_{j >= i} L[j,i] v[j]
        let mut t = 0.0;
        for j in i..n {
            t += l[[j, i]] * v[j];
        }
        acc += t * t;
    }
    acc
}

/// Cholesky factorization of a symmetric positive definite matrix.
pub fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[[i, j]];
            for k in 0..j {
                acc -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if acc <= 0.0 {
                    return None;
                }
                l[[i, j]] = acc.sqrt();
            } else {
                l[[i, j]] = acc / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Kahan compensated accumulator. Streaming sketches can see n up to 1e8
/// samples; plain summation would drift past the merge tolerance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Dense linear solve by Gaussian elimination with partial pivoting.
/// Returns None on (numerical) singularity.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for (row, arow) in a.iter().enumerate() {
        if arow.len() != n {
            return None;
        }
        let _ = row;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    assert!(n > 0);
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j as f64 + 1.0);
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Mean / standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mut acc = Kahan::default();
    for &x in xs {
        acc.add(x);
    }
    let mean = acc.value() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ordinary least squares fit y = a + b x; returns (slope, intercept, r_squared).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|&v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, intercept, r2)
}

/// Empirical quantile by linear interpolation on sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

pub fn view1(v: &[f64]) -> ArrayView1<'_, f64> {
    ArrayView1::from(v)
}
