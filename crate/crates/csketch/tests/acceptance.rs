//! Acceptance suite: one test per release criterion, each printing a
//! [PASS] line with the measured values (run with --nocapture to see them).

use ndarray::{Array2, ArrayView2};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

use csketch::checks::{
    empirical_rip, moment_bound_check, rip_deviation_quantile, separation_witness,
};
use csketch::decode::{decode_gmm, proxy_objective_gradient, DecodeConfig, DecodeMode};
use csketch::freq::{
    load_frequencies, sample_dirac_frequencies, sample_gauss_frequencies, save_frequencies,
};
use csketch::hungarian::min_cost_assignment;
use csketch::kernel::{
    coherence_constants_at, critical_bandwidth, dirac_weight_second_moment, kernel_tail_constant,
    mean_embedding_kernel, separation_for_scale, Family, KernelParams,
};
use csketch::linalg;
use csketch::mixture::{
    decompose_into_dipoles, dipole_mmd_sq, ell_coherence_ratio, hypothesis_from_json,
    hypothesis_to_json, measure_mutual_coherence, Dipole, Hypothesis, MixtureModel,
};
use csketch::risk::{
    clustering_risk, cover_postconditions_hold, hypothesis_distance, kl_gaussians, separated_cover,
    Task,
};
use csketch::sketch::{complex_dist, complex_norm, load_sketch, save_sketch, sketch_stream};
use csketch::synth::{
    em_fixed_cov, phase_diagram, phase_regression, random_separated_hypothesis, run_pipeline,
    ExperimentConfig, PipelineCell,
};

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = linalg::norm2(&z).max(1e-12);
    z.iter().map(|x| x / n).collect()
}

fn random_lower_chol(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    let mut l = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..i {
            l[[i, j]] = rng.random_range(-0.3..0.3);
        }
        l[[i, i]] = rng.random_range(0.6..1.4);
    }
    l
}

fn mahalanobis(chol: ArrayView2<f64>, a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    linalg::mahalanobis_norm(chol, &diff)
}

// Criterion 1: closed-form mean-embedding kernels match Monte-Carlo double
// expectations within 4 standard errors at 1e6 draws, 20 random settings.
#[test]
fn criterion_01_kernel_closed_forms_match_monte_carlo() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let n = 1_000_000usize;
    let mut worst_sigma_gap = 0.0f64;

    // ten Gaussian-family settings: MC over sample pairs
    for setting in 0..10 {
        let d = rng.random_range(1..4usize);
        let s = rng.random_range(0.8..2.5);
        let chol = random_lower_chol(&mut rng, d);
        let p = KernelParams::gaussian(d, s, 1.0, chol.clone()).unwrap();
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta_p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact = mean_embedding_kernel(&p, &theta, &theta_p).unwrap().raw;

        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let sample = |c: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                (0..d)
                    .map(|row| {
                        let mut acc = c[row];
                        for col in 0..=row {
                            acc += chol[[row, col]] * z[col];
                        }
                        acc
                    })
                    .collect()
            };
            let x = sample(&theta, &mut rng);
            let xp = sample(&theta_p, &mut rng);
            let dist = mahalanobis(chol.view(), &x, &xp);
            draws.push((-dist * dist / (2.0 * s * s)).exp());
        }
        let (mean, se) = linalg::mean_stderr(&draws);
        let gap = (mean - exact).abs() / se;
        worst_sigma_gap = worst_sigma_gap.max(gap);
        assert!(
            gap <= 4.0,
            "gaussian setting {setting}: exact {exact}, mc {mean} ({gap:.2} se)"
        );
    }

    // ten Dirac-family settings: MC over frequency draws
    for setting in 0..10 {
        let d = rng.random_range(1..4usize);
        let s = rng.random_range(0.4..1.5);
        let p = KernelParams::dirac(d, s, 1.0).unwrap();
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta_p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact = mean_embedding_kernel(&p, &theta, &theta_p).unwrap().raw;

        let fs = sample_dirac_frequencies(d, n, s, 1.0, 9000 + setting as u64).unwrap();
        let delta: Vec<f64> = theta.iter().zip(&theta_p).map(|(a, b)| a - b).collect();
        let draws: Vec<f64> = (0..fs.m())
            .map(|j| {
                let w = fs.weights()[j];
                (linalg::dot(fs.omega(j), &delta)).cos() / (w * w)
            })
            .collect();
        let (mean, se) = linalg::mean_stderr(&draws);
        let gap = (mean - exact).abs() / se;
        worst_sigma_gap = worst_sigma_gap.max(gap);
        assert!(
            gap <= 4.0,
            "dirac setting {setting}: exact {exact}, mc {mean} ({gap:.2} se)"
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 1 min");
    println!(
        "[PASS] criterion 1: kernel closed forms vs Monte Carlo, 20 settings, \
         worst gap {worst_sigma_gap:.2} se, {elapsed:?}"
    );
}

// Criterion 2: the exact normalization constants are reproduced by
// sampling: the importance estimate of the Dirac weight second moment, and
// the Gaussian base norm both analytically and by MC.
#[test]
fn criterion_02_exact_constants() {
    let mut lines = Vec::new();
    for d in [1usize, 2, 3, 5] {
        let fs = sample_dirac_frequencies(d, 100_000, 0.9, 1.0, 200 + d as u64).unwrap();
        let inv: Vec<f64> = fs.weights().iter().map(|w| 1.0 / (w * w)).collect();
        let (mean, se) = linalg::mean_stderr(&inv);
        let target = 1.0 / dirac_weight_second_moment(d);
        assert!(
            (mean - target).abs() <= 4.0 * se,
            "d={d}: importance mean {mean} vs {target} (se {se})"
        );
        lines.push(format!("d={d}: C^2 = {:.4}", 1.0 / mean));
    }

    // Gaussian base norm: analytic value against a pair-sampling MC
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for (d, s) in [(1usize, 1.0f64), (2, 1.5), (3, 2.0)] {
        let p = KernelParams::gaussian(d, s, 1.0, Array2::eye(d)).unwrap();
        let analytic = p.base_norm_sq();
        let expected = (1.0 + 2.0 / (s * s)).powf(-(d as f64) / 2.0);
        assert!((analytic - expected).abs() <= 1e-15);
        let n = 400_000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let xp: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let dist2: f64 = x.iter().zip(&xp).map(|(a, b)| (a - b) * (a - b)).sum();
            draws.push((-dist2 / (2.0 * s * s)).exp());
        }
        let (mean, se) = linalg::mean_stderr(&draws);
        assert!(
            (mean - analytic).abs() <= 4.0 * se,
            "d={d} s={s}: base norm mc {mean} vs {analytic} (se {se})"
        );
    }
    println!(
        "[PASS] criterion 2: exact constants reproduced ({}; gaussian base norms by MC)",
        lines.join(", ")
    );
}

// Criterion 3: coherence. Closed-form tail constant under the critical
// bandwidth for k up to 1e4; optimized dipole pairs never exceed the mutual
// coherence bound; ell-coherence ratios stay inside the Gershgorin window.
#[test]
fn criterion_03_coherence_bounds() {
    // (a) C(K at sigma*_k) <= 3 / (16 (2k - 1)) for k = 1..=10^4
    for k in 1..=10_000usize {
        let c = kernel_tail_constant(critical_bandwidth(k));
        let bound = 3.0 / (16.0 * (2.0 * k as f64 - 1.0));
        assert!(c <= bound, "k={k}: C = {c} > {bound}");
    }

    // (b) measured mutual coherence over 1e4 optimized 1-separated dipole
    // pairs stays under 4 C(K)
    let k = 2usize;
    let s = 0.1;
    let eps = separation_for_scale(Family::DiracWeighted, s, k);
    let p1 = KernelParams::dirac(1, s, eps).unwrap();
    let meas1 = measure_mutual_coherence(&p1, k, 10_000, 31, 120).unwrap();
    assert!(
        meas1.max_observed <= meas1.bound,
        "1-d: observed {} > bound {}",
        meas1.max_observed,
        meas1.bound
    );
    let p2 = KernelParams::dirac(2, s, eps).unwrap();
    let meas2 = measure_mutual_coherence(&p2, k, 2_000, 32, 120).unwrap();
    assert!(meas2.max_observed <= meas2.bound);

    // (c) ell-coherence ratios within [1 - M(l-1), 1 + M(l-1)] on 1e4
    // random tuples of pairwise separated dipoles (k = 3 budget)
    let k3 = 3usize;
    let sigma = critical_bandwidth(k3);
    let eps3 = separation_for_scale(Family::DiracWeighted, s, k3);
    let p3 = KernelParams::dirac(2, s, eps3).unwrap();
    assert!((p3.effective_bandwidth() - sigma).abs() < 1e-12);
    let constants = coherence_constants_at(sigma, k3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst_defect = 0.0f64;
    for _ in 0..10_000 {
        let ell = rng.random_range(2..=2 * k3);
        // dipole centers pairwise >= 2 apart in rescaled space; poles within
        // 0.25 of their center, so cross-pole distances stay >= 1.5
        let mut centers: Vec<Vec<f64>> = Vec::new();
        while centers.len() < ell {
            let cand: Vec<f64> = (0..2).map(|_| rng.random_range(-8.0..8.0)).collect();
            if centers.iter().all(|c| linalg::dist2(c, &cand) >= 2.0) {
                centers.push(cand);
            }
        }
        let dipoles: Vec<Dipole> = centers
            .iter()
            .map(|c| {
                let jitter = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    let u = unit_vector(rng, 2);
                    let r: f64 = rng.random_range(0.0..0.25);
                    u.iter().map(|x| x * r).collect()
                };
                let d1 = jitter(&mut rng);
                let d2 = jitter(&mut rng);
                // back to data coordinates
                Dipole {
                    theta1: c.iter().zip(&d1).map(|(a, b)| (a + b) * p3.eps).collect(),
                    theta2: c.iter().zip(&d2).map(|(a, b)| (a + b) * p3.eps).collect(),
                    alpha1: rng.random_range(0.0..1.0),
                    alpha2: rng.random_range(0.0..1.0),
                }
            })
            .collect();
        if dipoles.iter().map(|nu| dipole_mmd_sq(&p3, nu)).sum::<f64>() <= 1e-20 {
            continue;
        }
        let ratio = ell_coherence_ratio(&p3, &dipoles).unwrap();
        let zeta = constants.mutual_coherence_bound * (ell as f64 - 1.0);
        assert!(
            (ratio - 1.0).abs() <= zeta,
            "ell={ell}: ratio {ratio} defect beyond {zeta}"
        );
        worst_defect = worst_defect.max((ratio - 1.0).abs());
    }

    // (d) quasi-Pythagorean identity through actual mixture differences:
    // 1e4 random 2-separated pairs, defect within 3/4
    let r_ball = 12.0 * p3.eps;
    let mut rng2 = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..10_000 {
        let ha = random_separated_hypothesis(&p3, k3, r_ball, true, &mut rng2).unwrap();
        let hb = random_separated_hypothesis(&p3, k3, r_ball, true, &mut rng2).unwrap();
        let tau = MixtureModel::new(p3.clone(), ha).unwrap();
        let tau_p = MixtureModel::new(p3.clone(), hb).unwrap();
        let dipoles = decompose_into_dipoles(&tau, &tau_p).unwrap();
        let denom: f64 = dipoles.iter().map(|nu| dipole_mmd_sq(&p3, nu)).sum();
        if denom <= 1e-20 {
            continue;
        }
        let ratio = ell_coherence_ratio(&p3, &dipoles).unwrap();
        assert!(
            (ratio - 1.0).abs() <= 0.75,
            "mixture-pair defect {} above 3/4",
            (ratio - 1.0).abs()
        );
    }

    println!(
        "[PASS] criterion 3: coherence constants (k to 1e4), optimized pairs \
         max {:.3e} <= bound {:.3e}, ell-ratio worst defect {:.2e}",
        meas1.max_observed, meas1.bound, worst_defect
    );
}

// Criterion 4: empirical restricted isometry at the critical bandwidth.
#[test]
fn criterion_04_empirical_rip() {
    let start = Instant::now();
    let k = 3usize;
    let d = 2usize;
    let s = 0.1;
    let eps = separation_for_scale(Family::DiracWeighted, s, k);
    let r = 10.0 * eps;

    let m = 1 << 14;
    let fs = sample_dirac_frequencies(d, m, s, eps, 401).unwrap();
    let report = empirical_rip(&fs, k, r, 500, 402).unwrap();
    assert!(
        report.min_ratio >= 0.8 && report.max_ratio <= 1.2,
        "ratios [{}, {}] outside [0.8, 1.2]",
        report.min_ratio,
        report.max_ratio
    );

    // deviation quantiles shrink like m^(-1/2) across a dyadic grid
    let mut log_m = Vec::new();
    let mut log_dev = Vec::new();
    let mut quantiles = Vec::new();
    for exp in [6u32, 8, 10, 12, 14] {
        let m = 1usize << exp;
        let fs = sample_dirac_frequencies(d, m, s, eps, 500 + exp as u64).unwrap();
        let rep = empirical_rip(&fs, k, r, 150, 600 + exp as u64).unwrap();
        let dev = rip_deviation_quantile(&rep, 0.9);
        log_m.push((m as f64).ln());
        log_dev.push(dev.ln());
        quantiles.push(dev);
    }
    let (slope, _, _) = linalg::linear_fit(&log_m, &log_dev);
    assert!(
        (-0.65..=-0.35).contains(&slope),
        "deviation slope {slope} outside [-0.65, -0.35]"
    );
    let inversions = csketch::checks::quantile_inversions(&quantiles);
    assert!(inversions <= 1, "{inversions} quantile inversions");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}, budget 5 min");
    println!(
        "[PASS] criterion 4: empirical RIP ratios [{:.3}, {:.3}] at m=2^14, \
         deviation slope {slope:.2}, {elapsed:?}",
        report.min_ratio, report.max_ratio
    );
}

// Criterion 5: frequency-moment bounds pass the 4-standard-error MC test
// for q in {2, 3}, both families, ten parameter settings.
#[test]
fn criterion_05_moment_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut checked = 0usize;
    for setting in 0..10 {
        let d = rng.random_range(1..4usize);
        let s = rng.random_range(0.5..2.0);
        let eps = rng.random_range(0.5..3.0);
        let p = if setting % 2 == 0 {
            KernelParams::dirac(d, s, eps).unwrap()
        } else {
            KernelParams::gaussian(d, s, eps, random_lower_chol(&mut rng, d)).unwrap()
        };
        for q in [2u32, 3] {
            let rep = moment_bound_check(&p, q, 300_000, 5500 + setting as u64).unwrap();
            assert!(
                rep.pass,
                "setting {setting} q={q}: lhs {} (se {}) vs rhs {}",
                rep.lhs_mc, rep.stderr, rep.rhs
            );
            checked += 1;
        }
    }
    println!("[PASS] criterion 5: moment bounds, {checked} (setting, q) pairs at 4 se");
}

// Criterion 6: the separation-necessity witness ratio grows as the
// separation shrinks, at the asymptotic quartic-over-quadratic rate.
#[test]
fn criterion_06_separation_witness() {
    let fs = sample_dirac_frequencies(2, 1024, 1.0, 1.0, 61).unwrap();
    let r = 1.0;
    for p_pow in [1u32, 2] {
        let eps_list = [0.2, 0.05, 0.0125];
        let rows = separation_witness(&eps_list, r, p_pow, &fs).unwrap();
        for w in rows.windows(2) {
            assert!(
                w[1].ratio > w[0].ratio,
                "p={p_pow}: ratio not increasing as eps decreases"
            );
        }
        // quartering eps at least doubles the ratio in the small-eps regime
        assert!(
            rows[2].ratio >= 2.0 * rows[1].ratio,
            "p={p_pow}: ratio({}) = {} not >= 2x ratio({}) = {}",
            rows[2].eps,
            rows[2].ratio,
            rows[1].eps,
            rows[1].ratio
        );
    }
    println!("[PASS] criterion 6: witness ratio diverges as separation shrinks (both losses)");
}

// Criterion 7: decoder recovery. Clustering: 20/20 noiseless recoveries
// within eps/10. GMM: means within 0.3 Mahalanobis and weights within 0.05
// of the EM answer, 20/20.
#[test]
fn criterion_07_decoder_recovery() {
    let start = Instant::now();
    // clustering half
    let eps = 0.15;
    for seed in 0..20u64 {
        let cell = PipelineCell {
            task: Task::KMeans,
            k: 3,
            d: 2,
            n: 10_000,
            m: 60, // 10 k d
            eps,
            r: 1.0,
            s: 0.225,
            noise: 0.0,
            tolerance: 0.1, // eps / 10
            seed,
            baseline_restarts: 20,
            decode_restarts: 30,
        };
        let out = run_pipeline(&cell).unwrap();
        assert!(
            out.success,
            "clustering seed {seed}: error {} above eps/10",
            out.centroid_error
        );
        assert!(
            out.decoded_risk <= 1.5 * out.baseline_risk + 1e-12,
            "clustering seed {seed}: decoded risk {} vs Lloyd {}",
            out.decoded_risk,
            out.baseline_risk
        );
    }
    let clustering_elapsed = start.elapsed();
    assert!(clustering_elapsed.as_secs() < 120);

    // GMM half
    let gmm_start = Instant::now();
    let d = 2usize;
    let s = (d as f64).sqrt(); // s^2 = d policy
    let sep = 10.0 * (d as f64 * (1.0 + 2f64.ln())).sqrt();
    let r = 0.6 * sep;
    let n = 10_000;
    let m = 40;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = unit_vector(&mut rng, d);
        let mean0: Vec<f64> = dir.iter().map(|x| x * sep / 2.0).collect();
        let mean1: Vec<f64> = dir.iter().map(|x| -x * sep / 2.0).collect();
        let weights = [0.3, 0.7];
        let mut data = Array2::zeros((n, d));
        for i in 0..n {
            let c = if rng.random::<f64>() < weights[0] {
                &mean0
            } else {
                &mean1
            };
            for t in 0..d {
                let g: f64 = StandardNormal.sample(&mut rng);
                data[[i, t]] = c[t] + g;
            }
        }
        let p = KernelParams::gaussian(d, s, sep / 2.0, Array2::eye(d)).unwrap();
        let fs = sample_gauss_frequencies(&p, m, seed + 1000).unwrap();
        let rows: Vec<&[f64]> = data
            .rows()
            .into_iter()
            .map(|r| r.to_slice().unwrap())
            .collect();
        let y = sketch_stream(&fs, rows.iter().copied())
            .unwrap()
            .finalize()
            .unwrap();
        let mut cfg = DecodeConfig::new(2, sep / 2.0, r, seed + 2000);
        cfg.restarts = 56;
        let decoded = decode_gmm(&fs, &y, &cfg).unwrap();
        let em = em_fixed_cov(data.view(), 2, Array2::eye(d).view(), 20, 60, seed + 3000).unwrap();
        let cost: Vec<Vec<f64>> = (0..2)
            .map(|i| {
                (0..2)
                    .map(|j| linalg::dist2(decoded.hypothesis.centroid(i), em.centroid(j)))
                    .collect()
            })
            .collect();
        let asg = min_cost_assignment(&cost);
        let max_mean_err = (0..2).map(|i| cost[i][asg[i]]).fold(0.0f64, f64::max);
        let max_w_err = (0..2)
            .map(|i| (decoded.hypothesis.alphas()[i] - em.alphas()[asg[i]]).abs())
            .fold(0.0f64, f64::max);
        assert!(
            max_mean_err <= 0.3,
            "gmm seed {seed}: mean gap {max_mean_err} above 0.3 (Sigma = I)"
        );
        assert!(
            max_w_err <= 0.05,
            "gmm seed {seed}: weight gap {max_w_err} above 0.05"
        );
    }
    let gmm_elapsed = gmm_start.elapsed();
    assert!(
        gmm_elapsed.as_secs() < 120,
        "gmm suite took {gmm_elapsed:?}"
    );
    println!(
        "[PASS] criterion 7: decoder recovery 20/20 clustering ({clustering_elapsed:?}) \
         and 20/20 gmm vs EM ({gmm_elapsed:?})"
    );
}

// Criterion 8: phase-transition midpoints scale linearly with k*d over the
// 7x7 grid, R^2 >= 0.8. (Qualitative reproduction; no numeric table exists
// to match.)
#[test]
fn criterion_08_phase_diagram() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        task: Task::KMeans,
        k_grid: (2..=8).collect(),
        d_grid: (2..=8).collect(),
        m_multipliers: vec![1.0, 1.5, 2.0, 3.0, 4.0, 6.0],
        n: 2000,
        trials: 8,
        eps: 0.1,
        r: 1.0,
        s: Some(0.3),
        s_policy: None,
        noise: 0.0,
        tolerance: 0.5,
        seed: 88,
        baseline_restarts: 1,
        decode_restarts: 16,
        out: None,
        times_out: None,
    };
    let diagram = phase_diagram(&cfg).unwrap();
    for row in &diagram.rows {
        assert!((0.0..=1.0).contains(&row.success_rate));
    }
    // success rates essentially increase with m: at most one Monte-Carlo
    // inversion per (k, d) column on average
    let mut total_inversions = 0usize;
    for &k in &cfg.k_grid {
        for &d in &cfg.d_grid {
            let mut col: Vec<_> = diagram
                .rows
                .iter()
                .filter(|r| r.k == k && r.d == d)
                .collect();
            col.sort_by_key(|r| r.m);
            let inv = col
                .windows(2)
                .filter(|w| w[1].success_rate < w[0].success_rate)
                .count();
            total_inversions += inv;
        }
    }
    let mean_inversions = total_inversions as f64 / 49.0;
    assert!(
        mean_inversions <= 1.0,
        "mean per-column inversions {mean_inversions}"
    );
    let (slope, intercept, r2, points) = phase_regression(&diagram, &cfg);
    let elapsed = start.elapsed();
    assert!(
        points >= 45,
        "only {points} of 49 columns crossed the half-success threshold"
    );
    assert!(r2 >= 0.8, "transition-vs-kd regression R^2 = {r2}");
    assert!(elapsed.as_secs() < 1800, "took {elapsed:?}, budget 30 min");
    println!(
        "[PASS] criterion 8: phase transition m* ~ {slope:.2} kd + {intercept:.1}, \
         R^2 = {r2:.3} over {points} columns, {elapsed:?}"
    );
}

// Criterion 9: numerical hygiene. Analytic gradients against central
// differences, merge-vs-single-pass sketch divergence, and bit-exact file
// round-trips.
#[test]
fn criterion_09_numerical_hygiene() {
    // gradients at 100 random points, both dictionary modes
    let fs_dirac = sample_dirac_frequencies(2, 48, 0.6, 0.2, 901).unwrap();
    let p_gauss = KernelParams::gaussian(2, 1.3, 1.0, Array2::eye(2)).unwrap();
    let fs_gauss = sample_gauss_frequencies(&p_gauss, 48, 902).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(903);
    let mut worst_rel = 0.0f64;
    for case in 0..100 {
        let (fs, mode) = if case % 2 == 0 {
            (&fs_dirac, DecodeMode::Clustering)
        } else {
            (&fs_gauss, DecodeMode::Gmm)
        };
        let truth = Hypothesis::new(
            Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0)),
            Some(vec![0.4, 0.6]),
        )
        .unwrap();
        let y = csketch::sketch::sketch_of_mixture(fs, &truth).unwrap();
        let cs: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let a = rng.random_range(0.1..0.9);
        let al = vec![a, 1.0 - a];
        let (_, grad) = proxy_objective_gradient(fs, &y, &cs, &al, mode).unwrap();
        let h = 1e-6;
        for idx in 0..grad.len() {
            let probe = |delta: f64| {
                let mut cs = cs.clone();
                let mut al = al.clone();
                if idx < 4 {
                    cs[idx / 2][idx % 2] += delta;
                } else {
                    al[idx - 4] += delta;
                }
                proxy_objective_gradient(fs, &y, &cs, &al, mode).unwrap().0
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            let denom = grad[idx].abs().max(fd.abs()).max(1e-8);
            let rel = (grad[idx] - fd).abs() / denom;
            worst_rel = worst_rel.max(rel);
            assert!(rel <= 1e-5, "case {case} coord {idx}: rel err {rel}");
        }
    }

    // merge vs single pass at 1e-12 relative
    let fs = sample_dirac_frequencies(3, 64, 0.6, 1.0, 904).unwrap();
    let data: Vec<Vec<f64>> = (0..2000)
        .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let whole = sketch_stream(&fs, data.iter().map(|v| v.as_slice())).unwrap();
    let thirds: Vec<_> = data.chunks(700).collect();
    let mut acc: Option<csketch::sketch::Sketch> = None;
    for part in &thirds {
        let sk = sketch_stream(&fs, part.iter().map(|v| v.as_slice())).unwrap();
        acc = Some(match acc {
            None => sk,
            Some(prev) => prev.merge(&sk).unwrap(),
        });
    }
    let merged = acc.unwrap();
    let yw = whole.finalize().unwrap();
    let ym = merged.finalize().unwrap();
    let rel = complex_dist(&yw, &ym) / complex_norm(&yw);
    assert!(rel <= 1e-12, "merge divergence {rel}");

    // bit-exact round-trips: frequency file, sketch file, hypothesis JSON
    let dir = tempfile::tempdir().unwrap();
    let fpath = dir.path().join("f.cskf");
    save_frequencies(&fs, &fpath).unwrap();
    let bytes1 = std::fs::read(&fpath).unwrap();
    let reloaded = load_frequencies(&fpath).unwrap();
    save_frequencies(&reloaded, &fpath).unwrap();
    assert_eq!(
        bytes1,
        std::fs::read(&fpath).unwrap(),
        "frequency file round-trip"
    );

    let spath = dir.path().join("s.csks");
    save_sketch(&whole, &spath).unwrap();
    let sbytes1 = std::fs::read(&spath).unwrap();
    let sk2 = load_sketch(&spath).unwrap();
    save_sketch(&sk2, &spath).unwrap();
    assert_eq!(
        sbytes1,
        std::fs::read(&spath).unwrap(),
        "sketch file round-trip"
    );

    let h = Hypothesis::new(
        Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0)),
        Some(vec![0.25, 0.35, 0.4]),
    )
    .unwrap();
    let json1 = hypothesis_to_json(&h, Family::DiracWeighted, 0.1, 1.0).unwrap();
    let (h2, fam, eps, r) = hypothesis_from_json(&json1).unwrap();
    let json2 = hypothesis_to_json(&h2, fam, eps, r).unwrap();
    assert_eq!(json1, json2, "hypothesis JSON round-trip");
    assert_eq!(h.centroids(), h2.centroids());

    println!(
        "[PASS] criterion 9: gradients (worst rel {worst_rel:.2e}), merge divergence \
         {rel:.2e}, all file round-trips bit-exact"
    );
}

// Criterion 10: risk geometry. Lipschitz root-risk, cover postconditions,
// KL positivity and quadrature agreement.
#[test]
fn criterion_10_risk_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    // Lipschitz on 1e3 random instances
    for _ in 0..1000 {
        let n = rng.random_range(5..30usize);
        let k = rng.random_range(1..5usize);
        let data = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let ha = Hypothesis::new(
            Array2::from_shape_fn((k, 2), |_| rng.random_range(-1.0..1.0)),
            None,
        )
        .unwrap();
        let hb = Hypothesis::new(
            Array2::from_shape_fn((k, 2), |_| rng.random_range(-1.0..1.0)),
            None,
        )
        .unwrap();
        let dist = hypothesis_distance(&ha, &hb).symmetric;
        for p in [1u32, 2] {
            let ra = clustering_risk(data.view(), &ha, p).unwrap().risk;
            let rb = clustering_risk(data.view(), &hb, p).unwrap().risk;
            let (ra, rb) = (ra.powf(1.0 / p as f64), rb.powf(1.0 / p as f64));
            assert!((ra - rb).abs() <= dist + 1e-10);
        }
    }

    // separated-cover postconditions on 1e3 random centroid sets
    for _ in 0..1000 {
        let k = rng.random_range(1..8usize);
        let h = Hypothesis::new(
            Array2::from_shape_fn((k, 2), |_| rng.random_range(-1.5..1.5)),
            None,
        )
        .unwrap();
        let eps = rng.random_range(0.05..1.2);
        let cover = separated_cover(&h, eps, 3.0).unwrap();
        assert!(cover_postconditions_hold(&h, eps, &cover));
    }

    // KL nonnegativity (equality only at equal parameters) and closed-form
    // versus quadrature in d = 1
    for _ in 0..200 {
        let m1 = rng.random_range(-1.0..1.0);
        let s1 = rng.random_range(0.5..2.0);
        let m2 = rng.random_range(-1.0..1.0);
        let s2 = rng.random_range(0.5..2.0);
        let l1 = Array2::from_shape_vec((1, 1), vec![s1]).unwrap();
        let l2 = Array2::from_shape_vec((1, 1), vec![s2]).unwrap();
        let kl = kl_gaussians(&[m1], l1.view(), &[m2], l2.view()).unwrap();
        assert!(kl >= -1e-15);
        let same = kl_gaussians(&[m1], l1.view(), &[m1], l1.view()).unwrap();
        assert!(same.abs() <= 1e-12);

        // Simpson quadrature of the KL integral
        let lo = m1 - 14.0 * s1;
        let hi = m1 + 14.0 * s1;
        let n = 60_001usize;
        let h = (hi - lo) / (n - 1) as f64;
        let logp = |x: f64, mu: f64, sd: f64| {
            let z = (x - mu) / sd;
            -0.5 * z * z - (sd * (2.0 * std::f64::consts::PI).sqrt()).ln()
        };
        let f = |x: f64| {
            let lp = logp(x, m1, s1);
            lp.exp() * (lp - logp(x, m2, s2))
        };
        let mut acc = f(lo) + f(hi);
        for i in 1..n - 1 {
            let x = lo + i as f64 * h;
            acc += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = acc * h / 3.0;
        assert!((kl - quad).abs() <= 1e-8, "kl {kl} vs quadrature {quad}");
    }
    println!(
        "[PASS] criterion 10: Lipschitz risk (1e3), cover postconditions (1e3), \
         KL closed form vs quadrature at 1e-8"
    );
}
