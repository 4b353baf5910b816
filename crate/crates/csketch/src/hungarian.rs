//! Minimum-cost perfect matching on a square cost matrix (potentials plus
//! shortest augmenting paths). Used to align recovered centroids with
//! ground truth before measuring recovery error.

/// Returns `assignment[row] = col` minimizing the total cost. Costs must be
/// finite. O(n^3).
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    assert!(n > 0 && cost.iter().all(|row| row.len() == n));
    // 1-indexed potentials; p[j] = row matched to column j, 0 = free
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // augment along the alternating path back to the root
        while j0 != 0 {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maximum per-row cost under the optimal assignment: the bottleneck error
/// used by the recovery criterion.
pub fn matched_max_distance(cost: &[Vec<f64>]) -> f64 {
    let assignment = min_cost_assignment(cost);
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let n = cost.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, cost, &mut best);
        best
    }

    fn permute(perm: &mut Vec<usize>, at: usize, cost: &[Vec<f64>], best: &mut f64) {
        let n = perm.len();
        if at == n {
            let total: f64 = (0..n).map(|i| cost[i][perm[i]]).sum();
            *best = best.min(total);
            return;
        }
        for i in at..n {
            perm.swap(at, i);
            permute(perm, at + 1, cost, best);
            perm.swap(at, i);
        }
    }

    #[test]
    fn identity_matrix_prefers_diagonal() {
        let cost = vec![
            vec![0.0, 5.0, 5.0],
            vec![5.0, 0.0, 5.0],
            vec![5.0, 5.0, 0.0],
        ];
        assert_eq!(min_cost_assignment(&cost), vec![0, 1, 2]);
        assert_eq!(matched_max_distance(&cost), 0.0);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(1..7usize);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect())
                .collect();
            let assignment = min_cost_assignment(&cost);
            // valid permutation
            let mut seen = vec![false; n];
            for &j in &assignment {
                assert!(!seen[j]);
                seen[j] = true;
            }
            let total: f64 = (0..n).map(|i| cost[i][assignment[i]]).sum();
            let best = brute_force(&cost);
            assert!((total - best).abs() <= 1e-9, "got {total}, brute {best}");
        }
    }
}
