//! Rectangular linear assignment via shortest augmenting paths with
//! row/column potentials (the O(n²m) Hungarian method).

/// Minimum-cost assignment of every row to a distinct column.
///
/// `cost` is row-major with `rows <= cols`. Returns, for each row, its
/// assigned column. Rows are inserted in ascending order and columns scanned
/// in ascending order, so equal-cost optima resolve the same way every run.
pub fn solve_min_cost(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    assert!(rows <= cols, "assignment needs rows <= cols");
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 {
        return Vec::new();
    }
    let at = |i: usize, j: usize| cost[(i - 1) * cols + (j - 1)];

    // 1-based; row 0 / column 0 are the virtual start
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];

    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let reduced = at(i0, j) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(cost: &[f64], cols: usize, a: &[usize]) -> f64 {
        a.iter().enumerate().map(|(i, &j)| cost[i * cols + j]).sum()
    }

    fn brute_force(cost: &[f64], rows: usize, cols: usize) -> f64 {
        fn rec(cost: &[f64], cols: usize, row: usize, rows: usize, used: &mut Vec<bool>) -> f64 {
            if row == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cols {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row * cols + j] + rec(cost, cols, row + 1, rows, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, cols, 0, rows, &mut vec![false; cols])
    }

    #[test]
    fn classic_three_by_three() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = solve_min_cost(&cost, 3, 3);
        assert_eq!(total(&cost, 3, &a), 5.0);
        assert_eq!(a, vec![1, 0, 2]);
    }

    #[test]
    fn rectangular_matches_brute_force() {
        // deterministic pseudo-random costs
        let mut state = 12345u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) % 1000) as f64 / 10.0
        };
        for rows in 1..=5 {
            for cols in rows..=6 {
                let cost: Vec<f64> = (0..rows * cols).map(|_| next()).collect();
                let a = solve_min_cost(&cost, rows, cols);
                let mut seen = a.clone();
                seen.sort_unstable();
                seen.dedup();
                assert_eq!(seen.len(), rows, "columns must be distinct");
                let got = total(&cost, cols, &a);
                let want = brute_force(&cost, rows, cols);
                assert!((got - want).abs() < 1e-9, "{rows}x{cols}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn empty_problem() {
        assert!(solve_min_cost(&[], 0, 4).is_empty());
    }
}
