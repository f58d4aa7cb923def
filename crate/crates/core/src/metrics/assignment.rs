//! Minimum-cost bipartite assignment (Hungarian method with potentials).

/// Minimum-cost perfect assignment on a square cost matrix given row-major.
/// Returns `assign[row] = column`.
pub fn solve_square(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Pairs `(row, col)` maximizing the total score over a rectangular matrix,
/// restricted to entries where `valid` holds.
pub fn max_score_pairs(rows: usize, cols: usize, score: impl Fn(usize, usize) -> Option<f64>) -> Vec<(usize, usize)> {
    let n = rows.max(cols);
    let mut cost = vec![0.0; n * n];
    for r in 0..rows {
        for c in 0..cols {
            if let Some(s) = score(r, c) {
                cost[r * n + c] = -s;
            }
        }
    }
    solve_square(&cost, n)
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| r < rows && c < cols && score(r, c).is_some())
        .collect()
}
