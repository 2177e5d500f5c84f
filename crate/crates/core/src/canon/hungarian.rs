//! Minimum-cost assignment.

const INF: f64 = f64::INFINITY;

/// Optimal assignment for a square cost matrix via shortest augmenting
/// paths with potentials. Returns `assign[row] = col`.
fn solve(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
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
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn total(cost: &[Vec<f64>], assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

/// Cost-minimizing assignment `perm[row] = col`. Among optimal assignments
/// the lexicographically smallest one is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    assert!(cost.iter().all(|r| r.len() == n), "cost matrix must be square");
    assert!(cost.iter().flatten().all(|c| c.is_finite()), "cost entries must be finite");
    if n == 0 {
        return Vec::new();
    }
    let best = total(cost, &solve(cost));
    let scale: f64 = cost.iter().flatten().fold(1.0, |a, c| a.max(c.abs()));
    let tol = 1e-12 * scale * n as f64;

    let mut rows: Vec<usize> = (0..n).collect();
    let mut cols: Vec<usize> = (0..n).collect();
    let mut fixed_cost = 0.0;
    let mut perm = vec![0; n];
    while let Some(&r) = rows.first() {
        let mut chosen = None;
        for (ci, &c) in cols.iter().enumerate() {
            let sub_rows = &rows[1..];
            let sub_cols: Vec<usize> = cols.iter().copied().filter(|&x| x != c).collect();
            let sub: Vec<Vec<f64>> = sub_rows.iter().map(|&i| sub_cols.iter().map(|&j| cost[i][j]).collect()).collect();
            let rest = if sub.is_empty() { 0.0 } else { total(&sub, &solve(&sub)) };
            if fixed_cost + cost[r][c] + rest <= best + tol {
                chosen = Some((ci, c));
                break;
            }
        }
        let (ci, c) = chosen.expect("an optimal completion always exists");
        perm[r] = c;
        fixed_cost += cost[r][c];
        rows.remove(0);
        cols.remove(ci);
    }
    perm
}
