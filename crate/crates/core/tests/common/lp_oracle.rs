//! Dense two-phase tableau simplex with Bland's rule, used only as an
//! independent reference for the transportation solver.

/// Minimises `c·x` subject to `A x = b`, `x ≥ 0` (`b ≥ 0`). Returns the optimum.
pub fn solve_equality_lp(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let m = a.len();
    let n = c.len();
    let width = n + m + 1;
    let rhs = width - 1;
    let mut t: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = vec![0.0; width];
            row[..n].copy_from_slice(&a[i]);
            row[n + i] = 1.0;
            row[rhs] = b[i];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase 1: minimise the sum of artificials.
    let mut phase1 = vec![0.0; width];
    phase1[n..n + m].fill(1.0);
    optimise(&mut t, &mut basis, &phase1, n + m);
    let infeasibility: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= n)
        .map(|(i, _)| t[i][rhs])
        .sum();
    assert!(
        infeasibility < 1e-9,
        "LP oracle: infeasible ({infeasibility})"
    );

    // Drive zero-level artificials out of the basis; drop redundant rows.
    let mut i = 0;
    while i < t.len() {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, j);
            } else {
                t.remove(i);
                basis.remove(i);
                continue;
            }
        }
        i += 1;
    }

    let mut phase2 = vec![0.0; width];
    phase2[..n].copy_from_slice(c);
    optimise(&mut t, &mut basis, &phase2, n);
    basis
        .iter()
        .enumerate()
        .map(|(i, &v)| c[v] * t[i][rhs])
        .sum()
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[row].clone();
    for (i, r) in t.iter_mut().enumerate() {
        if i != row && r[col] != 0.0 {
            let f = r[col];
            for (v, pv) in r.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
    }
    basis[row] = col;
}

/// Bland's rule on columns `0..allowed`.
fn optimise(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) {
    let rhs = cost.len() - 1;
    loop {
        let reduced = |j: usize, t: &[Vec<f64>], basis: &[usize]| {
            cost[j]
                - basis
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| cost[v] * t[i][j])
                    .sum::<f64>()
        };
        let Some(enter) = (0..allowed).find(|&j| reduced(j, t, basis) < -1e-12) else {
            return;
        };
        let mut leave: Option<(f64, usize, usize)> = None;
        for (i, row) in t.iter().enumerate() {
            if row[enter] > 1e-12 {
                let ratio = row[rhs] / row[enter];
                let better = match leave {
                    None => true,
                    Some((r, _, v)) => ratio < r - 1e-15 || (ratio <= r + 1e-15 && basis[i] < v),
                };
                if better {
                    leave = Some((ratio, i, basis[i]));
                }
            }
        }
        let (_, row, _) = leave.expect("LP oracle: unbounded");
        pivot(t, basis, row, enter);
    }
}

/// Transportation LP between histograms `a` and `b` under the dense cost `cost[i][j]`.
pub fn transport_lp(a: &[f64], b: &[f64], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    let n = a.len();
    let m = b.len();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..n {
        let mut r = vec![0.0; n * m];
        for j in 0..m {
            r[i * m + j] = 1.0;
        }
        rows.push(r);
        rhs.push(a[i]);
    }
    for j in 0..m {
        let mut r = vec![0.0; n * m];
        for i in 0..n {
            r[i * m + j] = 1.0;
        }
        rows.push(r);
        rhs.push(b[j]);
    }
    let c: Vec<f64> = (0..n * m).map(|k| cost(k / m, k % m)).collect();
    solve_equality_lp(&rows, &rhs, &c)
}
