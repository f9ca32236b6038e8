//! Transportation simplex for the earth mover's distance.
//!
//! Mass shared by both histograms at the same pixel stays in place: with a
//! metric ground cost and zero diagonal, some optimal plan never moves it, so
//! only the surplus `(a − b)⁺` is shipped to the deficit `(b − a)⁺`. That reduced
//! problem is solved with the classic transportation simplex:
//!
//! 1. Vogel's approximation builds a basic feasible spanning tree of
//!    `sources + sinks − 1` cells.
//! 2. Dual potentials `u_r + v_c = C_rc` are recomputed over the tree.
//! 3. Block pricing picks the most negative reduced cost in the first block that
//!    has one; the entering cell closes a cycle in the tree and the minus cell
//!    with the smallest flow leaves.
//! 4. After a long run of degenerate pivots the method switches to Bland's rule
//!    (lowest-index entering and leaving cell) until a pivot moves mass again.
//!
//! Optimality is reached when no reduced cost is below `−1e-12 · max(1, max C)`.

use super::{CostMatrix, Histogram, MASS_TOLERANCE};
use crate::{Error, Result};

/// Optimal flow between two histograms, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    n: usize,
    /// `(source pixel, target pixel, mass)` sorted by source then target.
    entries: Vec<(usize, usize, f64)>,
    cost: f64,
}

impl TransportPlan {
    /// Total transport cost `Σ P_ij C_ij` in pixel units.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Nonzero entries of the flow matrix.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn flow(&self, i: usize, j: usize) -> f64 {
        self.entries
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&(i, j)))
            .map(|k| self.entries[k].2)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n * self.n];
        for &(i, j, m) in &self.entries {
            dense[i * self.n + j] += m;
        }
        dense
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for &(i, _, m) in &self.entries {
            sums[i] += m;
        }
        sums
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for &(_, j, m) in &self.entries {
            sums[j] += m;
        }
        sums
    }
}

/// Solves the transportation LP between `a` and `b` under `cost`.
///
/// When the total masses differ by at most [`MASS_TOLERANCE`], `b` is rescaled to
/// `a`'s mass; a larger mismatch is infeasible.
pub fn emd(a: &Histogram, b: &Histogram, cost: &CostMatrix) -> Result<TransportPlan> {
    let n = cost.n_pixels();
    if a.len() != n || b.len() != n {
        return Err(Error::Shape(format!(
            "histograms of length {} and {} do not match the {n}-pixel cost matrix",
            a.len(),
            b.len()
        )));
    }
    let mass_a: f64 = a.mass().iter().sum();
    let mass_b: f64 = b.mass().iter().sum();
    let gap = (mass_a - mass_b).abs();
    if gap.is_nan() || gap > MASS_TOLERANCE || mass_b <= 0.0 {
        return Err(Error::Infeasible(format!(
            "marginal masses differ: {mass_a} vs {mass_b}"
        )));
    }
    let scale = mass_a / mass_b;

    let mut entries = Vec::new();
    let mut sources = Vec::new();
    let mut sinks = Vec::new();
    for (i, (&ai, &bi)) in a.mass().iter().zip(b.mass()).enumerate() {
        let bi = if scale == 1.0 { bi } else { bi * scale };
        let common = ai.min(bi);
        if common > 0.0 {
            entries.push((i, i, common));
        }
        if ai > common {
            sources.push((i, ai - common));
        } else if bi > common {
            sinks.push((i, bi - common));
        }
    }

    let mut total = 0.0;
    if !sources.is_empty() && !sinks.is_empty() {
        let flows = solve_reduced(&sources, &sinks, cost)?;
        for (r, c, m) in flows {
            let (i, j) = (sources[r].0, sinks[c].0);
            total += m * cost.get(i, j);
            entries.push((i, j, m));
        }
    }
    entries.sort_unstable_by_key(|x| (x.0, x.1));
    Ok(TransportPlan {
        n,
        entries,
        cost: total,
    })
}

fn solve_reduced(
    sources: &[(usize, f64)],
    sinks: &[(usize, f64)],
    cost: &CostMatrix,
) -> Result<Vec<(usize, usize, f64)>> {
    let nt = sinks.len();
    let mut local = Vec::with_capacity(sources.len() * nt);
    for &(i, _) in sources {
        let row = cost.row(i);
        local.extend(sinks.iter().map(|&(j, _)| row[j]));
    }
    let supply: Vec<f64> = sources.iter().map(|s| s.1).collect();
    let demand: Vec<f64> = sinks.iter().map(|s| s.1).collect();
    let mut solver = TransportSimplex::new(&supply, &demand, local);
    solver.run()?;
    Ok(solver
        .basis
        .iter()
        .filter(|b| b.flow > 0.0)
        .map(|b| (b.row as usize, b.col as usize, b.flow))
        .collect())
}

#[derive(Debug, Clone, Copy)]
struct BasicCell {
    row: u32,
    col: u32,
    flow: f64,
}

const NO_CELL: u32 = u32::MAX;
const NO_LINE: u32 = u32::MAX;

/// Transportation problem with `ns` supply rows and `nt` demand columns.
/// Tree nodes are rows `0..ns` followed by columns `ns..ns + nt`; row 0 is the root.
struct TransportSimplex {
    ns: usize,
    nt: usize,
    cost: Vec<f64>,
    tolerance: f64,
    basis: Vec<BasicCell>,
    /// Basis cells incident to each tree node.
    incident: Vec<Vec<u32>>,
    potential: Vec<f64>,
    parent_cell: Vec<u32>,
    depth: Vec<u32>,
    stack: Vec<u32>,
    price_cursor: usize,
    block: usize,
}

impl TransportSimplex {
    fn new(supply: &[f64], demand: &[f64], cost: Vec<f64>) -> Self {
        let (ns, nt) = (supply.len(), demand.len());
        let max_cost = cost.iter().copied().fold(0.0, f64::max);
        let mut s = Self {
            ns,
            nt,
            tolerance: 1e-12 * max_cost.max(1.0),
            basis: Vec::with_capacity(ns + nt - 1),
            incident: vec![Vec::new(); ns + nt],
            potential: vec![0.0; ns + nt],
            parent_cell: vec![NO_CELL; ns + nt],
            depth: vec![0; ns + nt],
            stack: Vec::with_capacity(ns + nt),
            price_cursor: 0,
            block: ((ns * nt) as f64).sqrt().ceil().max(32.0) as usize,
            cost,
        };
        s.vogel(supply, demand);
        for (k, b) in s.basis.iter().enumerate() {
            s.incident[b.row as usize].push(k as u32);
            s.incident[ns + b.col as usize].push(k as u32);
        }
        s
    }

    #[inline]
    fn c(&self, r: usize, c: usize) -> f64 {
        self.cost[r * self.nt + c]
    }

    /// Vogel's approximation method. Each step allocates to the cheapest open cell
    /// of the line with the largest gap between its two cheapest open cells, then
    /// closes that row or column; the final step closes both, giving exactly
    /// `ns + nt − 1` basic cells. Ties go to the lowest index, rows before columns.
    fn vogel(&mut self, supply: &[f64], demand: &[f64]) {
        let (ns, nt) = (self.ns, self.nt);
        let mut rem_s = supply.to_vec();
        let mut rem_d = demand.to_vec();
        let mut row_open = vec![true; ns];
        let mut col_open = vec![true; nt];
        let (mut rows_left, mut cols_left) = (ns, nt);

        // Two cheapest open cells per line; NO_LINE marks "none".
        let two_cheapest = |len: usize, open: &[bool], key: &dyn Fn(usize) -> f64| {
            let mut best = (NO_LINE, f64::INFINITY);
            let mut second = (NO_LINE, f64::INFINITY);
            for k in (0..len).filter(|&k| open[k]) {
                let v = key(k);
                if v < best.1 {
                    second = best;
                    best = (k as u32, v);
                } else if v < second.1 {
                    second = (k as u32, v);
                }
            }
            (best.0, second.0)
        };
        let mut row_top: Vec<(u32, u32)> = (0..ns)
            .map(|r| two_cheapest(nt, &col_open, &|c| self.c(r, c)))
            .collect();
        let mut col_top: Vec<(u32, u32)> = (0..nt)
            .map(|c| two_cheapest(ns, &row_open, &|r| self.c(r, c)))
            .collect();

        loop {
            // (penalty, is_col, line)
            let mut best: Option<(f64, bool, usize)> = None;
            for r in (0..ns).filter(|&r| row_open[r]) {
                let (first, second) = row_top[r];
                let low = self.c(r, first as usize);
                let pen = if second == NO_LINE {
                    low
                } else {
                    self.c(r, second as usize) - low
                };
                if best.is_none_or(|(p, _, _)| pen > p) {
                    best = Some((pen, false, r));
                }
            }
            for c in (0..nt).filter(|&c| col_open[c]) {
                let (first, second) = col_top[c];
                let low = self.c(first as usize, c);
                let pen = if second == NO_LINE {
                    low
                } else {
                    self.c(second as usize, c) - low
                };
                if best.is_none_or(|(p, _, _)| pen > p) {
                    best = Some((pen, true, c));
                }
            }
            let (_, is_col, line) = best.expect("an open line exists");
            let (r, c) = if is_col {
                (col_top[line].0 as usize, line)
            } else {
                (line, row_top[line].0 as usize)
            };

            if rows_left == 1 && cols_left == 1 {
                self.basis.push(BasicCell {
                    row: r as u32,
                    col: c as u32,
                    flow: rem_s[r].min(rem_d[c]),
                });
                break;
            }
            let close_row = if rows_left == 1 {
                false
            } else if cols_left == 1 {
                true
            } else {
                rem_s[r] <= rem_d[c]
            };
            let flow = if close_row { rem_s[r] } else { rem_d[c] };
            self.basis.push(BasicCell {
                row: r as u32,
                col: c as u32,
                flow,
            });
            if close_row {
                rem_s[r] = 0.0;
                rem_d[c] = (rem_d[c] - flow).max(0.0);
                row_open[r] = false;
                rows_left -= 1;
                for k in (0..nt).filter(|&k| col_open[k]) {
                    if col_top[k].0 == r as u32 || col_top[k].1 == r as u32 {
                        col_top[k] = two_cheapest(ns, &row_open, &|x| self.c(x, k));
                    }
                }
            } else {
                rem_d[c] = 0.0;
                rem_s[r] = (rem_s[r] - flow).max(0.0);
                col_open[c] = false;
                cols_left -= 1;
                for k in (0..ns).filter(|&k| row_open[k]) {
                    if row_top[k].0 == c as u32 || row_top[k].1 == c as u32 {
                        row_top[k] = two_cheapest(nt, &col_open, &|x| self.c(k, x));
                    }
                }
            }
        }
        debug_assert_eq!(self.basis.len(), ns + nt - 1);
    }

    fn other_end(&self, k: u32, node: usize) -> usize {
        let b = self.basis[k as usize];
        let r = b.row as usize;
        if node == r {
            self.ns + b.col as usize
        } else {
            r
        }
    }

    fn cell_cost(&self, k: u32) -> f64 {
        let b = self.basis[k as usize];
        self.c(b.row as usize, b.col as usize)
    }

    fn cell_index(&self, k: u32) -> usize {
        let b = self.basis[k as usize];
        b.row as usize * self.nt + b.col as usize
    }

    /// Depth-first walk from `start` (whose parent, depth and potential are already
    /// set) assigning parents, depths and potentials to everything below it.
    /// Returns the number of nodes reached, `start` included.
    fn hang_subtree(&mut self, start: usize) -> usize {
        let mut reached = 1;
        self.stack.clear();
        self.stack.push(start as u32);
        while let Some(node) = self.stack.pop() {
            let node = node as usize;
            for idx in 0..self.incident[node].len() {
                let k = self.incident[node][idx];
                if k == self.parent_cell[node] {
                    continue;
                }
                let child = self.other_end(k, node);
                self.parent_cell[child] = k;
                self.depth[child] = self.depth[node] + 1;
                self.potential[child] = self.cell_cost(k) - self.potential[node];
                self.stack.push(child as u32);
                reached += 1;
            }
        }
        reached
    }

    fn init_tree(&mut self) -> Result<()> {
        self.parent_cell.fill(NO_CELL);
        self.potential[0] = 0.0;
        self.depth[0] = 0;
        if self.hang_subtree(0) != self.ns + self.nt {
            return Err(Error::Numerical(
                "transportation basis is not a spanning tree".into(),
            ));
        }
        Ok(())
    }

    /// Block pricing; returns the entering cell index `r·nt + c`.
    fn price_block(&mut self) -> Option<usize> {
        let (ns, nt) = (self.ns, self.nt);
        let total = ns * nt;
        let (u, v) = self.potential.split_at(ns);
        let mut best = -self.tolerance;
        let mut found = None;
        let mut pos = self.price_cursor;
        let mut scanned = 0;
        while scanned < total && found.is_none() {
            let mut budget = self.block.min(total - scanned);
            scanned += budget;
            while budget > 0 {
                let r = pos / nt;
                let c0 = pos % nt;
                let len = budget.min(nt - c0);
                let row = &self.cost[pos..pos + len];
                let ur = u[r];
                for (dc, (&cost, &vc)) in row.iter().zip(&v[c0..c0 + len]).enumerate() {
                    let rc = cost - ur - vc;
                    if rc < best {
                        best = rc;
                        found = Some(pos + dc);
                    }
                }
                budget -= len;
                pos += len;
                if pos == total {
                    pos = 0;
                }
            }
        }
        self.price_cursor = pos;
        found
    }

    /// Bland's rule: the lowest-index cell with a negative reduced cost.
    fn price_bland(&self) -> Option<usize> {
        let (u, v) = self.potential.split_at(self.ns);
        (0..self.ns * self.nt).find(|&k| {
            let (r, c) = (k / self.nt, k % self.nt);
            self.cost[k] - u[r] - v[c] < -self.tolerance
        })
    }

    /// Tree path from `from` to `to` as basis cells in walking order. Returns how
    /// many leading cells lie on the climb from `from` to the common ancestor.
    fn tree_path(&self, from: usize, to: usize, path: &mut Vec<u32>, tail: &mut Vec<u32>) -> usize {
        path.clear();
        tail.clear();
        let (mut x, mut y) = (from, to);
        while self.depth[x] > self.depth[y] {
            let k = self.parent_cell[x];
            path.push(k);
            x = self.other_end(k, x);
        }
        while self.depth[y] > self.depth[x] {
            let k = self.parent_cell[y];
            tail.push(k);
            y = self.other_end(k, y);
        }
        while x != y {
            let kx = self.parent_cell[x];
            path.push(kx);
            x = self.other_end(kx, x);
            let ky = self.parent_cell[y];
            tail.push(ky);
            y = self.other_end(ky, y);
        }
        let climb = path.len();
        path.extend(tail.iter().rev());
        climb
    }

    fn run(&mut self) -> Result<()> {
        let ns = self.ns;
        let nodes = self.ns + self.nt;
        let max_iterations = 50 * nodes * nodes + 1000;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        let mut path = Vec::with_capacity(nodes);
        let mut tail = Vec::with_capacity(nodes);
        self.init_tree()?;

        for _ in 0..max_iterations {
            let entering = if bland {
                self.price_bland()
            } else {
                self.price_block()
            };
            let Some(cell) = entering else {
                return Ok(());
            };
            let (er, ec) = (cell / self.nt, cell % self.nt);

            // Walking from the entering column back to its row, cells alternate
            // losing and gaining mass, starting with a loss.
            let climb = self.tree_path(ns + ec, er, &mut path, &mut tail);
            let mut leave_pos = 0;
            let mut theta = f64::INFINITY;
            for (pos, &k) in path.iter().enumerate().step_by(2) {
                let f = self.basis[k as usize].flow;
                if f < theta
                    || (f == theta && self.cell_index(k) < self.cell_index(path[leave_pos]))
                {
                    theta = f;
                    leave_pos = pos;
                }
            }
            for (pos, &k) in path.iter().enumerate() {
                let b = &mut self.basis[k as usize];
                if pos % 2 == 0 {
                    b.flow -= theta;
                } else {
                    b.flow += theta;
                }
            }

            // The leaving cell hangs a subtree off the rest of the tree; the entering
            // cell reattaches it through whichever of its ends lies inside.
            let leaving = path[leave_pos];
            let old = self.basis[leaving as usize];
            for node in [old.row as usize, ns + old.col as usize] {
                let list = &mut self.incident[node];
                let at = list
                    .iter()
                    .position(|&k| k == leaving)
                    .expect("incident cell");
                list.swap_remove(at);
            }
            self.basis[leaving as usize] = BasicCell {
                row: er as u32,
                col: ec as u32,
                flow: theta,
            };
            self.incident[er].push(leaving);
            self.incident[ns + ec].push(leaving);

            let (inside, outside) = if leave_pos < climb {
                (ns + ec, er)
            } else {
                (er, ns + ec)
            };
            self.parent_cell[inside] = leaving;
            self.depth[inside] = self.depth[outside] + 1;
            self.potential[inside] = self.cell_cost(leaving) - self.potential[outside];
            self.hang_subtree(inside);

            if theta == 0.0 {
                degenerate_run += 1;
                if degenerate_run > nodes {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }
        }
        Err(Error::Numerical(format!(
            "transportation simplex did not converge within {max_iterations} pivots"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::super::build_cost_matrix;
    use super::*;
    use crate::synth::GridSpec;

    fn grid(h: usize, w: usize) -> CostMatrix {
        build_cost_matrix(&GridSpec {
            height: h,
            width: w,
            ..GridSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn identical_histograms_cost_zero() {
        let c = grid(3, 3);
        let h = Histogram::new(vec![0.1, 0.2, 0.0, 0.05, 0.15, 0.1, 0.1, 0.2, 0.1]).unwrap();
        let plan = emd(&h, &h, &c).unwrap();
        assert_eq!(plan.cost(), 0.0);
        assert_eq!(plan.row_sums(), h.mass());
    }

    #[test]
    fn dirac_to_dirac() {
        let c = grid(26, 26);
        let a = Histogram::dirac(676, 0).unwrap();
        let b = Histogram::dirac(676, 3).unwrap();
        let plan = emd(&a, &b, &c).unwrap();
        assert_eq!(plan.cost(), 3.0);
        assert_eq!(plan.flow(0, 3), 1.0);
    }

    #[test]
    fn half_mass_row_shift() {
        let c = grid(2, 2);
        let a = Histogram::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let b = Histogram::new(vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        assert!((emd(&a, &b, &c).unwrap().cost() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mass_mismatch_is_infeasible() {
        let c = grid(1 + 1, 2);
        let a = Histogram {
            mass: vec![0.5, 0.5, 0.0, 0.0],
        };
        let b = Histogram {
            mass: vec![0.0, 0.0, 0.5, 0.6],
        };
        assert!(matches!(emd(&a, &b, &c), Err(Error::Infeasible(_))));
    }

    #[test]
    fn small_drift_is_repaired() {
        let c = grid(2, 2);
        let a = Histogram {
            mass: vec![0.5, 0.5, 0.0, 0.0],
        };
        let b = Histogram {
            mass: vec![0.0, 0.0, 0.5, 0.5 + 5e-10],
        };
        let plan = emd(&a, &b, &c).unwrap();
        let cols = plan.col_sums();
        assert!((cols[3] - 0.5).abs() < 1e-9);
        assert!((plan.cost() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let c = grid(2, 2);
        let a = Histogram::dirac(3, 0).unwrap();
        assert!(matches!(emd(&a, &a, &c), Err(Error::Shape(_))));
    }
}
