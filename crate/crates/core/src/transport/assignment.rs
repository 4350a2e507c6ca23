//! Exact linear assignment.
//!
//! Small dense problems use the O(n³) Hungarian method followed by a
//! lexicographic tie-break among optimal permutations. Large geometric
//! problems run shortest augmenting paths on a sparse nearest-neighbour
//! candidate graph and then certify optimality against the full cost
//! function through dual feasibility; violated pairs are added as edges and
//! the solve is repeated.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid, Error, Result};
use crate::geometry::{self, DomainKind, Point};

const NONE: usize = usize::MAX;

/// Reduced costs below `-DUAL_TOLERANCE` count as dual violations.
pub const DUAL_TOLERANCE: f64 = 1e-12;

/// Largest size handled by the dense solver when the cost is geometric.
pub const DENSE_LIMIT: usize = 128;

/// An optimal permutation and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `perm[i]` is the column assigned to row `i`.
    pub perm: Vec<usize>,
    /// `Σ_i c(i, perm[i])`.
    pub total: f64,
    /// `total / n`, the empirical `W₂²` when costs are squared distances.
    pub cost: f64,
}

impl Matching {
    fn from_perm(perm: Vec<usize>, mut cost: impl FnMut(usize, usize) -> f64) -> Self {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
        let cost = if perm.is_empty() {
            0.0
        } else {
            total / perm.len() as f64
        };
        Matching { perm, total, cost }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

/// Solves the square assignment problem given as a dense matrix.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<Matching> {
    let n = cost.len();
    if n == 0 {
        return Err(invalid("empty cost matrix"));
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(invalid(format!(
                "row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite cost {v} in row {i}")));
        }
    }
    let (perm, u, v) = hungarian(n, |i, j| cost[i][j]);
    let perm = lexicographic_refine(n, |i, j| cost[i][j], perm, &u, &v);
    Ok(Matching::from_perm(perm, |i, j| cost[i][j]))
}

/// Dense Hungarian method (potentials form). Returns the assignment and
/// dual potentials with `c(i,j) - u[i] - v[j] >= 0`.
fn hungarian(n: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based internally; column 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
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
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    (perm, u[1..].to_vec(), v[1..].to_vec())
}

/// Among the perfect matchings of the equality graph of `(u, v)` (all of
/// them optimal), returns the lexicographically smallest permutation.
fn lexicographic_refine(
    n: usize,
    cost: impl Fn(usize, usize) -> f64,
    perm: Vec<usize>,
    u: &[f64],
    v: &[f64],
) -> Vec<usize> {
    let scale = (0..n).map(|i| cost(i, perm[i]).abs()).fold(1.0, f64::max);
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| cost(i, j) - u[i] - v[j] <= 1e-12 * scale)
                .collect()
        })
        .collect();
    let mut row_of = vec![NONE; n];
    let mut col_of = perm;
    for (i, &j) in col_of.iter().enumerate() {
        row_of[j] = i;
    }
    let mut fixed_col = vec![false; n];
    for i in 0..n {
        for &j in &tight[i] {
            if fixed_col[j] {
                continue;
            }
            if col_of[i] == j {
                break;
            }
            // Force i -> j; the row displaced from j must re-augment using
            // rows > i and unfixed columns.
            let displaced = row_of[j];
            let old = col_of[i];
            let (saved_col, saved_row) = (col_of.clone(), row_of.clone());
            col_of[i] = j;
            row_of[j] = i;
            row_of[old] = NONE;
            col_of[displaced] = NONE;
            fixed_col[j] = true;
            let mut seen = vec![false; n];
            if augment(
                displaced,
                i,
                &tight,
                &fixed_col,
                &mut col_of,
                &mut row_of,
                &mut seen,
            ) {
                break;
            }
            fixed_col[j] = false;
            col_of = saved_col;
            row_of = saved_row;
        }
        fixed_col[col_of[i]] = true;
    }
    col_of
}

fn augment(
    row: usize,
    locked_upto: usize,
    tight: &[Vec<usize>],
    fixed_col: &[bool],
    col_of: &mut [usize],
    row_of: &mut [usize],
    seen: &mut [bool],
) -> bool {
    for &j in &tight[row] {
        if fixed_col[j] || seen[j] {
            continue;
        }
        seen[j] = true;
        let other = row_of[j];
        if other == NONE
            || (other > locked_upto
                && augment(other, locked_upto, tight, fixed_col, col_of, row_of, seen))
        {
            col_of[row] = j;
            row_of[j] = row;
            return true;
        }
    }
    false
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, ties by column index.
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct SparseState {
    col_of: Vec<usize>,
    row_of: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl SparseState {
    /// Column reduction followed by a greedy matching on tight edges.
    fn initial(n: usize, adj: &[Vec<(usize, f64)>]) -> Self {
        let mut v = vec![f64::INFINITY; n];
        for row in adj {
            for &(j, c) in row {
                v[j] = v[j].min(c);
            }
        }
        for x in v.iter_mut().filter(|x| x.is_infinite()) {
            *x = 0.0;
        }
        let mut state = SparseState {
            col_of: vec![NONE; n],
            row_of: vec![NONE; n],
            u: vec![0.0; n],
            v,
        };
        for (i, edges) in adj.iter().enumerate() {
            state.reset_row(i, edges);
        }
        state
    }

    /// Sets `u[i]` to the smallest reduced cost of row `i` (unmatched) and
    /// takes a free tight column if one exists.
    fn reset_row(&mut self, i: usize, edges: &[(usize, f64)]) {
        let mut best = f64::INFINITY;
        let mut best_free = NONE;
        for &(j, c) in edges {
            let r = c - self.v[j];
            if r < best {
                best = r;
                best_free = NONE;
            }
            if r == best && best_free == NONE && self.row_of[j] == NONE {
                best_free = j;
            }
        }
        self.u[i] = if best.is_finite() { best } else { 0.0 };
        if best_free != NONE {
            self.col_of[i] = best_free;
            self.row_of[best_free] = i;
        }
    }

    fn unmatch(&mut self, i: usize) {
        let j = self.col_of[i];
        if j != NONE {
            self.row_of[j] = NONE;
            self.col_of[i] = NONE;
        }
    }
}

/// Shortest augmenting paths from every free row. On failure returns the
/// rows reached by the search that got stuck (a Hall violator of the
/// candidate graph).
fn augment_all(
    state: &mut SparseState,
    adj: &[Vec<(usize, f64)>],
) -> std::result::Result<(), Vec<usize>> {
    let n = adj.len();
    let SparseState {
        col_of,
        row_of,
        u,
        v,
    } = state;
    let mut dist = vec![f64::INFINITY; n];
    let mut path = vec![NONE; n];
    let mut scanned = vec![false; n];
    let mut touched = Vec::new();
    let mut scanned_cols = Vec::new();
    let mut scanned_rows = Vec::new();
    let mut heap = BinaryHeap::new();

    for cur in 0..n {
        if col_of[cur] != NONE {
            continue;
        }
        let mut min_val = 0.0;
        let mut i = cur;
        let sink;
        loop {
            scanned_rows.push(i);
            for &(j, c) in &adj[i] {
                if scanned[j] {
                    continue;
                }
                let r = min_val + c - u[i] - v[j];
                if r < dist[j] {
                    if dist[j] == f64::INFINITY {
                        touched.push(j);
                    }
                    dist[j] = r;
                    path[j] = i;
                    heap.push(HeapItem(r, j));
                }
            }
            let j = loop {
                let Some(HeapItem(d, j)) = heap.pop() else {
                    return Err(scanned_rows);
                };
                if !scanned[j] && d <= dist[j] {
                    break j;
                }
            };
            min_val = dist[j];
            scanned[j] = true;
            scanned_cols.push(j);
            if row_of[j] == NONE {
                sink = j;
                break;
            }
            i = row_of[j];
        }
        u[cur] += min_val;
        for &r in &scanned_rows[1..] {
            u[r] += min_val - dist[col_of[r]];
        }
        for &j in &scanned_cols {
            v[j] -= min_val - dist[j];
        }
        let mut j = sink;
        loop {
            let r = path[j];
            row_of[j] = r;
            let prev = col_of[r];
            col_of[r] = j;
            if r == cur {
                break;
            }
            j = prev;
        }
        for &j in &touched {
            dist[j] = f64::INFINITY;
            path[j] = NONE;
            scanned[j] = false;
        }
        touched.clear();
        scanned_cols.clear();
        scanned_rows.clear();
        heap.clear();
    }
    Ok(())
}

/// Exact assignment for an implicit cost function with a candidate edge
/// list per row. Optimality is certified against every pair `(i, j)`;
/// rows with violated dual constraints get the offending edges and are
/// re-augmented.
pub fn solve_with_candidates(
    n: usize,
    cost: impl Fn(usize, usize) -> f64,
    candidates: Vec<Vec<usize>>,
) -> Result<Matching> {
    let all_pairs = |u: &[f64], v: &[f64]| {
        let mut out = Vec::new();
        for (i, &ui) in u.iter().enumerate() {
            for (j, &vj) in v.iter().enumerate() {
                if cost(i, j) - ui - vj < -DUAL_TOLERANCE {
                    out.push((i, j));
                }
            }
        }
        out
    };
    solve_certified(n, &cost, candidates, all_pairs)
}

/// Core of [`solve_with_candidates`]; `violations(u, v)` must list every
/// pair with `c(i,j) - u[i] - v[j] < -DUAL_TOLERANCE`, grouped by row.
fn solve_certified(
    n: usize,
    cost: &impl Fn(usize, usize) -> f64,
    mut candidates: Vec<Vec<usize>>,
    violations: impl Fn(&[f64], &[f64]) -> Vec<(usize, usize)>,
) -> Result<Matching> {
    if candidates.len() != n {
        return Err(invalid("one candidate list per row required"));
    }
    let edges = |i: usize, cols: &[usize]| -> Vec<(usize, f64)> {
        cols.iter().map(|&j| (j, cost(i, j))).collect()
    };
    let mut adj: Vec<Vec<(usize, f64)>> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| edges(i, c))
        .collect();
    let mut state = SparseState::initial(n, &adj);
    for _round in 0..32 {
        if augment_all(&mut state, &adj).is_err() {
            // Candidate graph too thin: double every row's list and start over.
            for (i, cols) in candidates.iter_mut().enumerate() {
                let keep = (cols.len() * 2).min(n);
                let mut all: Vec<(f64, usize)> = (0..n).map(|j| (cost(i, j), j)).collect();
                if keep < n {
                    all.select_nth_unstable_by(keep - 1, |a, b| {
                        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
                    });
                    all.truncate(keep);
                }
                *cols = all.into_iter().map(|(_, j)| j).collect();
            }
            adj = candidates
                .iter()
                .enumerate()
                .map(|(i, c)| edges(i, c))
                .collect();
            state = SparseState::initial(n, &adj);
            continue;
        }
        let mut dirty = Vec::new();
        for (i, j) in violations(&state.u, &state.v) {
            if !candidates[i].contains(&j) {
                candidates[i].push(j);
                adj[i].push((j, cost(i, j)));
            }
            if dirty.last() != Some(&i) {
                dirty.push(i);
            }
        }
        dirty.dedup();
        if dirty.is_empty() {
            return Ok(Matching::from_perm(state.col_of, cost));
        }
        for &i in &dirty {
            state.unmatch(i);
        }
        for &i in &dirty {
            let SparseState { u, v, .. } = &mut state;
            u[i] = adj[i]
                .iter()
                .map(|&(j, c)| c - v[j])
                .fold(f64::INFINITY, f64::min);
        }
    }
    Err(Error::Resource(
        "sparse assignment failed to certify optimality".into(),
    ))
}

/// Uniform cell buckets over the unit square (or interval).
struct Buckets {
    gx: usize,
    gy: usize,
    h: f64,
    periodic: bool,
    cells: Vec<Vec<usize>>,
}

impl Buckets {
    fn new(domain: DomainKind, points: &[Point]) -> Self {
        let m = points.len().max(1);
        let (gx, gy) = if domain == DomainKind::Interval1 {
            ((m / 2).max(1), 1)
        } else {
            let g = ((m as f64 / 2.0).sqrt().ceil() as usize).max(1);
            (g, g)
        };
        let mut b = Buckets {
            gx,
            gy,
            h: 1.0 / gx.max(gy) as f64,
            periodic: domain == DomainKind::Torus2,
            cells: vec![Vec::new(); gx * gy],
        };
        for (j, &p) in points.iter().enumerate() {
            let c = b.cell_of(p);
            b.cells[c].push(j);
        }
        b
    }

    fn coords(&self, p: Point) -> (usize, usize) {
        let cx = ((p.x * self.gx as f64) as usize).min(self.gx - 1);
        let cy = ((p.y * self.gy as f64) as usize).min(self.gy - 1);
        (cx, cy)
    }

    fn cell_of(&self, p: Point) -> usize {
        let (cx, cy) = self.coords(p);
        cy * self.gx + cx
    }

    fn max_ring(&self) -> usize {
        self.gx.max(self.gy)
    }

    /// Whether ring `ring` already wraps onto itself on the torus.
    fn saturated(&self, ring: usize) -> bool {
        2 * ring + 1 >= self.max_ring()
    }

    /// Distinct cells at Chebyshev distance exactly `ring` from `p`'s cell.
    fn ring(&self, p: Point, ring: usize, out: &mut Vec<usize>) {
        out.clear();
        let (cx, cy) = self.coords(p);
        let r = ring as i64;
        for dx in -r..=r {
            for dy in -r..=r {
                if dx.abs() != r && dy.abs() != r {
                    continue;
                }
                let (mut x, mut y) = (cx as i64 + dx, cy as i64 + dy);
                if self.periodic {
                    x = x.rem_euclid(self.gx as i64);
                    y = y.rem_euclid(self.gy as i64);
                } else if x < 0 || y < 0 || x >= self.gx as i64 || y >= self.gy as i64 {
                    continue;
                }
                out.push(y as usize * self.gx + x as usize);
            }
        }
        if self.periodic && self.saturated(ring) {
            out.sort_unstable();
            out.dedup();
        }
    }
}

/// Indices of (up to) the `k` nearest `cols` for every row point.
pub fn nearest_candidates(
    domain: DomainKind,
    rows: &[Point],
    cols: &[Point],
    k: usize,
) -> Vec<Vec<usize>> {
    let k = k.min(cols.len()).max(1);
    let buckets = Buckets::new(domain, cols);
    let mut out = Vec::with_capacity(rows.len());
    let mut found: Vec<(f64, usize)> = Vec::new();
    let mut ring_cells = Vec::new();
    let mut seen = vec![false; buckets.cells.len()];
    for &p in rows {
        found.clear();
        let mut visited = Vec::new();
        for ring in 0..=buckets.max_ring() {
            buckets.ring(p, ring, &mut ring_cells);
            for &cell in &ring_cells {
                if seen[cell] {
                    continue;
                }
                seen[cell] = true;
                visited.push(cell);
                for &j in &buckets.cells[cell] {
                    found.push((geometry::sq_distance(domain, p, cols[j]), j));
                }
            }
            if found.len() >= k {
                found.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let reach = ring as f64 * buckets.h;
                if found[k - 1].0 <= reach * reach || buckets.saturated(ring) {
                    break;
                }
            }
        }
        for c in visited {
            seen[c] = false;
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.push(found.iter().take(k).map(|&(_, j)| j).collect());
    }
    out
}

/// Dual violations for squared-distance costs, scanning only cells that
/// can contain `j` with `d² < u_i + v_j`.
fn geometric_violations(
    domain: DomainKind,
    rows: &[Point],
    cols: &[Point],
    u: &[f64],
    v: &[f64],
) -> Vec<(usize, usize)> {
    let buckets = Buckets::new(domain, cols);
    let cell_vmax: Vec<f64> = buckets
        .cells
        .iter()
        .map(|c| c.iter().map(|&j| v[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    let mut ring_cells = Vec::new();
    let mut seen = vec![false; buckets.cells.len()];
    for (i, &p) in rows.iter().enumerate() {
        let slack = u[i] + vmax;
        let mut visited = Vec::new();
        for ring in 0..=buckets.max_ring() {
            // Points in ring r+1 are at least r·h away.
            let near = ring.saturating_sub(1) as f64 * buckets.h;
            if near * near > slack + DUAL_TOLERANCE {
                break;
            }
            buckets.ring(p, ring, &mut ring_cells);
            for &cell in &ring_cells {
                if seen[cell] {
                    continue;
                }
                seen[cell] = true;
                visited.push(cell);
                if near * near > u[i] + cell_vmax[cell] + DUAL_TOLERANCE {
                    continue;
                }
                for &j in &buckets.cells[cell] {
                    if geometry::sq_distance(domain, p, cols[j]) - u[i] - v[j] < -DUAL_TOLERANCE {
                        out.push((i, j));
                    }
                }
            }
            if buckets.saturated(ring) {
                break;
            }
        }
        for c in visited {
            seen[c] = false;
        }
    }
    out
}

/// Exact assignment with squared-distance costs between two equal-size
/// point families. `k` is the number of nearest neighbours used as initial
/// candidates in the sparse regime.
pub fn assign_points(
    domain: DomainKind,
    rows: &[Point],
    cols: &[Point],
    k: usize,
) -> Result<Matching> {
    let n = rows.len();
    if n != cols.len() {
        return Err(invalid(format!(
            "size mismatch {} vs {}",
            rows.len(),
            cols.len()
        )));
    }
    if n == 0 {
        return Err(invalid("empty point family"));
    }
    let cost = |i: usize, j: usize| geometry::sq_distance(domain, rows[i], cols[j]);
    if n <= DENSE_LIMIT {
        let (perm, u, v) = hungarian(n, cost);
        let perm = lexicographic_refine(n, cost, perm, &u, &v);
        return Ok(Matching::from_perm(perm, cost));
    }
    let mut candidates = nearest_candidates(domain, rows, cols, k);
    // Reverse neighbours keep every column reachable.
    for (j, near) in nearest_candidates(domain, cols, rows, k)
        .into_iter()
        .enumerate()
    {
        for i in near {
            if !candidates[i].contains(&j) {
                candidates[i].push(j);
            }
        }
    }
    solve_certified(n, &cost, candidates, |u, v| {
        geometric_violations(domain, rows, cols, u, v)
    })
}
