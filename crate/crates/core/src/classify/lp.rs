//! Dense two-phase simplex for small and medium linear programs.
//!
//! Problems are stated in general form (`lo <= a.x <= hi`, `l <= x <= u`, any
//! bound may be infinite) and lowered to `A z = b, z >= 0, b >= 0` before the
//! tableau is built. Pricing is Dantzig's rule, falling back to Bland's rule
//! after a run of degenerate pivots so the method cannot cycle.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-9;
// entering columns whose best pivot is smaller than this are skipped
const MIN_PIVOT: f64 = 1e-7;
const COST_EPS: f64 = 1e-10;
const FEAS_EPS: f64 = 1e-8;
const DEGENERATE_RUN: usize = 50;

/// `minimize c.x` subject to row and variable bounds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub var_lower: Vec<f64>,
    pub var_upper: Vec<f64>,
    pub row_lower: Vec<f64>,
    pub row_upper: Vec<f64>,
    /// Sparse constraint matrix as (row, col, value); duplicates are summed.
    pub entries: Vec<(usize, usize, f64)>,
}

impl LpProblem {
    /// `n` variables, all non-negative, zero objective, no rows.
    pub fn new(n: usize) -> LpProblem {
        LpProblem {
            objective: vec![0.0; n],
            var_lower: vec![0.0; n],
            var_upper: vec![f64::INFINITY; n],
            ..LpProblem::default()
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.row_lower.len()
    }

    pub fn set_free(&mut self, j: usize) {
        self.var_lower[j] = f64::NEG_INFINITY;
        self.var_upper[j] = f64::INFINITY;
    }

    /// Appends `lo <= sum(coef * x[col]) <= hi` and returns its index.
    pub fn add_row(&mut self, terms: &[(usize, f64)], lo: f64, hi: f64) -> usize {
        let r = self.n_rows();
        self.row_lower.push(lo);
        self.row_upper.push(hi);
        self.entries.extend(terms.iter().filter(|(_, v)| *v != 0.0).map(|&(c, v)| (r, c, v)));
        r
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.var_lower.len() != n || self.var_upper.len() != n || self.row_upper.len() != self.n_rows() {
            return Err(Error::Lp("inconsistent problem dimensions".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Lp("non-finite objective".into()));
        }
        for (lo, hi) in self.var_lower.iter().zip(&self.var_upper).chain(self.row_lower.iter().zip(&self.row_upper)) {
            if lo.is_nan() || hi.is_nan() || lo > hi || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY {
                return Err(Error::Lp(format!("bad bounds [{lo}, {hi}]")));
            }
        }
        for &(r, c, v) in &self.entries {
            if r >= self.n_rows() || c >= n || !v.is_finite() {
                return Err(Error::Lp(format!("bad matrix entry ({r}, {c}, {v})")));
            }
        }
        Ok(())
    }

    /// Largest violation of any row or variable bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut act = vec![0.0; self.n_rows()];
        for &(r, c, v) in &self.entries {
            act[r] += v * x[c];
        }
        let rows = act.iter().zip(self.row_lower.iter().zip(&self.row_upper));
        let vars = x.iter().zip(self.var_lower.iter().zip(&self.var_upper));
        rows.chain(vars).map(|(a, (lo, hi))| (lo - a).max(a - hi).max(0.0)).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values (meaningful only when optimal).
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

// How an original variable maps onto non-negative standard-form columns.
#[derive(Clone, Copy, Debug)]
enum VarMap {
    Shift { col: usize, lo: f64 },
    Mirror { col: usize, hi: f64 },
    Split { pos: usize, neg: usize },
}

struct Standard {
    a: Vec<Vec<f64>>, // rows of length n_cols
    b: Vec<f64>,
    c: Vec<f64>,
    c0: f64,
    maps: Vec<VarMap>,
    // a column that can start in the basis for each row, if any
    slack_basis: Vec<Option<usize>>,
}

fn lower(p: &LpProblem) -> Standard {
    let mut maps = Vec::with_capacity(p.n_vars());
    let mut n_cols = 0;
    let mut c0 = 0.0;
    for j in 0..p.n_vars() {
        let (lo, hi) = (p.var_lower[j], p.var_upper[j]);
        let m = if lo.is_finite() {
            VarMap::Shift { col: n_cols, lo }
        } else if hi.is_finite() {
            VarMap::Mirror { col: n_cols, hi }
        } else {
            n_cols += 1;
            VarMap::Split { pos: n_cols - 1, neg: n_cols }
        };
        n_cols += 1;
        maps.push(m);
    }
    let mut c = vec![0.0; n_cols];
    for (j, m) in maps.iter().enumerate() {
        let cj = p.objective[j];
        match *m {
            VarMap::Shift { col, lo } => {
                c[col] += cj;
                c0 += cj * lo;
            }
            VarMap::Mirror { col, hi } => {
                c[col] -= cj;
                c0 += cj * hi;
            }
            VarMap::Split { pos, neg } => {
                c[pos] += cj;
                c[neg] -= cj;
            }
        }
    }

    // Constraint rows over the standard columns, each with a constant offset.
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p.n_rows()];
    let mut offset = vec![0.0; p.n_rows()];
    for &(r, j, v) in &p.entries {
        match maps[j] {
            VarMap::Shift { col, lo } => {
                rows[r].push((col, v));
                offset[r] += v * lo;
            }
            VarMap::Mirror { col, hi } => {
                rows[r].push((col, -v));
                offset[r] += v * hi;
            }
            VarMap::Split { pos, neg } => {
                rows[r].push((pos, v));
                rows[r].push((neg, -v));
            }
        }
    }
    // Finite upper bounds on shifted variables become rows of their own.
    let mut extra: Vec<(Vec<(usize, f64)>, f64, f64)> = Vec::new();
    for (j, m) in maps.iter().enumerate() {
        if let VarMap::Shift { col, lo } = *m {
            if p.var_upper[j].is_finite() {
                extra.push((vec![(col, 1.0)], f64::NEG_INFINITY, p.var_upper[j] - lo));
            }
        }
    }

    // Each side becomes an equality with a slack: a.z + s = hi or a.z - s = lo.
    let mut specs: Vec<(Vec<(usize, f64)>, f64, i8)> = Vec::new(); // terms, rhs, slack sign (0 = none)
    let all = rows
        .into_iter()
        .zip(offset)
        .zip(p.row_lower.iter().zip(&p.row_upper))
        .map(|((t, off), (lo, hi))| (t, lo - off, hi - off))
        .chain(extra);
    for (terms, lo, hi) in all {
        if lo == hi {
            specs.push((terms, lo, 0));
            continue;
        }
        if hi.is_finite() {
            specs.push((terms.clone(), hi, 1));
        }
        if lo.is_finite() {
            specs.push((terms, lo, -1));
        }
    }
    let n_slack = specs.iter().filter(|s| s.2 != 0).count();
    let total = n_cols + n_slack;
    let mut a = Vec::with_capacity(specs.len());
    let mut b = Vec::with_capacity(specs.len());
    let mut slack_basis = Vec::with_capacity(specs.len());
    let mut next = n_cols;
    for (terms, rhs, sign) in specs {
        let mut row = vec![0.0; total];
        for (col, v) in terms {
            row[col] += v;
        }
        let mut slack = None;
        if sign != 0 {
            row[next] = sign as f64;
            slack = Some(next);
            next += 1;
        }
        let flip = rhs < 0.0;
        if flip {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        let rhs = if flip { -rhs } else { rhs };
        let basic = slack.filter(|&s| row[s] > 0.0);
        a.push(row);
        b.push(rhs);
        slack_basis.push(basic);
    }
    c.resize(total, 0.0);
    Standard { a, b, c, c0, maps, slack_basis }
}

struct Tableau {
    t: Vec<Vec<f64>>, // m rows, last entry is rhs
    basis: Vec<usize>,
    width: usize,
    // the untransformed rows, used to rebuild `t` from scratch
    orig: Vec<Vec<f64>>,
}

impl Tableau {
    fn pivot(&mut self, r: usize, q: usize) {
        let p = self.t[r][q];
        self.t[r].iter_mut().for_each(|v| *v /= p);
        let prow = std::mem::take(&mut self.t[r]);
        for row in self.t.iter_mut() {
            let f = row.get(q).copied().unwrap_or(0.0);
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                row[q] = 0.0;
            }
        }
        self.t[r] = prow;
        self.basis[r] = q;
    }

    /// Recomputes `t = B^-1 orig` for the current basis, discarding the
    /// round-off accumulated by successive pivots. Keeps the old tableau if
    /// the basis matrix looks singular.
    fn reinvert(&mut self) -> bool {
        let m = self.basis.len();
        let mut aug: Vec<Vec<f64>> = self
            .orig
            .iter()
            .map(|row| {
                let mut r: Vec<f64> = self.basis.iter().map(|&j| row[j]).collect();
                r.extend_from_slice(row);
                r
            })
            .collect();
        for k in 0..m {
            let p = (k..m).max_by(|&i, &j| aug[i][k].abs().total_cmp(&aug[j][k].abs())).unwrap();
            if aug[p][k].abs() < 1e-12 {
                return false;
            }
            aug.swap(k, p);
            let pv = aug[k][k];
            aug[k].iter_mut().for_each(|v| *v /= pv);
            let prow = std::mem::take(&mut aug[k]);
            for row in aug.iter_mut() {
                if row.is_empty() {
                    continue;
                }
                let f = row[k];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&prow).skip(k) {
                        *v -= f * pv;
                    }
                }
            }
            aug[k] = prow;
        }
        let w = self.width;
        for (r, row) in aug.into_iter().enumerate() {
            let mut t = row[m..].to_vec();
            for &j in &self.basis {
                t[j] = 0.0;
            }
            t[self.basis[r]] = 1.0;
            if t[w] < 0.0 && t[w] > -FEAS_EPS {
                t[w] = 0.0;
            }
            self.t[r] = t;
        }
        true
    }

    /// Reduced costs and (negated) objective of `base` for the current basis.
    fn price(&self, base: &[f64]) -> (Vec<f64>, f64) {
        let w = self.width;
        let mut cost = base.to_vec();
        let mut obj = 0.0;
        for (row, &bj) in self.t.iter().zip(&self.basis) {
            let f = base[bj];
            if f != 0.0 {
                cost.iter_mut().zip(row).for_each(|(c, v)| *c -= f * v);
                obj -= f * row[w];
            }
        }
        for &bj in &self.basis {
            cost[bj] = 0.0;
        }
        (cost, obj)
    }

    /// Runs simplex for costs `base` with entering columns restricted to
    /// `< allowed`. Returns `(bounded, -objective)`.
    fn optimize(&mut self, base: &[f64], allowed: usize, iters: &mut usize, limit: usize) -> Result<(bool, f64)> {
        let refresh = self.basis.len().max(50);
        let (mut cost, mut obj) = self.price(base);
        let mut degenerate = 0;
        let mut since_refresh = 0;
        let mut is_basic = vec![false; self.width];
        self.basis.iter().for_each(|&j| is_basic[j] = true);
        let mut rejected: Vec<usize> = Vec::new();
        loop {
            if since_refresh >= refresh {
                if self.reinvert() {
                    (cost, obj) = self.price(base);
                }
                since_refresh = 0;
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let mut enter = None;
            let mut best = -COST_EPS;
            for (k, &ck) in cost.iter().enumerate().take(allowed) {
                if ck < best && !is_basic[k] && !rejected.contains(&k) {
                    enter = Some(k);
                    if bland {
                        break;
                    }
                    best = ck;
                }
            }
            let Some(q) = enter else {
                if since_refresh > 0 && self.reinvert() {
                    // confirm optimality on a freshly computed tableau
                    (cost, obj) = self.price(base);
                    since_refresh = 0;
                    rejected.clear();
                    if cost.iter().zip(&is_basic).take(allowed).any(|(&c, &b)| c < -COST_EPS && !b) {
                        continue;
                    }
                }
                return Ok((true, obj));
            };
            let w = self.width;
            // Two-pass ratio test: find the minimum ratio, then among rows
            // within a small tolerance of it take the largest pivot (or the
            // lowest basic index under Bland's rule).
            let mut min_ratio = f64::INFINITY;
            for row in &self.t {
                if row[q] > PIVOT_EPS {
                    min_ratio = min_ratio.min(row[w].max(0.0) / row[q]);
                }
            }
            let mut leave: Option<(usize, f64)> = None;
            if min_ratio.is_finite() {
                let slack = 1e-9 * (1.0 + min_ratio.abs());
                for (i, row) in self.t.iter().enumerate() {
                    let a = row[q];
                    if a <= PIVOT_EPS || row[w].max(0.0) / a > min_ratio + slack {
                        continue;
                    }
                    let better = match leave {
                        None => true,
                        Some((li, _)) if bland => self.basis[i] < self.basis[li],
                        Some((li, _)) => a > self.t[li][q],
                    };
                    if better {
                        leave = Some((i, row[w].max(0.0) / a));
                    }
                }
            }
            let Some((r, ratio)) = leave else { return Ok((false, obj)) };
            if self.t[r][q] < MIN_PIVOT {
                rejected.push(q);
                continue;
            }
            rejected.clear();
            degenerate = if ratio <= 1e-12 { degenerate + 1 } else { 0 };
            is_basic[self.basis[r]] = false;
            is_basic[q] = true;
            self.pivot(r, q);
            let f = cost[q];
            if f != 0.0 {
                cost.iter_mut().zip(&self.t[r]).for_each(|(c, v)| *c -= f * v);
                obj -= f * self.t[r][w];
                cost[q] = 0.0;
            }
            since_refresh += 1;
            *iters += 1;
            if *iters > limit {
                return Err(Error::IterationLimit(limit));
            }
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k].abs() < 1e-14 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Some(x)
}

/// Solves `p`. Infeasible and unbounded problems are reported through
/// [`LpStatus`]; running out of pivots is an error.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution> {
    p.validate()?;
    let std = lower(p);
    let m = std.b.len();
    let n = std.c.len();

    // Artificial columns for rows without a usable slack.
    let art_rows: Vec<usize> = (0..m).filter(|&i| std.slack_basis[i].is_none()).collect();
    let width = n + art_rows.len();
    let mut t = Vec::with_capacity(m);
    let mut basis = vec![0; m];
    for i in 0..m {
        let mut row = std.a[i].clone();
        row.resize(width + 1, 0.0);
        row[width] = std.b[i];
        t.push(row);
        if let Some(s) = std.slack_basis[i] {
            basis[i] = s;
        }
    }
    for (k, &i) in art_rows.iter().enumerate() {
        t[i][n + k] = 1.0;
        basis[i] = n + k;
    }
    let orig = t.clone();
    let mut tab = Tableau { t, basis, width, orig };
    let limit = 50 * (m + width) + 1000;
    let mut iters = 0;

    // Phase 1: minimize the sum of artificials.
    if !art_rows.is_empty() {
        let mut base = vec![0.0; width];
        base[n..].iter_mut().for_each(|c| *c = 1.0);
        let (_, obj) = tab.optimize(&base, width, &mut iters, limit)?;
        let scale = 1.0 + std.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if -obj > FEAS_EPS * scale {
            return Ok(LpSolution { status: LpStatus::Infeasible, x: vec![], objective: f64::NAN, iterations: iters });
        }
        // Drive remaining (zero-valued) artificials out of the basis.
        let mut dead = Vec::new();
        for r in 0..m {
            if tab.basis[r] < n {
                continue;
            }
            let q = (0..n).filter(|&k| tab.t[r][k].abs() > 1e-9).max_by(|&a, &b| tab.t[r][a].abs().total_cmp(&tab.t[r][b].abs()));
            match q {
                Some(q) => tab.pivot(r, q),
                None => dead.push(r), // redundant row
            }
        }
        for r in dead.into_iter().rev() {
            tab.t.remove(r);
            tab.basis.remove(r);
            tab.orig.remove(r);
        }
    }

    // Phase 2 on the original costs.
    let mut base = std.c.clone();
    base.resize(width, 0.0);
    let (bounded, obj) = tab.optimize(&base, n, &mut iters, limit)?;
    if !bounded {
        return Ok(LpSolution { status: LpStatus::Unbounded, x: vec![], objective: f64::NEG_INFINITY, iterations: iters });
    }

    // Standard-form values, polished by re-solving B z_B = b on the original rows.
    let mut z = vec![0.0; n];
    for (r, &bj) in tab.basis.iter().enumerate() {
        z[bj] = tab.t[r][width].max(0.0);
    }
    polish(&std, &tab.basis, &mut z);

    let x: Vec<f64> = std
        .maps
        .iter()
        .map(|m| match *m {
            VarMap::Shift { col, lo } => lo + z[col],
            VarMap::Mirror { col, hi } => hi - z[col],
            VarMap::Split { pos, neg } => z[pos] - z[neg],
        })
        .collect();
    let objective: f64 = p.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    debug_assert!((objective - (std.c0 - obj)).abs() <= 1e-6 * (1.0 + objective.abs()));
    Ok(LpSolution { status: LpStatus::Optimal, x, objective, iterations: iters })
}

fn polish(std: &Standard, basis: &[usize], z: &mut [f64]) {
    let m = std.b.len();
    if basis.len() != m {
        // Redundant rows were dropped; keep the tableau values.
        return;
    }
    let bmat: Vec<Vec<f64>> = (0..m).map(|i| basis.iter().map(|&j| std.a[i][j]).collect()).collect();
    if let Some(zb) = solve_dense(bmat, std.b.clone()) {
        // Only accept when it does not push anything meaningfully negative.
        if zb.iter().all(|v| *v >= -1e-9) {
            for (&j, v) in basis.iter().zip(zb) {
                z[j] = v.max(0.0);
            }
        }
    }
}
