//! Dense two-phase primal simplex over a bounded-variable LP, used both for
//! pure LP solves and as the node relaxation inside branch-and-bound.

use super::{MilpError, MilpModel, Relation};

const PIVOT_TOL: f64 = 1e-9;
const ZERO_TOL: f64 = 1e-11;
const PHASE1_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub(crate) struct LpResult {
    pub status: LpStatus,
    pub objective: f64,
    /// Values in the original variable space; empty unless optimal.
    pub x: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy)]
enum VarMap {
    Fixed(f64),
    /// x = lb + t, t >= 0.
    Shifted { col: usize, lb: f64 },
    /// x = ub - t, t >= 0 (lb = -inf).
    Negated { col: usize, ub: f64 },
    /// x = t_pos - t_neg (both bounds infinite).
    Split { pos: usize, neg: usize },
}

struct Tableau {
    a: Vec<f64>,
    m: usize,
    /// Columns excluding the rhs.
    n: usize,
}

impl Tableau {
    fn new(m: usize, n: usize) -> Self {
        Tableau { a: vec![0.0; m * (n + 1)], m, n }
    }

    #[inline]
    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.n;
        &mut self.a[i * (n + 1)..(i + 1) * (n + 1)]
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * (self.n + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.n)
    }

    /// Pivots on (row, col): normalizes the pivot row and eliminates the
    /// column from every other row.
    fn pivot(&mut self, r: usize, e: usize, buf: &mut Vec<f64>) {
        let n = self.n;
        let piv = self.at(r, e);
        {
            let row = self.row_mut(r);
            let inv = 1.0 / piv;
            for v in row.iter_mut() {
                *v *= inv;
                if v.abs() < ZERO_TOL {
                    *v = 0.0;
                }
            }
            row[e] = 1.0;
            buf.clear();
            buf.extend_from_slice(row);
        }
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let factor = self.at(i, e);
            if factor == 0.0 {
                continue;
            }
            let row = self.row_mut(i);
            for (v, p) in row.iter_mut().zip(buf.iter()) {
                *v -= factor * p;
            }
            row[e] = 0.0;
            let _ = n;
        }
    }

    fn delete_rows(&mut self, keep: &[bool]) {
        let stride = self.n + 1;
        let mut out = Vec::with_capacity(self.a.len());
        let mut m = 0;
        for i in 0..self.m {
            if keep[i] {
                out.extend_from_slice(&self.a[i * stride..(i + 1) * stride]);
                m += 1;
            }
        }
        self.a = out;
        self.m = m;
    }
}

enum Outcome {
    Optimal,
    Unbounded,
}

/// Primal simplex on the current tableau/basis with the given costs,
/// considering only the first `active` columns for entering. Dantzig rule
/// with a Bland fallback after a stall.
fn run_simplex(
    tab: &mut Tableau,
    basis: &mut [usize],
    costs: &[f64],
    active: usize,
    iterations: &mut usize,
) -> Result<Outcome, MilpError> {
    let m = tab.m;
    let n = tab.n;
    // Reduced costs d_j = c_j - c_B^T B^{-1} A_j.
    let mut d = vec![0.0; active];
    for j in 0..active {
        let mut acc = costs[j];
        for i in 0..m {
            let cb = costs[basis[i]];
            if cb != 0.0 {
                acc -= cb * tab.at(i, j);
            }
        }
        d[j] = acc;
    }
    let mut obj: f64 = (0..m).map(|i| costs[basis[i]] * tab.rhs(i)).sum();

    let stall_limit = 5 * (m + n);
    let hard_limit = 50 * (m + n) + 1000;
    let mut stall = 0usize;
    let mut bland = false;
    let mut buf = Vec::new();

    for _iter in 0..hard_limit {
        // Entering column.
        let enter = if bland {
            (0..active).find(|&j| d[j] < -PIVOT_TOL)
        } else {
            let mut best = None;
            let mut best_val = -PIVOT_TOL;
            for j in 0..active {
                if d[j] < best_val {
                    best_val = d[j];
                    best = Some(j);
                }
            }
            best
        };
        let Some(e) = enter else {
            return Ok(Outcome::Optimal);
        };

        // Ratio test; ties broken by smallest basis index.
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let a = tab.at(i, e);
            if a > PIVOT_TOL {
                let ratio = tab.rhs(i) / a;
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best_ratio - 1e-12
                            || (ratio < best_ratio + 1e-12 && basis[i] < basis[l])
                    }
                };
                if better {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(r) = leave else {
            return Ok(Outcome::Unbounded);
        };

        tab.pivot(r, e, &mut buf);
        basis[r] = e;
        *iterations += 1;

        // Refresh reduced costs against the updated tableau row.
        let de = d[e];
        if de != 0.0 {
            for (j, dj) in d.iter_mut().enumerate() {
                *dj -= de * buf[j];
            }
        }
        d[e] = 0.0;

        let new_obj: f64 = (0..m).map(|i| costs[basis[i]] * tab.rhs(i)).sum();
        if obj - new_obj > 1e-12 {
            stall = 0;
        } else {
            stall += 1;
            if stall > stall_limit {
                bland = true;
            }
        }
        obj = new_obj;
    }
    Err(MilpError::NumericalFailure(format!(
        "simplex exceeded {hard_limit} iterations without converging"
    )))
}

/// Solves the LP relaxation of `model` with per-variable bound overrides
/// `(var index, lb, ub)` applied on top of the declared bounds.
pub(crate) fn solve_lp(
    model: &MilpModel,
    overrides: &[(usize, f64, f64)],
) -> Result<LpResult, MilpError> {
    let nv = model.vars.len();
    let mut lbs: Vec<f64> = model.vars.iter().map(|v| v.lb).collect();
    let mut ubs: Vec<f64> = model.vars.iter().map(|v| v.ub).collect();
    for &(i, lb, ub) in overrides {
        lbs[i] = lb;
        ubs[i] = ub;
    }
    for i in 0..nv {
        if lbs[i] > ubs[i] + 1e-9 {
            return Ok(LpResult {
                status: LpStatus::Infeasible,
                objective: f64::INFINITY,
                x: Vec::new(),
                iterations: 0,
            });
        }
    }

    // Map every variable onto non-negative simplex columns.
    let mut maps = Vec::with_capacity(nv);
    let mut caps: Vec<(usize, f64)> = Vec::new(); // (col, upper cap)
    let mut ncols = 0usize;
    for i in 0..nv {
        let (lb, ub) = (lbs[i], ubs[i]);
        let map = if ub - lb <= 1e-12 {
            VarMap::Fixed(lb)
        } else if lb.is_finite() {
            let col = ncols;
            ncols += 1;
            if ub.is_finite() {
                caps.push((col, ub - lb));
            }
            VarMap::Shifted { col, lb }
        } else if ub.is_finite() {
            let col = ncols;
            ncols += 1;
            VarMap::Negated { col, ub }
        } else {
            let pos = ncols;
            let neg = ncols + 1;
            ncols += 2;
            VarMap::Split { pos, neg }
        };
        maps.push(map);
    }

    // Assemble rows in the shifted column space.
    struct Row {
        terms: Vec<(usize, f64)>,
        rel: Relation,
        rhs: f64,
    }
    let mut rows: Vec<Row> = Vec::with_capacity(model.constraints.len() + caps.len());
    for con in &model.constraints {
        let mut terms: Vec<(usize, f64)> = Vec::with_capacity(con.terms.len() * 2);
        let mut rhs = con.rhs;
        for (&id, &c) in &con.terms {
            match maps[id.0] {
                VarMap::Fixed(v) => rhs -= c * v,
                VarMap::Shifted { col, lb } => {
                    terms.push((col, c));
                    rhs -= c * lb;
                }
                VarMap::Negated { col, ub } => {
                    terms.push((col, -c));
                    rhs -= c * ub;
                }
                VarMap::Split { pos, neg } => {
                    terms.push((pos, c));
                    terms.push((neg, -c));
                }
            }
        }
        rows.push(Row { terms, rel: con.rel, rhs });
    }
    for &(col, cap) in &caps {
        rows.push(Row { terms: vec![(col, 1.0)], rel: Relation::Le, rhs: cap });
    }

    // Normalize rhs >= 0 and count slack/artificial columns.
    let mut n_slack = 0usize;
    let mut n_art = 0usize;
    for row in &mut rows {
        if row.rhs < 0.0 {
            for t in &mut row.terms {
                t.1 = -t.1;
            }
            row.rhs = -row.rhs;
            row.rel = match row.rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        // A >= row with zero rhs is equivalent to <= after negation; this
        // avoids an artificial variable for it.
        if row.rel == Relation::Ge && row.rhs == 0.0 {
            for t in &mut row.terms {
                t.1 = -t.1;
            }
            row.rel = Relation::Le;
        }
        match row.rel {
            Relation::Le => n_slack += 1,
            Relation::Ge => {
                n_slack += 1;
                n_art += 1;
            }
            Relation::Eq => n_art += 1,
        }
    }

    let m = rows.len();
    let n_struct = ncols;
    let art_start = n_struct + n_slack;
    let n_total = art_start + n_art;
    let mut tab = Tableau::new(m, n_total);
    let mut basis = vec![0usize; m];
    let mut slack_idx = n_struct;
    let mut art_idx = art_start;
    for (i, row) in rows.iter().enumerate() {
        let r = tab.row_mut(i);
        for &(j, c) in &row.terms {
            r[j] += c;
        }
        r[n_total] = row.rhs;
        match row.rel {
            Relation::Le => {
                r[slack_idx] = 1.0;
                basis[i] = slack_idx;
                slack_idx += 1;
            }
            Relation::Ge => {
                r[slack_idx] = -1.0;
                slack_idx += 1;
                r[art_idx] = 1.0;
                basis[i] = art_idx;
                art_idx += 1;
            }
            Relation::Eq => {
                r[art_idx] = 1.0;
                basis[i] = art_idx;
                art_idx += 1;
            }
        }
    }

    let mut iterations = 0usize;

    // Phase 1: drive artificials to zero.
    if n_art > 0 {
        let mut costs = vec![0.0; n_total];
        for j in art_start..n_total {
            costs[j] = 1.0;
        }
        match run_simplex(&mut tab, &mut basis, &costs, art_start + n_art, &mut iterations)? {
            Outcome::Unbounded => {
                return Err(MilpError::NumericalFailure(
                    "phase-1 objective unbounded".to_string(),
                ))
            }
            Outcome::Optimal => {}
        }
        let p1: f64 = (0..tab.m).map(|i| costs[basis[i]] * tab.rhs(i)).sum();
        if p1 > PHASE1_TOL {
            return Ok(LpResult {
                status: LpStatus::Infeasible,
                objective: f64::INFINITY,
                x: Vec::new(),
                iterations,
            });
        }
        // Pivot remaining basic artificials out; linearly dependent rows are
        // dropped.
        let mut buf = Vec::new();
        let mut keep = vec![true; tab.m];
        for r in 0..tab.m {
            if basis[r] >= art_start {
                let col = (0..art_start).find(|&j| tab.at(r, j).abs() > 1e-7);
                match col {
                    Some(j) => {
                        tab.pivot(r, j, &mut buf);
                        basis[r] = j;
                    }
                    None => keep[r] = false,
                }
            }
        }
        if keep.iter().any(|k| !k) {
            let new_basis: Vec<usize> =
                basis.iter().zip(&keep).filter(|(_, k)| **k).map(|(b, _)| *b).collect();
            tab.delete_rows(&keep);
            basis = new_basis;
        }
    }

    // Phase 2: original objective over structural columns.
    let mut costs = vec![0.0; n_total];
    for (&id, &c) in &model.objective {
        match maps[id.0] {
            VarMap::Fixed(_) => {}
            VarMap::Shifted { col, .. } => costs[col] += c,
            VarMap::Negated { col, .. } => costs[col] -= c,
            VarMap::Split { pos, neg } => {
                costs[pos] += c;
                costs[neg] -= c;
            }
        }
    }
    match run_simplex(&mut tab, &mut basis, &costs, art_start, &mut iterations)? {
        Outcome::Unbounded => {
            return Ok(LpResult {
                status: LpStatus::Unbounded,
                objective: f64::NEG_INFINITY,
                x: Vec::new(),
                iterations,
            })
        }
        Outcome::Optimal => {}
    }

    // Recover the solution in the original variable space.
    let mut cols = vec![0.0; n_struct];
    for (i, &b) in basis.iter().enumerate() {
        if b < n_struct {
            cols[b] = tab.rhs(i);
        }
    }
    let mut x = vec![0.0; nv];
    for (i, map) in maps.iter().enumerate() {
        x[i] = match *map {
            VarMap::Fixed(v) => v,
            VarMap::Shifted { col, lb } => lb + cols[col],
            VarMap::Negated { col, ub } => ub - cols[col],
            VarMap::Split { pos, neg } => cols[pos] - cols[neg],
        };
    }
    let objective: f64 = model.objective.iter().map(|(id, c)| c * x[id.0]).sum();
    Ok(LpResult { status: LpStatus::Optimal, objective, x, iterations })
}
