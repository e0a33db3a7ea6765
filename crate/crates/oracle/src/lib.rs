//! Reference solvers for tests.
//!
//! A dense two-phase tableau simplex using Bland's rule throughout (smallest
//! index entering, smallest basic index among ratio ties), plus exhaustive
//! 0/1 enumeration on top of it. Slow, simple, and deliberately independent
//! of the production solver.

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

/// `min c'x` subject to dense rows and `lower <= x <= upper`.
/// Lower bounds must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLp {
    pub c: Vec<f64>,
    pub rows: Vec<(Vec<f64>, Cmp, f64)>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenseResult {
    Optimal { objective: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl DenseResult {
    pub fn objective(&self) -> Option<f64> {
        match self {
            DenseResult::Optimal { objective, .. } => Some(*objective),
            _ => None,
        }
    }
}

impl DenseLp {
    pub fn new(n: usize) -> Self {
        Self {
            c: vec![0.0; n],
            rows: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }
}

struct Tableau {
    // rows 0..m are constraints, row m is the objective (reduced costs)
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[c];
            if factor != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes the objective row over columns `allowed`. Returns false if unbounded.
    fn run(&mut self, allowed: usize) -> bool {
        let m = self.basis.len();
        let rhs = self.ncols;
        loop {
            let entering = (0..allowed).find(|&j| self.t[m][j] < -EPS);
            let Some(c) = entering else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let a = self.t[r][c];
                if a > EPS {
                    let ratio = self.t[r][rhs] / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - EPS
                                || (ratio <= bratio + EPS && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else { return false };
            self.pivot(r, c);
        }
    }
}

/// Solves `lp` with the two-phase Bland simplex.
pub fn solve(lp: &DenseLp) -> DenseResult {
    let n = lp.num_vars();
    // shift x = lower + y; finite upper bounds become rows y <= upper - lower
    let mut rows: Vec<(Vec<f64>, Cmp, f64)> = Vec::new();
    for (a, cmp, b) in &lp.rows {
        let shift: f64 = a.iter().zip(&lp.lower).map(|(ai, li)| ai * li).sum();
        rows.push((a.clone(), *cmp, b - shift));
    }
    for j in 0..n {
        if lp.upper[j].is_finite() {
            if lp.upper[j] < lp.lower[j] {
                return DenseResult::Infeasible;
            }
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            rows.push((a, Cmp::Le, lp.upper[j] - lp.lower[j]));
        }
    }
    // make rhs non-negative
    for (a, cmp, b) in rows.iter_mut() {
        if *b < 0.0 {
            a.iter_mut().for_each(|v| *v = -*v);
            *b = -*b;
            *cmp = match *cmp {
                Cmp::Le => Cmp::Ge,
                Cmp::Ge => Cmp::Le,
                Cmp::Eq => Cmp::Eq,
            };
        }
    }
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Cmp::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Cmp::Le).count();
    let first_art = n + n_slack;
    let ncols = n + n_slack + n_art;

    let mut t = vec![vec![0.0; ncols + 1]; m + 1];
    let mut basis = vec![0; m];
    let (mut s, mut art) = (n, first_art);
    for (i, (a, cmp, b)) in rows.iter().enumerate() {
        t[i][..n].copy_from_slice(a);
        t[i][ncols] = *b;
        match cmp {
            Cmp::Le => {
                t[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            Cmp::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][art] = 1.0;
                basis[i] = art;
                art += 1;
            }
            Cmp::Eq => {
                t[i][art] = 1.0;
                basis[i] = art;
                art += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, ncols };

    // phase 1: minimize the sum of artificials
    if n_art > 0 {
        for j in first_art..ncols {
            tab.t[m][j] = 1.0;
        }
        for i in 0..m {
            if tab.basis[i] >= first_art {
                for j in 0..=ncols {
                    let v = tab.t[i][j];
                    tab.t[m][j] -= v;
                }
            }
        }
        tab.run(ncols);
        if -tab.t[m][ncols] > 1e-7 {
            return DenseResult::Infeasible;
        }
        // drive remaining artificials out of the basis
        let mut i = 0;
        while i < tab.basis.len() {
            if tab.basis[i] >= first_art {
                if let Some(c) = (0..first_art).find(|&j| tab.t[i][j].abs() > EPS) {
                    tab.pivot(i, c);
                    i += 1;
                } else {
                    // redundant row
                    tab.t.remove(i);
                    tab.basis.remove(i);
                }
            } else {
                i += 1;
            }
        }
    }

    // phase 2
    let m = tab.basis.len();
    let obj_row = &mut tab.t[m];
    obj_row.iter_mut().for_each(|v| *v = 0.0);
    obj_row[..n].copy_from_slice(&lp.c);
    for i in 0..m {
        let bj = tab.basis[i];
        let cb = if bj < n { lp.c[bj] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..=ncols {
                let v = tab.t[i][j];
                tab.t[m][j] -= cb * v;
            }
        }
    }
    if !tab.run(first_art) {
        return DenseResult::Unbounded;
    }
    let mut x = lp.lower.clone();
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] += tab.t[i][ncols];
        }
    }
    let objective = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    DenseResult::Optimal { objective, x }
}

/// Exhaustive 0/1 enumeration over `binaries`, solving the remaining LP for
/// every assignment. Intended for at most ~12 binaries.
pub fn solve_binary_enumeration(lp: &DenseLp, binaries: &[usize]) -> DenseResult {
    assert!(
        binaries.len() <= 20,
        "enumeration over {} binaries",
        binaries.len()
    );
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut unbounded = false;
    for mask in 0u64..(1u64 << binaries.len()) {
        let mut fixed = lp.clone();
        for (k, &j) in binaries.iter().enumerate() {
            let v = ((mask >> k) & 1) as f64;
            if v < lp.lower[j] || v > lp.upper[j] {
                continue;
            }
            fixed.lower[j] = v;
            fixed.upper[j] = v;
        }
        if binaries.iter().any(|&j| fixed.lower[j] != fixed.upper[j]) {
            continue;
        }
        match solve(&fixed) {
            DenseResult::Optimal { objective, x } => {
                if best.as_ref().is_none_or(|(b, _)| objective < *b) {
                    best = Some((objective, x));
                }
            }
            DenseResult::Unbounded => unbounded = true,
            DenseResult::Infeasible => {}
        }
    }
    match (best, unbounded) {
        (_, true) => DenseResult::Unbounded,
        (Some((objective, x)), false) => DenseResult::Optimal { objective, x },
        (None, false) => DenseResult::Infeasible,
    }
}
