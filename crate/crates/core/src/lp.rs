//! Dense simplex solvers: a two-phase primal method with Bland's rule and a
//! dual method for programs with a dual-feasible slack basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `minimize c'x` subject to linear constraints and `x >= lower`.
/// A lower bound of `-inf` makes the variable free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    /// All variables nonnegative.
    pub fn new(objective: Vec<f64>) -> Self {
        let m = objective.len();
        Self {
            objective,
            constraints: Vec::new(),
            lower: vec![0.0; m],
        }
    }

    pub fn constrain(mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.objective.len();
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if m == 0 {
            return bad("linear program needs at least one variable".into());
        }
        if self.lower.len() != m {
            return bad(format!("{} lower bounds for {} variables", self.lower.len(), m));
        }
        if self.objective.iter().any(|c| !c.is_finite())
            || self.lower.iter().any(|l| l.is_nan() || *l == f64::INFINITY)
        {
            return bad("objective and bounds must be finite (lower may be -inf)".into());
        }
        for (r, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != m {
                return bad(format!("constraint {r} has {} coefficients, expected {m}", c.coeffs.len()));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
                return bad(format!("constraint {r} has non-finite entries"));
            }
        }
        Ok(())
    }
}

struct Tableau {
    /// rows `0..m` are constraints, last row is the objective; last column is the rhs
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    pivots: usize,
    max_pivots: usize,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.t.len() - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let m = self.t.len();
        let width = self.t[r].len();
        let inv = 1.0 / self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v *= inv;
        }
        let prow = self.t[r].clone();
        for i in 0..m {
            if i == r {
                continue;
            }
            let f = self.t[i][c];
            if f != 0.0 {
                let row = &mut self.t[i];
                for k in 0..width {
                    row[k] -= f * prow[k];
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Minimizes the objective row over columns `< allowed`.
    fn run(&mut self, allowed: usize) -> Result<()> {
        let m = self.rows();
        let rhs = self.t[0].len() - 1;
        loop {
            let obj = &self.t[m];
            let Some(enter) = (0..allowed).find(|&j| obj[j] < -TOL) else {
                return Ok(());
            };
            let mut leave: Option<usize> = None;
            let mut best = f64::INFINITY;
            for i in 0..m {
                let a = self.t[i][enter];
                if a > TOL {
                    let ratio = self.t[i][rhs] / a;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best - TOL
                                || (ratio <= best + TOL && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        best = best.min(ratio);
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else {
                return Err(Error::Unbounded);
            };
            if self.pivots >= self.max_pivots {
                return Err(Error::IterationLimit(self.pivots));
            }
            self.pivot(r, enter);
        }
    }
}

/// Solves `lp`, returning an optimal basic solution. Optimality is
/// certified by nonnegative reduced costs at tolerance `1e-9`.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let nv = lp.objective.len();

    // x_j = lower_j + y_j, or y_j^+ - y_j^- when free
    let mut cols: Vec<(usize, f64)> = Vec::new();
    for j in 0..nv {
        cols.push((j, 1.0));
        if lp.lower[j] == f64::NEG_INFINITY {
            cols.push((j, -1.0));
        }
    }
    let ny = cols.len();

    let mut rows: Vec<(Vec<f64>, Relation, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            let shift: f64 = c
                .coeffs
                .iter()
                .zip(&lp.lower)
                .filter(|(_, l)| l.is_finite())
                .map(|(a, l)| a * l)
                .sum();
            let a: Vec<f64> = cols.iter().map(|&(j, s)| s * c.coeffs[j]).collect();
            (a, c.relation, c.rhs - shift)
        })
        .collect();
    for row in rows.iter_mut() {
        if row.2 < 0.0 {
            row.0.iter_mut().for_each(|v| *v = -*v);
            row.2 = -row.2;
            row.1 = match row.1 {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let width = ny + n_slack + n_art + 1;
    let rhs = width - 1;
    let mut t = vec![vec![0.0; width]; m + 1];
    let mut basis = vec![0; m];
    let (mut s, mut a) = (ny, ny + n_slack);
    for (i, (coef, rel, b)) in rows.iter().enumerate() {
        t[i][..ny].copy_from_slice(coef);
        t[i][rhs] = *b;
        match rel {
            Relation::Le => {
                t[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            Relation::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
            Relation::Eq => {
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
        }
    }
    let max_pivots = 50 * (width + m) + 1000;
    let mut tab = Tableau {
        t,
        basis,
        pivots: 0,
        max_pivots,
    };

    let art_start = ny + n_slack;
    if n_art > 0 {
        // phase one: minimize the sum of artificials
        for i in 0..m {
            if tab.basis[i] >= art_start {
                for k in 0..width {
                    let v = tab.t[i][k];
                    tab.t[m][k] -= v;
                }
            }
        }
        for k in art_start..rhs {
            tab.t[m][k] = 0.0;
        }
        tab.run(art_start)?;
        let infeas = -tab.t[m][rhs];
        let scale = 1.0 + rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        if infeas > 1e-8 * scale {
            return Err(Error::Infeasible);
        }
        // drive zero-level artificials out of the basis
        for i in 0..m {
            if tab.basis[i] >= art_start {
                if let Some(c) = (0..art_start).find(|&c| tab.t[i][c].abs() > TOL) {
                    tab.pivot(i, c);
                }
            }
        }
        for row in tab.t.iter_mut() {
            for v in row[art_start..rhs].iter_mut() {
                *v = 0.0;
            }
        }
    }

    // phase two objective in reduced form
    let cost: Vec<f64> = cols.iter().map(|&(j, s)| s * lp.objective[j]).collect();
    for k in 0..width {
        tab.t[m][k] = 0.0;
    }
    tab.t[m][..ny].copy_from_slice(&cost);
    for i in 0..m {
        let b = tab.basis[i];
        if b < ny && cost[b] != 0.0 {
            let cb = cost[b];
            for k in 0..width {
                let v = tab.t[i][k];
                tab.t[m][k] -= cb * v;
            }
        }
    }
    tab.run(art_start)?;

    let mut y = vec![0.0; ny];
    for i in 0..m {
        if tab.basis[i] < ny {
            y[tab.basis[i]] = tab.t[i][rhs];
        }
    }
    let mut x: Vec<f64> = lp
        .lower
        .iter()
        .map(|l| if l.is_finite() { *l } else { 0.0 })
        .collect();
    for (k, &(j, s)) in cols.iter().enumerate() {
        x[j] += s * y[k];
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        x,
        objective,
        pivots: tab.pivots,
    })
}

/// Dual simplex for programs whose all-slack basis is dual feasible:
/// nonnegative costs, zero lower bounds and inequality rows only. Starts
/// from the slack basis and pivots until the primal is feasible, so no
/// first phase is needed. Leaving rows are the most infeasible, switching
/// to smallest-index choices after a run of degenerate pivots.
pub fn solve_dual(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    if lp.objective.iter().any(|c| *c < 0.0)
        || lp.lower.iter().any(|l| *l != 0.0)
        || lp.constraints.iter().any(|c| c.relation == Relation::Eq)
    {
        return Err(Error::InvalidConfig(
            "dual simplex needs nonnegative costs, zero lower bounds and no equality rows".into(),
        ));
    }
    let nv = lp.objective.len();
    let m = lp.constraints.len();
    let width = nv + m + 1;
    let rhs = width - 1;
    // row-major tableau, every row written as `a'x <= b`
    let mut t = vec![0.0; m * width];
    for (i, c) in lp.constraints.iter().enumerate() {
        let sign = if c.relation == Relation::Ge { -1.0 } else { 1.0 };
        let row = &mut t[i * width..(i + 1) * width];
        for j in 0..nv {
            row[j] = sign * c.coeffs[j];
        }
        row[nv + i] = 1.0;
        row[rhs] = sign * c.rhs;
    }
    let mut cost = vec![0.0; width];
    cost[..nv].copy_from_slice(&lp.objective);
    let mut basis: Vec<usize> = (nv..nv + m).collect();
    let max_pivots = 50 * (width + m) + 1000;
    let mut pivots = 0;
    let mut degenerate = 0;
    let mut prow = vec![0.0; width];
    loop {
        let bland = degenerate > 50;
        let mut leave: Option<usize> = None;
        for i in 0..m {
            let b = t[i * width + rhs];
            if b < -TOL {
                let better = match leave {
                    None => true,
                    Some(l) if bland => basis[i] < basis[l],
                    Some(l) => b < t[l * width + rhs],
                };
                if better {
                    leave = Some(i);
                }
            }
        }
        let Some(r) = leave else { break };
        let row = &t[r * width..(r + 1) * width];
        let mut enter: Option<usize> = None;
        let mut best = f64::INFINITY;
        for j in 0..rhs {
            if row[j] < -TOL {
                // ascending scan keeps the smallest index among ties
                let ratio = cost[j] / -row[j];
                if ratio < best - TOL {
                    best = ratio;
                    enter = Some(j);
                }
            }
        }
        let Some(c) = enter else {
            return Err(Error::Infeasible);
        };
        if pivots >= max_pivots {
            return Err(Error::IterationLimit(pivots));
        }
        degenerate = if best <= TOL { degenerate + 1 } else { 0 };
        let inv = 1.0 / t[r * width + c];
        for (k, v) in prow.iter_mut().enumerate() {
            *v = t[r * width + k] * inv;
        }
        prow[c] = 1.0;
        t[r * width..(r + 1) * width].copy_from_slice(&prow);
        for i in 0..m {
            if i == r {
                continue;
            }
            let f = t[i * width + c];
            if f != 0.0 {
                let row = &mut t[i * width..(i + 1) * width];
                for (v, pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = cost[c];
        if f != 0.0 {
            for (v, pv) in cost.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
            cost[c] = 0.0;
        }
        basis[r] = c;
        pivots += 1;
    }
    let mut x = vec![0.0; nv];
    for i in 0..m {
        if basis[i] < nv {
            x[basis[i]] = t[i * width + rhs].max(0.0);
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        x,
        objective,
        pivots,
    })
}
