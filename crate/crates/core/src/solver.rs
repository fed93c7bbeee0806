//! Dirichlet solves of `F_h(u) + lambda |u|^alpha u = f` and the monotone iteration `u_{n+1} = T_f(u_n)`.
//!
//! The Pucci part is a max (or min) of linear M-matrix operators, so `M±_h(u) = r` is solved by
//! policy iteration with banded LU factorizations cached per policy. The gradient factor and
//! the zeroth-order term are handled by a relaxed frozen-coefficient (Picard) iteration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::banded::{BandLu, BandMatrix};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::operator::{signed_pow, OperatorSpec, Sign};
use crate::scheme::{Policy, Scheme};

/// Relative improvement a policy switch must achieve; avoids cycling between near-ties.
const SWITCH_TOL: f64 = 1e-12;
const MAX_POLICY_ROUNDS: usize = 200;

/// Rows changed relative to the factored policy above which a fresh factorization is cheaper
/// than the low-rank correction.
const MAX_LOW_RANK: usize = 8;

/// LU factors of the matrix of a base policy, plus a Woodbury correction for the rows where
/// the current policy differs.
struct Factored {
    base: Vec<Policy>,
    lu: BandLu,
    current: Vec<Policy>,
    update: Option<LowRank>,
}

struct LowRank {
    /// Sparse row differences `new - base`, one per changed row.
    deltas: Vec<Vec<(usize, f64)>>,
    /// `A_base^{-1} e_i` for the changed rows `i`.
    z: Vec<Vec<f64>>,
    /// `I + D^T Z`.
    s: Vec<Vec<f64>>,
}

impl Factored {
    fn solve(&self, b: &mut [f64]) {
        self.lu.solve_in_place(b);
        if let Some(up) = &self.update {
            let t: Vec<f64> = up.deltas.iter().map(|d| d.iter().map(|&(c, v)| v * b[c]).sum()).collect();
            let Some(t) = solve_small(up.s.clone(), t) else { return };
            for (z, tj) in up.z.iter().zip(&t) {
                for (bi, zi) in b.iter_mut().zip(z) {
                    *bi -= zi * tj;
                }
            }
        }
    }
}

/// Reusable solver state: current policy and the factorization belonging to it.
pub struct PucciSolver {
    pub op: OperatorSpec,
    pub grid: Arc<Grid>,
    bandwidth: usize,
    /// Upper bound on the diagonal entries over all policies.
    diag_bound: f64,
    policy: Vec<Policy>,
    cached: Option<Factored>,
    trace: Option<Arc<Vec<[f64; 2]>>>,
    pub factorizations: usize,
    pub policy_rounds: usize,
}

impl PucciSolver {
    pub fn new(op: &OperatorSpec, grid: &Arc<Grid>) -> Self {
        let scheme = Scheme::new(op, grid);
        let nd = grid.directions.len();
        let mut bw = 0usize;
        for k in 0..grid.n_interior() {
            for j in scheme.used_directions() {
                let p = grid.arms[k * nd + j];
                for a in [p.plus, p.minus] {
                    let m = grid.unknown_of[a.node as usize];
                    if m != u32::MAX {
                        bw = bw.max((m as usize).abs_diff(k));
                    }
                }
            }
        }
        let used = scheme.used_directions();
        let diag_bound = (0..grid.n_interior())
            .map(|k| used.iter().map(|&j| grid.coef[k * nd + j].iter().sum::<f64>()).sum::<f64>())
            .fold(0.0, f64::max)
            * op.upper;
        let init = initial_policy(&scheme);
        PucciSolver {
            op: *op,
            grid: grid.clone(),
            bandwidth: bw,
            diag_bound,
            policy: vec![init; grid.n_interior()],
            cached: None,
            trace: None,
            factorizations: 0,
            policy_rounds: 0,
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Size of the rounding errors in evaluating the stencil on `u`: `eps * max diagonal * ||u||`.
    pub fn rounding_floor(&self, u: &[f64]) -> f64 {
        let norm = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        f64::EPSILON * self.diag_bound * norm
    }

    /// Boundary values at the crossings of cut arms (see [`ScalarField::trace`]).
    pub fn set_trace(&mut self, trace: Option<Arc<Vec<[f64; 2]>>>) {
        self.trace = trace;
        self.cached = None;
    }

    fn scheme<'g>(&'g self, grid: &'g Grid) -> Scheme<'g> {
        Scheme::new(&self.op, grid).with_trace(self.trace.as_deref().map(|v| &v[..]))
    }

    /// Entries `(column, value)` of the matrix row of unknown `k` under policy `pol`.
    fn row(&self, scheme: &Scheme, k: usize, pol: Policy) -> Vec<(usize, f64)> {
        let g = &*self.grid;
        let nd = g.directions.len();
        let mut out = vec![(k, 0.0)];
        for (j, w) in scheme.policy_weights(pol) {
            let c = g.coef[k * nd + j];
            let p = g.arms[k * nd + j];
            out[0].1 += w * (c[0] + c[1]);
            for (slot, (arm, ci)) in [(p.plus, c[0]), (p.minus, c[1])].into_iter().enumerate() {
                let col = g.unknown_of[arm.node as usize];
                if col != u32::MAX && scheme.from_trace(k * nd + j, slot).is_none() {
                    out.push((col as usize, -w * ci));
                }
            }
        }
        out
    }

    fn factor(&mut self, scheme: &Scheme) -> Result<()> {
        if let Some(f) = &self.cached {
            if f.current == self.policy {
                return Ok(());
            }
            let changed: Vec<usize> = (0..self.policy.len()).filter(|&k| f.base[k] != self.policy[k]).collect();
            if changed.len() <= MAX_LOW_RANK {
                let n = self.policy.len();
                let deltas: Vec<Vec<(usize, f64)>> = changed
                    .iter()
                    .map(|&k| {
                        let mut d = self.row(scheme, k, self.policy[k]);
                        d.extend(self.row(scheme, k, f.base[k]).into_iter().map(|(c, v)| (c, -v)));
                        d.sort_by_key(|e| e.0);
                        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(d.len());
                        for (c, v) in d {
                            match merged.last_mut() {
                                Some(last) if last.0 == c => last.1 += v,
                                _ => merged.push((c, v)),
                            }
                        }
                        merged
                    })
                    .collect();
                let z: Vec<Vec<f64>> = changed
                    .iter()
                    .map(|&k| {
                        let mut e = vec![0.0; n];
                        e[k] = 1.0;
                        f.lu.solve_in_place(&mut e);
                        e
                    })
                    .collect();
                let r = changed.len();
                let mut sm = vec![vec![0.0; r]; r];
                for i in 0..r {
                    for j in 0..r {
                        let dz: f64 = deltas[i].iter().map(|&(c, v)| v * z[j][c]).sum();
                        sm[i][j] = if i == j { 1.0 } else { 0.0 } + dz;
                    }
                }
                let f = self.cached.as_mut().expect("cached factors");
                f.current = self.policy.clone();
                f.update = if r == 0 { None } else { Some(LowRank { deltas, z, s: sm }) };
                return Ok(());
            }
        }
        let n = self.grid.n_interior();
        let mut m = BandMatrix::zeros(n, self.bandwidth);
        for k in 0..n {
            for (c, v) in self.row(scheme, k, self.policy[k]) {
                m.add(k, c, v);
            }
        }
        let lu = m.factor()?;
        self.factorizations += 1;
        self.cached = Some(Factored { base: self.policy.clone(), lu, current: self.policy.clone(), update: None });
        Ok(())
    }

    /// Solves `M±_h(u) = rhs` at interior nodes (`rhs` indexed by unknown), keeping the values
    /// of `u` at all other nodes as Dirichlet data.
    pub fn solve_pucci(&mut self, rhs: &[f64], u: &mut [f64]) -> Result<()> {
        let grid = self.grid.clone();
        let trace = self.trace.clone();
        let scheme = Scheme::new(&self.op, &grid).with_trace(trace.as_deref().map(|v| &v[..]));
        let g = &*grid;
        let nd = g.directions.len();
        let n = g.n_interior();
        let maximize = self.op.sign == Sign::Plus;
        for _round in 0..MAX_POLICY_ROUNDS {
            self.policy_rounds += 1;
            self.factor(&scheme)?;
            let mut b = vec![0.0; n];
            for k in 0..n {
                let mut v = -rhs[k];
                for (j, w) in scheme.policy_weights(self.policy[k]) {
                    let c = g.coef[k * nd + j];
                    let p = g.arms[k * nd + j];
                    for (slot, (arm, ci)) in [(p.plus, c[0]), (p.minus, c[1])].into_iter().enumerate() {
                        if let Some(t) = scheme.from_trace(k * nd + j, slot) {
                            v += w * ci * t;
                        } else if g.unknown_of[arm.node as usize] == u32::MAX {
                            v += w * ci * u[arm.node as usize];
                        }
                    }
                }
                b[k] = v;
            }
            self.cached.as_ref().expect("factored").solve(&mut b);
            for (k, &node) in g.interior.iter().enumerate() {
                u[node as usize] = b[k];
            }
            if scheme.is_linear() {
                return Ok(());
            }
            let noise = 16.0 * self.rounding_floor(u);
            let mut changed = false;
            for k in 0..n {
                let cur = scheme.policy_value(k, u, self.policy[k]);
                let (best, pol) = scheme.pucci_with_policy(k, u);
                let gain = if maximize { best - cur } else { cur - best };
                if pol != self.policy[k] && gain > (SWITCH_TOL * (1.0 + cur.abs().max(best.abs()))).max(noise) {
                    self.policy[k] = pol;
                    changed = true;
                }
            }
            if !changed {
                return Ok(());
            }
        }
        Err(Error::NonConvergence { steps: MAX_POLICY_ROUNDS, residual: f64::NAN, tol: 0.0 })
    }
}

fn initial_policy(scheme: &Scheme) -> Policy {
    // axis frame, weights for negative second differences
    let axis = scheme.grid.axis_frame();
    let pos = scheme.frames.iter().position(|&f| f == axis).unwrap_or(0);
    (pos as u16) << 2
}

/// Counters reported by a Dirichlet solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub picard_steps: usize,
    pub residual: f64,
    /// The requested tolerance, raised to the rounding level of the stencil if that is larger.
    pub tol_used: f64,
}

/// Solver for `F_h(u) + lambda |u|^alpha u = f` sharing factorizations across calls.
pub struct DirichletSolver {
    pub pucci: PucciSolver,
    /// Relaxation of the frozen-coefficient step; lowered when the residual stalls and kept
    /// for later solves.
    pub omega: f64,
    /// Frozen-coefficient steps taken over the solver's lifetime.
    pub picard_total: usize,
}

/// A frozen-coefficient step that does not shrink the residual below this fraction counts as a stall.
const STALL_RATIO: f64 = 0.9;
const OMEGA_SHRINK: f64 = 0.7;
const OMEGA_MIN: f64 = 0.02;

impl DirichletSolver {
    pub fn new(op: &OperatorSpec, grid: &Arc<Grid>) -> Result<Self> {
        op.validate()?;
        let omega = (1.0 / (1.0 + op.alpha)).min(1.0);
        Ok(DirichletSolver { pucci: PucciSolver::new(op, grid), omega, picard_total: 0 })
    }

    fn tol_floor(&self, tol: f64, u: &[f64]) -> f64 {
        tol.max(64.0 * self.pucci.rounding_floor(u))
    }

    fn residual(&self, u: &[f64], f: &[f64], lambda: f64) -> f64 {
        let g = &*self.pucci.grid;
        let op = &self.pucci.op;
        let s = self.pucci.scheme(g);
        let mut worst = 0.0f64;
        for (k, &n) in g.interior.iter().enumerate() {
            let n = n as usize;
            let v = s.apply(k, u) + lambda * signed_pow(u[n], op.alpha) - f[k];
            worst = worst.max(v.abs());
        }
        worst
    }

    /// Solves in place. `u` holds the Dirichlet data off the interior and, when `warm` is set,
    /// the initial guess on it; `f` is indexed by unknown.
    pub fn solve(
        &mut self,
        f: &[f64],
        lambda: f64,
        u: &mut [f64],
        warm: bool,
        tol: f64,
        max_steps: usize,
    ) -> Result<SolveStats> {
        let grid = self.pucci.grid.clone();
        let g = &*grid;
        let op = self.pucci.op;
        let n = g.n_interior();
        if !warm {
            self.pucci.solve_pucci(f, u)?;
        }
        if op.alpha == 0.0 && lambda == 0.0 {
            if warm {
                self.pucci.solve_pucci(f, u)?;
            }
            let residual = self.residual(u, f, lambda);
            let tol_used = self.tol_floor(tol, u);
            if residual > tol_used {
                return Err(Error::NonConvergence { steps: 1, residual, tol: tol_used });
            }
            return Ok(SolveStats { picard_steps: 1, residual, tol_used });
        }
        let mut residual = self.residual(u, f, lambda);
        let mut rhs = vec![0.0; n];
        let mut v = u.to_vec();
        let mut x = vec![0.0; n];
        let mut gx = vec![0.0; n];
        let mut mixer = Anderson::new(ANDERSON_DEPTH, n);
        let mut stalls = 0;
        for step in 0..max_steps {
            let tol_used = self.tol_floor(tol, u);
            if residual <= tol_used {
                return Ok(SolveStats { picard_steps: step, residual, tol_used });
            }
            {
                let s = self.pucci.scheme(g);
                for (k, &node) in g.interior.iter().enumerate() {
                    let xv = u[node as usize];
                    let c = s.grad_factor(k, u).max(f64::MIN_POSITIVE);
                    rhs[k] = (f[k] - lambda * signed_pow(xv, op.alpha)) / c;
                }
            }
            v.copy_from_slice(u);
            self.pucci.solve_pucci(&rhs, &mut v)?;
            self.picard_total += 1;
            let omega = self.omega;
            for (k, &node) in g.interior.iter().enumerate() {
                let i = node as usize;
                x[k] = u[i];
                gx[k] = (1.0 - omega) * u[i] + omega * v[i];
            }
            let mixed = mixer.next(&x, &gx);
            for (k, &node) in g.interior.iter().enumerate() {
                u[node as usize] = mixed[k];
            }
            let mut next = self.residual(u, f, lambda);
            if !(next <= 2.0 * residual) && mixer.len() > 1 {
                // the extrapolated step overshot: take the plain relaxed step instead
                for (k, &node) in g.interior.iter().enumerate() {
                    u[node as usize] = gx[k];
                }
                mixer.reset();
                next = self.residual(u, f, lambda);
            }
            if !next.is_finite() {
                residual = next;
                break;
            }
            if next > STALL_RATIO * residual && next > 1e3 * tol {
                stalls += 1;
                if stalls >= 3 && self.omega > OMEGA_MIN {
                    self.omega = (self.omega * OMEGA_SHRINK).max(OMEGA_MIN);
                    mixer.reset();
                    stalls = 0;
                }
            } else {
                stalls = 0;
            }
            residual = next;
        }
        let tol_used = self.tol_floor(tol, u);
        if residual <= tol_used {
            return Ok(SolveStats { picard_steps: max_steps, residual, tol_used });
        }
        Err(Error::NonConvergence { steps: max_steps, residual, tol: tol_used })
    }
}

const ANDERSON_DEPTH: usize = 4;

/// Anderson mixing for the fixed-point map `x -> G(x)`.
struct Anderson {
    depth: usize,
    xs: Vec<Vec<f64>>,
    fs: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize, _n: usize) -> Self {
        Anderson { depth, xs: Vec::new(), fs: Vec::new() }
    }

    fn len(&self) -> usize {
        self.xs.len()
    }

    fn reset(&mut self) {
        self.xs.clear();
        self.fs.clear();
    }

    /// Records `(x, G(x))` and returns the mixed next iterate.
    fn next(&mut self, x: &[f64], gx: &[f64]) -> Vec<f64> {
        let fx: Vec<f64> = gx.iter().zip(x).map(|(g, x)| g - x).collect();
        self.xs.push(x.to_vec());
        self.fs.push(fx);
        if self.xs.len() > self.depth + 1 {
            self.xs.remove(0);
            self.fs.remove(0);
        }
        let m = self.xs.len() - 1;
        if m == 0 {
            return gx.to_vec();
        }
        let last = &self.fs[m];
        let df: Vec<Vec<f64>> = (0..m).map(|i| self.fs[i + 1].iter().zip(&self.fs[i]).map(|(a, b)| a - b).collect()).collect();
        let dx: Vec<Vec<f64>> = (0..m).map(|i| self.xs[i + 1].iter().zip(&self.xs[i]).map(|(a, b)| a - b).collect()).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut gram = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            for j in 0..m {
                gram[i][j] = dot(&df[i], &df[j]);
            }
            rhs[i] = dot(&df[i], last);
        }
        let reg = 1e-12 * (0..m).map(|i| gram[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        for (i, row) in gram.iter_mut().enumerate() {
            row[i] += reg;
        }
        let Some(coef) = solve_small(gram, rhs) else {
            self.reset();
            return gx.to_vec();
        };
        let mut out = gx.to_vec();
        for i in 0..m {
            for (k, o) in out.iter_mut().enumerate() {
                *o -= coef[i] * (dx[i][k] + df[i][k]);
            }
        }
        out
    }
}

/// Gaussian elimination with partial pivoting for small dense systems.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if !(a[p][c].abs() > 0.0) {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let l = a[r][c] / a[c][c];
            let (top, rest) = a.split_at_mut(r);
            for (x, y) in rest[0][c..].iter_mut().zip(&top[c][c..]) {
                *x -= l * y;
            }
            b[r] -= l * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn interior_values(grid: &Grid, f: &ScalarField) -> Vec<f64> {
    grid.interior.iter().map(|&n| f.values[n as usize]).collect()
}

/// Solves `F_h(u) + lambda |u|^alpha u = f` with `u = boundary` off the interior, to
/// residual `tol` within `max_steps` frozen-coefficient steps.
pub fn solve_dirichlet(
    op: &OperatorSpec,
    grid: &Arc<Grid>,
    f: &ScalarField,
    lambda: f64,
    boundary: &ScalarField,
    tol: f64,
    max_steps: usize,
) -> Result<ScalarField> {
    solve_dirichlet_from(op, grid, f, lambda, boundary, None, tol, max_steps).map(|(u, _)| u)
}

/// [`solve_dirichlet`] with an optional initial guess and the solve counters.
#[allow(clippy::too_many_arguments)]
pub fn solve_dirichlet_from(
    op: &OperatorSpec,
    grid: &Arc<Grid>,
    f: &ScalarField,
    lambda: f64,
    boundary: &ScalarField,
    initial: Option<&ScalarField>,
    tol: f64,
    max_steps: usize,
) -> Result<(ScalarField, SolveStats)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol = {tol} must be positive")));
    }
    if !f.is_finite() || !boundary.is_finite() {
        return Err(Error::InvalidInput("data must be finite".into()));
    }
    let mut solver = DirichletSolver::new(op, grid)?;
    solver.pucci.set_trace(boundary.trace.clone());
    let mut u = boundary.clone();
    u.diverged = false;
    if let Some(init) = initial {
        for &n in &grid.interior {
            u.values[n as usize] = init.values[n as usize];
        }
    }
    let fi = interior_values(grid, f);
    let stats = solver.solve(&fi, lambda, &mut u.values, initial.is_some(), tol, max_steps)?;
    Ok((u, stats))
}

/// How a monotone iteration ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceStatus {
    Converged,
    BlewUp,
    BudgetExhausted,
}

/// Sup-norms of `u_n = T_f^n(0)` and the final iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// `||u_n||_inf` for `n = 1, 2, ...`.
    pub norms: Vec<f64>,
    /// `||u_{n+1} - u_n||_inf` for `n = 0, 1, ...`.
    pub increments: Vec<f64>,
    pub status: TraceStatus,
    pub final_field: ScalarField,
    pub n_steps: usize,
}

impl IterationTrace {
    /// Asymptotic ratio `||u_n|| / ||u_{n-1}||` (blow-up) or of successive increments
    /// (convergence), from the last two entries.
    pub fn ratio(&self) -> Option<f64> {
        let seq = match self.status {
            TraceStatus::BlewUp => &self.norms,
            _ => &self.increments,
        };
        let n = seq.len();
        if n < 3 || seq[n - 2] <= 0.0 {
            return None;
        }
        Some(seq[n - 1] / seq[n - 2])
    }

    /// Eigenvalue estimate `lambda / r^{1+alpha}` from the growth ratio `r`.
    pub fn lambda_estimate(&self, lambda: f64, alpha: f64) -> Option<f64> {
        let r = self.ratio()?;
        (r > 0.0 && r.is_finite()).then(|| lambda / r.powf(1.0 + alpha))
    }
}

/// Settings for the inner solves of [`monotone_iterate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolveOptions {
    /// Inner residual target relative to `max(1, ||f - lambda u_n^{1+alpha}||_inf)`.
    pub rel_tol: f64,
    pub max_steps: usize,
}

impl Default for InnerSolveOptions {
    fn default() -> Self {
        InnerSolveOptions { rel_tol: 1e-9, max_steps: 2000 }
    }
}

/// `u_{n+1} = T_{f - lambda u_n^{1+alpha}}`, `u_0 = 0`, until `||u_{n+1} - u_n|| <= tol`,
/// `||u_n|| > blowup_threshold`, or `n_max` steps.
pub fn monotone_iterate(
    op: &OperatorSpec,
    grid: &Arc<Grid>,
    f: &ScalarField,
    lambda: f64,
    n_max: usize,
    blowup_threshold: f64,
    tol: f64,
) -> Result<IterationTrace> {
    let mut solver = DirichletSolver::new(op, grid)?;
    monotone_iterate_with(&mut solver, f, lambda, n_max, blowup_threshold, tol, &InnerSolveOptions::default())
}

/// [`monotone_iterate`] reusing a solver's cached factorizations.
pub fn monotone_iterate_with(
    solver: &mut DirichletSolver,
    f: &ScalarField,
    lambda: f64,
    n_max: usize,
    blowup_threshold: f64,
    tol: f64,
    inner: &InnerSolveOptions,
) -> Result<IterationTrace> {
    let grid = solver.pucci.grid.clone();
    let op = solver.pucci.op;
    if !(lambda >= 0.0) || !(blowup_threshold > 0.0) || !(tol > 0.0) || n_max == 0 {
        return Err(Error::InvalidInput(format!(
            "monotone iteration needs lambda >= 0, threshold > 0, tol > 0, n_max >= 1 \
             (lambda = {lambda}, threshold = {blowup_threshold}, tol = {tol}, n_max = {n_max})"
        )));
    }
    let fi = interior_values(&grid, f);
    let n = grid.n_interior();
    let mut prev = ScalarField::zeros(&grid);
    let mut prev2: Option<ScalarField> = None;
    let mut norms = Vec::new();
    let mut increments = Vec::new();
    let mut g = vec![0.0; n];
    for step in 1..=n_max {
        let mut gmax = 0.0f64;
        for (k, &node) in grid.interior.iter().enumerate() {
            let x = prev.values[node as usize];
            g[k] = fi[k] - lambda * signed_pow(x, op.alpha);
            gmax = gmax.max(g[k].abs());
        }
        let mut next = ScalarField::zeros(&grid);
        // warm start: continue each node's geometric growth u_n^2 / u_{n-1}, or rescale by the
        // growth of the sup-norm where that is ill-defined
        let warm = step > 2;
        if warm {
            let p2 = prev2.as_ref().expect("two previous iterates");
            let (a, b) = (prev.sup_norm(), p2.sup_norm());
            let s = if b > 0.0 { a / b } else { 1.0 };
            for &node in &grid.interior {
                let i = node as usize;
                let (x1, x0) = (prev.values[i], p2.values[i]);
                let r = x1 / x0;
                next.values[i] = if x0 != 0.0 && r.is_finite() && r > 0.5 * s && r < 2.0 * s { x1 * r } else { x1 * s };
            }
        }
        let inner_tol = inner.rel_tol * gmax.max(1.0);
        solver
            .solve(&g, 0.0, &mut next.values, warm, inner_tol, inner.max_steps)
            .map_err(|e| Error::InnerSolve { step, source: Box::new(e) })?;
        let norm = next.sup_norm();
        let inc = next.max_diff(&prev);
        norms.push(norm);
        increments.push(inc);
        let done = if !(norm <= blowup_threshold) {
            Some(TraceStatus::BlewUp)
        } else if lambda == 0.0 || inc <= tol {
            Some(TraceStatus::Converged)
        } else {
            None
        };
        prev2 = Some(std::mem::replace(&mut prev, next));
        if let Some(status) = done {
            let mut final_field = prev;
            final_field.diverged = status == TraceStatus::BlewUp;
            return Ok(IterationTrace { norms, increments, status, final_field, n_steps: step });
        }
    }
    Ok(IterationTrace { norms, increments, status: TraceStatus::BudgetExhausted, final_field: prev, n_steps: n_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;
    use crate::grid::build_grid;
    use std::f64::consts::PI;

    fn grid(dom: &DomainSpec, h: f64, w: usize) -> Arc<Grid> {
        Arc::new(build_grid(dom, h, w).unwrap())
    }

    fn lap(alpha: f64) -> OperatorSpec {
        OperatorSpec::new(1.0, 1.0, alpha, Sign::Plus, 0.0).unwrap()
    }

    fn center_value(g: &Grid, u: &ScalarField) -> f64 {
        let n = (0..g.n_nodes()).find(|&n| g.point(n).iter().all(|c| c.abs() < 1e-12)).unwrap();
        u.values[n]
    }

    #[test]
    fn interval_quadratic() {
        let g = grid(&DomainSpec::interval(-1.0, 1.0), 1.0 / 16.0, 1);
        let u = solve_dirichlet(&lap(0.0), &g, &ScalarField::constant(&g, -1.0), 0.0, &ScalarField::zeros(&g), 1e-10, 10).unwrap();
        for &n in &g.interior {
            let x = g.point(n as usize)[0];
            assert!((u.values[n as usize] - 0.5 * (1.0 - x * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn interval_degenerate_alpha_two() {
        let g = grid(&DomainSpec::interval(-1.0, 1.0), 1.0 / 256.0, 1);
        let u = solve_dirichlet(&lap(2.0), &g, &ScalarField::constant(&g, -1.0), 0.0, &ScalarField::zeros(&g), 1e-9, 500).unwrap();
        let exact = 3f64.powf(1.0 / 3.0) * 0.75;
        assert!((center_value(&g, &u) - exact).abs() < 5e-3, "{}", center_value(&g, &u));
    }

    #[test]
    fn disc_quadratic() {
        let g = grid(&DomainSpec::disc(1.0), 1.0 / 32.0, 1);
        let u = solve_dirichlet(&lap(0.0), &g, &ScalarField::constant(&g, -1.0), 0.0, &ScalarField::zeros(&g), 1e-9, 10).unwrap();
        assert!((center_value(&g, &u) - 0.25).abs() < 1e-3);
    }

    #[test]
    fn second_order_in_one_dimension() {
        let mut errs = Vec::new();
        for &h in &[1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0] {
            let g = grid(&DomainSpec::interval(-1.0, 1.0), h, 1);
            // sin-type data makes the discretization error visible
            let f = ScalarField::from_fn(&g, |x| -(PI / 2.0).powi(2) * (PI * x[0] / 2.0).cos());
            let u = solve_dirichlet(&lap(0.0), &g, &f, 0.0, &ScalarField::zeros(&g), 1e-10, 10).unwrap();
            let e = g.interior.iter().map(|&n| (u.values[n as usize] - (PI * g.point(n as usize)[0] / 2.0).cos()).abs()).fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.9, "{errs:?}");
        }
    }

    #[test]
    fn pucci_policy_iteration_converges() {
        let g = grid(&DomainSpec::disc(1.0), 1.0 / 16.0, 2);
        for sign in [Sign::Plus, Sign::Minus] {
            let op = OperatorSpec::pucci(1.0, 2.0, sign);
            let f = ScalarField::from_fn(&g, |x| -1.0 - x[0]);
            let u = solve_dirichlet(&op, &g, &f, 0.0, &ScalarField::zeros(&g), 1e-9, 10).unwrap();
            assert!(g.interior.iter().all(|&n| u.values[n as usize] > 0.0));
        }
    }

    #[test]
    fn monotone_iteration_dichotomy() {
        let g = grid(&DomainSpec::interval(-1.0, 1.0), 1.0 / 64.0, 1);
        let f = ScalarField::constant(&g, -1.0);
        let lam = PI * PI / 4.0;
        let t0 = monotone_iterate(&lap(0.0), &g, &f, 0.0, 100, 1e6, 1e-10).unwrap();
        assert_eq!((t0.status, t0.n_steps), (TraceStatus::Converged, 1));
        let t = monotone_iterate(&lap(0.0), &g, &f, 0.8 * lam, 10_000, 1e6, 1e-10).unwrap();
        assert_eq!(t.status, TraceStatus::Converged);
        assert!(t.norms.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)));
        let t = monotone_iterate(&lap(0.0), &g, &f, 1.2 * lam, 10_000, 1e6, 1e-10).unwrap();
        assert_eq!(t.status, TraceStatus::BlewUp);
        let est = t.lambda_estimate(1.2 * lam, 0.0).unwrap();
        assert!((est - lam).abs() < 2e-3 * lam, "{est}");
        let t = monotone_iterate(&lap(0.0), &g, &f, 0.99 * lam, 5, 1e6, 1e-10).unwrap();
        assert_eq!(t.status, TraceStatus::BudgetExhausted);
    }
}
