//! Principal eigenvalue on a grid from the bounded/divergent dichotomy of the monotone
//! iteration with `f = -1`.
//!
//! A probe at `lambda` runs `u_{n+1} = T(u_n)` until it settles (feasible) or its sup-norm
//! passes a threshold (infeasible). Divergent traces grow like `(lambda / lambda_bar)^{n/(1+alpha)}`,
//! so their growth rate already locates `lambda_bar`; the bisection uses it to place the next
//! probes and falls back to midpoints when the estimate is missing or contradicted.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DomainSpec;
use crate::grid::{build_grid, Grid, NodeKind, ScalarField};
use crate::operator::{signed_pow, OperatorSpec};
use crate::radial::{radial_supersolution_bound, EigenResult, Eigenfunction, ProbeRecord};
use crate::scheme::Scheme;
use crate::solver::{monotone_iterate_with, DirichletSolver, InnerSolveOptions, IterationTrace, TraceStatus};

/// Knobs of [`estimate_lambda_bar_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Lattice directions up to this sup-norm; `None` picks 1 for `a == A`, else 2.
    pub stencil_width: Option<usize>,
    /// Convergence tolerance on increments, relative to `||u_1||`.
    pub tol_rel: f64,
    /// Blow-up threshold relative to `||u_1||`; raised to `100 lambda_max / bracket_tol` when that
    /// is larger, since bounded traces at distance `~bracket_tol` below `lambda_bar` reach norms
    /// of order `lambda_bar / (lambda_bar - lambda)`.
    pub threshold_factor: f64,
    /// Iteration budget per probe.
    pub n_max: usize,
    pub inner: InnerSolveOptions,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { stencil_width: None, tol_rel: 1e-6, threshold_factor: 1e4, n_max: 100_000, inner: InnerSolveOptions::default() }
    }
}

impl EigenOptions {
    pub fn width_for(&self, op: &OperatorSpec) -> usize {
        self.stencil_width.unwrap_or(if op.a == op.upper { 1 } else { 2 })
    }
}

/// Largest number of probes before the bracket search gives up.
const MAX_PROBES: usize = 80;

/// [`estimate_lambda_bar_with`] using default options.
pub fn estimate_lambda_bar(op: &OperatorSpec, domain: &DomainSpec, h: f64, bracket_tol: f64) -> Result<EigenResult> {
    estimate_lambda_bar_with(op, domain, h, bracket_tol, &EigenOptions::default())
}

/// Brackets the discrete principal eigenvalue on `domain` to width `bracket_tol`.
pub fn estimate_lambda_bar_with(
    op: &OperatorSpec,
    domain: &DomainSpec,
    h: f64,
    bracket_tol: f64,
    opts: &EigenOptions,
) -> Result<EigenResult> {
    op.validate()?;
    let grid = Arc::new(build_grid(domain, h, opts.width_for(op))?);
    estimate_on_grid(op, &grid, bracket_tol, opts)
}

/// Outcome of one feasibility probe.
pub struct Probe {
    pub lambda: f64,
    pub trace: IterationTrace,
}

impl Probe {
    pub fn feasible(&self) -> bool {
        self.trace.status == TraceStatus::Converged
    }

    /// `lambda_bar` read off the trace: the growth rate of a divergent trace, or for
    /// `alpha = 0` the contraction rate of a convergent one.
    pub fn estimate(&self, alpha: f64) -> Option<f64> {
        if self.trace.status == TraceStatus::BlewUp || (alpha == 0.0 && self.trace.status == TraceStatus::Converged) {
            self.trace.lambda_estimate(self.lambda, alpha).filter(|e| e.is_finite() && *e > 0.0)
        } else {
            None
        }
    }
}

/// Runs feasibility probes on a fixed grid with shared factorizations.
pub struct Prober {
    solver: DirichletSolver,
    forcing: ScalarField,
    pub threshold: f64,
    pub tol: f64,
    pub n_max: usize,
    inner: InnerSolveOptions,
}

impl Prober {
    pub fn new(op: &OperatorSpec, grid: &Arc<Grid>, opts: &EigenOptions) -> Result<Self> {
        if !(opts.tol_rel > 0.0) || !(opts.threshold_factor > 1.0) || opts.n_max == 0 {
            return Err(Error::InvalidInput("eigen options need tol_rel > 0, threshold_factor > 1, n_max >= 1".into()));
        }
        let mut solver = DirichletSolver::new(op, grid)?;
        let forcing = ScalarField::constant(grid, -1.0);
        let first = monotone_iterate_with(&mut solver, &forcing, 0.0, 1, f64::INFINITY, 1.0, &opts.inner)?;
        let base = first.final_field.sup_norm();
        if !(base > 0.0) {
            return Err(Error::Resolution { interior: grid.n_interior() });
        }
        Ok(Prober {
            solver,
            forcing,
            threshold: opts.threshold_factor * base,
            tol: opts.tol_rel * base,
            n_max: opts.n_max,
            inner: opts.inner,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.solver.pucci.grid
    }

    pub fn probe(&mut self, lambda: f64) -> Result<Probe> {
        let trace =
            monotone_iterate_with(&mut self.solver, &self.forcing, lambda, self.n_max, self.threshold, self.tol, &self.inner)?;
        if trace.status == TraceStatus::BudgetExhausted {
            return Err(Error::IndeterminateLambda { lambda });
        }
        Ok(Probe { lambda, trace })
    }
}

/// [`estimate_lambda_bar_with`] on a prebuilt grid.
pub fn estimate_on_grid(op: &OperatorSpec, grid: &Arc<Grid>, bracket_tol: f64, opts: &EigenOptions) -> Result<EigenResult> {
    if !(bracket_tol > 0.0) {
        return Err(Error::InvalidInput(format!("bracket_tol = {bracket_tol} must be positive")));
    }
    let radius = grid.domain.inscribed_radius();
    let mut lo = 0.0;
    let mut hi = radial_supersolution_bound(op, grid.dim, radius)?;
    let opts = EigenOptions { threshold_factor: opts.threshold_factor.max(100.0 * hi / bracket_tol), ..*opts };
    let mut prober = Prober::new(op, grid, &opts)?;
    let mut probes = Vec::new();

    let top = prober.probe(hi)?;
    probes.push(record(&top, op.alpha));
    if top.feasible() {
        return Err(Error::Bracket(format!("iteration stays bounded at the upper end lambda = {hi}")));
    }
    let mut est = top.estimate(op.alpha);
    let mut hi_field = top.trace.final_field;

    let half = 0.45 * bracket_tol;
    let mut misses = 0;
    while hi - lo > bracket_tol {
        if probes.len() >= MAX_PROBES {
            return Err(Error::Bracket(format!("bracket [{lo}, {hi}] not resolved after {MAX_PROBES} probes")));
        }
        let mid = 0.5 * (lo + hi);
        let (lambda, expect) = match est {
            Some(e) if misses < 2 && e > lo && e < hi => {
                if e - half > lo + 0.2 * half {
                    (e - half, Some(true))
                } else if e + half < hi - 0.2 * half {
                    (e + half, Some(false))
                } else {
                    (mid, None)
                }
            }
            _ => (mid, None),
        };
        let p = prober.probe(lambda)?;
        probes.push(record(&p, op.alpha));
        let feasible = p.feasible();
        if expect.is_some_and(|x| x != feasible) {
            misses += 1;
        }
        if let Some(e) = p.estimate(op.alpha) {
            est = Some(e);
        }
        if feasible {
            lo = lambda;
        } else {
            hi = lambda;
            hi_field = p.trace.final_field;
        }
    }
    let lambda_hat = 0.5 * (lo + hi);
    let mut phi = hi_field.normalized();
    phi.diverged = false;
    for (n, v) in phi.values.iter_mut().enumerate() {
        if grid.mask[n] != NodeKind::Interior {
            *v = 0.0;
        }
    }
    let residual = verify_eigenpair(op, grid, &phi, lambda_hat)?;
    Ok(EigenResult { lambda_lo: lo, lambda_hi: hi, lambda_hat, eigenfunction: Eigenfunction::Field(phi), residual, probes })
}

fn record(p: &Probe, alpha: f64) -> ProbeRecord {
    ProbeRecord { lambda: p.lambda, feasible: p.feasible(), steps: p.trace.n_steps, estimate: p.estimate(alpha) }
}

/// `max |F_h(phi) + lambda |phi|^alpha phi|` over interior nodes at distance at least `2h`
/// from the boundary.
pub fn verify_eigenpair(op: &OperatorSpec, grid: &Arc<Grid>, phi: &ScalarField, lambda: f64) -> Result<f64> {
    if phi.values.len() != grid.n_nodes() {
        return Err(Error::InvalidInput("field and grid differ".into()));
    }
    let norm = phi.sup_norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("eigenfunction must have sup-norm 1, got {norm}")));
    }
    let off = (0..grid.n_nodes()).filter(|&n| grid.mask[n] != NodeKind::Interior).map(|n| phi.values[n].abs()).fold(0.0, f64::max);
    if off > 0.0 {
        return Err(Error::InvalidInput(format!("eigenfunction must vanish off the interior, found {off}")));
    }
    let s = Scheme::new(op, grid);
    let dist = grid.boundary_distance();
    let margin = 2.0 * grid.h * (1.0 - 1e-12);
    let mut worst = 0.0f64;
    for (k, &n) in grid.interior.iter().enumerate() {
        let n = n as usize;
        if dist[n] < margin {
            continue;
        }
        let u = phi.values[n];
        let v = s.apply(k, &phi.values) + lambda * signed_pow(u, op.alpha);
        worst = worst.max(v.abs());
    }
    Ok(worst)
}
