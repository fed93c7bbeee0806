//! Radial calculus on balls: the explicit supersolution bound and a shooting eigen-solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::ode::{integrate, OdeOptions, Stop};
use crate::operator::{signed_pow, OperatorSpec};

/// `|g'|^alpha M±(diag(g'', g'/r, ..., g'/r))` with `N - 1` copies of `g'/r`.
#[allow(non_snake_case)]
pub fn radial_F(op: &OperatorSpec, n: usize, r: f64, gp: f64, gpp: f64) -> Result<f64> {
    if r == 0.0 {
        return Err(Error::Pole);
    }
    if !(r > 0.0) || !gp.is_finite() || !gpp.is_finite() {
        return Err(Error::InvalidInput(format!("radial_F needs r > 0 and finite data (r = {r})")));
    }
    let w = if op.alpha == 0.0 {
        1.0
    } else if gp == 0.0 {
        if op.alpha < 0.0 {
            return Err(Error::Singularity { alpha: op.alpha });
        }
        0.0
    } else {
        gp.abs().powf(op.alpha)
    };
    let pucci = op.weigh(gpp) + (n as f64 - 1.0) * op.weigh(gp / r);
    Ok(w * pucci)
}

/// Exponent `q = (alpha + 2) / (alpha + 1)` of the explicit supersolution profile.
pub fn profile_exponent(alpha: f64) -> f64 {
    (alpha + 2.0) / (alpha + 1.0)
}

/// `sigma(r) = (r^q - R^q)^2 / (2q)` and its first two derivatives.
pub fn supersolution_profile(alpha: f64, radius: f64, r: f64) -> (f64, f64, f64) {
    let q = profile_exponent(alpha);
    let rq = r.powf(q);
    let big = radius.powf(q);
    let s = (rq - big).powi(2) / (2.0 * q);
    let sp = r.powf(2.0 * q - 1.0) - r.powf(q - 1.0) * big;
    let spp = (2.0 * q - 1.0) * r.powf(2.0 * q - 2.0) - (q - 1.0) * r.powf(q - 2.0) * big;
    (s, sp, spp)
}

/// `-radial_F(sigma) / sigma^{alpha+1}` at radius `r`.
pub fn supersolution_quotient(op: &OperatorSpec, n: usize, radius: f64, r: f64) -> f64 {
    let (s, sp, spp) = supersolution_profile(op.alpha, radius, r);
    match radial_F(op, n, r, sp, spp) {
        Ok(f) => -f / s.powf(op.alpha + 1.0),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Upper bound for the principal eigenvalue on the ball of radius `radius`: the supremum over
/// `r in (0, R)` of `-F(sigma) / sigma^{alpha+1}`.
pub fn radial_supersolution_bound(op: &OperatorSpec, n: usize, radius: f64) -> Result<f64> {
    op.validate()?;
    if !(radius > 0.0) || n == 0 {
        return Err(Error::InvalidInput(format!("need R > 0 and N >= 1 (R = {radius}, N = {n})")));
    }
    const SAMPLES: usize = 2048;
    let r_min = radius * 1e-9;
    let phi = |r: f64| supersolution_quotient(op, n, radius, r);
    let grid = |i: usize| {
        if i == 0 {
            r_min
        } else {
            radius * (i as f64 + 0.5) / (SAMPLES as f64 + 1.0)
        }
    };
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..=SAMPLES {
        let v = phi(grid(i));
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    let lo = grid(best.saturating_sub(1));
    let hi = if best == SAMPLES { radius * (1.0 - 1e-12) } else { grid(best + 1) };
    let (_, refined) = golden_section_max(phi, lo, hi, 1e-10);
    Ok(best_val.max(refined))
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rel_tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if (hi - lo) <= rel_tol * hi.abs().max(1e-300) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let (x, v) = if f1 > f2 { (x1, f1) } else { (x2, f2) };
    let (fl, fh) = (f(lo), f(hi));
    if fl >= v && fl >= fh {
        (lo, fl)
    } else if fh >= v {
        (hi, fh)
    } else {
        (x, v)
    }
}

/// The branch-wise estimate `|g'|^alpha r^{q-2} (B1 r^q - B2 R^q)` for the supersolution profile,
/// with `(B1, B2)` picked by the sign of `sigma''`. For `sign = plus` it equals `F(sigma)`.
pub fn supersolution_branch_estimate(op: &OperatorSpec, n: usize, radius: f64, r: f64) -> f64 {
    let q = profile_exponent(op.alpha);
    let (_, sp, spp) = supersolution_profile(op.alpha, radius, r);
    let nf = n as f64;
    let (b1, b2) = if spp <= 0.0 {
        (op.a * (nf + 2.0 * q - 2.0), op.a * (nf + q - 2.0))
    } else {
        (op.upper * (2.0 * q - 1.0) + op.a * (nf - 1.0), op.upper * (q - 1.0) + op.a * (nf - 1.0))
    };
    sp.abs().powf(op.alpha) * r.powf(q - 2.0) * (b1 * r.powf(q) - b2 * radius.powf(q))
}

/// Which profile a [`RadialProfile`] samples.
#[derive(Debug, Clone, PartialEq)]
enum ProfileKind {
    /// The explicit supersolution `sigma`.
    Supersolution,
    /// Shooting solution: series start below `r0`, then tabulated `(r, g, g')`.
    Shooting { lambda: f64, c: f64, r0: f64, table: Vec<(f64, f64, f64)> },
}

/// A radial function `g` on `[0, R]` with samplers for `g`, `g'`, `g''`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub radius: f64,
    pub dim: usize,
    pub op: OperatorSpec,
    kind: ProfileKind,
}

impl RadialProfile {
    /// The explicit supersolution profile `sigma`.
    pub fn supersolution(op: &OperatorSpec, dim: usize, radius: f64) -> Self {
        RadialProfile { radius, dim, op: *op, kind: ProfileKind::Supersolution }
    }

    fn q(&self) -> f64 {
        profile_exponent(self.op.alpha)
    }

    pub fn lambda(&self) -> Option<f64> {
        match &self.kind {
            ProfileKind::Shooting { lambda, .. } => Some(*lambda),
            ProfileKind::Supersolution => None,
        }
    }

    fn locate(table: &[(f64, f64, f64)], r: f64) -> usize {
        let i = table.partition_point(|p| p.0 <= r);
        i.clamp(1, table.len() - 1) - 1
    }

    /// `(g, g')` at `r`.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        match &self.kind {
            ProfileKind::Supersolution => {
                let (s, sp, _) = supersolution_profile(self.op.alpha, self.radius, r);
                (s, sp)
            }
            ProfileKind::Shooting { lambda, c, r0, table } => {
                let q = self.q();
                if r <= *r0 {
                    return (1.0 - c * r.powf(q), -c * q * r.powf(q - 1.0));
                }
                let i = Self::locate(table, r);
                let (ra, ga, pa) = table[i];
                let (rb, gb, pb) = table[i + 1];
                let h = rb - ra;
                if h <= 0.0 {
                    return (ga, pa);
                }
                let s = ((r - ra) / h).clamp(0.0, 1.0);
                let qa = self.shoot_gpp(*lambda, ra, ga, pa);
                let qb = self.shoot_gpp(*lambda, rb, gb, pb);
                (hermite(s, h, ga, pa, gb, pb), hermite(s, h, pa, qa, pb, qb))
            }
        }
    }

    pub fn g(&self, r: f64) -> f64 {
        self.eval(r).0
    }

    pub fn gp(&self, r: f64) -> f64 {
        self.eval(r).1
    }

    pub fn gpp(&self, r: f64) -> f64 {
        match &self.kind {
            ProfileKind::Supersolution => supersolution_profile(self.op.alpha, self.radius, r).2,
            ProfileKind::Shooting { lambda, c, r0, .. } => {
                if r <= *r0 {
                    let q = self.q();
                    return -c * q * (q - 1.0) * r.powf(q - 2.0);
                }
                let (g, gp) = self.eval(r);
                self.shoot_gpp(*lambda, r, g, gp)
            }
        }
    }

    fn shoot_gpp(&self, lambda: f64, r: f64, g: f64, gp: f64) -> f64 {
        let qv = source(&self.op, self.dim, lambda, r, g, gp);
        qv / weight_for(&self.op, qv)
    }
}

fn hermite(s: f64, h: f64, y0: f64, d0: f64, y1: f64, d1: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * y1
        + (s3 - s2) * h * d1
}

fn weight_for(op: &OperatorSpec, x: f64) -> f64 {
    if x > 0.0 {
        op.positive_weight()
    } else {
        op.negative_weight()
    }
}

/// `Q = W(g'')` solved from the radial equation.
fn source(op: &OperatorSpec, n: usize, lambda: f64, r: f64, g: f64, gp: f64) -> f64 {
    let lam_term = lambda * signed_pow(g, op.alpha) / gp.abs().powf(op.alpha);
    let tangential = if n > 1 { (n as f64 - 1.0) * op.weigh(gp / r) } else { 0.0 };
    -lam_term - tangential
}

/// Eigenfunction carried by an [`EigenResult`].
#[derive(Debug, Clone, PartialEq)]
pub enum Eigenfunction {
    Radial(RadialProfile),
    Field(ScalarField),
}

impl Eigenfunction {
    pub fn as_field(&self) -> Option<&ScalarField> {
        match self {
            Eigenfunction::Field(f) => Some(f),
            Eigenfunction::Radial(_) => None,
        }
    }

    pub fn as_radial(&self) -> Option<&RadialProfile> {
        match self {
            Eigenfunction::Radial(p) => Some(p),
            Eigenfunction::Field(_) => None,
        }
    }
}

/// One feasibility decision made during a bisection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub lambda: f64,
    pub feasible: bool,
    pub steps: usize,
    /// Eigenvalue estimate read off the growth or contraction rate, if one was available.
    pub estimate: Option<f64>,
}

/// Bracketed principal eigenvalue with its normalized eigenfunction.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub lambda_hat: f64,
    pub eigenfunction: Eigenfunction,
    pub residual: f64,
    pub probes: Vec<ProbeRecord>,
}

impl EigenResult {
    pub fn width(&self) -> f64 {
        self.lambda_hi - self.lambda_lo
    }
}

enum Shot {
    /// `g` stays positive on `[0, R]`.
    Positive { table: Vec<(f64, f64, f64)> },
    /// `g` vanishes before `R`.
    Zero,
}

/// Start radius of the series expansion, as a fraction of `R`.
const SERIES_START: f64 = 1e-3;

fn series_coefficient(op: &OperatorSpec, n: usize, lambda: f64) -> f64 {
    let q = profile_exponent(op.alpha);
    let w = op.negative_weight();
    (lambda / (w * (q + n as f64 - 2.0))).powf(1.0 / (1.0 + op.alpha)) / q
}

fn shoot(op: &OperatorSpec, n: usize, radius: f64, lambda: f64) -> Result<Shot> {
    let q = profile_exponent(op.alpha);
    let c = series_coefficient(op, n, lambda);
    let r0 = SERIES_START * radius;
    if lambda == 0.0 {
        return Ok(Shot::Positive { table: vec![(r0, 1.0, 0.0), (radius, 1.0, 0.0)] });
    }
    let mut t = r0;
    let mut y = [1.0 - c * r0.powf(q), -c * q * r0.powf(q - 1.0)];
    let opts = OdeOptions { h_init: 1e-3 * r0, ..OdeOptions::default() };
    let mut path = Vec::new();
    let rhs = |r: f64, y: &[f64; 2]| {
        let qv = source(op, n, lambda, r, y[0], y[1]);
        [y[1], qv / weight_for(op, qv)]
    };
    let events = |r: f64, y: &[f64; 2], out: &mut Vec<f64>| {
        out.clear();
        out.push(y[0]);
        out.push(source(op, n, lambda, r, y[0], y[1]));
        out.push(y[1]);
    };
    for _restart in 0..64 {
        let stop = integrate(rhs, events, t, y, radius, &opts, &mut path);
        match stop {
            Stop::End { .. } => {
                let table = path.iter().map(|(r, v)| (*r, v[0], v[1])).collect();
                return Ok(Shot::Positive { table });
            }
            Stop::Event { index: 0, .. } => return Ok(Shot::Zero),
            Stop::Event { index: 1, t: te, y: ye } => {
                // Pucci branch switch: restart just past the kink
                path.pop();
                t = te;
                y = ye;
            }
            Stop::Event { .. } => {
                // g' reached 0 with g > 0: the profile turns before vanishing
                let table = path.iter().map(|(r, v)| (*r, v[0], v[1])).collect();
                return Ok(Shot::Positive { table });
            }
            Stop::Stalled { .. } => {
                return Err(Error::NonConvergence { steps: opts.max_steps, residual: f64::NAN, tol: opts.rtol });
            }
        }
    }
    Err(Error::NonConvergence { steps: 64, residual: f64::NAN, tol: 0.0 })
}

/// Principal eigenvalue on the ball of radius `radius` by shooting from the center and
/// bisecting on the sign of `g(R)`. The bracket has width at most `tol`.
pub fn shoot_eigen(op: &OperatorSpec, n: usize, radius: f64, tol: f64) -> Result<EigenResult> {
    op.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol = {tol} must be positive")));
    }
    let bound = radial_supersolution_bound(op, n, radius)?;
    let mut lo = 0.0;
    let mut hi = 2.0 * bound;
    let mut probes = Vec::new();
    if let Shot::Positive { .. } = shoot(op, n, radius, hi)? {
        return Err(Error::Bracket(format!(
            "profile stays positive at lambda = {hi} = 2x the supersolution bound"
        )));
    }
    probes.push(ProbeRecord { lambda: hi, feasible: false, steps: 0, estimate: None });
    let mut lo_table = vec![(SERIES_START * radius, 1.0, 0.0), (radius, 1.0, 0.0)];
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match shoot(op, n, radius, mid)? {
            Shot::Positive { table, .. } => {
                lo = mid;
                lo_table = table;
                probes.push(ProbeRecord { lambda: mid, feasible: true, steps: 0, estimate: None });
            }
            Shot::Zero => {
                hi = mid;
                probes.push(ProbeRecord { lambda: mid, feasible: false, steps: 0, estimate: None });
            }
        }
    }
    let profile = RadialProfile {
        radius,
        dim: n,
        op: *op,
        kind: ProfileKind::Shooting {
            lambda: lo,
            c: series_coefficient(op, n, lo),
            r0: SERIES_START * radius,
            table: lo_table,
        },
    };
    let lambda_hat = 0.5 * (lo + hi);
    let residual = radial_residual(&profile, lambda_hat, 1000);
    Ok(EigenResult {
        lambda_lo: lo,
        lambda_hi: hi,
        lambda_hat,
        eigenfunction: Eigenfunction::Radial(profile),
        residual,
        probes,
    })
}

/// Max of `|radial_F(g) + lambda g^{1+alpha}|` over `samples` interior radii. For shooting
/// profiles only the integrated part `r >= r0` is sampled; below it the truncated series is used.
pub fn radial_residual(profile: &RadialProfile, lambda: f64, samples: usize) -> f64 {
    let start = match &profile.kind {
        ProfileKind::Shooting { r0, .. } => *r0,
        ProfileKind::Supersolution => 0.0,
    };
    let mut worst = 0.0f64;
    for i in 1..samples {
        let r = profile.radius * i as f64 / samples as f64;
        if r <= start {
            continue;
        }
        let (g, gp) = profile.eval(r);
        let gpp = profile.gpp(r);
        if let Ok(f) = radial_F(&profile.op, profile.dim, r, gp, gpp) {
            let v = f + lambda * signed_pow(g, profile.op.alpha);
            worst = worst.max(v.abs());
        }
    }
    worst
}
