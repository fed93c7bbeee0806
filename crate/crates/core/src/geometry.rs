//! Domains and the distance-function calculus used by the barriers.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::SymmetricMatrix;

/// Number of boundary samples used for star-shaped domains.
pub const STAR_SAMPLES: usize = 4096;

/// A smooth star-shaped planar domain `{c + r(cos t, sin t) : r < rho(t)}` with
/// `rho(t) = cos[0] + sum_k cos[k] cos(k t) + sin[k] sin(k t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarDomain {
    pub center: [f64; 2],
    /// Cosine coefficients; entry 0 is the mean radius.
    pub cos: Vec<f64>,
    /// Sine coefficients; entry 0 is ignored.
    #[serde(default)]
    pub sin: Vec<f64>,
    #[serde(skip)]
    cache: OnceLock<StarCache>,
}

#[derive(Debug, Clone)]
struct StarCache {
    theta: Vec<f64>,
    points: Vec<[f64; 2]>,
    kappa_min: f64,
    kappa_max: f64,
    rho_min: f64,
    rho_max: f64,
    diameter: f64,
}

impl PartialEq for StarDomain {
    fn eq(&self, other: &Self) -> bool {
        self.center == other.center && self.cos == other.cos && self.sin == other.sin
    }
}

impl StarDomain {
    pub fn new(center: [f64; 2], cos: Vec<f64>, sin: Vec<f64>) -> Result<Self> {
        let s = StarDomain { center, cos, sin, cache: OnceLock::new() };
        s.validate()?;
        Ok(s)
    }

    /// `rho = 1 + eps cos(k t)` centered at the origin.
    pub fn flower(eps: f64, k: usize) -> Self {
        let mut cos = vec![0.0; k + 1];
        cos[0] = 1.0;
        cos[k] += eps;
        StarDomain { center: [0.0, 0.0], cos, sin: Vec::new(), cache: OnceLock::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cos.is_empty() {
            return Err(Error::InvalidInput("star domain needs at least the mean radius".into()));
        }
        if self.cos.iter().chain(&self.sin).chain(&self.center).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("star coefficients must be finite".into()));
        }
        let c = self.cache();
        if !(c.rho_min > 0.0) {
            return Err(Error::InvalidInput(format!(
                "star radius function must stay positive (min {})",
                c.rho_min
            )));
        }
        Ok(())
    }

    /// `(rho, rho', rho'')` at angle `t`.
    pub fn rho(&self, t: f64) -> (f64, f64, f64) {
        let mut r = self.cos[0];
        let mut r1 = 0.0;
        let mut r2 = 0.0;
        let n = self.cos.len().max(self.sin.len());
        for k in 1..n {
            let kf = k as f64;
            let (s, c) = (kf * t).sin_cos();
            let ck = self.cos.get(k).copied().unwrap_or(0.0);
            let sk = self.sin.get(k).copied().unwrap_or(0.0);
            r += ck * c + sk * s;
            r1 += kf * (-ck * s + sk * c);
            r2 += -kf * kf * (ck * c + sk * s);
        }
        (r, r1, r2)
    }

    /// Boundary point, first and second derivatives with respect to the angle.
    fn curve(&self, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let (r, r1, r2) = self.rho(t);
        let (s, c) = t.sin_cos();
        let p = [self.center[0] + r * c, self.center[1] + r * s];
        let d1 = [r1 * c - r * s, r1 * s + r * c];
        let d2 = [r2 * c - 2.0 * r1 * s - r * c, r2 * s + 2.0 * r1 * c - r * s];
        (p, d1, d2)
    }

    /// Signed curvature at angle `t`, positive where the boundary is convex.
    pub fn curvature(&self, t: f64) -> f64 {
        let (r, r1, r2) = self.rho(t);
        (r * r + 2.0 * r1 * r1 - r * r2) / (r * r + r1 * r1).powf(1.5)
    }

    fn cache(&self) -> &StarCache {
        self.cache.get_or_init(|| {
            let theta: Vec<f64> = (0..STAR_SAMPLES).map(|i| 2.0 * PI * i as f64 / STAR_SAMPLES as f64).collect();
            let points: Vec<[f64; 2]> = theta.iter().map(|&t| self.curve(t).0).collect();
            let rhos: Vec<f64> = theta.iter().map(|&t| self.rho(t).0).collect();
            let kappa = |t: f64| self.curvature(t);
            let kappa_max = refine_extremum(&theta, &kappa, true);
            let kappa_min = -refine_extremum(&theta, &|t| -kappa(t), true);
            let rho_min = -refine_extremum(&theta, &|t| -self.rho(t).0, true);
            let rho_max = rhos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut diameter = 0.0f64;
            for i in 0..points.len() {
                for j in (i + 1)..points.len() {
                    let dx = points[i][0] - points[j][0];
                    let dy = points[i][1] - points[j][1];
                    diameter = diameter.max(dx * dx + dy * dy);
                }
            }
            StarCache { theta, points, kappa_min, kappa_max, rho_min, rho_max, diameter: diameter.sqrt() }
        })
    }

    pub fn kappa_max(&self) -> f64 {
        self.cache().kappa_max
    }

    pub fn kappa_min(&self) -> f64 {
        self.cache().kappa_min
    }

    /// Signed level function: negative inside, zero on the boundary.
    fn level(&self, x: &[f64]) -> f64 {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        let r = (dx * dx + dy * dy).sqrt();
        if r == 0.0 {
            return -self.cache().rho_min;
        }
        r - self.rho(dy.atan2(dx)).0
    }
}

/// Max of a periodic function sampled on `theta`, refined by golden section around the best sample.
fn refine_extremum(theta: &[f64], f: &dyn Fn(f64) -> f64, _max: bool) -> f64 {
    let vals: Vec<f64> = theta.iter().map(|&t| f(t)).collect();
    let (best, &bv) = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty sample");
    let dt = theta[1] - theta[0];
    let (mut lo, mut hi) = (theta[best] - dt, theta[best] + dt);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if f(x1) < f(x2) {
            lo = x1;
        } else {
            hi = x2;
        }
    }
    bv.max(f(0.5 * (lo + hi)))
}

/// Geometric domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainSpec {
    /// Open ball; in one dimension the interval `(c - R, c + R)`.
    Ball { center: Vec<f64>, radius: f64 },
    /// Open axis-aligned box.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Star(StarDomain),
}

/// Result of a nearest-boundary-point query.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProbe {
    pub x: Vec<f64>,
    pub d: f64,
    pub nearest: Vec<f64>,
    pub unique: bool,
    /// `(x - nearest) / d`, the inward normal when `d = 0`; only for unique projections.
    pub grad: Option<Vec<f64>>,
    /// Spectrum of `D^2 d` in nondecreasing order; only for unique projections.
    pub hess_eigs: Option<Vec<f64>>,
    /// `D^2 d` itself; only for unique projections.
    pub hess: Option<SymmetricMatrix>,
    /// Largest boundary curvature at the nearest point (0 for flat faces).
    pub kappa: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl DomainSpec {
    pub fn interval(lo: f64, hi: f64) -> Self {
        DomainSpec::Ball { center: vec![0.5 * (lo + hi)], radius: 0.5 * (hi - lo) }
    }

    pub fn disc(radius: f64) -> Self {
        DomainSpec::Ball { center: vec![0.0, 0.0], radius }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::Ball { center, radius } => {
                if center.is_empty() || center.len() > 3 {
                    return Err(Error::InvalidInput("ball dimension must be 1, 2 or 3".into()));
                }
                if !(*radius > 0.0) || !radius.is_finite() || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidInput(format!("ball radius {radius} must be positive")));
                }
            }
            DomainSpec::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() || lo.len() > 3 {
                    return Err(Error::InvalidInput("box corners must share dimension 1, 2 or 3".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
                    return Err(Error::InvalidInput("box needs lo < hi componentwise".into()));
                }
            }
            DomainSpec::Star(s) => s.validate()?,
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Ball { center, .. } => center.len(),
            DomainSpec::Box { lo, .. } => lo.len(),
            DomainSpec::Star(_) => 2,
        }
    }

    /// Strict membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            DomainSpec::Ball { center, radius } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                r2 < radius * radius
            }
            DomainSpec::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| l < v && v < h),
            DomainSpec::Star(s) => s.level(x) < 0.0,
        }
    }

    /// Membership of the closure, with relative slack `1e-12`.
    pub fn contains_closed(&self, x: &[f64]) -> bool {
        let slack = 1e-12 * (1.0 + self.diameter());
        match self {
            DomainSpec::Ball { center, radius } => {
                let r: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                r <= radius + slack
            }
            DomainSpec::Box { lo, hi } => {
                x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *l - slack <= *v && *v <= *h + slack)
            }
            DomainSpec::Star(s) => s.level(x) <= slack,
        }
    }

    /// Axis-aligned bounding box.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            DomainSpec::Ball { center, radius } => {
                (center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect())
            }
            DomainSpec::Box { lo, hi } => (lo.clone(), hi.clone()),
            DomainSpec::Star(s) => {
                let m = s.cache().rho_max;
                (vec![s.center[0] - m, s.center[1] - m], vec![s.center[0] + m, s.center[1] + m])
            }
        }
    }

    /// A point that lattices are anchored to, so that symmetric domains get symmetric grids.
    pub fn anchor(&self) -> Vec<f64> {
        match self {
            DomainSpec::Ball { center, .. } => center.clone(),
            DomainSpec::Box { lo, .. } => lo.clone(),
            DomainSpec::Star(s) => s.center.to_vec(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            DomainSpec::Ball { radius, .. } => 2.0 * radius,
            DomainSpec::Box { lo, hi } => norm(&lo.iter().zip(hi).map(|(l, h)| h - l).collect::<Vec<_>>()),
            DomainSpec::Star(s) => s.cache().diameter,
        }
    }

    /// Center and radius of a large inscribed ball (exact for balls, boxes and
    /// star domains whose center is the incenter).
    pub fn inscribed_ball(&self) -> (Vec<f64>, f64) {
        match self {
            DomainSpec::Ball { center, radius } => (center.clone(), *radius),
            DomainSpec::Box { lo, hi } => {
                let c = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
                let r = lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)).fold(f64::INFINITY, f64::min);
                (c, r)
            }
            DomainSpec::Star(s) => {
                let d = self.distance_probe(&s.center).map(|p| p.d).unwrap_or(s.cache().rho_min);
                (s.center.to_vec(), d)
            }
        }
    }

    pub fn inscribed_radius(&self) -> f64 {
        self.inscribed_ball().1
    }

    /// Largest signed boundary curvature (positive on convex parts); 0 for boxes.
    pub fn kappa_max(&self) -> f64 {
        match self {
            DomainSpec::Ball { center, radius } => {
                if center.len() == 1 {
                    0.0
                } else {
                    1.0 / radius
                }
            }
            DomainSpec::Box { .. } => 0.0,
            DomainSpec::Star(s) => s.kappa_max(),
        }
    }

    /// Smallest signed boundary curvature; negative where the boundary is concave.
    pub fn kappa_min(&self) -> f64 {
        match self {
            DomainSpec::Star(s) => s.kappa_min(),
            _ => self.kappa_max(),
        }
    }

    /// Largest positive eigenvalue of `D^2 d` over the domain, `max(-kappa_min, 0)`.
    pub fn hess_distance_positive_bound(&self) -> f64 {
        (-self.kappa_min()).max(0.0)
    }

    /// Smallest `t in (0, 1]` with `x + t v` on the boundary, for `x` inside.
    pub fn first_crossing(&self, x: &[f64], v: &[f64]) -> Option<f64> {
        match self {
            DomainSpec::Ball { center, radius } => {
                let w: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
                let a: f64 = v.iter().map(|z| z * z).sum();
                let b: f64 = w.iter().zip(v).map(|(p, q)| p * q).sum();
                let c: f64 = w.iter().map(|z| z * z).sum::<f64>() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                // positive root of a t^2 + 2 b t + c with c < 0, written to avoid cancellation
                let t = if b >= 0.0 { -c / (b + disc.sqrt()) } else { (-b + disc.sqrt()) / a };
                (t > 0.0 && t <= 1.0).then_some(t)
            }
            DomainSpec::Box { lo, hi } => {
                let mut t = f64::INFINITY;
                for k in 0..x.len() {
                    if v[k] > 0.0 {
                        t = t.min((hi[k] - x[k]) / v[k]);
                    } else if v[k] < 0.0 {
                        t = t.min((lo[k] - x[k]) / v[k]);
                    }
                }
                (t > 0.0 && t <= 1.0).then_some(t)
            }
            DomainSpec::Star(s) => {
                let pt = |t: f64| [x[0] + t * v[0], x[1] + t * v[1]];
                let level = |t: f64| s.level(&pt(t));
                const PIECES: usize = 8;
                let mut a = 0.0;
                for i in 1..=PIECES {
                    let b = i as f64 / PIECES as f64;
                    if level(b) >= 0.0 {
                        let (mut lo, mut hi) = (a, b);
                        for _ in 0..200 {
                            let mid = 0.5 * (lo + hi);
                            if mid <= lo || mid >= hi {
                                break;
                            }
                            if level(mid) >= 0.0 {
                                hi = mid;
                            } else {
                                lo = mid;
                            }
                        }
                        return Some(hi);
                    }
                    a = b;
                }
                None
            }
        }
    }

    /// Distance to the boundary, nearest point, and (when the projection is unique) the
    /// gradient and Hessian of the distance function.
    pub fn distance_probe(&self, x: &[f64]) -> Result<DistanceProbe> {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("point {x:?} has wrong dimension")));
        }
        if !self.contains_closed(x) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        match self {
            DomainSpec::Ball { center, radius } => Ok(ball_probe(center, *radius, x)),
            DomainSpec::Box { lo, hi } => Ok(box_probe(lo, hi, x)),
            DomainSpec::Star(s) => Ok(star_probe(s, x)),
        }
    }
}

fn ball_probe(center: &[f64], radius: f64, x: &[f64]) -> DistanceProbe {
    let n = x.len();
    let w: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
    let r = norm(&w);
    let d = (radius - r).max(0.0);
    if r == 0.0 {
        let mut nearest = center.to_vec();
        nearest[0] += radius;
        return DistanceProbe {
            x: x.to_vec(),
            d,
            nearest,
            unique: false,
            grad: None,
            hess_eigs: None,
            hess: None,
            kappa: 1.0 / radius,
        };
    }
    let u: Vec<f64> = w.iter().map(|c| c / r).collect();
    let nearest: Vec<f64> = center.iter().zip(&u).map(|(c, e)| c + radius * e).collect();
    let grad: Vec<f64> = u.iter().map(|e| -e).collect();
    let kappa = if n == 1 { 0.0 } else { 1.0 / radius };
    let mu = if n == 1 { 0.0 } else { -1.0 / r };
    // D^2 d = mu (I - u u^T)
    let mut hess = SymmetricMatrix::identity(n).scaled(mu);
    for i in 0..n {
        for j in i..n {
            let v = hess.get(i, j) - mu * u[i] * u[j];
            hess.set(i, j, v);
        }
    }
    let mut eigs = vec![mu; n - 1];
    eigs.push(0.0);
    eigs.sort_by(|a, b| a.total_cmp(b));
    DistanceProbe { x: x.to_vec(), d, nearest, unique: true, grad: Some(grad), hess_eigs: Some(eigs), hess: Some(hess), kappa }
}

/// Distances within this of each other count as ties.
const TIE_TOL: f64 = 1e-8;

fn box_probe(lo: &[f64], hi: &[f64], x: &[f64]) -> DistanceProbe {
    let n = x.len();
    let mut faces: Vec<(f64, usize, f64)> = Vec::with_capacity(2 * n);
    for k in 0..n {
        faces.push(((x[k] - lo[k]).max(0.0), k, lo[k]));
        faces.push(((hi[k] - x[k]).max(0.0), k, hi[k]));
    }
    faces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (d, k, plane) = faces[0];
    let unique = faces[1].0 - d > TIE_TOL;
    let mut nearest = x.to_vec();
    nearest[k] = plane;
    let (grad, eigs, hess) = if unique {
        let mut g = vec![0.0; n];
        g[k] = if plane == lo[k] { 1.0 } else { -1.0 };
        (Some(g), Some(vec![0.0; n]), Some(SymmetricMatrix::zeros(n)))
    } else {
        (None, None, None)
    };
    DistanceProbe { x: x.to_vec(), d, nearest, unique, grad, hess_eigs: eigs, hess, kappa: 0.0 }
}

fn star_probe(s: &StarDomain, x: &[f64]) -> DistanceProbe {
    let cache = s.cache();
    let m = cache.points.len();
    let dist2: Vec<f64> = cache
        .points
        .iter()
        .map(|p| (x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2))
        .collect();
    let best_sample = dist2.iter().cloned().fold(f64::INFINITY, f64::min);
    let dt = 2.0 * PI / m as f64;
    // refine every sampled local minimum that could compete with the best one
    let slack = 4.0 * best_sample.sqrt() * dt * cache.rho_max + (dt * cache.rho_max).powi(2) * 4.0;
    let mut minima: Vec<(f64, f64)> = Vec::new();
    for i in 0..m {
        let prev = dist2[(i + m - 1) % m];
        let next = dist2[(i + 1) % m];
        if dist2[i] <= prev && dist2[i] <= next && dist2[i] <= best_sample + slack {
            let t = refine_projection(s, x, cache.theta[i], dt);
            let (p, _, _) = s.curve(t);
            let d = ((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)).sqrt();
            let t = t.rem_euclid(2.0 * PI);
            if !minima.iter().any(|&(tt, _)| angle_gap(tt, t) < 1e-6) {
                minima.push((t, d));
            }
        }
    }
    minima.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (t, d) = minima[0];
    let unique = minima.get(1).is_none_or(|m2| m2.1 - d > TIE_TOL);
    let (p, d1, _) = s.curve(t);
    let kappa = s.curvature(t);
    let mut probe = DistanceProbe {
        x: x.to_vec(),
        d,
        nearest: p.to_vec(),
        unique,
        grad: None,
        hess_eigs: None,
        hess: None,
        kappa,
    };
    if unique {
        let tl = norm(&d1);
        let tangent = [d1[0] / tl, d1[1] / tl];
        // inward normal: rotate the counter-clockwise tangent by +90 degrees
        let grad = if d > 0.0 {
            [(x[0] - p[0]) / d, (x[1] - p[1]) / d]
        } else {
            [-tangent[1], tangent[0]]
        };
        let mu = -kappa / (1.0 - d * kappa);
        let hess = SymmetricMatrix::from_rank_one_sum(2, &[(mu, &tangent[..])]);
        let mut eigs = vec![mu, 0.0];
        eigs.sort_by(|a, b| a.total_cmp(b));
        probe.grad = Some(grad.to_vec());
        probe.hess_eigs = Some(eigs);
        probe.hess = Some(hess);
    }
    probe
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let g = (a - b).rem_euclid(2.0 * PI);
    g.min(2.0 * PI - g)
}

/// Newton on `|x - b(t)|^2 / 2` safeguarded by the sample bracket `[t0 - dt, t0 + dt]`.
fn refine_projection(s: &StarDomain, x: &[f64], t0: f64, dt: f64) -> f64 {
    let (mut lo, mut hi) = (t0 - dt, t0 + dt);
    let deriv = |t: f64| {
        let (p, d1, d2) = s.curve(t);
        let w = [x[0] - p[0], x[1] - p[1]];
        let f1 = -(w[0] * d1[0] + w[1] * d1[1]);
        let f2 = d1[0] * d1[0] + d1[1] * d1[1] - (w[0] * d2[0] + w[1] * d2[1]);
        (f1, f2)
    };
    let (flo, _) = deriv(lo);
    let (fhi, _) = deriv(hi);
    if !(flo <= 0.0 && fhi >= 0.0) {
        return t0;
    }
    let mut t = t0;
    for _ in 0..100 {
        let (f1, f2) = deriv(t);
        if f1 == 0.0 {
            return t;
        }
        if f1 < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let mut next = if f2 > 0.0 { t - f1 / f2 } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-15 * (1.0 + t.abs()) || hi - lo <= 1e-15 {
            return next;
        }
        t = next;
    }
    t
}
