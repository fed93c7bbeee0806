//! Barrier functions built from the distance to the boundary, with sampled certificates
//! that `F(Du, D^2u)` is strictly negative.
//!
//! Both barriers are functions of `d` alone, `u = phi(d)`, so
//! `Du = phi'(d) Dd` and `D^2u = phi'(d) D^2d + phi''(d) Dd (x) Dd`, with `Dd` and `D^2d` taken
//! from [`DomainSpec::distance_probe`]. Certification evaluates the unregularized operator.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DistanceProbe, DomainSpec};
use crate::grid::{Grid, NodeKind, ScalarField};
use crate::operator::OperatorSpec;

/// Which barrier and its constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BarrierParams {
    /// `d^gamma` for `d < delta`, `delta^gamma` beyond.
    Boundary { gamma: f64, delta: f64 },
    /// `scale * (1 - (1 + d^gamma)^{-k})`.
    Global {
        gamma: f64,
        k: u32,
        beta: f64,
        /// The constant `K > diam` bounding `d`.
        big_k: f64,
        /// Positive part of the `D^2 d` spectrum, bounded over the domain.
        mu: f64,
        scale: f64,
    },
}

impl BarrierParams {
    /// `(phi, phi', phi'')` at distance `d > 0`.
    pub fn profile(&self, d: f64) -> (f64, f64, f64) {
        match *self {
            BarrierParams::Boundary { gamma, delta } => {
                if d >= delta {
                    (delta.powf(gamma), 0.0, 0.0)
                } else {
                    let g = d.powf(gamma);
                    (g, gamma * g / d, gamma * (gamma - 1.0) * g / (d * d))
                }
            }
            BarrierParams::Global { gamma, k, scale, .. } => {
                let k = k as f64;
                let s = d.powf(gamma);
                let base = 1.0 + s;
                let phi = 1.0 - base.powf(-k);
                let p1 = k * gamma * s / d * base.powf(-k - 1.0);
                let p2 = k * gamma * s / (d * d) * base.powf(-k - 2.0) * (gamma - 1.0 - (1.0 + k * gamma) * s);
                (scale * phi, scale * p1, scale * p2)
            }
        }
    }
}

/// Barrier values on a grid with the outcome of its certification.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierField {
    pub field: ScalarField,
    pub params: BarrierParams,
    /// Largest `eps` with `F <= -eps` at every certified sample.
    pub certified_margin: f64,
    /// Sample points that entered the certificate.
    pub points: Vec<Vec<f64>>,
    /// Samples skipped because their nearest boundary point is not unique.
    pub skipped: usize,
    pub ridge_fraction: f64,
    /// Smallest `1 - d kappa` over certified samples, `kappa` the curvature at the nearest point.
    pub focal_margin: f64,
    pub worst_point: Vec<f64>,
}

impl BarrierField {
    /// `F` of the barrier at `x`, or `None` on a ridge or at the boundary.
    pub fn operator_value(&self, domain: &DomainSpec, op: &OperatorSpec, x: &[f64]) -> Result<Option<f64>> {
        let p = domain.distance_probe(x)?;
        evaluate(&self.params, op, &p)
    }
}

/// Sampling settings of the certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub seed: u64,
    /// Random samples per grid node of the sampled region.
    pub random_per_node: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { seed: 0, random_per_node: 10 }
    }
}

fn evaluate(params: &BarrierParams, op: &OperatorSpec, p: &DistanceProbe) -> Result<Option<f64>> {
    let (Some(grad), Some(hess)) = (&p.grad, &p.hess) else { return Ok(None) };
    if !p.unique || p.d <= 0.0 {
        return Ok(None);
    }
    let (_, d1, d2) = params.profile(p.d);
    let n = grad.len();
    let du: Vec<f64> = grad.iter().map(|g| d1 * g).collect();
    let mut m = hess.scaled(d1);
    for i in 0..n {
        for j in i..n {
            m.set(i, j, m.get(i, j) + d2 * grad[i] * grad[j]);
        }
    }
    Ok(Some(op.eval_exact(&du, &m)?))
}

struct Certificate {
    worst: f64,
    worst_point: Vec<f64>,
    points: Vec<Vec<f64>>,
    skipped: usize,
    focal_margin: f64,
}

/// Evaluates `F` at every probe in `region` plus random points of the same region and returns
/// the largest value found.
fn certify(
    domain: &DomainSpec,
    op: &OperatorSpec,
    params: &BarrierParams,
    grid: &Grid,
    in_region: impl Fn(&DistanceProbe) -> bool,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    let mut probes = Vec::new();
    for &n in &grid.interior {
        let p = domain.distance_probe(&grid.point(n as usize))?;
        if in_region(&p) {
            probes.push(p);
        }
    }
    let target = opts.random_per_node * probes.len().max(1);
    let (lo, hi) = domain.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut found = 0;
    let mut attempts = 0;
    while found < target && attempts < 200 * target {
        attempts += 1;
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect();
        if !domain.contains(&x) {
            continue;
        }
        let p = domain.distance_probe(&x)?;
        if in_region(&p) {
            probes.push(p);
            found += 1;
        }
    }
    let mut cert = Certificate {
        worst: f64::NEG_INFINITY,
        worst_point: Vec::new(),
        points: Vec::with_capacity(probes.len()),
        skipped: 0,
        focal_margin: f64::INFINITY,
    };
    for p in probes {
        match evaluate(params, op, &p)? {
            None => cert.skipped += 1,
            Some(v) => {
                if v > cert.worst || cert.worst_point.is_empty() {
                    cert.worst = cert.worst.max(v);
                    cert.worst_point = p.x.clone();
                }
                cert.focal_margin = cert.focal_margin.min(1.0 - p.d * p.kappa);
                cert.points.push(p.x);
            }
        }
    }
    if cert.points.is_empty() {
        return Err(Error::InvalidInput("no certifiable sample points in the barrier region".into()));
    }
    Ok(cert)
}

fn check_grid(domain: &DomainSpec, grid: &Grid) -> Result<()> {
    if grid.domain != *domain {
        return Err(Error::InvalidInput("grid was built on a different domain".into()));
    }
    Ok(())
}

fn nodal_field(domain: &DomainSpec, grid: &Arc<Grid>, params: &BarrierParams) -> Result<ScalarField> {
    let mut field = ScalarField::zeros(grid);
    for &n in &grid.interior {
        let n = n as usize;
        let p = domain.distance_probe(&grid.point(n))?;
        field.values[n] = if p.d > 0.0 { params.profile(p.d).0 } else { 0.0 };
    }
    for (n, v) in field.values.iter_mut().enumerate() {
        if grid.mask[n] != NodeKind::Interior {
            *v = 0.0;
        }
    }
    Ok(field)
}

fn finish(
    domain: &DomainSpec,
    grid: &Arc<Grid>,
    params: BarrierParams,
    cert: Certificate,
    scale_pow: f64,
) -> Result<BarrierField> {
    let margin = -cert.worst * scale_pow;
    if !(margin > 0.0) {
        return Err(Error::BarrierFailure { point: cert.worst_point, value: cert.worst * scale_pow });
    }
    let total = cert.points.len() + cert.skipped;
    Ok(BarrierField {
        field: nodal_field(domain, grid, &params)?,
        params,
        certified_margin: margin,
        skipped: cert.skipped,
        ridge_fraction: cert.skipped as f64 / total as f64,
        points: cert.points,
        focal_margin: cert.focal_margin,
        worst_point: cert.worst_point,
    })
}

/// [`boundary_barrier_with`] using default sampling.
pub fn boundary_barrier(domain: &DomainSpec, op: &OperatorSpec, gamma: f64, delta: f64, grid: &Arc<Grid>) -> Result<BarrierField> {
    boundary_barrier_with(domain, op, gamma, delta, grid, &CertifyOptions::default())
}

/// `d^gamma` on the band `d < delta`, certified at the band nodes and random band points.
pub fn boundary_barrier_with(
    domain: &DomainSpec,
    op: &OperatorSpec,
    gamma: f64,
    delta: f64,
    grid: &Arc<Grid>,
    opts: &CertifyOptions,
) -> Result<BarrierField> {
    op.validate()?;
    check_grid(domain, grid)?;
    if !(gamma > 0.0 && gamma < 1.0) || !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("need 0 < gamma < 1 and delta > 0 (gamma = {gamma}, delta = {delta})")));
    }
    let params = BarrierParams::Boundary { gamma, delta };
    let cert = certify(domain, op, &params, grid, |p| p.d > 0.0 && p.d < delta, opts)?;
    finish(domain, grid, params, cert, 1.0)
}

/// Smallest `k` with `a (k + gamma - 2) >= 2 A (N - 1) mu (1 + K^gamma) K^{1 - gamma}`, raised if
/// needed so that `a (1 + k gamma) >= A (N - 1) mu (1 + K^gamma) K^{1 - gamma}`.
pub fn global_barrier_exponent(op: &OperatorSpec, dim: usize, gamma: f64, mu: f64, big_k: f64) -> u32 {
    let rhs = op.upper * (dim as f64 - 1.0) * mu * (1.0 + big_k.powf(gamma)) * big_k.powf(1.0 - gamma);
    let from_proof = (2.0 * rhs / op.a + 2.0 - gamma).ceil().max(1.0);
    let sufficient = ((rhs / op.a - 1.0) / gamma).ceil().max(1.0);
    from_proof.max(sufficient) as u32
}

/// [`global_barrier_with`] using default sampling.
pub fn global_barrier(domain: &DomainSpec, op: &OperatorSpec, beta: f64, gamma: f64, grid: &Arc<Grid>) -> Result<BarrierField> {
    global_barrier_with(domain, op, beta, gamma, grid, &CertifyOptions::default())
}

/// `s (1 - (1 + d^gamma)^{-k})` with `s` chosen so the certified maximum of `F` is `beta`.
pub fn global_barrier_with(
    domain: &DomainSpec,
    op: &OperatorSpec,
    beta: f64,
    gamma: f64,
    grid: &Arc<Grid>,
    opts: &CertifyOptions,
) -> Result<BarrierField> {
    op.validate()?;
    check_grid(domain, grid)?;
    if !(beta < 0.0) || !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidInput(format!("need beta < 0 and 0 < gamma < 1 (beta = {beta}, gamma = {gamma})")));
    }
    let big_k = 1.01 * domain.diameter();
    let mu = domain.hess_distance_positive_bound();
    let k = global_barrier_exponent(op, domain.dim(), gamma, mu, big_k);
    let unit = BarrierParams::Global { gamma, k, beta, big_k, mu, scale: 1.0 };
    let cert = certify(domain, op, &unit, grid, |p| p.d > 0.0, opts)?;
    if !(cert.worst < 0.0) {
        return Err(Error::BarrierFailure { point: cert.worst_point, value: cert.worst });
    }
    // F(s u) = s^{1+alpha} F(u)
    let scale = (beta / cert.worst).powf(1.0 / (1.0 + op.alpha)) * (1.0 + 1e-12);
    let params = BarrierParams::Global { gamma, k, beta, big_k, mu, scale };
    let pow = scale.powf(1.0 + op.alpha);
    finish(domain, grid, params, cert, pow)
}
