//! Monotone wide-stencil discretization of `|Du|^alpha M±(D^2u)`.
//!
//! Second differences along lattice directions are combined frame by frame: for an
//! orthogonal pair of directions the Pucci weights are applied to each second difference
//! and the extremal frame is taken (max for `M+`, min for `M-`). When `a == A` the operator
//! is linear and only the axis frame is used.

use std::sync::Arc;

use crate::grid::{Grid, NodeKind, ScalarField};
use crate::operator::{signed_pow, OperatorSpec, Sign};

/// Frame position (into [`Scheme::frames`]) in the high bits, one weight bit per direction
/// in the low two bits: set means the weight for a positive second difference.
pub type Policy = u16;

/// Stencil evaluator bound to an operator and a grid.
pub struct Scheme<'g> {
    pub op: OperatorSpec,
    pub grid: &'g Grid,
    /// Frames (indices into `grid.frames`) that enter the extremal combination.
    pub frames: Vec<usize>,
    axes: Vec<usize>,
    trace: Option<&'g [[f64; 2]]>,
}

impl<'g> Scheme<'g> {
    pub fn new(op: &OperatorSpec, grid: &'g Grid) -> Self {
        let frames = if op.a == op.upper { vec![grid.axis_frame()] } else { (0..grid.frames.len()).collect() };
        let axes = grid.frames[grid.axis_frame()].clone();
        Scheme { op: *op, grid, frames, axes, trace: None }
    }

    /// Reads values at the crossings of cut arms from `trace` instead of the end nodes.
    pub fn with_trace(mut self, trace: Option<&'g [[f64; 2]]>) -> Self {
        self.trace = trace;
        self
    }

    /// Whether the end of arm `slot` (0 plus, 1 minus) of arm pair `i` holds a known value
    /// taken from the trace.
    #[inline]
    pub fn from_trace(&self, i: usize, slot: usize) -> Option<f64> {
        let p = self.grid.arms[i];
        let t = if slot == 0 { p.plus.t } else { p.minus.t };
        match self.trace {
            Some(tr) if t < 1.0 => Some(tr[i][slot]),
            _ => None,
        }
    }

    #[inline]
    fn arm_value(&self, i: usize, slot: usize, u: &[f64]) -> f64 {
        let p = self.grid.arms[i];
        let node = if slot == 0 { p.plus.node } else { p.minus.node };
        self.from_trace(i, slot).unwrap_or(u[node as usize])
    }

    pub fn is_linear(&self) -> bool {
        self.op.a == self.op.upper
    }

    /// Directions that can carry a nonzero weight.
    pub fn used_directions(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.frames.iter().flat_map(|&f| self.grid.frames[f].iter().copied()).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    #[inline]
    pub fn second_difference(&self, k: usize, j: usize, u: &[f64]) -> f64 {
        let g = self.grid;
        let i = k * g.directions.len() + j;
        let c = g.coef[i];
        let u0 = u[g.interior[k] as usize];
        c[0] * (self.arm_value(i, 0, u) - u0) + c[1] * (self.arm_value(i, 1, u) - u0)
    }

    #[inline]
    fn weight(&self, positive: bool) -> f64 {
        if positive {
            self.op.positive_weight()
        } else {
            self.op.negative_weight()
        }
    }

    /// Extremal Pucci value at interior node `k` and the policy attaining it.
    pub fn pucci_with_policy(&self, k: usize, u: &[f64]) -> (f64, Policy) {
        let maximize = self.op.sign == Sign::Plus;
        let mut best = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
        let mut best_pol = 0;
        for (pos, &f) in self.frames.iter().enumerate() {
            let mut val = 0.0;
            let mut bits = 0u16;
            for (b, &j) in self.grid.frames[f].iter().enumerate() {
                let d = self.second_difference(k, j, u);
                if d > 0.0 {
                    bits |= 1 << b;
                }
                val += self.op.weigh(d);
            }
            if (maximize && val > best) || (!maximize && val < best) {
                best = val;
                best_pol = ((pos as u16) << 2) | bits;
            }
        }
        (best, best_pol)
    }

    pub fn pucci(&self, k: usize, u: &[f64]) -> f64 {
        self.pucci_with_policy(k, u).0
    }

    /// Value of the linear operator selected by `pol` at node `k`.
    pub fn policy_value(&self, k: usize, u: &[f64], pol: Policy) -> f64 {
        let f = self.frames[(pol >> 2) as usize];
        self.grid.frames[f]
            .iter()
            .enumerate()
            .map(|(b, &j)| self.weight(pol & (1 << b) != 0) * self.second_difference(k, j, u))
            .sum()
    }

    /// `(direction index, weight)` pairs of the linear operator selected by `pol`.
    pub fn policy_weights(&self, pol: Policy) -> impl Iterator<Item = (usize, f64)> + '_ {
        let f = self.frames[(pol >> 2) as usize];
        self.grid.frames[f].iter().enumerate().map(move |(b, &j)| (j, self.weight(pol & (1 << b) != 0)))
    }

    /// Squared gradient estimate: the mean of squared one-sided axis differences.
    pub fn grad_norm_sq(&self, k: usize, u: &[f64]) -> f64 {
        let g = self.grid;
        let nd = g.directions.len();
        let u0 = u[g.interior[k] as usize];
        let mut s = 0.0;
        for &j in &self.axes {
            let i = k * nd + j;
            let p = g.arms[i];
            let dp = (self.arm_value(i, 0, u) - u0) / (p.plus.t * g.h);
            let dm = (u0 - self.arm_value(i, 1, u)) / (p.minus.t * g.h);
            s += 0.5 * (dp * dp + dm * dm);
        }
        s
    }

    /// `(|p|^2 + eps^2)^{alpha/2}` at node `k`.
    pub fn grad_factor(&self, k: usize, u: &[f64]) -> f64 {
        let alpha = self.op.alpha;
        if alpha == 0.0 {
            return 1.0;
        }
        let s = self.grad_norm_sq(k, u) + self.op.eps_reg * self.op.eps_reg;
        if s == 0.0 {
            return if alpha > 0.0 { 0.0 } else { f64::INFINITY };
        }
        s.powf(0.5 * alpha)
    }

    /// `F_h(u)` at interior node `k`.
    pub fn apply(&self, k: usize, u: &[f64]) -> f64 {
        let m = self.pucci(k, u);
        if m == 0.0 {
            return 0.0;
        }
        self.grad_factor(k, u) * m
    }
}

/// Discrete `F(Du, D^2u)` at every interior node; other nodes get 0.
#[allow(non_snake_case)]
pub fn apply_F_discrete(op: &OperatorSpec, grid: &Arc<Grid>, u: &ScalarField) -> ScalarField {
    let s = Scheme::new(op, grid).with_trace(u.trace.as_deref().map(|v| &v[..]));
    let mut out = ScalarField::zeros(grid);
    for (k, &n) in grid.interior.iter().enumerate() {
        out.values[n as usize] = s.apply(k, &u.values);
    }
    out
}

/// `max |F_h(u) + lambda |u|^alpha u - f|` over interior nodes accepted by `keep`.
pub fn equation_residual(
    op: &OperatorSpec,
    grid: &Grid,
    u: &[f64],
    f: &[f64],
    lambda: f64,
    keep: impl Fn(usize) -> bool,
) -> f64 {
    let s = Scheme::new(op, grid);
    let mut worst = 0.0f64;
    for (k, &n) in grid.interior.iter().enumerate() {
        let n = n as usize;
        if !keep(n) {
            continue;
        }
        let v = s.apply(k, u) + lambda * signed_pow(u[n], op.alpha) - f[n];
        worst = worst.max(v.abs());
    }
    worst
}

/// Nodes that are interior and at least `margin` away from the boundary.
pub fn deep_interior(grid: &Grid, margin: f64) -> Vec<bool> {
    let d = grid.boundary_distance();
    (0..grid.n_nodes()).map(|n| grid.mask[n] == NodeKind::Interior && d[n] >= margin).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, StarDomain};
    use crate::grid::build_grid;
    use proptest::prelude::*;

    fn grid(dom: &DomainSpec, h: f64, w: usize) -> Arc<Grid> {
        Arc::new(build_grid(dom, h, w).unwrap())
    }

    #[test]
    fn quadratic_is_exact() {
        let op = OperatorSpec::pucci(1.0, 1.0, Sign::Plus);
        for dom in [DomainSpec::disc(1.0), DomainSpec::Star(StarDomain::flower(0.2, 3)), DomainSpec::interval(-1.0, 1.0)] {
            let g = grid(&dom, 0.07, 2);
            let u = ScalarField::from_fn(&g, |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>());
            let f = apply_F_discrete(&op, &g, &u);
            for &n in &g.interior {
                assert!((f.values[n as usize] - g.dim as f64).abs() < 1e-9, "{}", f.values[n as usize]);
            }
        }
    }

    #[test]
    fn pucci_quadratic_on_axis_frame() {
        // D^2u = diag(1, -1): M+ = A - a = 1 for a = 1, A = 2
        let op = OperatorSpec::pucci(1.0, 2.0, Sign::Plus);
        let g = grid(&DomainSpec::disc(1.0), 0.1, 1);
        let u = ScalarField::from_fn(&g, |x| 0.5 * (x[0] * x[0] - x[1] * x[1]));
        let f = apply_F_discrete(&op, &g, &u);
        for &n in &g.interior {
            assert!((f.values[n as usize] - 1.0).abs() < 1e-9);
        }
        let m = OperatorSpec::pucci(1.0, 2.0, Sign::Minus);
        let f = apply_F_discrete(&m, &g, &u);
        for &n in &g.interior {
            assert!((f.values[n as usize] + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn quartic_refinement_order() {
        let op = OperatorSpec::pucci(1.0, 1.0, Sign::Plus);
        let dom = DomainSpec::Box { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] };
        let exact = |x: &[f64]| 14.0 * (x[0] * x[0] + x[1] * x[1]);
        let mut errs = Vec::new();
        for &h in &[0.1, 0.05, 0.025] {
            let g = grid(&dom, h, 1);
            let u = ScalarField::from_fn(&g, |x| x[0].powi(4) + x[0] * x[0] * x[1] * x[1] + x[1].powi(4));
            let f = apply_F_discrete(&op, &g, &u);
            let e = g.interior.iter().map(|&n| (f.values[n as usize] - exact(&g.point(n as usize))).abs()).fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.0, "{errs:?}");
        }
    }

    #[test]
    fn gradient_factor_examples() {
        let op = OperatorSpec::new(1.0, 1.0, 1.0, Sign::Plus, 0.0).unwrap();
        let g = grid(&DomainSpec::interval(-1.0, 1.0), 0.1, 1);
        let u = ScalarField::from_fn(&g, |x| 3.0 * x[0]);
        let s = Scheme::new(&op, &g);
        for k in 0..g.n_interior() {
            assert!((s.grad_factor(k, &u.values) - 3.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn raising_a_neighbor_never_lowers_f(
            seed in 0u64..1000, delta in 1e-3..1.0f64, alpha in -0.5..2.0f64, plus in any::<bool>()
        ) {
            let sign = if plus { Sign::Plus } else { Sign::Minus };
            let op = OperatorSpec::new(0.5, 2.0, alpha, sign, 0.05).unwrap();
            let g = grid(&DomainSpec::disc(1.0), 0.25, 2);
            let mut u = ScalarField::from_fn(&g, |x| ((seed as f64 + 1.0) * (x[0] + 2.0 * x[1])).sin());
            let s = Scheme::new(&op, &g);
            let k = (seed as usize) % g.n_interior();
            let center = g.interior[k] as usize;
            let before = s.pucci(k, &u.values);
            let nb = g.arms[k * g.directions.len() + (seed as usize) % g.directions.len()].plus.node as usize;
            prop_assume!(nb != center);
            u.values[nb] += delta;
            let after = s.pucci(k, &u.values);
            prop_assert!(after >= before - 1e-12 * (1.0 + before.abs()));
        }
    }
}
