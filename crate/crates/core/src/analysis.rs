//! Checks of the maximum principle, the comparison principle and the Hölder/Lipschitz
//! moduli on discrete fields.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, NodeKind, ScalarField};
use crate::operator::{signed_pow, OperatorSpec};
use crate::scheme::Scheme;

/// Outcome of a principle check. A rejected input carries the failed hypothesis and says
/// nothing about the principle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipleReport {
    pub holds: bool,
    pub worst_node: Vec<f64>,
    pub worst_violation: f64,
    pub tolerance_used: f64,
    pub rejected: Option<String>,
}

impl PrincipleReport {
    fn rejected(reason: String, tol: f64) -> Self {
        PrincipleReport { holds: false, worst_node: Vec::new(), worst_violation: f64::NAN, tolerance_used: tol, rejected: Some(reason) }
    }

    pub fn is_rejected(&self) -> bool {
        self.rejected.is_some()
    }
}

/// Hölder and interior Lipschitz constants of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    pub gamma: f64,
    pub constant: f64,
    pub lip_constant: f64,
    pub interior_margin: f64,
    /// Pairs examined for the Hölder constant.
    pub pairs: usize,
    /// Whether every pair was examined.
    pub exact: bool,
}

fn check_field(grid: &Arc<Grid>, u: &ScalarField, name: &str) -> Result<()> {
    if u.values.len() != grid.n_nodes() || u.grid.shape != grid.shape || u.grid.h != grid.h {
        return Err(Error::InvalidInput(format!("{name} does not live on the given grid")));
    }
    if !u.is_finite() {
        return Err(Error::InvalidInput(format!("{name} has non-finite values")));
    }
    Ok(())
}

/// `F_h(u) + lambda |u|^alpha u` at interior unknown `k`.
fn equation_value(s: &Scheme, op: &OperatorSpec, k: usize, node: usize, u: &[f64], lambda: f64) -> f64 {
    let x = u[node];
    s.apply(k, u) + lambda * signed_pow(x, op.alpha)
}

/// Largest interior value of a subsolution of `F + tau |sigma|^alpha sigma >= 0` that is
/// nonpositive off the interior.
pub fn check_max_principle(op: &OperatorSpec, tau: f64, sigma: &ScalarField, grid: &Arc<Grid>, tol: f64) -> Result<PrincipleReport> {
    op.validate()?;
    check_field(grid, sigma, "sigma")?;
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput(format!("tol = {tol} must be nonnegative")));
    }
    for n in 0..grid.n_nodes() {
        if grid.mask[n] == NodeKind::Boundary && sigma.values[n] > tol {
            return Ok(PrincipleReport::rejected(
                format!("sigma = {} > 0 at boundary node {:?}", sigma.values[n], grid.point(n)),
                tol,
            ));
        }
    }
    let s = Scheme::new(op, grid).with_trace(sigma.trace.as_deref().map(|v| &v[..]));
    for (k, &n) in grid.interior.iter().enumerate() {
        let v = equation_value(&s, op, k, n as usize, &sigma.values, tau);
        if v < -tol {
            return Ok(PrincipleReport::rejected(
                format!("not a subsolution at {:?}: F + tau sigma^(1+alpha) = {v:e}", grid.point(n as usize)),
                tol,
            ));
        }
    }
    let (node, worst) = grid
        .interior
        .iter()
        .map(|&n| (n as usize, sigma.values[n as usize]))
        .fold((usize::MAX, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
    Ok(PrincipleReport {
        holds: worst <= tol,
        worst_node: grid.point(node),
        worst_violation: worst,
        tolerance_used: tol,
        rejected: None,
    })
}

/// Comparison of a subsolution (`F + lambda sub^{1+alpha} >= g`) and a supersolution
/// (`F + lambda sup^{1+alpha} <= f`) of nonnegative data ordered on the boundary, under
/// `f <= g` and `f <= -c < 0`. All fields must share the grid of `sub`.
pub fn check_comparison(
    op: &OperatorSpec,
    lambda: f64,
    sub: &ScalarField,
    sup: &ScalarField,
    f: &ScalarField,
    g: &ScalarField,
    tol: f64,
) -> Result<PrincipleReport> {
    op.validate()?;
    let grid = &sub.grid;
    for (u, name) in [(sub, "sub"), (sup, "super"), (f, "f"), (g, "g")] {
        check_field(grid, u, name)?;
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput(format!("tol = {tol} must be nonnegative")));
    }
    let reject = |why: String| Ok(PrincipleReport::rejected(why, tol));
    for n in 0..grid.n_nodes() {
        if grid.mask[n] == NodeKind::Exterior {
            continue;
        }
        for (u, name) in [(sub, "sub"), (sup, "super")] {
            if u.values[n] < -tol {
                return reject(format!("{name} = {} < 0 at {:?}", u.values[n], grid.point(n)));
            }
        }
        if grid.mask[n] == NodeKind::Boundary && sub.values[n] > sup.values[n] + tol {
            return reject(format!(
                "boundary ordering fails at {:?}: sub = {} > super = {}",
                grid.point(n),
                sub.values[n],
                sup.values[n]
            ));
        }
    }
    let mut f_max = f64::NEG_INFINITY;
    for &n in &grid.interior {
        let n = n as usize;
        if f.values[n] > g.values[n] {
            return reject(format!("f = {} > g = {} at {:?}", f.values[n], g.values[n], grid.point(n)));
        }
        f_max = f_max.max(f.values[n]);
    }
    if !(f_max < 0.0) {
        return reject(format!("f must be bounded above by a negative constant, max f = {f_max}"));
    }
    let s_sub = Scheme::new(op, grid).with_trace(sub.trace.as_deref().map(|v| &v[..]));
    let s_sup = Scheme::new(op, grid).with_trace(sup.trace.as_deref().map(|v| &v[..]));
    for (k, &n) in grid.interior.iter().enumerate() {
        let n = n as usize;
        let lo = equation_value(&s_sub, op, k, n, &sub.values, lambda);
        if lo < g.values[n] - tol {
            return reject(format!("sub is not a subsolution at {:?}: {lo:e} < g = {:e}", grid.point(n), g.values[n]));
        }
        let hi = equation_value(&s_sup, op, k, n, &sup.values, lambda);
        if hi > f.values[n] + tol {
            return reject(format!("super is not a supersolution at {:?}: {hi:e} > f = {:e}", grid.point(n), f.values[n]));
        }
    }
    let (node, worst) = grid
        .interior
        .iter()
        .map(|&n| (n as usize, sub.values[n as usize] - sup.values[n as usize]))
        .fold((usize::MAX, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
    Ok(PrincipleReport {
        holds: worst <= tol,
        worst_node: grid.point(node),
        worst_violation: worst,
        tolerance_used: tol,
        rejected: None,
    })
}

/// Above this many nodes the pair scan is sampled.
pub const EXACT_PAIR_LIMIT: usize = 10_000;
const SAMPLED_PAIRS: usize = 1_000_000;
const MODULUS_SEED: u64 = 0x6d6f64;

/// [`measure_modulus_with`] with the default sampling seed.
pub fn measure_modulus(u: &ScalarField, gamma: f64, interior_margin: f64) -> Result<ModulusReport> {
    measure_modulus_with(u, gamma, interior_margin, MODULUS_SEED)
}

/// `max |u(x) - u(y)| / |x - y|^gamma` over node pairs, and the Lipschitz quotient over pairs
/// at distance at least `interior_margin` from the boundary. Above [`EXACT_PAIR_LIMIT`] nodes,
/// all pairs within two lattice steps plus `10^6` random pairs are examined.
pub fn measure_modulus_with(u: &ScalarField, gamma: f64, interior_margin: f64, seed: u64) -> Result<ModulusReport> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidInput(format!("gamma = {gamma} must lie in (0, 1]")));
    }
    let grid = &u.grid;
    let dist = grid.boundary_distance();
    let nodes: Vec<usize> = (0..grid.n_nodes()).filter(|&n| grid.mask[n] != NodeKind::Exterior).collect();
    let pts: Vec<[f64; 2]> = nodes.iter().map(|&n| grid.coords(n)).collect();
    let vals: Vec<f64> = nodes.iter().map(|&n| u.values[n]).collect();
    let deep: Vec<bool> = nodes.iter().map(|&n| grid.mask[n] == NodeKind::Interior && dist[n] >= interior_margin).collect();
    let half_gamma = 0.5 * gamma;
    let mut holder = 0.0f64;
    let mut lip = 0.0f64;
    let mut pairs = 0usize;
    let mut visit = |i: usize, j: usize| {
        let dx = pts[i][0] - pts[j][0];
        let dy = pts[i][1] - pts[j][1];
        let r2 = dx * dx + dy * dy;
        if r2 == 0.0 {
            return;
        }
        let du = (vals[i] - vals[j]).abs();
        pairs += 1;
        holder = holder.max(du / r2.powf(half_gamma));
        if deep[i] && deep[j] {
            lip = lip.max(du / r2.sqrt());
        }
    };
    let m = nodes.len();
    let exact = m <= EXACT_PAIR_LIMIT;
    if exact {
        for i in 0..m {
            for j in i + 1..m {
                visit(i, j);
            }
        }
    } else {
        let mut index = vec![usize::MAX; grid.n_nodes()];
        for (i, &n) in nodes.iter().enumerate() {
            index[n] = i;
        }
        let (nx, ny) = (grid.shape[0] as i64, grid.shape[1] as i64);
        for (i, &n) in nodes.iter().enumerate() {
            let (x, y) = ((n as i64) % nx, (n as i64) / nx);
            for oy in -2..=2i64 {
                for ox in -2..=2i64 {
                    let (x2, y2) = (x + ox, y + oy);
                    if (oy, ox) <= (0, 0) || x2 < 0 || y2 < 0 || x2 >= nx || y2 >= ny {
                        continue;
                    }
                    let j = index[(y2 * nx + x2) as usize];
                    if j != usize::MAX {
                        visit(i, j);
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..SAMPLED_PAIRS {
            let i = rng.random_range(0..m);
            let j = rng.random_range(0..m);
            if i != j {
                visit(i, j);
            }
        }
    }
    Ok(ModulusReport { gamma, constant: holder, lip_constant: lip, interior_margin, pairs, exact })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::estimate_lambda_bar;
    use crate::geometry::DomainSpec;
    use crate::grid::build_grid;
    use crate::operator::{reflect_operator, Sign};
    use crate::solver::solve_dirichlet;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid(d: &DomainSpec, h: f64, w: usize) -> Arc<Grid> {
        Arc::new(build_grid(d, h, w).unwrap())
    }

    fn solve(op: &OperatorSpec, g: &Arc<Grid>, f: &ScalarField, lambda: f64) -> ScalarField {
        solve_dirichlet(op, g, f, lambda, &ScalarField::zeros(g), 1e-10, 500).unwrap()
    }

    /// `-u` with `G(u) + tau u^{1+alpha} = f`, `G` the reflected operator: a subsolution with
    /// `F(sigma) + tau |sigma|^alpha sigma = -f`.
    fn flipped_subsolution(op: &OperatorSpec, g: &Arc<Grid>, f: &ScalarField, tau: f64) -> ScalarField {
        let mut u = solve(&reflect_operator(op), g, f, tau);
        u.values.iter_mut().for_each(|v| *v = -*v);
        u
    }

    #[test]
    fn nonpositive_input_holds() {
        let dom = DomainSpec::disc(1.0);
        let g = grid(&dom, 1.0 / 16.0, 1);
        let d = g.boundary_distance().to_vec();
        let op = OperatorSpec::pucci(1.0, 2.0, Sign::Plus);
        // -d is concave-free on the disc: F(-d) >= 0 up to the kink at the centre
        let sigma = ScalarField::from_values(&g, (0..g.n_nodes()).map(|n| if g.mask[n] == NodeKind::Interior { -d[n].min(0.5) } else { 0.0 }).collect());
        for tau in [-5.0, 0.0, 3.0] {
            let r = check_max_principle(&op, tau, &sigma, &g, 1e3).unwrap();
            assert!(r.holds && r.rejected.is_none());
        }
    }

    #[test]
    fn flipped_solution_satisfies_the_principle() {
        let g = grid(&DomainSpec::disc(1.0), 1.0 / 16.0, 2);
        let op = OperatorSpec::new(1.0, 2.0, 1.0, Sign::Plus, 0.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| -(-(x[0] - 0.2).powi(2) * 8.0 - x[1] * x[1] * 8.0).exp());
        let sigma = flipped_subsolution(&op, &g, &f, 3.0);
        let r = check_max_principle(&op, 3.0, &sigma, &g, 1e-7).unwrap();
        assert!(r.rejected.is_none(), "{:?}", r.rejected);
        assert!(r.holds && r.worst_violation <= r.tolerance_used);
    }

    #[test]
    fn eigenfunction_violates_above_the_eigenvalue() {
        let op = OperatorSpec::pucci(1.0, 1.0, Sign::Plus);
        let e = estimate_lambda_bar(&op, &DomainSpec::interval(-1.0, 1.0), 1.0 / 64.0, 0.01).unwrap();
        let phi = e.eigenfunction.as_field().unwrap();
        let r = check_max_principle(&op, e.lambda_hat + 0.2, phi, &phi.grid, 1e-3).unwrap();
        assert!(r.rejected.is_none(), "{:?}", r.rejected);
        assert!(!r.holds && (r.worst_violation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn positive_boundary_values_are_rejected() {
        let g = grid(&DomainSpec::interval(-1.0, 1.0), 0.125, 1);
        let op = OperatorSpec::pucci(1.0, 1.0, Sign::Plus);
        let r = check_max_principle(&op, 0.0, &ScalarField::constant(&g, 1.0), &g, 1e-9).unwrap();
        assert!(r.is_rejected() && !r.holds);
        assert!(r.rejected.unwrap().contains("boundary"));
    }

    #[test]
    fn zero_below_a_solution() {
        let g = grid(&DomainSpec::disc(1.0), 1.0 / 16.0, 2);
        let op = OperatorSpec::pucci(1.0, 2.0, Sign::Minus);
        let f = ScalarField::constant(&g, -1.0);
        let sup = solve(&op, &g, &f, 0.0);
        let r = check_comparison(&op, 0.0, &ScalarField::zeros(&g), &sup, &f, &ScalarField::zeros(&g), 1e-8).unwrap();
        assert!(r.holds && r.rejected.is_none(), "{r:?}");
    }

    #[test]
    fn ordered_solutions_compare() {
        let g = grid(&DomainSpec::disc(1.0), 1.0 / 16.0, 2);
        let op = OperatorSpec::new(1.0, 2.0, 1.0, Sign::Plus, 0.0).unwrap();
        let (f, gg) = (ScalarField::constant(&g, -1.0), ScalarField::constant(&g, -0.5));
        let sup = solve(&op, &g, &f, 4.0);
        let sub = solve(&op, &g, &gg, 4.0);
        let r = check_comparison(&op, 4.0, &sub, &sup, &f, &gg, 1e-7).unwrap();
        assert!(r.holds && r.rejected.is_none(), "{r:?}");
        // swapping the roles breaks f <= g
        let r = check_comparison(&op, 4.0, &sup, &sub, &gg, &f, 1e-7).unwrap();
        assert!(r.rejected.unwrap().contains("f ="));
    }

    #[test]
    fn crossing_boundary_data_is_rejected() {
        let g = grid(&DomainSpec::interval(-1.0, 1.0), 0.125, 1);
        let op = OperatorSpec::pucci(1.0, 1.0, Sign::Plus);
        let f = ScalarField::constant(&g, -1.0);
        let sub = ScalarField::constant(&g, 1.0);
        let r = check_comparison(&op, 0.0, &sub, &ScalarField::zeros(&g), &f, &f, 1e-9).unwrap();
        assert!(r.rejected.unwrap().contains("boundary ordering"));
    }

    #[test]
    fn nonnegative_forcing_is_rejected() {
        let g = grid(&DomainSpec::interval(-1.0, 1.0), 0.125, 1);
        let op = OperatorSpec::pucci(1.0, 1.0, Sign::Plus);
        let z = ScalarField::zeros(&g);
        let r = check_comparison(&op, 0.0, &z, &z, &z, &z, 1e-9).unwrap();
        assert!(r.rejected.unwrap().contains("negative constant"));
    }

    #[test]
    fn distance_power_has_unit_constant() {
        let dom = DomainSpec::disc(1.0);
        let g = grid(&dom, 1.0 / 32.0, 1);
        let gamma = 0.5;
        let d = g.boundary_distance().to_vec();
        let u = ScalarField::from_values(&g, (0..g.n_nodes()).map(|n| if g.mask[n] == NodeKind::Interior { d[n].powf(gamma) } else { 0.0 }).collect());
        let r = measure_modulus(&u, gamma, 0.2).unwrap();
        assert!(r.exact);
        assert!((r.constant - 1.0).abs() < 0.05, "{}", r.constant);
    }

    #[test]
    fn quadratic_lipschitz_constant() {
        let mut last = 0.0;
        for h in [1.0 / 32.0, 1.0 / 128.0] {
            let g = grid(&DomainSpec::interval(-1.0, 1.0), h, 1);
            let u = ScalarField::from_fn(&g, |x| 0.5 * (1.0 - x[0] * x[0]));
            let r = measure_modulus(&u, 1.0, 0.0).unwrap();
            assert!(r.lip_constant <= 1.0 && r.lip_constant > 1.0 - 2.0 * h, "{}", r.lip_constant);
            last = r.lip_constant;
        }
        assert!(last > 0.98);
    }

    #[test]
    fn sampled_constant_is_below_exact() {
        let g = grid(&DomainSpec::disc(1.0), 1.0 / 64.0, 1);
        let u = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() * (1.0 - x[0] * x[0] - x[1] * x[1]));
        let gamma = 0.7;
        let r = measure_modulus(&u, gamma, 0.1).unwrap();
        assert!(!r.exact);
        let nodes: Vec<usize> = (0..g.n_nodes()).filter(|&n| g.mask[n] != NodeKind::Exterior).collect();
        let mut exact = 0.0f64;
        for (i, &a) in nodes.iter().enumerate() {
            let pa = g.coords(a);
            for &b in &nodes[i + 1..] {
                let pb = g.coords(b);
                let r = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                exact = exact.max((u.values[a] - u.values[b]).abs() / r.powf(gamma));
            }
        }
        assert!(r.constant <= exact * (1.0 + 1e-12));
        assert!(r.constant >= 0.95 * exact, "{} {exact}", r.constant);
    }

    #[test]
    fn gamma_out_of_range() {
        let g = grid(&DomainSpec::interval(-1.0, 1.0), 0.125, 1);
        assert!(measure_modulus(&ScalarField::zeros(&g), 0.0, 0.1).is_err());
        assert!(measure_modulus(&ScalarField::zeros(&g), 1.5, 0.1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn no_violation_for_nonpositive_tau(tau in -10.0f64..=0.0, c in 0.1f64..3.0, x0 in -0.8f64..0.8, alpha in prop::sample::select(vec![0.0, 1.0])) {
            let g = grid(&DomainSpec::interval(-1.0, 1.0), 1.0 / 32.0, 1);
            let op = OperatorSpec::new(1.0, 2.0, alpha, Sign::Plus, 0.0).unwrap();
            let f = ScalarField::from_fn(&g, |x| -c * (-(x[0] - x0).powi(2) * 10.0).exp());
            let sigma = flipped_subsolution(&op, &g, &f, tau);
            let r = check_max_principle(&op, tau, &sigma, &g, 1e-7).unwrap();
            prop_assert!(r.rejected.is_none(), "{:?}", r.rejected);
            prop_assert!(r.holds);
        }

        #[test]
        fn subset_of_pairs_never_exceeds(seed in any::<u64>(), gamma in 0.2f64..=1.0) {
            let g = grid(&DomainSpec::interval(-1.0, 1.0), 1.0 / 64.0, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = ScalarField::from_values(&g, (0..g.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect());
            let all = measure_modulus(&u, gamma, 0.0).unwrap();
            // drop the outer nodes: a subset of the pairs
            let keep: Vec<bool> = (0..g.n_nodes()).map(|n| g.point(n)[0].abs() < 0.5).collect();
            let mut sub = 0.0f64;
            for i in 0..g.n_nodes() {
                for j in i + 1..g.n_nodes() {
                    if keep[i] && keep[j] && g.mask[i] != NodeKind::Exterior && g.mask[j] != NodeKind::Exterior {
                        let r = (g.point(i)[0] - g.point(j)[0]).abs();
                        sub = sub.max((u.values[i] - u.values[j]).abs() / r.powf(gamma));
                    }
                }
            }
            prop_assert!(sub <= all.constant * (1.0 + 1e-12));
        }
    }
}
