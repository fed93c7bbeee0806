//! Uniform lattices over domains, cut-cell stencil arms, and nodal fields.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DomainSpec;

/// Nodes whose nearest boundary crossing lies closer than this fraction of an arm are
/// treated as boundary nodes.
pub const MIN_ARM_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Interior,
    Boundary,
    Exterior,
}

/// One half of a stencil arm: the fraction `t in (0, 1]` of the lattice step that stays
/// inside the domain and the node supplying the value at its end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arm {
    pub t: f64,
    pub node: u32,
}

/// Both arms of an interior node along one lattice direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPair {
    pub plus: Arm,
    pub minus: Arm,
}

/// Uniform lattice with interior/boundary/exterior masks and precomputed stencil arms.
#[derive(Debug)]
pub struct Grid {
    pub domain: DomainSpec,
    pub h: f64,
    pub dim: usize,
    pub stencil_width: usize,
    /// Nodes per axis; `shape[1] == 1` in one dimension.
    pub shape: [usize; 2],
    /// Coordinates of node `(0, 0)`.
    pub origin: [f64; 2],
    pub mask: Vec<NodeKind>,
    /// Primitive lattice directions, each `e ~ -e` pair listed once.
    pub directions: Vec<[i32; 2]>,
    /// Orthogonal direction pairs (single directions in one dimension), as indices into `directions`.
    pub frames: Vec<Vec<usize>>,
    /// Interior nodes in row-major order.
    pub interior: Vec<u32>,
    /// Position of each node in `interior`, or `u32::MAX`.
    pub unknown_of: Vec<u32>,
    /// `arms[k * directions.len() + j]` is the arm pair of interior node `interior[k]` along direction `j`.
    pub arms: Vec<ArmPair>,
    /// Shortley-Weller weights `[c_plus, c_minus]` of each arm pair: the second difference is
    /// `c_plus (u_plus - u_0) + c_minus (u_minus - u_0)`.
    pub coef: Vec<[f64; 2]>,
    boundary_distance: OnceLock<Vec<f64>>,
}

fn gcd(a: i32, b: i32) -> i32 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Primitive directions with coordinates of infinity-norm at most `width`, `e` and `-e` counted once.
pub fn stencil_directions(dim: usize, width: usize) -> Vec<[i32; 2]> {
    if dim == 1 {
        return vec![[1, 0]];
    }
    let w = width as i32;
    let mut out = Vec::new();
    for p in 0..=w {
        for q in -w..=w {
            if (p == 0 && q <= 0) || gcd(p, q) != 1 {
                continue;
            }
            out.push([p, q]);
        }
    }
    out.sort_by_key(|d| (d[0].abs().max(d[1].abs()), d[0] * d[0] + d[1] * d[1], -d[0], -d[1]));
    out
}

fn canonical(d: [i32; 2]) -> [i32; 2] {
    if d[0] > 0 || (d[0] == 0 && d[1] > 0) {
        d
    } else {
        [-d[0], -d[1]]
    }
}

fn frames_for(dim: usize, dirs: &[[i32; 2]]) -> Vec<Vec<usize>> {
    if dim == 1 {
        return vec![vec![0]];
    }
    let mut frames = Vec::new();
    let mut used = vec![false; dirs.len()];
    for (i, d) in dirs.iter().enumerate() {
        if used[i] {
            continue;
        }
        let perp = canonical([-d[1], d[0]]);
        if let Some(j) = dirs.iter().position(|e| *e == perp) {
            used[i] = true;
            used[j] = true;
            frames.push(vec![i, j]);
        }
    }
    frames
}

/// Builds the lattice, masks and cut-cell arms for `domain` with spacing `h`.
pub fn build_grid(domain: &DomainSpec, h: f64, stencil_width: usize) -> Result<Grid> {
    domain.validate()?;
    let dim = domain.dim();
    if dim > 2 {
        return Err(Error::InvalidInput(format!("grids support dimensions 1 and 2, got {dim}")));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("grid spacing h = {h} must be positive")));
    }
    if !(1..=3).contains(&stencil_width) {
        return Err(Error::InvalidInput(format!("stencil_width = {stencil_width} must be 1, 2 or 3")));
    }
    let (lo, hi) = domain.bounding_box();
    let anchor = domain.anchor();
    let pad = stencil_width as i64 + 1;
    let mut shape = [1usize; 2];
    let mut origin = [0.0; 2];
    for k in 0..dim {
        let i_lo = ((lo[k] - anchor[k]) / h).floor() as i64 - pad;
        let i_hi = ((hi[k] - anchor[k]) / h).ceil() as i64 + pad;
        shape[k] = (i_hi - i_lo + 1) as usize;
        origin[k] = anchor[k] + i_lo as f64 * h;
    }
    let n_nodes = shape[0] * shape[1];
    if n_nodes > 50_000_000 {
        return Err(Error::InvalidInput(format!("grid with {n_nodes} nodes is too large")));
    }
    let directions = stencil_directions(dim, stencil_width);
    let frames = frames_for(dim, &directions);
    let coords = |node: usize| -> [f64; 2] {
        let i = node % shape[0];
        let j = node / shape[0];
        [origin[0] + i as f64 * h, origin[1] + j as f64 * h]
    };
    let inside: Vec<bool> = (0..n_nodes).map(|n| domain.contains(&coords(n)[..dim])).collect();

    let offset = |node: usize, d: [i32; 2], s: i32| -> Option<usize> {
        let i = (node % shape[0]) as i64 + (s * d[0]) as i64;
        let j = (node / shape[0]) as i64 + (s * d[1]) as i64;
        if i < 0 || j < 0 || i >= shape[0] as i64 || j >= shape[1] as i64 {
            None
        } else {
            Some(j as usize * shape[0] + i as usize)
        }
    };

    // arm fractions for every inside node
    let mut mask = vec![NodeKind::Exterior; n_nodes];
    let mut arm_cache: Vec<Option<Vec<ArmPair>>> = vec![None; n_nodes];
    for node in 0..n_nodes {
        if !inside[node] {
            continue;
        }
        let x = coords(node);
        let mut pairs = Vec::with_capacity(directions.len());
        let mut demote = false;
        for d in &directions {
            let arm = |s: i32| -> Result<Arm> {
                let nb = offset(node, *d, s).ok_or_else(|| {
                    Error::InvalidInput("stencil leaves the padded lattice".into())
                })?;
                let v = [s as f64 * d[0] as f64 * h, s as f64 * d[1] as f64 * h];
                let t = match domain.first_crossing(&x[..dim], &v[..dim]) {
                    Some(t) if t < 1.0 - 1e-12 => t,
                    _ => 1.0,
                };
                Ok(Arm { t, node: nb as u32 })
            };
            let plus = arm(1)?;
            let minus = arm(-1)?;
            if plus.t < MIN_ARM_FRACTION || minus.t < MIN_ARM_FRACTION {
                demote = true;
            }
            pairs.push(ArmPair { plus, minus });
        }
        if demote {
            mask[node] = NodeKind::Boundary;
        } else {
            mask[node] = NodeKind::Interior;
            arm_cache[node] = Some(pairs);
        }
    }
    let mut interior = Vec::new();
    let mut unknown_of = vec![u32::MAX; n_nodes];
    let mut arms = Vec::new();
    for node in 0..n_nodes {
        if mask[node] == NodeKind::Interior {
            unknown_of[node] = interior.len() as u32;
            interior.push(node as u32);
            let pairs = arm_cache[node].take().expect("interior node has arms");
            for p in &pairs {
                for a in [p.plus, p.minus] {
                    let nb = a.node as usize;
                    if mask[nb] == NodeKind::Exterior {
                        mask[nb] = NodeKind::Boundary;
                    }
                }
            }
            arms.extend(pairs);
        }
    }
    if interior.len() < 3 {
        return Err(Error::Resolution { interior: interior.len() });
    }
    let nd = directions.len();
    let coef = arms
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = directions[i % nd];
            let len2 = h * h * (d[0] * d[0] + d[1] * d[1]) as f64;
            let (tp, tm) = (p.plus.t, p.minus.t);
            [2.0 / (len2 * tp * (tp + tm)), 2.0 / (len2 * tm * (tp + tm))]
        })
        .collect();
    Ok(Grid {
        domain: domain.clone(),
        h,
        dim,
        stencil_width,
        shape,
        origin,
        mask,
        directions,
        frames,
        interior,
        unknown_of,
        arms,
        coef,
        boundary_distance: OnceLock::new(),
    })
}

impl Grid {
    pub fn n_nodes(&self) -> usize {
        self.mask.len()
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.mask.iter().filter(|k| **k == NodeKind::Boundary).count()
    }

    pub fn coords(&self, node: usize) -> [f64; 2] {
        let i = node % self.shape[0];
        let j = node / self.shape[0];
        [self.origin[0] + i as f64 * self.h, self.origin[1] + j as f64 * self.h]
    }

    /// Coordinates truncated to the grid dimension.
    pub fn point(&self, node: usize) -> Vec<f64> {
        self.coords(node)[..self.dim].to_vec()
    }

    pub fn arm_pairs(&self, k: usize) -> &[ArmPair] {
        let nd = self.directions.len();
        &self.arms[k * nd..(k + 1) * nd]
    }

    /// Euclidean length of direction `j` in lattice units.
    pub fn direction_len(&self, j: usize) -> f64 {
        let d = self.directions[j];
        ((d[0] * d[0] + d[1] * d[1]) as f64).sqrt()
    }

    /// Index of the axis frame (the frame containing direction `(1, 0)`).
    pub fn axis_frame(&self) -> usize {
        let j = self.directions.iter().position(|d| *d == [1, 0]).expect("axis direction");
        self.frames.iter().position(|f| f.contains(&j)).expect("axis frame")
    }

    /// Distance to the boundary at every node (0 outside the domain).
    pub fn boundary_distance(&self) -> &[f64] {
        self.boundary_distance.get_or_init(|| {
            (0..self.n_nodes())
                .map(|n| {
                    if self.mask[n] == NodeKind::Exterior {
                        return 0.0;
                    }
                    let x = self.point(n);
                    if !self.domain.contains(&x) {
                        return 0.0;
                    }
                    self.domain.distance_probe(&x).map(|p| p.d).unwrap_or(0.0)
                })
                .collect()
        })
    }
}

/// Nodal values on a grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    /// Set when the field came from a divergent iteration and may hold huge values.
    pub diverged: bool,
    /// Values at the boundary crossings of cut arms, parallel to `grid.arms`. Without it the
    /// value at a crossing is read from the arm's end node.
    pub trace: Option<Arc<Vec<[f64; 2]>>>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.grid.shape == other.grid.shape
            && self.grid.h == other.grid.h
            && self.grid.origin == other.grid.origin
            && self.values == other.values
            && self.diverged == other.diverged
    }
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::from_values(grid, vec![0.0; grid.n_nodes()])
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        Self::from_values(grid, vec![c; grid.n_nodes()])
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.n_nodes());
        ScalarField { grid: grid.clone(), values, diverged: false, trace: None }
    }

    /// Evaluates `f` at interior and boundary nodes (exterior nodes get 0) and at the
    /// boundary crossings of cut arms.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.n_nodes())
            .map(|n| if grid.mask[n] == NodeKind::Exterior { 0.0 } else { f(&grid.point(n)) })
            .collect();
        let nd = grid.directions.len();
        let mut trace = vec![[f64::NAN; 2]; grid.arms.len()];
        let mut any_cut = false;
        for (i, p) in grid.arms.iter().enumerate() {
            let x = grid.coords(grid.interior[i / nd] as usize);
            let d = grid.directions[i % nd];
            for (slot, (arm, s)) in [(p.plus, 1.0), (p.minus, -1.0)].into_iter().enumerate() {
                if arm.t < 1.0 {
                    any_cut = true;
                    let y = [x[0] + s * arm.t * grid.h * d[0] as f64, x[1] + s * arm.t * grid.h * d[1] as f64];
                    trace[i][slot] = f(&y[..grid.dim]);
                }
            }
        }
        ScalarField { grid: grid.clone(), values, diverged: false, trace: any_cut.then(|| Arc::new(trace)) }
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.shape == other.grid.shape && self.grid.h == other.grid.h
    }

    /// Max of `|u|` over interior and boundary nodes.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.grid.mask)
            .filter(|(_, k)| **k != NodeKind::Exterior)
            .fold(0.0f64, |m, (v, _)| m.max(v.abs()))
    }

    pub fn interior_sup_norm(&self) -> f64 {
        self.grid.interior.iter().fold(0.0f64, |m, &n| m.max(self.values[n as usize].abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
            diverged: self.diverged,
            trace: self.trace.as_ref().map(|t| Arc::new(t.iter().map(|p| [p[0] * s, p[1] * s]).collect())),
        }
    }

    /// Divides by the sup-norm.
    pub fn normalized(&self) -> Self {
        let m = self.sup_norm();
        let mut out = self.scaled(if m > 0.0 { 1.0 / m } else { 1.0 });
        out.diverged = false;
        out
    }

    /// Max of `|u - v|` over interior and boundary nodes.
    pub fn max_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.grid.mask)
            .filter(|(_, k)| **k != NodeKind::Exterior)
            .fold(0.0f64, |m, ((a, b), _)| m.max((a - b).abs()))
    }

    /// `x[,y],value` rows for interior and boundary nodes.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(if self.grid.dim == 1 { "x,value\n" } else { "x,y,value\n" });
        for n in 0..self.grid.n_nodes() {
            if self.grid.mask[n] == NodeKind::Exterior {
                continue;
            }
            let c = self.grid.coords(n);
            if self.grid.dim == 1 {
                let _ = writeln!(s, "{:.17e},{:.17e}", c[0], self.values[n]);
            } else {
                let _ = writeln!(s, "{:.17e},{:.17e},{:.17e}", c[0], c[1], self.values[n]);
            }
        }
        s
    }

    /// Whitespace-separated columns with blank lines between lattice rows (gnuplot `splot` layout).
    /// Exterior nodes are written as `NaN` so the surface keeps its lattice structure.
    pub fn to_gnuplot(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        for j in 0..g.shape[1] {
            for i in 0..g.shape[0] {
                let n = j * g.shape[0] + i;
                let c = g.coords(n);
                let v = if g.mask[n] == NodeKind::Exterior { f64::NAN } else { self.values[n] };
                if g.dim == 1 {
                    if g.mask[n] != NodeKind::Exterior {
                        let _ = writeln!(s, "{:.17e} {:.17e}", c[0], v);
                    }
                } else {
                    let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", c[0], c[1], v);
                }
            }
            if g.dim == 2 {
                s.push('\n');
            }
        }
        s
    }

    /// Binary dump: `u64` node counts per axis, `f64` spacing, then row-major `f64` values,
    /// all little-endian.
    pub fn to_binary(&self) -> Vec<u8> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(24 + 8 * self.values.len());
        out.extend_from_slice(&(g.shape[0] as u64).to_le_bytes());
        out.extend_from_slice(&(g.shape[1] as u64).to_le_bytes());
        out.extend_from_slice(&g.h.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_binary())?;
        Ok(())
    }

    pub fn write_gnuplot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_gnuplot())?;
        Ok(())
    }
}

/// Contents of a binary field dump.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryField {
    pub shape: [usize; 2],
    pub h: f64,
    pub values: Vec<f64>,
}

pub fn read_binary(mut r: impl Read) -> Result<BinaryField> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 24 || (buf.len() - 24) % 8 != 0 {
        return Err(Error::InvalidInput("truncated binary field".into()));
    }
    let word = |i: usize| -> [u8; 8] { buf[8 * i..8 * i + 8].try_into().expect("8 bytes") };
    let shape = [u64::from_le_bytes(word(0)) as usize, u64::from_le_bytes(word(1)) as usize];
    let h = f64::from_le_bytes(word(2));
    let n = (buf.len() - 24) / 8;
    if n != shape[0] * shape[1] {
        return Err(Error::InvalidInput(format!("binary field holds {n} values, header says {shape:?}")));
    }
    let values = (0..n).map(|i| f64::from_le_bytes(word(3 + i))).collect();
    Ok(BinaryField { shape, h, values })
}
