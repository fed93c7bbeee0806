//! The operator family `F(p, X) = |p|^alpha M±_{a,A}(X)` and its structural checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `|x|^alpha x`, continued by 0 at `x = 0` (plain `powf` gives `inf * 0` there when `alpha < 0`).
pub fn signed_pow(x: f64, alpha: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.abs().powf(alpha) * x
    }
}

/// Which Pucci extremal operator is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn flipped(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// Parameters of `F(p, X) = (|p|^2 + eps_reg^2)^{alpha/2} M±_{a,A}(X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    /// Lower ellipticity constant.
    pub a: f64,
    /// Upper ellipticity constant.
    #[serde(rename = "A")]
    pub upper: f64,
    /// Homogeneity exponent in the gradient slot.
    pub alpha: f64,
    pub sign: Sign,
    /// Gradient regularization length; may be zero only for `alpha >= 0`.
    pub eps_reg: f64,
}

impl OperatorSpec {
    pub fn new(a: f64, upper: f64, alpha: f64, sign: Sign, eps_reg: f64) -> Result<Self> {
        let op = OperatorSpec { a, upper, alpha, sign, eps_reg };
        op.validate()?;
        Ok(op)
    }

    /// Pucci operator with `alpha = 0` and no regularization.
    pub fn pucci(a: f64, upper: f64, sign: Sign) -> Self {
        OperatorSpec { a, upper, alpha: 0.0, sign, eps_reg: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.upper.is_finite() && self.alpha.is_finite()) {
            return Err(Error::InvalidInput("operator parameters must be finite".into()));
        }
        if !(self.a > 0.0) {
            return Err(Error::InvalidInput(format!("ellipticity a = {} must be positive", self.a)));
        }
        if self.a > self.upper {
            return Err(Error::InvalidInput(format!(
                "ellipticity constants must satisfy a <= A (a = {}, A = {})",
                self.a, self.upper
            )));
        }
        if !(self.alpha > -1.0) {
            return Err(Error::InvalidInput(format!(
                "homogeneity exponent alpha = {} must exceed -1",
                self.alpha
            )));
        }
        if !(self.eps_reg >= 0.0) || !self.eps_reg.is_finite() {
            return Err(Error::InvalidInput(format!("eps_reg = {} must be >= 0", self.eps_reg)));
        }
        if self.alpha < 0.0 && self.eps_reg == 0.0 {
            return Err(Error::InvalidInput(format!(
                "alpha = {} < 0 needs eps_reg > 0 to regularize zero gradients",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn with_eps_reg(mut self, eps_reg: f64) -> Self {
        self.eps_reg = eps_reg;
        self
    }

    /// Weight applied to a positive Hessian eigenvalue.
    pub fn positive_weight(&self) -> f64 {
        match self.sign {
            Sign::Plus => self.upper,
            Sign::Minus => self.a,
        }
    }

    /// Weight applied to a negative Hessian eigenvalue.
    pub fn negative_weight(&self) -> f64 {
        match self.sign {
            Sign::Plus => self.a,
            Sign::Minus => self.upper,
        }
    }

    /// Weighted eigenvalue contribution `A e+ - a e-` (plus) or `a e+ - A e-` (minus).
    #[inline]
    pub fn weigh(&self, e: f64) -> f64 {
        if e > 0.0 {
            self.positive_weight() * e
        } else {
            self.negative_weight() * e
        }
    }

    /// Gradient factor `(|p|^2 + eps^2)^{alpha/2}` from the squared gradient norm.
    pub fn gradient_factor(&self, p_norm_sq: f64) -> Result<f64> {
        if self.alpha == 0.0 {
            return Ok(1.0);
        }
        let s = p_norm_sq + self.eps_reg * self.eps_reg;
        if s == 0.0 {
            if self.alpha < 0.0 {
                return Err(Error::Singularity { alpha: self.alpha });
            }
            return Ok(0.0);
        }
        Ok(s.powf(0.5 * self.alpha))
    }

    /// `F` evaluated with the unregularized weight `|p|^alpha`; `p` must be nonzero when `alpha < 0`.
    pub fn eval_exact(&self, p: &[f64], x: &SymmetricMatrix) -> Result<f64> {
        check_finite(p)?;
        let pn2: f64 = p.iter().map(|v| v * v).sum();
        let w = if self.alpha == 0.0 {
            1.0
        } else if pn2 == 0.0 {
            if self.alpha < 0.0 {
                return Err(Error::Singularity { alpha: self.alpha });
            }
            0.0
        } else {
            pn2.powf(0.5 * self.alpha)
        };
        Ok(w * pucci_extremal(x, self.a, self.upper, self.sign)?)
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("non-finite entries".into()))
    }
}

/// Dense symmetric matrix; writes are mirrored so symmetry holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        SymmetricMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from the upper triangle of a row-major square array.
    pub fn from_upper(n: usize, rows: &[f64]) -> Self {
        assert_eq!(rows.len(), n * n);
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, rows[i * n + j]);
            }
        }
        m
    }

    /// `sum_i c_i v_i v_i^T`.
    pub fn from_rank_one_sum(n: usize, terms: &[(f64, &[f64])]) -> Self {
        let mut m = Self::zeros(n);
        for &(c, v) in terms {
            for i in 0..n {
                for j in i..n {
                    let cur = m.get(i, j);
                    m.set(i, j, cur + c * v[i] * v[j]);
                }
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymmetricMatrix { n: self.n, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &SymmetricMatrix) -> Self {
        assert_eq!(self.n, other.n);
        SymmetricMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(x, y)| x + y).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Eigenvalues in nondecreasing order. Closed form for `n <= 2`, cyclic Jacobi otherwise.
    pub fn eigenvalues(&self) -> Vec<f64> {
        match self.n {
            0 => Vec::new(),
            1 => vec![self.data[0]],
            2 => {
                let (a, b, c) = (self.get(0, 0), self.get(0, 1), self.get(1, 1));
                let mean = 0.5 * (a + c);
                let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
                vec![mean - rad, mean + rad]
            }
            _ => self.eigenvalues_jacobi(),
        }
    }

    /// Cyclic Jacobi sweeps until the off-diagonal mass drops below `1e-12` of the total.
    pub fn eigenvalues_jacobi(&self) -> Vec<f64> {
        let n = self.n;
        let mut m = self.data.clone();
        let total: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += m[i * n + j] * m[i * n + j];
                }
            }
            if off.sqrt() <= 1e-12 * total.max(f64::MIN_POSITIVE) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = m[p * n + p];
                    let aqq = m[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = m[k * n + p];
                        let akq = m[k * n + q];
                        m[k * n + p] = c * akp - s * akq;
                        m[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = m[p * n + k];
                        let aqk = m[q * n + k];
                        m[p * n + k] = c * apk - s * aqk;
                        m[q * n + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut e: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
        e.sort_by(|x, y| x.total_cmp(y));
        e
    }
}

/// Pucci extremal operator from a list of eigenvalues.
pub fn pucci_from_eigenvalues(eigs: impl IntoIterator<Item = f64>, a: f64, upper: f64, sign: Sign) -> f64 {
    let (wp, wn) = match sign {
        Sign::Plus => (upper, a),
        Sign::Minus => (a, upper),
    };
    eigs.into_iter().map(|e| if e > 0.0 { wp * e } else { wn * e }).sum()
}

/// `M+(X) = a sum_{e<0} e + A sum_{e>0} e`, `M-(X) = A sum_{e<0} e + a sum_{e>0} e`.
pub fn pucci_extremal(x: &SymmetricMatrix, a: f64, upper: f64, sign: Sign) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if !(a > 0.0 && a <= upper) {
        return Err(Error::InvalidInput(format!("need 0 < a <= A, got a = {a}, A = {upper}")));
    }
    Ok(pucci_from_eigenvalues(x.eigenvalues(), a, upper, sign))
}

/// `F(p, X) = (|p|^2 + eps^2)^{alpha/2} M±(X)`.
#[allow(non_snake_case)]
pub fn eval_F(op: &OperatorSpec, p: &[f64], x: &SymmetricMatrix) -> Result<f64> {
    check_finite(p)?;
    let pn2: f64 = p.iter().map(|v| v * v).sum();
    let w = op.gradient_factor(pn2)?;
    Ok(w * pucci_extremal(x, op.a, op.upper, op.sign)?)
}

/// Spec of `G(p, X) = -F(p, -X)`: the Pucci sign flips, constants are unchanged.
pub fn reflect_operator(op: &OperatorSpec) -> OperatorSpec {
    OperatorSpec { sign: op.sign.flipped(), ..*op }
}

/// Largest relative residuals found by [`verify_operator_axioms`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub n_samples: usize,
    pub dim: usize,
    /// `|F(tp, mu X) - |t|^alpha mu F(p, X)|`, relative.
    pub homogeneity: f64,
    /// Violation of `a|p|^alpha tr N <= F(p, X+N) - F(p, X) <= A|p|^alpha tr N`, relative.
    pub sandwich: f64,
    /// Violation of `F(p, X) <= F(p, X+N)` for `N >= 0`, relative.
    pub ellipticity: f64,
}

impl AxiomReport {
    pub fn max_residual(&self) -> f64 {
        self.homogeneity.max(self.sandwich).max(self.ellipticity)
    }
}

/// Random-draw check of homogeneity, the ellipticity sandwich and degenerate ellipticity
/// for the Pucci family in dimension 3.
pub fn verify_operator_axioms(op: &OperatorSpec, n_samples: usize, rng_seed: u64) -> Result<AxiomReport> {
    let op = *op;
    verify_axioms_with(&op, 3, n_samples, rng_seed, |p, x| op.eval_exact(p, x))
}

/// Same as [`verify_operator_axioms`] for an arbitrary evaluator claiming the constants of `op`.
pub fn verify_axioms_with<E>(
    op: &OperatorSpec,
    dim: usize,
    n_samples: usize,
    rng_seed: u64,
    eval: E,
) -> Result<AxiomReport>
where
    E: Fn(&[f64], &SymmetricMatrix) -> Result<f64>,
{
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut report = AxiomReport { n_samples, dim, homogeneity: 0.0, sandwich: 0.0, ellipticity: 0.0 };
    let tiny = f64::MIN_POSITIVE;
    for _ in 0..n_samples {
        let p = sample_annulus(&mut rng, dim, 0.1, 2.0);
        let x = sample_symmetric(&mut rng, dim);
        let nmat = sample_psd(&mut rng, dim);
        let t = rng.random_range(0.1..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mu = rng.random_range(0.1..2.0);

        let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pa = pn.powf(op.alpha);
        let abs_eigs: f64 = x.eigenvalues().iter().map(|e| e.abs()).sum();
        let tr_n = nmat.trace();

        let fx = eval(&p, &x)?;
        let tp: Vec<f64> = p.iter().map(|v| t * v).collect();
        let lhs = eval(&tp, &x.scaled(mu))?;
        let rhs = t.abs().powf(op.alpha) * mu * fx;
        let scale = t.abs().powf(op.alpha) * mu * pa * op.upper * abs_eigs + tiny;
        report.homogeneity = report.homogeneity.max((lhs - rhs).abs() / scale);

        let fxn = eval(&p, &x.add(&nmat))?;
        let diff = fxn - fx;
        let lower = op.a * pa * tr_n;
        let upper = op.upper * pa * tr_n;
        let scale = pa * op.upper * (abs_eigs + tr_n) + tiny;
        let sandwich = (lower - diff).max(diff - upper).max(0.0);
        report.sandwich = report.sandwich.max(sandwich / scale);
        report.ellipticity = report.ellipticity.max((fx - fxn).max(0.0) / scale);
    }
    Ok(report)
}

fn sample_annulus(rng: &mut impl Rng, dim: usize, r0: f64, r1: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            let r = rng.random_range(r0..r1);
            return v.iter().map(|x| x * r / n).collect();
        }
    }
}

fn sample_symmetric(rng: &mut impl Rng, dim: usize) -> SymmetricMatrix {
    let mut m = SymmetricMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            m.set(i, j, rng.random_range(-1.0..1.0));
        }
    }
    m
}

/// `Q^T D Q` with `D >= 0` diagonal and `Q` orthogonal.
fn sample_psd(rng: &mut impl Rng, dim: usize) -> SymmetricMatrix {
    let q = random_orthogonal(rng, dim);
    let d: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
    let cols: Vec<&[f64]> = q.iter().map(|c| c.as_slice()).collect();
    let terms: Vec<(f64, &[f64])> = d.iter().copied().zip(cols).collect();
    SymmetricMatrix::from_rank_one_sum(dim, &terms)
}

fn random_orthogonal(rng: &mut impl Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}
