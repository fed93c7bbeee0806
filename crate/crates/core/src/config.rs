//! Run configuration read from TOML. Every block is optional; defaults are filled in by
//! [`parse_config`] so a resolved [`RunConfig`] always shows the values actually used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DomainSpec;
use crate::operator::{OperatorSpec, Sign};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorBlock {
    pub a: f64,
    #[serde(rename = "A")]
    pub upper: f64,
    pub alpha: f64,
    pub sign: Sign,
    /// Filled in from `h` when absent: `max(h, 1e-6)` for `alpha < 0`, else 0.
    pub eps_reg: Option<f64>,
}

impl Default for OperatorBlock {
    fn default() -> Self {
        OperatorBlock { a: 1.0, upper: 1.0, alpha: 0.0, sign: Sign::Plus, eps_reg: None }
    }
}

impl OperatorBlock {
    /// The operator with `eps_reg` resolved.
    pub fn spec(&self) -> OperatorSpec {
        OperatorSpec { a: self.a, upper: self.upper, alpha: self.alpha, sign: self.sign, eps_reg: self.eps_reg.unwrap_or(0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub h: f64,
    /// Largest sup-norm of the stencil directions; 1 for `a == A`, else 2 when absent.
    pub stencil_width: Option<usize>,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock { h: 1.0 / 128.0, stencil_width: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldFormat {
    Csv,
    Binary,
    Gnuplot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub formats: Vec<FieldFormat>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { formats: vec![FieldFormat::Csv, FieldFormat::Binary, FieldFormat::Gnuplot] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenParams {
    pub bracket_tol: f64,
    pub tol_rel: f64,
    pub threshold_factor: f64,
    pub n_max: usize,
}

impl Default for EigenParams {
    fn default() -> Self {
        EigenParams { bracket_tol: 0.01, tol_rel: 1e-6, threshold_factor: 1e4, n_max: 100_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveParams {
    pub lambda: f64,
    /// Constant right-hand side.
    pub f: f64,
    /// Constant boundary value.
    pub boundary: f64,
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams { lambda: 0.0, f: -1.0, boundary: 0.0, tol: 1e-9, max_steps: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadialParams {
    pub tol: f64,
    /// Points of the written profile.
    pub samples: usize,
}

impl Default for RadialParams {
    fn default() -> Self {
        RadialParams { tol: 1e-10, samples: 401 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyParams {
    pub samples: usize,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams { samples: 100_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarrierKind {
    Boundary,
    Global,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierConfig {
    pub which: BarrierKind,
    pub gamma: f64,
    pub delta: f64,
    pub beta: f64,
    pub random_per_node: usize,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        BarrierConfig { which: BarrierKind::Both, gamma: 0.5, delta: 0.1, beta: -1.0, random_per_node: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareParams {
    pub lambda: f64,
    /// Constant right-hand side of the supersolution.
    pub f: f64,
    /// Constant right-hand side of the subsolution.
    pub g: f64,
    /// Tolerance of the comparison check.
    pub tol: f64,
    /// Residual target of the two solves.
    pub solve_tol: f64,
    pub max_steps: usize,
}

impl Default for CompareParams {
    fn default() -> Self {
        CompareParams { lambda: 0.0, f: -1.0, g: -0.5, tol: 1e-7, solve_tol: 1e-10, max_steps: 500 }
    }
}

/// Which computation to run, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CommandBlock {
    Eigen(EigenParams),
    Solve(SolveParams),
    Radial(RadialParams),
    VerifyOperator(VerifyParams),
    Barrier(BarrierConfig),
    Compare(CompareParams),
}

impl CommandBlock {
    pub fn name(&self) -> &'static str {
        match self {
            CommandBlock::Eigen(_) => "eigen",
            CommandBlock::Solve(_) => "solve",
            CommandBlock::Radial(_) => "radial",
            CommandBlock::VerifyOperator(_) => "verify-operator",
            CommandBlock::Barrier(_) => "barrier",
            CommandBlock::Compare(_) => "compare",
        }
    }

    /// The command with default parameters, by CLI name.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "eigen" => CommandBlock::Eigen(EigenParams::default()),
            "solve" => CommandBlock::Solve(SolveParams::default()),
            "radial" => CommandBlock::Radial(RadialParams::default()),
            "verify-operator" => CommandBlock::VerifyOperator(VerifyParams::default()),
            "barrier" => CommandBlock::Barrier(BarrierConfig::default()),
            "compare" => CommandBlock::Compare(CompareParams::default()),
            other => return Err(Error::Config(format!("unknown command `{other}`"))),
        })
    }
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandBlock,
    pub operator: OperatorBlock,
    pub domain: DomainSpec,
    pub grid: GridBlock,
    pub output: OutputBlock,
    pub seed: u64,
}

impl RunConfig {
    pub fn op(&self) -> OperatorSpec {
        self.operator.spec()
    }

    pub fn stencil_width(&self) -> usize {
        self.grid.stencil_width.unwrap_or(if self.operator.a == self.operator.upper { 1 } else { 2 })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    command: Option<CommandBlock>,
    #[serde(default)]
    operator: OperatorBlock,
    domain: Option<DomainSpec>,
    #[serde(default)]
    grid: GridBlock,
    #[serde(default)]
    output: OutputBlock,
    #[serde(default)]
    seed: u64,
}

/// Parses and validates a config that names its command in a `[command]` table.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_for(text, None)
}

/// Parses a config for the CLI command `name`; an absent `[command]` table means that command
/// with default parameters.
pub fn parse_config_for(text: &str, name: Option<&str>) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    let command = match (raw.command, name) {
        (Some(c), Some(n)) if c.name() != n => {
            return Err(Error::Config(format!("config is for command `{}` but `{n}` was requested", c.name())));
        }
        (Some(c), _) => c,
        (None, Some(n)) => CommandBlock::default_for(n)?,
        (None, None) => return Err(Error::Config("missing [command] table".into())),
    };
    let mut cfg = RunConfig {
        command,
        operator: raw.operator,
        domain: raw.domain.unwrap_or_else(|| DomainSpec::interval(-1.0, 1.0)),
        grid: raw.grid,
        output: raw.output,
        seed: raw.seed,
    };
    if cfg.operator.eps_reg.is_none() {
        cfg.operator.eps_reg = Some(if cfg.operator.alpha < 0.0 { cfg.grid.h.max(1e-6) } else { 0.0 });
    }
    cfg.grid.stencil_width = Some(cfg.stencil_width());
    validate(&cfg).map_err(|(section, key, msg)| {
        let at = locate(text, section, key).map(|(l, c)| format!(" (line {l}, column {c})")).unwrap_or_default();
        Error::Config(format!("{section}.{key}{at}: {msg}"))
    })?;
    Ok(cfg)
}

type Invalid = (&'static str, &'static str, String);

fn check(ok: bool, section: &'static str, key: &'static str, msg: impl FnOnce() -> String) -> std::result::Result<(), Invalid> {
    if ok {
        Ok(())
    } else {
        Err((section, key, msg()))
    }
}

fn validate(cfg: &RunConfig) -> std::result::Result<(), Invalid> {
    let o = &cfg.operator;
    check(o.alpha.is_finite() && o.alpha > -1.0, "operator", "alpha", || format!("alpha = {} must exceed -1", o.alpha))?;
    check(o.a.is_finite() && o.a > 0.0, "operator", "a", || format!("a = {} must be positive", o.a))?;
    check(o.upper.is_finite() && o.a <= o.upper, "operator", "A", || format!("need a <= A (a = {}, A = {})", o.a, o.upper))?;
    cfg.op().validate().map_err(|e| ("operator", "eps_reg", e.to_string()))?;
    cfg.domain.validate().map_err(|e| ("domain", "kind", e.to_string()))?;
    let h = cfg.grid.h;
    check(h.is_finite() && h > 0.0, "grid", "h", || format!("h = {h} must be positive"))?;
    let w = cfg.stencil_width();
    check((1..=4).contains(&w), "grid", "stencil_width", || format!("stencil_width = {w} must lie in 1..=4"))?;
    check(!cfg.output.formats.is_empty(), "output", "formats", || "at least one field format is needed".into())?;
    let pos = |v: f64| v.is_finite() && v > 0.0;
    match cfg.command {
        CommandBlock::Eigen(p) => {
            check(pos(p.bracket_tol), "command", "bracket_tol", || format!("bracket_tol = {} must be positive", p.bracket_tol))?;
            check(pos(p.tol_rel), "command", "tol_rel", || format!("tol_rel = {} must be positive", p.tol_rel))?;
            check(p.threshold_factor > 1.0, "command", "threshold_factor", || "threshold_factor must exceed 1".into())?;
            check(p.n_max > 0, "command", "n_max", || "n_max must be positive".into())?;
        }
        CommandBlock::Solve(p) => {
            check(p.lambda.is_finite(), "command", "lambda", || "lambda must be finite".into())?;
            check(p.f.is_finite() && p.boundary.is_finite(), "command", "f", || "data must be finite".into())?;
            check(pos(p.tol), "command", "tol", || format!("tol = {} must be positive", p.tol))?;
            check(p.max_steps > 0, "command", "max_steps", || "max_steps must be positive".into())?;
        }
        CommandBlock::Radial(p) => {
            check(matches!(cfg.domain, DomainSpec::Ball { .. }), "domain", "kind", || "radial shooting needs a ball".into())?;
            check(pos(p.tol), "command", "tol", || format!("tol = {} must be positive", p.tol))?;
            check(p.samples >= 2, "command", "samples", || "samples must be at least 2".into())?;
        }
        CommandBlock::VerifyOperator(p) => {
            check(p.samples > 0, "command", "samples", || "samples must be positive".into())?;
        }
        CommandBlock::Barrier(p) => {
            check(p.gamma > 0.0 && p.gamma < 1.0, "command", "gamma", || format!("gamma = {} must lie in (0, 1)", p.gamma))?;
            check(pos(p.delta), "command", "delta", || format!("delta = {} must be positive", p.delta))?;
            check(p.beta.is_finite() && p.beta < 0.0, "command", "beta", || format!("beta = {} must be negative", p.beta))?;
            check(p.random_per_node > 0, "command", "random_per_node", || "random_per_node must be positive".into())?;
        }
        CommandBlock::Compare(p) => {
            check(p.lambda.is_finite() && p.lambda >= 0.0, "command", "lambda", || "lambda must be nonnegative".into())?;
            check(p.f.is_finite() && p.g.is_finite(), "command", "f", || "data must be finite".into())?;
            check(p.tol.is_finite() && p.tol >= 0.0, "command", "tol", || "tol must be nonnegative".into())?;
            check(pos(p.solve_tol), "command", "solve_tol", || "solve_tol must be positive".into())?;
            check(p.max_steps > 0, "command", "max_steps", || "max_steps must be positive".into())?;
        }
    }
    Ok(())
}

/// 1-based line and column of `key = ...` inside `[section]`.
fn locate(text: &str, section: &str, key: &str) -> Option<(usize, usize)> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some((i + 1, line.len() - line.trim_start().len() + 1));
                }
            }
        }
    }
    None
}
