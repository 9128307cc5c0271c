//! Run configuration: a flat key = value file (TOML scalar syntax), strictly
//! validated with unknown keys rejected.

use std::path::{Path, PathBuf};

use crate::continuation::StepControl;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProblemKind {
    Mcbvp,
    Builtin(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideChoice {
    Plus,
    Minus,
    Both,
}

impl SideChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            SideChoice::Plus => "plus",
            SideChoice::Minus => "minus",
            SideChoice::Both => "both",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemKind,
    // Discretized boundary value problem parameters.
    pub mu: f64,
    pub q: f64,
    pub delta: f64,
    pub m: usize,
    /// Base parameter level; defaults to the problem's own.
    pub base_lambda: Option<f64>,
    pub side: SideChoice,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub grow: f64,
    pub shrink: f64,
    pub grow_after: usize,
    pub max_steps: usize,
    pub return_separation: f64,
    pub boundary_threshold: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub norm_cap: f64,
    pub grad_blowup_threshold: f64,
    pub out: Option<PathBuf>,
    pub verify: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ctl = StepControl::default();
        Self {
            problem: ProblemKind::Mcbvp,
            mu: 12.0,
            q: 2.0,
            delta: 0.1,
            m: 200,
            base_lambda: None,
            side: SideChoice::Both,
            h_init: ctl.h_init,
            h_min: ctl.h_min,
            h_max: ctl.h_max,
            newton_tol: ctl.newton_tol,
            newton_max_iter: ctl.newton_max_iter,
            grow: ctl.grow,
            shrink: ctl.shrink,
            grow_after: ctl.grow_after,
            max_steps: ctl.max_steps,
            return_separation: ctl.return_separation,
            boundary_threshold: 1e-3,
            lambda_min: -5.0,
            lambda_max: 5.0,
            norm_cap: 1e3,
            grad_blowup_threshold: 1e3,
            out: None,
            verify: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn step_control(&self) -> StepControl {
        StepControl {
            h_init: self.h_init,
            h_min: self.h_min,
            h_max: self.h_max,
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            grow: self.grow,
            shrink: self.shrink,
            grow_after: self.grow_after,
            max_steps: self.max_steps,
            return_separation: self.return_separation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ProblemKind::Builtin(name) = &self.problem {
            crate::builtins::by_name(name)?;
        }
        if self.problem == ProblemKind::Mcbvp {
            // Constructing the mesh runs the full parameter validation,
            // including mu against the discrete principal eigenvalue.
            crate::mcbvp::MeshProblem::new(self.m, self.mu, self.q, self.delta)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.lambda_min < self.lambda_max) {
            return Err(Error::Config(format!(
                "lambda window [{}, {}] is empty",
                self.lambda_min, self.lambda_max
            )));
        }
        if !(self.norm_cap > 0.0) {
            return Err(Error::Config("norm_cap must be positive".into()));
        }
        if !(self.boundary_threshold > 0.0) {
            return Err(Error::Config("boundary_threshold must be positive".into()));
        }
        self.step_control()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

fn expect_f64(key: &str, value: &toml::Value) -> Result<f64> {
    match value {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("key '{key}' must be a number"))),
    }
}

fn expect_usize(key: &str, value: &toml::Value) -> Result<usize> {
    match value {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(Error::Config(format!(
            "key '{key}' must be a non-negative integer"
        ))),
    }
}

fn expect_str<'v>(key: &str, value: &'v toml::Value) -> Result<&'v str> {
    value
        .as_str()
        .ok_or_else(|| Error::Config(format!("key '{key}' must be a string")))
}

fn expect_bool(key: &str, value: &toml::Value) -> Result<bool> {
    value
        .as_bool()
        .ok_or_else(|| Error::Config(format!("key '{key}' must be a boolean")))
}

/// Parses a config file. Every key is optional except `problem`; unknown
/// keys are rejected.
pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("malformed config: {e}")))?;
    let mut cfg = RunConfig::default();
    let mut saw_problem = false;

    for (key, value) in &table {
        match key.as_str() {
            "problem" => {
                saw_problem = true;
                let s = expect_str(key, value)?;
                cfg.problem = if s == "mcbvp" {
                    ProblemKind::Mcbvp
                } else if let Some(name) = s.strip_prefix("builtin:") {
                    ProblemKind::Builtin(name.to_string())
                } else {
                    return Err(Error::Config(format!(
                        "problem must be 'mcbvp' or 'builtin:<name>', got '{s}'"
                    )));
                };
            }
            "mu" => cfg.mu = expect_f64(key, value)?,
            "q" => cfg.q = expect_f64(key, value)?,
            "delta" => cfg.delta = expect_f64(key, value)?,
            "m" => cfg.m = expect_usize(key, value)?,
            "base_lambda" => cfg.base_lambda = Some(expect_f64(key, value)?),
            "side" => {
                cfg.side = match expect_str(key, value)? {
                    "plus" => SideChoice::Plus,
                    "minus" => SideChoice::Minus,
                    "both" => SideChoice::Both,
                    other => {
                        return Err(Error::Config(format!(
                            "side must be plus, minus, or both; got '{other}'"
                        )))
                    }
                };
            }
            "h_init" => cfg.h_init = expect_f64(key, value)?,
            "h_min" => cfg.h_min = expect_f64(key, value)?,
            "h_max" => cfg.h_max = expect_f64(key, value)?,
            "newton_tol" => cfg.newton_tol = expect_f64(key, value)?,
            "newton_max_iter" => cfg.newton_max_iter = expect_usize(key, value)?,
            "grow" => cfg.grow = expect_f64(key, value)?,
            "shrink" => cfg.shrink = expect_f64(key, value)?,
            "grow_after" => cfg.grow_after = expect_usize(key, value)?,
            "max_steps" => cfg.max_steps = expect_usize(key, value)?,
            "return_separation" => cfg.return_separation = expect_f64(key, value)?,
            "boundary_threshold" => cfg.boundary_threshold = expect_f64(key, value)?,
            "lambda_min" => cfg.lambda_min = expect_f64(key, value)?,
            "lambda_max" => cfg.lambda_max = expect_f64(key, value)?,
            "norm_cap" => cfg.norm_cap = expect_f64(key, value)?,
            "grad_blowup_threshold" => cfg.grad_blowup_threshold = expect_f64(key, value)?,
            "out" => cfg.out = Some(PathBuf::from(expect_str(key, value)?)),
            "verify" => cfg.verify = expect_bool(key, value)?,
            "seed" => cfg.seed = expect_usize(key, value)? as u64,
            unknown => {
                return Err(Error::Config(format!("unknown key '{unknown}'")));
            }
        }
    }
    if !saw_problem {
        return Err(Error::Config("missing required key 'problem'".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = parse("problem = \"builtin:fold\"\n").unwrap();
        assert_eq!(cfg.problem, ProblemKind::Builtin("fold".into()));
        assert_eq!(cfg.side, SideChoice::Both);
    }

    #[test]
    fn rejects_unknown_key() {
        let err = parse("problem = \"mcbvp\"\nstep = 3\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn rejects_invalid_exponent() {
        let err = parse("problem = \"mcbvp\"\nq = 0.5\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn rejects_missing_problem() {
        assert!(parse("mu = 12.0\n").is_err());
    }

    #[test]
    fn rejects_unknown_builtin() {
        assert!(parse("problem = \"builtin:torus\"\n").is_err());
    }

    #[test]
    fn full_config_round_trip() {
        let text = r#"
problem = "mcbvp"
mu = 15.0
q = 3
delta = 0.2
m = 100
side = "minus"
h_init = 0.01
lambda_min = -2.0
lambda_max = 2.0
norm_cap = 500.0
verify = true
seed = 42
"#;
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.m, 100);
        assert_eq!(cfg.q, 3.0);
        assert_eq!(cfg.side, SideChoice::Minus);
        assert!(cfg.verify);
        assert_eq!(cfg.seed, 42);
    }
}
