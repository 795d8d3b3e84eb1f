//! JSON run configuration: problem description (the `g` tree, the `f`
//! descriptor, the loss), risk-simulation settings, and per-subcommand
//! payloads. Command-line flags override file values.

use anyhow::{anyhow, bail, Context, Result};
use minimax_core::nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use minimax_core::equivariant::EquivariantMap;
use minimax_core::estimator::EpsRule;
use minimax_core::experiments::{Directions, Perturbations};
use minimax_core::risk::{EtaRule, RStrategy, RiskConfig};
use minimax_core::transform::{Loss, LossSpec, Transform, TransformSpec};

/// Raw file schema. Unknown keys are rejected so that typos surface as
/// config errors instead of silently using defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Equivariant map tree, e.g. `{"kind":"max","children":[...]}`.
    pub g: Option<Value>,
    /// Ambient dimension override (otherwise inferred from the tree).
    #[serde(default)]
    pub dim: Option<usize>,
    /// Outer transform descriptor, e.g. `{"kind":"clamp","lo":0,"hi":1}`.
    pub f: Option<TransformSpec>,
    /// Loss descriptor, e.g. `{"kind":"power_loss","p":2,"trunc":10}`.
    pub loss: Option<LossSpec>,
    #[serde(default)]
    pub risk: RiskSettings,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub eps_rule: Option<EpsRule>,
    #[serde(default)]
    pub curve: Option<CurvePayload>,
    #[serde(default)]
    pub experiment: Option<ExperimentPayload>,
    #[serde(default)]
    pub perturbations: Option<Value>,
    #[serde(default)]
    pub path: Option<PathPayload>,
    #[serde(default)]
    pub sigma: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSettings {
    pub l: Option<usize>,
    pub m1: Option<f64>,
    pub c_grid_size: Option<usize>,
    pub grid: Option<usize>,
    pub refine_rounds: Option<usize>,
    pub multi_start: Option<usize>,
    /// `"auto"` or a nonnegative number.
    pub eta: Option<Value>,
    pub n_for_eta: Option<u64>,
    pub eps_for_eta: Option<f64>,
    pub eval_budget: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvePayload {
    /// `"ghat"` (plug-in derivative estimator at `beta`) or `"oracle"`
    /// (exact directional derivative at `beta`).
    pub mode: String,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPayload {
    pub beta0: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub b_grid: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    /// A direction count or an explicit list of unit vectors.
    #[serde(default)]
    pub directions: Option<Value>,
    /// `"minimax"` or `"plugin"`.
    pub estimator: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathPayload {
    pub anchor: Vec<f64>,
    pub direction: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
    pub steps: usize,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<(Self, Value)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let raw: Value = serde_json::from_str(&text)
            .with_context(|| format!("config file {} is not valid JSON", path.display()))?;
        let cfg: RunConfig = serde_json::from_value(raw.clone())
            .with_context(|| format!("config file {} has an invalid schema", path.display()))?;
        Ok((cfg, raw))
    }

    pub fn map(&self) -> Result<EquivariantMap> {
        let g = self.g.as_ref().ok_or_else(|| anyhow!("config key 'g' is required"))?;
        let root = serde_json::from_value(g.clone()).context("config key 'g' is not a valid tree")?;
        let map = match self.dim {
            Some(d) => EquivariantMap::new(root, d),
            None => EquivariantMap::from_node(root),
        };
        map.map_err(|e| anyhow!("config key 'g': {e}"))
    }

    pub fn transform(&self) -> Result<Transform> {
        let spec = self.f.as_ref().ok_or_else(|| anyhow!("config key 'f' is required"))?;
        spec.build().map_err(|e| anyhow!("config key 'f': {e}"))
    }

    pub fn loss(&self) -> Result<Loss> {
        let spec = self.loss.as_ref().ok_or_else(|| anyhow!("config key 'loss' is required"))?;
        spec.build().map_err(|e| anyhow!("config key 'loss': {e}"))
    }

    pub fn risk_config(&self, d: usize, seed: u64) -> Result<RiskConfig> {
        let s = &self.risk;
        let mut cfg = RiskConfig::new(d, s.l.unwrap_or(100_000), s.m1.unwrap_or(10.0), seed);
        if let Some(n) = s.c_grid_size {
            cfg.c_grid_size = n;
        }
        cfg.r_strategy = RStrategy {
            grid: s.grid.unwrap_or(21),
            refine_rounds: s.refine_rounds.unwrap_or(5),
            multi_start: s.multi_start,
        };
        cfg.eta = match &s.eta {
            None => EtaRule::Auto,
            Some(Value::String(v)) if v == "auto" => EtaRule::Auto,
            Some(Value::Number(x)) => EtaRule::Fixed(
                x.as_f64().ok_or_else(|| anyhow!("config key 'risk.eta' is not a number"))?,
            ),
            Some(other) => bail!("config key 'risk.eta' must be \"auto\" or a number, got {other}"),
        };
        cfg.n_for_eta = s.n_for_eta;
        cfg.eps_for_eta = s.eps_for_eta;
        if let Some(b) = s.eval_budget {
            cfg.eval_budget = b;
        }
        cfg.validate().map_err(|e| anyhow!("config key 'risk': {e}"))?;
        Ok(cfg)
    }

    pub fn eps_rule(&self) -> EpsRule {
        self.eps_rule.unwrap_or_default()
    }
}

pub fn matrix_from_rows(key: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if d == 0 {
        bail!("config key '{key}' is an empty matrix");
    }
    if rows.iter().any(|r| r.len() != d) {
        bail!("config key '{key}' must be a square matrix");
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(d, d, &flat))
}

pub fn directions_from_value(v: &Option<Value>, d: usize) -> Result<Directions> {
    match v {
        None => Ok(Directions::default_for_dim(d)),
        Some(Value::Number(n)) => {
            let k = n
                .as_u64()
                .ok_or_else(|| anyhow!("config key 'directions' must be a positive integer"))?;
            Ok(Directions::SphereGrid(k as usize))
        }
        Some(Value::Array(_)) => {
            let us: Vec<Vec<f64>> = serde_json::from_value(v.clone().unwrap())
                .context("config key 'directions' must be a list of unit vectors")?;
            Ok(Directions::Explicit(us))
        }
        Some(other) => bail!("config key 'directions' must be a count or a list, got {other}"),
    }
}

pub fn perturbations_from_value(v: &Option<Value>) -> Result<Perturbations> {
    match v {
        None => Ok(Perturbations::Count(8)),
        Some(Value::Number(n)) => {
            let k = n
                .as_u64()
                .ok_or_else(|| anyhow!("config key 'perturbations' must be a positive integer"))?;
            Ok(Perturbations::Count(k as usize))
        }
        Some(Value::Array(_)) => {
            let vs: Vec<Vec<f64>> = serde_json::from_value(v.clone().unwrap())
                .context("config key 'perturbations' must be a list of offsets")?;
            Ok(Perturbations::Explicit(vs))
        }
        Some(other) => bail!("config key 'perturbations' must be a count or a list, got {other}"),
    }
}

/// Canonical serialization of the parsed config; hashed into every
/// output manifest so a report can be traced back to its exact inputs.
pub fn canonical_config_bytes(raw: &Value) -> Vec<u8> {
    serde_json::to_vec(raw).expect("value serialization cannot fail")
}
