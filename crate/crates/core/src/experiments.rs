//! Desk-scale Monte Carlo experiments: worst-case local risk of an
//! estimator over mean perturbations of size `b / sqrt(n)`, the locally
//! robustified version over an `eps_n`-ball of centers, and the
//! discontinuity of the minimax risk along a path of centers.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equivariant::EquivariantMap;
use crate::error::{ensure_finite, Error, Result};
use crate::estimator::{estimate_from_data, EpsRule};
use crate::gaussian::GaussianLimit;
use crate::risk::{oracle_curve, RiskConfig};
use crate::stream::{mix, standard_normal_stream};
use crate::transform::{Loss, Transform};

const TAG_DATA: u64 = 10;
const TAG_INNER: u64 = 11;
const TAG_DIR: u64 = 12;
const TAG_PERT: u64 = 13;

/// Direction set on the unit sphere for the local perturbations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Directions {
    /// Evenly spread directions: `+-1` in dimension one, equal angles in
    /// dimension two, seeded normalized normals above.
    SphereGrid(usize),
    /// Explicit unit vectors (validated to norm one within 1e-10).
    Explicit(Vec<Vec<f64>>),
}

impl Directions {
    /// The defaults used by the experiment harness: 16 directions in
    /// dimension two, 64 in dimension three.
    pub fn default_for_dim(d: usize) -> Directions {
        match d {
            1 => Directions::SphereGrid(2),
            2 => Directions::SphereGrid(16),
            _ => Directions::SphereGrid(64),
        }
    }

    fn realize(&self, d: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        match self {
            Directions::Explicit(us) => {
                if us.is_empty() {
                    return Err(Error::invalid("direction list is empty"));
                }
                for u in us {
                    if u.len() != d {
                        return Err(Error::dim(format!(
                            "direction has length {}, expected {d}",
                            u.len()
                        )));
                    }
                    ensure_finite("direction", u)?;
                    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if (norm - 1.0).abs() > 1e-10 {
                        return Err(Error::invalid(format!(
                            "direction must be normalized, got norm {norm}"
                        )));
                    }
                }
                Ok(us.clone())
            }
            Directions::SphereGrid(k) => {
                let k = (*k).max(1);
                match d {
                    1 => Ok(vec![vec![1.0], vec![-1.0]]),
                    2 => Ok((0..k)
                        .map(|i| {
                            let t = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                            vec![t.cos(), t.sin()]
                        })
                        .collect()),
                    _ => Ok((0..k)
                        .map(|i| {
                            let mut v = vec![0.0; d];
                            standard_normal_stream(seed, &[TAG_DIR, i as u64], &mut v);
                            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                            v.iter_mut().for_each(|x| *x /= norm);
                            v
                        })
                        .collect()),
                }
            }
        }
    }
}

/// Specification of one local worst-case risk experiment.
#[derive(Debug, Clone)]
pub struct LocalRiskSpec {
    pub beta0: Vec<f64>,
    pub sigma: DMatrix<f64>,
    /// Local radius values `b` (the true mean moves by `b/sqrt(n)`).
    pub b_grid: Vec<f64>,
    pub n: usize,
    /// Monte Carlo replications per `(b, direction)` cell.
    pub reps: usize,
    pub directions: Directions,
    /// Loss for the reported risks; its own truncation is the `M` of the
    /// finite-sample risk.
    pub loss: Loss,
    pub seed: u64,
}

impl LocalRiskSpec {
    fn validate(&self) -> Result<()> {
        ensure_finite("beta0", &self.beta0)?;
        if self.b_grid.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(Error::invalid("b values must be nonnegative"));
        }
        if self.b_grid.is_empty() {
            return Err(Error::invalid("b_grid is empty"));
        }
        if self.reps < 1 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if self.n < 2 {
            return Err(Error::invalid("n must be at least 2"));
        }
        Ok(())
    }
}

/// The estimator whose risk is tabulated.
#[derive(Clone)]
pub enum EstimatorKind {
    /// The bias-adjusted pipeline; the adjustment is recomputed from each
    /// replication's own `(beta~, Sigma^)`.
    Minimax { cfg: RiskConfig, eps_rule: EpsRule },
    /// The unadjusted plug-in `f(g(mean))`.
    Plugin,
    /// A user-supplied map from the data matrix to a point estimate.
    Custom(Arc<dyn Fn(&DMatrix<f64>) -> Result<f64> + Send + Sync>),
}

impl std::fmt::Debug for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::Minimax { .. } => write!(f, "Minimax"),
            EstimatorKind::Plugin => write!(f, "Plugin"),
            EstimatorKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// One `(b, direction)` cell of a risk table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskRow {
    pub b: f64,
    pub direction_id: usize,
    pub risk: f64,
    pub stderr: f64,
    /// Marks the supremum row within its `b` group.
    pub sup_flag: bool,
}

/// Supremum over directions for one `b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BSup {
    pub b: f64,
    pub risk: f64,
    pub stderr: f64,
    pub direction_id: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskTable {
    pub rows: Vec<RiskRow>,
    pub per_b_sup: Vec<BSup>,
}

impl RiskTable {
    /// Overall supremum across every `(b, direction)` cell.
    pub fn sup(&self) -> &BSup {
        self.per_b_sup
            .iter()
            .max_by(|a, b| a.risk.total_cmp(&b.risk))
            .expect("table is never empty")
    }

    /// CSV with header `b,direction_id,risk,stderr,sup_flag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("b,direction_id,risk,stderr,sup_flag\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.b,
                r.direction_id,
                r.risk,
                r.stderr,
                u8::from(r.sup_flag)
            ));
        }
        out
    }
}

fn make_dataset(
    spec: &LocalRiskSpec,
    limit: &GaussianLimit,
    beta_true: &[f64],
    path: &[u64],
) -> DMatrix<f64> {
    let n = spec.n;
    let d = beta_true.len();
    let mut noise = vec![0.0; n * d];
    standard_normal_stream(spec.seed, path, &mut noise);
    let mut data = DMatrix::zeros(n, d);
    let mut row = vec![0.0; d];
    for i in 0..n {
        limit.correlate_into(&noise[i * d..(i + 1) * d], &mut row);
        for j in 0..d {
            data[(i, j)] = beta_true[j] + row[j];
        }
    }
    data
}

fn column_means(data: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = (data.nrows(), data.ncols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += data[(i, j)];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

fn apply_estimator(
    estimator: &EstimatorKind,
    data: &DMatrix<f64>,
    map: &EquivariantMap,
    f: &Transform,
    loss: &Loss,
    inner_seed: u64,
) -> Result<f64> {
    match estimator {
        EstimatorKind::Plugin => {
            let mean = column_means(data);
            Ok(f.eval(map.eval(&mean)?))
        }
        EstimatorKind::Minimax { cfg, eps_rule } => {
            let mut rep_cfg = *cfg;
            rep_cfg.seed = inner_seed;
            Ok(estimate_from_data(data, map, f, loss, &rep_cfg, *eps_rule)?.theta_mx)
        }
        EstimatorKind::Custom(est) => est(data),
    }
}

/// Core table computation. Noise streams are keyed by `(seed, b,
/// direction, rep)` only, so different centers (and different
/// estimators) are paired replication by replication: a pure shift of
/// the center shifts data and target together against common noise.
fn risk_table_at_center(
    spec: &LocalRiskSpec,
    map: &EquivariantMap,
    f: &Transform,
    estimator: &EstimatorKind,
    center: &[f64],
) -> Result<RiskTable> {
    spec.validate()?;
    let d = map.dim();
    if spec.beta0.len() != d || center.len() != d {
        return Err(Error::dim("beta0 length does not match the map dimension"));
    }
    let limit = GaussianLimit::from_covariance(spec.sigma.clone())?;
    if limit.dim() != d {
        return Err(Error::dim("sigma dimension does not match the map"));
    }
    let dirs = spec.directions.realize(d, spec.seed)?;
    let sqrt_n = (spec.n as f64).sqrt();

    let mut rows = Vec::with_capacity(spec.b_grid.len() * dirs.len());
    let mut per_b_sup = Vec::with_capacity(spec.b_grid.len());
    for (bi, &b) in spec.b_grid.iter().enumerate() {
        let mut best: Option<BSup> = None;
        for (ui, u) in dirs.iter().enumerate() {
            let beta_true: Vec<f64> =
                center.iter().zip(u.iter()).map(|(c, uj)| c + b / sqrt_n * uj).collect();
            let theta_true = f.eval(map.eval(&beta_true)?);
            let losses: Vec<f64> = (0..spec.reps)
                .into_par_iter()
                .map(|rep| -> Result<f64> {
                    let path = [TAG_DATA, bi as u64, ui as u64, rep as u64];
                    let data = make_dataset(spec, &limit, &beta_true, &path);
                    let inner =
                        mix(spec.seed, &[TAG_INNER, bi as u64, ui as u64, rep as u64]);
                    let theta = apply_estimator(estimator, &data, map, f, &spec.loss, inner)?;
                    Ok(spec.loss.eval(sqrt_n * (theta - theta_true)))
                })
                .collect::<Result<Vec<f64>>>()?;
            let r = spec.reps as f64;
            let mean = losses.iter().sum::<f64>() / r;
            let stderr = if spec.reps > 1 {
                let var =
                    losses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
                (var / r).sqrt()
            } else {
                0.0
            };
            rows.push(RiskRow { b, direction_id: ui, risk: mean, stderr, sup_flag: false });
            let better = match &best {
                None => true,
                Some(cur) => mean > cur.risk,
            };
            if better {
                best = Some(BSup { b, risk: mean, stderr, direction_id: ui });
            }
        }
        let sup = best.expect("at least one direction");
        let base = rows.len() - dirs.len();
        rows[base + sup.direction_id].sup_flag = true;
        per_b_sup.push(sup);
    }
    Ok(RiskTable { rows, per_b_sup })
}

/// Worst-case local risk table of `estimator`: for each `b` and unit
/// direction `u` the mean of `tau_M(sqrt(n) |theta^ - theta_true|)` over
/// `reps` simulated datasets with the true mean at
/// `beta0 + (b/sqrt(n)) u`, plus the per-`b` supremum over directions.
///
/// Datasets are keyed by `(seed, b, direction, rep)` only, so calls with
/// different estimators are paired replication by replication.
pub fn worst_case_risk(
    spec: &LocalRiskSpec,
    map: &EquivariantMap,
    f: &Transform,
    estimator: &EstimatorKind,
) -> Result<RiskTable> {
    risk_table_at_center(spec, map, f, estimator, &spec.beta0.clone())
}

/// How the centers of the robustified sweep are produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Perturbations {
    /// The unperturbed center plus `k` seeded directions scaled to the
    /// ball radius `eps_n`.
    Count(usize),
    /// Explicit absolute offsets added to `beta0`, used as given; offsets
    /// beyond the `eps_n` ball are allowed for what-if runs. A zero
    /// offset reproduces the unrobustified table exactly, since every
    /// center shares the same noise streams.
    Explicit(Vec<Vec<f64>>),
}

/// Specification of the locally robustified sweep.
#[derive(Debug, Clone)]
pub struct RobustSweepSpec {
    pub base: LocalRiskSpec,
    pub eps_rule: EpsRule,
    pub perturbations: Perturbations,
    /// Configuration for the risk-bound oracle at the original center.
    pub oracle_cfg: RiskConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CenterTable {
    /// The offset added to `beta0` for this center.
    pub perturbation: Vec<f64>,
    pub table: RiskTable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustReport {
    pub eps_n: f64,
    pub per_center: Vec<CenterTable>,
    /// Supremum of the risk over every center, `b`, and direction.
    pub overall_sup: f64,
    /// `inf_c B(c)` from the oracle at the original `beta0`.
    pub bound: f64,
    /// `overall_sup - bound`.
    pub gap: f64,
}

/// Repeats the worst-case table with the center swept over an
/// `eps_n`-ball around `beta0` and reports the overall supremum and its
/// gap to the oracle bound at the original center.
pub fn robustified_risk(
    spec: &RobustSweepSpec,
    map: &EquivariantMap,
    f: &Transform,
    estimator: &EstimatorKind,
) -> Result<RobustReport> {
    spec.base.validate()?;
    let d = map.dim();
    let eps_n = spec.eps_rule.resolve(spec.base.n)?;
    let offsets: Vec<Vec<f64>> = match &spec.perturbations {
        Perturbations::Explicit(vs) => {
            for v in vs {
                if v.len() != d {
                    return Err(Error::dim("perturbation length mismatch"));
                }
                ensure_finite("perturbation", v)?;
            }
            vs.clone()
        }
        Perturbations::Count(k) => {
            let mut out = vec![vec![0.0; d]];
            for i in 0..*k {
                let mut v = vec![0.0; d];
                if d == 1 {
                    v[0] = if i % 2 == 0 { 1.0 } else { -1.0 };
                } else {
                    standard_normal_stream(spec.base.seed, &[TAG_PERT, i as u64], &mut v);
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                v.iter_mut().for_each(|x| *x *= eps_n);
                out.push(v);
            }
            out
        }
    };
    if offsets.is_empty() {
        return Err(Error::invalid("no perturbations given"));
    }

    let mut per_center = Vec::with_capacity(offsets.len());
    for off in offsets.iter() {
        let center: Vec<f64> =
            spec.base.beta0.iter().zip(off.iter()).map(|(b, o)| b + o).collect();
        let table = risk_table_at_center(&spec.base, map, f, estimator, &center)?;
        per_center.push(CenterTable { perturbation: off.clone(), table });
    }
    let overall_sup = per_center
        .iter()
        .map(|c| c.table.sup().risk)
        .fold(f64::NEG_INFINITY, f64::max);

    let limit_cfg = spec.oracle_cfg;
    let limit = GaussianLimit::from_covariance(spec.base.sigma.clone())?;
    let curve = oracle_curve(&spec.base.beta0, map, f, &limit, &spec.base.loss, &limit_cfg)?;
    let bound = curve.min_b;
    Ok(RobustReport {
        eps_n,
        per_center,
        overall_sup,
        bound,
        gap: overall_sup - bound,
    })
}

/// One point of the discontinuity sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscontinuityRow {
    pub t: f64,
    pub g_beta0: f64,
    pub f_bar_prime: f64,
    pub min_b: f64,
    pub argmin_c: f64,
}

/// Minimax risk `inf_c B(c)` along a path of centers `beta0(t)`; the
/// same draws are reused at every `t`, so a constant envelope yields a
/// bitwise constant curve.
pub fn discontinuity_sweep<P>(
    t_values: &[f64],
    path: P,
    map: &EquivariantMap,
    f: &Transform,
    limit: &GaussianLimit,
    loss: &Loss,
    cfg: &RiskConfig,
) -> Result<Vec<DiscontinuityRow>>
where
    P: Fn(f64) -> Vec<f64> + Sync,
{
    ensure_finite("t_values", t_values)?;
    t_values
        .par_iter()
        .map(|&t| {
            let beta0 = path(t);
            let g_beta0 = map.eval(&beta0)?;
            let a = f.f_bar_prime(g_beta0);
            let curve = oracle_curve(&beta0, map, f, limit, loss, cfg)?;
            let jmin = curve
                .b_values
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.total_cmp(y.1))
                .map(|(j, _)| j)
                .unwrap_or(0);
            Ok(DiscontinuityRow {
                t,
                g_beta0,
                f_bar_prime: a,
                min_b: curve.min_b,
                argmin_c: curve.c_values[jmin],
            })
        })
        .collect()
}

/// CSV with header `t,g_beta0,f_bar_prime,min_B,argmin_c`.
pub fn discontinuity_csv(rows: &[DiscontinuityRow]) -> String {
    let mut out = String::from("t,g_beta0,f_bar_prime,min_B,argmin_c\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.t, r.g_beta0, r.f_bar_prime, r.min_b, r.argmin_c
        ));
    }
    out
}

/// Deterministic unit vector along the diagonal, the tie-preserving
/// perturbation direction for coordinate-max problems.
pub fn diagonal_direction(d: usize) -> Vec<f64> {
    let v = 1.0 / (d as f64).sqrt();
    vec![v; d]
}


#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_spec(seed: u64) -> LocalRiskSpec {
        LocalRiskSpec {
            beta0: vec![0.0],
            sigma: DMatrix::identity(1, 1),
            b_grid: vec![0.0],
            n: 50,
            reps: 1,
            directions: Directions::Explicit(vec![vec![1.0]]),
            loss: Loss::power_truncated(2.0, 50.0).unwrap(),
            seed,
        }
    }

    #[test]
    fn smoke_single_replication() {
        let map = EquivariantMap::identity_1d();
        let f = Transform::identity();
        let t = worst_case_risk(&smoke_spec(3), &map, &f, &EstimatorKind::Plugin).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0].sup_flag);
        assert_eq!(t.rows[0].stderr, 0.0);
        assert!(t.rows[0].risk >= 0.0);
    }

    #[test]
    fn direction_validation() {
        let bad = Directions::Explicit(vec![vec![0.5, 0.5]]);
        assert!(bad.realize(2, 1).is_err());
        let ok = Directions::Explicit(vec![vec![1.0, 0.0]]);
        assert!(ok.realize(2, 1).is_ok());
        let grid = Directions::SphereGrid(16).realize(2, 1).unwrap();
        assert_eq!(grid.len(), 16);
        for u in &grid {
            let n: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_perturbation_reproduces_worst_case_bit_exactly() {
        let map = EquivariantMap::coordinate_max(2);
        let f = Transform::identity();
        let spec = LocalRiskSpec {
            beta0: vec![0.0, 0.0],
            sigma: DMatrix::identity(2, 2),
            b_grid: vec![0.0, 1.0],
            n: 40,
            reps: 32,
            directions: Directions::SphereGrid(4),
            loss: Loss::power_truncated(2.0, 10.0).unwrap(),
            seed: 17,
        };
        let plain = worst_case_risk(&spec, &map, &f, &EstimatorKind::Plugin).unwrap();
        let sweep = RobustSweepSpec {
            base: spec,
            eps_rule: EpsRule::CubeRoot,
            perturbations: Perturbations::Explicit(vec![vec![0.0, 0.0]]),
            oracle_cfg: {
                let mut c = RiskConfig::new(2, 2_000, 10.0, 99);
                c.c_grid_size = 41;
                c
            },
        };
        let rob = robustified_risk(&sweep, &map, &f, &EstimatorKind::Plugin).unwrap();
        assert_eq!(rob.per_center.len(), 1);
        for (a, b) in rob.per_center[0].table.rows.iter().zip(plain.rows.iter()) {
            assert_eq!(a.risk.to_bits(), b.risk.to_bits());
            assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        }
        assert_eq!(rob.overall_sup, plain.sup().risk);
    }

    #[test]
    fn table_csv_format() {
        let map = EquivariantMap::identity_1d();
        let f = Transform::identity();
        let t = worst_case_risk(&smoke_spec(5), &map, &f, &EstimatorKind::Plugin).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("b,direction_id,risk,stderr,sup_flag\n"));
        assert_eq!(csv.lines().count(), 2);
    }
}
