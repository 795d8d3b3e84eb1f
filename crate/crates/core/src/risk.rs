//! Monte Carlo simulation of the asymptotic risk functional and selection
//! of the optimal bias adjustment.
//!
//! The central object is the simulated risk curve
//! `B(c) = sup_r mean_i tau_M1(a * |g(Z_i + r) - g(r) + c|)` over
//! `r` in the box `[-M1, M1]^d`, with `Z_i = sqrt(Sigma) * xi_i` drawn
//! once and shared across every `c` and every `r` (common random
//! numbers). The bias adjustment is the midpoint of the near-minimizer
//! set of the curve.
//!
//! Because the inner average is invariant under shifting `r` along the
//! diagonal (translation equivariance of `g`), the search runs in reduced
//! coordinates `z in R^{d-1}` with the last coordinate of `r` pinned to
//! zero; the reduced feasible set is exactly the diagonal projection of
//! the box. Every probed `r` contributes its whole `c`-column, and the
//! final curve is the columnwise maximum over all probes, so the reported
//! sup dominates the coarse grid at every `c`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equivariant::{EquivariantMap, GHatEstimator};
use crate::error::{ensure_finite, Error, Result};
use crate::gaussian::GaussianLimit;
use crate::stream::standard_normal_stream;
use crate::transform::{Loss, Transform};

/// Stream-path tags for the counter-based RNG.
const STREAM_XI: u64 = 1;
const STREAM_LHS: u64 = 2;

/// Golden-section steps per coordinate pass.
const GS_STEPS: usize = 8;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// How the near-minimizer slack is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaRule {
    /// `log(n + L) * (L^{-1/2} + n^{-1/2} eps_n^{-1} + eps_n)`, using the
    /// `n_for_eta` / `eps_for_eta` context (defaults: `n = L`,
    /// `eps_n = n^{-1/3}`).
    Auto,
    /// A fixed nonnegative slack.
    Fixed(f64),
}

/// Search strategy for the sup over `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RStrategy {
    /// Coarse grid points per reduced dimension.
    pub grid: usize,
    /// Rounds of per-coordinate golden-section refinement.
    pub refine_rounds: usize,
    /// Forces multi-start local search with this many Latin-hypercube
    /// starts instead of the full coarse grid (the default above `d = 3`).
    pub multi_start: Option<usize>,
}

impl Default for RStrategy {
    fn default() -> Self {
        RStrategy { grid: 21, refine_rounds: 5, multi_start: None }
    }
}

/// Configuration of one risk simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    /// Monte Carlo draw count `L`.
    pub l: usize,
    /// Box bound and truncation level `M1 > 0`.
    pub m1: f64,
    /// Odd number of grid points over `[-M1, M1]`, at least 3.
    pub c_grid_size: usize,
    pub r_strategy: RStrategy,
    pub eta: EtaRule,
    pub seed: u64,
    /// Ambient dimension `d`.
    pub d: usize,
    /// Sample-size context for the auto slack (defaults to `L`).
    pub n_for_eta: Option<u64>,
    /// `eps_n` context for the auto slack (defaults to `n^{-1/3}`).
    pub eps_for_eta: Option<f64>,
    /// Guard on coarse-search evaluations (grid points times `L`).
    pub eval_budget: u64,
}

impl RiskConfig {
    pub fn new(d: usize, l: usize, m1: f64, seed: u64) -> Self {
        RiskConfig {
            l,
            m1,
            c_grid_size: 401,
            r_strategy: RStrategy::default(),
            eta: EtaRule::Auto,
            seed,
            d,
            n_for_eta: None,
            eps_for_eta: None,
            eval_budget: 2_000_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 1 {
            return Err(Error::invalid("draw count L must be at least 1"));
        }
        if !(self.m1 > 0.0) || !self.m1.is_finite() {
            return Err(Error::invalid(format!("M1 must be positive, got {}", self.m1)));
        }
        if self.c_grid_size < 3 || self.c_grid_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "c_grid_size must be an odd integer >= 3, got {}",
                self.c_grid_size
            )));
        }
        if self.r_strategy.grid < 3 {
            return Err(Error::invalid("r grid must have at least 3 points per dimension"));
        }
        if self.d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if let EtaRule::Fixed(e) = self.eta {
            if !(e >= 0.0) || !e.is_finite() {
                return Err(Error::invalid(format!("eta must be nonnegative, got {e}")));
            }
        }
        if let Some(eps) = self.eps_for_eta {
            if !(eps > 0.0) {
                return Err(Error::invalid("eps_for_eta must be positive"));
            }
        }
        Ok(())
    }

    /// The `c` grid over `[-M1, M1]`.
    pub fn c_grid(&self) -> Vec<f64> {
        let n = self.c_grid_size;
        let step = 2.0 * self.m1 / (n - 1) as f64;
        (0..n).map(|j| -self.m1 + j as f64 * step).collect()
    }

    pub fn c_grid_step(&self) -> f64 {
        2.0 * self.m1 / (self.c_grid_size - 1) as f64
    }

    /// Resolves the near-minimizer slack.
    pub fn resolve_eta(&self) -> f64 {
        match self.eta {
            EtaRule::Fixed(e) => e,
            EtaRule::Auto => {
                let l = self.l as f64;
                let n = self.n_for_eta.unwrap_or(self.l as u64) as f64;
                let eps = self.eps_for_eta.unwrap_or_else(|| n.powf(-1.0 / 3.0));
                (n + l).ln() * (l.powf(-0.5) + n.powf(-0.5) / eps + eps)
            }
        }
    }
}

/// The scalar map whose worst-case risk is simulated: the plug-in
/// derivative estimator, an exact directional derivative, the map itself,
/// or a caller-supplied function.
pub enum GFn<'a> {
    /// `z -> g(z)`.
    Map(&'a EquivariantMap),
    /// `z -> g(z + shift)`; the plug-in `ghat_n` with its precomputed shift.
    ShiftedMap { map: &'a EquivariantMap, shift: &'a [f64] },
    /// `z -> g~(at; z)`, the exact directional derivative.
    DirDeriv { map: &'a EquivariantMap, at: &'a [f64], tie_tol: Option<f64> },
    /// Arbitrary translation-equivariant scalar map.
    Custom { f: &'a (dyn Fn(&[f64]) -> f64 + Sync), dim: usize },
}

impl<'a> GFn<'a> {
    pub fn from_ghat(est: &'a GHatEstimator) -> Self {
        GFn::ShiftedMap { map: est.map(), shift: est.shift() }
    }

    pub fn dim(&self) -> usize {
        match self {
            GFn::Map(m) => m.dim(),
            GFn::ShiftedMap { map, .. } => map.dim(),
            GFn::DirDeriv { map, .. } => map.dim(),
            GFn::Custom { dim, .. } => *dim,
        }
    }

    /// Binds a probe point `r`, precomputing whatever is reusable across
    /// the `L` draws.
    fn bind(&self, r: &[f64]) -> BoundGFn<'_> {
        match self {
            GFn::Map(map) => BoundGFn::MapOffset { map, offset: r.to_vec() },
            GFn::ShiftedMap { map, shift } => {
                let offset = r.iter().zip(shift.iter()).map(|(a, b)| a + b).collect();
                BoundGFn::MapOffset { map, offset }
            }
            GFn::DirDeriv { map, at, tie_tol } => BoundGFn::DirDeriv {
                map,
                at,
                tie_tol: *tie_tol,
                r: r.to_vec(),
            },
            GFn::Custom { f, .. } => BoundGFn::Custom { f: *f, r: r.to_vec() },
        }
    }
}

enum BoundGFn<'a> {
    MapOffset { map: &'a EquivariantMap, offset: Vec<f64> },
    DirDeriv { map: &'a EquivariantMap, at: &'a [f64], tie_tol: Option<f64>, r: Vec<f64> },
    Custom { f: &'a (dyn Fn(&[f64]) -> f64 + Sync), r: Vec<f64> },
}

impl BoundGFn<'_> {
    /// Value at the bound point itself (`row = 0`).
    fn base(&self, scratch: &mut [f64]) -> f64 {
        scratch.fill(0.0);
        self.eval_row(&vec![0.0; scratch.len()], scratch)
    }

    /// Value at `row + r`.
    #[inline]
    fn eval_row(&self, row: &[f64], scratch: &mut [f64]) -> f64 {
        match self {
            BoundGFn::MapOffset { map, offset } => map.eval_offset_unchecked(row, offset),
            BoundGFn::DirDeriv { map, at, tie_tol, r } => {
                for (s, (a, b)) in scratch.iter_mut().zip(row.iter().zip(r.iter())) {
                    *s = a + b;
                }
                map.dir_deriv_unchecked(at, scratch, *tie_tol)
            }
            BoundGFn::Custom { f, r } => {
                for (s, (a, b)) in scratch.iter_mut().zip(row.iter().zip(r.iter())) {
                    *s = a + b;
                }
                f(scratch)
            }
        }
    }
}

/// The simulated risk curve with its selected adjustment and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskCurve {
    pub c_values: Vec<f64>,
    pub b_values: Vec<f64>,
    /// Midpoint of the near-minimizer set bounds.
    pub c_hat: f64,
    /// `(inf, sup)` of the near-minimizer set on the grid.
    pub e_set_bounds: (f64, f64),
    /// Argsup `r` per grid `c`, reported as a point of the original box.
    pub argsup_r: Vec<Vec<f64>>,
    /// Monte Carlo standard error at the maximizing `r`, per grid `c`.
    pub mc_stderr: Vec<f64>,
    /// Whether the argsup touched the search-box boundary (suggests `M1`
    /// is too small), per grid `c`.
    pub at_box_boundary: Vec<bool>,
    /// The resolved near-minimizer slack.
    pub eta: f64,
    /// Minimum of `b_values`.
    pub min_b: f64,
}

impl RiskCurve {
    /// CSV with header `c,B_hat,stderr,argsup_r_0..argsup_r_{d-1}`.
    pub fn to_csv(&self) -> String {
        let d = self.argsup_r.first().map(|r| r.len()).unwrap_or(0);
        let mut out = String::from("c,B_hat,stderr");
        for k in 0..d {
            out.push_str(&format!(",argsup_r_{k}"));
        }
        out.push('\n');
        for j in 0..self.c_values.len() {
            out.push_str(&format!(
                "{},{},{}",
                self.c_values[j], self.b_values[j], self.mc_stderr[j]
            ));
            for v in &self.argsup_r[j] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// JSON sidecar carrying the adjustment and near-minimizer bounds.
    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({
            "c_hat": self.c_hat,
            "e_set_inf": self.e_set_bounds.0,
            "e_set_sup": self.e_set_bounds.1,
            "eta": self.eta,
            "min_b": self.min_b,
            "boundary_hit_count": self.at_box_boundary.iter().filter(|&&b| b).count(),
        })
    }
}

/// One simulated risk value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatedRisk {
    pub value: f64,
    pub stderr: f64,
    pub argsup_r: Vec<f64>,
    pub at_box_boundary: bool,
}

// ---------------------------------------------------------------------
// internals
// ---------------------------------------------------------------------

/// Per-probe data: reduced coordinates and the full column of inner
/// averages over the `c` grid.
struct Probe {
    z_red: Vec<f64>,
    col: Vec<f64>,
}

struct Engine<'a> {
    gfn: &'a GFn<'a>,
    /// Envelope factor inside the loss.
    a: f64,
    loss: &'a Loss,
    /// Effective truncation level: `min(M1, loss truncation)`.
    level: f64,
    cfg: &'a RiskConfig,
    c_grid: Vec<f64>,
    /// Correlated draws, row-major `L x d`.
    z: Vec<f64>,
    d_red: usize,
    store: Mutex<HashMap<Vec<u64>, Arc<OnceLock<Probe>>>>,
}

fn key_of(z_red: &[f64]) -> Vec<u64> {
    z_red.iter().map(|v| v.to_bits()).collect()
}

impl<'a> Engine<'a> {
    fn new(
        gfn: &'a GFn<'a>,
        a: f64,
        limit: &GaussianLimit,
        loss: &'a Loss,
        cfg: &'a RiskConfig,
        c_grid: Vec<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        if !(a >= 0.0) || !a.is_finite() {
            return Err(Error::invalid(format!("envelope factor a must be >= 0, got {a}")));
        }
        let d = cfg.d;
        if gfn.dim() != d {
            return Err(Error::dim(format!(
                "g has dimension {}, config says {d}",
                gfn.dim()
            )));
        }
        if limit.dim() != d {
            return Err(Error::dim(format!(
                "limit has dimension {}, config says {d}",
                limit.dim()
            )));
        }
        if let Some(m) = loss.truncation() {
            if m > cfg.m1 {
                return Err(Error::invalid(format!(
                    "loss truncation {m} exceeds M1 = {}",
                    cfg.m1
                )));
            }
        }
        let d_red = d - 1;
        let coarse_points: u64 = if use_multi_start(cfg) {
            cfg.r_strategy.multi_start.unwrap_or(32) as u64
        } else {
            (cfg.r_strategy.grid as u64).pow(d_red as u32)
        };
        let evals = coarse_points.saturating_mul(cfg.l as u64);
        if evals > cfg.eval_budget {
            return Err(Error::Resource(format!(
                "coarse search needs {evals} evaluations (budget {}); \
                 reduce the grid or L, or set r_strategy.multi_start",
                cfg.eval_budget
            )));
        }

        // xi_i from the counter-based stream keyed by (seed, i), then
        // correlated through the covariance square root.
        let l = cfg.l;
        let mut z = vec![0.0; l * d];
        z.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
            let mut xi = vec![0.0; d];
            standard_normal_stream(cfg.seed, &[STREAM_XI, i as u64], &mut xi);
            limit.correlate_into(&xi, row);
        });

        let level = match loss.truncation() {
            Some(m) => m.min(cfg.m1),
            None => cfg.m1,
        };
        Ok(Engine {
            gfn,
            a,
            loss,
            level,
            cfg,
            c_grid,
            z,
            d_red,
            store: Mutex::new(HashMap::new()),
        })
    }

    fn embed(&self, z_red: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.cfg.d];
        r[..self.d_red].copy_from_slice(z_red);
        r
    }

    /// Reduced point -> canonical representative inside the original box.
    fn canonical_r(&self, z_red: &[f64]) -> Vec<f64> {
        let m1 = self.cfg.m1;
        let min_z = z_red.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
        let max_z = z_red.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let lo = (-m1 - min_z).max(-m1);
        let hi = (m1 - max_z).min(m1);
        let shift = 0.5 * (lo + hi);
        let mut r = self.embed(z_red);
        for v in r.iter_mut() {
            *v += shift;
        }
        r
    }

    fn touches_boundary(&self, z_red: &[f64]) -> bool {
        let m1 = self.cfg.m1;
        let tol = 2.0 * m1 * 1e-9;
        let min_z = z_red.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
        let max_z = z_red.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        max_z - min_z >= 2.0 * m1 - tol
    }

    /// Feasible interval of reduced coordinate `k` given the others:
    /// the diagonal projection of the box constrains the spread of
    /// `(z, 0)` to at most `2 M1`.
    fn coord_interval(&self, z_red: &[f64], k: usize) -> (f64, f64) {
        let b = 2.0 * self.cfg.m1;
        let mut hi_o: f64 = 0.0;
        let mut lo_o: f64 = 0.0;
        for (j, &v) in z_red.iter().enumerate() {
            if j != k {
                hi_o = hi_o.max(v);
                lo_o = lo_o.min(v);
            }
        }
        ((hi_o - b).max(-b), (lo_o + b).min(b))
    }

    fn feasible(&self, z_red: &[f64]) -> bool {
        let b = 2.0 * self.cfg.m1;
        let min_z = z_red.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
        let max_z = z_red.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        max_z - min_z <= b && z_red.iter().all(|v| v.abs() <= b)
    }

    /// Computes (or fetches) the full `c` column for a probe point.
    /// Concurrent requests for the same point block on one computation
    /// instead of duplicating it.
    fn probe(&self, z_red: &[f64]) -> Arc<OnceLock<Probe>> {
        let key = key_of(z_red);
        let cell = {
            let mut store = self.store.lock().unwrap();
            Arc::clone(store.entry(key).or_insert_with(|| Arc::new(OnceLock::new())))
        };
        cell.get_or_init(|| self.compute_probe(z_red));
        cell
    }

    fn probe_col<'p>(cell: &'p OnceLock<Probe>) -> &'p Probe {
        cell.get().expect("probe initialized by probe()")
    }

    fn compute_probe(&self, z_red: &[f64]) -> Probe {
        let d = self.cfg.d;
        let r = self.embed(z_red);
        let bound = self.gfn.bind(&r);
        let mut scratch = vec![0.0; d];
        let base = bound.base(&mut scratch);
        let mut dvals: Vec<f64> = self
            .z
            .chunks_exact(d)
            .map(|row| bound.eval_row(row, &mut scratch) - base)
            .collect();
        let col = self.column_from_dvals(&mut dvals);
        Probe { z_red: z_red.to_vec(), col }
    }

    /// Inner average per grid `c`, from the draws' difference values.
    /// Sorting plus prefix sums give an O(log L) kernel per `c` for the
    /// power losses; other losses scan the array per `c`.
    fn column_from_dvals(&self, dvals: &mut [f64]) -> Vec<f64> {
        let l = dvals.len();
        let inv_l = 1.0 / l as f64;
        if self.a == 0.0 {
            // tau(0) = 0 annihilates the risk regardless of c.
            return vec![0.0; self.c_grid.len()];
        }
        dvals.sort_unstable_by(f64::total_cmp);
        match self.loss.power_exponent() {
            Some(p) if p == 2.0 => {
                let mut s1 = vec![0.0; l + 1];
                let mut s2 = vec![0.0; l + 1];
                for (i, &v) in dvals.iter().enumerate() {
                    s1[i + 1] = s1[i] + v;
                    s2[i + 1] = s2[i] + v * v;
                }
                let thr = self.level.sqrt() / self.a;
                let a2 = self.a * self.a;
                self.c_grid
                    .iter()
                    .map(|&c| {
                        let lo = dvals.partition_point(|&v| v < -c - thr);
                        let hi = dvals.partition_point(|&v| v < -c + thr);
                        let cnt = (hi - lo) as f64;
                        let body = a2
                            * ((s2[hi] - s2[lo]) + 2.0 * c * (s1[hi] - s1[lo]) + cnt * c * c);
                        (body + self.level * (l as f64 - cnt)) * inv_l
                    })
                    .collect()
            }
            Some(p) if p == 1.0 => {
                let mut s1 = vec![0.0; l + 1];
                for (i, &v) in dvals.iter().enumerate() {
                    s1[i + 1] = s1[i] + v;
                }
                let thr = self.level / self.a;
                self.c_grid
                    .iter()
                    .map(|&c| {
                        let lo = dvals.partition_point(|&v| v < -c - thr);
                        let hi = dvals.partition_point(|&v| v < -c + thr);
                        let mid = dvals.partition_point(|&v| v < -c);
                        let neg = -(s1[mid] - s1[lo]) - c * (mid - lo) as f64;
                        let pos = (s1[hi] - s1[mid]) + c * (hi - mid) as f64;
                        (self.a * (neg + pos) + self.level * (l - (hi - lo)) as f64) * inv_l
                    })
                    .collect()
            }
            _ => self
                .c_grid
                .iter()
                .map(|&c| {
                    let mut acc = 0.0;
                    for &v in dvals.iter() {
                        acc += self.loss.eval_truncated(self.a * (v + c), self.level);
                    }
                    acc * inv_l
                })
                .collect(),
        }
    }

    /// Coarse probe set: full grid on the reduced box for low dimension,
    /// Latin-hypercube starts otherwise. The reduced box `[-2M1, 2M1]`
    /// is filtered to the diagonal projection of the original box.
    fn coarse_points(&self) -> Vec<Vec<f64>> {
        if self.d_red == 0 {
            return vec![vec![]];
        }
        let b = 2.0 * self.cfg.m1;
        if use_multi_start(self.cfg) {
            let s = self.cfg.r_strategy.multi_start.unwrap_or(32);
            let mut rng = crate::stream::substream(self.cfg.seed, &[STREAM_LHS]);
            let mut perms: Vec<Vec<usize>> = Vec::with_capacity(self.d_red);
            for _ in 0..self.d_red {
                let mut idx: Vec<usize> = (0..s).collect();
                // Fisher-Yates with the deterministic stream.
                for i in (1..s).rev() {
                    let j = rand::Rng::gen_range(&mut rng, 0..=i);
                    idx.swap(i, j);
                }
                perms.push(idx);
            }
            let mut pts = Vec::with_capacity(s);
            for i in 0..s {
                let mut z: Vec<f64> = (0..self.d_red)
                    .map(|k| -b + 2.0 * b * (perms[k][i] as f64 + 0.5) / s as f64)
                    .collect();
                // project into the feasible polytope coordinate-wise
                for _ in 0..2 {
                    for k in 0..self.d_red {
                        let (lo, hi) = self.coord_interval(&z, k);
                        z[k] = z[k].clamp(lo, hi);
                    }
                }
                pts.push(z);
            }
            return pts;
        }
        let g = self.cfg.r_strategy.grid;
        let step = 2.0 * b / (g - 1) as f64;
        let mut pts = Vec::new();
        let mut idx = vec![0usize; self.d_red];
        loop {
            let z: Vec<f64> = idx.iter().map(|&i| -b + i as f64 * step).collect();
            if self.feasible(&z) {
                pts.push(z);
            }
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < g {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == self.d_red {
                    return pts;
                }
            }
        }
    }

    /// Refines the incumbent for column `j` by per-coordinate
    /// golden-section passes; every evaluation lands in the shared store.
    fn refine_for_column(&self, j: usize, start: &[f64], start_val: f64, width0: f64) {
        if self.d_red == 0 || self.cfg.r_strategy.refine_rounds == 0 {
            return;
        }
        let mut incumbent = start.to_vec();
        let mut best = start_val;
        let mut width = width0;
        for _ in 0..self.cfg.r_strategy.refine_rounds {
            for k in 0..self.d_red {
                let (flo, fhi) = self.coord_interval(&incumbent, k);
                let mut a = (incumbent[k] - width).max(flo);
                let mut b = (incumbent[k] + width).min(fhi);
                if b <= a {
                    continue;
                }
                let probe_at = |x: f64, inc: &[f64]| -> f64 {
                    let mut z = inc.to_vec();
                    z[k] = x;
                    let cell = self.probe(&z);
                    Self::probe_col(&cell).col[j]
                };
                let mut x1 = b - INV_PHI * (b - a);
                let mut x2 = a + INV_PHI * (b - a);
                let mut f1 = probe_at(x1, &incumbent);
                let mut f2 = probe_at(x2, &incumbent);
                let mut best_x = incumbent[k];
                for _ in 0..GS_STEPS {
                    if f1 < f2 {
                        if f2 > best { best = f2; best_x = x2; }
                        a = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = a + INV_PHI * (b - a);
                        f2 = probe_at(x2, &incumbent);
                    } else {
                        if f1 > best { best = f1; best_x = x1; }
                        b = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = b - INV_PHI * (b - a);
                        f1 = probe_at(x1, &incumbent);
                    }
                }
                if f1 > best { best = f1; best_x = x1; }
                if f2 > best { best = f2; best_x = x2; }
                incumbent[k] = best_x;
            }
            width *= 0.5;
        }
    }

    /// Runs the full search and assembles the curve.
    fn run(&self) -> (Vec<f64>, Vec<Arc<OnceLock<Probe>>>, Vec<usize>) {
        let coarse = self.coarse_points();
        let coarse_probes: Vec<Arc<OnceLock<Probe>>> =
            coarse.par_iter().map(|z| self.probe(z)).collect();

        let n_c = self.c_grid.len();
        let width0 = if use_multi_start(self.cfg) {
            self.cfg.m1
        } else {
            4.0 * self.cfg.m1 / (self.cfg.r_strategy.grid - 1) as f64
        };

        // Per-column refinement; the probe store is shared, so any point
        // found for one column improves every column.
        (0..n_c).into_par_iter().for_each(|j| {
            if use_multi_start(self.cfg) {
                for cell in coarse_probes.iter() {
                    let p = Self::probe_col(cell);
                    self.refine_for_column(j, &p.z_red, p.col[j], width0);
                }
            } else {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0usize;
                for (i, cell) in coarse_probes.iter().enumerate() {
                    let v = Self::probe_col(cell).col[j];
                    if v > best {
                        best = v;
                        arg = i;
                    }
                }
                let start = Self::probe_col(&coarse_probes[arg]);
                self.refine_for_column(j, &start.z_red, best, width0);
            }
        });

        // Deterministic columnwise max over every probe ever computed.
        let mut cells: Vec<(Vec<u64>, Arc<OnceLock<Probe>>)> = self
            .store
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), Arc::clone(v)))
            .collect();
        cells.sort_by(|a, b| a.0.cmp(&b.0));
        let probes: Vec<Arc<OnceLock<Probe>>> = cells.into_iter().map(|(_, p)| p).collect();

        let mut b_values = vec![f64::NEG_INFINITY; n_c];
        let mut arg_idx = vec![0usize; n_c];
        for (i, cell) in probes.iter().enumerate() {
            let p = Self::probe_col(cell);
            for j in 0..n_c {
                if p.col[j] > b_values[j] {
                    b_values[j] = p.col[j];
                    arg_idx[j] = i;
                }
            }
        }
        (b_values, probes, arg_idx)
    }

    /// Standard error of the inner average at probe `z_red`, per listed
    /// column index, using the already-known column means.
    fn stderr_at(&self, z_red: &[f64], cols: &[usize], means: &[f64]) -> Vec<f64> {
        let d = self.cfg.d;
        let r = self.embed(z_red);
        let bound = self.gfn.bind(&r);
        let mut scratch = vec![0.0; d];
        let base = bound.base(&mut scratch);
        let dvals: Vec<f64> = self
            .z
            .chunks_exact(d)
            .map(|row| bound.eval_row(row, &mut scratch) - base)
            .collect();
        let l = dvals.len() as f64;
        cols.iter()
            .zip(means.iter())
            .map(|(&j, &mean)| {
                let c = self.c_grid[j];
                let mut var = 0.0;
                for &v in &dvals {
                    let t = self.loss.eval_truncated(self.a * (v + c), self.level) - mean;
                    var += t * t;
                }
                if dvals.len() > 1 {
                    var /= l - 1.0;
                }
                (var / l).sqrt()
            })
            .collect()
    }
}

fn use_multi_start(cfg: &RiskConfig) -> bool {
    cfg.r_strategy.multi_start.is_some() || cfg.d > 3
}

/// Whether the power-loss shortcut applies: the minimizer of the risk
/// curve does not depend on the envelope factor, so selection may run
/// with `a = 1` and scale only the reported values.
fn power_shortcut(loss: &Loss) -> Option<f64> {
    loss.power_exponent()
}

// ---------------------------------------------------------------------
// public operations
// ---------------------------------------------------------------------

/// Simulates the worst-case risk at a single bias value `c`.
///
/// Draws `xi_1..xi_L` from the stream keyed by `(seed, i)`, forms
/// `Z_i = sqrt(Sigma) xi_i`, and maximizes the inner average
/// `mean_i tau_M1(a |g(Z_i + r) - g(r) + c|)` over the box via the
/// coarse-grid plus golden-section search.
pub fn simulate_b(
    gfn: &GFn,
    a: f64,
    limit: &GaussianLimit,
    loss: &Loss,
    cfg: &RiskConfig,
    c: f64,
) -> Result<SimulatedRisk> {
    if !c.is_finite() {
        return Err(Error::invalid("c must be finite"));
    }
    let engine = Engine::new(gfn, a, limit, loss, cfg, vec![c])?;
    let (b_values, probes, arg_idx) = engine.run();
    let z_red = Engine::probe_col(&probes[arg_idx[0]]).z_red.clone();
    let stderr = engine.stderr_at(&z_red, &[0], &[b_values[0]])[0];
    Ok(SimulatedRisk {
        value: b_values[0],
        stderr,
        argsup_r: engine.canonical_r(&z_red),
        at_box_boundary: engine.touches_boundary(&z_red),
    })
}

/// Simulates the full risk curve over the `c` grid with common random
/// numbers and selects the bias adjustment as the midpoint of the
/// near-minimizer set `{c : B(c) <= min B + eta}`.
///
/// For power losses the search runs with the envelope factor set to one
/// (the minimizer does not depend on it); the factor is applied to the
/// reported values only.
pub fn select_c_hat(
    gfn: &GFn,
    a: f64,
    limit: &GaussianLimit,
    loss: &Loss,
    cfg: &RiskConfig,
) -> Result<RiskCurve> {
    let shortcut_p = power_shortcut(loss);
    let sim_a = if shortcut_p.is_some() { 1.0 } else { a };
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::invalid(format!("envelope factor a must be >= 0, got {a}")));
    }
    let c_grid = cfg.c_grid();
    let engine = Engine::new(gfn, sim_a, limit, loss, cfg, c_grid.clone())?;
    let (b_values, probes, arg_idx) = engine.run();

    let n_c = c_grid.len();
    let eta = cfg.resolve_eta();
    let min_b = b_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut e_lo = f64::INFINITY;
    let mut e_hi = f64::NEG_INFINITY;
    for j in 0..n_c {
        if b_values[j] <= min_b + eta {
            e_lo = e_lo.min(c_grid[j]);
            e_hi = e_hi.max(c_grid[j]);
        }
    }
    let c_hat = 0.5 * (e_lo + e_hi);

    // Standard errors at the maximizing r, grouped by probe so the
    // expensive difference pass runs once per distinct argsup.
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (j, &i) in arg_idx.iter().enumerate() {
        groups.entry(i).or_default().push(j);
    }
    let mut group_list: Vec<(usize, Vec<usize>)> = groups.into_iter().collect();
    group_list.sort_by_key(|(i, _)| *i);
    let stderr_groups: Vec<(usize, Vec<usize>, Vec<f64>)> = group_list
        .into_par_iter()
        .map(|(i, cols)| {
            let means: Vec<f64> = cols.iter().map(|&j| b_values[j]).collect();
            let se = engine.stderr_at(&Engine::probe_col(&probes[i]).z_red, &cols, &means);
            (i, cols, se)
        })
        .collect();
    let mut mc_stderr = vec![0.0; n_c];
    for (_, cols, ses) in &stderr_groups {
        for (j, se) in cols.iter().zip(ses.iter()) {
            mc_stderr[*j] = *se;
        }
    }

    // Report values on the caller's envelope scale.
    let scale = match shortcut_p {
        Some(p) if a != 1.0 => a.powf(p),
        _ => 1.0,
    };
    let b_values: Vec<f64> = b_values.iter().map(|v| v * scale).collect();
    let mc_stderr: Vec<f64> = mc_stderr.iter().map(|v| v * scale).collect();
    let min_b = min_b * scale;

    let argsup_r: Vec<Vec<f64>> = arg_idx
        .iter()
        .map(|&i| engine.canonical_r(&Engine::probe_col(&probes[i]).z_red))
        .collect();
    let at_box_boundary: Vec<bool> = arg_idx
        .iter()
        .map(|&i| engine.touches_boundary(&Engine::probe_col(&probes[i]).z_red))
        .collect();

    Ok(RiskCurve {
        c_values: c_grid,
        b_values,
        c_hat,
        e_set_bounds: (e_lo, e_hi),
        argsup_r,
        mc_stderr,
        at_box_boundary,
        eta,
        min_b,
    })
}

/// Ground-truth risk at `c` for a known `beta_0`: the exact directional
/// derivative `g~(beta_0; .)` with the envelope `f_bar_prime(g(beta_0))`.
pub fn oracle_b(
    beta0: &[f64],
    map: &EquivariantMap,
    f: &Transform,
    limit: &GaussianLimit,
    loss: &Loss,
    cfg: &RiskConfig,
    c: f64,
) -> Result<SimulatedRisk> {
    ensure_finite("beta0", beta0)?;
    let a = f.f_bar_prime(map.eval(beta0)?);
    let gfn = GFn::DirDeriv { map, at: beta0, tie_tol: None };
    simulate_b(&gfn, a, limit, loss, cfg, c)
}

/// Full ground-truth risk curve (no power-loss shortcut: the reported
/// values use the true envelope factor inside the truncated loss).
pub fn oracle_curve(
    beta0: &[f64],
    map: &EquivariantMap,
    f: &Transform,
    limit: &GaussianLimit,
    loss: &Loss,
    cfg: &RiskConfig,
) -> Result<RiskCurve> {
    ensure_finite("beta0", beta0)?;
    let a = f.f_bar_prime(map.eval(beta0)?);
    let gfn = GFn::DirDeriv { map, at: beta0, tie_tol: None };
    let c_grid = cfg.c_grid();
    let engine = Engine::new(&gfn, a, limit, loss, cfg, c_grid.clone())?;
    let (b_values, probes, arg_idx) = engine.run();
    let n_c = c_grid.len();
    let eta = cfg.resolve_eta();
    let min_b = b_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut e_lo = f64::INFINITY;
    let mut e_hi = f64::NEG_INFINITY;
    for j in 0..n_c {
        if b_values[j] <= min_b + eta {
            e_lo = e_lo.min(c_grid[j]);
            e_hi = e_hi.max(c_grid[j]);
        }
    }
    let argsup_r: Vec<Vec<f64>> = arg_idx
        .iter()
        .map(|&i| engine.canonical_r(&Engine::probe_col(&probes[i]).z_red))
        .collect();
    let at_box_boundary: Vec<bool> = arg_idx
        .iter()
        .map(|&i| engine.touches_boundary(&Engine::probe_col(&probes[i]).z_red))
        .collect();
    Ok(RiskCurve {
        c_values: c_grid,
        b_values,
        c_hat: 0.5 * (e_lo + e_hi),
        e_set_bounds: (e_lo, e_hi),
        argsup_r,
        mc_stderr: vec![0.0; n_c],
        at_box_boundary,
        eta,
        min_b,
    })
}

/// Test-support hook: the inner average at an explicit `r` for one `c`,
/// bypassing the sup. Used to assert the diagonal shift invariance.
#[doc(hidden)]
pub fn inner_average_at(
    gfn: &GFn,
    a: f64,
    limit: &GaussianLimit,
    loss: &Loss,
    cfg: &RiskConfig,
    r: &[f64],
    c: f64,
) -> Result<f64> {
    let engine = Engine::new(gfn, a, limit, loss, cfg, vec![c])?;
    if r.len() != cfg.d {
        return Err(Error::dim("r has wrong length"));
    }
    let bound = gfn.bind(r);
    let mut scratch = vec![0.0; cfg.d];
    let base = bound.base(&mut scratch);
    let mut acc = 0.0;
    for row in engine.z.chunks_exact(cfg.d) {
        let dv = bound.eval_row(row, &mut scratch) - base;
        acc += loss.eval_truncated(engine.a * (dv + c), engine.level);
    }
    Ok(acc / cfg.l as f64)
}
