//! Translation-scale equivariant maps `g: R^d -> R`.
//!
//! Maps are expression trees over coordinates built from max, min, inner
//! products with weights summing to one, and affine combinations with
//! weights summing to one. Every tree in this algebra satisfies
//! `g(x + c*1) = g(x) + c` and `g(u*x) = u*g(x)` for `u >= 0`, and has
//! exact one-sided directional derivatives computed by structural
//! recursion over argmax/argmin sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One node of an equivariant expression tree.
///
/// Serialized form uses a `kind` tag, e.g.
/// `{"kind":"max","children":[{"kind":"coord","index":0},...]}`,
/// `{"kind":"linear","weights":[0.5,0.5]}`,
/// `{"kind":"combo","terms":[{"w":0.5,"node":...}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Coord { index: usize },
    Linear { weights: Vec<f64> },
    Max { children: Vec<Node> },
    Min { children: Vec<Node> },
    Combo { terms: Vec<ComboTerm> },
}

/// A weighted term of an affine combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboTerm {
    pub w: f64,
    pub node: Node,
}

impl Node {
    pub fn coord(index: usize) -> Node {
        Node::Coord { index }
    }

    pub fn linear(weights: Vec<f64>) -> Node {
        Node::Linear { weights }
    }

    pub fn max(children: Vec<Node>) -> Node {
        Node::Max { children }
    }

    pub fn min(children: Vec<Node>) -> Node {
        Node::Min { children }
    }

    pub fn combo(terms: Vec<(f64, Node)>) -> Node {
        Node::Combo {
            terms: terms.into_iter().map(|(w, node)| ComboTerm { w, node }).collect(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Node::Coord { index } => {
                if *index >= dim {
                    return Err(Error::dim(format!(
                        "coord index {index} out of range for dimension {dim}"
                    )));
                }
            }
            Node::Linear { weights } => {
                if weights.len() != dim {
                    return Err(Error::dim(format!(
                        "linear node has {} weights, expected {dim}",
                        weights.len()
                    )));
                }
                ensure_finite("linear weights", weights)?;
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::invalid(format!(
                        "linear weights must sum to 1, got {sum}"
                    )));
                }
            }
            Node::Max { children } | Node::Min { children } => {
                if children.is_empty() {
                    return Err(Error::invalid("max/min node must have children"));
                }
                for ch in children {
                    ch.validate(dim)?;
                }
            }
            Node::Combo { terms } => {
                if terms.is_empty() {
                    return Err(Error::invalid("combo node must have terms"));
                }
                let sum: f64 = terms.iter().map(|t| t.w).sum();
                if !sum.is_finite() || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::invalid(format!(
                        "combo weights must sum to 1, got {sum}"
                    )));
                }
                for t in terms {
                    if !t.w.is_finite() {
                        return Err(Error::invalid("combo weight is not finite"));
                    }
                    t.node.validate(dim)?;
                }
            }
        }
        Ok(())
    }

    /// Smallest dimension an unvalidated tree can live in.
    fn min_dim(&self) -> usize {
        match self {
            Node::Coord { index } => index + 1,
            Node::Linear { weights } => weights.len(),
            Node::Max { children } | Node::Min { children } => {
                children.iter().map(Node::min_dim).max().unwrap_or(0)
            }
            Node::Combo { terms } => terms.iter().map(|t| t.node.min_dim()).max().unwrap_or(0),
        }
    }

    fn eval(&self, x: &[f64], offset: Option<&[f64]>) -> f64 {
        match self {
            Node::Coord { index } => match offset {
                Some(w) => x[*index] + w[*index],
                None => x[*index],
            },
            Node::Linear { weights } => {
                let mut acc = 0.0;
                match offset {
                    Some(w) => {
                        for (j, wt) in weights.iter().enumerate() {
                            acc += wt * (x[j] + w[j]);
                        }
                    }
                    None => {
                        for (j, wt) in weights.iter().enumerate() {
                            acc += wt * x[j];
                        }
                    }
                }
                acc
            }
            Node::Max { children } => children
                .iter()
                .map(|ch| ch.eval(x, offset))
                .fold(f64::NEG_INFINITY, f64::max),
            Node::Min { children } => children
                .iter()
                .map(|ch| ch.eval(x, offset))
                .fold(f64::INFINITY, f64::min),
            Node::Combo { terms } => terms.iter().map(|t| t.w * t.node.eval(x, offset)).sum(),
        }
    }

    /// Value and one-sided slope along `z`, in one pass.
    fn value_and_slope(&self, x: &[f64], z: &[f64], tie_tol: Option<f64>) -> (f64, f64) {
        match self {
            Node::Coord { index } => (x[*index], z[*index]),
            Node::Linear { weights } => {
                let mut v = 0.0;
                let mut s = 0.0;
                for (j, wt) in weights.iter().enumerate() {
                    v += wt * x[j];
                    s += wt * z[j];
                }
                (v, s)
            }
            Node::Max { children } => {
                let pairs: Vec<(f64, f64)> = children
                    .iter()
                    .map(|ch| ch.value_and_slope(x, z, tie_tol))
                    .collect();
                let m = pairs.iter().fold(f64::NEG_INFINITY, |a, p| a.max(p.0));
                let tol = resolve_tie_tol(tie_tol, m);
                let s = pairs
                    .iter()
                    .filter(|p| p.0 >= m - tol)
                    .fold(f64::NEG_INFINITY, |a, p| a.max(p.1));
                (m, s)
            }
            Node::Min { children } => {
                let pairs: Vec<(f64, f64)> = children
                    .iter()
                    .map(|ch| ch.value_and_slope(x, z, tie_tol))
                    .collect();
                let m = pairs.iter().fold(f64::INFINITY, |a, p| a.min(p.0));
                let tol = resolve_tie_tol(tie_tol, m);
                let s = pairs
                    .iter()
                    .filter(|p| p.0 <= m + tol)
                    .fold(f64::INFINITY, |a, p| a.min(p.1));
                (m, s)
            }
            Node::Combo { terms } => {
                let mut v = 0.0;
                let mut s = 0.0;
                for t in terms {
                    let (tv, ts) = t.node.value_and_slope(x, z, tie_tol);
                    v += t.w * tv;
                    s += t.w * ts;
                }
                (v, s)
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        match self {
            Node::Coord { .. } => 1.0,
            Node::Linear { weights } => weights.iter().map(|w| w.abs()).sum(),
            Node::Max { children } | Node::Min { children } => children
                .iter()
                .map(Node::lipschitz)
                .fold(0.0_f64, f64::max),
            Node::Combo { terms } => terms.iter().map(|t| t.w.abs() * t.node.lipschitz()).sum(),
        }
    }

    /// Min positive gap between the selected child and the best
    /// strictly-worse child, over all max/min nodes, evaluated at `x`.
    fn tie_gap(&self, x: &[f64], acc: &mut f64) -> f64 {
        match self {
            Node::Coord { index } => x[*index],
            Node::Linear { weights } => weights.iter().zip(x).map(|(w, v)| w * v).sum(),
            Node::Max { children } => {
                let vals: Vec<f64> = children.iter().map(|ch| ch.tie_gap(x, acc)).collect();
                let m = vals.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                let runner = vals
                    .iter()
                    .filter(|&&v| v < m)
                    .fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                if runner.is_finite() {
                    *acc = acc.min(m - runner);
                }
                m
            }
            Node::Min { children } => {
                let vals: Vec<f64> = children.iter().map(|ch| ch.tie_gap(x, acc)).collect();
                let m = vals.iter().fold(f64::INFINITY, |a, &v| a.min(v));
                let runner = vals
                    .iter()
                    .filter(|&&v| v > m)
                    .fold(f64::INFINITY, |a, &v| a.min(v));
                if runner.is_finite() {
                    *acc = acc.min(runner - m);
                }
                m
            }
            Node::Combo { terms } => terms.iter().map(|t| t.w * t.node.tie_gap(x, acc)).sum(),
        }
    }
}

#[inline]
fn resolve_tie_tol(tie_tol: Option<f64>, node_value: f64) -> f64 {
    match tie_tol {
        Some(t) => t,
        None => 1e-12 * node_value.abs().max(1.0),
    }
}

/// A validated translation-scale equivariant map.
///
/// Immutable after construction; evaluation is pure, so a map can be
/// shared freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivariantMap {
    root: Node,
    dim: usize,
    lipschitz: f64,
}

impl EquivariantMap {
    /// Validates `root` against an explicit ambient dimension.
    pub fn new(root: Node, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        root.validate(dim)?;
        let lipschitz = root.lipschitz();
        Ok(EquivariantMap { root, dim, lipschitz })
    }

    /// Validates `root` with the dimension inferred from the tree
    /// (largest coordinate index plus one, or any linear node's length).
    pub fn from_node(root: Node) -> Result<Self> {
        let dim = root.min_dim().max(1);
        Self::new(root, dim)
    }

    /// `g(x) = max(x_1, ..., x_d)`.
    pub fn coordinate_max(dim: usize) -> Self {
        let children = (0..dim).map(Node::coord).collect();
        Self::new(Node::max(children), dim).expect("valid by construction")
    }

    /// `g(x) = min(x_1, ..., x_d)`.
    pub fn coordinate_min(dim: usize) -> Self {
        let children = (0..dim).map(Node::coord).collect();
        Self::new(Node::min(children), dim).expect("valid by construction")
    }

    /// `g(x) = s'x` with weights summing to one.
    pub fn linear(weights: Vec<f64>) -> Result<Self> {
        let dim = weights.len();
        Self::new(Node::linear(weights), dim)
    }

    /// The identity on `R^1` (the only equivariant map in dimension one).
    pub fn identity_1d() -> Self {
        Self::new(Node::coord(0), 1).expect("valid by construction")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Lipschitz constant w.r.t. the sup norm, from the tree structure.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Evaluates `g(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_input("x", x)?;
        Ok(self.root.eval(x, None))
    }

    /// Evaluates `g(x + offset)` without materializing the sum.
    pub fn eval_with_offset(&self, x: &[f64], offset: &[f64]) -> Result<f64> {
        self.check_input("x", x)?;
        self.check_input("offset", offset)?;
        Ok(self.root.eval(x, Some(offset)))
    }

    #[inline]
    pub(crate) fn eval_offset_unchecked(&self, x: &[f64], offset: &[f64]) -> f64 {
        self.root.eval(x, Some(offset))
    }

    /// One-sided directional derivative
    /// `g~(x; z) = lim_{t->0+} (g(x + t z) - g(x)) / t`,
    /// computed exactly by recursion over argmax/argmin sets.
    ///
    /// `tie_tol` is the absolute tolerance for detecting ties among
    /// children; `None` uses `1e-12 * max(1, |node value|)` per node.
    pub fn dir_deriv(&self, x: &[f64], z: &[f64], tie_tol: Option<f64>) -> Result<f64> {
        self.check_input("x", x)?;
        self.check_input("z", z)?;
        if let Some(t) = tie_tol {
            if !(t >= 0.0) {
                return Err(Error::invalid("tie_tol must be nonnegative"));
            }
        }
        Ok(self.root.value_and_slope(x, z, tie_tol).1)
    }

    #[inline]
    pub(crate) fn dir_deriv_unchecked(&self, x: &[f64], z: &[f64], tie_tol: Option<f64>) -> f64 {
        self.root.value_and_slope(x, z, tie_tol).1
    }

    /// Smallest positive gap separating selected from unselected children
    /// over all max/min nodes at `x`; `inf` if every comparison is a tie
    /// or the tree has no order statistics. A finite difference
    /// `(g(x+tz) - g(x))/t` equals the directional derivative exactly once
    /// `t * lipschitz * max|z|` is below half this gap.
    pub fn tie_gap(&self, x: &[f64]) -> Result<f64> {
        self.check_input("x", x)?;
        let mut gap = f64::INFINITY;
        self.root.tie_gap(x, &mut gap);
        Ok(gap)
    }

    /// Serializes the expression tree to the JSON wire format.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.root).expect("tree serialization cannot fail")
    }

    /// Parses a map from the JSON wire format, inferring the dimension.
    pub fn from_json(s: &str) -> Result<Self> {
        let root: Node =
            serde_json::from_str(s).map_err(|e| Error::invalid(format!("bad map JSON: {e}")))?;
        Self::from_node(root)
    }

    fn check_input(&self, name: &str, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::dim(format!(
                "{name} has length {}, expected {}",
                x.len(),
                self.dim
            )));
        }
        ensure_finite(name, x)
    }

    /// Draws a random valid tree; used by property tests and simulations.
    ///
    /// Weights are dyadic rationals summing to exactly one so that
    /// equivariance identities hold to machine precision.
    pub fn random<R: Rng>(rng: &mut R, dim: usize, max_depth: usize) -> Self {
        let root = random_node(rng, dim, max_depth);
        Self::new(root, dim).expect("generator produces valid trees")
    }
}

fn random_weights<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    // k nonnegative integers summing to 64, then divide by 64: the float
    // weights sum to exactly 1.0.
    let mut parts = vec![0u32; k];
    for _ in 0..64 {
        parts[rng.gen_range(0..k)] += 1;
    }
    // Occasionally introduce one negative weight pair to exercise
    // non-convex combinations (still summing to one).
    if k >= 2 && rng.gen_bool(0.2) {
        let i = rng.gen_range(0..k);
        let mut j = rng.gen_range(0..k - 1);
        if j >= i {
            j += 1;
        }
        let mut w: Vec<f64> = parts.iter().map(|&p| p as f64 / 64.0).collect();
        w[i] += 0.25;
        w[j] -= 0.25;
        return w;
    }
    parts.iter().map(|&p| p as f64 / 64.0).collect()
}

fn random_node<R: Rng>(rng: &mut R, dim: usize, depth: usize) -> Node {
    if depth == 0 || rng.gen_bool(0.3) {
        // Leaf: coordinate or linear.
        if rng.gen_bool(0.5) {
            return Node::coord(rng.gen_range(0..dim));
        }
        return Node::linear(random_weights(rng, dim));
    }
    let arity = rng.gen_range(2..=3);
    match rng.gen_range(0..3) {
        0 => Node::max((0..arity).map(|_| random_node(rng, dim, depth - 1)).collect()),
        1 => Node::min((0..arity).map(|_| random_node(rng, dim, depth - 1)).collect()),
        _ => {
            let ws = random_weights(rng, arity);
            Node::combo(
                ws.into_iter()
                    .map(|w| (w, random_node(rng, dim, depth - 1)))
                    .collect(),
            )
        }
    }
}

/// Plug-in estimator of the directional derivative `g~_0(.)`:
/// `ghat_n(z) = g(z + eps^{-1}(beta~ - g(beta~) * 1_d))`, which by
/// equivariance equals the difference quotient
/// `eps^{-1} (g(beta~ + eps z) - g(beta~))`.
#[derive(Debug, Clone)]
pub struct GHatEstimator {
    map: EquivariantMap,
    beta_tilde: Vec<f64>,
    eps: f64,
    shift: Vec<f64>,
}

impl GHatEstimator {
    pub fn new(map: EquivariantMap, beta_tilde: Vec<f64>, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::invalid(format!("eps must be positive, got {eps}")));
        }
        let g_beta = map.eval(&beta_tilde)?;
        let shift: Vec<f64> = beta_tilde.iter().map(|&b| (b - g_beta) / eps).collect();
        Ok(GHatEstimator { map, beta_tilde, eps, shift })
    }

    pub fn map(&self) -> &EquivariantMap {
        &self.map
    }

    pub fn beta_tilde(&self) -> &[f64] {
        &self.beta_tilde
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// The precomputed shift `eps^{-1}(beta~ - g(beta~))`.
    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    /// Evaluates `ghat_n(z)`.
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        self.map.eval_with_offset(z, &self.shift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max2() -> EquivariantMap {
        EquivariantMap::coordinate_max(2)
    }

    #[test]
    fn eval_order_statistics() {
        assert_eq!(max2().eval(&[1.0, 0.0]).unwrap(), 1.0);
        let lin = EquivariantMap::linear(vec![0.5, 0.5]).unwrap();
        assert_eq!(lin.eval(&[2.0, 4.0]).unwrap(), 3.0);
        // max{min(x0,x1), x2}
        let m = EquivariantMap::new(
            Node::max(vec![Node::min(vec![Node::coord(0), Node::coord(1)]), Node::coord(2)]),
            3,
        )
        .unwrap();
        assert_eq!(m.eval(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
    }

    #[test]
    fn eval_rejects_bad_inputs() {
        assert!(max2().eval(&[1.0]).is_err());
        assert!(max2().eval(&[1.0, f64::NAN]).is_err());
        assert!(max2().eval(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn construction_rejects_invalid_trees() {
        assert!(EquivariantMap::linear(vec![0.5, 0.6]).is_err());
        assert!(EquivariantMap::new(Node::coord(2), 2).is_err());
        assert!(EquivariantMap::new(Node::max(vec![]), 2).is_err());
        assert!(EquivariantMap::new(
            Node::combo(vec![(0.7, Node::coord(0)), (0.2, Node::coord(1))]),
            2
        )
        .is_err());
    }

    #[test]
    fn dir_deriv_examples() {
        let m = max2();
        // unique argmax at coordinate 0
        assert_eq!(m.dir_deriv(&[1.0, 0.0], &[5.0, 100.0], None).unwrap(), 5.0);
        // tie: max over the argmax set
        assert_eq!(m.dir_deriv(&[0.0, 0.0], &[1.0, 2.0], None).unwrap(), 2.0);
        let mn = EquivariantMap::coordinate_min(2);
        assert_eq!(mn.dir_deriv(&[0.0, 0.0], &[1.0, 2.0], None).unwrap(), 1.0);
        // z = 0 gives 0 by positive homogeneity
        assert_eq!(m.dir_deriv(&[0.3, 0.9], &[0.0, 0.0], None).unwrap(), 0.0);
    }

    #[test]
    fn dir_deriv_positive_homogeneity() {
        let m = max2();
        let d1 = m.dir_deriv(&[0.0, 0.0], &[1.0, 2.0], None).unwrap();
        let d3 = m.dir_deriv(&[0.0, 0.0], &[3.0, 6.0], None).unwrap();
        assert_eq!(d3, 3.0 * d1);
    }

    #[test]
    fn tie_gap_reports_min_positive_gap() {
        let m = max2();
        assert_eq!(m.tie_gap(&[1.0, 0.25]).unwrap(), 0.75);
        assert_eq!(m.tie_gap(&[0.5, 0.5]).unwrap(), f64::INFINITY);
        let lin = EquivariantMap::linear(vec![0.5, 0.5]).unwrap();
        assert_eq!(lin.tie_gap(&[3.0, 7.0]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn g_hat_matches_spec_examples() {
        let m = max2();
        // unique argmax far from tie
        let est = GHatEstimator::new(m.clone(), vec![1.0, 0.0], 0.1).unwrap();
        assert!((est.eval(&[0.3, 0.2]).unwrap() - 0.3).abs() < 1e-15);
        // at an exact tie ghat_n equals g itself
        let est = GHatEstimator::new(m, vec![0.0, 0.0], 0.1).unwrap();
        assert_eq!(est.eval(&[1.0, 2.0]).unwrap(), 2.0);
    }

    #[test]
    fn g_hat_converges_to_dir_deriv() {
        let m = max2();
        let beta = [1.0, 0.0];
        let z = [0.4, -0.7];
        let exact = m.dir_deriv(&beta, &z, None).unwrap();
        for eps in [1e-1, 1e-2, 1e-3] {
            let est = GHatEstimator::new(m.clone(), beta.to_vec(), eps).unwrap();
            // gap = 1, |z|_inf < 1, so every eps below 1 is already exact
            assert_eq!(est.eval(&z).unwrap(), exact);
        }
    }

    #[test]
    fn g_hat_rejects_bad_eps() {
        assert!(GHatEstimator::new(max2(), vec![0.0, 0.0], 0.0).is_err());
        assert!(GHatEstimator::new(max2(), vec![0.0, 0.0], -0.5).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = EquivariantMap::new(
            Node::combo(vec![
                (0.75, Node::max(vec![Node::coord(0), Node::coord(1)])),
                (0.25, Node::linear(vec![0.5, 0.5])),
            ]),
            2,
        )
        .unwrap();
        let s = m.to_json();
        let back = EquivariantMap::from_json(&s).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.eval(&[0.2, 0.9]).unwrap(), back.eval(&[0.2, 0.9]).unwrap());
    }

    #[test]
    fn json_schema_shape() {
        let m = max2();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["kind"], "max");
        assert_eq!(v["children"][0]["kind"], "coord");
        assert_eq!(v["children"][0]["index"], 0);
    }

    #[test]
    fn lipschitz_propagates() {
        let m = EquivariantMap::new(
            Node::combo(vec![
                (1.25, Node::linear(vec![0.75, 0.25])),
                (-0.25, Node::coord(0)),
            ]),
            2,
        )
        .unwrap();
        // |1.25| * 1.0 + |-0.25| * 1.0
        assert!((m.lipschitz() - 1.5).abs() < 1e-15);
    }
}
