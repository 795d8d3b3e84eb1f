//! The outer map `f`: Lipschitz, continuously differentiable except at a
//! finite set of kinks, with a Lipschitz derivative on each piece. Also
//! the loss family `tau` with optional truncation `tau_M = min(tau, M)`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::substream;

/// Inputs beyond this magnitude are clamped before piecewise evaluation;
/// the map is represented on the reals only.
const DOMAIN_CLAMP: f64 = 1e300;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One piece of a transform, defined on an open interval between kinks.
#[derive(Clone)]
pub enum Piece {
    /// `x -> slope * x + intercept`; derivative-Lipschitz bound is zero.
    Affine { slope: f64, intercept: f64 },
    /// A smooth piece with a caller-declared bound on the Lipschitz
    /// constant of its derivative (spot-checked at construction).
    Smooth {
        value: ScalarFn,
        deriv: ScalarFn,
        deriv_lipschitz: f64,
    },
}

impl Piece {
    pub fn affine(slope: f64, intercept: f64) -> Piece {
        Piece::Affine { slope, intercept }
    }

    pub fn smooth(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv_lipschitz: f64,
    ) -> Piece {
        Piece::Smooth {
            value: Arc::new(value),
            deriv: Arc::new(deriv),
            deriv_lipschitz,
        }
    }

    fn value(&self, x: f64) -> f64 {
        match self {
            Piece::Affine { slope, intercept } => slope * x + intercept,
            Piece::Smooth { value, .. } => value(x),
        }
    }

    fn deriv(&self, x: f64) -> f64 {
        match self {
            Piece::Affine { slope, .. } => *slope,
            Piece::Smooth { deriv, .. } => deriv(x),
        }
    }

    fn deriv_lipschitz(&self) -> f64 {
        match self {
            Piece::Affine { .. } => 0.0,
            Piece::Smooth { deriv_lipschitz, .. } => *deriv_lipschitz,
        }
    }
}

impl fmt::Debug for Piece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Piece::Affine { slope, intercept } => {
                write!(f, "Affine({slope}*x + {intercept})")
            }
            Piece::Smooth { deriv_lipschitz, .. } => {
                write!(f, "Smooth(deriv_lipschitz={deriv_lipschitz})")
            }
        }
    }
}

/// Result of the local derivative supremum: the grid maximum plus a
/// certified bound on how much the true supremum can exceed it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AHat {
    pub value: f64,
    pub slack: f64,
}

/// A piecewise continuously differentiable map with finitely many kinks.
#[derive(Debug, Clone)]
pub struct Transform {
    kinks: Vec<f64>,
    pieces: Vec<Piece>,
    lipschitz: f64,
}

impl Transform {
    /// Builds a transform from sorted kinks and `kinks.len() + 1` pieces,
    /// validating continuity, the declared derivative-Lipschitz bounds,
    /// and non-constancy.
    pub fn new(kinks: Vec<f64>, pieces: Vec<Piece>) -> Result<Self> {
        if pieces.len() != kinks.len() + 1 {
            return Err(Error::dim(format!(
                "{} kinks require {} pieces, got {}",
                kinks.len(),
                kinks.len() + 1,
                pieces.len()
            )));
        }
        crate::error::ensure_finite("kinks", &kinks)?;
        if kinks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("kinks must be strictly increasing"));
        }
        for (j, k) in kinks.iter().enumerate() {
            let left = pieces[j].value(*k);
            let right = pieces[j + 1].value(*k);
            let tol = 1e-12 * left.abs().max(right.abs()).max(1.0);
            if (left - right).abs() > tol {
                return Err(Error::invalid(format!(
                    "discontinuous at kink {k}: left {left} vs right {right}"
                )));
            }
        }
        let t = Transform { kinks, pieces, lipschitz: 0.0 };
        t.spot_check_deriv_lipschitz()?;
        let lipschitz = t.max_abs_deriv_on_grid();
        if lipschitz == 0.0 {
            return Err(Error::invalid(
                "transform is constant on the sampling grid; a non-constant map is required",
            ));
        }
        Ok(Transform { lipschitz, ..t })
    }

    /// `f(x) = x`.
    pub fn identity() -> Self {
        Self::new(vec![], vec![Piece::affine(1.0, 0.0)]).expect("valid")
    }

    /// `f(x) = |x|`.
    pub fn abs() -> Self {
        Self::new(vec![0.0], vec![Piece::affine(-1.0, 0.0), Piece::affine(1.0, 0.0)])
            .expect("valid")
    }

    /// `f(x) = max(x, 0)`.
    pub fn relu() -> Self {
        Self::new(vec![0.0], vec![Piece::affine(0.0, 0.0), Piece::affine(1.0, 0.0)])
            .expect("valid")
    }

    /// `f(x) = max(a*x + b, 0)` for `a != 0`.
    pub fn relu_affine(a: f64, b: f64) -> Result<Self> {
        if a == 0.0 || !a.is_finite() || !b.is_finite() {
            return Err(Error::invalid("relu_affine requires finite a != 0"));
        }
        let kink = -b / a;
        let (left, right) = if a > 0.0 {
            (Piece::affine(0.0, 0.0), Piece::affine(a, b))
        } else {
            (Piece::affine(a, b), Piece::affine(0.0, 0.0))
        };
        Self::new(vec![kink], vec![left, right])
    }

    /// `f(x) = min(max(x, lo), hi)`.
    pub fn clamp(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("clamp requires lo < hi, got [{lo}, {hi}]")));
        }
        Self::new(
            vec![lo, hi],
            vec![Piece::affine(0.0, lo), Piece::affine(1.0, 0.0), Piece::affine(0.0, hi)],
        )
    }

    /// Piecewise-linear interpolant of breakpoints, extended beyond the
    /// first and last breakpoint with the end segments' slopes. Every
    /// breakpoint is kept as a declared kink.
    pub fn piecewise_linear(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("piecewise_linear needs at least two points"));
        }
        for &(x, y) in points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::invalid("piecewise_linear points must be finite"));
            }
        }
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid("breakpoint x values must be strictly increasing"));
        }
        let seg = |a: (f64, f64), b: (f64, f64)| -> Piece {
            let slope = (b.1 - a.1) / (b.0 - a.0);
            Piece::affine(slope, a.1 - slope * a.0)
        };
        let mut pieces = Vec::with_capacity(points.len() + 1);
        pieces.push(seg(points[0], points[1]));
        for w in points.windows(2) {
            pieces.push(seg(w[0], w[1]));
        }
        pieces.push(seg(points[points.len() - 2], points[points.len() - 1]));
        let kinks = points.iter().map(|p| p.0).collect();
        Self::new(kinks, pieces)
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    /// Lipschitz constant of `f`: exact for affine pieces, a sampling
    /// estimate for smooth pieces.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Index of the piece whose closure evaluation is used at `x`
    /// (the left piece when `x` is exactly a kink).
    fn piece_index(&self, x: f64) -> usize {
        self.kinks.partition_point(|&k| k < x)
    }

    /// Evaluates `f(x)`. At a kink the two sides agree (validated at
    /// construction); inputs beyond `1e300` in magnitude are clamped.
    pub fn eval(&self, x: f64) -> f64 {
        let x = if x.is_nan() { f64::NAN } else { x.clamp(-DOMAIN_CLAMP, DOMAIN_CLAMP) };
        self.pieces[self.piece_index(x)].value(x)
    }

    /// Derivative at an interior point; at a kink, the left derivative.
    /// Use [`Transform::f_bar_prime`] for the two-sided envelope.
    pub fn derivative(&self, x: f64) -> f64 {
        self.pieces[self.piece_index(x)].deriv(x)
    }

    /// The derivative envelope: `|f'(x)|` inside a piece, and the larger
    /// of the absolute one-sided derivatives at a kink.
    pub fn f_bar_prime(&self, x: f64) -> f64 {
        let x = x.clamp(-DOMAIN_CLAMP, DOMAIN_CLAMP);
        let idx = self.piece_index(x);
        let here = self.pieces[idx].deriv(x).abs();
        if idx < self.kinks.len() && self.kinks[idx] == x {
            here.max(self.pieces[idx + 1].deriv(x).abs())
        } else {
            here
        }
    }

    /// Supremum of `|f'|` over `[g_val - eps, g_val + eps]` intersected
    /// with the differentiability points.
    ///
    /// Candidates are the interval endpoints, one-sided limits at kinks
    /// inside the interval, and a uniform grid of spacing `eps/32` per
    /// overlapping piece. The returned slack (derivative-Lipschitz bound
    /// times half the grid spacing) certifies the gap to the true
    /// supremum; it is zero for piecewise-linear transforms.
    pub fn a_hat(&self, g_val: f64, eps: f64) -> Result<AHat> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::invalid(format!("eps must be positive, got {eps}")));
        }
        if !g_val.is_finite() {
            return Err(Error::invalid("g_val must be finite"));
        }
        let lo = g_val - eps;
        let hi = g_val + eps;
        let target_h = eps / 32.0;
        let mut value: f64 = 0.0;
        let mut slack: f64 = 0.0;
        for (i, piece) in self.pieces.iter().enumerate() {
            let a = if i == 0 { f64::NEG_INFINITY } else { self.kinks[i - 1] };
            let b = if i == self.kinks.len() { f64::INFINITY } else { self.kinks[i] };
            let s = a.max(lo);
            let t = b.min(hi);
            if s > t {
                continue;
            }
            if s == t {
                value = value.max(piece.deriv(s).abs());
                continue;
            }
            let n = ((t - s) / target_h).ceil().max(1.0) as usize;
            let h = (t - s) / n as f64;
            for k in 0..=n {
                let x = if k == n { t } else { s + k as f64 * h };
                value = value.max(piece.deriv(x).abs());
            }
            slack = slack.max(piece.deriv_lipschitz() * h / 2.0);
        }
        Ok(AHat { value, slack })
    }

    fn sample_points_for_piece(&self, i: usize) -> Vec<f64> {
        let a = if i == 0 { f64::NEG_INFINITY } else { self.kinks[i - 1] };
        let b = if i == self.kinks.len() { f64::INFINITY } else { self.kinks[i] };
        let (lo, hi) = match (a.is_finite(), b.is_finite()) {
            (true, true) => (a, b),
            (true, false) => (a, a + 10.0),
            (false, true) => (b - 10.0, b),
            (false, false) => (-10.0, 10.0),
        };
        (1..=7).map(|k| lo + (hi - lo) * k as f64 / 8.0).collect()
    }

    fn max_abs_deriv_on_grid(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.pieces.len() {
            for x in self.sample_points_for_piece(i) {
                m = m.max(self.pieces[i].deriv(x).abs());
            }
        }
        m
    }

    fn spot_check_deriv_lipschitz(&self) -> Result<()> {
        let mut rng = substream(0x7261_6e64, &[self.pieces.len() as u64]);
        for (i, piece) in self.pieces.iter().enumerate() {
            if matches!(piece, Piece::Affine { .. }) {
                continue;
            }
            let bound = piece.deriv_lipschitz();
            if !(bound >= 0.0) || !bound.is_finite() {
                return Err(Error::invalid("deriv_lipschitz must be finite and nonnegative"));
            }
            let pts = self.sample_points_for_piece(i);
            let (lo, hi) = (pts[0], pts[pts.len() - 1]);
            for _ in 0..32 {
                let x = rng.gen_range(lo..=hi);
                let y = rng.gen_range(lo..=hi);
                let lhs = (piece.deriv(x) - piece.deriv(y)).abs();
                let rhs = bound * (x - y).abs();
                if lhs > rhs * (1.0 + 1e-9) + 1e-9 {
                    return Err(Error::invalid(format!(
                        "piece {i} violates its derivative-Lipschitz bound {bound} \
                         between {x} and {y}: |df| = {lhs}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Serializable descriptors for the built-in transforms,
/// e.g. `{"kind":"clamp","lo":0,"hi":1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    Identity,
    Abs,
    Relu,
    ReluAffine { a: f64, b: f64 },
    Clamp { lo: f64, hi: f64 },
    Pwl { points: Vec<(f64, f64)> },
}

impl TransformSpec {
    pub fn build(&self) -> Result<Transform> {
        match self {
            TransformSpec::Identity => Ok(Transform::identity()),
            TransformSpec::Abs => Ok(Transform::abs()),
            TransformSpec::Relu => Ok(Transform::relu()),
            TransformSpec::ReluAffine { a, b } => Transform::relu_affine(*a, *b),
            TransformSpec::Clamp { lo, hi } => Transform::clamp(*lo, *hi),
            TransformSpec::Pwl { points } => Transform::piecewise_linear(points),
        }
    }
}

/// The base loss shape.
#[derive(Clone)]
pub enum LossKind {
    /// `tau(x) = |x|^p` with `p >= 1`.
    Power(f64),
    /// A user-supplied increasing map with `tau(0) = 0`.
    Custom(ScalarFn),
}

impl fmt::Debug for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Power(p) => write!(f, "Power({p})"),
            LossKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// An estimation loss `tau(|d - theta|)`, optionally truncated at `M`.
#[derive(Debug, Clone)]
pub struct Loss {
    kind: LossKind,
    trunc: Option<f64>,
}

impl Loss {
    pub fn power(p: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::invalid(format!("power loss requires p >= 1, got {p}")));
        }
        Ok(Loss { kind: LossKind::Power(p), trunc: None })
    }

    pub fn power_truncated(p: f64, m: f64) -> Result<Self> {
        Loss::power(p)?.with_truncation(m)
    }

    /// Wraps a user-supplied increasing `tau` with `tau(0) = 0`;
    /// monotonicity and the truncated-Lipschitz property are checked on
    /// a grid of `[0, 100]`.
    pub fn custom(tau: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let tau: ScalarFn = Arc::new(tau);
        if tau(0.0).abs() > 1e-12 {
            return Err(Error::invalid("loss must satisfy tau(0) = 0"));
        }
        let mut prev: f64 = 0.0;
        for k in 1..=1000 {
            let x = k as f64 * 0.1;
            let v = tau(x);
            if !v.is_finite() {
                return Err(Error::invalid(format!("loss is not finite at {x}")));
            }
            if v < prev - 1e-12 * prev.abs().max(1.0) {
                return Err(Error::invalid(format!("loss is decreasing near {x}")));
            }
            prev = v;
        }
        Ok(Loss { kind: LossKind::Custom(tau), trunc: None })
    }

    /// Sets the truncation level `M > 0`.
    pub fn with_truncation(mut self, m: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::invalid(format!("truncation level must be positive, got {m}")));
        }
        self.trunc = Some(m);
        Ok(self)
    }

    pub fn truncation(&self) -> Option<f64> {
        self.trunc
    }

    /// The exponent when this is a power loss.
    pub fn power_exponent(&self) -> Option<f64> {
        match self.kind {
            LossKind::Power(p) => Some(p),
            LossKind::Custom(_) => None,
        }
    }

    /// Base loss shape without truncation.
    #[inline]
    pub fn tau(&self, x: f64) -> f64 {
        let a = x.abs();
        match &self.kind {
            LossKind::Power(p) => {
                if *p == 2.0 {
                    a * a
                } else if *p == 1.0 {
                    a
                } else {
                    a.powf(*p)
                }
            }
            LossKind::Custom(f) => f(a),
        }
    }

    /// `tau_M(|x|)` using this loss's own truncation when set.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let v = self.tau(x);
        match self.trunc {
            Some(m) => v.min(m),
            None => v,
        }
    }

    /// `min(tau(|x|), level, own truncation)`; the risk simulator always
    /// evaluates at its box bound `M1` through this.
    #[inline]
    pub fn eval_truncated(&self, x: f64, level: f64) -> f64 {
        let v = self.eval(x);
        v.min(level)
    }

    /// Lipschitz constant of `min(tau, m)`: exact for power losses,
    /// a grid estimate otherwise.
    pub fn lipschitz_at(&self, m: f64) -> f64 {
        match &self.kind {
            LossKind::Power(p) => {
                if *p == 1.0 {
                    1.0
                } else {
                    p * m.powf((p - 1.0) / p)
                }
            }
            LossKind::Custom(f) => {
                let mut c: f64 = 0.0;
                let h = 0.05;
                let mut prev = 0.0;
                for k in 1..=2000 {
                    let v = f(k as f64 * h).min(m);
                    c = c.max((v - prev).abs() / h);
                    prev = v;
                }
                c
            }
        }
    }
}

/// Serializable loss descriptor, e.g. `{"kind":"power_loss","p":2,"trunc":10}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    PowerLoss {
        p: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trunc: Option<f64>,
    },
}

impl LossSpec {
    pub fn build(&self) -> Result<Loss> {
        match self {
            LossSpec::PowerLoss { p, trunc } => {
                let loss = Loss::power(*p)?;
                match trunc {
                    Some(m) => loss.with_truncation(*m),
                    None => Ok(loss),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_evaluates_censored_regions() {
        let f = Transform::clamp(0.0, 1.0).unwrap();
        assert_eq!(f.eval(0.5), 0.5);
        assert_eq!(f.eval(-3.0), 0.0);
        assert_eq!(f.eval(2.0), 1.0);
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.eval(1.0), 1.0);
    }

    #[test]
    fn abs_and_relu_evaluate() {
        assert_eq!(Transform::abs().eval(-2.0), 2.0);
        assert_eq!(Transform::relu().eval(-2.0), 0.0);
        assert_eq!(Transform::relu().eval(2.0), 2.0);
    }

    #[test]
    fn envelope_at_kinks_takes_the_larger_side() {
        let relu = Transform::relu();
        assert_eq!(relu.f_bar_prime(0.0), 1.0);
        assert_eq!(relu.f_bar_prime(-1.0), 0.0);
        assert_eq!(relu.f_bar_prime(1.0), 1.0);
        let abs = Transform::abs();
        for x in [-3.0, -0.1, 0.0, 0.1, 3.0] {
            assert_eq!(abs.f_bar_prime(x), 1.0);
        }
    }

    #[test]
    fn a_hat_spec_examples() {
        let f = Transform::clamp(0.0, 1.0).unwrap();
        let a = f.a_hat(0.5, 0.1).unwrap();
        assert_eq!(a.value, 1.0);
        assert_eq!(a.slack, 0.0);
        let a = f.a_hat(1.2, 0.1).unwrap();
        assert_eq!(a.value, 0.0);
        let a = f.a_hat(1.05, 0.1).unwrap();
        assert_eq!(a.value, 1.0);
    }

    #[test]
    fn a_hat_monotone_in_eps_and_dominates_envelope() {
        let f = Transform::piecewise_linear(&[(-1.0, 1.0), (0.0, 0.0), (2.0, 1.0)]).unwrap();
        let mut prev = 0.0;
        for k in 1..=20 {
            let eps = 0.05 * k as f64;
            let a = f.a_hat(0.3, eps).unwrap().value;
            assert!(a >= prev);
            assert!(a >= f.f_bar_prime(0.3));
            prev = a;
        }
    }

    #[test]
    fn rejects_discontinuous_pieces() {
        let r = Transform::new(
            vec![0.0],
            vec![Piece::affine(1.0, 0.0), Piece::affine(1.0, 0.5)],
        );
        assert!(r.is_err());
    }

    #[test]
    fn rejects_constant_transform() {
        let r = Transform::new(vec![], vec![Piece::affine(0.0, 3.0)]);
        assert!(r.is_err());
    }

    #[test]
    fn rejects_false_deriv_lipschitz_bound() {
        // derivative 10x declared with Lipschitz bound 1
        let r = Transform::new(
            vec![],
            vec![Piece::smooth(|x| 5.0 * x * x, |x| 10.0 * x, 1.0)],
        );
        assert!(r.is_err());
        let ok = Transform::new(
            vec![],
            vec![Piece::smooth(|x| 5.0 * x * x, |x| 10.0 * x, 10.0)],
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn smooth_a_hat_reports_slack() {
        let f = Transform::new(
            vec![],
            vec![Piece::smooth(|x| 0.5 * x * x, |x| x, 1.0)],
        )
        .unwrap();
        let a = f.a_hat(2.0, 0.5).unwrap();
        // sup over [1.5, 2.5] of |x| is 2.5, on the grid exactly at the endpoint
        assert!((a.value - 2.5).abs() < 1e-12);
        assert!(a.slack > 0.0 && a.slack <= 1.0 * (0.5 / 32.0) / 2.0 + 1e-15);
    }

    #[test]
    fn relu_affine_encodes_shifted_kink() {
        let f = Transform::relu_affine(2.0, -1.0).unwrap();
        assert_eq!(f.eval(0.7), 2.0 * 0.7 - 1.0);
        assert_eq!(f.eval(0.3), 0.0);
        assert_eq!(f.f_bar_prime(0.5), 2.0);
    }

    #[test]
    fn loss_examples() {
        let l = Loss::power(2.0).unwrap();
        assert_eq!(l.eval(3.0), 9.0);
        let l = Loss::power_truncated(2.0, 5.0).unwrap();
        assert_eq!(l.eval(3.0), 5.0);
        let l = Loss::power(1.0).unwrap();
        assert_eq!(l.eval(-2.0), 2.0);
        assert_eq!(l.eval(0.0), 0.0);
    }

    #[test]
    fn loss_monotone_on_grid() {
        let l = Loss::power_truncated(1.5, 8.0).unwrap();
        let mut prev = -1.0;
        for k in 0..200 {
            let v = l.eval(k as f64 * 0.5);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn power_scaling_identity() {
        let l = Loss::power(2.0).unwrap();
        for (a, x) in [(0.0, 3.0), (0.5, 2.0), (2.0, 1.5)] {
            let lhs = l.eval(a * x);
            let rhs = a.powi(2) * l.eval(x);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn custom_loss_validation() {
        assert!(Loss::custom(|x| x + 1.0).is_err()); // tau(0) != 0
        assert!(Loss::custom(|x| -x).is_err()); // decreasing
        let l = Loss::custom(|x| x.sqrt().min(3.0) * x.sqrt()).unwrap();
        assert!(l.eval(4.0) > 0.0);
    }

    #[test]
    fn lipschitz_at_matches_power_formula() {
        let l = Loss::power(2.0).unwrap();
        assert!((l.lipschitz_at(10.0) - 2.0 * 10.0_f64.sqrt()).abs() < 1e-12);
        let l1 = Loss::power(1.0).unwrap();
        assert_eq!(l1.lipschitz_at(10.0), 1.0);
    }

    #[test]
    fn spec_round_trip() {
        let spec: TransformSpec = serde_json::from_str(r#"{"kind":"clamp","lo":0,"hi":1}"#).unwrap();
        assert_eq!(spec, TransformSpec::Clamp { lo: 0.0, hi: 1.0 });
        spec.build().unwrap();
        let ls: LossSpec = serde_json::from_str(r#"{"kind":"power_loss","p":2,"trunc":10}"#).unwrap();
        let loss = ls.build().unwrap();
        assert_eq!(loss.truncation(), Some(10.0));
    }

    #[test]
    fn huge_inputs_are_clamped() {
        let f = Transform::relu();
        assert!(f.eval(f64::MAX).is_finite());
        assert_eq!(f.eval(-f64::MAX), 0.0);
    }
}
