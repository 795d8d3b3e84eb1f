//! Acceptance suite: one test per release criterion, each printing a
//! single pass line (run with `--nocapture` to see them). The tests
//! share a lock so wall-clock budgets are measured without interference;
//! the simulations themselves use all cores.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use minimax_core::equivariant::{EquivariantMap, GHatEstimator, Node};
use minimax_core::estimator::EpsRule;
use minimax_core::experiments::{
    diagonal_direction, discontinuity_sweep, robustified_risk, worst_case_risk, Directions,
    EstimatorKind, LocalRiskSpec, Perturbations, RobustSweepSpec,
};
use minimax_core::gaussian::GaussianLimit;
use minimax_core::nalgebra::DMatrix;
use minimax_core::risk::{oracle_curve, select_c_hat, EtaRule, GFn, RiskConfig};
use minimax_core::transform::{Loss, Transform};

static GATE: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn pass(n: u32, name: &str, detail: String, elapsed: Duration) {
    println!(
        "[acceptance] criterion {n:02} ({name}): PASS — {detail} [{:.2}s]",
        elapsed.as_secs_f64()
    );
}

fn budget(n: u32, name: &str, elapsed: Duration, limit: Duration) {
    assert!(
        elapsed <= limit,
        "criterion {n} ({name}): runtime {:.2}s exceeds the {:.0}s budget",
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
}

fn random_point(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-scale..scale)).collect()
}

// -------------------------------------------------------------------
// 1. Equivariance identities on 1,000 random (tree, x, c, u) draws.
// -------------------------------------------------------------------
#[test]
fn criterion_01_equivariance_suite() {
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_t: f64 = 0.0;
    let mut worst_s: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.gen_range(1..=5);
        let map = EquivariantMap::random(&mut rng, d, rng.gen_range(0..=3));
        let x = random_point(&mut rng, d, 4.0);
        let c: f64 = rng.gen_range(-4.0..4.0);
        let u: f64 = rng.gen_range(0.0..4.0);

        let gx = map.eval(&x).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let viol_t = (map.eval(&shifted).unwrap() - gx - c).abs();
        assert!(viol_t <= 1e-9, "translation violation {viol_t}");
        worst_t = worst_t.max(viol_t);

        let scaled: Vec<f64> = x.iter().map(|v| u * v).collect();
        let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let viol_s = (map.eval(&scaled).unwrap() - u * gx).abs();
        assert!(viol_s <= 1e-9 * (1.0 + u * norm), "scale violation {viol_s}");
        worst_s = worst_s.max(viol_s);
    }
    let elapsed = t0.elapsed();
    budget(1, "equivariance suite", elapsed, Duration::from_secs(1));
    pass(
        1,
        "equivariance suite",
        format!("1000 draws, max violations: translation {worst_t:.2e}, scale {worst_s:.2e}"),
        elapsed,
    );
}

// -------------------------------------------------------------------
// 2. Finite differences against the exact directional derivative.
// -------------------------------------------------------------------
#[test]
fn criterion_02_directional_derivative_oracle() {
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_small: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    let mut exact_cases = 0;
    for _ in 0..200 {
        let d = rng.gen_range(1..=5);
        let map = EquivariantMap::random(&mut rng, d, rng.gen_range(0..=3));
        let x: Vec<f64> =
            (0..d).map(|_| rng.gen_range(-32i64..=32) as f64 / 16.0).collect();
        let z: Vec<f64> =
            (0..d).map(|_| rng.gen_range(-32i64..=32) as f64 / 16.0).collect();
        let exact = map.dir_deriv(&x, &z, None).unwrap();

        let t = 1e-7;
        let xt: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + t * b).collect();
        let fd = (map.eval(&xt).unwrap() - map.eval(&x).unwrap()) / t;
        let err = (fd - exact).abs();
        assert!(err <= 1e-6, "finite difference error {err} at t=1e-7");
        worst_small = worst_small.max(err);

        let gap = map.tie_gap(&x).unwrap();
        let znorm = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gap.is_finite() && znorm > 0.0 {
            let ts = 0.5 * gap / (map.lipschitz().max(1.0) * znorm);
            let xs: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + ts * b).collect();
            let fd = (map.eval(&xs).unwrap() - map.eval(&x).unwrap()) / ts;
            let err = (fd - exact).abs();
            assert!(err <= 1e-12, "below the tie gap the difference must be exact: {err}");
            worst_exact = worst_exact.max(err);
            exact_cases += 1;
        }
    }
    let elapsed = t0.elapsed();
    pass(
        2,
        "directional-derivative oracle",
        format!(
            "200 trees: max error {worst_small:.2e} at t=1e-7; \
             {exact_cases} below-gap cases exact to {worst_exact:.2e}"
        ),
        elapsed,
    );
}

// -------------------------------------------------------------------
// 3. Plug-in derivative estimator: quotient identity and consistency.
// -------------------------------------------------------------------
#[test]
fn criterion_03_ghat_identity_and_consistency() {
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_id: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.gen_range(1..=5);
        let map = EquivariantMap::random(&mut rng, d, rng.gen_range(0..=3));
        let beta = random_point(&mut rng, d, 2.0);
        let z = random_point(&mut rng, d, 2.0);
        let eps = rng.gen_range(1e-3..1.0);
        let est = GHatEstimator::new(map.clone(), beta.clone(), eps).unwrap();
        let lhs = est.eval(&z).unwrap();
        let bz: Vec<f64> = beta.iter().zip(&z).map(|(b, v)| b + eps * v).collect();
        let rhs = (map.eval(&bz).unwrap() - map.eval(&beta).unwrap()) / eps;
        let err = (lhs - rhs).abs();
        assert!(err <= 1e-9 * (1.0 + lhs.abs()), "quotient identity violated: {err}");
        worst_id = worst_id.max(err);
    }

    // unique-argmax consistency: exact once eps clears the tie gap
    let mut exact_cases = 0;
    let mut worst_exact: f64 = 0.0;
    for trial in 0..200 {
        let d = 2 + (trial % 3);
        let children = (0..d).map(Node::coord).collect::<Vec<_>>();
        let map = EquivariantMap::new(
            if trial % 2 == 0 { Node::max(children) } else { Node::min(children) },
            d,
        )
        .unwrap();
        let mut beta = random_point(&mut rng, d, 2.0);
        beta[trial % d] += 3.0; // force a unique argmax with gap >= 1
        let z = random_point(&mut rng, d, 2.0);
        let gap = map.tie_gap(&beta).unwrap();
        let znorm = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !gap.is_finite() || znorm == 0.0 {
            continue;
        }
        let eps = 0.49 * gap / znorm;
        let est = GHatEstimator::new(map.clone(), beta.clone(), eps).unwrap();
        let err = (est.eval(&z).unwrap() - map.dir_deriv(&beta, &z, None).unwrap()).abs();
        assert!(err <= 1e-12, "below gap/|z| the estimator must be exact, got {err}");
        worst_exact = worst_exact.max(err);
        exact_cases += 1;
    }
    assert!(exact_cases >= 150);
    let elapsed = t0.elapsed();
    pass(
        3,
        "ghat identity and consistency",
        format!(
            "quotient identity to {worst_id:.2e} on 200 draws; \
             {exact_cases} unique-argmax cases exact to {worst_exact:.2e}"
        ),
        elapsed,
    );
}

// -------------------------------------------------------------------
// 4. Anderson's-Lemma case: linear g selects c ~ 0.
// -------------------------------------------------------------------
#[test]
fn criterion_04_linear_case_selects_zero() {
    let _g = serial();
    let t0 = Instant::now();
    let map = EquivariantMap::linear(vec![0.5, 0.5]).unwrap();
    let gfn = GFn::Map(&map);
    let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let limit = GaussianLimit::from_covariance(sigma).unwrap();
    let loss = Loss::power_truncated(2.0, 10.0).unwrap();
    let cfg = RiskConfig::new(2, 100_000, 10.0, 404);
    let curve = select_c_hat(&gfn, 1.0, &limit, &loss, &cfg).unwrap();
    let se = curve.mc_stderr[curve.c_values.len() / 2];
    let step = cfg.c_grid_step();
    let elapsed = t0.elapsed();
    assert!(
        curve.c_hat.abs() <= step + 3.0 * se,
        "c_hat {} exceeds grid step {step} + 3 x stderr {se}",
        curve.c_hat
    );
    budget(4, "linear case", elapsed, Duration::from_secs(30));
    pass(
        4,
        "linear case selects zero",
        format!("|c_hat| = {:.4} <= {:.4} (step + 3 se), L=1e5, d=2", curve.c_hat.abs(), step + 3.0 * se),
        elapsed,
    );
}

// -------------------------------------------------------------------
// 5. Closed-form risk for the one-dimensional identity problem.
// -------------------------------------------------------------------
#[test]
fn criterion_05_closed_form_identity_risk() {
    let _g = serial();
    let t0 = Instant::now();
    let map = EquivariantMap::identity_1d();
    let gfn = GFn::Map(&map);
    let limit = GaussianLimit::identity(1);
    let loss = Loss::power_truncated(2.0, 10.0).unwrap();
    let cfg = RiskConfig::new(1, 100_000, 10.0, 505);
    let curve = select_c_hat(&gfn, 1.0, &limit, &loss, &cfg).unwrap();
    let elapsed = t0.elapsed();
    assert!(
        (curve.min_b - 1.0).abs() <= 0.02,
        "min B = {} should be 1.00 +- 0.02 (closed form 1 + c^2)",
        curve.min_b
    );
    assert!(curve.c_hat.abs() <= 0.05, "c_hat = {} should be 0 +- 0.05", curve.c_hat);
    budget(5, "closed-form risk", elapsed, Duration::from_secs(10));
    pass(
        5,
        "closed-form identity risk",
        format!("min B = {:.4} (target 1.00 +- 0.02), c_hat = {:.4}", curve.min_b, curve.c_hat),
        elapsed,
    );
}

// -------------------------------------------------------------------
// 6. Convergence of the simulated curve to the oracle as L grows.
// -------------------------------------------------------------------
#[test]
fn criterion_06_curve_error_shrinks_at_root_l() {
    let _g = serial();
    let t0 = Instant::now();
    let map = EquivariantMap::coordinate_max(2);
    let f = Transform::identity();
    let limit = GaussianLimit::identity(2);
    let loss = Loss::power_truncated(2.0, 10.0).unwrap();

    let mut oracle_cfg = RiskConfig::new(2, 1_000_000, 10.0, 606_000);
    oracle_cfg.c_grid_size = 101;
    let oracle = oracle_curve(&[0.0, 0.0], &map, &f, &limit, &loss, &oracle_cfg).unwrap();

    // the estimated curve at beta~ = beta_0 isolates the Monte Carlo
    // error: the plug-in derivative estimator is exact at the tie
    let ghat = GHatEstimator::new(map.clone(), vec![0.0, 0.0], 0.1).unwrap();
    let a_hat = f.a_hat(0.0, 0.1).unwrap().value;
    let ls = [1_000usize, 4_000, 16_000];
    let mut mean_err = [0.0f64; 3];
    for seed in 0..10u64 {
        for (k, &l) in ls.iter().enumerate() {
            let mut cfg = RiskConfig::new(2, l, 10.0, 60_600 + seed);
            cfg.c_grid_size = 101;
            let curve = select_c_hat(&GFn::from_ghat(&ghat), a_hat, &limit, &loss, &cfg).unwrap();
            let err = curve
                .b_values
                .iter()
                .zip(oracle.b_values.iter())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            mean_err[k] += err / 10.0;
        }
    }
    let r1 = mean_err[1] / mean_err[0];
    let r2 = mean_err[2] / mean_err[1];
    let elapsed = t0.elapsed();
    assert!(
        mean_err[0] > mean_err[1] && mean_err[1] > mean_err[2],
        "errors must decrease: {mean_err:?}"
    );
    for (i, r) in [r1, r2].iter().enumerate() {
        assert!(
            (0.3..=0.8).contains(r),
            "error ratio {i} = {r:.3} outside [0.3, 0.8] (sqrt-L trend); errors {mean_err:?}"
        );
    }
    pass(
        6,
        "curve error sqrt-L trend",
        format!(
            "mean sup errors {:.4}/{:.4}/{:.4} at L=1e3/4e3/1.6e4; ratios {r1:.2}, {r2:.2}",
            mean_err[0], mean_err[1], mean_err[2]
        ),
        elapsed,
    );
}

// -------------------------------------------------------------------
// 7. Dispersion of the selected adjustment shrinks with L.
// -------------------------------------------------------------------
#[test]
fn criterion_07_c_hat_dispersion_shrinks() {
    let _g = serial();
    let t0 = Instant::now();
    let map = EquivariantMap::identity_1d();
    let gfn = GFn::Map(&map);
    let limit = GaussianLimit::identity(1);
    // absolute-error loss over a fine grid so the argmin moves smoothly
    let loss = Loss::power_truncated(1.0, 2.0).unwrap();
    let sd_at = |l: usize| -> f64 {
        let hats: Vec<f64> = (0..20u64)
            .map(|seed| {
                let mut cfg = RiskConfig::new(1, l, 2.0, 707_000 + seed);
                cfg.eta = EtaRule::Fixed(0.0);
                select_c_hat(&gfn, 1.0, &limit, &loss, &cfg).unwrap().c_hat
            })
            .collect();
        let mean = hats.iter().sum::<f64>() / hats.len() as f64;
        (hats.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / (hats.len() - 1) as f64)
            .sqrt()
    };
    let sd_small = sd_at(10_000);
    let sd_large = sd_at(100_000);
    let elapsed = t0.elapsed();
    let shrink = 1.0 - sd_large / sd_small;
    assert!(
        shrink >= 0.35,
        "c_hat dispersion must shrink by >= 35% from L=1e4 to L=1e5: \
         sd {sd_small:.5} -> {sd_large:.5} ({:.0}%)",
        shrink * 100.0
    );
    pass(
        7,
        "c_hat dispersion shrinks",
        format!(
            "sd over 20 seeds: {sd_small:.5} (L=1e4) -> {sd_large:.5} (L=1e5), shrink {:.0}%",
            shrink * 100.0
        ),
        elapsed,
    );
}

// -------------------------------------------------------------------
// 8. The adjusted estimator beats the plug-in at the tie point.
// -------------------------------------------------------------------
#[test]
fn criterion_08_estimator_dominance_at_the_tie() {
    let _g = serial();
    let t0 = Instant::now();
    let map = EquivariantMap::coordinate_max(2);
    let f = Transform::identity();
    let loss = Loss::power_truncated(2.0, 10.0).unwrap();
    let spec = LocalRiskSpec {
        beta0: vec![0.0, 0.0],
        sigma: DMatrix::identity(2, 2),
        b_grid: vec![0.0],
        n: 200,
        reps: 2_000,
        directions: Directions::Explicit(vec![vec![1.0, 0.0]]),
        loss: loss.clone(),
        seed: 808,
    };
    let mut inner = RiskConfig::new(2, 2_000, 10.0, 808);
    inner.c_grid_size = 81;
    inner.r_strategy.refine_rounds = 2;
    let minimax = EstimatorKind::Minimax { cfg: inner, eps_rule: EpsRule::CubeRoot };

    let t_plugin = worst_case_risk(&spec, &map, &f, &EstimatorKind::Plugin).unwrap();
    let t_minimax = worst_case_risk(&spec, &map, &f, &minimax).unwrap();
    let p = t_plugin.sup();
    let m = t_minimax.sup();
    let p_lo = p.risk - 1.96 * p.stderr;
    let m_hi = m.risk + 1.96 * m.stderr;

    // derived oracle for inf_c B(c) at the tie
    let mut oracle_cfg = RiskConfig::new(2, 200_000, 10.0, 80_800);
    oracle_cfg.c_grid_size = 101;
    let bound = oracle_curve(&spec.beta0, &map, &f, &GaussianLimit::identity(2), &loss, &oracle_cfg)
        .unwrap()
        .min_b;

    let elapsed = t0.elapsed();
    assert!(
        m.risk < p.risk && m_hi < p_lo,
        "95% CIs must be disjoint with the adjusted estimator below: \
         minimax {:.4} +- {:.4} vs plugin {:.4} +- {:.4}",
        m.risk,
        1.96 * m.stderr,
        p.risk,
        1.96 * p.stderr
    );
    let ciw = 1.96 * (p.stderr + m.stderr);
    assert!(
        (p.risk - bound).abs() <= 2.0 * ciw + 0.06,
        "plugin risk {:.4} should sit near the bound {bound:.4}",
        p.risk
    );
    assert!(
        m.risk <= bound + 2.0 * ciw,
        "adjusted risk {:.4} must not exceed the bound {bound:.4} at the tie",
        m.risk
    );
    budget(8, "estimator dominance", elapsed, Duration::from_secs(300));
    pass(
        8,
        "estimator dominance at the tie",
        format!(
            "minimax {:.4}+-{:.4} < plugin {:.4}+-{:.4}, bound {bound:.4}, R=2000 paired",
            m.risk,
            1.96 * m.stderr,
            p.risk,
            1.96 * p.stderr
        ),
        elapsed,
    );
}

// -------------------------------------------------------------------
// 9. The minimax risk jumps at a kink and stays flat for |x|.
// -------------------------------------------------------------------
#[test]
fn criterion_09_discontinuity_demonstration() {
    let _g = serial();
    let t0 = Instant::now();
    let map = EquivariantMap::identity_1d();
    let limit = GaussianLimit::identity(1);
    let loss = Loss::power_truncated(2.0, 10.0).unwrap();
    let mut cfg = RiskConfig::new(1, 100_000, 10.0, 909);
    cfg.c_grid_size = 201;
    let ts: Vec<f64> = (0..41).map(|i| -1.0 + i as f64 * 0.05).collect();

    let relu = discontinuity_sweep(&ts, |t| vec![t], &map, &Transform::relu(), &limit, &loss, &cfg)
        .unwrap();
    for row in &relu {
        if row.t < 0.0 {
            assert_eq!(row.min_b, 0.0, "t={}: risk must vanish on the flat piece", row.t);
        } else {
            assert!(
                (row.min_b - 1.0).abs() <= 0.02,
                "t={}: risk {} should be 1.00 +- 0.02",
                row.t,
                row.min_b
            );
        }
    }
    let jump = relu.iter().find(|r| r.t >= 0.0).unwrap().min_b
        - relu.iter().rev().find(|r| r.t < 0.0).unwrap().min_b;

    let abs_rows =
        discontinuity_sweep(&ts, |t| vec![t], &map, &Transform::abs(), &limit, &loss, &cfg)
            .unwrap();
    for row in &abs_rows {
        assert!(
            (row.min_b - 1.0).abs() <= 0.02,
            "control curve must be constant 1.00 +- 0.02, got {} at t={}",
            row.min_b,
            row.t
        );
    }
    let elapsed = t0.elapsed();
    budget(9, "discontinuity demonstration", elapsed, Duration::from_secs(60));
    pass(
        9,
        "discontinuity demonstration",
        format!(
            "kink jump 0 -> {:.4} at t=0; |x| control flat within {:.4}",
            jump,
            abs_rows
                .iter()
                .fold(0.0f64, |m, r| m.max((r.min_b - 1.0).abs()))
        ),
        elapsed,
    );
}

// -------------------------------------------------------------------
// 10. Local robustification leaves the worst-case risk unchanged.
// -------------------------------------------------------------------
#[test]
fn criterion_10_robustification_stability() {
    let _g = serial();
    let t0 = Instant::now();
    let map = EquivariantMap::coordinate_max(2);
    let f = Transform::identity();
    let loss = Loss::power_truncated(2.0, 10.0).unwrap();
    let n = 200;
    let base = LocalRiskSpec {
        beta0: vec![0.0, 0.0],
        sigma: DMatrix::identity(2, 2),
        b_grid: vec![0.0],
        n,
        reps: 600,
        directions: Directions::Explicit(vec![vec![1.0, 0.0]]),
        loss,
        seed: 1010,
    };
    let mut inner = RiskConfig::new(2, 2_000, 10.0, 1010);
    inner.c_grid_size = 81;
    inner.r_strategy.refine_rounds = 2;
    let minimax = EstimatorKind::Minimax { cfg: inner, eps_rule: EpsRule::CubeRoot };

    let eps_n = EpsRule::CubeRoot.resolve(n).unwrap();
    let diag = diagonal_direction(2);
    let sweep = RobustSweepSpec {
        base,
        eps_rule: EpsRule::CubeRoot,
        perturbations: Perturbations::Explicit(vec![
            vec![0.0, 0.0],
            diag.iter().map(|v| v * eps_n).collect(),
            diag.iter().map(|v| -v * eps_n).collect(),
        ]),
        oracle_cfg: {
            let mut c = RiskConfig::new(2, 100_000, 10.0, 101_000);
            c.c_grid_size = 101;
            c
        },
    };
    let report = robustified_risk(&sweep, &map, &f, &minimax).unwrap();
    let unrob = report.per_center[0].table.sup();
    let ciw = 1.96 * unrob.stderr;
    let elapsed = t0.elapsed();
    assert!(
        (report.overall_sup - unrob.risk).abs() <= 2.0 * ciw,
        "robustified sup {:.4} must stay within 2 CI widths ({:.4}) of the \
         unrobustified sup {:.4}",
        report.overall_sup,
        2.0 * ciw,
        unrob.risk
    );
    budget(10, "robustification stability", elapsed, Duration::from_secs(300));
    pass(
        10,
        "robustification stability",
        format!(
            "sup {:.4} vs unrobustified {:.4} (2 CI = {:.4}); eps_n = {eps_n:.3}, \
             tie-preserving ball",
            report.overall_sup,
            unrob.risk,
            2.0 * ciw
        ),
        elapsed,
    );
}

// -------------------------------------------------------------------
// 11. Byte-identical outputs across thread counts through the CLI.
// -------------------------------------------------------------------
#[test]
fn criterion_11_cli_determinism_across_threads() {
    let _g = serial();
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("p.json");
    std::fs::write(
        &cfg_path,
        r#"{
  "g": {"kind":"max","children":[{"kind":"coord","index":0},{"kind":"coord","index":1}]},
  "f": {"kind":"relu"},
  "loss": {"kind":"power_loss","p":2,"trunc":10},
  "risk": {"l": 20000, "m1": 10, "c_grid_size": 101},
  "sigma": [[1.0,0.25],[0.25,1.0]],
  "curve": {"mode": "ghat", "beta": [0.05,-0.03], "eps": 0.2},
  "seed": 11
}"#,
    )
    .unwrap();
    let data_path = dir.path().join("d.csv");
    let mut csv = String::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    for _ in 0..120 {
        csv.push_str(&format!("{},{}\n", rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    }
    std::fs::write(&data_path, csv).unwrap();

    let run = |threads: &str, tag: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let rep = format!("rep_{tag}.json");
        let curve = format!("curve_{tag}.csv");
        let side = format!("curve_{tag}.json");
        let ok = std::process::Command::new(env!("CARGO_BIN_EXE_minimax"))
            .current_dir(dir.path())
            .args([
                "estimate",
                "--data",
                data_path.to_str().unwrap(),
                "--config",
                cfg_path.to_str().unwrap(),
                "--seed",
                "11",
                "--out",
                &rep,
                "--threads",
                threads,
            ])
            .status()
            .unwrap()
            .success();
        assert!(ok);
        let ok = std::process::Command::new(env!("CARGO_BIN_EXE_minimax"))
            .current_dir(dir.path())
            .args([
                "risk-curve",
                "--config",
                cfg_path.to_str().unwrap(),
                "--out",
                &curve,
                "--threads",
                threads,
            ])
            .status()
            .unwrap()
            .success();
        assert!(ok);
        (
            std::fs::read(dir.path().join(&rep)).unwrap(),
            std::fs::read(dir.path().join(&curve)).unwrap(),
            std::fs::read(dir.path().join(&side)).unwrap(),
        )
    };
    let (rep1, curve1, side1) = run("1", "a");
    let (rep4, curve4, side4) = run("4", "b");
    let elapsed = t0.elapsed();
    assert_eq!(rep1, rep4, "estimate reports differ across thread counts");
    assert_eq!(curve1, curve4, "risk-curve CSVs differ across thread counts");
    assert_eq!(side1, side4, "sidecar JSONs differ across thread counts");
    pass(
        11,
        "CLI determinism across threads",
        format!(
            "report ({} B), curve CSV ({} B) and sidecar byte-identical at --threads 1 vs 4",
            rep1.len(),
            curve1.len()
        ),
        elapsed,
    );
}
