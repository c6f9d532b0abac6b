//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with the measured quantities.
//!
//! Criterion 1 pins the oracle against three published reference values.
//! The second and third of those targets are not reproducible from their
//! stated instances (see the criterion-1 test body for the measured
//! evidence); the assertions are kept as stated rather than weakened, so
//! that test documents the discrepancy by failing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use banditest::expfam::{ExpFamilyModel, FamilyKind, ParamVec};
use banditest::glr::{all_statistics, PosteriorState, PriorHyper};
use banditest::harness::{csv_string, run_campaign, ExperimentConfig, FamilySpec, GridSpec, PriorSpec, StructureSpec};
use banditest::hypotheses::{HypothesisKind, HypothesisStructure, NaturalParamVector};
use banditest::oracle::{odd_arm_phi, optimal_weights, optimal_weights_generic};

fn line(criterion: &str, pass: bool, detail: &str) -> bool {
    println!("[{criterion}] {}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn gauss_known_variance() -> ExpFamilyModel {
    ExpFamilyModel::new(FamilyKind::GaussianKnownVariance { sigma2: 1.0 }).unwrap()
}

/// K = 8 unit-variance Gaussian odd-arm instance: odd mean 0, common mean 1.
fn delay_instance() -> (HypothesisStructure, NaturalParamVector) {
    let s = HypothesisStructure::new(HypothesisKind::OddArm, 8, gauss_known_variance()).unwrap();
    let p = NaturalParamVector::new((0..8).map(|i| ParamVec::scalar(if i == 0 { 0.0 } else { 1.0 })).collect());
    (s, p)
}

#[test]
fn criterion_1_oracle_reference_values() {
    let mut ok = true;

    let t0 = Instant::now();
    let (s, p) = delay_instance();
    let d1 = optimal_weights(&s, 0, &p).unwrap().d_star;
    let e1 = t0.elapsed();
    ok &= line(
        "criterion 1a",
        (d1 - 0.1156).abs() < 1e-3 && e1.as_secs_f64() < 1.0,
        &format!("unknown-mean instance: D* = {d1:.6} vs target 0.1156 +/- 1e-3 in {e1:?}"),
    );

    let t0 = Instant::now();
    let model = ExpFamilyModel::new(FamilyKind::GaussianKnownMean { mu: 0.0 }).unwrap();
    let s = HypothesisStructure::new(HypothesisKind::OddArm, 8, model).unwrap();
    let eta = |v: f64| ParamVec::scalar(-0.5 / v);
    let p = NaturalParamVector::new((0..8).map(|i| eta(if i == 0 { 5.0 } else { 1.0 })).collect());
    let d2 = optimal_weights(&s, 0, &p).unwrap().d_star;
    let e2 = t0.elapsed();
    ok &= line(
        "criterion 1b",
        (d2 - 0.1392).abs() < 1e-3 && e2.as_secs_f64() < 1.0,
        &format!(
            "unknown-variance instance: D* = {d2:.6} vs target 0.1392 +/- 1e-3 in {e2:?} \
             (the target matches this instance computed with 7 arms, 0.139190, not 8)"
        ),
    );

    let t0 = Instant::now();
    let model = ExpFamilyModel::new(FamilyKind::GaussianBothUnknown).unwrap();
    let s = HypothesisStructure::new(HypothesisKind::OddArm, 8, model).unwrap();
    let eta2 = |mu: f64, v: f64| ParamVec::pair(mu / v, -0.5 / v);
    let p = NaturalParamVector::new(
        (0..8).map(|i| if i == 0 { eta2(0.0, 2.0) } else { eta2(1.0, 10.0) }).collect(),
    );
    let d3 = optimal_weights(&s, 0, &p).unwrap().d_star;
    let e3 = t0.elapsed();
    ok &= line(
        "criterion 1c",
        (d3 - 0.1653).abs() < 1e-3 && e3.as_secs_f64() < 1.0,
        &format!(
            "vector-parameter instance: D* = {d3:.6} vs target 0.1653 +/- 1e-3 in {e3:?} \
             (no arm-count or parameter-assignment variant of the instance reproduces the target; \
              the max-min value of the stated instance is 0.169374)"
        ),
    );

    assert!(ok, "criterion 1: unattained reference values (see lines above; measured {d1:.6}, {d2:.6}, {d3:.6})");
}

#[test]
fn criterion_2_closed_form_versus_generic_solver() {
    let mut ok = true;

    // The delay instance reduces to Phi(x) = 3x(1-x)/(6+x).
    let (s, p) = delay_instance();
    let mut max_formula_err = 0.0_f64;
    for i in 1..=39 {
        let x = i as f64 / 40.0;
        let phi = odd_arm_phi(&s, 0, &p, x).unwrap();
        max_formula_err = max_formula_err.max((phi - 3.0 * x * (1.0 - x) / (6.0 + x)).abs());
    }
    ok &= line(
        "criterion 2 reduction formula",
        max_formula_err < 1e-12,
        &format!("max |Phi - 3x(1-x)/(6+x)| = {max_formula_err:.2e}"),
    );

    let closed = optimal_weights(&s, 0, &p).unwrap();
    let generic = optimal_weights_generic(&s, 0, &p).unwrap();
    ok &= line(
        "criterion 2 analytic optimum",
        (closed.d_star - 0.11556).abs() < 5e-6 && (generic.d_star - 0.11556).abs() < 5e-6,
        &format!("closed form D* = {:.7}, generic D* = {:.7}, target 0.11556", closed.d_star, generic.d_star),
    );

    let mut rng = ChaCha12Rng::seed_from_u64(0xacce5501);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let k = rng.gen_range(3..=8);
        let s = HypothesisStructure::new(HypothesisKind::OddArm, k, gauss_known_variance()).unwrap();
        let theta: f64 = rng.gen_range(-1.0..1.0);
        let thetap = theta + rng.gen_range(0.5..2.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let p = NaturalParamVector::new(
            (0..k).map(|i| ParamVec::scalar(if i == 0 { theta } else { thetap })).collect(),
        );
        let a = optimal_weights(&s, 0, &p).unwrap().d_star;
        let b = optimal_weights_generic(&s, 0, &p).unwrap().d_star;
        worst = worst.max((a - b).abs());
    }
    ok &= line(
        "criterion 2 solver agreement",
        worst < 1e-5,
        &format!("max |closed - generic| over 20 random instances = {worst:.2e}"),
    );
    assert!(ok, "criterion 2 failed");
}

#[test]
fn criterion_3_exponential_family_suite() {
    let mut ok = true;
    let models = [
        ExpFamilyModel::new(FamilyKind::GaussianKnownVariance { sigma2: 1.0 }).unwrap(),
        ExpFamilyModel::new(FamilyKind::GaussianKnownVariance { sigma2: 3.0 }).unwrap(),
        ExpFamilyModel::new(FamilyKind::GaussianKnownMean { mu: 0.5 }).unwrap(),
        ExpFamilyModel::new(FamilyKind::GaussianBothUnknown).unwrap(),
        ExpFamilyModel::new(FamilyKind::Poisson).unwrap(),
        ExpFamilyModel::new(FamilyKind::Bernoulli).unwrap(),
    ];
    let mut rng = ChaCha12Rng::seed_from_u64(0xacce5503);
    let draw = |model: &ExpFamilyModel, rng: &mut ChaCha12Rng| match model.dim() {
        2 => ParamVec::pair(rng.gen_range(-2.0..2.0), rng.gen_range(-3.0..-0.05)),
        _ => match model.kind() {
            FamilyKind::GaussianKnownMean { .. } => ParamVec::scalar(rng.gen_range(-3.0..-0.05)),
            _ => ParamVec::scalar(rng.gen_range(-2.0..2.0)),
        },
    };

    let mut worst_roundtrip = 0.0_f64;
    for model in &models {
        for _ in 0..300 {
            let eta = draw(model, &mut rng);
            let kappa = model.to_expectation(&eta).unwrap();
            let back = model.to_natural(&kappa).unwrap();
            worst_roundtrip = worst_roundtrip.max(model.to_expectation(&back).unwrap().linf_dist(&kappa));
            worst_roundtrip = worst_roundtrip.max(back.linf_dist(&eta));
        }
    }
    ok &= line("criterion 3 duality", worst_roundtrip < 1e-9, &format!("max round-trip error {worst_roundtrip:.2e}"));

    let mut worst_kl = 0.0_f64;
    for _ in 0..1000 {
        let model = models[rng.gen_range(0..models.len())];
        let a = draw(&model, &mut rng);
        let b = draw(&model, &mut rng);
        let d1 = model.kl(&a, &b).unwrap();
        let d2 = model.kl_expectation_form(&a, &b).unwrap();
        let d3 = model.kl_hessian_form(&a, &b).unwrap();
        worst_kl = worst_kl.max((d1 - d2).abs()).max((d1 - d3).abs());
    }
    ok &= line(
        "criterion 3 divergence forms",
        worst_kl < 1e-7,
        &format!("max disagreement across 1000 random pairs {worst_kl:.2e}"),
    );

    let mut hessian_ok = true;
    let mut worst_sigma = 0.0_f64;
    for model in &models {
        let eta = model.reference_natural();
        let h = model.hessian_log_partition(&eta);
        let d = model.dim();
        let n = 120_000;
        let mut mean = [0.0; 2];
        let mut second = [[0.0; 2]; 2];
        for _ in 0..n {
            let t = model.suff_stat(model.sample(&eta, &mut rng).unwrap());
            for i in 0..d {
                mean[i] += t.get(i);
                for j in 0..d {
                    second[i][j] += t.get(i) * t.get(j);
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        for i in 0..d {
            for j in 0..d {
                let cov = second[i][j] / n as f64 - mean[i] * mean[j];
                let se = ((h[i][i] * h[j][j] + h[i][j] * h[i][j]).sqrt() / (n as f64).sqrt() * 2.0).max(1e-4);
                let sigmas = (cov - h[i][j]).abs() / se;
                worst_sigma = worst_sigma.max(sigmas);
                hessian_ok &= sigmas < 3.0;
            }
        }
    }
    ok &= line(
        "criterion 3 curvature = covariance",
        hessian_ok,
        &format!("max |sample cov - Hess(A)| = {worst_sigma:.2} standard errors"),
    );
    assert!(ok, "criterion 3 failed");
}

#[test]
fn criterion_4_glr_properties() {
    let mut ok = true;

    // Antisymmetry bound over ten thousand random states, half odd-arm,
    // half best-arm.
    let odd = HypothesisStructure::new(HypothesisKind::OddArm, 3, gauss_known_variance()).unwrap();
    let best = HypothesisStructure::new(HypothesisKind::BestArm { direction: 1.0 }, 2, gauss_known_variance()).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(0xacce5504);
    let mut worst_anti = f64::NEG_INFINITY;
    for i in 0..10_000 {
        let s = if i % 2 == 0 { &odd } else { &best };
        let k = s.arm_count();
        let prior = PriorHyper::uniform(s.model(), k, 1.0, None).unwrap();
        let mut st = PosteriorState::new(s.model(), k, prior).unwrap();
        for _ in 0..rng.gen_range(1..40) {
            let arm = rng.gen_range(0..k);
            st.update(s.model(), arm, rng.gen_range(-3.0..3.0));
        }
        let stats = all_statistics(s, &st).unwrap();
        for l in 0..k {
            for m in 0..k {
                if l != m {
                    let sum = (stats.log_avg[l] - stats.log_ml[m]) + (stats.log_avg[m] - stats.log_ml[l]);
                    worst_anti = worst_anti.max(sum);
                }
            }
        }
    }
    ok &= line(
        "criterion 4 antisymmetry",
        worst_anti <= 1e-9,
        &format!("max z_lm + z_ml over 10^4 random states = {worst_anti:.2e}"),
    );

    // Incremental bookkeeping equals recomputation from scratch.
    let mut inc = {
        let prior = PriorHyper::uniform(odd.model(), 3, 1.0, None).unwrap();
        PosteriorState::new(odd.model(), 3, prior).unwrap()
    };
    let script: Vec<(usize, f64)> =
        (0..500).map(|_| (rng.gen_range(0..3), rng.gen_range(-2.0..2.0))).collect();
    let mut worst_inc = 0.0_f64;
    for (step, &(arm, x)) in script.iter().enumerate() {
        inc.update(odd.model(), arm, x);
        let mut scratch = {
            let prior = PriorHyper::uniform(odd.model(), 3, 1.0, None).unwrap();
            PosteriorState::new(odd.model(), 3, prior).unwrap()
        };
        for &(a2, x2) in &script[..=step] {
            scratch.update(odd.model(), a2, x2);
        }
        let za = all_statistics(&odd, &inc).unwrap().z;
        let zb = all_statistics(&odd, &scratch).unwrap().z;
        for l in 0..3 {
            worst_inc = worst_inc.max((za[l] - zb[l]).abs());
        }
    }
    ok &= line(
        "criterion 4 incremental = scratch",
        worst_inc < 1e-9,
        &format!("max deviation over a 500-step script = {worst_inc:.2e}"),
    );

    // Drift: under deterministic tracking of the oracle weights on the
    // delay instance, Z_true(n)/n reaches D* within 10% at n = 10^4.
    let (s, truth) = delay_instance();
    let lam = optimal_weights(&s, 0, &truth).unwrap();
    let prior = PriorHyper::uniform(s.model(), 8, 1.0, None).unwrap();
    let mut st = PosteriorState::new(s.model(), 8, prior).unwrap();
    let mut counts = [0u64; 8];
    let n_total = 10_000u64;
    for n in 0..n_total {
        let arm = (0..8)
            .max_by(|&a, &b| {
                let sa = (n + 1) as f64 * lam.lambda_star.get(a) - counts[a] as f64;
                let sb = (n + 1) as f64 * lam.lambda_star.get(b) - counts[b] as f64;
                sa.partial_cmp(&sb).unwrap()
            })
            .unwrap();
        counts[arm] += 1;
        let x = s.model().sample(truth.arm(arm), &mut rng).unwrap();
        st.update(s.model(), arm, x);
    }
    let z = all_statistics(&s, &st).unwrap().z[0];
    let drift = z / n_total as f64;
    ok &= line(
        "criterion 4 drift",
        (drift - lam.d_star).abs() <= 0.1 * lam.d_star,
        &format!("Z(n)/n = {drift:.5} vs D* = {:.5} (10% band)", lam.d_star),
    );
    assert!(ok, "criterion 4 failed");
}

fn delay_campaign_config(log_l: Vec<f64>, gamma: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        structure: StructureSpec::OddArm {
            arm_count: 8,
            family: FamilySpec::GaussianKnownVariance { sigma2: 1.0 },
            odd_arm: 0,
            odd_param: vec![0.0],
            common_param: vec![1.0],
        },
        grid: GridSpec { log_l, gamma, beta: vec![0.5] },
        trials: 500,
        master_seed: 20240801,
        switch_cost: 1.0,
        prior: PriorSpec::default(),
        trace: false,
    }
}

#[test]
fn criterion_5_policy_statistics_at_desk_scale() {
    let mut ok = true;

    let cfg = delay_campaign_config(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![1.0]);
    let cells = run_campaign(&cfg).unwrap();
    let cfg02 = delay_campaign_config(vec![1.0, 3.0, 5.0], vec![0.2]);
    let cells02 = run_campaign(&cfg02).unwrap();

    // (a) empirical error rate within the admissibility budget.
    let mut admissible = true;
    let mut detail = String::new();
    for cell in cells.iter().chain(&cells02) {
        if ![1.0, 3.0, 5.0].contains(&cell.log_l) {
            continue;
        }
        let se = (cell.err_rate * (1.0 - cell.err_rate) / cell.trials_used as f64).sqrt();
        let bound = (-cell.log_l).exp() + 3.0 * se;
        admissible &= cell.err_rate <= bound + 1e-12;
        detail.push_str(&format!("logL={} gamma={}: {:.4} <= {:.4}; ", cell.log_l, cell.gamma, cell.err_rate, bound));
    }
    ok &= line("criterion 5a error rates", admissible, &detail);

    // (b) two-point slope of the mean delay against the threshold exponent.
    let tau_at = |log_l: f64| cells.iter().find(|c| c.log_l == log_l).unwrap().mean_tau;
    let slope = (tau_at(5.0) - tau_at(0.0)) / 5.0;
    ok &= line(
        "criterion 5b delay slope",
        (slope - 10.6).abs() <= 0.15 * 10.6,
        &format!("slope {slope:.2} vs 10.6 +/- 15% (E[tau]: {:.1} at 0, {:.1} at 5)", tau_at(0.0), tau_at(5.0)),
    );

    // (c) switching-cost bound for both switching parameters.
    let mut cost_ok = true;
    let mut cost_detail = String::new();
    for cell in cells.iter().chain(&cells02) {
        let bound = (1.0 + cell.gamma) * cell.mean_tau
            + 3.0 * (cell.se_cost + (1.0 + cell.gamma) * cell.se_tau);
        cost_ok &= cell.mean_cost <= bound;
        cost_detail.push_str(&format!("gamma={} logL={}: {:.1} <= {:.1}; ", cell.gamma, cell.log_l, cell.mean_cost, bound));
    }
    ok &= line("criterion 5c cost bound", cost_ok, &cost_detail);

    // (d) exploration floor: zero violations across every trial.
    let violations: u64 = cells.iter().chain(&cells02).map(|c| c.floor_violations).sum();
    let censored: u32 = cells.iter().chain(&cells02).map(|c| c.censored).sum();
    ok &= line(
        "criterion 5d exploration floor",
        violations == 0,
        &format!("{violations} violations, {censored} censored trials across {} cells", cells.len() + cells02.len()),
    );
    assert!(ok, "criterion 5 failed");
}

#[test]
fn criterion_6_campaign_determinism() {
    let cfg = delay_campaign_config(vec![1.0, 2.0], vec![0.5]);
    let mut cfg = cfg;
    cfg.trials = 60;
    let a = csv_string(&run_campaign(&cfg).unwrap());
    let b = csv_string(&run_campaign(&cfg).unwrap());
    let pass = a == b;
    line("criterion 6 determinism", pass, &format!("two runs, {} bytes each, identical: {pass}", a.len()));
    assert!(pass, "criterion 6 failed");
}
