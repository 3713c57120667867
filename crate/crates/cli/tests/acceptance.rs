//! Acceptance suite: every release criterion as one test, printing a
//! PASS/FAIL line (visible under `--nocapture`).
//!
//! The default configuration runs the full 1000-replication studies
//! (minutes of wall time). Setting `ACCEPTANCE_SMOKE=1` switches to a
//! 200-replication smoke variant with proportionally widened bands.

use std::sync::LazyLock;
use std::time::Instant;

use excursion_core::bench::{
    analytic_relative_efficiency, efficiency_sweep, run_replications,
    simplified_mc_relative_efficiency, study_spec, AnySpec, SimulationReport, SweepGrid,
};
use excursion_core::data::{person_with_constant_prob, MrtDataset};
use excursion_core::estimator::{
    fit_point_estimates, jacobian, EstimatorKind, EstimatorSpec, JacobianMode,
};
use excursion_core::gee::{GeeSpec, WorkingCorrelation};
use excursion_core::outcomes::build_for_dataset;
use excursion_core::simgen::{generate_trial_stream, true_marginal_beta0, GenerativeConfig};
use excursion_core::weights::{compute_weights, window_weight, NumeratorPolicy};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn smoke() -> bool {
    std::env::var("ACCEPTANCE_SMOKE").is_ok_and(|v| !v.is_empty() && v != "0")
}

fn reps() -> usize {
    if smoke() {
        200
    } else {
        1000
    }
}

/// Band helper: full-mode band or the widened smoke band.
fn band(full: (f64, f64), smoke_band: (f64, f64)) -> (f64, f64) {
    if smoke() {
        smoke_band
    } else {
        full
    }
}

fn in_band(x: f64, b: (f64, f64)) -> bool {
    b.0 <= x && x <= b.1
}

fn report_line(num: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {num:02} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {num} [{name}] failed: {detail}");
}

fn delta3_config() -> GenerativeConfig<f64> {
    GenerativeConfig::new(100, 3, 0.2, 1101).unwrap()
}

fn delta10_config() -> GenerativeConfig<f64> {
    GenerativeConfig::new(100, 10, 0.2, 1110).unwrap()
}

static DELTA3_MARGINAL: LazyLock<SimulationReport<f64>> = LazyLock::new(|| {
    let gen = delta3_config();
    let specs = vec![
        AnySpec::Excursion(study_spec(EstimatorKind::PdEmee, false, 0.2)),
        AnySpec::Excursion(study_spec(EstimatorKind::Emee, false, 0.2)),
        AnySpec::Gee(GeeSpec::new(
            WorkingCorrelation::Independent,
            vec![0],
            vec![0, 1],
        )),
        AnySpec::Gee(GeeSpec::new(
            WorkingCorrelation::Exchangeable,
            vec![0],
            vec![0, 1],
        )),
    ];
    run_replications(&gen, &specs, reps(), &[true_marginal_beta0(&gen)]).unwrap()
});

static DELTA3_MODERATED: LazyLock<SimulationReport<f64>> = LazyLock::new(|| {
    let gen = delta3_config();
    let specs = vec![
        AnySpec::Excursion(study_spec(EstimatorKind::PdEmee, true, 0.2)),
        AnySpec::Excursion(study_spec(EstimatorKind::Emee, true, 0.2)),
    ];
    run_replications(&gen, &specs, reps(), &[0.1, 0.2]).unwrap()
});

static DELTA10_MARGINAL: LazyLock<SimulationReport<f64>> = LazyLock::new(|| {
    let gen = delta10_config();
    let specs = vec![
        AnySpec::Excursion(study_spec(EstimatorKind::PdEmee, false, 0.2)),
        AnySpec::Excursion(study_spec(EstimatorKind::Emee, false, 0.2)),
        AnySpec::Gee(GeeSpec::new(
            WorkingCorrelation::Exchangeable,
            vec![0],
            vec![0, 1],
        )),
    ];
    run_replications(&gen, &specs, reps(), &[true_marginal_beta0(&gen)]).unwrap()
});

static DELTA10_MODERATED: LazyLock<SimulationReport<f64>> = LazyLock::new(|| {
    let gen = delta10_config();
    let specs = vec![
        AnySpec::Excursion(study_spec(EstimatorKind::PdEmee, true, 0.2)),
        AnySpec::Excursion(study_spec(EstimatorKind::Emee, true, 0.2)),
    ];
    run_replications(&gen, &specs, reps(), &[0.1, 0.2]).unwrap()
});

#[test]
fn criterion_01_delta_one_equivalence() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let gen = GenerativeConfig::with_horizon(30, 20, 1, 0.2 + 0.01 * (i % 5) as f64, 500 + i)
            .unwrap();
        let data = generate_trial_stream(&gen, i).unwrap();
        let outcomes = build_for_dataset(&data).unwrap();
        let pd = study_spec(EstimatorKind::PdEmee, false, gen.p_a);
        let emee = study_spec(EstimatorKind::Emee, false, gen.p_a);
        let (_, b_pd) = fit_point_estimates(&data, &outcomes, &pd).unwrap();
        let (_, b_emee) = fit_point_estimates(&data, &outcomes, &emee).unwrap();
        worst = worst.max((b_pd[0] - b_emee[0]).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-10 && elapsed.as_secs_f64() < 10.0;
    report_line(
        1,
        "delta=1 pd-EMEE/EMEE equivalence",
        pass,
        &format!("max |diff| = {worst:.2e} over 50 datasets in {elapsed:.2?}"),
    );
}

// Exact identification check on an enumerable instance: T = 1, delta = 2,
// binary covariate, all probabilities rational. The potential-outcome law
// factorizes as
//   P(z) P(r2_0|z) P(r2_1|z,r2_0) P(r3_00|z,r2_0) P(r3_01|z,r2_0)
//        P(r3_10|z,r2_1) P(r3_11|z,r2_1),
// treatments are randomized with history-dependent rational probabilities,
// and the per-decision-weighted observed-data functional must equal the
// excursion mean E[Y(a, 0)] exactly.
#[test]
fn criterion_02_identification_brute_force() {
    type Q = Ratio<i64>;
    let start = Instant::now();
    let q = |n: i64, d: i64| Q::new(n, d);
    let bern = |p: Q, value: u8| if value == 1 { p } else { Q::new(1, 1) - p };

    let p_z1 = q(2, 5);
    let p_r2_0 = |z: u8| if z == 1 { q(3, 5) } else { q(1, 3) };
    let p_r2_1 = |z: u8, r2_0: u8| q(1 + i64::from(z) + i64::from(r2_0), 4);
    let p_r3 = |a1: u8, a2: u8, z: u8, r2_on_path: u8| -> Q {
        q(
            1 + i64::from(a1) + 2 * i64::from(a2) + i64::from(z) + i64::from(r2_on_path),
            7,
        )
    };
    let p_a1 = |z: u8| if z == 1 { q(2, 3) } else { q(1, 2) };
    let p_a2 = |z: u8, a1: u8, r2: u8| q(1 + i64::from(z) + i64::from(a1) + i64::from(r2), 5);

    let bits = |mask: u32, i: u32| ((mask >> i) & 1) as u8;
    let mut max_abs_diff = Q::new(0, 1);
    for a in 0..2u8 {
        // conditional and marginal accumulators: index by z
        let mut lhs = [Q::new(0, 1); 2]; // E[Y(a, 0) | z] * P(z)
        let mut rhs = [Q::new(0, 1); 2]; // E[W Y | A1 = a, z] * P(z)
        let mut p_z_acc = [Q::new(0, 1); 2];
        for mask in 0..(1u32 << 7) {
            let z = bits(mask, 0);
            let r2_0 = bits(mask, 1);
            let r2_1 = bits(mask, 2);
            let r3_00 = bits(mask, 3);
            let r3_01 = bits(mask, 4);
            let r3_10 = bits(mask, 5);
            let r3_11 = bits(mask, 6);
            let p_atom = bern(p_z1, z)
                * bern(p_r2_0(z), r2_0)
                * bern(p_r2_1(z, r2_0), r2_1)
                * bern(p_r3(0, 0, z, r2_0), r3_00)
                * bern(p_r3(0, 1, z, r2_0), r3_01)
                * bern(p_r3(1, 0, z, r2_1), r3_10)
                * bern(p_r3(1, 1, z, r2_1), r3_11);
            if mask & 0b1111110 == 0 {
                p_z_acc[z as usize] += bern(p_z1, z);
            }
            let r2_a = if a == 1 { r2_1 } else { r2_0 };
            let r3 = |a1: u8, a2: u8| match (a1, a2) {
                (0, 0) => r3_00,
                (0, 1) => r3_01,
                (1, 0) => r3_10,
                _ => r3_11,
            };
            // excursion outcome Y(a, 0)
            let y_excursion = r2_a.max(r3(a, 0));
            lhs[z as usize] += p_atom * Q::new(i64::from(y_excursion), 1);
            // observed data under A1 = a: randomize A2 given (z, a, r2)
            for a2 in 0..2u8 {
                let y_obs = r2_a.max(r3(a, a2));
                if y_obs == 0 {
                    continue;
                }
                let first_hit = if r2_a == 1 { Some(1) } else { Some(2) };
                let w =
                    window_weight(&[a2], &[p_a2(z, a, r2_a)], &[1], first_hit, 1, true).unwrap();
                rhs[z as usize] += p_atom * bern(p_a2(z, a, r2_a), a2) * w;
            }
        }
        // conditional equality given each z, and the marginal over z
        for z in 0..2usize {
            let diff = (lhs[z] - rhs[z]) / p_z_acc[z];
            max_abs_diff = max_abs_diff.max(if diff < Q::new(0, 1) { -diff } else { diff });
        }
        let marg_diff = (lhs[0] + lhs[1]) - (rhs[0] + rhs[1]);
        max_abs_diff = max_abs_diff.max(if marg_diff < Q::new(0, 1) {
            -marg_diff
        } else {
            marg_diff
        });
        let _ = p_a1; // the A1 randomization cancels under conditioning on A1 = a
    }
    let elapsed = start.elapsed();
    let exact = max_abs_diff == Q::new(0, 1);
    let pass = exact && elapsed.as_secs_f64() < 1.0;
    report_line(
        2,
        "identification by exact enumeration",
        pass,
        &format!(
            "max |E[WY|A=a,z] - E[Y(a,0)|z]| = {max_abs_diff} (exact rationals) in {elapsed:.2?}"
        ),
    );
}

#[test]
fn criterion_03_true_effect_oracles() {
    let start = Instant::now();
    let b3 = true_marginal_beta0(&delta3_config());
    let b10 = true_marginal_beta0(&delta10_config());
    let elapsed = start.elapsed();
    let pass =
        (b3 - 0.283).abs() <= 1e-3 && (b10 - 0.304).abs() <= 1e-3 && elapsed.as_secs_f64() < 1.0;
    report_line(
        3,
        "true marginal effect oracles",
        pass,
        &format!("beta0*(3) = {b3:.4}, beta0*(10) = {b10:.4} in {elapsed:.2?}"),
    );
}

#[test]
fn criterion_04_delta3_benchmark_metrics() {
    let report = &*DELTA3_MARGINAL;
    let pd = &report.estimator("pd-EMEE").unwrap().params[0];
    let emee = &report.estimator("EMEE").unwrap().params[0];
    let gee = &report.estimator("GEE.ind").unwrap().params[0];
    let bias_bound = if smoke() { 0.02 } else { 0.012 };
    let sd_band = band((0.021, 0.030), (0.019, 0.032));
    let cp_band = band((0.92, 0.97), (0.90, 0.985));
    let emee_sd_band = band((0.022, 0.031), (0.020, 0.033));
    let gee_band = band((-0.075, -0.050), (-0.085, -0.040));
    let checks = [
        (
            pd.bias.abs() <= bias_bound,
            format!("pd bias {:+.4}", pd.bias),
        ),
        (
            in_band(pd.sd.unwrap(), sd_band),
            format!("pd sd {:.4}", pd.sd.unwrap()),
        ),
        (
            in_band(pd.cp_adj, cp_band),
            format!("pd cp_adj {:.3}", pd.cp_adj),
        ),
        (
            in_band(emee.sd.unwrap(), emee_sd_band),
            format!("emee sd {:.4}", emee.sd.unwrap()),
        ),
        (
            in_band(gee.bias, gee_band),
            format!("gee.ind bias {:+.4}", gee.bias),
        ),
    ];
    let pass = checks.iter().all(|(ok, _)| *ok);
    let detail: Vec<String> = checks.iter().map(|(_, d)| d.clone()).collect();
    report_line(
        4,
        "delta=3 benchmark metrics",
        pass,
        &format!("{} over {} reps", detail.join(", "), report.reps),
    );
}

#[test]
fn criterion_05_delta10_relative_efficiency() {
    let re0 = DELTA10_MARGINAL
        .relative_efficiency("EMEE", "pd-EMEE", 0)
        .unwrap();
    let re2 = DELTA10_MODERATED
        .relative_efficiency("EMEE", "pd-EMEE", 1)
        .unwrap();
    let b0 = band((1.30, 1.60), (1.15, 1.80));
    let b2 = band((1.25, 1.55), (1.10, 1.75));
    let pass = in_band(re0.rel_eff, b0) && in_band(re2.rel_eff, b2);
    report_line(
        5,
        "delta=10 relative efficiency",
        pass,
        &format!(
            "RE(beta0) = {:.3} +- {:.3}, RE(beta2) = {:.3} +- {:.3}",
            re0.rel_eff, re0.mc_se, re2.rel_eff, re2.mc_se
        ),
    );
}

fn nondecreasing_within_2se(points: &[excursion_core::bench::CurvePoint<f64>]) -> (bool, String) {
    for pair in points.windows(2) {
        let slack = 2.0 * (pair[0].mc_se.powi(2) + pair[1].mc_se.powi(2)).sqrt();
        if pair[1].rel_eff < pair[0].rel_eff - slack {
            return (
                false,
                format!(
                    "drop at x = {}: {:.3} -> {:.3} (slack {slack:.3})",
                    pair[1].x, pair[0].rel_eff, pair[1].rel_eff
                ),
            );
        }
    }
    (true, "nondecreasing within 2 jackknife SEs".into())
}

#[test]
fn criterion_06_efficiency_sweeps() {
    let delta_curve = efficiency_sweep(
        &SweepGrid::Delta((1..=10).collect()),
        &GenerativeConfig::new(100, 3, 0.2, 1106).unwrap(),
        reps(),
    )
    .unwrap();
    let (mono, mono_detail) = nondecreasing_within_2se(&delta_curve.points);
    let first = &delta_curve.points[0];
    let last = delta_curve.points.last().unwrap();
    let end_band = band((1.30, 1.60), (1.15, 1.80));
    let start_ok = (first.rel_eff - 1.0).abs() <= 0.03;
    let end_ok = in_band(last.rel_eff, end_band);

    // the randomization-probability sweep reaches its reference endpoint
    // at n = 30; at n = 100 it tops out near 1.55 because the heavy-tailed
    // full-product estimator stabilizes with more individuals
    let pa_curve = efficiency_sweep(
        &SweepGrid::RandProb(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]),
        &GenerativeConfig::new(30, 3, 0.2, 1107).unwrap(),
        reps(),
    )
    .unwrap();
    let pa_last = pa_curve.points.last().unwrap();
    let pa_band = band((1.55, 1.95), (1.40, 2.10));
    let pa_ok = in_band(pa_last.rel_eff, pa_band);

    let pass = mono && start_ok && end_ok && pa_ok;
    report_line(
        6,
        "efficiency sweep curves",
        pass,
        &format!(
            "delta sweep start {:.3}, end {:.3} +- {:.3}; p_a sweep end {:.3} +- {:.3}; {mono_detail}",
            first.rel_eff, last.rel_eff, last.mc_se, pa_last.rel_eff, pa_last.mc_se
        ),
    );
}

#[test]
fn criterion_07_closed_form_relative_efficiency() {
    // exact unity at delta = 1
    let unity = [(0.1, 0.7), (0.5, 0.5), (0.8, 0.2)]
        .iter()
        .all(|&(p, q)| analytic_relative_efficiency(p, q, 1).unwrap() == 1.0);
    // continuity across the p = q seam
    let at: f64 = analytic_relative_efficiency(0.2, 0.2, 5).unwrap();
    let near: f64 = analytic_relative_efficiency(0.19999, 0.2, 5).unwrap();
    let continuous = (at - near).abs() < 1e-3;
    // Monte-Carlo agreement on the 2 x 2 x 2 grid
    let mc_reps = if smoke() { 200 } else { 400 };
    let mut mc_ok = true;
    let mut details = Vec::new();
    for &p in &[0.2, 0.5] {
        for &q in &[0.2, 0.5] {
            for &delta in &[2usize, 5] {
                let analytic: f64 = analytic_relative_efficiency(p, q, delta).unwrap();
                let mc =
                    simplified_mc_relative_efficiency(p, q, delta, 3000, mc_reps, 1707).unwrap();
                let ok = (mc.rel_eff - analytic).abs() <= 3.0 * mc.mc_se;
                if !ok {
                    mc_ok = false;
                    details.push(format!(
                        "({p},{q},{delta}): mc {:.3} +- {:.3} vs analytic {analytic:.3}",
                        mc.rel_eff, mc.mc_se
                    ));
                }
            }
        }
    }
    let pass = unity && continuous && mc_ok;
    report_line(
        7,
        "closed-form relative efficiency",
        pass,
        &format!(
            "unity at delta=1: {unity}; seam gap {:.1e}; MC grid {}",
            (at - near).abs(),
            if details.is_empty() {
                "within 3 SEs".to_string()
            } else {
                details.join("; ")
            }
        ),
    );
}

#[test]
fn criterion_08_reference_regime_sweep() {
    let curve = efficiency_sweep(
        &SweepGrid::K((0..=9).collect()),
        &GenerativeConfig::new(100, 10, 0.2, 1108).unwrap(),
        reps(),
    )
    .unwrap();
    let first = &curve.points[0];
    let last = curve.points.last().unwrap();
    let (mono, mono_detail) = nondecreasing_within_2se(&curve.points);
    let floor = if smoke() { 1.2 } else { 1.3 };
    let pass = (first.rel_eff - 1.0).abs() <= 0.03 && last.rel_eff >= floor && mono;
    report_line(
        8,
        "reference-regime K sweep",
        pass,
        &format!(
            "K=0: {:.3}; K=9: {:.3} +- {:.3}; {mono_detail}",
            first.rel_eff, last.rel_eff, last.mc_se
        ),
    );
}

#[test]
fn criterion_09_inference_calibration() {
    let pd = &DELTA3_MARGINAL.estimator("pd-EMEE").unwrap().params[0];
    let ratio = pd.median_se_unadj / pd.sd.unwrap();
    let ratio_ok = in_band(ratio, (0.9, 1.1));

    let mut ordering_ok = true;
    let mut coverage_ok = true;
    let cov_band = band((0.93, 0.97), (0.91, 0.985));
    for report in [
        &*DELTA3_MARGINAL,
        &*DELTA3_MODERATED,
        &*DELTA10_MARGINAL,
        &*DELTA10_MODERATED,
    ] {
        for est in &report.estimators {
            for pm in &est.params {
                if pm.cp_adj < pm.cp_unadj {
                    ordering_ok = false;
                }
            }
        }
    }
    // adjusted coverage for each moderator coefficient at delta = 3
    for pm in [
        &DELTA3_MARGINAL.estimator("pd-EMEE").unwrap().params[0],
        &DELTA3_MODERATED.estimator("pd-EMEE").unwrap().params[0],
        &DELTA3_MODERATED.estimator("pd-EMEE").unwrap().params[1],
    ] {
        if !in_band(pm.cp_adj, cov_band) {
            coverage_ok = false;
        }
    }
    let pass = ratio_ok && ordering_ok && coverage_ok;
    report_line(
        9,
        "sandwich calibration and coverage ordering",
        pass,
        &format!(
            "median SE / SD = {ratio:.3}; adjusted >= unadjusted everywhere: {ordering_ok}; \
             delta=3 adjusted coverages {:.3}/{:.3}/{:.3}",
            DELTA3_MARGINAL.estimator("pd-EMEE").unwrap().params[0].cp_adj,
            DELTA3_MODERATED.estimator("pd-EMEE").unwrap().params[0].cp_adj,
            DELTA3_MODERATED.estimator("pd-EMEE").unwrap().params[1].cp_adj,
        ),
    );
}

#[test]
fn criterion_10_jacobian_finite_difference() {
    let mut rng = ChaCha12Rng::seed_from_u64(1010);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = 5;
        let t_len = 4;
        let delta = 2;
        let persons: Vec<_> = (0..n)
            .map(|_| {
                let treat: Vec<u8> = (0..t_len)
                    .map(|_| u8::from(rng.gen::<f64>() < 0.5))
                    .collect();
                let subs: Vec<u8> = (0..t_len + delta)
                    .map(|_| u8::from(rng.gen::<f64>() < 0.4))
                    .collect();
                let x_col: Vec<f64> = (0..t_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let w_col: Vec<f64> = (0..t_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut p = person_with_constant_prob(treat, 0.5, subs, &[x_col], &[w_col]);
                for prob in &mut p.rand_prob {
                    *prob = rng.gen_range(0.2..0.8);
                }
                p
            })
            .collect();
        let data = MrtDataset::new(persons, delta, 2, 2).unwrap();
        let outcomes = build_for_dataset(&data).unwrap();
        let mut spec = EstimatorSpec {
            kind: EstimatorKind::PdEmee,
            moderator_cols: vec![0, 1],
            control_cols: vec![0, 1],
            numerator: NumeratorPolicy::Constant(0.5),
            solver: Default::default(),
        };
        let weights = compute_weights(&data, &outcomes, &spec.numerator, delta - 1).unwrap();
        let alpha = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let beta = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let analytic = jacobian(&data, &outcomes, &weights, &spec, &alpha, &beta).unwrap();
        spec.solver.jacobian = JacobianMode::FiniteDifference(1e-6);
        let fd = jacobian(&data, &outcomes, &weights, &spec, &alpha, &beta).unwrap();
        worst = worst.max(analytic.sub(&fd).max_abs());
    }
    let pass = worst <= 1e-5;
    report_line(
        10,
        "analytic vs finite-difference jacobian",
        pass,
        &format!("max entrywise gap {worst:.2e} over 100 random datasets"),
    );
}

#[test]
fn criterion_11_working_model_robustness() {
    // the control model g = (1, Z) is deliberately wrong for the
    // generative mean; bias must still shrink with n. Window length 3
    // keeps the trailing-window truncation negligible, so the n-trend is
    // not masked by that fixed floor.
    let r = if smoke() { 150 } else { 500 };
    let mut biases = Vec::new();
    let mut ses = Vec::new();
    for (i, &n) in [30usize, 100, 300].iter().enumerate() {
        let gen = GenerativeConfig::with_horizon(n, 100, 3, 0.2, 1111 + i as u64).unwrap();
        let specs = vec![AnySpec::Excursion(study_spec(
            EstimatorKind::PdEmee,
            false,
            0.2,
        ))];
        let report = run_replications(&gen, &specs, r, &[true_marginal_beta0(&gen)]).unwrap();
        let pm = &report.estimators[0].params[0];
        biases.push(f64::abs(pm.bias));
        ses.push(pm.sd.unwrap() / (report.estimators[0].n_converged as f64).sqrt());
    }
    let mut pass = true;
    for i in 0..biases.len() - 1 {
        let slack = 2.0 * (ses[i].powi(2) + ses[i + 1].powi(2)).sqrt();
        if biases[i + 1] > biases[i] + slack {
            pass = false;
        }
    }
    report_line(
        11,
        "robustness to a wrong working model",
        pass,
        &format!(
            "|bias| at n = 30/100/300: {:.4}/{:.4}/{:.4} (MC SEs {:.4}/{:.4}/{:.4})",
            biases[0], biases[1], biases[2], ses[0], ses[1], ses[2]
        ),
    );
}

#[test]
fn criterion_12_drink_less_reproduction() {
    let path = std::env::var("DRINK_LESS_CSV")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|_| {
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/drink_less.csv")
        });
    if !path.exists() {
        println!(
            "ACCEPTANCE 12 drink-less reproduction: SKIPPED (no dataset at {}; set DRINK_LESS_CSV)",
            path.display()
        );
        return;
    }
    let ingested = excursion_cli::schema::ingest_csv(&path, 3).unwrap();
    let data = &ingested.data;
    let outcomes = build_for_dataset(data).unwrap();
    let spec = EstimatorSpec {
        kind: EstimatorKind::PdEmee,
        moderator_cols: vec![0],
        control_cols: (0..data.n_controls()).collect(),
        numerator: NumeratorPolicy::default_for(data),
        solver: Default::default(),
    };
    let fit = excursion_core::estimator::fit(data, &outcomes, &spec).unwrap();
    let beta0 = fit.beta[0];
    let se = fit.se_beta[0];
    let pass = in_band(beta0, (0.117, 0.137)) && in_band(se, (0.022, 0.032));
    report_line(
        12,
        "drink-less reproduction",
        pass,
        &format!("beta0 = {beta0:.3}, se = {se:.3} (n = {})", data.n()),
    );
}

// Additional reference-value checks sharing the criterion runs.

#[test]
fn reference_mean_estimate_at_delta3() {
    let report = &*DELTA3_MARGINAL;
    let pd = &report.estimator("pd-EMEE").unwrap().params[0];
    let mean = report.true_values[0] + pd.bias;
    let tol = if smoke() { 0.015 } else { 0.01 };
    assert!(
        (mean - 0.283).abs() <= tol,
        "mean pd-EMEE estimate {mean:.4} should sit within {tol} of 0.283"
    );
}

#[test]
fn reference_gee_exchangeable_bias() {
    let d3 = &DELTA3_MARGINAL.estimator("GEE.exch").unwrap().params[0];
    let d10 = &DELTA10_MARGINAL.estimator("GEE.exch").unwrap().params[0];
    let tol = if smoke() { 0.02 } else { 0.01 };
    assert!(
        (d3.bias - (-0.064)).abs() <= tol,
        "delta=3 GEE.exch bias {:.4} vs reference -0.064",
        d3.bias
    );
    assert!(
        (d10.bias - (-0.176)).abs() <= tol,
        "delta=10 GEE.exch bias {:.4} vs reference -0.176",
        d10.bias
    );
}

#[test]
fn reference_relative_efficiency_at_delta3() {
    let re = DELTA3_MARGINAL
        .relative_efficiency("EMEE", "pd-EMEE", 0)
        .unwrap();
    let lo = if smoke() { 1.0 } else { 1.02 };
    assert!(
        re.rel_eff >= lo && re.rel_eff <= 1.2,
        "delta=3 RE {:.3} should sit near the reference 1.08",
        re.rel_eff
    );
}

#[test]
fn corrected_intervals_never_narrower_at_small_n() {
    // every replication of a small-n study must produce adjusted CIs at
    // least as wide as the unadjusted ones, and the small-sample
    // correction must lift coverage toward the nominal level
    let gen = GenerativeConfig::with_horizon(30, 100, 3, 0.2, 1130).unwrap();
    let truth = true_marginal_beta0(&gen);
    let spec = study_spec(EstimatorKind::PdEmee, false, 0.2);
    let r = if smoke() { 50 } else { 200 };
    let mut covered_unadj = 0usize;
    let mut covered_adj = 0usize;
    for rep in 0..r {
        let data = generate_trial_stream(&gen, rep as u64).unwrap();
        let outcomes = build_for_dataset(&data).unwrap();
        let fit = excursion_core::estimator::fit(&data, &outcomes, &spec).unwrap();
        let adj = fit.ci_beta[0].1 - fit.ci_beta[0].0;
        let unadj = fit.ci_beta_unadjusted[0].1 - fit.ci_beta_unadjusted[0].0;
        assert!(
            adj >= unadj,
            "rep {rep}: adjusted width {adj} < unadjusted {unadj}"
        );
        covered_unadj += usize::from(
            fit.ci_beta_unadjusted[0].0 <= truth && truth <= fit.ci_beta_unadjusted[0].1,
        );
        covered_adj += usize::from(fit.ci_beta[0].0 <= truth && truth <= fit.ci_beta[0].1);
    }
    let cp_unadj = covered_unadj as f64 / r as f64;
    let cp_adj = covered_adj as f64 / r as f64;
    assert!(cp_adj >= cp_unadj);
    assert!(
        (0.90..=0.99).contains(&cp_adj) && (0.88..=0.99).contains(&cp_unadj),
        "n = 30 coverage unadj {cp_unadj:.3}, adj {cp_adj:.3}"
    );
}
