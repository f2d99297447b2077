//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any of them fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use trssqp::bench::{resolve_kappa_b, stopping_time_experiment, ExperimentSpec, MethodSpec};
use trssqp::oracles::{EstimationMode, NoiseFamily, NoiseModel, OracleConfig};
use trssqp::problem::{benchmark_keys, make_problem, PointKind};
use trssqp::solver::{run, HessianStrategy, RunRecord, RunStatus, SolverConfig};
use trssqp::steps::{
    split_radius, tangential_eigen_step, tangential_gradient_step, ReducedModel, SplitKind, StepKind,
};

struct Outcome {
    pass: bool,
    detail: String,
}

/// A finished run kept for the bookkeeping audit.
struct Logged {
    label: String,
    alpha: u8,
    rec: RunRecord,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn standard_arms() -> Vec<(&'static str, u8, HessianStrategy)> {
    vec![
        ("Id", 0, HessianStrategy::Id),
        ("SR1", 0, HessianStrategy::Sr1),
        ("EstH", 0, HessianStrategy::EstH),
        ("AveH", 0, HessianStrategy::AveH),
        ("SO-EstH", 1, HessianStrategy::EstH),
    ]
}

fn deterministic_convergence(logged: &mut Vec<Logged>) -> Outcome {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    let mut worst_iters = 0;
    for key in benchmark_keys() {
        let p = make_problem(key).unwrap();
        for (label, alpha, hessian) in standard_arms() {
            let cfg = SolverConfig {
                alpha,
                hessian,
                max_iter: 1000,
                eps_stop: 1e-6,
                ..SolverConfig::default()
            };
            let rec = run(&p, &OracleConfig::noiseless(), &cfg, 0).unwrap();
            let ok = rec.status == RunStatus::Stopped
                && rec.final_kkt <= 1e-6
                && (alpha == 0 || rec.final_tau_plus <= 1e-6);
            if !ok {
                failures.push(format!(
                    "{key}/{label}: {} kkt={:.1e} tau+={:.1e}",
                    rec.status.label(),
                    rec.final_kkt,
                    rec.final_tau_plus
                ));
            }
            worst_iters = worst_iters.max(rec.iters());
            logged.push(Logged {
                label: format!("c1 {key}/{label}"),
                alpha,
                rec,
            });
        }
    }
    let elapsed = t0.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(10);
    Outcome {
        pass,
        detail: format!(
            "{} problems x 5 methods, max iters {worst_iters}, {:.2}s{}",
            benchmark_keys().len(),
            elapsed.as_secs_f64(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failures.join(", "))
            }
        ),
    }
}

/// Problems where T_eps responds to the gradient noise. Excluded: `maratos`
/// starts at a first-order point (T_eps = 0 at every eps) and on `quad-linear`
/// the noise direction lies in the row space of the constant Jacobian, so the
/// least-squares multiplier absorbs it and the run is deterministic.
const SCALING_PROBLEMS: &[&str] = &[
    "rosenbrock-sphere",
    "saddle",
    "sphere-plane",
    "sphere-plane-10",
    "unconstrained-quad",
];

fn first_order_scaling(logged: &mut Vec<Logged>) -> Outcome {
    let t0 = Instant::now();
    let grid = [1e-1, 1e-2, 1e-3];
    let method = MethodSpec {
        noise: NoiseFamily::Gaussian,
        sigma: 1e-2,
        ..MethodSpec::new("Id", 0, HessianStrategy::Id)
    };
    let cells: Vec<(&str, f64, u64)> = SCALING_PROBLEMS
        .iter()
        .flat_map(|&p| grid.iter().flat_map(move |&e| (0..5u64).map(move |s| (p, e, s))))
        .collect();
    let recs: Vec<(&str, f64, RunRecord)> = cells
        .par_iter()
        .map(|&(p, e, s)| {
            let m = MethodSpec {
                kappa_b: resolve_kappa_b(p, &method, e),
                ..method.clone()
            };
            let prob = make_problem(p).unwrap();
            (p, e, run(&prob, &m.oracle_config(), &m.solver_config(e), s).unwrap())
        })
        .collect();
    let medians: Vec<f64> = grid
        .iter()
        .map(|&e| {
            median(
                recs.iter()
                    .filter(|(_, re, _)| *re == e)
                    .map(|(_, _, r)| r.t_eps_or_budget() as f64)
                    .collect(),
            )
        })
        .collect();
    let unfinished = recs.iter().filter(|(_, _, r)| r.status != RunStatus::Stopped).count();
    for (p, e, rec) in recs {
        logged.push(Logged {
            label: format!("c2 {p} eps={e:e}"),
            alpha: 0,
            rec,
        });
    }
    // Least-squares slope of log10 T against log10 eps.
    let xs: Vec<f64> = grid.iter().map(|e| e.log10()).collect();
    let ys: Vec<f64> = medians.iter().map(|t| t.max(1.0).log10()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let ratios: Vec<f64> = medians.windows(2).map(|w| w[1] / w[0]).collect();
    let elapsed = t0.elapsed();
    let pass = ratios.iter().all(|r| (3.0..=100.0).contains(r))
        && (-2.5..=-0.5).contains(&slope)
        && unfinished == 0
        && elapsed < Duration::from_secs(300);
    Outcome {
        pass,
        detail: format!(
            "median T {medians:?}, per-decade factors [{:.2}, {:.2}] (need [3, 100]), slope {slope:.3} (need [-2.5, -0.5]), {unfinished} unfinished, {:.1}s",
            ratios[0],
            ratios[1],
            elapsed.as_secs_f64()
        ),
    }
}

fn second_order_behavior(logged: &mut Vec<Logged>) -> Outcome {
    let eps = 1e-3;
    let p = make_problem("saddle").unwrap();
    let so = SolverConfig {
        alpha: 1,
        hessian: HessianStrategy::EstH,
        eps_stop: eps,
        ..SolverConfig::default()
    };
    let rec_so = run(&p, &OracleConfig::noiseless(), &so, 0).unwrap();

    let saddle = p.known_points.iter().find(|k| k.kind == PointKind::Saddle).unwrap();
    let mut at_saddle = p.clone();
    at_saddle.x0 = DVector::from_column_slice(&saddle.x);
    let fo = SolverConfig {
        eps_stop: eps,
        ..SolverConfig::default()
    };
    let rec_fo = run(&at_saddle, &OracleConfig::noiseless(), &fo, 0).unwrap();

    // At the origin G = (0, 0, 1) and lambda = 0, so the reduced Lagrangian
    // Hessian on span(e1, e2) is diag(1, -1): tau_plus = 1.
    let tau_closed_form = 1.0;
    let pass = rec_so.status == RunStatus::Stopped
        && rec_so.final_tau_plus <= eps
        && rec_fo.status == RunStatus::Stopped
        && rec_fo.final_kkt <= eps
        && rec_fo.final_tau_plus >= 0.1
        && (rec_fo.final_tau_plus - tau_closed_form).abs() <= 1e-9;
    let detail = format!(
        "alpha=1 EstH: {} tau+={:.1e} at x={:.4?}; alpha=0 Id from saddle: {} kkt={:.1e} tau+={:.3}",
        rec_so.status.label(),
        rec_so.final_tau_plus,
        rec_so.final_x.as_slice(),
        rec_fo.status.label(),
        rec_fo.final_kkt,
        rec_fo.final_tau_plus
    );
    logged.push(Logged {
        label: "c3 saddle alpha=1".into(),
        alpha: 1,
        rec: rec_so,
    });
    logged.push(Logged {
        label: "c3 saddle alpha=0 from saddle".into(),
        alpha: 0,
        rec: rec_fo,
    });
    Outcome { pass, detail }
}

/// Longest run of consecutive strict radius decreases at iterates whose true
/// KKT residual is at most `near`, optionally also requiring `tau_plus <= near`
/// (that is, near a second-order point rather than any stationary point).
fn longest_shrink_near(rec: &RunRecord, near: f64, second_order: bool) -> usize {
    let mut best = 0;
    let mut cur = 0;
    for l in &rec.logs {
        let close = l.kkt_true <= near && (!second_order || l.tau_plus_true <= near);
        if l.delta_next < l.delta && close {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

fn maratos_soc(logged: &mut Vec<Logged>) -> Outcome {
    let p = make_problem("maratos").unwrap();
    let xstar = DVector::from_column_slice(
        &p.known_points.iter().find(|k| k.kind == PointKind::Minimizer).unwrap().x,
    );
    let on = SolverConfig {
        alpha: 1,
        hessian: HessianStrategy::EstH,
        ..SolverConfig::default()
    };
    let rec_on = run(&p, &OracleConfig::noiseless(), &on, 0).unwrap();
    let off = SolverConfig {
        soc_enabled: false,
        ..on.clone()
    };
    let rec_off = run(&p, &OracleConfig::noiseless(), &off, 0).unwrap();
    let err_on = (&rec_on.final_x - &xstar).norm();
    let err_off = (&rec_off.final_x - &xstar).norm();
    // The ablation stagnates at the stationary point it starts from; the
    // streak near the minimizer itself is reported for comparison.
    let streak = longest_shrink_near(&rec_off, 1e-2, false);
    let streak_min = longest_shrink_near(&rec_off, 1e-2, true);
    let socs = rec_on.logs.iter().filter(|l| l.soc_performed).count();
    let pass = rec_on.status == RunStatus::Stopped
        && err_on <= 1e-5
        && rec_off.status != RunStatus::Stopped
        && streak >= 50;
    let detail = format!(
        "SOC on: {} in {} iters ({socs} SOC), |x - x*|={err_on:.1e}; SOC off: {} after {} iters at x={:.3?} (|x - x*|={err_off:.2}), radius decrease streak {streak} at a stationary point (need >= 50), {streak_min} near the minimizer",
        rec_on.status.label(),
        rec_on.iters(),
        rec_off.status.label(),
        rec_off.iters(),
        rec_off.final_x.as_slice()
    );
    logged.push(Logged {
        label: "c4 maratos soc".into(),
        alpha: 1,
        rec: rec_on,
    });
    logged.push(Logged {
        label: "c4 maratos no-soc".into(),
        alpha: 1,
        rec: rec_off,
    });
    Outcome { pass, detail }
}

fn random_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
    (&a + a.transpose()) * 0.5
}

fn cauchy_fuzz() -> Outcome {
    const TOL: f64 = 1e-10;
    let kappa_fcd = SolverConfig::default().kappa_fcd;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut grad_bad, mut eig_bad, mut eig_n) = (0, 0, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let b = random_sym(&mut rng, n, scale);
        let g = DVector::from_fn(n, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
        let tilde = 10f64.powf(rng.random_range(-3.0..1.0));
        let model = ReducedModel { b, g };

        let (u, _) = tangential_gradient_step(&model, tilde, kappa_fcd).unwrap();
        let bound = model.cauchy_bound(tilde, kappa_fcd);
        let slack = TOL * (1.0 + bound.abs());
        if !(model.value(&u) <= bound + slack && u.norm() <= tilde * (1.0 + TOL)) {
            grad_bad += 1;
        }

        let lam_min = model.b.clone().symmetric_eigen().eigenvalues.min();
        let tau_plus = (-lam_min).max(0.0);
        if tau_plus > 0.0 {
            eig_n += 1;
            let u = tangential_eigen_step(&model, tilde).unwrap();
            let curv = u.dot(&(&model.b * &u));
            let scale_c = tau_plus * tilde * tilde;
            let ok = model.g.dot(&u) <= TOL * (1.0 + model.g.norm() * tilde)
                && u.norm() <= tilde * (1.0 + TOL)
                && curv <= -tau_plus * tilde * tilde + TOL * (1.0 + scale_c);
            if !ok {
                eig_bad += 1;
            }
        }
    }
    Outcome {
        pass: grad_bad == 0 && eig_bad == 0 && eig_n > 0,
        detail: format!(
            "1000 gradient steps (kappa_fcd={kappa_fcd}): {grad_bad} violations; {eig_n} eigen steps (kappa_fcd=1): {eig_bad} violations"
        ),
    }
}

fn scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scales: Vec<f64> = (0..10).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 9.0)).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=10);
        let m = rng.random_range(1..=3);
        let delta = rng.random_range(0.01..5.0);
        let c = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let grad_l = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let g_norm = rng.random_range(0.1..10.0);
        let h_norm = rng.random_range(0.1..10.0);
        let tau_plus = rng.random_range(0.01..2.0);
        for kind in [SplitKind::GradientSplit, SplitKind::EigenSplit] {
            let base = split_radius(delta, &c, g_norm, &grad_l, h_norm, tau_plus, kind);
            for &s in &scales {
                let r = split_radius(delta, &(&c * s), g_norm * s, &(&grad_l * s), h_norm * s, tau_plus * s, kind);
                for (a, b) in [(base.breve, r.breve), (base.tilde, r.tilde)] {
                    worst = worst.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
                }
            }
        }
    }
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("100 inputs x 10 scales x 2 splits, worst relative change {worst:.2e} (need <= 1e-12)"),
    }
}

fn oracle_calibration(logged: &mut Vec<Logged>) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for family in [NoiseFamily::Gaussian, NoiseFamily::StudentT] {
        let ocfg = OracleConfig {
            eps_f: 0.05,
            eps_f_tilde: 0.05,
            eps_g: 0.1,
            eps_h: 0.1,
            mode: EstimationMode::SampleAverage,
            noise: NoiseModel::new(family, 1e-2),
            ..OracleConfig::default()
        };
        let scfg = SolverConfig {
            alpha: 1,
            hessian: HessianStrategy::EstH,
            max_iter: 500,
            eps_stop: 0.0,
            ..SolverConfig::default()
        };
        let cells: Vec<(&str, u64)> = benchmark_keys()
            .into_iter()
            .filter(|k| *k != "maratos")
            .flat_map(|k| (0..4u64).map(move |s| (k, s)))
            .collect();
        let recs: Vec<(&str, u64, RunRecord)> = cells
            .par_iter()
            .map(|&(k, s)| (k, s, run(&make_problem(k).unwrap(), &ocfg, &scfg, s).unwrap()))
            .collect();
        let (mut n, mut a, mut b, mut c) = (0usize, 0usize, 0usize, 0usize);
        for (_, _, r) in &recs {
            for l in &r.logs {
                n += 1;
                a += usize::from(l.events.a);
                b += usize::from(l.events.b);
                c += usize::from(l.events.c);
            }
        }
        let f = |k: usize| k as f64 / n.max(1) as f64;
        let ok = n >= 10_000 && f(a) >= 0.87 && f(b) >= 0.87 && f(c) >= 0.87;
        pass &= ok;
        parts.push(format!(
            "{}: n={n} A={:.4} B={:.4} C={:.4}",
            family.as_str(),
            f(a),
            f(b),
            f(c)
        ));
        for (k, s, rec) in recs {
            logged.push(Logged {
                label: format!("c7 {} {k}#{s}", family.as_str()),
                alpha: 1,
                rec,
            });
        }
    }
    Outcome {
        pass,
        detail: format!("{} (need n >= 1e4, each >= 0.87)", parts.join("; ")),
    }
}

fn irreducible_floor() -> Outcome {
    let mut spec = ExperimentSpec::preset("irreducible-eps").unwrap();
    spec.eps_grid = vec![1e-1, 1e-3];
    let out = stopping_time_experiment(&spec).unwrap();
    let rows: Vec<_> = out.seed_rows().collect();
    let coarse_bad: Vec<String> = rows
        .iter()
        .filter(|r| r.eps == 1e-1 && r.status != "Stopped")
        .map(|r| format!("{}/{}#{}={}", r.problem, r.method, r.seed, r.status))
        .collect();
    let mut fine_budget: Vec<String> = rows
        .iter()
        .filter(|r| r.eps == 1e-3 && r.status == "BudgetExhausted")
        .map(|r| format!("{}/{}", r.problem, r.method))
        .collect();
    fine_budget.dedup();
    let flagged_both = rows.iter().any(|r| r.status == "Stopped") && !fine_budget.is_empty();
    let pass = coarse_bad.is_empty() && flagged_both;
    Outcome {
        pass,
        detail: format!(
            "eps=1e-1: {} of {} runs not Stopped{}; eps=1e-3 BudgetExhausted on {}",
            coarse_bad.len(),
            rows.iter().filter(|r| r.eps == 1e-1).count(),
            if coarse_bad.is_empty() {
                String::new()
            } else {
                format!(" ({})", coarse_bad.join(", "))
            },
            if fine_budget.is_empty() {
                "nothing".to_string()
            } else {
                fine_budget.join(", ")
            }
        ),
    }
}

fn bookkeeping(logged: &[Logged]) -> Outcome {
    const REL: f64 = 1e-12;
    const ROUNDOFF: f64 = 1e-12;
    let cfg = SolverConfig::default();
    let mut iters = 0usize;
    let mut exempt = 0usize;
    // violation kind -> (count, first occurrence)
    let mut bad: BTreeMap<&str, (usize, String)> = BTreeMap::new();
    let mut note = |why: &'static str, lg: &Logged, k: usize| {
        bad.entry(why).or_insert_with(|| (0, format!("{} k={k}", lg.label))).0 += 1;
    };
    for lg in logged {
        for (i, l) in lg.rec.logs.iter().enumerate() {
            iters += 1;
            if l.mu < l.mu_in {
                note("mu decreased", lg, l.k);
            }
            if let Some(next) = lg.rec.logs.get(i + 1) {
                if next.mu_in != l.mu || next.delta != l.delta_next {
                    note("state not carried", lg, l.k);
                }
            }
            let ratio = l.delta_next / l.delta;
            let on_ladder = (ratio - cfg.gamma).abs() <= REL * cfg.gamma
                || (ratio - 1.0 / cfg.gamma).abs() <= REL
                || l.delta_next == cfg.delta_max;
            if !on_ladder {
                note("radius ratio", lg, l.k);
            }
            if !(l.pred <= l.pred_threshold + REL * l.pred_threshold.abs()) {
                // With the estimated criticality measure zero to roundoff both
                // Pred and the threshold are roundoff; exact arithmetic gives 0 <= 0.
                let roundoff = l.grad_l_norm <= ROUNDOFF && l.c_norm <= ROUNDOFF && l.tau_plus_bar == 0.0;
                if roundoff {
                    exempt += 1;
                } else {
                    note("Pred above threshold", lg, l.k);
                }
            }
            if l.accepted && !(l.pred < 0.0 && l.ared - l.theta <= cfg.eta * l.pred) {
                note("acceptance test", lg, l.k);
            }
            if lg.alpha == 0 && (l.step_kind == StepKind::Eigen || l.soc_performed) {
                note("second-order step at alpha=0", lg, l.k);
            }
        }
    }
    let detail = bad
        .iter()
        .map(|(why, (n, first))| format!("{why}: {n} (first {first})"))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome {
        pass: bad.is_empty(),
        detail: format!(
            "{} runs, {iters} iterations ({exempt} at roundoff-zero criticality){}",
            logged.len(),
            if bad.is_empty() {
                ", no violations".to_string()
            } else {
                format!(": {detail}")
            }
        ),
    }
}

fn report(n: usize, name: &str, o: &Outcome) -> bool {
    println!(
        "criterion {n} [{name}]: {} | {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o.pass
}

fn main() {
    let mut logged = Vec::new();
    let mut all = true;
    all &= report(1, "deterministic convergence", &deterministic_convergence(&mut logged));
    all &= report(2, "first-order scaling", &first_order_scaling(&mut logged));
    all &= report(3, "second-order behavior", &second_order_behavior(&mut logged));
    all &= report(4, "maratos / soc", &maratos_soc(&mut logged));
    all &= report(5, "cauchy fuzz", &cauchy_fuzz());
    all &= report(6, "scale invariance", &scale_invariance());
    all &= report(7, "oracle calibration", &oracle_calibration(&mut logged));
    all &= report(8, "irreducible-noise floor", &irreducible_floor());
    all &= report(9, "bookkeeping", &bookkeeping(&logged));
    if !all {
        std::process::exit(1);
    }
}
