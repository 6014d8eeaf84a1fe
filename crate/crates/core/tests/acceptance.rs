//! Acceptance suite. Prints one PASS/FAIL line per item and exits non-zero
//! if any item fails. Every tolerance, sample size and time limit is pinned
//! below.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use fpp_lab::coupling::checks::{
    gaussian_shift_check, good_set_check, inverse_pair_check, linspace, monotonicity_check,
    semigroup_check, support_grid,
};
use fpp_lab::coupling::QuantileCoupling;
use fpp_lab::distributions::WeightLaw;
use fpp_lab::estimators::binomial_tail_exact;
use fpp_lab::experiment::{
    csv_bytes, final_chain, gaussian_grid_check, mw_monte_carlo, reference_laws, run_experiment,
    tau_norm_sq_direct, ExperimentConfig, ResultRecord,
};
use fpp_lab::fpp::{tau_schedule, Dd, Environment, PassageSolver};
use fpp_lab::lattice::{enumerate_paths_pk, path_count_bound, EdgeId, GridBox, Vertex};
use fpp_lab::rng::RngStream;

const SEED: u64 = 20_240_917;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Gaussian law: |g_τ(s) − (s + τ)| ≤ 1e-9 on 64 × 64 points of [−4, 4] × [−1, 1].
fn coupling_exactness() -> Outcome {
    let c = QuantileCoupling::new(WeightLaw::gaussian()).unwrap();
    let check = gaussian_shift_check(&c, &linspace(-4.0, 4.0, 64), &linspace(-1.0, 1.0, 64));
    outcome(
        check.pass && check.tolerance == 1e-9,
        format!("max |g_τ(s) − (s+τ)| = {:.3e} (tol 1e-9)", check.statistic),
    )
}

/// Semigroup, inverse pair (tol 1e-8 relative) and strict monotonicity.
fn semigroup_and_monotonicity() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for law in reference_laws() {
        let c = QuantileCoupling::new(law.clone()).unwrap();
        let s_grid = support_grid(&law, 64);
        let tau_grid = linspace(-1.0, 1.0, 16);
        let semi = semigroup_check(&c, &s_grid, &tau_grid);
        let inv = inverse_pair_check(&c, &s_grid, &linspace(-1.0, 1.0, 64));
        let mono = monotonicity_check(&c, &s_grid, &linspace(-1.0, 1.0, 64));
        pass &= semi.pass && inv.pass && mono.pass && semi.tolerance == 1e-8 && inv.tolerance == 1e-8;
        parts.push(format!(
            "{}: semigroup {:.1e}, inverse {:.1e}, monotone violations {}",
            law.label(),
            semi.statistic,
            inv.statistic,
            mono.statistic
        ));
    }
    outcome(pass, parts.join("; "))
}

/// 10⁴ draws from B_{δ₀} satisfy g_τ(s) ≥ s + δ₀τ − 1e-10 on 64 τ in [0, 1].
fn good_set_inequality() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, law) in reference_laws().into_iter().enumerate() {
        let c = QuantileCoupling::new(law.clone()).unwrap();
        let cal = c.estimate_delta0(0.999).unwrap();
        let check = good_set_check(&c, cal.delta0, 10_000, &mut RngStream::derive(SEED, &[3, i as u64]));
        pass &= check.pass && cal.achieved_mass >= 0.999;
        parts.push(format!(
            "{}: δ₀ = {}, mass {:.5}, violations {}",
            law.label(),
            cal.delta0,
            cal.achieved_mass,
            check.statistic
        ));
    }
    outcome(pass, parts.join("; "))
}

/// Closed-form Gaussian grid (10³ pairs) plus 12 Monte Carlo cases of 10⁵ trials.
fn mw_battery() -> Outcome {
    let grid = gaussian_grid_check();
    let cases = mw_monte_carlo(100_000, SEED).unwrap();
    let failed: Vec<String> = cases
        .iter()
        .filter(|c| !c.report.pass || c.report.trials != 100_000)
        .map(|c| format!("{} dim {}", c.law, c.report.dim))
        .collect();
    let worst = cases
        .iter()
        .map(|c| (c.report.lhs - c.report.rhs) / c.report.stderr)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        grid.pairs == 1000 && grid.violations == 0 && cases.len() == 12 && failed.is_empty(),
        format!(
            "grid {} pairs / {} violations; {} MC cases, max (lhs − rhs)/se = {:.2} (limit 3), failures {:?}",
            grid.pairs,
            grid.violations,
            cases.len(),
            worst,
            failed
        ),
    )
}

/// Minimum over all simple paths by branch and bound, in path-order
/// double-double arithmetic. Weights are positive, so pruning a partial
/// path whose weight already reaches the best complete one loses nothing.
fn exhaustive_minimum(env: &Environment, grid: GridBox, s: Vertex, t: Vertex) -> Dd {
    fn go(env: &Environment, grid: GridBox, at: Vertex, t: Vertex, acc: Dd, on: &mut Vec<Vertex>, best: &mut Dd) {
        if at == t {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for (dx, dy) in [(1, 0), (0, 1), (-1, 0), (0, -1)] {
            let next = (at.0 + dx, at.1 + dy);
            if !grid.contains(next) || on.contains(&next) {
                continue;
            }
            let cand = acc.add(env.weight(EdgeId::between(at, next).unwrap()).unwrap());
            if cand >= *best {
                continue;
            }
            on.push(next);
            go(env, grid, next, t, cand, on, best);
            on.pop();
        }
    }
    let mut best = Dd { hi: f64::INFINITY, lo: 0.0 };
    go(env, grid, s, t, Dd::ZERO, &mut vec![s], &mut best);
    best
}

/// 100 random environments on R = 3 boxes, random endpoints: Dijkstra equals
/// the exhaustive minimum exactly.
fn shortest_path_oracle() -> Outcome {
    let grid = GridBox::new(3).unwrap();
    let laws = reference_laws();
    let mut solver = PassageSolver::new(3).unwrap();
    let mut stream = RngStream::derive(SEED, &[5]);
    let mut mismatches = 0;
    for trial in 0..100u64 {
        let law = laws[trial as usize % laws.len()].clone();
        let env = Environment::sample(law, grid, RngStream::derive_seed(SEED, &[5, trial])).unwrap();
        let pick = |s: &mut RngStream| (s.next_below(7) as i32 - 3, s.next_below(7) as i32 - 3);
        let (src, dst) = (pick(&mut stream), pick(&mut stream));
        let res = solver.solve(&env, src, dst).unwrap();
        let exact = exhaustive_minimum(&env, grid, src, dst).value();
        let along = env.path_weight(&res.geodesic).unwrap();
        if res.time != exact || along != exact {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches in 100 environments"))
}

/// 500 environments at n = 64, R = 256, 64 r-values in [−1, 1]: T_r never decreases.
fn monotone_profile() -> Outcome {
    let n = 64u64;
    let radius = 256;
    let coupling = Arc::new(QuantileCoupling::new(WeightLaw::exponential(1.0).unwrap()).unwrap());
    let grid = GridBox::new(radius).unwrap();
    let rs = linspace(-1.0, 1.0, 64);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
    let violations: usize = pool.install(|| {
        (0..500u64)
            .into_par_iter()
            .map_init(
                || PassageSolver::new(radius).unwrap(),
                |solver, trial| {
                    let seed = RngStream::derive_seed(SEED, &[6, trial]);
                    let env = Environment::with_coupling(coupling.clone(), grid, seed).unwrap();
                    let prof = solver.profile(&env, n, &rs, (0, 0), (n as i32, 0)).unwrap();
                    prof.windows(2).filter(|w| w[1].time < w[0].time).count()
                },
            )
            .sum()
    });
    outcome(violations == 0, format!("{violations} decreases over 500 × 64 profile points"))
}

/// ‖τ_r‖² ≤ 50 for every n in 16..=1024 and 201 r in [−1, 1].
fn budget_boundedness() -> Outcome {
    let mut worst = (0.0f64, 0u64, 0.0f64);
    for n in 16..=1024u64 {
        for r in linspace(-1.0, 1.0, 201) {
            let v = tau_schedule(n, r).unwrap().norm_sq();
            if v > worst.0 {
                worst = (v, n, r);
            }
        }
    }
    let mut agree = true;
    for n in [16u64, 100, 1024] {
        let closed = tau_schedule(n, 1.0).unwrap().norm_sq();
        agree &= (closed - tau_norm_sq_direct(n, 1.0).unwrap()).abs() <= 1e-12 * closed;
    }
    outcome(
        worst.0 <= 50.0 && agree,
        format!(
            "max ‖τ‖² = {:.4} at n = {}, r = {} (limit 50); closed form matches edge sums: {agree}",
            worst.0, worst.1, worst.2
        ),
    )
}

/// P(Bin(2^k, 0.999) ≤ 2^{k−1}) ≤ 8^{−2^k} for k ≤ 20, and |P_k| ≤ the
/// counting bound for k ≤ 3.
fn binomial_and_path_bounds() -> Outcome {
    let mut pass = true;
    let mut slack = f64::INFINITY;
    for k in 1..=20u32 {
        let m = 1u64 << k;
        let tail = binomial_tail_exact(m, 0.999, m / 2).unwrap();
        let ln_bound = -(m as f64) * 8f64.ln();
        pass &= tail.ln_prob <= ln_bound;
        slack = slack.min(ln_bound - tail.ln_prob);
    }
    let mut counts = Vec::new();
    for k in 0..=3u32 {
        let paths = enumerate_paths_pk(k, 10_000_000).unwrap().len() as u128;
        pass &= paths <= path_count_bound(k);
        counts.push(format!("|P_{k}| = {paths} ≤ {}", path_count_bound(k)));
    }
    outcome(
        pass,
        format!("min ln-slack of binomial bound {:.3}; {}", slack, counts.join(", ")),
    )
}

fn trend_line(record: &ResultRecord, prefix: &str) -> Outcome {
    let checks: Vec<_> = record
        .trend
        .iter()
        .filter(|c| c.name.starts_with(prefix))
        .collect();
    let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
    let rows: Vec<String> = record
        .rows
        .iter()
        .map(|r| {
            if prefix == "variance" {
                format!("n={} var={:.3}±{:.3}", r.n, r.var, r.var_stderr)
            } else {
                format!("n={} q̂={:.4}±{:.4}", r.n, r.q_hat, r.stderr)
            }
        })
        .collect();
    outcome(pass, rows.join(", "))
}

fn anti_concentration(record: &ResultRecord) -> Outcome {
    let mut o = trend_line(record, "q_hat");
    let strict = record.trend.iter().any(|c| c.name.contains("below") && c.pass);
    o.pass &= strict && record.rows.len() == 4 && record.rows.iter().all(|r| r.samples == 4000);
    o
}

/// Final chain at n = 64 over 8 r-values in [0, 1].
fn final_chain_check() -> Outcome {
    let cfg = ExperimentConfig {
        threads: 8,
        ..ExperimentConfig::default()
    };
    let rep = final_chain(&cfg).unwrap();
    let worst = rep
        .rows
        .iter()
        .map(|r| (r.lhs - r.rhs) / r.stderr)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        rep.pass && rep.rows.len() == 8 && rep.n == 64,
        format!(
            "{} environments, window [{:.3}, {:.3}], lhs = {:.4}, max (lhs − rhs)/se = {:.2} (limit 3)",
            rep.samples,
            rep.a_star,
            rep.a_star + rep.w,
            rep.rows[0].lhs,
            worst
        ),
    )
}

fn main() -> ExitCode {
    let default_run = |threads: usize| {
        let cfg = ExperimentConfig {
            threads,
            ..ExperimentConfig::default()
        };
        run_experiment(&cfg).expect("default experiment")
    };
    let mut shared: Option<ResultRecord> = None;
    let mut failures = 0;
    let mut report = |id: u32, name: &str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let pass = o.pass && took <= limit;
        if !pass {
            failures += 1;
        }
        println!(
            "acceptance {id:>2} {} {name}: {} [{:.2} s, limit {} s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    };
    let min = |m: u64| Duration::from_secs(60 * m);

    report(1, "coupling exactness", Duration::from_secs(1), &mut coupling_exactness);
    report(2, "semigroup and monotonicity", Duration::from_secs(10), &mut semigroup_and_monotonicity);
    report(3, "good-set inequality", Duration::from_secs(30), &mut good_set_inequality);
    report(4, "product-measure inequality battery", min(5), &mut mw_battery);
    report(5, "shortest-path oracle", min(1), &mut shortest_path_oracle);
    report(6, "monotone profile", min(10), &mut monotone_profile);
    report(7, "perturbation budget", Duration::from_secs(1), &mut budget_boundedness);
    report(8, "binomial and path-count bounds", min(1), &mut binomial_and_path_bounds);
    report(9, "anti-concentration trend", min(30), &mut || {
        let rec = default_run(1);
        let o = anti_concentration(&rec);
        shared = Some(rec);
        o
    });
    let rec = shared.take().expect("default run");
    report(10, "variance growth", Duration::from_secs(1), &mut || trend_line(&rec, "variance"));
    report(11, "final inequality chain", min(15), &mut final_chain_check);
    report(12, "reproducibility across thread counts", min(30), &mut || {
        let again = default_run(8);
        let (a, b) = (csv_bytes(&rec).unwrap(), csv_bytes(&again).unwrap());
        outcome(
            a == b && rec.config_hash == again.config_hash,
            format!("1 vs 8 threads: {} CSV bytes, identical = {}", a.len(), a == b),
        )
    });

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance item(s) failed");
        ExitCode::FAILURE
    }
}
