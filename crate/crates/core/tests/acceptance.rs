//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Criteria can be selected by number: `cargo test --test
//! acceptance -- 1 3`.

use std::io::Write;
use std::ops::ControlFlow;
use std::process::ExitCode;
use std::time::Instant;

use hankel_scs::checks::{factorization_checks, operator_checks, theory_checks, CheckOutcome, SuiteOptions};
use hankel_scs::experiment::{run_noise, run_phase, run_timing, GridResult, NoiseSpec, PhaseSpec, SolverKind, TimingSpec};
use hankel_scs::linalg::norm2;
use hankel_scs::metrics::rel_error;
use hankel_scs::rng::{derive_seed, seeded};
use hankel_scs::signal::{observe, random_model, synthesize, uniform_mask, ModelOptions};
use hankel_scs::solver::IterView;
use hankel_scs::{SolverConfig, StepPolicy};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Instance {
    x: Vec<num_complex::Complex64>,
    observed: Vec<num_complex::Complex64>,
    mask: hankel_scs::SamplingMask,
}

/// n = 127, r = 4, m = floor(0.6 n) = 76, frequencies at least 1.5/n apart.
fn easy_instance(seed: u64) -> Instance {
    let (n, r, m) = (127, 4, 76);
    let mut rng = seeded(seed);
    let model = random_model(n, r, &ModelOptions { min_sep: Some(1.5 / n as f64), damping_range: None }, &mut rng).unwrap();
    let x = synthesize(&model).into_vec();
    let mask = uniform_mask(n, m, false, &mut rng).unwrap();
    let observed = observe(&x, &mask, 0.0, &mut rng).unwrap().into_vec();
    Instance { x, observed, mask }
}

fn exact_recovery() -> Verdict {
    let trials = 50;
    let mut ok = 0;
    let mut slowest = 0.0f64;
    for t in 0..trials {
        let seed = derive_seed(1, &[t]);
        let inst = easy_instance(seed);
        let started = Instant::now();
        let res = hankel_scs::recover(&inst.observed, &inst.mask, &SolverConfig { r: 4, seed, ..Default::default() });
        slowest = slowest.max(started.elapsed().as_secs_f64());
        if let Ok(res) = res {
            if rel_error(&res.x_hat, &inst.x).unwrap() <= 1e-3 {
                ok += 1;
            }
        }
    }
    let rate = ok as f64 / trials as f64;
    verdict(rate >= 0.9 && slowest < 2.0, format!("{ok}/{trials} recovered to 1e-3, need >= 90%; slowest trial {slowest:.3} s, need < 2 s"))
}

/// Success at a cell means a rate of at least 0.9; a neighbour agrees if
/// its rate is within two binomial standard errors of that.
fn monotone_violations(g: &GridResult) -> Vec<String> {
    let trials = g.spec.trials as f64;
    let floor = 0.9 - 2.0 * (0.9 * 0.1 / trials).sqrt();
    let mut bad = Vec::new();
    for c in g.cells.iter().filter(|c| c.rate() >= 0.9) {
        let up = g.cell(c.r, c.p + 0.1);
        let down = if c.r > 1 { g.cell(c.r - 1, c.p) } else { None };
        for (what, nb) in [("p+0.1", up), ("r-1", down)] {
            if let Some(nb) = nb {
                if nb.rate() < floor {
                    bad.push(format!("({}, {}) -> {what} rate {:.2}", c.r, c.p, nb.rate()));
                }
            }
        }
    }
    bad
}

fn phase_transition() -> Verdict {
    let spec = PhaseSpec::default();
    let shgd = run_phase(&spec).unwrap();
    let pgd = run_phase(&PhaseSpec { solver: SolverKind::Pgd, ..spec.clone() }).unwrap();
    let bad_s = monotone_violations(&shgd);
    let bad_p = monotone_violations(&pgd);
    let agree = shgd.cells.iter().zip(&pgd.cells).filter(|(a, b)| (a.rate() >= 0.9) == (b.rate() >= 0.9)).count();
    let frac = agree as f64 / shgd.cells.len() as f64;
    let mut detail = format!(
        "{}x{} grid, {} trials: monotonicity violations shgd {} pgd {}; boundaries agree on {agree}/{} cells ({:.1}%, need >= 90%)",
        spec.ranks.len(),
        spec.ratios.len(),
        spec.trials,
        bad_s.len(),
        bad_p.len(),
        shgd.cells.len(),
        100.0 * frac
    );
    for b in bad_s.iter().chain(&bad_p).take(4) {
        detail.push_str(&format!("; {b}"));
    }
    verdict(bad_s.is_empty() && bad_p.is_empty() && frac >= 0.9, detail)
}

fn linear_convergence() -> Verdict {
    let tol = 1e-12;
    let mut worst_window = 0.0f64;
    let mut worst_r2 = 1.0f64;
    let mut max_iters = 0;
    let mut all_reached = true;
    for s in 0..10 {
        let seed = derive_seed(3, &[s]);
        let inst = easy_instance(seed);
        let cfg = SolverConfig {
            r: 4,
            seed,
            step_policy: StepPolicy::Fixed { eta_prime: 0.75 },
            rel_change_tol: 0.0,
            max_iters: 5000,
            ..Default::default()
        };
        let xn = norm2(&inst.x);
        let mut errs = Vec::new();
        hankel_scs::shgd::recover_with(&inst.observed, &inst.mask, &cfg, &mut |v: &IterView<'_>| {
            let e = v.x.iter().zip(&inst.x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / xn;
            errs.push(e);
            if e <= tol {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        all_reached &= errs.last().is_some_and(|&e| e <= tol);
        max_iters = max_iters.max(errs.len());
        for k in 0..errs.len().saturating_sub(50) {
            worst_window = worst_window.max(errs[k + 50] / errs[k]);
        }
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let n = ys.len() as f64;
        let (mx, my) = ((n - 1.0) / 2.0, ys.iter().sum::<f64>() / n);
        let sxy: f64 = ys.iter().enumerate().map(|(i, y)| (i as f64 - mx) * (y - my)).sum();
        let sxx: f64 = (0..ys.len()).map(|i| (i as f64 - mx).powi(2)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        worst_r2 = worst_r2.min(sxy * sxy / (sxx * syy));
    }
    verdict(
        all_reached && worst_window <= 0.5 && worst_r2 >= 0.95,
        format!(
            "10 seeds to error {tol:.0e} in <= {max_iters} iterations: worst 50-iteration error ratio {worst_window:.2e} (need <= 0.5), worst log-linear R^2 {worst_r2:.4} (need >= 0.95)"
        ),
    )
}

fn timing_ratio() -> Verdict {
    let target = 1e-5;
    let mut spec = TimingSpec { targets: vec![target], repeats: 1, seed: 4, ..Default::default() };
    // Ten subspace iterations suffice for the initial SVD; the loop time is
    // what is compared.
    spec.config.init_max_iters = 10;
    let res = run_timing(&spec).unwrap();
    let n = spec.sizes[0];
    let shgd = res.row(n, SolverKind::Shgd, target).unwrap();
    let pgd = res.row(n, SolverKind::Pgd, target).unwrap();
    let cost = |s: SolverKind| res.costs.iter().find(|c| c.solver == s).unwrap().passes_per_iter;
    let (ps, pp) = (cost(SolverKind::Shgd), cost(SolverKind::Pgd));
    let exact = ps == 2.0 * spec.r as f64 && pp == 3.0 * spec.r as f64;
    let ratio = shgd.ratio;
    verdict(
        ratio.is_some_and(|q| (0.40..=0.80).contains(&q)) && exact,
        format!(
            "n={n} r={} m={} target {target:.0e}, {} seeds, 1 repeat: shgd {:.0} ms / pgd {:.0} ms = {} (need [0.40, 0.80]); reached {}/{} and {}/{}; conv passes per iteration {ps} : {pp} (need exactly 2:3)",
            spec.r,
            spec.m,
            spec.trials,
            shgd.mean_ms,
            pgd.mean_ms,
            ratio.map_or("none".to_string(), |q| format!("{q:.3}")),
            shgd.reached,
            shgd.trials,
            pgd.reached,
            pgd.trials,
        ),
    )
}

fn noise_robustness() -> Verdict {
    let spec = NoiseSpec::default();
    let res = run_noise(&spec).unwrap();
    let (s60, s120) = (res.loglog_slope(60).unwrap(), res.loglog_slope(120).unwrap());
    let below = spec
        .sigmas
        .iter()
        .filter(|&&s| {
            let at = |m: usize| res.rows.iter().find(|r| r.m == m && r.sigma_e == s).unwrap().mean_rmse;
            at(120) < at(60)
        })
        .count();
    let in_band = |s: f64| (0.8..=1.2).contains(&s);
    verdict(
        in_band(s60) && in_band(s120) && below == spec.sigmas.len(),
        format!(
            "n={} r={} {} trials, sigma 1e-3..1: log-log slope m=60 {s60:.3}, m=120 {s120:.3} (need [0.8, 1.2]); m=120 below m=60 at {below}/{} noise levels",
            spec.n,
            spec.r,
            spec.trials,
            spec.sigmas.len()
        ),
    )
}

fn suite(outcomes: Vec<CheckOutcome>) -> Verdict {
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.to_string()).collect();
    let detail = if failed.is_empty() {
        outcomes.iter().map(|o| format!("{} worst {:.1e}", o.name, o.worst)).collect::<Vec<_>>().join("; ")
    } else {
        failed.join("; ")
    };
    verdict(failed.is_empty(), detail)
}

fn main() -> ExitCode {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let opts = SuiteOptions::default();
    type Criterion<'a> = (usize, &'a str, Box<dyn Fn() -> Verdict>);
    let criteria: Vec<Criterion> = vec![
        (1, "exact recovery, easy regime", Box::new(exact_recovery)),
        (2, "phase-transition shape", Box::new(phase_transition)),
        (3, "linear convergence", Box::new(linear_convergence)),
        (4, "timing ratio", Box::new(timing_ratio)),
        (5, "noise robustness", Box::new(noise_robustness)),
        (6, "operator properties", Box::new({
            let opts = opts.clone();
            move || suite(operator_checks(&opts))
        })),
        (7, "factorization properties", Box::new({
            let opts = opts.clone();
            move || suite(factorization_checks(&opts, 20))
        })),
        (8, "theory checks", Box::new(move || suite(theory_checks(&opts, 20, 3, 100)))),
    ];
    let mut failures = 0;
    for (id, name, run) in &criteria {
        if !picked.is_empty() && !picked.contains(id) {
            continue;
        }
        let started = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {id}: {tag} {name} [{:.1} s] {}", started.elapsed().as_secs_f64(), v.detail);
        std::io::stdout().flush().ok();
        failures += usize::from(!v.pass);
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
