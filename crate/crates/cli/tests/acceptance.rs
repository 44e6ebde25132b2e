//! Acceptance suite. Runs without the test harness so that every criterion
//! prints one `[PASS]` or `[FAIL]` line; the process fails if any criterion
//! fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use smp_core::adjoint::{
    solve_adjoint_interbank_explicit, solve_adjoint_lsmc, solve_second_order, solve_volterra_mean,
    AdjointSample, LsmcOptions, VolterraOptions,
};
use smp_core::control::{Atom, AtomSize, ControlPair, RegularControl, SingularControl};
use smp_core::forward_sim::{estimate_cost, simulate, ParticleEnsemble};
use smp_core::model::{interbank_model, ControlModel, ControlSet, InterbankParams};
use smp_core::mp_check::{
    check_singular_conditions, check_sufficient, check_variational_inequality, compare_costs,
    default_cap, random_perturbations, SufficientOptions,
};
use smp_core::oracle::{brute_force_open_loop, bsde_residual, riccati_oracle, CoarseInstance};
use smp_core::regime_chain::{compensated_increments, sample_regime_path};
use smp_core::rng::{stream, Channel};
use smp_core::{exec, stats, GeneratorMatrix, Regime, Schedule, TimeGrid};

type Verdict = (bool, String);

fn unit_params() -> InterbankParams {
    let mut p = InterbankParams::single_regime(1.0, 1.0, 1.0, 0.3, 0.5, 1.0, 2.0, 1.0, 1.0, 1.0);
    p.control_set = ControlSet::Interval {
        lo: -5.0,
        hi: 5.0,
        points: 201,
    };
    p
}

fn riccati_run(params: &InterbankParams, steps: usize, particles: usize, seed: u64) -> (ParticleEnsemble, ControlPair) {
    let model = interbank_model(params.clone()).unwrap();
    let grid = TimeGrid::new(params.horizon, steps).unwrap();
    let law = riccati_oracle(params, &grid).unwrap().feedback;
    let control = ControlPair::regular_only(RegularControl::feedback(law));
    let ens = simulate(&model, &params.generator, &control, &grid, particles, seed).unwrap();
    (ens, control)
}

/// Largest `|mean| - 3 SE` over grid points, with the roundoff floor added to
/// the bound.
fn worst_mean_excess(adj: &AdjointSample, floor: f64) -> (f64, usize) {
    (0..=adj.steps())
        .map(|k| {
            let p = adj.p_at(k);
            (stats::mean(p).abs() - 3.0 * stats::std_error(p) - floor, k)
        })
        .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let gen = GeneratorMatrix::two_state(1.0, 2.0).unwrap();
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let paths = 100_000;
    let terminal = exec::map_range(paths, |n| {
        let mut rng = stream(1, n as u64, Channel::Chain);
        let path = sample_regime_path(&gen, Regime::from_index(0), &grid, &mut rng).unwrap();
        let inc = compensated_increments(&path, &gen);
        [inc.terminal_martingale(0), inc.terminal_martingale(1)]
    });
    let elapsed = start.elapsed().as_secs_f64();
    let mut ok = elapsed <= 10.0;
    let mut detail = String::new();
    for j in 0..2 {
        let col: Vec<f64> = terminal.iter().map(|v| v[j]).collect();
        let (m, se) = (stats::mean(&col), stats::std_error(&col));
        ok &= m.abs() <= 4.0 * se;
        detail.push_str(&format!("j={}: |mean| {:.2e} vs 4SE {:.2e}; ", j + 1, m.abs(), 4.0 * se));
    }
    (ok, format!("{detail}runtime {elapsed:.2}s"))
}

fn forward_moments(seed: u64) -> (bool, bool, String) {
    let params = InterbankParams::single_regime(1.0, 1.0, 1.0, 0.3, 0.5, 1.0, 2.0, 1.0, 1.0, 1.0);
    let model = interbank_model(params).unwrap();
    let grid = TimeGrid::new(1.0, 200).unwrap();
    let control = ControlPair::regular_only(RegularControl::constant(0.0));
    let ens = simulate(&model, &GeneratorMatrix::trivial(), &control, &grid, 10_000, seed).unwrap();
    let x = ens.states_at(200);
    let (mean, se) = (stats::mean(x), stats::std_error(x));
    let var = stats::variance(x);
    let squares: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
    let se_var = stats::std_error(&squares);
    let want = 0.09 * (1.0 - (-2.0f64).exp()) / 2.0;
    let mean_ok = (mean - 1.0).abs() <= 3.0 * se;
    let var_ok = (var - want).abs() <= 0.05 * 0.09 + 3.0 * se_var;
    let detail = format!(
        "|mean-1| {:.2e} vs 3SE {:.2e}; |var-{want:.5}| {:.2e} vs {:.2e}",
        (mean - 1.0).abs(),
        3.0 * se,
        (var - want).abs(),
        0.05 * 0.09 + 3.0 * se_var
    );
    (mean_ok, var_ok, detail)
}

fn criterion_2() -> Verdict {
    // seed fixed before looking at results; the pass rate over further seeds
    // is reported for context only
    let (mean_ok, var_ok, detail) = forward_moments(2024);
    let rate = (100..120).filter(|&s| forward_moments(s).0).count();
    (mean_ok && var_ok, format!("{detail}; mean test passes on {rate}/20 other seeds"))
}

fn criterion_3() -> Verdict {
    let params = unit_params();
    let model = interbank_model(params.clone()).unwrap();
    let (ens, _) = riccati_run(&params, 100, 10_000, 31);
    let (explicit, _) = solve_adjoint_interbank_explicit(&params, &ens).unwrap();
    let lsmc = solve_adjoint_lsmc(&model, &params.generator, &ens, &LsmcOptions::default()).unwrap();
    let floor = 1e-12;
    let (e, ke) = worst_mean_excess(&explicit, floor);
    let (l, kl) = worst_mean_excess(&lsmc, floor);
    (
        e <= 0.0 && l <= 0.0,
        format!("worst |mean|-3SE: explicit {e:.2e} (k={ke}), lsmc {l:.2e} (k={kl}); roundoff floor {floor:e}"),
    )
}

fn criterion_4() -> Verdict {
    let params = unit_params();
    let model = interbank_model(params.clone()).unwrap();
    let residual = |m: usize| {
        let (ens, _) = riccati_run(&params, m, 10_000, 41);
        let (adj, _) = solve_adjoint_interbank_explicit(&params, &ens).unwrap();
        (bsde_residual(&model, &params.generator, &ens, &adj).unwrap().aggregate, ens, adj)
    };
    let (r100, ens, explicit) = residual(100);
    let (r200, _, _) = residual(200);
    let ratio = r200 / r100;
    let halves = (0.35..=0.65).contains(&ratio);
    let lsmc = solve_adjoint_lsmc(&model, &params.generator, &ens, &LsmcOptions::default()).unwrap();
    let mut sq = 0.0;
    for k in 0..=100 {
        for (a, b) in lsmc.p_at(k).iter().zip(explicit.p_at(k)) {
            sq += (a - b).powi(2);
        }
    }
    let rms = (sq / (101.0 * 10_000.0)).sqrt();
    (
        halves && rms <= 0.05,
        format!("residual M=100 {r100:.3e}, M=200 {r200:.3e}, ratio {ratio:.3}; LSMC-explicit RMS {rms:.2e}"),
    )
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let params = unit_params();
    let model = interbank_model(params.clone()).unwrap();
    let gen = &params.generator;
    let n = 10_000;
    let (ens, control) = riccati_run(&params, 100, n, 51);
    let (adj, _) = solve_adjoint_interbank_explicit(&params, &ens).unwrap();
    let cost = estimate_cost(&model, &ens);
    let opts = SufficientOptions {
        tol: 5.0 * ens.grid().dt() + 3.0 * cost.std_error,
        concavity_tol: 1e-6,
        cap: default_cap(n),
        samples: 200,
        seed: 5,
    };
    let report = check_sufficient(&model, gen, &ens, &adj, &opts).unwrap();
    let perturbations = random_perturbations(&control, 20, 0.5, 100, 55);
    let cmp = compare_costs(&model, gen, ens.grid(), n, 51, &control, &perturbations).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = report.conditions.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let flagged = cmp.rows.iter().filter(|r| r.flagged).count();
    (
        report.pass && !cmp.any_flag && elapsed <= 60.0,
        format!(
            "sub-checks failing: {failed:?}; perturbations flagged: {flagged}/20; runtime {elapsed:.1}s"
        ),
    )
}

fn criterion_6() -> Verdict {
    let params = unit_params();
    let model = interbank_model(params.clone()).unwrap();
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let values = vec![-1.0, -0.5, 0.0, 0.5, 1.0];
    let particles = 2000;
    let instance = CoarseInstance {
        grid,
        control_values: values.clone(),
        atoms: Vec::new(),
        particles,
        seed: 61,
    };
    let bf = brute_force_open_loop(&model, &params.generator, &instance).unwrap();

    let best_ens = simulate(&model, &params.generator, &bf.best, &grid, particles, 61).unwrap();
    let adj = solve_volterra_mean(&params, &best_ens, &VolterraOptions::default()).unwrap().adjoint;
    let second = solve_second_order(&model, &params.generator, &best_ens, &adj, 1e-8).unwrap();
    let tol = 5.0 * grid.dt() + 3.0 * bf.best_cost.std_error;
    let vi = check_variational_inequality(&model, &params.generator, &best_ens, &adj, &second, &values, tol, default_cap(particles)).unwrap();

    let mut law = riccati_oracle(&params, &grid).unwrap().feedback;
    law.snap_to = Some(values);
    let candidate = ControlPair::regular_only(RegularControl::feedback(law));
    let cand = estimate_cost(&model, &simulate(&model, &params.generator, &candidate, &grid, particles, 61).unwrap());
    let diff: Vec<f64> = cand.per_particle.iter().zip(&bf.best_cost.per_particle).map(|(a, b)| a - b).collect();
    let (d, se) = (stats::mean(&diff), stats::std_error(&diff));
    let vi_c = &vi.conditions[0];
    (
        vi.pass && d >= -2.0 * se,
        format!(
            "VI at optimum: robust max {:.3e} vs tol {tol:.3e}; J_mp - J_bf = {d:.3e} (paired SE {se:.2e}, J_bf {:.4})",
            vi_c.robust_max,
            bf.best_row().j
        ),
    )
}

fn criterion_7() -> Verdict {
    let n = 2000;
    let cap = default_cap(n);
    let mut ok = true;
    let mut detail = String::new();
    for kappa in [0.02, 0.1, 0.3, 1.0] {
        let mut params = unit_params();
        params.kappa = Schedule::Constant(kappa);
        let model = interbank_model(params.clone()).unwrap();
        let (ens, _) = riccati_run(&params, 50, n, 71);
        let (adj, _) = solve_adjoint_interbank_explicit(&params, &ens).unwrap();
        let grid = ens.grid();
        let mut negative = 0usize;
        for k in 0..=50 {
            let t = grid.time(k);
            for i in 0..n {
                let v = model.singular_cost(t) + model.singular_coefficient(t, ens.regime(i, k)) * adj.p(i, k);
                negative += usize::from(v < 0.0);
            }
        }
        let fraction = negative as f64 / (51 * n) as f64;
        let report = check_singular_conditions(&model, &ens, &adj, 0.0, cap).unwrap();
        let applies = fraction >= 1.0 - cap;
        if applies {
            ok &= report.pass;
        }
        detail.push_str(&format!(
            "κ={kappa}: negative on {:.4}{} -> {}; ",
            fraction,
            if applies { "" } else { " (premise fails)" },
            if report.pass { "pass" } else { "fail" }
        ));
    }

    // atom on the strict-negative set
    let params = unit_params();
    let model = interbank_model(params.clone()).unwrap();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let law = riccati_oracle(&params, &grid).unwrap().feedback;
    let singular = SingularControl {
        atoms: vec![Atom {
            time: 0.5,
            size: AtomSize::Common(0.3),
        }],
        density: None,
    };
    let control = ControlPair::new(RegularControl::feedback(law), singular);
    let ens = simulate(&model, &params.generator, &control, &grid, n, 72).unwrap();
    let (adj, _) = solve_adjoint_interbank_explicit(&params, &ens).unwrap();
    let report = check_singular_conditions(&model, &ens, &adj, 1e-3, cap).unwrap();
    let b = report.condition("singular_B").unwrap();
    ok &= !b.pass;
    detail.push_str(&format!("manufactured atom: condition B violating fraction {}", b.violating_fraction));
    (ok, detail)
}

fn criterion_8() -> Verdict {
    let params = unit_params();
    let model = interbank_model(params.clone()).unwrap();
    let m = 1000;
    let grid = TimeGrid::new(1.0, m).unwrap();
    let control = ControlPair::regular_only(RegularControl::constant(0.0));
    let ens = simulate(&model, &params.generator, &control, &grid, 100, 81).unwrap();
    let (adj, _) = solve_adjoint_interbank_explicit(&params, &ens).unwrap();
    let field = solve_second_order(&model, &params.generator, &ens, &adj, 1e-9).unwrap();
    // -P' = -2aP - ε, P(T) = -β: P(t) = (ε/2a - β) e^{-2a(T-t)} - ε/2a
    let (a, eps, beta) = (1.0, params.epsilon, params.beta);
    let worst = (0..=m)
        .map(|k| {
            let t = grid.time(k);
            let want = (eps / (2.0 * a) - beta) * (-2.0 * a * (1.0 - t)).exp() - eps / (2.0 * a);
            ((field.cap_p(0, k) - want) / want).abs()
        })
        .fold(0.0, f64::max);
    (worst <= 1e-6, format!("worst relative error {worst:.2e}"))
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let configs = ["interbank_riccati.json", "interbank_two_regime_mp.json", "affine_singular.json"];
    let commands = ["simulate", "adjoint", "check", "oracle", "validate-model"];
    let mut runs = 0;
    let mut mismatches = Vec::new();
    for config in configs {
        let path = workspace_root().join("configs").join(config);
        let text = std::fs::read_to_string(&path).unwrap();
        for command in commands {
            if command == "oracle" && !text.contains("\"oracle\"") {
                continue;
            }
            let mut trees = Vec::new();
            for threads in ["1", "8"] {
                let out = tmp.path().join(format!("{config}-{command}-{threads}"));
                let status = Command::new(env!("CARGO_BIN_EXE_smp"))
                    .args([command, "--config"])
                    .arg(&path)
                    .arg("--out")
                    .arg(&out)
                    .args(["--threads", threads])
                    .output()
                    .unwrap();
                trees.push((status.status.code(), status.stdout, read_tree(&out)));
            }
            runs += 1;
            if trees[0] != trees[1] {
                mismatches.push(format!("{config}:{command}"));
            }
        }
    }
    (
        mismatches.is_empty(),
        format!("{runs} runs compared, mismatches: {mismatches:?}"),
    )
}

fn main() {
    let criteria: [(usize, fn() -> Verdict); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut failed = 0;
    for (id, run) in criteria {
        let (ok, detail) = run();
        println!("[{}] criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("acceptance: {} of 9 criteria pass", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
