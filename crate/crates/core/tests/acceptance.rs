//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p dnnsched-core --test acceptance`.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dnnsched_core::harness::MethodId;
use dnnsched_core::nncore::{mse, Activation, InputBlock, LayerSpec};
use dnnsched_core::powernet::{make_dataset, train_power_net};
use dnnsched_core::schednet::{make_sched_dataset, train_sched_net};
use dnnsched_core::{
    benchmark, build_link_problem, enumerate_schedules, evaluate, generate_many, generate_topology,
    wsr_maximize, BenchSeeds, LinkProblem, MlpModel, MlpSpec, Models, RunConfig, RunReport,
    ScheduleSpace, SystemConfig, TrainReport,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn desk_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    RunConfig::load(&path).expect("configs/desk.toml")
}

/// Best hard-capped WSR over a uniform grid of `steps` points per link.
fn grid_oracle(p: &LinkProblem, steps: usize, floor: f64) -> f64 {
    let n = p.n_links;
    let mut best = f64::NEG_INFINITY;
    let mut pw = vec![0.0; n];
    for k in 0..steps.pow(n as u32) {
        let mut r = k;
        for (x, &cap) in pw.iter_mut().zip(&p.p_max_w) {
            let s = r % steps;
            r /= steps;
            let lo = cap * floor;
            *x = (lo + (cap - lo) * s as f64 / (steps - 1) as f64).min(cap);
        }
        best = best.max(evaluate(p, &pw).unwrap().wsr_bps);
    }
    best
}

/// `count` problems from fresh topologies with `n` cells, one random schedule each.
fn random_problems(n: usize, m: usize, count: usize, seed: u64) -> Vec<LinkProblem> {
    let cfg = SystemConfig::with_cells(n, m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let t = generate_topology(&cfg, seed * 100_000 + k as u64).unwrap();
            let space = ScheduleSpace::for_topology(&t).unwrap();
            let s = space.schedule(rng.random_range(0..space.len())).unwrap();
            build_link_problem(&t, &s).unwrap()
        })
        .collect()
}

fn gp_vs_oracle(cfg: &RunConfig) -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (n, steps, count, ratio, need) in [(2, 201, 100, 0.99, 95), (3, 51, 30, 0.98, 27)] {
        let problems = random_problems(n, 5, count, 10 + n as u64);
        let mut ok = 0;
        let mut worst = f64::INFINITY;
        for p in &problems {
            let gp = wsr_maximize(p, &cfg.gp).unwrap().alloc.wsr_bps;
            let r = gp / grid_oracle(p, steps, cfg.gp.p_floor_frac);
            worst = worst.min(r);
            if r >= ratio {
                ok += 1;
            }
        }
        pass &= ok >= need;
        parts.push(format!(
            "{n}-link {ok}/{count} >= {ratio} (need {need}, worst {worst:.4})"
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    outcome(pass, format!("{}; {secs:.1}s", parts.join(", ")))
}

fn gp_ascent(cfg: &RunConfig) -> Outcome {
    let problems = random_problems(4, 2, 1000, 77);
    let (mut monotone, mut in_box, mut converged) = (0, 0, 0);
    let mut iters = 0.0;
    for p in &problems {
        let r = wsr_maximize(p, &cfg.gp).unwrap();
        let tr = &r.objective_trace;
        if tr
            .windows(2)
            .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
        {
            monotone += 1;
        }
        let lo = |i: usize| p.p_max_w[i] * cfg.gp.p_floor_frac;
        if r.alloc
            .powers_w
            .iter()
            .enumerate()
            .all(|(i, &x)| x >= lo(i) * (1.0 - 1e-12) && x <= p.p_max_w[i])
        {
            in_box += 1;
        }
        if r.converged && r.outer_iters <= 50 {
            converged += 1;
        }
        iters += r.outer_iters as f64;
    }
    let pass = monotone == 1000 && in_box == 1000 && converged >= 950;
    outcome(
        pass,
        format!(
            "monotone {monotone}/1000, in box {in_box}/1000, converged within 50 {converged}/1000 (need 950), mean outer iterations {:.2}",
            iters / 1000.0
        ),
    )
}

fn fd_spec(hidden: Activation, out: Activation) -> MlpSpec {
    MlpSpec {
        blocks: vec![
            InputBlock {
                name: "a".into(),
                width: 3,
                first_layer: Some(LayerSpec::new(4, hidden)),
            },
            InputBlock {
                name: "b".into(),
                width: 2,
                first_layer: None,
            },
        ],
        trunk: vec![LayerSpec::new(5, hidden), LayerSpec::new(4, hidden)],
        output: LayerSpec::new(3, out),
    }
}

/// Checked coordinates and failures of a central-difference comparison over every parameter.
fn fd_check(spec: MlpSpec, seed: u64) -> (usize, usize, f64) {
    let mut model = MlpModel::new(spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &mut model.layers {
        l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let x: Vec<Array2<f64>> = model
        .spec
        .blocks
        .iter()
        .map(|b| Array2::from_shape_simple_fn((6, b.width), || rng.random_range(-1.0..1.0)))
        .collect();
    let views: Vec<ArrayView2<f64>> = x.iter().map(|a| a.view()).collect();
    let target =
        Array2::from_shape_simple_fn((6, model.output_width()), || rng.random_range(0.0..1.0));
    let (_, grads) = model.backward(&views, &target.view()).unwrap();
    let loss = |m: &MlpModel| mse(&m.forward(&views).unwrap().view(), &target.view()).unwrap();
    let h = 1e-5;
    let (mut checked, mut bad, mut worst) = (0, 0, 0.0f64);
    let mut compare = |fd: f64, g: f64| {
        checked += 1;
        let err = (fd - g).abs();
        let scale = fd.abs().max(g.abs());
        if scale > 1e-8 {
            worst = worst.max(err / scale);
        }
        if err > 1e-4 * scale + 1e-10 {
            bad += 1;
        }
    };
    for li in 0..model.layers.len() {
        for (idx, &g) in grads.weights[li].indexed_iter() {
            let (mut plus, mut minus) = (model.clone(), model.clone());
            plus.layers[li].weight[idx] += h;
            minus.layers[li].weight[idx] -= h;
            compare((loss(&plus) - loss(&minus)) / (2.0 * h), g);
        }
        for (k, &g) in grads.biases[li].indexed_iter() {
            let (mut plus, mut minus) = (model.clone(), model.clone());
            plus.layers[li].bias[k] += h;
            minus.layers[li].bias[k] -= h;
            compare((loss(&plus) - loss(&minus)) / (2.0 * h), g);
        }
    }
    (checked, bad, worst)
}

fn gradients() -> Outcome {
    let acts = [Activation::Relu, Activation::Sigmoid, Activation::Linear];
    let (mut checked, mut bad, mut worst) = (0, 0, 0.0f64);
    let mut seed = 1;
    for hidden in acts {
        for out in acts {
            for _ in 0..3 {
                let (c, b, w) = fd_check(fd_spec(hidden, out), seed);
                checked += c;
                bad += b;
                worst = worst.max(w);
                seed += 1;
            }
        }
    }
    outcome(
        bad == 0,
        format!("{checked} coordinates, {bad} outside 1e-4 relative, worst {worst:.2e}"),
    )
}

struct Desk {
    report: RunReport,
    power_curve: TrainReport,
    sched_curve: TrainReport,
    build_s: f64,
}

fn desk_pipeline(cfg: &RunConfig) -> Desk {
    let start = Instant::now();
    let d = &cfg.dataset;
    let power_topos = generate_many(&cfg.system, d.seed, d.power_topologies).unwrap();
    let n_val = dnnsched_core::config::validation_count(power_topos.len(), d.validation_fraction);
    let ds = make_dataset(&power_topos, &cfg.gp, n_val).unwrap();
    eprintln!(
        "  power samples {} + {} validation",
        ds.train.len(),
        ds.validation.len()
    );
    let (power, power_curve) =
        train_power_net(&ds.train, &ds.validation, &cfg.system, &cfg.power_train, 1).unwrap();

    let sched_topos = generate_many(
        &cfg.system,
        d.seed + d.power_topologies as u64,
        d.sched_topologies,
    )
    .unwrap();
    let n_val = dnnsched_core::config::validation_count(sched_topos.len(), d.validation_fraction);
    let sds = make_sched_dataset(&sched_topos, &power, n_val).unwrap();
    let (n, m) = (cfg.system.n_cells, cfg.system.users_per_cell);
    let (sched, sched_curve) =
        train_sched_net(&sds.train, &sds.validation, n, m, &cfg.sched_train, 2).unwrap();
    let build_s = start.elapsed().as_secs_f64();
    eprintln!("  datasets and training {build_s:.1}s");

    let methods = [
        MethodId::ExhaustiveGp,
        MethodId::MaxDnn,
        MethodId::DqnDnn,
        MethodId::DqnDnnK(5),
        MethodId::DqnGp,
        MethodId::GreedyGp,
        MethodId::RandomGp,
    ];
    let models = Models {
        power: Some(&power),
        sched: Some(&sched),
    };
    let seeds = BenchSeeds {
        topology_seed: cfg.bench.seed,
        random_seed: cfg.bench.random_seed,
    };
    let report = benchmark(
        &methods,
        200,
        &cfg.system,
        &cfg.gp,
        &models,
        seeds,
        cfg.bench.warmup,
    )
    .unwrap();
    Desk {
        report,
        power_curve,
        sched_curve,
        build_s,
    }
}

fn mean_of(r: &RunReport, m: MethodId) -> f64 {
    r.mean_wsr(m).unwrap()
}

fn desk_learning(desk: &Desk) -> Outcome {
    let r = &desk.report;
    let ratio = mean_of(r, MethodId::MaxDnn) / mean_of(r, MethodId::ExhaustiveGp);
    let minutes = desk.build_s / 60.0;
    outcome(
        ratio >= 0.85 && minutes <= 30.0,
        format!("MAX_DNN / EXHAUSTIVE_GP = {ratio:.4} over 200 topologies (need 0.85); build and training {minutes:.1} min"),
    )
}

fn desk_scheduling(desk: &Desk) -> Outcome {
    let r = &desk.report;
    let one = r.wsr(MethodId::DqnDnn);
    let five = r.wsr(MethodId::DqnDnnK(5));
    let below = one.iter().zip(&five).filter(|(a, b)| b < a).count();
    let ratio = mean_of(r, MethodId::DqnDnnK(5)) / mean_of(r, MethodId::ExhaustiveGp);
    outcome(
        below == 0 && ratio >= 0.80,
        format!("DQN_DNN_5 below DQN_DNN on {below}/200 topologies; DQN_DNN_5 / EXHAUSTIVE_GP = {ratio:.4} (need 0.80)"),
    )
}

/// Empirical CDF of `a` never above that of `b` at any pooled sample point.
fn cdf_dominates(a: &[f64], b: &[f64]) -> bool {
    let cdf = |xs: &[f64], x: f64| xs.iter().filter(|v| **v <= x).count() as f64 / xs.len() as f64;
    a.iter().chain(b).all(|&x| cdf(a, x) <= cdf(b, x))
}

fn ordering(desk: &Desk) -> Outcome {
    let r = &desk.report;
    let [ex, max, dqn5, greedy, random] = [
        MethodId::ExhaustiveGp,
        MethodId::MaxDnn,
        MethodId::DqnDnnK(5),
        MethodId::GreedyGp,
        MethodId::RandomGp,
    ]
    .map(|m| mean_of(r, m));
    let dominated = cdf_dominates(&r.wsr(MethodId::ExhaustiveGp), &r.wsr(MethodId::RandomGp));
    let pass = ex > max && max >= dqn5 && ex > greedy && greedy > random && dominated;
    outcome(
        pass,
        format!(
            "mean Mbit/s EXHAUSTIVE_GP {:.3}, MAX_DNN {:.3}, DQN_DNN_5 {:.3}, GREEDY_GP {:.3}, RANDOM_GP {:.3}; CDF dominance {dominated}",
            ex / 1e6,
            max / 1e6,
            dqn5 / 1e6,
            greedy / 1e6,
            random / 1e6
        ),
    )
}

fn speed(desk: &Desk) -> Outcome {
    let r = &desk.report;
    let ex = r.mean_time(MethodId::ExhaustiveGp).unwrap();
    let max = r.mean_time(MethodId::MaxDnn).unwrap();
    let dqn = r.mean_time(MethodId::DqnDnn).unwrap();
    let ratio = ex / max;
    outcome(
        ratio >= 100.0 && dqn < 0.010,
        format!(
            "EXHAUSTIVE_GP {:.3} ms, MAX_DNN {:.3} ms, ratio {ratio:.1}x (need 100x); DQN_DNN {:.3} ms (need < 10 ms)",
            ex * 1e3,
            max * 1e3,
            dqn * 1e3
        ),
    )
}

fn exactness(cfg: &RunConfig) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let mut counts_ok = true;
    for n in 1..=4 {
        for m in 1..=5 {
            let all = enumerate_schedules(n, m).unwrap();
            let expected = (2 * m).pow(n as u32);
            let distinct = all.iter().enumerate().all(|(k, s)| s.flat_index == k);
            counts_ok &= all.len() == expected && distinct;
        }
    }
    pass &= counts_ok;
    notes.push(format!("schedule counts {counts_ok}"));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_scale = 0.0f64;
    let mut cap_ok = true;
    for p in random_problems(3, 3, 200, 88) {
        let powers: Vec<f64> = p
            .p_max_w
            .iter()
            .map(|m| m * rng.random_range(1e-6..1.0))
            .collect();
        let base = p.sinr(&powers);
        let c = 10f64.powf(rng.random_range(-6.0..6.0));
        let mut scaled = p.clone();
        scaled.gains.iter_mut().for_each(|g| *g *= c);
        scaled.noise_w.iter_mut().for_each(|n| *n *= c);
        for (a, b) in base.iter().zip(scaled.sinr(&powers)) {
            worst_scale = worst_scale.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
        }
        let cap = p.se_cap_bps_hz * p.bandwidth_hz;
        let gp = wsr_maximize(&p, &cfg.gp).unwrap().alloc.powers_w;
        for pw in [powers, p.full_power(), gp] {
            cap_ok &= evaluate(&p, &pw)
                .unwrap()
                .rate_bps
                .iter()
                .all(|r| *r <= cap);
        }
    }
    pass &= worst_scale <= 1e-12 && cap_ok;
    notes.push(format!("SINR scale invariance worst {worst_scale:.1e}"));
    notes.push(format!("cap respected {cap_ok}"));

    let sys = SystemConfig::with_cells(3, 4);
    let a = generate_many(&sys, 5, 20).unwrap();
    let b = generate_many(&sys, 5, 20).unwrap();
    let same = a
        .iter()
        .zip(&b)
        .all(|(x, y)| x.to_json().unwrap() == y.to_json().unwrap());
    let differs = a[0].to_json().unwrap() != a[1].to_json().unwrap();
    pass &= same && differs;
    notes.push(format!(
        "topologies deterministic per seed {}",
        same && differs
    ));
    outcome(pass, notes.join(", "))
}

fn curve_echo(name: &str, curve: &TrainReport) -> (bool, String) {
    let first = curve.initial();
    let fin = &curve.epochs[curve.best_epoch];
    let mse_ok = fin.val_mse < 0.5 * first.val_mse;
    let (m0, m1) = (first.metric.unwrap(), fin.metric.unwrap());
    (
        mse_ok && m1 >= m0,
        format!(
            "{name}: val MSE {:.5} -> {:.5} (x{:.3}), val WSR {:.2} -> {:.2} Mbit/s at epoch {}",
            first.val_mse,
            fin.val_mse,
            fin.val_mse / first.val_mse,
            m0 / 1e6,
            m1 / 1e6,
            curve.best_epoch
        ),
    )
}

fn training_curves(desk: &Desk) -> Outcome {
    let (a, da) = curve_echo("power", &desk.power_curve);
    let (b, db) = curve_echo("schedule", &desk.sched_curve);
    outcome(a && b, format!("{da}; {db}"))
}

fn main() {
    // `cargo test` passes libtest flags; listing must not run the suite.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let cfg = desk_config();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |k: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        eprintln!("  criterion {k} took {:.1}s", t.elapsed().as_secs_f64());
        println!(
            "{} {k} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((k, name, o));
    };
    run(1, "gp vs grid oracle", &|| gp_vs_oracle(&cfg));
    run(2, "gp ascent and feasibility", &|| gp_ascent(&cfg));
    run(3, "gradient correctness", &gradients);
    let desk = desk_pipeline(&cfg);
    run(4, "desk-scale learning", &|| desk_learning(&desk));
    run(5, "desk-scale scheduling", &|| desk_scheduling(&desk));
    run(6, "method ordering", &|| ordering(&desk));
    run(7, "speed", &|| speed(&desk));
    run(8, "exactness", &|| exactness(&cfg));
    run(9, "training curves", &|| training_curves(&desk));

    let r = &desk.report;
    let (dqn, random) = (
        r.mean_gp_iters(MethodId::DqnGp).unwrap(),
        r.mean_gp_iters(MethodId::RandomGp).unwrap(),
    );
    println!("INFO mean GP outer iterations: DQN_GP {dqn:.2}, RANDOM_GP {random:.2}, EXHAUSTIVE_GP {:.2}", r.mean_gp_iters(MethodId::ExhaustiveGp).unwrap());

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "{} of {} criteria pass",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failing: {failed:?}");
        std::process::exit(1);
    }
}
