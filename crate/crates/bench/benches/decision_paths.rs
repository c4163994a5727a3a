//! Per-topology decision cost of each method. Networks are freshly
//! initialised; inference cost does not depend on the weights.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dnnsched_core::harness::run_method;
use dnnsched_core::powernet::{default_power_spec, Standardizer};
use dnnsched_core::schednet::default_sched_spec;
use dnnsched_core::{
    build_link_problem, generate_many, max_dnn_schedule, wsr_maximize, GpConfig, MethodId,
    MlpModel, Models, PowerNet, SchedNet, ScheduleSpace, SystemConfig,
};
use rand::SeedableRng;

fn nets(n: usize, m: usize) -> (PowerNet, SchedNet) {
    let scaler = Standardizer {
        mean: vec![-100.0; n * n],
        std: vec![15.0; n * n],
    };
    let power = PowerNet::new(MlpModel::new(default_power_spec(n), 1).unwrap(), scaler).unwrap();
    let nodes = n + n * m;
    let sched = SchedNet {
        n_cells: n,
        users_per_cell: m,
        h_scaler: Standardizer {
            mean: vec![-100.0; nodes * nodes],
            std: vec![15.0; nodes * nodes],
        },
        target_mean: 5e7,
        target_std: 2e7,
        model: MlpModel::new(default_sched_spec(n, m).unwrap(), 2).unwrap(),
    };
    sched.validate().unwrap();
    (power, sched)
}

fn decision_paths(c: &mut Criterion) {
    let (n, m) = (2, 2);
    let cfg = SystemConfig::with_cells(n, m);
    let gp = GpConfig::default();
    let topos = generate_many(&cfg, 11, 16).unwrap();
    let (power, sched) = nets(n, m);
    let models = Models {
        power: Some(&power),
        sched: Some(&sched),
    };

    let space = ScheduleSpace::for_topology(&topos[0]).unwrap();
    let problem = build_link_problem(&topos[0], &space.schedule(5).unwrap()).unwrap();
    c.bench_function("gp_solve_2_links", |b| {
        b.iter(|| wsr_maximize(&problem, &gp).unwrap())
    });

    c.bench_function("max_dnn_forward_all_schedules", |b| {
        let mut k = 0;
        b.iter(|| {
            k = (k + 1) % topos.len();
            max_dnn_schedule(&power, &topos[k]).unwrap()
        })
    });

    let mut group = c.benchmark_group("decision");
    group.sample_size(20);
    for method in [
        MethodId::ExhaustiveGp,
        MethodId::MaxDnn,
        MethodId::DqnDnn,
        MethodId::DqnDnnK(5),
        MethodId::GreedyGp,
    ] {
        group.bench_function(method.to_string(), |b| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            b.iter_batched(
                || topos[0].clone(),
                |t| run_method(method, &t, &models, &gp, &mut rng).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, decision_paths);
criterion_main!(benches);
