//! Small end-to-end run: labels, both networks, benchmark.

use dnnsched_core::harness::{export, MethodId};
use dnnsched_core::powernet::{make_dataset, read_samples_csv, train_power_net, write_samples_csv};
use dnnsched_core::schednet::{make_sched_dataset, train_sched_net};
use dnnsched_core::{
    benchmark, generate_many, BenchSeeds, GpConfig, Models, PowerNet, SchedNet, SystemConfig,
    TrainConfig,
};

#[test]
fn tiny_pipeline_runs_and_round_trips() {
    let sys = SystemConfig::with_cells(2, 2);
    let gp = GpConfig::default();
    let topos = generate_many(&sys, 1, 30).unwrap();
    let ds = make_dataset(&topos, &gp, 5).unwrap();
    assert_eq!(ds.train.len() + ds.validation.len() + ds.dropped, 30 * 16);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("train.csv");
    write_samples_csv(&csv, &ds.train).unwrap();
    assert_eq!(read_samples_csv(&csv).unwrap(), ds.train);

    let tc = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let (power, curve) = train_power_net(&ds.train, &ds.validation, &sys, &tc, 1).unwrap();
    assert!(curve.epochs[curve.best_epoch].val_mse < curve.initial().val_mse);
    power.save(&dir.path().join("p.json")).unwrap();
    let power = PowerNet::load(&dir.path().join("p.json")).unwrap();

    let sched_topos = generate_many(&sys, 100, 20).unwrap();
    let sds = make_sched_dataset(&sched_topos, &power, 4).unwrap();
    let (sched, _) = train_sched_net(&sds.train, &sds.validation, 2, 2, &tc, 2).unwrap();
    sched.save(&dir.path().join("s.json")).unwrap();
    let sched = SchedNet::load(&dir.path().join("s.json")).unwrap();

    let methods = [
        MethodId::ExhaustiveGp,
        MethodId::MaxDnn,
        MethodId::DqnGp,
        MethodId::DqnDnn,
        MethodId::DqnDnnK(4),
        MethodId::GreedyGp,
        MethodId::GreedyMp,
        MethodId::RandomGp,
    ];
    let models = Models {
        power: Some(&power),
        sched: Some(&sched),
    };
    let seeds = BenchSeeds {
        topology_seed: 5000,
        random_seed: 3,
    };
    let report = benchmark(&methods, 6, &sys, &gp, &models, seeds, 0).unwrap();
    assert_eq!(report.records.len(), methods.len() * 6);
    assert!(report.violations().is_empty(), "{:?}", report.violations());

    // Same seeds, same decisions.
    let again = benchmark(&methods, 6, &sys, &gp, &models, seeds, 1).unwrap();
    for (a, b) in report.records.iter().zip(&again.records) {
        assert_eq!(
            (a.method, a.schedule, a.wsr_bps),
            (b.method, b.schedule, b.wsr_bps)
        );
    }

    let files = export(&report, &dir.path().join("bench")).unwrap();
    for f in &files {
        assert!(dir.path().join("bench").join(f).exists(), "{f}");
    }
}
