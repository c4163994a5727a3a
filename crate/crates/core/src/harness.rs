//! Scheduling/power methods, paired timed benchmarks and CSV export.
//!
//! Every method sees the same topology sequence. Timing covers the decision
//! and power allocation only, measured on the calling thread.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{wsr_maximize, GpConfig};
use crate::linkmodel::{
    argmax, build_link_problem, evaluate, Direction, LinkChoice, PowerAlloc, Schedule,
    ScheduleSpace,
};
use crate::powernet::{max_dnn_schedule, PowerNet};
use crate::schednet::SchedNet;
use crate::topo::{generate_topology, SystemConfig, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    ExhaustiveGp,
    MaxDnn,
    DqnGp,
    DqnDnn,
    DqnDnnK(usize),
    GreedyGp,
    GreedyMp,
    RandomGp,
}

impl MethodId {
    pub fn needs_power_net(self) -> bool {
        matches!(
            self,
            MethodId::MaxDnn | MethodId::DqnDnn | MethodId::DqnDnnK(_)
        )
    }

    pub fn needs_sched_net(self) -> bool {
        matches!(
            self,
            MethodId::DqnGp | MethodId::DqnDnn | MethodId::DqnDnnK(_)
        )
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodId::ExhaustiveGp => f.write_str("EXHAUSTIVE_GP"),
            MethodId::MaxDnn => f.write_str("MAX_DNN"),
            MethodId::DqnGp => f.write_str("DQN_GP"),
            MethodId::DqnDnn => f.write_str("DQN_DNN"),
            MethodId::DqnDnnK(k) => write!(f, "DQN_DNN_{k}"),
            MethodId::GreedyGp => f.write_str("GREEDY_GP"),
            MethodId::GreedyMp => f.write_str("GREEDY_MP"),
            MethodId::RandomGp => f.write_str("RANDOM_GP"),
        }
    }
}

/// Case-insensitive; `-` and `_` are interchangeable (`dqn-dnn-5`, `DQN_DNN_5`).
impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        let m = match norm.as_str() {
            "EXHAUSTIVE_GP" => MethodId::ExhaustiveGp,
            "MAX_DNN" => MethodId::MaxDnn,
            "DQN_GP" => MethodId::DqnGp,
            "DQN_DNN" => MethodId::DqnDnn,
            "GREEDY_GP" => MethodId::GreedyGp,
            "GREEDY_MP" => MethodId::GreedyMp,
            "RANDOM_GP" => MethodId::RandomGp,
            other => {
                let k = other
                    .strip_prefix("DQN_DNN_")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))?;
                if k == 0 {
                    return Err(Error::InvalidConfig("DQN_DNN_K needs k >= 1".into()));
                }
                MethodId::DqnDnnK(k)
            }
        };
        Ok(m)
    }
}

/// Parses a comma-separated method list. A bare `dqn-dnn-k` means
/// `DQN_DNN_<default_k>`.
pub fn parse_methods(list: &str, default_k: usize) -> Result<Vec<MethodId>> {
    let methods = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            if s.trim().to_ascii_uppercase().replace('-', "_") == "DQN_DNN_K" {
                Ok(MethodId::DqnDnnK(default_k))
            } else {
                s.parse()
            }
        })
        .collect::<Result<Vec<MethodId>>>()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("empty method list".into()));
    }
    Ok(methods)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Models<'a> {
    pub power: Option<&'a PowerNet>,
    pub sched: Option<&'a SchedNet>,
}

impl<'a> Models<'a> {
    fn power(&self, m: MethodId) -> Result<&'a PowerNet> {
        self.power
            .ok_or_else(|| Error::MissingModel(format!("{m} needs a power network")))
    }

    fn sched(&self, m: MethodId) -> Result<&'a SchedNet> {
        self.sched
            .ok_or_else(|| Error::MissingModel(format!("{m} needs a schedule network")))
    }

    pub fn check(&self, methods: &[MethodId]) -> Result<()> {
        for &m in methods {
            if m.needs_power_net() {
                self.power(m)?;
            }
            if m.needs_sched_net() {
                self.sched(m)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub schedule: Schedule,
    pub alloc: PowerAlloc,
    pub elapsed_s: f64,
    /// Mean outer iterations over the GP solves this method ran.
    pub gp_outer_iters: Option<f64>,
}

/// Per cell, the link with the highest weight; ties go to the lower link
/// index `2 * slot + direction_bit`.
pub fn greedy_schedule(topology: &Topology) -> Result<Schedule> {
    let m = topology.users_per_cell();
    let space = ScheduleSpace::for_topology(topology)?;
    let choices = (0..topology.n_cells())
        .map(|c| {
            let w: Vec<f64> = (0..2 * m)
                .map(|code| topology.weights[2 * topology.ue_index(c, 0) + code])
                .collect();
            let code = argmax(&w).ok_or(Error::Empty("cell links"))?;
            Ok(LinkChoice {
                user_slot: code / 2,
                direction: Direction::from_bit(code % 2),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    space.from_choices(choices)
}

fn gp_on(
    topology: &Topology,
    schedule: Schedule,
    gp: &GpConfig,
) -> Result<(Schedule, PowerAlloc, f64)> {
    let r = wsr_maximize(&build_link_problem(topology, &schedule)?, gp)?;
    Ok((schedule, r.alloc, r.outer_iters as f64))
}

/// Best of the schednet's top-`k` schedules under power-network allocation.
fn dqn_dnn(
    topology: &Topology,
    power: &PowerNet,
    sched: &SchedNet,
    k: usize,
) -> Result<(Schedule, PowerAlloc)> {
    let candidates = sched.top_k_schedules(topology, k)?;
    let problems = candidates
        .iter()
        .map(|s| build_link_problem(topology, s))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = problems.iter().collect();
    let allocs = power.predict_batch(&refs)?;
    // Candidates are in predicted order; re-rank by evaluated WSR, ties to
    // the earlier candidate.
    let wsr: Vec<f64> = allocs.iter().map(|a| a.wsr_bps).collect();
    let best = argmax(&wsr).ok_or(Error::Empty("candidate schedules"))?;
    Ok((candidates[best].clone(), allocs[best].clone()))
}

/// Runs one method on one topology. `rng` is only drawn from by
/// [`MethodId::RandomGp`].
pub fn run_method<R: Rng>(
    method: MethodId,
    topology: &Topology,
    models: &Models,
    gp: &GpConfig,
    rng: &mut R,
) -> Result<Decision> {
    let start = Instant::now();
    let mut iters = None;
    let (schedule, alloc) = match method {
        MethodId::ExhaustiveGp => {
            let space = ScheduleSpace::for_topology(topology)?;
            let mut best: Option<(Schedule, PowerAlloc)> = None;
            let mut total_iters = 0.0;
            for s in space.iter() {
                let (s, a, it) = gp_on(topology, s, gp)?;
                total_iters += it;
                // Strictly better only, so ties keep the lower flat index.
                if best.as_ref().is_none_or(|(_, b)| a.wsr_bps > b.wsr_bps) {
                    best = Some((s, a));
                }
            }
            iters = Some(total_iters / space.len() as f64);
            best.ok_or(Error::Empty("schedule space"))?
        }
        MethodId::RandomGp => {
            let space = ScheduleSpace::for_topology(topology)?;
            let s = space.schedule(rng.random_range(0..space.len()))?;
            let (s, a, it) = gp_on(topology, s, gp)?;
            iters = Some(it);
            (s, a)
        }
        MethodId::GreedyGp => {
            let (s, a, it) = gp_on(topology, greedy_schedule(topology)?, gp)?;
            iters = Some(it);
            (s, a)
        }
        MethodId::GreedyMp => {
            let s = greedy_schedule(topology)?;
            let p = build_link_problem(topology, &s)?;
            let a = evaluate(&p, &p.full_power())?;
            (s, a)
        }
        MethodId::MaxDnn => max_dnn_schedule(models.power(method)?, topology)?,
        MethodId::DqnGp => {
            let s = models
                .sched(method)?
                .top_k_schedules(topology, 1)?
                .remove(0);
            let (s, a, it) = gp_on(topology, s, gp)?;
            iters = Some(it);
            (s, a)
        }
        MethodId::DqnDnn => dqn_dnn(topology, models.power(method)?, models.sched(method)?, 1)?,
        MethodId::DqnDnnK(k) => dqn_dnn(topology, models.power(method)?, models.sched(method)?, k)?,
    };
    Ok(Decision {
        schedule,
        alloc,
        elapsed_s: start.elapsed().as_secs_f64(),
        gp_outer_iters: iters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub method: MethodId,
    /// Index of the topology within the run.
    pub topology: usize,
    pub seed: u64,
    pub schedule: usize,
    pub wsr_bps: f64,
    pub wall_time_s: f64,
    pub gp_outer_iters: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: MethodId,
    pub mean_wsr_bps: f64,
    pub mean_time_s: f64,
    /// `(mean_ref - mean) / mean_ref` in percent against EXHAUSTIVE_GP; absent
    /// when the run has no EXHAUSTIVE_GP.
    pub loss_pct: Option<f64>,
    pub mean_gp_outer_iters: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub methods: Vec<MethodId>,
    pub n_topologies: usize,
    /// Method-major: all topologies of `methods[0]`, then `methods[1]`, ...
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSeeds {
    /// Topology `k` is drawn with seed `topology_seed + k`.
    pub topology_seed: u64,
    pub random_seed: u64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl RunReport {
    pub fn for_method(&self, m: MethodId) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.method == m)
    }

    pub fn wsr(&self, m: MethodId) -> Vec<f64> {
        self.for_method(m).map(|r| r.wsr_bps).collect()
    }

    pub fn mean_wsr(&self, m: MethodId) -> Option<f64> {
        mean(self.for_method(m).map(|r| r.wsr_bps))
    }

    pub fn mean_time(&self, m: MethodId) -> Option<f64> {
        mean(self.for_method(m).map(|r| r.wall_time_s))
    }

    pub fn mean_gp_iters(&self, m: MethodId) -> Option<f64> {
        mean(self.for_method(m).filter_map(|r| r.gp_outer_iters))
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let reference = self.mean_wsr(MethodId::ExhaustiveGp);
        self.methods
            .iter()
            .map(|&m| {
                let mw = self.mean_wsr(m).unwrap_or(f64::NAN);
                SummaryRow {
                    method: m,
                    mean_wsr_bps: mw,
                    mean_time_s: self.mean_time(m).unwrap_or(f64::NAN),
                    loss_pct: reference.map(|r| 100.0 * (r - mw) / r),
                    mean_gp_outer_iters: self.mean_gp_iters(m),
                }
            })
            .collect()
    }

    /// Sorted WSR values with empirical probabilities `k / n`.
    pub fn cdf(&self, m: MethodId) -> Vec<(f64, f64)> {
        let mut v = self.wsr(m);
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.into_iter()
            .enumerate()
            .map(|(k, x)| (x, (k + 1) as f64 / n))
            .collect()
    }

    /// Per-topology contract breaches: EXHAUSTIVE_GP below a method that
    /// searches a subset with the same GP, or a top-k method below one with
    /// fewer candidates.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let ex = self.wsr(MethodId::ExhaustiveGp);
        for m in [MethodId::GreedyGp, MethodId::RandomGp, MethodId::DqnGp] {
            if ex.is_empty() || !self.methods.contains(&m) {
                continue;
            }
            for (t, (e, v)) in ex.iter().zip(self.wsr(m)).enumerate() {
                if *e < v * (1.0 - 1e-6) {
                    out.push(format!("topology {t}: EXHAUSTIVE_GP {e} < {m} {v}"));
                }
            }
        }
        let k_of = |m: MethodId| match m {
            MethodId::DqnDnn => Some(1),
            MethodId::DqnDnnK(k) => Some(k),
            _ => None,
        };
        for &a in &self.methods {
            for &b in &self.methods {
                let (Some(ka), Some(kb)) = (k_of(a), k_of(b)) else {
                    continue;
                };
                if kb <= ka || a == b {
                    continue;
                }
                for (t, (va, vb)) in self.wsr(a).iter().zip(self.wsr(b)).enumerate() {
                    if vb < *va {
                        out.push(format!("topology {t}: {b} {vb} < {a} {va}"));
                    }
                }
            }
        }
        out
    }
}

/// Generates `n` topologies from consecutive seeds and runs every method on
/// each, sequentially on this thread. Each method first runs `warmup` untimed
/// times on the first topology.
pub fn benchmark(
    methods: &[MethodId],
    n: usize,
    system: &SystemConfig,
    gp: &GpConfig,
    models: &Models,
    seeds: BenchSeeds,
    warmup: usize,
) -> Result<RunReport> {
    if n == 0 {
        return Err(Error::InvalidConfig(
            "benchmark needs at least one topology".into(),
        ));
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig(
            "benchmark needs at least one method".into(),
        ));
    }
    models.check(methods)?;
    let topologies = (0..n)
        .map(|k| generate_topology(system, seeds.topology_seed.wrapping_add(k as u64)))
        .collect::<Result<Vec<_>>>()?;
    benchmark_on(methods, &topologies, gp, models, seeds, warmup)
}

/// As [`benchmark`] over given topologies. Record seeds are
/// `topology_seed + k`.
pub fn benchmark_on(
    methods: &[MethodId],
    topologies: &[Topology],
    gp: &GpConfig,
    models: &Models,
    seeds: BenchSeeds,
    warmup: usize,
) -> Result<RunReport> {
    models.check(methods)?;
    let mut records = Vec::with_capacity(methods.len() * topologies.len());
    for &m in methods {
        // Warm-up draws come from a throwaway stream.
        let mut scratch = ChaCha8Rng::seed_from_u64(seeds.random_seed ^ 0x5eed);
        for _ in 0..warmup {
            if let Some(t) = topologies.first() {
                run_method(m, t, models, gp, &mut scratch)?;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds.random_seed);
        for (k, t) in topologies.iter().enumerate() {
            let d = run_method(m, t, models, gp, &mut rng)?;
            records.push(Record {
                method: m,
                topology: k,
                seed: seeds.topology_seed.wrapping_add(k as u64),
                schedule: d.schedule.flat_index,
                wsr_bps: d.alloc.wsr_bps,
                wall_time_s: d.elapsed_s,
                gp_outer_iters: d.gp_outer_iters,
            });
        }
    }
    Ok(RunReport {
        methods: methods.to_vec(),
        n_topologies: topologies.len(),
        records,
    })
}

/// Provenance of a run: tool version, configuration hash, seeds, inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Input file name to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String) -> Self {
        Self {
            tool: "dnnsched".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Writes `summary.csv`, `records.csv`, `gp_iterations.csv` and one
/// `cdf_<METHOD>.csv` per method into `out_dir`; returns the file names.
pub fn export(report: &RunReport, out_dir: &Path) -> Result<Vec<String>> {
    if report.records.is_empty() {
        return Err(Error::Empty("run report"));
    }
    std::fs::create_dir_all(out_dir)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut files = Vec::new();

    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    w.write_record(["method", "mean_wsr_mbps", "mean_time_s", "loss_pct"])?;
    for r in report.summary() {
        w.write_record([
            r.method.to_string(),
            (r.mean_wsr_bps / 1e6).to_string(),
            r.mean_time_s.to_string(),
            opt(r.loss_pct),
        ])?;
    }
    w.flush()?;
    files.push("summary.csv".to_string());

    let mut w = csv::Writer::from_path(out_dir.join("gp_iterations.csv"))?;
    w.write_record(["method", "mean_outer_iters", "topologies"])?;
    for r in report.summary() {
        if let Some(it) = r.mean_gp_outer_iters {
            w.write_record([
                r.method.to_string(),
                it.to_string(),
                report.n_topologies.to_string(),
            ])?;
        }
    }
    w.flush()?;
    files.push("gp_iterations.csv".to_string());

    let mut w = csv::Writer::from_path(out_dir.join("records.csv"))?;
    w.write_record([
        "method",
        "topology",
        "seed",
        "schedule",
        "wsr_bps",
        "wall_time_s",
        "gp_outer_iters",
    ])?;
    for r in &report.records {
        w.write_record([
            r.method.to_string(),
            r.topology.to_string(),
            r.seed.to_string(),
            r.schedule.to_string(),
            r.wsr_bps.to_string(),
            r.wall_time_s.to_string(),
            opt(r.gp_outer_iters),
        ])?;
    }
    w.flush()?;
    files.push("records.csv".to_string());

    for &m in &report.methods {
        let name = format!("cdf_{m}.csv");
        let mut w = csv::Writer::from_path(out_dir.join(&name))?;
        w.write_record(["wsr_mbps", "probability"])?;
        for (x, p) in report.cdf(m) {
            w.write_record([(x / 1e6).to_string(), p.to_string()])?;
        }
        w.flush()?;
        files.push(name);
    }
    Ok(files)
}
