//! Power-allocation network: maps a link problem's gains, weights and
//! directions to per-link power fractions `p_i / p_max_i`, trained on GP
//! labels.
//!
//! Gains enter in dB, standardized per feature with training-corpus
//! statistics that travel with the model.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{wsr_maximize, GpConfig};
use crate::linkmodel::{
    argmax, build_link_problem, evaluate, Direction, LinkProblem, PowerAlloc, Schedule,
    ScheduleSpace,
};
use crate::nncore::{
    read_model_file, train, write_model_file, Activation, Dataset, InputBlock, LayerSpec, MlpModel,
    MlpSpec, TrainConfig, TrainReport,
};
use crate::topo::{SystemConfig, Topology};

pub const MODEL_KIND: &str = "power-net";

/// dB value used for a zero gain (only possible off the diagonal).
pub const ZERO_GAIN_DB: f64 = -300.0;

pub fn default_power_spec(n_links: usize) -> MlpSpec {
    let relu = |w| LayerSpec::new(w, Activation::Relu);
    MlpSpec {
        blocks: vec![
            InputBlock {
                name: "g".into(),
                width: n_links * n_links,
                first_layer: Some(relu(64)),
            },
            InputBlock {
                name: "w".into(),
                width: n_links,
                first_layer: Some(relu(32)),
            },
            InputBlock {
                name: "u".into(),
                width: n_links,
                first_layer: Some(relu(32)),
            },
        ],
        trunk: vec![relu(256), relu(128), relu(64)],
        output: LayerSpec::new(n_links, Activation::Sigmoid),
    }
}

pub fn gain_db(g: f64) -> f64 {
    if g > 0.0 {
        10.0 * g.log10()
    } else {
        ZERO_GAIN_DB
    }
}

/// Per-feature `(x - mean) / std`. Features without spread map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// 0 marks a constant feature.
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Statistics of the columns of `rows` (one sample per row).
    pub fn fit(rows: &ArrayView2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::Empty("standardizer corpus"));
        }
        let mean = rows.mean_axis(Axis(0)).expect("non-empty");
        let std = rows
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, m)| {
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
                let s = var.sqrt();
                // Rounding in the mean leaves a residue on constant columns.
                if s <= 1e-9 * (1.0 + m.abs()) {
                    0.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self {
            mean: mean.to_vec(),
            std,
        })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for ((o, v), (m, s)) in out.iter_mut().zip(x).zip(self.mean.iter().zip(&self.std)) {
            *o = if *s > 0.0 { (v - m) / s } else { 0.0 };
        }
    }
}

/// Network inputs for one link problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNetEncoding {
    pub g_block: Vec<f64>,
    pub w_block: Vec<f64>,
    pub u_block: Vec<f64>,
}

/// Row-major gains of `problem` in dB.
pub fn problem_gains_db(problem: &LinkProblem) -> Result<Vec<f64>> {
    for i in 0..problem.n_links {
        if !(problem.gain(i, i) > 0.0) {
            return Err(Error::Domain(format!(
                "direct gain of link {i} must be > 0"
            )));
        }
    }
    Ok(problem.gains.iter().map(|&g| gain_db(g)).collect())
}

pub fn encode(problem: &LinkProblem, scaler: &Standardizer) -> Result<PowerNetEncoding> {
    let n = problem.n_links;
    if scaler.width() != n * n {
        return Err(Error::Shape {
            what: "gain standardizer".into(),
            expected: n * n,
            got: scaler.width(),
        });
    }
    let db = problem_gains_db(problem)?;
    let mut g_block = vec![0.0; n * n];
    scaler.apply(&db, &mut g_block);
    Ok(PowerNetEncoding {
        g_block,
        w_block: problem.weights.clone(),
        u_block: problem.directions.iter().map(|d| d.flag()).collect(),
    })
}

/// One GP-labelled row. Gains are stored linear so the link problem can be
/// rebuilt exactly from the row and the system configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub topology: usize,
    pub schedule: usize,
    pub gains: Vec<f64>,
    pub weights: Vec<f64>,
    /// 1 for downlink, 0 for uplink.
    pub u: Vec<f64>,
    /// GP powers over the caps, each in `[0, 1]`.
    pub target: Vec<f64>,
}

impl PowerSample {
    pub fn n_links(&self) -> usize {
        self.weights.len()
    }

    pub fn directions(&self) -> Vec<Direction> {
        self.u
            .iter()
            .map(|&f| {
                if f == 1.0 {
                    Direction::Downlink
                } else {
                    Direction::Uplink
                }
            })
            .collect()
    }

    pub fn problem(&self, cfg: &SystemConfig) -> Result<LinkProblem> {
        LinkProblem::from_system(
            cfg,
            self.gains.clone(),
            self.weights.clone(),
            self.directions(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerDataset {
    pub train: Vec<PowerSample>,
    pub validation: Vec<PowerSample>,
    /// Problems whose GP solve failed and were left out.
    pub dropped: usize,
}

/// GP-labels every schedule of every topology. The last `n_validation`
/// topologies form the validation set, so no topology lands in both.
pub fn make_dataset(
    topologies: &[Topology],
    gp: &GpConfig,
    n_validation: usize,
) -> Result<PowerDataset> {
    if topologies.len() < 2 {
        return Err(Error::InvalidConfig(
            "power dataset needs at least two topologies".into(),
        ));
    }
    if n_validation == 0 || n_validation >= topologies.len() {
        return Err(Error::InvalidConfig(format!(
            "validation topologies must be in 1..{}, got {n_validation}",
            topologies.len()
        )));
    }
    gp.validate()?;
    let spaces = topologies
        .iter()
        .map(ScheduleSpace::for_topology)
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = spaces
        .iter()
        .enumerate()
        .flat_map(|(t, s)| (0..s.len()).map(move |k| (t, k)))
        .collect();
    let rows: Vec<Option<PowerSample>> = jobs
        .par_iter()
        .map(|&(t, k)| {
            let topo = &topologies[t];
            let schedule = spaces[t].schedule(k).ok()?;
            let problem = build_link_problem(topo, &schedule).ok()?;
            let r = wsr_maximize(&problem, gp).ok()?;
            Some(PowerSample {
                topology: t,
                schedule: k,
                target: r
                    .alloc
                    .powers_w
                    .iter()
                    .zip(&problem.p_max_w)
                    .map(|(p, m)| (p / m).clamp(0.0, 1.0))
                    .collect(),
                u: problem.directions.iter().map(|d| d.flag()).collect(),
                gains: problem.gains,
                weights: problem.weights,
            })
        })
        .collect();
    let dropped = rows.iter().filter(|r| r.is_none()).count();
    let first_val = topologies.len() - n_validation;
    let (validation, train): (Vec<PowerSample>, Vec<PowerSample>) = rows
        .into_iter()
        .flatten()
        .partition(|s| s.topology >= first_val);
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Empty(
            "power dataset after dropping failed GP solves",
        ));
    }
    Ok(PowerDataset {
        train,
        validation,
        dropped,
    })
}

fn header(n: usize) -> Vec<String> {
    let mut h = vec!["topology".to_string(), "schedule".to_string()];
    for i in 0..n {
        for j in 0..n {
            h.push(format!("g_{i}_{j}"));
        }
    }
    h.extend((0..n).map(|i| format!("w_{i}")));
    h.extend((0..n).map(|i| format!("u_{i}")));
    h.extend((0..n).map(|i| format!("target_{i}")));
    h
}

/// CSV with columns `topology, schedule, g_i_j (linear, row i = receiver),
/// w_i, u_i, target_i`.
pub fn write_samples_csv(path: &Path, samples: &[PowerSample]) -> Result<()> {
    let n = samples
        .first()
        .map(|s| s.n_links())
        .ok_or(Error::Empty("power samples"))?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(n))?;
    for s in samples {
        if s.n_links() != n {
            return Err(Error::Shape {
                what: "power sample links".into(),
                expected: n,
                got: s.n_links(),
            });
        }
        let mut rec = vec![s.topology.to_string(), s.schedule.to_string()];
        for v in s
            .gains
            .iter()
            .chain(&s.weights)
            .chain(&s.u)
            .chain(&s.target)
        {
            rec.push(v.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<PowerSample>> {
    let mut r = csv::Reader::from_path(path)?;
    let head = r.headers()?.clone();
    let n = head.iter().filter(|h| h.starts_with("w_")).count();
    let expected = header(n);
    if n == 0 || head.iter().ne(expected.iter().map(|s| s.as_str())) {
        return Err(Error::ModelFormat(format!(
            "{}: unexpected power dataset header",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().map_err(|e| {
                Error::ModelFormat(format!(
                    "{} row {}: column {}: {e}",
                    path.display(),
                    line + 1,
                    expected[k]
                ))
            })
        };
        let vals = (2..rec.len()).map(num).collect::<Result<Vec<f64>>>()?;
        let idx = |k: usize| -> Result<usize> {
            rec[k].parse::<usize>().map_err(|e| {
                Error::ModelFormat(format!("{} row {}: {e}", path.display(), line + 1))
            })
        };
        let (g, rest) = vals.split_at(n * n);
        out.push(PowerSample {
            topology: idx(0)?,
            schedule: idx(1)?,
            gains: g.to_vec(),
            weights: rest[..n].to_vec(),
            u: rest[n..2 * n].to_vec(),
            target: rest[2 * n..3 * n].to_vec(),
        });
    }
    Ok(out)
}

/// A trained power network with its gain standardizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerNet {
    pub n_links: usize,
    pub scaler: Standardizer,
    pub model: MlpModel,
}

impl PowerNet {
    pub fn new(model: MlpModel, scaler: Standardizer) -> Result<Self> {
        let n_links = model.output_width();
        let net = Self {
            n_links,
            scaler,
            model,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let n = self.n_links;
        let widths: Vec<usize> = self.model.spec.blocks.iter().map(|b| b.width).collect();
        if widths != [n * n, n, n] || self.model.output_width() != n {
            return Err(Error::ModelFormat(format!(
                "power network blocks {widths:?} do not fit {n} links"
            )));
        }
        if self.scaler.width() != n * n || self.scaler.std.len() != n * n {
            return Err(Error::ModelFormat(
                "gain standardizer width does not match the network".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_model_file(path, MODEL_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let net: PowerNet = read_model_file(path, MODEL_KIND)?;
        net.validate()?;
        Ok(net)
    }

    fn check_links(&self, n: usize) -> Result<()> {
        if n != self.n_links {
            return Err(Error::Shape {
                what: "links for the power network".into(),
                expected: self.n_links,
                got: n,
            });
        }
        Ok(())
    }

    /// Input matrices `(g, w, u)` for a batch of problems.
    pub fn encode_batch(&self, problems: &[&LinkProblem]) -> Result<Vec<Array2<f64>>> {
        let n = self.n_links;
        let b = problems.len();
        let mut g = Array2::zeros((b, n * n));
        let mut w = Array2::zeros((b, n));
        let mut u = Array2::zeros((b, n));
        for (r, p) in problems.iter().enumerate() {
            self.check_links(p.n_links)?;
            let e = encode(p, &self.scaler)?;
            for (c, v) in e.g_block.iter().enumerate() {
                g[[r, c]] = *v;
            }
            for i in 0..n {
                w[[r, i]] = e.w_block[i];
                u[[r, i]] = e.u_block[i];
            }
        }
        Ok(vec![g, w, u])
    }

    /// Power fractions in `[0, 1]`, one row per problem.
    pub fn predict_fractions(&self, problems: &[&LinkProblem]) -> Result<Array2<f64>> {
        let x = self.encode_batch(problems)?;
        let views: Vec<ArrayView2<f64>> = x.iter().map(|a| a.view()).collect();
        let mut out = self.model.forward(&views)?;
        out.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Ok(out)
    }

    pub fn predict_batch(&self, problems: &[&LinkProblem]) -> Result<Vec<PowerAlloc>> {
        let f = self.predict_fractions(problems)?;
        problems
            .iter()
            .zip(f.rows())
            .map(|(p, row)| {
                let powers: Vec<f64> = row.iter().zip(&p.p_max_w).map(|(x, m)| x * m).collect();
                evaluate(p, &powers)
            })
            .collect()
    }

    pub fn predict_powers(&self, problem: &LinkProblem) -> Result<PowerAlloc> {
        Ok(self
            .predict_batch(&[problem])?
            .pop()
            .expect("one problem in, one out"))
    }

    /// Predicted allocations for every schedule of `topology`, in flat-index order.
    pub fn predict_all_schedules(
        &self,
        topology: &Topology,
    ) -> Result<(Vec<Schedule>, Vec<PowerAlloc>)> {
        let space = ScheduleSpace::for_topology(topology)?;
        let schedules: Vec<Schedule> = space.iter().collect();
        let problems = schedules
            .iter()
            .map(|s| build_link_problem(topology, s))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&LinkProblem> = problems.iter().collect();
        Ok((schedules, self.predict_batch(&refs)?))
    }
}

/// Best schedule of `topology` when every schedule gets the network's powers;
/// ties go to the lowest flat index.
pub fn max_dnn_schedule(net: &PowerNet, topology: &Topology) -> Result<(Schedule, PowerAlloc)> {
    let (mut schedules, mut allocs) = net.predict_all_schedules(topology)?;
    let wsr: Vec<f64> = allocs.iter().map(|a| a.wsr_bps).collect();
    let k = argmax(&wsr).ok_or(Error::Empty("schedule values"))?;
    Ok((schedules.swap_remove(k), allocs.swap_remove(k)))
}

fn gain_db_matrix(samples: &[PowerSample], n: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((samples.len(), n * n));
    for (r, s) in samples.iter().enumerate() {
        if s.n_links() != n || s.gains.len() != n * n || s.u.len() != n || s.target.len() != n {
            return Err(Error::Shape {
                what: "power sample".into(),
                expected: n,
                got: s.n_links(),
            });
        }
        for (c, g) in s.gains.iter().enumerate() {
            m[[r, c]] = gain_db(*g);
        }
    }
    Ok(m)
}

/// Network-ready dataset from samples, using `scaler` for the gains.
pub fn to_dataset(samples: &[PowerSample], scaler: &Standardizer) -> Result<Dataset> {
    let n = samples.first().map(|s| s.n_links()).unwrap_or(0);
    let mut g = gain_db_matrix(samples, n)?;
    let mut buf = vec![0.0; n * n];
    for mut row in g.rows_mut() {
        let raw = row.to_vec();
        scaler.apply(&raw, &mut buf);
        row.iter_mut().zip(&buf).for_each(|(r, b)| *r = *b);
    }
    let col = |f: &dyn Fn(&PowerSample) -> &Vec<f64>| {
        Array2::from_shape_fn((samples.len(), n), |(r, c)| f(&samples[r])[c])
    };
    Ok(Dataset {
        inputs: vec![g, col(&|s| &s.weights), col(&|s| &s.u)],
        targets: col(&|s| &s.target),
    })
}

/// Mean WSR of the network's allocations over `problems`.
pub fn mean_predicted_wsr(net: &PowerNet, problems: &[LinkProblem]) -> Result<f64> {
    if problems.is_empty() {
        return Err(Error::Empty("problems"));
    }
    let refs: Vec<&LinkProblem> = problems.iter().collect();
    let total: f64 = net.predict_batch(&refs)?.iter().map(|a| a.wsr_bps).sum();
    Ok(total / problems.len() as f64)
}

/// Fits the standardizer on the training gains, trains a fresh default
/// network and records the validation mean WSR at every checkpoint.
pub fn train_power_net(
    train_samples: &[PowerSample],
    validation: &[PowerSample],
    system: &SystemConfig,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<(PowerNet, TrainReport)> {
    let n = train_samples
        .first()
        .map(|s| s.n_links())
        .ok_or(Error::Empty("power training set"))?;
    let scaler = Standardizer::fit(&gain_db_matrix(train_samples, n)?.view())?;
    let data = to_dataset(train_samples, &scaler)?;
    let val = if validation.is_empty() {
        Dataset {
            inputs: data
                .inputs
                .iter()
                .map(|a| Array2::zeros((0, a.ncols())))
                .collect(),
            targets: Array2::zeros((0, n)),
        }
    } else {
        to_dataset(validation, &scaler)?
    };
    let problems = validation
        .iter()
        .map(|s| s.problem(system))
        .collect::<Result<Vec<_>>>()?;

    let mut net = PowerNet::new(MlpModel::new(default_power_spec(n), init_seed)?, scaler)?;
    let mut monitor_net = net.clone();
    let mut monitor = |m: &MlpModel| -> f64 {
        if problems.is_empty() {
            return f64::NAN;
        }
        monitor_net.model.layers.clone_from(&m.layers);
        mean_predicted_wsr(&monitor_net, &problems).unwrap_or(f64::NAN)
    };
    let report = train(&mut net.model, &data, &val, cfg, Some(&mut monitor))?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo::generate_topology;

    fn small_cfg() -> SystemConfig {
        SystemConfig::with_cells(2, 2)
    }

    #[test]
    fn spec_shapes() {
        let s = default_power_spec(4);
        assert_eq!(s.output.width, 4);
        assert_eq!(s.output.activation, Activation::Sigmoid);
        let firsts: Vec<usize> = s
            .blocks
            .iter()
            .map(|b| b.first_layer.unwrap().width)
            .collect();
        assert_eq!(firsts, [64, 32, 32]);
        assert_eq!(
            s.blocks.iter().map(|b| b.width).collect::<Vec<_>>(),
            [16, 4, 4]
        );
        let t2 = default_power_spec(2);
        assert_eq!(t2.output.width, 2);
        assert_eq!(t2.trunk, s.trunk);
        assert_eq!(
            s.trunk.iter().map(|l| l.width).collect::<Vec<_>>(),
            [256, 128, 64]
        );
    }

    #[test]
    fn constant_gains_standardize_to_zero() {
        let rows = Array2::from_elem((3, 4), -80.0);
        let sc = Standardizer::fit(&rows.view()).unwrap();
        let p = LinkProblem::new(
            vec![1e-8; 4],
            vec![0.5, 0.5],
            vec![Direction::Downlink, Direction::Uplink],
            vec![1e-13; 2],
            vec![0.2; 2],
            1e7,
            7.0,
        )
        .unwrap();
        let e = encode(&p, &sc).unwrap();
        assert_eq!(e.g_block, vec![0.0; 4]);
        assert_eq!(e.u_block, vec![1.0, 0.0]);
        assert_eq!(e.w_block, vec![0.5, 0.5]);
        assert_eq!(encode(&p, &sc).unwrap(), e);
    }

    #[test]
    fn standardizer_values() {
        let rows = ndarray::array![[1.0, 5.0], [3.0, 5.0]];
        let sc = Standardizer::fit(&rows.view()).unwrap();
        assert_eq!(sc.mean, vec![2.0, 5.0]);
        assert_eq!(sc.std, vec![1.0, 0.0]);
        let mut out = [0.0; 2];
        sc.apply(&[4.0, 7.0], &mut out);
        assert_eq!(out, [2.0, 0.0]);
    }

    #[test]
    fn dataset_counts_and_split() {
        let cfg = small_cfg();
        let topos: Vec<Topology> = (0..10)
            .map(|s| generate_topology(&cfg, s).unwrap())
            .collect();
        let ds = make_dataset(&topos, &GpConfig::default(), 2).unwrap();
        assert_eq!(ds.dropped, 0);
        assert_eq!(ds.train.len() + ds.validation.len(), 160);
        assert_eq!(ds.validation.len(), 32);
        assert!(ds.train.iter().all(|s| s.topology < 8));
        assert!(ds.validation.iter().all(|s| s.topology >= 8));
        for s in ds.train.iter().chain(&ds.validation) {
            assert!(s.target.iter().all(|t| (0.0..=1.0).contains(t)));
            let p = s.problem(&cfg).unwrap();
            let sched = ScheduleSpace::for_topology(&topos[s.topology])
                .unwrap()
                .schedule(s.schedule)
                .unwrap();
            assert_eq!(p, build_link_problem(&topos[s.topology], &sched).unwrap());
        }
        assert!(make_dataset(&topos[..1], &GpConfig::default(), 1).is_err());
        assert!(make_dataset(&topos, &GpConfig::default(), 10).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let cfg = small_cfg();
        let topos: Vec<Topology> = (0..3)
            .map(|s| generate_topology(&cfg, s).unwrap())
            .collect();
        let ds = make_dataset(&topos, &GpConfig::default(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        write_samples_csv(&path, &ds.train).unwrap();
        assert_eq!(read_samples_csv(&path).unwrap(), ds.train);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "topology,schedule,g_0_0,g_0_1,g_1_0,g_1_1,w_0,w_1,u_0,u_1,target_0,target_1\n"
        ));
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_samples_csv(&path).is_err());
    }

    fn zero_net(n: usize) -> PowerNet {
        let sc = Standardizer {
            mean: vec![0.0; n * n],
            std: vec![1.0; n * n],
        };
        PowerNet::new(MlpModel::zeros(default_power_spec(n)).unwrap(), sc).unwrap()
    }

    #[test]
    fn zero_model_predicts_half_power() {
        let t = generate_topology(&small_cfg(), 4).unwrap();
        let net = zero_net(2);
        let (schedules, allocs) = net.predict_all_schedules(&t).unwrap();
        for (s, a) in schedules.iter().zip(&allocs) {
            let p = build_link_problem(&t, s).unwrap();
            let half: Vec<f64> = p.p_max_w.iter().map(|m| m * 0.5).collect();
            assert_eq!(a.powers_w, half);
        }
    }

    #[test]
    fn batch_equals_loop_and_box_holds() {
        let t = generate_topology(&small_cfg(), 9).unwrap();
        let mut net = zero_net(2);
        net.model = MlpModel::new(default_power_spec(2), 5).unwrap();
        let (schedules, allocs) = net.predict_all_schedules(&t).unwrap();
        for (s, a) in schedules.iter().zip(&allocs) {
            let p = build_link_problem(&t, s).unwrap();
            let one = net.predict_powers(&p).unwrap();
            assert_eq!(&one, a);
            assert!(one
                .powers_w
                .iter()
                .zip(&p.p_max_w)
                .all(|(x, m)| *x >= 0.0 && x <= m));
        }
        let (best, alloc) = max_dnn_schedule(&net, &t).unwrap();
        let wsr: Vec<f64> = allocs.iter().map(|a| a.wsr_bps).collect();
        assert_eq!(best.flat_index, argmax(&wsr).unwrap());
        assert_eq!(alloc, allocs[best.flat_index]);
    }

    #[test]
    fn single_cell_single_user_picks_better_direction() {
        let t = generate_topology(&SystemConfig::with_cells(1, 1), 2).unwrap();
        let net = zero_net(1);
        let (s, a) = max_dnn_schedule(&net, &t).unwrap();
        let (_, allocs) = net.predict_all_schedules(&t).unwrap();
        assert_eq!(allocs.len(), 2);
        let want = if allocs[1].wsr_bps > allocs[0].wsr_bps {
            1
        } else {
            0
        };
        assert_eq!(s.flat_index, want);
        assert_eq!(a, allocs[want]);
    }

    #[test]
    fn wrong_link_count_is_rejected() {
        let t = generate_topology(&SystemConfig::with_cells(3, 1), 2).unwrap();
        assert!(matches!(
            max_dnn_schedule(&zero_net(2), &t),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let mut net = zero_net(2);
        net.model = MlpModel::new(default_power_spec(2), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        net.save(&path).unwrap();
        assert_eq!(PowerNet::load(&path).unwrap(), net);
        net.model.save(&path).unwrap();
        assert!(matches!(PowerNet::load(&path), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn short_training_learns() {
        let cfg = small_cfg();
        let topos: Vec<Topology> = (0..40)
            .map(|s| generate_topology(&cfg, 100 + s).unwrap())
            .collect();
        let ds = make_dataset(&topos, &GpConfig::default(), 8).unwrap();
        let tc = TrainConfig {
            epochs: 15,
            batch_size: 32,
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        let (net, report) = train_power_net(&ds.train, &ds.validation, &cfg, &tc, 1).unwrap();
        assert!(report.epochs.iter().all(|e| e.metric.is_some()));
        assert!(report.epochs[report.best_epoch].val_mse < report.initial().val_mse);
        let problems: Vec<LinkProblem> = ds
            .validation
            .iter()
            .map(|s| s.problem(&cfg).unwrap())
            .collect();
        let m = mean_predicted_wsr(&net, &problems).unwrap();
        assert_eq!(Some(m), report.epochs[report.best_epoch].metric);
    }
}
