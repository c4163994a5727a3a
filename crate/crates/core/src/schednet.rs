//! Schedule-value network: reads every pairwise gain of a drop plus all link
//! weights and regresses the WSR the power network achieves on each
//! schedule. The top-k outputs pick candidate schedules.
//!
//! Targets are standardized with one scalar mean/std over the training
//! corpus; predictions are mapped back to bits/s, which keeps their order.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkmodel::{argmax, Schedule, ScheduleSpace};
use crate::nncore::{
    read_model_file, train, write_model_file, Activation, Dataset, InputBlock, LayerSpec, MlpModel,
    MlpSpec, TrainConfig, TrainReport,
};
use crate::powernet::{gain_db, PowerNet, Standardizer};
use crate::topo::Topology;

pub const MODEL_KIND: &str = "sched-net";

/// Minimum width of the gain block.
pub const H_BLOCK_MIN_WIDTH: usize = 600;

/// Gain-block width: all `(N + NM)^2` node pairs, at least [`H_BLOCK_MIN_WIDTH`].
pub fn h_block_width(n_cells: usize, users_per_cell: usize) -> Result<usize> {
    let nodes = n_cells
        .checked_mul(users_per_cell)
        .and_then(|u| u.checked_add(n_cells))
        .ok_or(Error::ScheduleOverflow {
            n_cells,
            users_per_cell,
        })?;
    let pairs = nodes.checked_mul(nodes).ok_or(Error::ScheduleOverflow {
        n_cells,
        users_per_cell,
    })?;
    Ok(pairs.max(H_BLOCK_MIN_WIDTH))
}

pub fn default_sched_spec(n_cells: usize, users_per_cell: usize) -> Result<MlpSpec> {
    let space = ScheduleSpace::new(n_cells, users_per_cell)?;
    let relu = |w| LayerSpec::new(w, Activation::Relu);
    Ok(MlpSpec {
        blocks: vec![
            InputBlock {
                name: "h".into(),
                width: h_block_width(n_cells, users_per_cell)?,
                first_layer: None,
            },
            InputBlock {
                name: "w".into(),
                width: 2 * n_cells * users_per_cell,
                first_layer: None,
            },
        ],
        trunk: vec![relu(800), relu(800), relu(1200)],
        output: LayerSpec::new(space.len(), Activation::Linear),
    })
}

/// Gain table of `topology` in dB, row-major as stored. Diagonal entries
/// (a node to itself) are 0.
pub fn topology_gains_db(topology: &Topology) -> Vec<f64> {
    let n = topology.gains.n;
    (0..n * n)
        .map(|k| {
            if k / n == k % n {
                0.0
            } else {
                gain_db(topology.gains.values[k])
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedNetEncoding {
    pub h_block: Vec<f64>,
    pub w_block: Vec<f64>,
}

/// One sample per topology: raw dB gains, weights, and the power network's
/// evaluated WSR (bits/s) for every schedule in flat-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedSample {
    pub topology: usize,
    pub gains_db: Vec<f64>,
    pub weights: Vec<f64>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedDataset {
    pub train: Vec<SchedSample>,
    pub validation: Vec<SchedSample>,
}

/// One sample per topology, targets = power-network WSR of every schedule.
pub fn label_topologies(topologies: &[Topology], power: &PowerNet) -> Result<Vec<SchedSample>> {
    topologies
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            let (_, allocs) = power.predict_all_schedules(t)?;
            Ok(SchedSample {
                topology: k,
                gains_db: topology_gains_db(t),
                weights: t.weights.clone(),
                targets: allocs.iter().map(|a| a.wsr_bps).collect(),
            })
        })
        .collect()
}

/// Labels each topology with the power network's WSR on every schedule. The
/// last `n_validation` topologies form the validation set.
pub fn make_sched_dataset(
    topologies: &[Topology],
    power: &PowerNet,
    n_validation: usize,
) -> Result<SchedDataset> {
    if topologies.len() < 2 || n_validation == 0 || n_validation >= topologies.len() {
        return Err(Error::InvalidConfig(format!(
            "need at least two topologies and 1..{} validation topologies, got {} and {n_validation}",
            topologies.len().max(2),
            topologies.len()
        )));
    }
    let samples = label_topologies(topologies, power)?;
    let first_val = topologies.len() - n_validation;
    let (validation, train) = samples.into_iter().partition(|s| s.topology >= first_val);
    Ok(SchedDataset { train, validation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedNet {
    pub n_cells: usize,
    pub users_per_cell: usize,
    pub h_scaler: Standardizer,
    pub target_mean: f64,
    /// Positive; a constant corpus stores 1.
    pub target_std: f64,
    pub model: MlpModel,
}

impl SchedNet {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let (n, m) = (self.n_cells, self.users_per_cell);
        self.model.check_spec(&MlpSpec {
            trunk: self.model.spec.trunk.clone(),
            ..default_sched_spec(n, m)?
        })?;
        let nodes = n + n * m;
        if self.h_scaler.width() != nodes * nodes || self.h_scaler.std.len() != nodes * nodes {
            return Err(Error::ModelFormat(
                "gain standardizer width does not match the topology size".into(),
            ));
        }
        if !(self.target_std > 0.0 && self.target_std.is_finite() && self.target_mean.is_finite()) {
            return Err(Error::ModelFormat(
                "target statistics must be finite with positive spread".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_model_file(path, MODEL_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let net: SchedNet = read_model_file(path, MODEL_KIND)?;
        net.validate()?;
        Ok(net)
    }

    pub fn h_width(&self) -> usize {
        self.model.spec.blocks[0].width
    }

    fn encode_parts(&self, gains_db: &[f64], weights: &[f64]) -> Result<SchedNetEncoding> {
        let pairs = self.h_scaler.width();
        let nodes = self.n_cells + self.n_cells * self.users_per_cell;
        if gains_db.len() != pairs {
            return Err(Error::Shape {
                what: "topology gains".into(),
                expected: pairs,
                got: gains_db.len(),
            });
        }
        if weights.len() != 2 * self.n_cells * self.users_per_cell {
            return Err(Error::Shape {
                what: "topology weights".into(),
                expected: 2 * self.n_cells * self.users_per_cell,
                got: weights.len(),
            });
        }
        let mut h_block = vec![0.0; self.h_width()];
        self.h_scaler.apply(gains_db, &mut h_block[..pairs]);
        for d in 0..nodes {
            h_block[d * nodes + d] = 0.0;
        }
        Ok(SchedNetEncoding {
            h_block,
            w_block: weights.to_vec(),
        })
    }

    pub fn encode_topology(&self, topology: &Topology) -> Result<SchedNetEncoding> {
        if topology.n_cells() != self.n_cells || topology.users_per_cell() != self.users_per_cell {
            return Err(Error::Shape {
                what: "cells x users for the schedule network".into(),
                expected: self.n_cells * self.users_per_cell,
                got: topology.n_cells() * topology.users_per_cell(),
            });
        }
        self.encode_parts(&topology_gains_db(topology), &topology.weights)
    }

    fn to_inputs(&self, encodings: &[SchedNetEncoding]) -> Vec<Array2<f64>> {
        let hw = self.h_width();
        let ww = 2 * self.n_cells * self.users_per_cell;
        let h = Array2::from_shape_fn((encodings.len(), hw), |(r, c)| encodings[r].h_block[c]);
        let w = Array2::from_shape_fn((encodings.len(), ww), |(r, c)| encodings[r].w_block[c]);
        vec![h, w]
    }

    fn denormalize(&self, v: f64) -> f64 {
        v * self.target_std + self.target_mean
    }

    /// Estimated WSR (bits/s) per schedule; index `k` is flat index `k`.
    pub fn predict_values(&self, topology: &Topology) -> Result<Vec<f64>> {
        let x = self.to_inputs(&[self.encode_topology(topology)?]);
        let views: Vec<ArrayView2<f64>> = x.iter().map(|a| a.view()).collect();
        let out = self.model.forward(&views)?;
        Ok(out.row(0).iter().map(|&v| self.denormalize(v)).collect())
    }

    /// The `k` schedules with the highest predicted value, best first; equal
    /// values keep ascending flat-index order.
    pub fn top_k_schedules(&self, topology: &Topology, k: usize) -> Result<Vec<Schedule>> {
        let values = self.predict_values(topology)?;
        let space = ScheduleSpace::for_topology(topology)?;
        top_k_indices(&values, k)?
            .into_iter()
            .map(|i| space.schedule(i))
            .collect()
    }
}

/// Indices of the `k` largest values in descending order, ties by index.
pub fn top_k_indices(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > values.len() {
        return Err(Error::OutOfRange(format!(
            "k = {k} with {} schedules",
            values.len()
        )));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx.truncate(k);
    Ok(idx)
}

fn to_dataset(net: &SchedNet, samples: &[SchedSample]) -> Result<Dataset> {
    let enc = samples
        .iter()
        .map(|s| net.encode_parts(&s.gains_db, &s.weights))
        .collect::<Result<Vec<_>>>()?;
    let width = net.model.output_width();
    if let Some(s) = samples.iter().find(|s| s.targets.len() != width) {
        return Err(Error::Shape {
            what: "schedule targets".into(),
            expected: width,
            got: s.targets.len(),
        });
    }
    Ok(Dataset {
        inputs: net.to_inputs(&enc),
        targets: Array2::from_shape_fn((samples.len(), width), |(r, c)| {
            (samples[r].targets[c] - net.target_mean) / net.target_std
        }),
    })
}

/// Mean over samples of the target WSR at the predicted best schedule.
pub fn mean_selected_wsr(predicted: &ArrayView2<f64>, samples: &[SchedSample]) -> f64 {
    let total: f64 = predicted
        .rows()
        .into_iter()
        .zip(samples)
        .map(|(row, s)| s.targets[argmax(row.as_slice().expect("row-major")).unwrap_or(0)])
        .sum();
    total / samples.len().max(1) as f64
}

/// Fraction of samples whose predicted best schedule ranks within the top
/// `fraction` of schedules by target value (rank 1 is the best; equal
/// targets share the better rank).
pub fn top_rank_hit_rate(
    predicted: &ArrayView2<f64>,
    samples: &[SchedSample],
    fraction: f64,
) -> f64 {
    let hits = predicted
        .rows()
        .into_iter()
        .zip(samples)
        .filter(|(row, s)| {
            let pick = s.targets[argmax(row.as_slice().expect("row-major")).unwrap_or(0)];
            let rank = 1 + s.targets.iter().filter(|&&t| t > pick).count();
            rank as f64 <= fraction * s.targets.len() as f64
        })
        .count();
    hits as f64 / samples.len().max(1) as f64
}

/// Raw-scale predictions for stored samples (rows follow `samples`).
pub fn predict_samples(net: &SchedNet, samples: &[SchedSample]) -> Result<Array2<f64>> {
    let data = to_dataset(net, samples)?;
    let mut out = net.model.forward(&data.views())?;
    out.mapv_inplace(|v| net.denormalize(v));
    Ok(out)
}

/// Fits input and target statistics on `train_samples`, trains a fresh
/// default network and records the validation mean selected WSR per epoch.
pub fn train_sched_net(
    train_samples: &[SchedSample],
    validation: &[SchedSample],
    n_cells: usize,
    users_per_cell: usize,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<(SchedNet, TrainReport)> {
    if train_samples.is_empty() {
        return Err(Error::Empty("schedule training set"));
    }
    let pairs = (n_cells + n_cells * users_per_cell).pow(2);
    let gains = Array2::from_shape_fn((train_samples.len(), pairs), |(r, c)| {
        train_samples[r]
            .gains_db
            .get(c)
            .copied()
            .unwrap_or(f64::NAN)
    });
    if let Some(s) = train_samples.iter().find(|s| s.gains_db.len() != pairs) {
        return Err(Error::Shape {
            what: "topology gains".into(),
            expected: pairs,
            got: s.gains_db.len(),
        });
    }
    let all: Vec<f64> = train_samples
        .iter()
        .flat_map(|s| s.targets.iter().copied())
        .collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let std = (all.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();

    let mut net = SchedNet {
        n_cells,
        users_per_cell,
        h_scaler: Standardizer::fit(&gains.view())?,
        target_mean: mean,
        target_std: if std > 0.0 { std } else { 1.0 },
        model: MlpModel::new(default_sched_spec(n_cells, users_per_cell)?, init_seed)?,
    };
    net.validate()?;
    let data = to_dataset(&net, train_samples)?;
    let val = if validation.is_empty() {
        Dataset {
            inputs: data
                .inputs
                .iter()
                .map(|a| Array2::zeros((0, a.ncols())))
                .collect(),
            targets: Array2::zeros((0, data.targets.ncols())),
        }
    } else {
        to_dataset(&net, validation)?
    };
    let mut monitor = |m: &MlpModel| -> f64 {
        if validation.is_empty() {
            return f64::NAN;
        }
        match m.forward(&val.views()) {
            Ok(pred) => mean_selected_wsr(&pred.view(), validation),
            Err(_) => f64::NAN,
        }
    };
    let report = train(&mut net.model, &data, &val, cfg, Some(&mut monitor))?;
    Ok((net, report))
}
