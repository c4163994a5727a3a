//! Random small-cell drops and their pairwise channel gains.
//!
//! A drop places `n_cells` base stations in a square area with a minimum
//! pairwise separation, then `users_per_cell` UEs uniformly over an annulus
//! around each BS. Every ordered node pair gets a linear power gain built
//! from the path-loss model below plus log-normal shadowing. Reciprocal
//! pairs share a single realization.
//!
//! Path-loss formulas take distances in meters; the BS–UE and near UE–UE
//! branches convert to kilometers internally.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shadowing standard deviation for LOS BS–UE links (dB).
pub const SHADOW_SIGMA_LOS_DB: f64 = 3.0;
/// Shadowing standard deviation for NLOS BS–UE, UE–UE and BS–BS links (dB).
pub const SHADOW_SIGMA_NLOS_DB: f64 = 4.0;

/// UE–UE distance at which the path-loss formula switches branch.
pub const UE_UE_BREAKPOINT_M: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub n_cells: usize,
    pub users_per_cell: usize,
    pub area_side_m: f64,
    pub bs_min_sep_m: f64,
    pub ue_min_dist_m: f64,
    pub ue_max_dist_m: f64,
    pub bandwidth_hz: f64,
    pub bs_max_power_dbm: f64,
    pub ue_max_power_dbm: f64,
    pub bs_noise_figure_db: f64,
    pub ue_noise_figure_db: f64,
    pub noise_density_dbm_hz: f64,
    pub se_cap_bps_hz: f64,
    pub rng_seed: u64,
    /// Rejection-sampling budget for one drop, counted over whole-drop retries
    /// and BS placement retries together.
    pub max_attempts: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_cells: 4,
            users_per_cell: 5,
            area_side_m: 120.0,
            bs_min_sep_m: 40.0,
            ue_min_dist_m: 10.0,
            ue_max_dist_m: 40.0,
            bandwidth_hz: 10e6,
            bs_max_power_dbm: 24.0,
            ue_max_power_dbm: 23.0,
            bs_noise_figure_db: 12.0,
            ue_noise_figure_db: 9.0,
            noise_density_dbm_hz: -174.0,
            se_cap_bps_hz: 7.0,
            rng_seed: 0,
            max_attempts: 10_000,
        }
    }
}

impl SystemConfig {
    /// Default geometry and radio parameters with a different cell layout.
    pub fn with_cells(n_cells: usize, users_per_cell: usize) -> Self {
        Self {
            n_cells,
            users_per_cell,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_cells == 0 || self.users_per_cell == 0 {
            return bad("n_cells and users_per_cell must be at least 1");
        }
        let positive = [
            ("area_side_m", self.area_side_m),
            ("bs_min_sep_m", self.bs_min_sep_m),
            ("ue_min_dist_m", self.ue_min_dist_m),
            ("ue_max_dist_m", self.ue_max_dist_m),
            ("bandwidth_hz", self.bandwidth_hz),
            ("se_cap_bps_hz", self.se_cap_bps_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.ue_min_dist_m >= self.ue_max_dist_m {
            return bad("ue_min_dist_m must be below ue_max_dist_m");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        Ok(())
    }

    pub fn n_ues(&self) -> usize {
        self.n_cells * self.users_per_cell
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + self.n_ues()
    }

    pub fn max_power_w(&self, kind: NodeKind) -> f64 {
        match kind {
            NodeKind::Bs => dbm_to_watts(self.bs_max_power_dbm),
            NodeKind::Ue => dbm_to_watts(self.ue_max_power_dbm),
        }
    }

    pub fn noise_figure_db(&self, kind: NodeKind) -> f64 {
        match kind {
            NodeKind::Bs => self.bs_noise_figure_db,
            NodeKind::Ue => self.ue_noise_figure_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Bs,
    Ue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    pub position: [f64; 2],
    pub cell: usize,
    pub max_power_w: f64,
    pub noise_figure_db: f64,
}

impl Node {
    pub fn distance_to(&self, other: &Node) -> f64 {
        distance(self.position, other.position)
    }
}

/// Dense table of linear power gains, `values[tx * n + rx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    pub n: usize,
    pub values: Vec<f64>,
}

impl GainTable {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, tx: usize, rx: usize) -> f64 {
        self.values[tx * self.n + rx]
    }

    #[inline]
    pub fn set(&mut self, tx: usize, rx: usize, g: f64) {
        self.values[tx * self.n + rx] = g;
    }
}

/// One random drop. Nodes are BSs `0..N` followed by UEs grouped by cell, so
/// UE `i` (global index `cell * M + slot`) is node `N + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub config: SystemConfig,
    pub nodes: Vec<Node>,
    pub gains: GainTable,
    /// `weights[2i]` is UE `i`'s downlink weight, `weights[2i + 1]` its uplink weight.
    pub weights: Vec<f64>,
}

impl Topology {
    pub fn n_cells(&self) -> usize {
        self.config.n_cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.config.users_per_cell
    }

    pub fn bs_node(&self, cell: usize) -> usize {
        cell
    }

    pub fn ue_index(&self, cell: usize, slot: usize) -> usize {
        cell * self.config.users_per_cell + slot
    }

    pub fn ue_node(&self, cell: usize, slot: usize) -> usize {
        self.config.n_cells + self.ue_index(cell, slot)
    }

    pub fn gain(&self, tx: usize, rx: usize) -> f64 {
        self.gains.get(tx, rx)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Topology = serde_json::from_str(s)?;
        let n = t.config.n_nodes();
        if t.nodes.len() != n || t.gains.n != n || t.gains.values.len() != n * n {
            return Err(Error::Shape {
                what: "topology nodes/gains".into(),
                expected: n,
                got: t.nodes.len(),
            });
        }
        if t.weights.len() != 2 * t.config.n_ues() {
            return Err(Error::Shape {
                what: "topology weights".into(),
                expected: 2 * t.config.n_ues(),
                got: t.weights.len(),
            });
        }
        Ok(t)
    }
}

/// Which path-loss formula applies to a node pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathLossModel {
    BsUeLos,
    BsUeNlos,
    UeUe,
    /// No dedicated formula exists for BS–BS; the NLOS BS–UE one is reused.
    BsBs,
}

impl PathLossModel {
    pub fn shadow_sigma_db(self) -> f64 {
        match self {
            PathLossModel::BsUeLos => SHADOW_SIGMA_LOS_DB,
            _ => SHADOW_SIGMA_NLOS_DB,
        }
    }
}

fn check_distance(distance_m: f64) -> Result<()> {
    if distance_m.is_finite() && distance_m > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "distance must be finite and > 0, got {distance_m}"
        )))
    }
}

pub fn path_loss_db(model: PathLossModel, distance_m: f64) -> Result<f64> {
    check_distance(distance_m)?;
    let r_km = distance_m / 1000.0;
    Ok(match model {
        PathLossModel::BsUeLos => 103.8 + 20.9 * r_km.log10(),
        PathLossModel::BsUeNlos | PathLossModel::BsBs => 145.4 + 37.5 * r_km.log10(),
        PathLossModel::UeUe if distance_m <= UE_UE_BREAKPOINT_M => 98.45 + 20.0 * r_km.log10(),
        // Far branch takes meters; the jump at the breakpoint is intended.
        PathLossModel::UeUe => 55.78 + 40.0 * distance_m.log10(),
    })
}

/// Pico-cell outdoor LOS probability.
pub fn los_probability(distance_m: f64) -> Result<f64> {
    check_distance(distance_m)?;
    let p = 0.5 - (5.0 * (-156.0 / distance_m).exp()).min(0.5)
        + (5.0 * (-distance_m / 30.0).exp()).min(0.5);
    Ok(p.clamp(0.0, 1.0))
}

/// Linear gain for a total attenuation of `path_loss_db + shadow_db`.
pub fn gain_from_db(path_loss_db: f64, shadow_db: f64) -> f64 {
    10f64.powf(-(path_loss_db + shadow_db) / 10.0)
}

pub fn channel_gain_linear(model: PathLossModel, distance_m: f64, shadow_db: f64) -> Result<f64> {
    Ok(gain_from_db(path_loss_db(model, distance_m)?, shadow_db))
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Thermal noise over the configured bandwidth plus the receiver noise figure.
pub fn noise_power_w(config: &SystemConfig, receiver: NodeKind) -> f64 {
    let dbm = config.noise_density_dbm_hz
        + 10.0 * config.bandwidth_hz.log10()
        + config.noise_figure_db(receiver);
    dbm_to_watts(dbm)
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

struct RawDrop {
    bs: Vec<[f64; 2]>,
    /// (position, parent cell) in generation order.
    ues: Vec<([f64; 2], usize)>,
}

fn place_base_stations(
    cfg: &SystemConfig,
    rng: &mut ChaCha8Rng,
    attempts: &mut usize,
) -> Result<Vec<[f64; 2]>> {
    let mut bs: Vec<[f64; 2]> = Vec::with_capacity(cfg.n_cells);
    while bs.len() < cfg.n_cells {
        *attempts += 1;
        if *attempts > cfg.max_attempts {
            return Err(Error::GeometryInfeasible {
                attempts: cfg.max_attempts,
            });
        }
        let p = [
            rng.random::<f64>() * cfg.area_side_m,
            rng.random::<f64>() * cfg.area_side_m,
        ];
        if bs.iter().all(|&q| distance(p, q) >= cfg.bs_min_sep_m) {
            bs.push(p);
        } else {
            // Restart the whole layout so late stations are not squeezed.
            bs.clear();
        }
    }
    Ok(bs)
}

fn place_users(
    cfg: &SystemConfig,
    bs: &[[f64; 2]],
    rng: &mut ChaCha8Rng,
) -> Vec<([f64; 2], usize)> {
    let (r0, r1) = (cfg.ue_min_dist_m, cfg.ue_max_dist_m);
    let mut ues = Vec::with_capacity(cfg.n_ues());
    for (cell, c) in bs.iter().enumerate() {
        for _ in 0..cfg.users_per_cell {
            // Uniform over the annulus area.
            let u: f64 = rng.random();
            let r = (r0 * r0 + u * (r1 * r1 - r0 * r0)).sqrt();
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            ues.push(([c[0] + r * theta.cos(), c[1] + r * theta.sin()], cell));
        }
    }
    ues
}

/// Gains over raw node order (BSs, then UEs in generation order).
fn draw_gains(drop: &RawDrop, rng: &mut ChaCha8Rng) -> Result<GainTable> {
    let nb = drop.bs.len();
    let positions: Vec<([f64; 2], NodeKind)> = drop
        .bs
        .iter()
        .map(|&p| (p, NodeKind::Bs))
        .chain(drop.ues.iter().map(|&(p, _)| (p, NodeKind::Ue)))
        .collect();
    let n = positions.len();
    debug_assert_eq!(n, nb + drop.ues.len());
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut table = GainTable::zeros(n);
    for a in 0..n {
        for b in (a + 1)..n {
            let (pa, ka) = positions[a];
            let (pb, kb) = positions[b];
            let d = distance(pa, pb);
            let model = match (ka, kb) {
                (NodeKind::Bs, NodeKind::Bs) => PathLossModel::BsBs,
                (NodeKind::Ue, NodeKind::Ue) => PathLossModel::UeUe,
                _ => {
                    if rng.random::<f64>() < los_probability(d)? {
                        PathLossModel::BsUeLos
                    } else {
                        PathLossModel::BsUeNlos
                    }
                }
            };
            let shadow = model.shadow_sigma_db() * std_normal.sample(rng);
            let g = channel_gain_linear(model, d, shadow)?;
            table.set(a, b, g);
            table.set(b, a, g);
        }
    }
    Ok(table)
}

/// Strongest BS per UE (ties to the lowest cell index), over raw node order.
fn strongest_cells(nb: usize, n_ue: usize, gains: &GainTable) -> Vec<usize> {
    (0..n_ue)
        .map(|u| {
            let node = nb + u;
            let mut best = 0;
            for c in 1..nb {
                if gains.get(c, node) > gains.get(best, node) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Generate one drop. Drops whose strongest-BS association would leave a cell
/// with a user count other than `users_per_cell`, or a user outside the annulus
/// of its new BS, are discarded and redrawn.
pub fn generate_topology(config: &SystemConfig, seed: u64) -> Result<Topology> {
    config.validate()?;
    let cfg = config;
    let (nb, m) = (cfg.n_cells, cfg.users_per_cell);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempts = 0usize;

    loop {
        let bs = place_base_stations(cfg, &mut rng, &mut attempts)?;
        let ues = place_users(cfg, &bs, &mut rng);
        let drop = RawDrop { bs, ues };
        let raw = draw_gains(&drop, &mut rng)?;
        let cells = strongest_cells(nb, drop.ues.len(), &raw);

        let mut counts = vec![0usize; nb];
        for &c in &cells {
            counts[c] += 1;
        }
        let ring_ok = drop.ues.iter().zip(&cells).all(|(&(p, _), &c)| {
            let d = distance(p, drop.bs[c]);
            d >= cfg.ue_min_dist_m && d <= cfg.ue_max_dist_m
        });
        if !ring_ok || counts.iter().any(|&k| k != m) {
            attempts += 1;
            if attempts > cfg.max_attempts {
                return Err(Error::GeometryInfeasible {
                    attempts: cfg.max_attempts,
                });
            }
            continue;
        }

        // Raw node index for each final node slot: BSs, then UEs grouped by
        // their (possibly re-associated) cell in generation order.
        let mut order: Vec<usize> = (0..nb).collect();
        for cell in 0..nb {
            order.extend(
                (0..drop.ues.len())
                    .filter(|&u| cells[u] == cell)
                    .map(|u| nb + u),
            );
        }

        let n = order.len();
        let mut gains = GainTable::zeros(n);
        for (i, &ri) in order.iter().enumerate() {
            for (j, &rj) in order.iter().enumerate() {
                gains.set(i, j, raw.get(ri, rj));
            }
        }
        let nodes = order
            .iter()
            .enumerate()
            .map(|(id, &raw_id)| {
                let (kind, position, cell) = if raw_id < nb {
                    (NodeKind::Bs, drop.bs[raw_id], raw_id)
                } else {
                    let u = raw_id - nb;
                    (NodeKind::Ue, drop.ues[u].0, cells[u])
                };
                Node {
                    id,
                    kind,
                    position,
                    cell,
                    max_power_w: cfg.max_power_w(kind),
                    noise_figure_db: cfg.noise_figure_db(kind),
                }
            })
            .collect();
        let weights = (0..2 * cfg.n_ues()).map(|_| rng.random::<f64>()).collect();

        return Ok(Topology {
            config: cfg.clone(),
            nodes,
            gains,
            weights,
        });
    }
}

/// `count` drops seeded `base_seed, base_seed + 1, ...`.
pub fn generate_many(config: &SystemConfig, base_seed: u64, count: usize) -> Result<Vec<Topology>> {
    use rayon::prelude::*;
    (0..count as u64)
        .into_par_iter()
        .map(|k| generate_topology(config, base_seed.wrapping_add(k)))
        .collect()
}
