//! Schedule space, per-schedule link problems, and SINR / rate / WSR evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topo::{noise_power_w, NodeKind, SystemConfig, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Downlink,
    Uplink,
}

impl Direction {
    /// Offset into the per-UE weight pair, and the low bit of a cell choice.
    pub fn bit(self) -> usize {
        match self {
            Direction::Downlink => 0,
            Direction::Uplink => 1,
        }
    }

    pub fn from_bit(bit: usize) -> Self {
        if bit & 1 == 0 {
            Direction::Downlink
        } else {
            Direction::Uplink
        }
    }

    /// Network input flag: downlink 1, uplink 0.
    pub fn flag(self) -> f64 {
        match self {
            Direction::Downlink => 1.0,
            Direction::Uplink => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkChoice {
    pub user_slot: usize,
    pub direction: Direction,
}

impl LinkChoice {
    fn code(self) -> usize {
        2 * self.user_slot + self.direction.bit()
    }

    fn from_code(code: usize) -> Self {
        Self {
            user_slot: code / 2,
            direction: Direction::from_bit(code),
        }
    }
}

/// One active link per cell. `flat_index = sum_c code_c * (2M)^c` with
/// `code_c = 2 * user_slot + direction_bit`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Schedule {
    pub choices: Vec<LinkChoice>,
    pub flat_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleSpace {
    n_cells: usize,
    users_per_cell: usize,
    len: usize,
}

impl ScheduleSpace {
    pub fn new(n_cells: usize, users_per_cell: usize) -> Result<Self> {
        if n_cells == 0 || users_per_cell == 0 {
            return Err(Error::InvalidConfig(
                "schedule space needs at least one cell and one user".into(),
            ));
        }
        let overflow = || Error::ScheduleOverflow {
            n_cells,
            users_per_cell,
        };
        let radix = users_per_cell.checked_mul(2).ok_or_else(overflow)?;
        let exp = u32::try_from(n_cells).map_err(|_| overflow())?;
        let len = radix.checked_pow(exp).ok_or_else(overflow)?;
        Ok(Self {
            n_cells,
            users_per_cell,
            len,
        })
    }

    pub fn for_topology(t: &Topology) -> Result<Self> {
        Self::new(t.n_cells(), t.users_per_cell())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users_per_cell
    }

    pub fn schedule(&self, flat_index: usize) -> Result<Schedule> {
        if flat_index >= self.len {
            return Err(Error::OutOfRange(format!(
                "schedule index {flat_index} not below {}",
                self.len
            )));
        }
        let radix = 2 * self.users_per_cell;
        let mut rest = flat_index;
        let choices = (0..self.n_cells)
            .map(|_| {
                let c = LinkChoice::from_code(rest % radix);
                rest /= radix;
                c
            })
            .collect();
        Ok(Schedule {
            choices,
            flat_index,
        })
    }

    pub fn index_of(&self, choices: &[LinkChoice]) -> Result<usize> {
        if choices.len() != self.n_cells {
            return Err(Error::InvalidSchedule(format!(
                "{} choices for {} cells",
                choices.len(),
                self.n_cells
            )));
        }
        let radix = 2 * self.users_per_cell;
        let mut idx = 0usize;
        for c in choices.iter().rev() {
            if c.user_slot >= self.users_per_cell {
                return Err(Error::InvalidSchedule(format!(
                    "user slot {} with {} users per cell",
                    c.user_slot, self.users_per_cell
                )));
            }
            idx = idx * radix + c.code();
        }
        Ok(idx)
    }

    pub fn from_choices(&self, choices: Vec<LinkChoice>) -> Result<Schedule> {
        let flat_index = self.index_of(&choices)?;
        Ok(Schedule {
            choices,
            flat_index,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Schedule> + '_ {
        (0..self.len).map(move |k| self.schedule(k).expect("index below len"))
    }
}

/// All `(2M)^N` schedules in ascending flat index order.
pub fn enumerate_schedules(n_cells: usize, users_per_cell: usize) -> Result<Vec<Schedule>> {
    let space = ScheduleSpace::new(n_cells, users_per_cell)?;
    Ok(space.iter().collect())
}

/// The N-link power-control instance induced by one schedule.
///
/// `gains[i * n + j]` is the gain from link `j`'s transmitter to link `i`'s
/// receiver, so row `i` holds everything link `i`'s receiver hears.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkProblem {
    pub n_links: usize,
    pub gains: Vec<f64>,
    pub weights: Vec<f64>,
    pub directions: Vec<Direction>,
    pub noise_w: Vec<f64>,
    pub p_max_w: Vec<f64>,
    pub bandwidth_hz: f64,
    pub se_cap_bps_hz: f64,
}

impl LinkProblem {
    /// Builds and validates a problem. Off-diagonal gains may be zero.
    pub fn new(
        gains: Vec<f64>,
        weights: Vec<f64>,
        directions: Vec<Direction>,
        noise_w: Vec<f64>,
        p_max_w: Vec<f64>,
        bandwidth_hz: f64,
        se_cap_bps_hz: f64,
    ) -> Result<Self> {
        let p = Self {
            n_links: weights.len(),
            gains,
            weights,
            directions,
            noise_w,
            p_max_w,
            bandwidth_hz,
            se_cap_bps_hz,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_links;
        if n == 0 {
            return Err(Error::Empty("link problem with zero links"));
        }
        for (what, len, want) in [
            ("gain matrix", self.gains.len(), n * n),
            ("directions", self.directions.len(), n),
            ("noise", self.noise_w.len(), n),
            ("power caps", self.p_max_w.len(), n),
        ] {
            if len != want {
                return Err(Error::Shape {
                    what: what.into(),
                    expected: want,
                    got: len,
                });
            }
        }
        if let Some(g) = self.gains.iter().find(|g| !g.is_finite() || **g < 0.0) {
            return Err(Error::NonFinite(format!("gain {g}")));
        }
        for i in 0..n {
            if self.gain(i, i) <= 0.0 {
                return Err(Error::Domain(format!(
                    "direct gain of link {i} must be > 0"
                )));
            }
            if !(self.noise_w[i] > 0.0 && self.noise_w[i].is_finite()) {
                return Err(Error::Domain(format!("noise of link {i} must be > 0")));
            }
            if !(self.p_max_w[i] > 0.0 && self.p_max_w[i].is_finite()) {
                return Err(Error::Domain(format!("power cap of link {i} must be > 0")));
            }
        }
        if !(self.bandwidth_hz > 0.0 && self.se_cap_bps_hz > 0.0) {
            return Err(Error::Domain("bandwidth and SE cap must be > 0".into()));
        }
        Ok(())
    }

    /// Problem for links whose gains are already known; noise and caps follow
    /// from each link's direction (downlink: BS transmits, UE receives).
    pub fn from_system(
        cfg: &SystemConfig,
        gains: Vec<f64>,
        weights: Vec<f64>,
        directions: Vec<Direction>,
    ) -> Result<Self> {
        let (noise_w, p_max_w) = directions
            .iter()
            .map(|d| {
                let (tx, rx) = match d {
                    Direction::Downlink => (NodeKind::Bs, NodeKind::Ue),
                    Direction::Uplink => (NodeKind::Ue, NodeKind::Bs),
                };
                (noise_power_w(cfg, rx), cfg.max_power_w(tx))
            })
            .unzip();
        Self::new(
            gains,
            weights,
            directions,
            noise_w,
            p_max_w,
            cfg.bandwidth_hz,
            cfg.se_cap_bps_hz,
        )
    }

    #[inline]
    pub fn gain(&self, rx_link: usize, tx_link: usize) -> f64 {
        self.gains[rx_link * self.n_links + tx_link]
    }

    /// Interference plus noise at link `i`'s receiver.
    pub fn interference_plus_noise(&self, i: usize, powers: &[f64]) -> f64 {
        let row = &self.gains[i * self.n_links..(i + 1) * self.n_links];
        let mut acc = self.noise_w[i];
        for (j, (&g, &p)) in row.iter().zip(powers).enumerate() {
            if j != i {
                acc += g * p;
            }
        }
        acc
    }

    pub fn sinr(&self, powers: &[f64]) -> Vec<f64> {
        (0..self.n_links)
            .map(|i| self.gain(i, i) * powers[i] / self.interference_plus_noise(i, powers))
            .collect()
    }

    /// Weighted sum-rate without the spectral-efficiency cap; this is what
    /// the GP power control maximizes.
    pub fn uncapped_wsr(&self, powers: &[f64]) -> f64 {
        self.sinr(powers)
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * self.bandwidth_hz * s.ln_1p() / std::f64::consts::LN_2)
            .sum()
    }

    pub fn full_power(&self) -> Vec<f64> {
        self.p_max_w.clone()
    }
}

/// Powers with their per-link SINR, capped rate, and the weighted sum-rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAlloc {
    pub powers_w: Vec<f64>,
    pub sinr: Vec<f64>,
    pub rate_bps: Vec<f64>,
    pub wsr_bps: f64,
}

/// SINR, capped rate `W * min(log2(1 + SINR), cap)`, and WSR for `powers_w`.
pub fn evaluate(problem: &LinkProblem, powers_w: &[f64]) -> Result<PowerAlloc> {
    if powers_w.len() != problem.n_links {
        return Err(Error::Shape {
            what: "power vector".into(),
            expected: problem.n_links,
            got: powers_w.len(),
        });
    }
    for (link, (&p, &max)) in powers_w.iter().zip(&problem.p_max_w).enumerate() {
        if !(p >= 0.0 && p <= max) {
            return Err(Error::PowerOutOfBox {
                link,
                power: p,
                max,
            });
        }
    }
    let sinr = problem.sinr(powers_w);
    let rate_bps: Vec<f64> = sinr
        .iter()
        .map(|s| problem.bandwidth_hz * s.log2_1p().min(problem.se_cap_bps_hz))
        .collect();
    let wsr_bps = rate_bps
        .iter()
        .zip(&problem.weights)
        .map(|(r, w)| r * w)
        .sum();
    Ok(PowerAlloc {
        powers_w: powers_w.to_vec(),
        sinr,
        rate_bps,
        wsr_bps,
    })
}

trait Log2OnePlus {
    fn log2_1p(self) -> f64;
}

impl Log2OnePlus for f64 {
    #[inline]
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}

/// Transmitter and receiver node ids of the link a cell schedules.
pub fn link_endpoints(topology: &Topology, cell: usize, choice: LinkChoice) -> (usize, usize) {
    let bs = topology.bs_node(cell);
    let ue = topology.ue_node(cell, choice.user_slot);
    match choice.direction {
        Direction::Downlink => (bs, ue),
        Direction::Uplink => (ue, bs),
    }
}

pub fn build_link_problem(topology: &Topology, schedule: &Schedule) -> Result<LinkProblem> {
    let cfg = &topology.config;
    let n = cfg.n_cells;
    if schedule.choices.len() != n {
        return Err(Error::InvalidSchedule(format!(
            "{} choices for {n} cells",
            schedule.choices.len()
        )));
    }
    if let Some(c) = schedule
        .choices
        .iter()
        .find(|c| c.user_slot >= cfg.users_per_cell)
    {
        return Err(Error::InvalidSchedule(format!(
            "user slot {} with {} users per cell",
            c.user_slot, cfg.users_per_cell
        )));
    }
    let ends: Vec<(usize, usize)> = schedule
        .choices
        .iter()
        .enumerate()
        .map(|(c, &ch)| link_endpoints(topology, c, ch))
        .collect();

    let mut gains = vec![0.0; n * n];
    for (i, &(_, rx)) in ends.iter().enumerate() {
        for (j, &(tx, _)) in ends.iter().enumerate() {
            gains[i * n + j] = topology.gain(tx, rx);
        }
    }
    let weights = schedule
        .choices
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            topology.weights[2 * topology.ue_index(c, ch.user_slot) + ch.direction.bit()]
        })
        .collect();
    let directions = schedule.choices.iter().map(|c| c.direction).collect();
    let noise_w = ends
        .iter()
        .map(|&(_, rx)| noise_power_w(cfg, topology.nodes[rx].kind))
        .collect();
    let p_max_w = ends
        .iter()
        .map(|&(tx, _)| topology.nodes[tx].max_power_w)
        .collect();

    LinkProblem::new(
        gains,
        weights,
        directions,
        noise_w,
        p_max_w,
        cfg.bandwidth_hz,
        cfg.se_cap_bps_hz,
    )
}

/// Index of the largest value; ties go to the lowest index and NaN never wins.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(k),
        }
    }
    best
}

/// The schedule with the highest WSR under `evaluator`; ties to the lowest
/// flat index.
pub fn best_schedule_by<F>(schedules: &[Schedule], mut evaluator: F) -> Result<(&Schedule, f64)>
where
    F: FnMut(&Schedule) -> f64,
{
    let mut best: Option<(&Schedule, f64)> = None;
    for s in schedules {
        let v = evaluator(s);
        if v.is_nan() {
            continue;
        }
        best = match best {
            Some((b, bv)) if bv > v || (bv == v && b.flat_index < s.flat_index) => Some((b, bv)),
            _ => Some((s, v)),
        };
    }
    best.ok_or(Error::Empty("no schedule to choose from"))
}
