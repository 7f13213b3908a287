//! Discretization of the AMI axis and the encoding parameter, plus
//! enumeration of the state and action spaces.
//!
//! The AMI axis [0, R) is cut into `t_i - 1` uniform half-open cells and
//! one terminal success cell (R, inf); a packet is decoded exactly when
//! its accumulated mutual information exceeds R. A state is the
//! quadruplet (k_hol, k_next, cell_hol, cell_next): HARQ round counters
//! and quantized AMIs of the head-of-line packet and the one behind it.
//! Counter pairs range over all (k1, k2) with 0 <= k2 < k1 <= k_max; a
//! pair with k2 = 0 means the companion slot holds an untransmitted
//! packet, whose AMI is zero by definition, so only one AMI coordinate
//! is free.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("rate must be positive and finite")]
    RateNotPositive,
    #[error("AMI discretization needs t_i >= 2, got {0}")]
    TooFewAmiCells(usize),
    #[error("parameter discretization needs t_p >= 3, got {0}")]
    TooFewPPoints(usize),
    #[error("k_max must be at least 1")]
    KMaxZero,
}

/// Uniform quantization of the AMI axis: `t_i - 1` finite cells covering
/// [0, rate) plus the success cell (rate, inf) at index `t_i - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmiGrid {
    rate: f64,
    t_i: usize,
    width: f64,
}

impl AmiGrid {
    pub fn new(rate: f64, t_i: usize) -> Result<Self, ConfigError> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(ConfigError::RateNotPositive);
        }
        if t_i < 2 {
            return Err(ConfigError::TooFewAmiCells(t_i));
        }
        Ok(Self {
            rate,
            t_i,
            width: rate / (t_i - 1) as f64,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn t_i(&self) -> usize {
        self.t_i
    }

    /// Total number of cells including the success cell.
    pub fn num_cells(&self) -> usize {
        self.t_i
    }

    pub fn num_finite_cells(&self) -> usize {
        self.t_i - 1
    }

    pub fn success_cell(&self) -> usize {
        self.t_i - 1
    }

    pub fn is_success(&self, cell: usize) -> bool {
        cell == self.t_i - 1
    }

    /// Width of each finite cell.
    pub fn cell_width(&self) -> f64 {
        self.width
    }

    /// Lower edge of finite cell `j`; `boundary(t_i - 1)` is exactly `rate`.
    pub fn boundary(&self, j: usize) -> f64 {
        debug_assert!(j < self.t_i);
        if j == self.t_i - 1 {
            self.rate
        } else {
            j as f64 * self.width
        }
    }

    /// Cell containing an AMI value; total on [0, inf).
    ///
    /// Values above `rate` map to the success cell. `rate` itself does
    /// not (decoding needs AMI strictly above the rate); it lands in the
    /// last finite cell.
    pub fn quantize(&self, ami: f64) -> usize {
        debug_assert!(ami >= 0.0 || ami > -1e-12, "negative AMI {ami}");
        if ami > self.rate {
            return self.t_i - 1;
        }
        let j = (ami.max(0.0) / self.width) as usize;
        j.min(self.t_i - 2)
    }

    /// Midpoint of a finite cell; the success cell has no representative
    /// because a decoded packet's AMI never feeds another update.
    pub fn representative(&self, cell: usize) -> Option<f64> {
        if cell >= self.t_i - 1 {
            None
        } else {
            Some((cell as f64 + 0.5) * self.width)
        }
    }
}

/// Interior grid {j/(t_p - 1) : j = 1..=t_p-2} for the encoding
/// parameter. The endpoints 0 and 1 are excluded: a joint encoding that
/// starves one packet is covered by the one-packet modes instead.
pub fn build_p_grid(t_p: usize) -> Result<Vec<f64>, ConfigError> {
    if t_p < 3 {
        return Err(ConfigError::TooFewPPoints(t_p));
    }
    let denom = (t_p - 1) as f64;
    Ok((1..=t_p - 2).map(|j| j as f64 / denom).collect())
}

/// Encoding mode of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// The head-of-line packet occupies the whole block.
    OneP,
    /// The head-of-line packet is abandoned; the block carries the next one.
    ZeroP,
    /// Time sharing: fraction p of the block for HOL, 1-p for HOL-next.
    Ts,
    /// Superposition coding: power fraction p for HOL, 1-p for HOL-next.
    Sc,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::OneP => "1P",
            Mode::ZeroP => "0P",
            Mode::Ts => "TS",
            Mode::Sc => "SC",
        }
    }
}

/// An encoding action: a mode plus, for joint modes, an index into the
/// p-grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub mode: Mode,
    pub p_index: Option<u16>,
}

impl Action {
    pub const ONE_P: Action = Action {
        mode: Mode::OneP,
        p_index: None,
    };
    pub const ZERO_P: Action = Action {
        mode: Mode::ZeroP,
        p_index: None,
    };

    pub fn ts(p_index: u16) -> Action {
        Action {
            mode: Mode::Ts,
            p_index: Some(p_index),
        }
    }

    pub fn sc(p_index: u16) -> Action {
        Action {
            mode: Mode::Sc,
            p_index: Some(p_index),
        }
    }

    pub fn is_joint(&self) -> bool {
        matches!(self.mode, Mode::Ts | Mode::Sc)
    }
}

/// Which encoding modes the controller may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeSet {
    /// Conventional HARQ: {1P} only.
    OnePOnly,
    /// {1P, 0P, TS}.
    TsSet,
    /// {1P, 0P, SC}.
    ScSet,
    /// {1P, 0P, TS, SC}.
    All,
}

impl ModeSet {
    pub fn has_zero_p(&self) -> bool {
        !matches!(self, ModeSet::OnePOnly)
    }

    pub fn has_ts(&self) -> bool {
        matches!(self, ModeSet::TsSet | ModeSet::All)
    }

    pub fn has_sc(&self) -> bool {
        matches!(self, ModeSet::ScSet | ModeSet::All)
    }
}

/// The joint action space: a mode set crossed with a p-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    mode_set: ModeSet,
    p_grid: Vec<f64>,
}

impl ActionSpace {
    pub fn new(mode_set: ModeSet, t_p: usize) -> Result<Self, ConfigError> {
        Ok(Self {
            mode_set,
            p_grid: build_p_grid(t_p)?,
        })
    }

    pub fn mode_set(&self) -> ModeSet {
        self.mode_set
    }

    pub fn p_grid(&self) -> &[f64] {
        &self.p_grid
    }

    pub fn p_value(&self, action: &Action) -> Option<f64> {
        action.p_index.map(|i| self.p_grid[i as usize])
    }

    /// Actions permitted in a state, in the canonical order
    /// 1P < 0P < TS (p ascending) < SC (p ascending).
    ///
    /// Joint and drop modes exist only when the resolved configuration
    /// still holds a partially transmitted packet; a state whose packets
    /// are all decoded, truncated, or untransmitted forces a fresh
    /// one-packet start.
    pub fn allowed(&self, space: &StateSpace, state: &State) -> Vec<Action> {
        if space.is_forced_fresh(state) {
            return vec![Action::ONE_P];
        }
        let mut out = Vec::with_capacity(2 + 2 * self.p_grid.len());
        out.push(Action::ONE_P);
        if self.mode_set.has_zero_p() {
            out.push(Action::ZERO_P);
        }
        if self.mode_set.has_ts() {
            for i in 0..self.p_grid.len() {
                out.push(Action::ts(i as u16));
            }
        }
        if self.mode_set.has_sc() {
            for i in 0..self.p_grid.len() {
                out.push(Action::sc(i as u16));
            }
        }
        out
    }
}

/// One state of the HARQ process as seen after a feedback round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    /// Rounds already used by the head-of-line packet (>= 1).
    pub k_hol: u8,
    /// Rounds already used by the companion; 0 means untransmitted.
    pub k_next: u8,
    /// Quantized AMI of the head-of-line packet.
    pub c_hol: u16,
    /// Quantized AMI of the companion; 0 whenever `k_next` is 0.
    pub c_next: u16,
}

/// The paper's five feedback classes, decidable from any state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateClass {
    /// Joint round, both packets decoded.
    AckAck,
    /// Joint round, neither decoded.
    NackNack,
    /// Joint round, exactly one decoded (either order).
    AckNack,
    /// Single-packet round, decoded.
    OnePAck,
    /// Single-packet round, not decoded.
    OnePNack,
}

/// Enumeration of all states for a given truncation depth and AMI grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    k_max: usize,
    grid: AmiGrid,
    pairs: Vec<(u8, u8)>,
    offsets: Vec<usize>,
    len: usize,
}

impl StateSpace {
    pub fn new(k_max: usize, grid: AmiGrid) -> Result<Self, ConfigError> {
        if k_max == 0 {
            return Err(ConfigError::KMaxZero);
        }
        let mut pairs = Vec::new();
        for k1 in 1..=k_max as u8 {
            for k2 in 0..k1 {
                pairs.push((k1, k2));
            }
        }
        let t = grid.num_cells();
        let mut offsets = Vec::with_capacity(pairs.len());
        let mut len = 0;
        for &(_, k2) in &pairs {
            offsets.push(len);
            len += if k2 == 0 { t } else { t * t };
        }
        Ok(Self {
            k_max,
            grid,
            pairs,
            offsets,
            len,
        })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn grid(&self) -> &AmiGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn counter_pairs(&self) -> &[(u8, u8)] {
        &self.pairs
    }

    pub fn pair_index(&self, k_hol: u8, k_next: u8) -> usize {
        debug_assert!(k_next < k_hol && (k_hol as usize) <= self.k_max);
        // Pairs are laid out (1,0), (2,0), (2,1), (3,0), ...: the pairs
        // with first coordinate k1 start after 0+1+...+(k1-1) entries.
        let k1 = k_hol as usize;
        k1 * (k1 - 1) / 2 + k_next as usize
    }

    pub fn pair_offset(&self, k_hol: u8, k_next: u8) -> usize {
        self.offsets[self.pair_index(k_hol, k_next)]
    }

    pub fn index_of(&self, s: &State) -> usize {
        let base = self.pair_offset(s.k_hol, s.k_next);
        if s.k_next == 0 {
            debug_assert_eq!(s.c_next, 0);
            base + s.c_hol as usize
        } else {
            base + s.c_hol as usize * self.grid.num_cells() + s.c_next as usize
        }
    }

    pub fn state_of(&self, idx: usize) -> State {
        debug_assert!(idx < self.len);
        let pair = match self.offsets.binary_search(&idx) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let (k_hol, k_next) = self.pairs[pair];
        let rel = idx - self.offsets[pair];
        let t = self.grid.num_cells();
        if k_next == 0 {
            State {
                k_hol,
                k_next,
                c_hol: rel as u16,
                c_next: 0,
            }
        } else {
            State {
                k_hol,
                k_next,
                c_hol: (rel / t) as u16,
                c_next: (rel % t) as u16,
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, State)> + '_ {
        (0..self.len).map(|i| (i, self.state_of(i)))
    }

    /// True when the head-of-line slot resolves (decoded or truncated)
    /// and the companion slot holds nothing partially transmitted, so
    /// the next block must start a fresh packet alone.
    pub fn is_forced_fresh(&self, s: &State) -> bool {
        let hol_leaves = self.grid.is_success(s.c_hol as usize) || s.k_hol as usize == self.k_max;
        let next_leaves = s.k_next == 0 || self.grid.is_success(s.c_next as usize);
        hol_leaves && next_leaves
    }

    /// Feedback class of a state.
    pub fn classify(&self, s: &State) -> StateClass {
        let hol_ok = self.grid.is_success(s.c_hol as usize);
        if s.k_next == 0 {
            if hol_ok {
                StateClass::OnePAck
            } else {
                StateClass::OnePNack
            }
        } else {
            let next_ok = self.grid.is_success(s.c_next as usize);
            match (hol_ok, next_ok) {
                (true, true) => StateClass::AckAck,
                (false, false) => StateClass::NackNack,
                _ => StateClass::AckNack,
            }
        }
    }

    /// Packets acknowledged by the feedback recorded in this state.
    pub fn ack_count(&self, s: &State) -> u32 {
        let mut n = 0;
        if self.grid.is_success(s.c_hol as usize) {
            n += 1;
        }
        if s.k_next > 0 && self.grid.is_success(s.c_next as usize) {
            n += 1;
        }
        n
    }

    /// The anchor state for average-reward evaluation: counter pair
    /// (1, 0) with the lowest AMI cell. Reachable under every policy
    /// because a fresh transmission can always land in the first cell.
    pub fn special_state(&self) -> usize {
        self.pair_offset(1, 0)
    }
}
