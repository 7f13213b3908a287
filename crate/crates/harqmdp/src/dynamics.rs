//! The HARQ process law: slot resolution, AMI update kernels, and exact
//! per-action transition rows with rewards.
//!
//! A state records the feedback of the previous block. Before the next
//! block is encoded the two slots are resolved: a decoded packet leaves
//! as a delivery, a packet that exhausted its rounds leaves as a drop, a
//! surviving companion is promoted, and empty slots take fresh packets.
//! The chosen action then maps the per-block SNR to updated AMIs:
//!
//! - time sharing: hol += p*C(snr), next += (1-p)*C(snr)
//! - superposition: hol += C(p*snr / (1 + (1-p)*snr)); the companion sees
//!   the hol layer as interference unless the updated hol AMI exceeds the
//!   rate, in which case the interference is cancelled and
//!   next += C((1-p)*snr), otherwise next += C((1-p)*snr / (1 + p*snr))
//!
//! Every updated AMI is a monotone function of the SNR, so cell
//! boundaries invert to SNR thresholds in closed form and each row is a
//! sum of cdf differences over the resulting SNR partition. No numerical
//! integration enters the law. Rows are cached per (pending cells,
//! action); states sharing a pending configuration share storage.

use std::collections::HashMap;

use rayon::prelude::*;

use thiserror::Error;

use crate::channel::{cap, ChannelModel};
use crate::lattice::{Action, ActionSpace, AmiGrid, Mode, State, StateSpace};
use crate::solver::{MdpModel, RowEntry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("encoding parameter must lie strictly inside (0,1), got {0}")]
    ParameterOutOfRange(f64),
    #[error("SNR must be nonnegative, got {0}")]
    NegativeSnr(f64),
    #[error("action {action:?} is not allowed in state {state:?}")]
    DisallowedAction { state: State, action: Action },
}

/// Resolved configuration of the two transmitter slots just before the
/// next block is encoded. Counter 0 means a fresh, untransmitted packet
/// with AMI exactly zero; promoted packets carry the representative AMI
/// of their recorded cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingConfig {
    pub hol_counter: u8,
    pub hol_ami: f64,
    pub next_counter: u8,
    pub next_ami: f64,
    /// Packets abandoned while resolving this state (round limit hit).
    pub dropped_packets: u8,
    /// Packets acknowledged by the feedback recorded in this state.
    pub delivered_packets: u8,
}

/// Where a pending packet's AMI comes from: nothing yet, or a finite cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum AmiSrc {
    Fresh,
    Cell(u16),
}

impl AmiSrc {
    fn value(&self, grid: &AmiGrid) -> f64 {
        match *self {
            AmiSrc::Fresh => 0.0,
            AmiSrc::Cell(j) => grid.representative(j as usize).expect("finite cell"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Pending {
    pub k_hol: u8,
    pub src_hol: AmiSrc,
    pub k_next: u8,
    pub src_next: AmiSrc,
    pub dropped: u8,
    pub delivered: u8,
}

pub(crate) fn resolve(space: &StateSpace, s: &State) -> Pending {
    let grid = space.grid();
    let k_max = space.k_max() as u8;
    let mut dropped = 0;
    let mut delivered = 0;

    let hol_ok = grid.is_success(s.c_hol as usize);
    let hol_leaves = hol_ok || s.k_hol == k_max;
    if hol_ok {
        delivered += 1;
    } else if hol_leaves {
        dropped += 1;
    }

    let next_stays = if s.k_next > 0 {
        let next_ok = grid.is_success(s.c_next as usize);
        if next_ok {
            delivered += 1;
        }
        !next_ok
    } else {
        false
    };

    let (k_hol, src_hol, k_next, src_next) = match (hol_leaves, next_stays) {
        (false, true) => (
            s.k_hol,
            AmiSrc::Cell(s.c_hol),
            s.k_next,
            AmiSrc::Cell(s.c_next),
        ),
        (false, false) => (s.k_hol, AmiSrc::Cell(s.c_hol), 0, AmiSrc::Fresh),
        // The surviving companion is promoted to head of line.
        (true, true) => (s.k_next, AmiSrc::Cell(s.c_next), 0, AmiSrc::Fresh),
        (true, false) => (0, AmiSrc::Fresh, 0, AmiSrc::Fresh),
    };
    Pending {
        k_hol,
        src_hol,
        k_next,
        src_next,
        dropped,
        delivered,
    }
}

/// Resolves a state into the pending configuration for the next block.
pub fn normalize(space: &StateSpace, s: &State) -> PendingConfig {
    let p = resolve(space, s);
    let grid = space.grid();
    PendingConfig {
        hol_counter: p.k_hol,
        hol_ami: p.src_hol.value(grid),
        next_counter: p.k_next,
        next_ami: p.src_next.value(grid),
        dropped_packets: p.dropped,
        delivered_packets: p.delivered,
    }
}

fn check_joint_args(p: f64, snr: f64) -> Result<(), DynamicsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DynamicsError::ParameterOutOfRange(p));
    }
    if !(snr >= 0.0) {
        return Err(DynamicsError::NegativeSnr(snr));
    }
    Ok(())
}

/// Time-sharing AMI update for one block at the given SNR.
pub fn ami_update_ts(
    i_hol: f64,
    i_next: f64,
    p: f64,
    snr: f64,
) -> Result<(f64, f64), DynamicsError> {
    check_joint_args(p, snr)?;
    Ok(ts_kernel(i_hol, i_next, p, snr))
}

#[inline]
pub(crate) fn ts_kernel(i_hol: f64, i_next: f64, p: f64, snr: f64) -> (f64, f64) {
    let c = cap(snr);
    (i_hol + p * c, i_next + (1.0 - p) * c)
}

/// Superposition-coding AMI update for one block at the given SNR.
pub fn ami_update_sc(
    i_hol: f64,
    i_next: f64,
    p: f64,
    snr: f64,
    rate: f64,
) -> Result<(f64, f64), DynamicsError> {
    check_joint_args(p, snr)?;
    Ok(sc_kernel(i_hol, i_next, p, snr, rate))
}

#[inline]
pub(crate) fn sc_kernel(i_hol: f64, i_next: f64, p: f64, snr: f64, rate: f64) -> (f64, f64) {
    let hol = i_hol + cap(p * snr / (1.0 + (1.0 - p) * snr));
    let next = if hol > rate {
        // The hol layer is decodable, so its interference is removed.
        i_next + cap((1.0 - p) * snr)
    } else {
        i_next + cap((1.0 - p) * snr / (1.0 + p * snr))
    };
    (hol, next)
}

// ---------------------------------------------------------------------------
// Row construction
// ---------------------------------------------------------------------------

/// Entries below this mass are dropped; a row has at most a few hundred
/// segments, so the leaked mass stays orders of magnitude under the 1e-9
/// stochasticity tolerance.
const PRUNE: f64 = 1e-14;

#[derive(Debug, Clone)]
pub(crate) struct CellRow {
    pub entries: Vec<RowEntry>,
    /// Expected number of packets acknowledged at the successor.
    pub exp_succ: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum RowKey {
    Single(AmiSrc),
    Joint {
        mode: Mode,
        p_index: u16,
        hol: u16,
        next: AmiSrc,
    },
}

/// One admissible action in one state: a shared row plus the successor
/// counter-pair placement.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ActionArm {
    pub action: Action,
    pub row: u32,
    pub succ_offset: u32,
    /// Packets abandoned by choosing this action (0P drops the pending
    /// head of line; a one-packet mode abandons a partially transmitted
    /// companion, whose counter the update rules reset to zero).
    pub extra_drops: u8,
}

/// A transmission from AMI `i0` occupying the whole block: successor
/// cell masses are cdf differences at the inverted boundaries.
fn build_single_row(grid: &AmiGrid, ch: &ChannelModel, i0: f64) -> CellRow {
    let t = grid.num_cells();
    let mut entries = Vec::with_capacity(t);
    let mut prev = 0.0; // cdf at boundary 0: threshold is 0
    for j in 1..t {
        let delta = grid.boundary(j) - i0;
        let cur = if delta <= 0.0 {
            0.0
        } else {
            ch.cdf_raw(delta.exp2() - 1.0)
        };
        let mass = cur - prev;
        if mass > PRUNE {
            entries.push(RowEntry {
                loc: (j - 1) as u32,
                prob: mass,
            });
        }
        prev = cur;
    }
    let succ_mass = 1.0 - prev;
    if succ_mass > PRUNE {
        entries.push(RowEntry {
            loc: (t - 1) as u32,
            prob: succ_mass,
        });
    }
    CellRow {
        entries,
        exp_succ: succ_mass,
    }
}

/// Walks the SNR partition defined by sorted breakpoints, quantizing the
/// joint AMI update at a probability-space midpoint of each segment.
fn accumulate_joint<F>(grid: &AmiGrid, ch: &ChannelModel, mut bps: Vec<f64>, eval: F) -> CellRow
where
    F: Fn(f64) -> (usize, usize),
{
    bps.retain(|g| g.is_finite() && *g > 0.0);
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t = grid.num_cells();
    let succ = grid.success_cell();
    let mut entries: Vec<RowEntry> = Vec::with_capacity(bps.len() + 1);
    let mut exp_succ = 0.0;
    let mut lo = 0.0;
    let mut cdf_lo = 0.0;
    let push = |cdf_a: f64, cdf_b: f64, entries: &mut Vec<RowEntry>, exp_succ: &mut f64| {
        let mass = cdf_b - cdf_a;
        if mass <= PRUNE {
            return;
        }
        let u = 0.5 * (cdf_a + cdf_b);
        let gamma = -ch.mean_snr() * (1.0 - u).ln();
        let (ca, cb) = eval(gamma);
        let loc = (ca * t + cb) as u32;
        *exp_succ += mass * ((ca == succ) as u32 + (cb == succ) as u32) as f64;
        match entries.last_mut() {
            Some(e) if e.loc == loc => e.prob += mass,
            _ => entries.push(RowEntry { loc, prob: mass }),
        }
    };
    for hi in bps {
        if hi <= lo {
            continue;
        }
        let cdf_hi = ch.cdf_raw(hi);
        push(cdf_lo, cdf_hi, &mut entries, &mut exp_succ);
        lo = hi;
        cdf_lo = cdf_hi;
    }
    push(cdf_lo, 1.0, &mut entries, &mut exp_succ);
    CellRow { entries, exp_succ }
}

fn build_ts_row(grid: &AmiGrid, ch: &ChannelModel, i_hol: f64, i_next: f64, p: f64) -> CellRow {
    let t = grid.num_cells();
    let mut bps = Vec::with_capacity(2 * t);
    for j in 1..t {
        let da = grid.boundary(j) - i_hol;
        if da > 0.0 {
            bps.push((da / p).exp2() - 1.0);
        }
        let db = grid.boundary(j) - i_next;
        if db > 0.0 {
            bps.push((db / (1.0 - p)).exp2() - 1.0);
        }
    }
    accumulate_joint(grid, ch, bps, |g| {
        let (a, b) = ts_kernel(i_hol, i_next, p, g);
        (grid.quantize(a), grid.quantize(b))
    })
}

fn build_sc_row(grid: &AmiGrid, ch: &ChannelModel, i_hol: f64, i_next: f64, p: f64) -> CellRow {
    let t = grid.num_cells();
    let rate = grid.rate();
    let q = 1.0 - p;

    // SNR at which the hol layer becomes decodable and interference
    // cancellation kicks in; infinite when the hol AMI saturates below
    // the rate.
    let t_rate = (rate - i_hol).exp2() - 1.0;
    let d_rate = p - q * t_rate;
    let g_star = if d_rate > 0.0 {
        t_rate / d_rate
    } else {
        f64::INFINITY
    };

    let mut bps = Vec::with_capacity(3 * t);
    for j in 1..t {
        let da = grid.boundary(j) - i_hol;
        if da > 0.0 {
            let tv = da.exp2() - 1.0;
            let d = p - q * tv;
            if d > 0.0 {
                bps.push(tv / d);
            }
            // Boundaries past the saturation point are never crossed;
            // the tail mass stays in the cell holding the cap.
        }
        let db = grid.boundary(j) - i_next;
        if db > 0.0 {
            let tv = db.exp2() - 1.0;
            let d = q - p * tv;
            if d > 0.0 {
                let g = tv / d;
                if g < g_star {
                    bps.push(g);
                }
            }
            let g_post = tv / q;
            if g_post > g_star {
                bps.push(g_post);
            }
        }
    }
    accumulate_joint(grid, ch, bps, |g| {
        let (a, b) = sc_kernel(i_hol, i_next, p, g, rate);
        (grid.quantize(a), grid.quantize(b))
    })
}

// ---------------------------------------------------------------------------
// Transition law
// ---------------------------------------------------------------------------

/// A dense view of one transition row, for inspection and tests. The
/// solver works on the shared cached form instead.
#[derive(Debug, Clone)]
pub struct TransitionRow {
    /// (successor state index, probability), probabilities summing to 1.
    pub entries: Vec<(usize, f64)>,
    /// Expected reward in bits: rate times the expected acknowledgements.
    pub expected_reward: f64,
    /// Expected packets abandoned in this transition, including slot
    /// resolution and action-induced drops.
    pub drop_count: f64,
    /// Expected packets acknowledged at the successor state.
    pub deliver_count: f64,
}

/// The complete transition law for one (state space, action space,
/// channel) triple. Construction precomputes every row once; rows are
/// shared between states with the same pending configuration.
#[derive(Debug, Clone)]
pub struct TransitionLaw {
    space: StateSpace,
    actions: ActionSpace,
    channel: ChannelModel,
    arms: Vec<Vec<ActionArm>>,
    rows: Vec<CellRow>,
    norm_drops: Vec<u8>,
}

impl TransitionLaw {
    pub fn build(space: StateSpace, actions: ActionSpace, channel: ChannelModel) -> Self {
        let grid = space.grid().clone();
        let mut key_ids: HashMap<RowKey, u32> = HashMap::new();
        let mut keys: Vec<RowKey> = Vec::new();
        let mut intern = |key: RowKey| -> u32 {
            if let Some(&id) = key_ids.get(&key) {
                return id;
            }
            let id = keys.len() as u32;
            key_ids.insert(key, id);
            keys.push(key);
            id
        };

        let mut arms = Vec::with_capacity(space.len());
        let mut norm_drops = Vec::with_capacity(space.len());
        for (_, state) in space.iter() {
            let pend = resolve(&space, &state);
            norm_drops.push(pend.dropped);
            let companion_drop = (pend.k_next > 0) as u8;
            let mut list = Vec::new();

            // 1P: the pending head of line occupies the block.
            list.push(ActionArm {
                action: Action::ONE_P,
                row: intern(RowKey::Single(pend.src_hol)),
                succ_offset: space.pair_offset(pend.k_hol + 1, 0) as u32,
                extra_drops: companion_drop,
            });
            if pend.k_hol > 0 {
                if actions.mode_set().has_zero_p() {
                    list.push(ActionArm {
                        action: Action::ZERO_P,
                        row: intern(RowKey::Single(AmiSrc::Fresh)),
                        succ_offset: space.pair_offset(1, 0) as u32,
                        extra_drops: 1 + companion_drop,
                    });
                }
                let hol_cell = match pend.src_hol {
                    AmiSrc::Cell(c) => c,
                    AmiSrc::Fresh => unreachable!("joint modes need a transmitted hol"),
                };
                let joint_offset =
                    space.pair_offset(pend.k_hol + 1, pend.k_next + 1) as u32;
                if actions.mode_set().has_ts() {
                    for i in 0..actions.p_grid().len() as u16 {
                        list.push(ActionArm {
                            action: Action::ts(i),
                            row: intern(RowKey::Joint {
                                mode: Mode::Ts,
                                p_index: i,
                                hol: hol_cell,
                                next: pend.src_next,
                            }),
                            succ_offset: joint_offset,
                            extra_drops: 0,
                        });
                    }
                }
                if actions.mode_set().has_sc() {
                    for i in 0..actions.p_grid().len() as u16 {
                        list.push(ActionArm {
                            action: Action::sc(i),
                            row: intern(RowKey::Joint {
                                mode: Mode::Sc,
                                p_index: i,
                                hol: hol_cell,
                                next: pend.src_next,
                            }),
                            succ_offset: joint_offset,
                            extra_drops: 0,
                        });
                    }
                }
            }
            arms.push(list);
        }

        let rows: Vec<CellRow> = keys
            .par_iter()
            .map(|key| match *key {
                RowKey::Single(src) => build_single_row(&grid, &channel, src.value(&grid)),
                RowKey::Joint {
                    mode,
                    p_index,
                    hol,
                    next,
                } => {
                    let p = actions.p_grid()[p_index as usize];
                    let i_hol = AmiSrc::Cell(hol).value(&grid);
                    let i_next = next.value(&grid);
                    match mode {
                        Mode::Ts => build_ts_row(&grid, &channel, i_hol, i_next, p),
                        Mode::Sc => build_sc_row(&grid, &channel, i_hol, i_next, p),
                        _ => unreachable!(),
                    }
                }
            })
            .collect();

        Self {
            space,
            actions,
            channel,
            arms,
            rows,
            norm_drops,
        }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    pub fn rate(&self) -> f64 {
        self.space.grid().rate()
    }

    /// Arm index of an action in a state, if allowed there.
    pub fn find_arm(&self, s: usize, action: &Action) -> Option<usize> {
        self.arms[s].iter().position(|arm| arm.action == *action)
    }

    /// Whether a one-packet mode here abandons something: the row of a
    /// joint successor never does, but 1P/0P may clear a partially
    /// transmitted companion and 0P always abandons the pending hol.
    pub fn drop_count_of(&self, s: usize, arm: usize) -> f64 {
        (self.norm_drops[s] + self.arms[s][arm].extra_drops) as f64
    }

    /// The full row for (state, action), with global successor indices.
    pub fn transition_row(
        &self,
        state: &State,
        action: &Action,
    ) -> Result<TransitionRow, DynamicsError> {
        let s = self.space.index_of(state);
        let arm_idx = self
            .find_arm(s, action)
            .ok_or(DynamicsError::DisallowedAction {
                state: *state,
                action: *action,
            })?;
        let arm = &self.arms[s][arm_idx];
        let row = &self.rows[arm.row as usize];
        let entries = row
            .entries
            .iter()
            .map(|e| ((arm.succ_offset + e.loc) as usize, e.prob))
            .collect();
        Ok(TransitionRow {
            entries,
            expected_reward: self.rate() * row.exp_succ,
            drop_count: self.drop_count_of(s, arm_idx),
            deliver_count: row.exp_succ,
        })
    }
}

impl MdpModel for TransitionLaw {
    fn num_states(&self) -> usize {
        self.space.len()
    }

    fn num_actions(&self, s: usize) -> usize {
        self.arms[s].len()
    }

    fn action(&self, s: usize, a: usize) -> Action {
        self.arms[s][a].action
    }

    fn reward(&self, s: usize, a: usize) -> f64 {
        self.rate() * self.rows[self.arms[s][a].row as usize].exp_succ
    }

    fn row(&self, s: usize, a: usize) -> (&[RowEntry], u32) {
        let arm = &self.arms[s][a];
        (&self.rows[arm.row as usize].entries, arm.succ_offset)
    }

    fn special_state(&self) -> usize {
        self.space.special_state()
    }

    fn drop_count(&self, s: usize, a: usize) -> f64 {
        self.drop_count_of(s, a)
    }

    fn deliver_count(&self, s: usize, a: usize) -> f64 {
        self.rows[self.arms[s][a].row as usize].exp_succ
    }
}
