//! Link-level simulation of the HARQ process with continuous AMI.
//!
//! The simulator runs the exact update kernels on unquantized AMI values
//! and quantizes only to look up a policy, so the gap between simulated
//! and analytic throughput measures the discretization bias of the chain
//! rather than hiding it. Runs are deterministic given the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{cap, ChannelModel};
use crate::dynamics::{sc_kernel, ts_kernel};
use crate::lattice::{Action, Mode, State, StateSpace};
use crate::onebit::{MsgPair, ObsState, ObservablePolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation needs at least one block")]
    NoBlocks,
    #[error("policy table covers {got} states, the space has {want}")]
    PolicySize { got: usize, want: usize },
    #[error("policy returned disallowed action {action:?} at {context}")]
    DisallowedAction { action: Action, context: String },
    #[error("no observable decision for {0}")]
    MissingObservable(String),
}

/// Where the simulator gets its decisions.
pub enum PolicySource<'a> {
    /// Full-information policy indexed by quantized state.
    MultiBit(&'a [Action]),
    /// One fixed retransmission action; fresh starts are 1P.
    OneBitUnique(Action),
    /// Observable-state policy from the k_max = 2 belief solve.
    OneBitBelief(&'a ObservablePolicy),
}

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub blocks: u64,
    pub seed: u64,
}

/// Outcome of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub blocks: u64,
    pub delivered_bits: f64,
    pub dropped_packets: u64,
    pub delivered_packets: u64,
    /// Delivered bits per block.
    pub eta_emp: f64,
    /// Dropped over dropped-plus-delivered packets.
    pub p_out_emp: f64,
    /// Block-bootstrap standard error of `eta_emp`.
    pub eta_stderr: f64,
    pub seed: u64,
}

/// Post-feedback status of the two tracked packets, continuous AMI.
#[derive(Debug, Clone, Copy)]
struct Record {
    k_hol: u8,
    ami_hol: f64,
    k_next: u8,
    ami_next: f64,
}

#[derive(Debug, Clone, Copy)]
struct ContPending {
    k_hol: u8,
    ami_hol: f64,
    k_next: u8,
    ami_next: f64,
}

fn resolve_cont(rec: &Record, k_max: u8, rate: f64) -> (ContPending, u32, u32) {
    let mut drops = 0;
    let mut delivers = 0;
    let hol_ok = rec.ami_hol > rate;
    let hol_leaves = hol_ok || rec.k_hol == k_max;
    if hol_ok {
        delivers += 1;
    } else if hol_leaves {
        drops += 1;
    }
    let next_stays = if rec.k_next > 0 {
        let ok = rec.ami_next > rate;
        if ok {
            delivers += 1;
        }
        !ok
    } else {
        false
    };
    let pend = match (hol_leaves, next_stays) {
        (false, true) => ContPending {
            k_hol: rec.k_hol,
            ami_hol: rec.ami_hol,
            k_next: rec.k_next,
            ami_next: rec.ami_next,
        },
        (false, false) => ContPending {
            k_hol: rec.k_hol,
            ami_hol: rec.ami_hol,
            k_next: 0,
            ami_next: 0.0,
        },
        (true, true) => ContPending {
            k_hol: rec.k_next,
            ami_hol: rec.ami_next,
            k_next: 0,
            ami_next: 0.0,
        },
        (true, false) => ContPending {
            k_hol: 0,
            ami_hol: 0.0,
            k_next: 0,
            ami_next: 0.0,
        },
    };
    (pend, drops, delivers)
}

fn observe(rec: &Record, last: &Action, rate: f64) -> Result<ObsState, SimError> {
    let hol_ok = rec.ami_hol > rate;
    Ok(match (rec.k_hol, rec.k_next) {
        (1, 0) => {
            if hol_ok {
                ObsState::FirstAck
            } else {
                ObsState::FirstNack
            }
        }
        (2, 0) => {
            if hol_ok {
                ObsState::SecondAck
            } else {
                ObsState::SecondNack
            }
        }
        (2, 1) => {
            let msg = match (hol_ok, rec.ami_next > rate) {
                (true, true) => MsgPair::AckAck,
                (true, false) => MsgPair::AckNack,
                (false, true) => MsgPair::NackAck,
                (false, false) => MsgPair::NackNack,
            };
            ObsState::Joint {
                mode: last.mode,
                p_index: last.p_index.ok_or_else(|| {
                    SimError::MissingObservable(format!("joint record after {last:?}"))
                })?,
                msg,
            }
        }
        other => {
            return Err(SimError::MissingObservable(format!(
                "counter pair {other:?} under one-bit belief tracking"
            )))
        }
    })
}

/// Runs the process for `cfg.blocks` transmissions under the policy.
pub fn simulate(
    policy: &PolicySource,
    space: &StateSpace,
    p_grid: &[f64],
    channel: &ChannelModel,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    if cfg.blocks == 0 {
        return Err(SimError::NoBlocks);
    }
    if let PolicySource::MultiBit(table) = policy {
        if table.len() != space.len() {
            return Err(SimError::PolicySize {
                got: table.len(),
                want: space.len(),
            });
        }
    }
    let grid = space.grid();
    let rate = grid.rate();
    let k_max = space.k_max() as u8;
    let blocks = cfg.blocks as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut dropped: u64 = 0;
    let mut delivered: u64 = 0;
    let mut per_block = vec![0u8; blocks];

    // Block 0 always starts fresh.
    let mut rec = Record {
        k_hol: 1,
        ami_hol: cap(channel.sample(&mut rng)),
        k_next: 0,
        ami_next: 0.0,
    };
    let mut last_action = Action::ONE_P;

    let decide = |rec: &Record, pend: &ContPending, last: &Action| -> Result<Action, SimError> {
        match policy {
            PolicySource::MultiBit(table) => {
                let state = State {
                    k_hol: rec.k_hol,
                    k_next: rec.k_next,
                    c_hol: grid.quantize(rec.ami_hol) as u16,
                    c_next: if rec.k_next == 0 {
                        0
                    } else {
                        grid.quantize(rec.ami_next) as u16
                    },
                };
                Ok(table[space.index_of(&state)])
            }
            PolicySource::OneBitUnique(action) => {
                if pend.k_hol == 0 {
                    Ok(Action::ONE_P)
                } else {
                    Ok(*action)
                }
            }
            PolicySource::OneBitBelief(obs_policy) => {
                let z = observe(rec, last, rate)?;
                obs_policy
                    .decide(&z)
                    .ok_or_else(|| SimError::MissingObservable(format!("{z:?}")))
            }
        }
    };

    for n in 1..blocks {
        let (pend, drops, delivers) = resolve_cont(&rec, k_max, rate);
        per_block[n - 1] = delivers as u8;
        dropped += drops as u64;
        delivered += delivers as u64;

        let action = decide(&rec, &pend, &last_action)?;
        let bad = |action: Action| SimError::DisallowedAction {
            action,
            context: format!(
                "pending (k_hol={}, ami_hol={:.3}, k_next={}, ami_next={:.3})",
                pend.k_hol, pend.ami_hol, pend.k_next, pend.ami_next
            ),
        };
        if pend.k_hol == 0 && action != Action::ONE_P {
            return Err(bad(action));
        }
        if let Some(pi) = action.p_index {
            if pi as usize >= p_grid.len() {
                return Err(bad(action));
            }
        } else if action.is_joint() {
            return Err(bad(action));
        }

        let snr = channel.sample(&mut rng);
        rec = match action.mode {
            Mode::OneP => {
                if pend.k_next > 0 {
                    dropped += 1; // companion abandoned by the counter reset
                }
                Record {
                    k_hol: pend.k_hol + 1,
                    ami_hol: pend.ami_hol + cap(snr),
                    k_next: 0,
                    ami_next: 0.0,
                }
            }
            Mode::ZeroP => {
                dropped += 1; // the pending head of line is abandoned
                if pend.k_next > 0 {
                    dropped += 1;
                }
                Record {
                    k_hol: 1,
                    ami_hol: cap(snr),
                    k_next: 0,
                    ami_next: 0.0,
                }
            }
            Mode::Ts | Mode::Sc => {
                let p = p_grid[action.p_index.unwrap() as usize];
                let (a, b) = if action.mode == Mode::Ts {
                    ts_kernel(pend.ami_hol, pend.ami_next, p, snr)
                } else {
                    sc_kernel(pend.ami_hol, pend.ami_next, p, snr, rate)
                };
                Record {
                    k_hol: pend.k_hol + 1,
                    ami_hol: a,
                    k_next: pend.k_next + 1,
                    ami_next: b,
                }
            }
        };
        debug_assert!(rec.k_next < rec.k_hol && rec.k_hol <= k_max);
        last_action = action;
    }

    // Flush the final feedback so every transmitted packet is accounted.
    let (_, drops, delivers) = resolve_cont(&rec, k_max, rate);
    per_block[blocks - 1] = delivers as u8;
    dropped += drops as u64;
    delivered += delivers as u64;

    let delivered_bits = rate * delivered as f64;
    let eta_emp = delivered_bits / cfg.blocks as f64;
    let flow = dropped + delivered;
    let p_out_emp = if flow > 0 {
        dropped as f64 / flow as f64
    } else {
        0.0
    };
    let eta_stderr = bootstrap_stderr(&per_block, rate, cfg.seed);

    Ok(SimReport {
        blocks: cfg.blocks,
        delivered_bits,
        dropped_packets: dropped,
        delivered_packets: delivered,
        eta_emp,
        p_out_emp,
        eta_stderr,
        seed: cfg.seed,
    })
}

/// Bootstrap over contiguous 1000-block segments; the process
/// regenerates at fresh starts, so segment correlation is short. Short
/// runs fall back to the naive independent-block estimate.
fn bootstrap_stderr(per_block: &[u8], rate: f64, seed: u64) -> f64 {
    const SEG: usize = 1000;
    const RESAMPLES: usize = 200;
    let n = per_block.len();
    let n_seg = n / SEG;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    if n_seg >= 2 {
        let sums: Vec<f64> = (0..n_seg)
            .map(|i| {
                per_block[i * SEG..(i + 1) * SEG]
                    .iter()
                    .map(|&b| b as f64)
                    .sum::<f64>()
            })
            .collect();
        let mut means = Vec::with_capacity(RESAMPLES);
        for _ in 0..RESAMPLES {
            let mut total = 0.0;
            for _ in 0..n_seg {
                total += sums[rng.gen_range(0..n_seg)];
            }
            means.push(rate * total / (n_seg * SEG) as f64);
        }
        let avg = means.iter().sum::<f64>() / RESAMPLES as f64;
        let var = means.iter().map(|m| (m - avg) * (m - avg)).sum::<f64>()
            / (RESAMPLES - 1) as f64;
        var.sqrt()
    } else {
        let mean = per_block.iter().map(|&b| b as f64).sum::<f64>() / n as f64;
        let var = per_block
            .iter()
            .map(|&b| (b as f64 - mean) * (b as f64 - mean))
            .sum::<f64>()
            / (n.max(2) - 1) as f64;
        rate * (var / n as f64).sqrt()
    }
}
