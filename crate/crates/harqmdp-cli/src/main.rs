use harqmdp::dynamics::TransitionLaw;
use harqmdp::lattice::{ActionSpace, AmiGrid, StateSpace};
use harqmdp::onebit::ObservableMdp;
use harqmdp::solver::{evaluate_policy_into, improve_policy, MdpModel, SolverOptions};
use harqmdp::sweep::{db_range, db_to_linear};
use harqmdp::{ChannelModel, ModeSet};

fn main() {
    let opts = SolverOptions::default();
    'outer: for db in db_range(12.0, 26.0, 0.5) {
        let grid = AmiGrid::new(4.0, 32).unwrap();
        let space = StateSpace::new(2, grid).unwrap();
        let actions = ActionSpace::new(ModeSet::TsSet, 32).unwrap();
        let law =
            TransitionLaw::build(space, actions, ChannelModel::new(db_to_linear(db)).unwrap());
        let model = ObservableMdp::build(&law).unwrap();
        let mut policy = vec![0u16; model.num_states()];
        let mut h = Vec::new();
        for round in 1..=16 {
            let res = evaluate_policy_into(&model, &policy, &mut h, &opts);
            let ok = res.is_ok();
            let eta = res.as_ref().map(|e| *e).unwrap_or(f64::NAN);
            if !ok {
                println!(
                    "{db} dB round {round}: eval err: {}",
                    res.as_ref().unwrap_err()
                );
                let next = improve_policy(&model, &h, &opts);
                let changed = next.iter().zip(&policy).filter(|(a, b)| a != b).count();
                println!("   (h stale) improve would change {changed}");
                // Which states changed and to what.
                for s in 0..model.num_states() {
                    if next[s] != policy[s] {
                        println!(
                            "   {:?}: {:?} -> {:?}",
                            model.states()[s],
                            model.action(s, policy[s] as usize),
                            model.action(s, next[s] as usize)
                        );
                        if s > 20 {
                            break;
                        }
                    }
                }
                break 'outer;
            }
            let next = improve_policy(&model, &h, &opts);
            let changed = next.iter().zip(&policy).filter(|(a, b)| a != b).count();
            println!("{db} dB round {round}: eta={eta:.6} changed={changed}");
            if next == policy {
                break;
            }
            policy = next;
            if round == 16 {
                println!("{db} dB: no convergence in 16 rounds");
                break 'outer;
            }
        }
    }
    println!("done");
}
