//! Test-only glue between the library types and the independent oracles.

#[path = "../tests/common/oracle.rs"]
pub mod oracle;

use rand::Rng;

use crate::mdp::{ModelView, TabularMdp};
pub use oracle::RawMdp;

pub fn to_mdp(raw: &RawMdp) -> TabularMdp {
    TabularMdp::new(raw.ns, raw.na, raw.p.clone(), raw.r.clone(), raw.d.clone(), raw.terminal.clone(), raw.gamma)
        .expect("generator produces valid MDPs")
}

pub fn to_raw(m: &TabularMdp) -> RawMdp {
    RawMdp {
        ns: m.num_states(),
        na: m.num_actions(),
        p: m.transition_tensor().to_vec(),
        r: m.reward_tensor().to_vec(),
        d: m.initial_dist().to_vec(),
        terminal: m.terminal().to_vec(),
        gamma: m.gamma(),
    }
}

pub fn random_mdp<R: Rng>(rng: &mut R, ns: usize, na: usize, gamma: f64) -> TabularMdp {
    to_mdp(&oracle::random_raw_mdp(rng, ns, na, gamma))
}

pub fn brute_force_extremes(m: &TabularMdp) -> (f64, f64) {
    oracle::brute_force_extremes(&to_raw(m))
}
