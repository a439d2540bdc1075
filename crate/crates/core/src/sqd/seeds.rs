//! Derivation of independent RNG streams from the master seed.
//!
//! Every randomized step of the loop draws from its own stream keyed by
//! (salt, generation, population), so populations can run in parallel and
//! still reproduce bit-identical results, and no stream is ever reused.

/// Domain salts for the per-step streams.
pub mod salt {
    pub const INIT: u64 = 0x1157_0a11;
    pub const DE: u64 = 0xde00_0001;
    pub const SAMPLE: u64 = 0x5a3b_1e00;
    pub const SUBSPACE: u64 = 0x5b5b_ace0;
    pub const SCHED_QPU: u64 = 0x9c4e_d001;
    pub const SCHED_HPC: u64 = 0x9c4e_d002;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream seed for one (salt, generation, population) cell.
pub fn mix_seed(master: u64, salt: u64, generation: u64, population: u64) -> u64 {
    let mut state = master;
    let mut out = splitmix64(&mut state) ^ salt;
    state = out;
    out = splitmix64(&mut state) ^ generation.wrapping_mul(0xa076_1d64_78bd_642f);
    state = out;
    out = splitmix64(&mut state) ^ population.wrapping_mul(0xe703_7ed1_a0b4_28db);
    state = out;
    splitmix64(&mut state)
}
