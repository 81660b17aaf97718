//! Deterministic random sub-streams.
//!
//! Every stochastic task (a replicate, a simulated dataset, a geometry draw)
//! owns a ChaCha stream keyed by the master seed and a short path of task
//! indices. Streams never depend on which worker runs the task, so results
//! are identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Path tags that keep the different families of streams disjoint.
pub mod tag {
    pub const NULL_REPLICATE: u64 = 0x6e75_6c6c;
    pub const SCENARIO_DATA: u64 = 0x6461_7461;
    pub const GEOMETRY: u64 = 0x6765_6f6d;
    pub const OUTBREAK_ZONE: u64 = 0x7a6f_6e65;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for `(master_seed, path[0], path[1], ...)`.
pub fn substream(master_seed: u64, path: &[u64]) -> Stream {
    let mut state = master_seed;
    for &p in path {
        state = splitmix64(&mut state) ^ p;
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
