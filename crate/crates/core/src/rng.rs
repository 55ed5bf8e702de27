//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `(master seed, stream id)`
//! and positioned on the ChaCha stream selected by an index, so any stream
//! can be rebuilt in isolation without replaying the ones before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream identifiers. Distinct ids never share a key.
pub mod ids {
    pub const SOURCE_A: u64 = 0;
    pub const SOURCE_B: u64 = 1;
    pub const DRIFT_A: u64 = 0x10;
    pub const DRIFT_B: u64 = 0x11;
    /// Event-driven window blocks; the run index is mixed in.
    pub const BLOCK: u64 = 0x100;
    pub const BSM_SAMPLING: u64 = 0x200;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key(master_seed: u64, stream_id: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ splitmix64(stream_id.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Stream for one `(master seed, id, index)` triple.
pub fn window_stream(master_seed: u64, stream_id: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(key(master_seed, stream_id));
    rng.set_stream(index);
    rng
}

/// Stream for a block of windows belonging to run `run` (e.g. a fringe grid point).
pub fn block_stream(master_seed: u64, run: u64, block: u64) -> SimRng {
    window_stream(master_seed, ids::BLOCK ^ (run << 16), block)
}
