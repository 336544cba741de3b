//! Counter-based random streams.
//!
//! Every (seed, replication, mode) triple owns an independent ChaCha8 stream;
//! the step index is the position inside that stream. Streams are therefore
//! independent of thread scheduling and of the order replications run in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::ModeIndex;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream id of a mode; independent of the truncation so that a mode keeps its
/// noise when more modes are added.
pub fn mode_stream_id(mode: &[usize]) -> u64 {
    mode.iter()
        .enumerate()
        .fold(0u64, |acc, (k, &l)| acc | ((l as u64) << (32 * k)))
}

pub fn stream(seed: u64, replication: u64, stream_id: u64) -> ChaCha8Rng {
    let mut state = seed ^ splitmix64(&mut replication.wrapping_add(0xD1B5_4A32_D192_ED03));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_id);
    rng
}

pub fn mode_stream(seed: u64, replication: u64, mode: &ModeIndex) -> ChaCha8Rng {
    stream(seed, replication, mode_stream_id(mode))
}
