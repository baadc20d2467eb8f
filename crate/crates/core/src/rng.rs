//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a `Pcg64Mcg` generator
//! whose 128-bit state is `(seed << 64) | stream` (the generator forces the
//! low bit to one). Uniform floats use the 53 high bits of each 64-bit draw,
//! `(u >> 11) * 2^-53`, so they lie in `[0, 1)`.

use rand_pcg::Pcg64Mcg;

pub type SeededRng = Pcg64Mcg;

/// Worker preference initialisation in `init_params`.
pub const STREAM_WORKER_PREFS: u64 = 1;
/// Trunk and head weights.
pub const STREAM_NETWORK: u64 = 2;
/// Rows appended for workers first seen by the trainer.
pub const STREAM_NEW_WORKERS: u64 = 3;
/// Per-epoch triplet shuffling.
pub const STREAM_SHUFFLE: u64 = 4;
/// Task sampling in the annotation server.
pub const STREAM_TASKS: u64 = 5;
/// Evaluation (k-means seeding, anchor selection).
pub const STREAM_EVAL: u64 = 6;
/// Triplet sampling uses `STREAM_TRIPLETS + worker index`.
pub const STREAM_TRIPLETS: u64 = 1 << 32;
/// Item rendering uses `STREAM_RENDER | item id`.
pub const STREAM_RENDER: u64 = 1 << 62;

pub fn seeded(seed: u64, stream: u64) -> SeededRng {
    Pcg64Mcg::new(((seed as u128) << 64) | stream as u128)
}
