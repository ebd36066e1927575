//! Seeding contract.
//!
//! Two generators are used:
//!
//! * [`stream`] gives a ChaCha8 generator for `(master, index)`. ChaCha is
//!   counter based, so replicate `index` draws from its own stream and its
//!   output does not depend on how replicates are scheduled across threads.
//! * [`node_rng`] gives a small xoshiro generator keyed by a tree node. The
//!   simulator derives every node's offspring and step labels from the
//!   node's key alone, so a tree is a pure function of the root seed and
//!   every traversal strategy sees exactly the same labels.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = ChaCha8Rng;
pub type NodeRng = Xoshiro256PlusPlus;

/// Independent stream `index` of the master seed.
pub fn stream(master: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Seed for replicate `index`, attempt `attempt` (attempts > 0 are restarts).
pub fn replicate_seed(master: u64, index: u64, attempt: u32) -> u64 {
    let mut rng = stream(master, index);
    let mut seed = rng.next_u64();
    for _ in 0..attempt {
        seed = rng.next_u64();
    }
    seed
}

#[inline]
pub fn node_rng(key: u64) -> NodeRng {
    Xoshiro256PlusPlus::seed_from_u64(key)
}

/// A fresh seed from the operating system, for runs that did not pin one.
pub fn fresh_seed() -> u64 {
    rand::rng().next_u64()
}
