//! Seed derivation tree.
//!
//! Every random stream in an experiment is derived from the master seed by a
//! path of tags, e.g. `master / "client" / id / round`. A child seed is a
//! SplitMix64 finalisation of the parent seed xor-ed with the finalised tag, so
//! streams are independent of how many siblings exist: adding a client never
//! perturbs another client's stream.
//!
//! Tags used by the simulator:
//!
//! | path                                 | stream                              |
//! |--------------------------------------|-------------------------------------|
//! | `data`                               | synthetic dataset                   |
//! | `splits`                             | test/val/supernet/public split      |
//! | `supernet` / `init`, `train`         | supernet init and training          |
//! | `partition`                          | Dirichlet partition (+ attempt)     |
//! | `budgets`                            | initial per-client budgets          |
//! | `client` / id / `init`               | weight re-initialisation            |
//! | `client` / id / round                | local batch shuffling               |
//! | `select` / round                     | participant sampling                |
//! | `churn` / round                      | churn victims, shards and budgets   |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// A node in the seed derivation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        SeedTree(master)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Child keyed by an integer tag (client id, round, attempt).
    pub fn child(self, tag: u64) -> Self {
        SeedTree(splitmix64(self.0 ^ splitmix64(tag.wrapping_mul(GOLDEN) ^ 0x5EED)))
    }

    /// Child keyed by a label.
    pub fn named(self, label: &str) -> Self {
        self.child(fnv1a(label))
    }

    pub fn rng(self) -> SimRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
