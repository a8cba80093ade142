//! Seeded, splittable random streams.
//!
//! Every observation, oracle batch and sweep cell draws from its own ChaCha8
//! stream addressed by `(root, index)`, so results do not depend on thread
//! count or scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in a tree of seeds. Children are derived by hashing, streams by
/// ChaCha stream selection.
#[derive(Debug, Clone)]
pub struct SeedTree {
    root: u64,
    base: ChaCha8Rng,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root, base: ChaCha8Rng::seed_from_u64(root) }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Independent subtree labelled by `tag`.
    pub fn child(&self, tag: u64) -> SeedTree {
        SeedTree::new(splitmix(self.root ^ splitmix(tag)))
    }

    /// Independent stream number `index` under this node.
    pub fn stream(&self, index: u64) -> Stream {
        let mut rng = self.base.clone();
        rng.set_stream(index);
        rng
    }
}

/// Uniform draw on (0, 1]. Excluding zero keeps inverse-transform sampling
/// inside the support of atoms at the left end.
#[inline]
pub fn uniform_open0(rng: &mut Stream) -> f64 {
    1.0 - rng.random::<f64>()
}
