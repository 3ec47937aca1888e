//! Seeded random streams.
//!
//! Every replication owns a private set of generators derived from
//! `(master seed, estimator tag, replication index)`, so results do not
//! depend on how replications are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Root of a family of independent substreams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    tag: u64,
}

/// Role of a generator inside one replication.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
enum Role {
    Arrivals = 1,
    Services = 2,
    Env = 3,
    Aux = 4,
    Marks = 5,
    Plus = 6,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, tag: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives a disjoint key for a named consumer (an estimator, a sweep, ...).
    pub fn child(&self, tag: &str) -> Self {
        let mut s = self.tag ^ fnv1a(tag);
        Self {
            seed: self.seed,
            tag: splitmix64(&mut s),
        }
    }

    fn generator(&self, role: Role, index: u64) -> SimRng {
        let mut state = self.seed ^ self.tag.rotate_left(17) ^ (role as u64).wrapping_mul(0xA076_1D64_78BD_642F);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = SimRng::from_seed(seed);
        rng.set_stream(index);
        rng
    }

    pub fn replication(&self, index: u64) -> ReplicationRng {
        ReplicationRng {
            arrivals: self.generator(Role::Arrivals, index),
            services: self.generator(Role::Services, index),
            env: self.generator(Role::Env, index),
            aux: self.generator(Role::Aux, index),
            marks: self.generator(Role::Marks, index),
            plus: self.generator(Role::Plus, index),
        }
    }
}

/// The random streams of a single replication, split by role so that
/// switching a feature on (say, thinning) does not shift the other draws.
#[derive(Clone, Debug)]
pub struct ReplicationRng {
    /// Inter-arrival times.
    pub arrivals: SimRng,
    /// Gaps of the base departure clock.
    pub services: SimRng,
    /// Environment path.
    pub env: SimRng,
    /// Acceptance draws of direct thinning and estimator side draws.
    pub aux: SimRng,
    /// Marking uniforms attached to base clock points.
    pub marks: SimRng,
    /// Points and uniforms of the additional-departure stream.
    pub plus: SimRng,
}

impl ReplicationRng {
    pub fn from_seed(seed: u64) -> Self {
        StreamKey::new(seed).replication(0)
    }
}
