//! Scheduling classes and the interleaved weighted round-robin planner.
//!
//! A scheduling class fixes, per cycle of `K` rounds, what fraction of
//! rounds replicate their packet over 1, 2 or 3 paths. The planner spreads
//! those replica counts evenly over the cycle and rotates the concrete path
//! subsets with a credit-based weighted round robin so that per-path load
//! tracks the configured weights.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of paths the class table is defined for.
pub const PATHS: usize = 3;

/// The seven redundancy profiles, ordered by increasing average redundancy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchedulingClass {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl SchedulingClass {
    pub const ALL: [SchedulingClass; 7] = [
        SchedulingClass::A,
        SchedulingClass::B,
        SchedulingClass::C,
        SchedulingClass::D,
        SchedulingClass::E,
        SchedulingClass::F,
        SchedulingClass::G,
    ];

    /// Redundancy ratios `[r_1, r_2, r_3]`: `ratios()[i]` is the fraction of
    /// rounds whose packet is replicated over `i + 1` paths. Each vector
    /// sums to 1.
    pub fn ratios(self) -> [f64; PATHS] {
        match self {
            SchedulingClass::A => [1.0, 0.0, 0.0],
            SchedulingClass::B => [0.75, 0.25, 0.0],
            SchedulingClass::C => [0.25, 0.75, 0.0],
            SchedulingClass::D => [0.0, 1.0, 0.0],
            SchedulingClass::E => [0.0, 0.75, 0.25],
            SchedulingClass::F => [0.0, 0.5, 0.5],
            SchedulingClass::G => [0.0, 0.0, 1.0],
        }
    }

    pub fn label(self) -> char {
        match self {
            SchedulingClass::A => 'A',
            SchedulingClass::B => 'B',
            SchedulingClass::C => 'C',
            SchedulingClass::D => 'D',
            SchedulingClass::E => 'E',
            SchedulingClass::F => 'F',
            SchedulingClass::G => 'G',
        }
    }

    pub fn from_label(label: char) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.label() == label.to_ascii_uppercase())
    }

    /// Average redundancy factor: expected replicas per information packet,
    /// `sum over i of i * r_i`.
    pub fn avg_redundancy(self) -> f64 {
        self.ratios()
            .iter()
            .enumerate()
            .map(|(i, r)| (i as f64 + 1.0) * r)
            .sum()
    }

    /// Exact round counts per replica level for a cycle of `k` rounds.
    /// Errors when some `r_i * k` is not an integer.
    fn round_multiplicities(self, k: usize) -> Result<[usize; PATHS]> {
        let mut counts = [0usize; PATHS];
        for (i, &r) in self.ratios().iter().enumerate() {
            let exact = r * k as f64;
            let rounded = exact.round();
            if (exact - rounded).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "class {}: r_{} = {} times K = {} is not an integral round count",
                    self.label(),
                    i + 1,
                    r,
                    k
                )));
            }
            counts[i] = rounded as usize;
        }
        Ok(counts)
    }

    /// The per-round replica counts of one cycle, spread maximally evenly.
    ///
    /// Every replica level `i` with `n_i = r_i * K` rounds is placed at the
    /// fractional positions `(2j + 1) / (2 n_i)` of the cycle and the slots
    /// are emitted in position order, higher replica counts first on ties.
    /// This reproduces the alternation of the class table (F gives
    /// `3,2,3,2,...`, C gives `2,2,1,2,...`).
    pub fn replica_sequence(self, k: usize) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        let counts = self.round_multiplicities(k)?;
        let mut slots: Vec<(u64, u64, usize)> = Vec::with_capacity(k);
        for (i, &n) in counts.iter().enumerate() {
            for j in 0..n {
                slots.push(((2 * j + 1) as u64, 2 * n as u64, i + 1));
            }
        }
        slots.sort_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)).then(b.2.cmp(&a.2)));
        Ok(slots.into_iter().map(|(_, _, reps)| reps).collect())
    }

    /// Packets transmitted per cycle: `N = f_bar * K`, with the redundancy
    /// overhead `R = N - K` alongside.
    pub fn used_bandwidth(self, k: usize) -> Bandwidth {
        let n = (self.avg_redundancy() * k as f64).round() as u64;
        Bandwidth { transmitted: n, redundancy: n - k as u64 }
    }
}

/// Per-cycle bandwidth cost of a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bandwidth {
    /// Total packets (replicas included) per cycle, `N`.
    pub transmitted: u64,
    /// Redundant packets per cycle, `R = N - K`.
    pub redundancy: u64,
}

/// Positive integer weights of the round robin, indexed by path id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathWeights(Vec<u32>);

impl PathWeights {
    pub fn new(omega: Vec<u32>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::Config("weights must not be empty".into()));
        }
        if omega.iter().any(|&w| w == 0) {
            return Err(Error::Config("every path weight must be at least 1".into()));
        }
        Ok(Self(omega))
    }

    /// Weights from a priority permutation, highest priority first: with
    /// `m` paths, `perm[0]` receives weight `m`, `perm[1]` weight `m - 1`,
    /// down to weight 1.
    pub fn from_permutation(perm: &[usize]) -> Result<Self> {
        let m = perm.len();
        let mut omega = vec![0u32; m];
        let mut seen = vec![false; m];
        for (rank, &path) in perm.iter().enumerate() {
            if path >= m || seen[path] {
                return Err(Error::Config(format!(
                    "{perm:?} is not a permutation of 0..{m}"
                )));
            }
            seen[path] = true;
            omega[path] = (m - rank) as u32;
        }
        Self::new(omega)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, path: usize) -> u32 {
        self.0[path]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

/// One round of a cycle plan: a replica count and the concrete paths that
/// carry the replicas, ordered by descending scheduler credit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Round {
    pub replica_count: usize,
    pub paths: Vec<usize>,
}

/// A full cycle: `K` rounds with their path subsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CyclePlan {
    pub rounds: Vec<Round>,
    /// Information packets per cycle (one per round).
    pub info_packets: usize,
    /// Total replica transmissions per cycle, `N`.
    pub transmitted: usize,
}

impl CyclePlan {
    /// How many rounds include each path over the whole cycle.
    pub fn per_path_counts(&self, num_paths: usize) -> Vec<usize> {
        let mut counts = vec![0usize; num_paths];
        for round in &self.rounds {
            for &p in &round.paths {
                counts[p] += 1;
            }
        }
        counts
    }
}

fn lcm_upto(m: usize) -> i64 {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    (1..=m as i64).fold(1, |acc, x| acc / gcd(acc, x) * x)
}

/// Deterministic credit-based interleaved weighted round robin.
///
/// Each round every path earns its weight in credit; the `replica_count`
/// highest-credit paths carry the round and each pays
/// `sum(weights) / replica_count`. Credit ties go to the heavier path, then
/// to the lower path id, which keeps plans invariant under relabeling paths
/// together with their weights. Credits are held scaled by `lcm(1..=m)` so
/// every payment stays integral.
pub fn build_cycle_plan(
    class: SchedulingClass,
    weights: &PathWeights,
    k: usize,
) -> Result<CyclePlan> {
    let m = weights.len();
    let sequence = class.replica_sequence(k)?;
    if sequence.iter().any(|&reps| reps > m) {
        return Err(Error::Config(format!(
            "class {} replicates over more than the {m} configured paths",
            class.label()
        )));
    }
    let scale = lcm_upto(m);
    let total_weight: i64 = weights.as_slice().iter().map(|&w| i64::from(w)).sum();
    let mut credits = vec![0i64; m];
    let mut order: Vec<usize> = (0..m).collect();
    let mut rounds = Vec::with_capacity(k);
    let mut transmitted = 0usize;
    for reps in sequence {
        for (path, credit) in credits.iter_mut().enumerate() {
            *credit += i64::from(weights.get(path)) * scale;
        }
        order.sort_by(|&a, &b| {
            credits[b]
                .cmp(&credits[a])
                .then(weights.get(b).cmp(&weights.get(a)))
                .then(a.cmp(&b))
        });
        let chosen = order[..reps].to_vec();
        let payment = total_weight * scale / reps as i64;
        for &p in &chosen {
            credits[p] -= payment;
        }
        transmitted += reps;
        rounds.push(Round { replica_count: reps, paths: chosen });
    }
    Ok(CyclePlan { rounds, info_packets: k, transmitted })
}
