//! Filter selection as maximum coverage.
//!
//! Every cluster produced by the per-channel cuts is one universe element; a
//! filter covers the element iff it belongs to that cluster. Picking `k`
//! filters that cover as many clusters as possible keeps at least one
//! representative of as many kernel groups as the budget allows. The greedy
//! algorithm achieves at least a `1 - 1/e` fraction of the optimum.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How to break ties between filters with equal marginal gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Uniform choice among the tied filters from the caller's RNG.
    Random,
    /// Largest filter L2 norm wins; equal norms fall back to lowest index.
    MaxL2,
    /// Smallest filter L2 norm wins; equal norms fall back to lowest index.
    MinL2,
}

impl TieBreak {
    pub fn name(&self) -> &'static str {
        match self {
            TieBreak::Random => "random",
            TieBreak::MaxL2 => "max-l2",
            TieBreak::MinL2 => "min-l2",
        }
    }
}

impl FromStr for TieBreak {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(TieBreak::Random),
            "max-l2" => Ok(TieBreak::MaxL2),
            "min-l2" => Ok(TieBreak::MinL2),
            other => Err(Error::InvalidParameter(format!(
                "unknown tie-break `{other}` (expected random|max-l2|min-l2)"
            ))),
        }
    }
}

impl std::fmt::Display for TieBreak {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A maximum-coverage instance: which universe elements each filter covers.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageInstance {
    n_filters: usize,
    universe: usize,
    /// Per filter, ascending element ids it covers.
    sets: Vec<Vec<usize>>,
    /// Filter L2 norms for the norm tie-breaks; empty means "all equal".
    norms: Vec<f64>,
}

impl CoverageInstance {
    pub fn new(n_filters: usize, universe: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        if universe == 0 {
            return Err(Error::EmptyUniverse);
        }
        if sets.len() != n_filters {
            return Err(Error::InvalidParameter(format!(
                "expected {n_filters} cover sets, got {}",
                sets.len()
            )));
        }
        for (f, set) in sets.iter().enumerate() {
            if let Some(&e) = set.iter().find(|&&e| e >= universe) {
                return Err(Error::InvalidParameter(format!(
                    "filter {f} covers element {e} outside universe of {universe}"
                )));
            }
        }
        Ok(CoverageInstance {
            n_filters,
            universe,
            sets,
            norms: Vec::new(),
        })
    }

    /// Build the instance from per-channel cluster partitions: element ids
    /// are assigned to clusters in iteration order, and a filter covers the
    /// clusters containing it.
    pub fn from_clusters<'a>(
        n_filters: usize,
        per_channel: impl IntoIterator<Item = &'a Vec<Vec<usize>>>,
    ) -> Result<Self> {
        let mut sets = vec![Vec::new(); n_filters];
        let mut next_id = 0;
        for clusters in per_channel {
            for cluster in clusters {
                for &f in cluster {
                    if f >= n_filters {
                        return Err(Error::InvalidParameter(format!(
                            "cluster member {f} out of range for {n_filters} filters"
                        )));
                    }
                    sets[f].push(next_id);
                }
                next_id += 1;
            }
        }
        if next_id == 0 {
            return Err(Error::EmptyUniverse);
        }
        Ok(CoverageInstance {
            n_filters,
            universe: next_id,
            sets,
            norms: Vec::new(),
        })
    }

    /// Attach filter norms (one per filter) for the L2 tie-breaks.
    pub fn with_norms(mut self, norms: Vec<f64>) -> Result<Self> {
        if norms.len() != self.n_filters {
            return Err(Error::InvalidParameter(format!(
                "expected {} norms, got {}",
                self.n_filters,
                norms.len()
            )));
        }
        self.norms = norms;
        Ok(self)
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn set(&self, f: usize) -> &[usize] {
        &self.sets[f]
    }
}

/// Marginal gain of filter `f`: elements it covers that are still uncovered.
pub fn filter_gain(inst: &CoverageInstance, covered: &[bool], f: usize) -> usize {
    inst.sets[f].iter().filter(|&&e| !covered[e]).count()
}

/// Fraction of the universe covered.
pub fn coverage_rate(covered: usize, universe: usize) -> f64 {
    if universe == 0 {
        0.0
    } else {
        covered as f64 / universe as f64
    }
}

/// Outcome of a greedy selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Picked filters, in pick order.
    pub selected: Vec<usize>,
    /// Marginal gain of each pick.
    pub gain_history: Vec<usize>,
    /// Universe elements covered at the end.
    pub covered: usize,
    pub coverage_rate: f64,
}

fn break_tie<R: Rng>(
    inst: &CoverageInstance,
    tied: &[usize],
    tie: TieBreak,
    rng: &mut R,
) -> usize {
    debug_assert!(!tied.is_empty());
    if tied.len() == 1 {
        return tied[0];
    }
    match tie {
        TieBreak::Random => tied[rng.random_range(0..tied.len())],
        TieBreak::MaxL2 | TieBreak::MinL2 => {
            if inst.norms.is_empty() {
                return tied[0];
            }
            let mut best = tied[0];
            for &f in &tied[1..] {
                let better = match tie {
                    TieBreak::MaxL2 => inst.norms[f] > inst.norms[best],
                    _ => inst.norms[f] < inst.norms[best],
                };
                if better {
                    best = f;
                }
            }
            best
        }
    }
}

/// Greedily pick `k` filters maximizing marginal coverage. Gains are
/// recomputed against the running covered set every round; zero-gain rounds
/// still pick a filter (the budget is exact). Ties go through `tie`.
pub fn select_greedy<R: Rng>(
    inst: &CoverageInstance,
    k: usize,
    tie: TieBreak,
    rng: &mut R,
) -> Result<SelectionResult> {
    if k == 0 || k > inst.n_filters {
        return Err(Error::InvalidParameter(format!(
            "cannot select {k} of {} filters",
            inst.n_filters
        )));
    }
    let mut covered = vec![false; inst.universe];
    let mut picked = vec![false; inst.n_filters];
    let mut selected = Vec::with_capacity(k);
    let mut gain_history = Vec::with_capacity(k);
    let mut tied = Vec::new();

    for _ in 0..k {
        let mut best_gain = 0;
        tied.clear();
        for (f, &taken) in picked.iter().enumerate() {
            if taken {
                continue;
            }
            let g = filter_gain(inst, &covered, f);
            if tied.is_empty() || g > best_gain {
                best_gain = g;
                tied.clear();
                tied.push(f);
            } else if g == best_gain {
                tied.push(f);
            }
        }
        let f = break_tie(inst, &tied, tie, rng);
        picked[f] = true;
        selected.push(f);
        gain_history.push(best_gain);
        for &e in &inst.sets[f] {
            covered[e] = true;
        }
    }

    let total = covered.iter().filter(|&&c| c).count();
    Ok(SelectionResult {
        selected,
        gain_history,
        covered: total,
        coverage_rate: coverage_rate(total, inst.universe),
    })
}

/// Exhaustive optimum for small instances: the best coverage any `k`-subset
/// achieves. Guarded to at most 20 filters.
pub fn brute_force_optimum(inst: &CoverageInstance, k: usize) -> Result<usize> {
    const LIMIT: usize = 20;
    if inst.n_filters > LIMIT {
        return Err(Error::InstanceTooLarge {
            filters: inst.n_filters,
            limit: LIMIT,
        });
    }
    if k == 0 || k > inst.n_filters {
        return Err(Error::InvalidParameter(format!(
            "cannot select {k} of {} filters",
            inst.n_filters
        )));
    }

    // Element bitsets per filter; unions over a k-subset count with popcnt.
    let words = inst.universe.div_ceil(64);
    let bits: Vec<Vec<u64>> = inst
        .sets
        .iter()
        .map(|set| {
            let mut b = vec![0u64; words];
            for &e in set {
                b[e / 64] |= 1 << (e % 64);
            }
            b
        })
        .collect();

    fn recurse(
        bits: &[Vec<u64>],
        start: usize,
        remaining: usize,
        acc: &mut Vec<u64>,
        best: &mut usize,
    ) {
        if remaining == 0 {
            let count: usize = acc.iter().map(|w| w.count_ones() as usize).sum();
            *best = (*best).max(count);
            return;
        }
        // Not enough filters left to fill the subset.
        if bits.len() - start < remaining {
            return;
        }
        for f in start..bits.len() {
            let saved = acc.clone();
            for (a, b) in acc.iter_mut().zip(&bits[f]) {
                *a |= b;
            }
            recurse(bits, f + 1, remaining - 1, acc, best);
            *acc = saved;
        }
    }

    let mut best = 0;
    let mut acc = vec![0u64; words];
    recurse(&bits, 0, k, &mut acc, &mut best);
    Ok(best)
}
