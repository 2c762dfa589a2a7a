//! Bottom-up agglomerative clustering over a channel's kernel set.
//!
//! Clustering starts from singleton kernels and repeatedly merges the closest
//! pair of clusters under the chosen linkage. The full merge history is kept
//! as a [`MergeSequence`], which supports replaying the partition at any step
//! and evaluating the cut-off control function.
//!
//! Cluster ids follow the usual stepwise-dendrogram convention: leaves are
//! `0..n`, the cluster created at merge step `c` (1-based) gets id `n + c - 1`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linkage criterion used to measure the distance between two clusters.
///
/// All four grow monotonically along the merge sequence, which is what makes
/// a height cut-off well defined. Ward distances are sum-of-squared-error
/// increments; the other three operate on Euclidean point distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkageMethod {
    Ward,
    Single,
    Complete,
    Average,
}

impl LinkageMethod {
    pub const ALL: [LinkageMethod; 4] = [
        LinkageMethod::Ward,
        LinkageMethod::Single,
        LinkageMethod::Complete,
        LinkageMethod::Average,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LinkageMethod::Ward => "ward",
            LinkageMethod::Single => "single",
            LinkageMethod::Complete => "complete",
            LinkageMethod::Average => "average",
        }
    }
}

impl FromStr for LinkageMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ward" => Ok(LinkageMethod::Ward),
            "single" => Ok(LinkageMethod::Single),
            "complete" => Ok(LinkageMethod::Complete),
            "average" => Ok(LinkageMethod::Average),
            other => Err(Error::InvalidParameter(format!(
                "unknown linkage method `{other}` (expected ward|single|complete|average)"
            ))),
        }
    }
}

impl std::fmt::Display for LinkageMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The kernels of one input channel, flattened row-major to vectors.
#[derive(Debug, Clone)]
pub struct KernelSet {
    channel: usize,
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl KernelSet {
    pub fn new(channel: usize, kernels: Vec<Vec<f64>>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::InvalidParameter(
                "kernel set must hold at least one kernel".into(),
            ));
        }
        let dim = kernels[0].len();
        if dim == 0 {
            return Err(Error::InvalidParameter("kernel vectors are empty".into()));
        }
        let mut data = Vec::with_capacity(kernels.len() * dim);
        for (i, k) in kernels.iter().enumerate() {
            if k.len() != dim {
                return Err(Error::InvalidParameter(format!(
                    "kernel {i} has length {} but expected {dim}",
                    k.len()
                )));
            }
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "kernel {i} contains a non-finite value"
                )));
            }
            data.extend_from_slice(k);
        }
        Ok(KernelSet {
            channel,
            n: kernels.len(),
            dim,
            data,
        })
    }

    pub fn channel(&self) -> usize {
        self.channel
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// One merge of the agglomeration: at `step` (1-based), clusters `left` and
/// `right` were joined at the given linkage distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Merge {
    pub step: usize,
    pub left: usize,
    pub right: usize,
    pub distance: f64,
}

/// The ordered merge history of one kernel set.
#[derive(Debug, Clone)]
pub struct MergeSequence {
    leaves: usize,
    merges: Vec<Merge>,
}

impl MergeSequence {
    pub(crate) fn from_merges(leaves: usize, merges: Vec<Merge>) -> Self {
        MergeSequence { leaves, merges }
    }

    /// Number of kernels the sequence was built over.
    pub fn leaves(&self) -> usize {
        self.leaves
    }

    /// Number of merge steps actually performed.
    pub fn performed(&self) -> usize {
        self.merges.len()
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// The linkage objective d(c): the distance of the c-th merge, with
    /// d(0) = 0.
    pub fn linkage_objective(&self, c: usize) -> Result<f64> {
        if c == 0 {
            return Ok(0.0);
        }
        self.merges
            .get(c - 1)
            .map(|m| m.distance)
            .ok_or(Error::StepBeyondSequence {
                step: c,
                performed: self.merges.len(),
            })
    }

    /// Materialize the cluster partition after `c` merges.
    ///
    /// Clusters are lists of kernel indices, members ascending, clusters
    /// ordered by their smallest member.
    pub fn partition_at(&self, c: usize) -> Result<Vec<Vec<usize>>> {
        if c > self.merges.len() {
            return Err(Error::StepBeyondSequence {
                step: c,
                performed: self.merges.len(),
            });
        }
        let mut members: Vec<Option<Vec<usize>>> =
            (0..self.leaves).map(|i| Some(vec![i])).collect();
        members.resize(self.leaves + c, None);
        for merge in &self.merges[..c] {
            let mut left = members[merge.left].take().expect("left cluster alive");
            let right = members[merge.right].take().expect("right cluster alive");
            left.extend(right);
            members[self.leaves + merge.step - 1] = Some(left);
        }
        let mut clusters: Vec<Vec<usize>> = members
            .into_iter()
            .flatten()
            .map(|mut m| {
                m.sort_unstable();
                m
            })
            .collect();
        clusters.sort_unstable_by_key(|m| m[0]);
        Ok(clusters)
    }

    /// The cut-off control function: the partition after `c` merges if the
    /// height `h` reaches d(c), otherwise the partition one step earlier.
    pub fn control_cut(&self, c: usize, h: f64) -> Result<Vec<Vec<usize>>> {
        if c == 0 {
            return self.partition_at(0);
        }
        let d = self.linkage_objective(c)?;
        if h >= d {
            self.partition_at(c)
        } else {
            self.partition_at(c - 1)
        }
    }

    /// True iff merge distances never decrease along the sequence.
    pub fn check_monotone(&self) -> bool {
        self.merges
            .windows(2)
            .all(|w| w[0].distance <= w[1].distance)
    }

    /// Dump the merges as JSON lines `{channel, step, a, b, distance}`.
    pub fn write_jsonl<W: Write>(&self, channel: usize, mut out: W) -> std::io::Result<()> {
        for m in &self.merges {
            let line = serde_json::json!({
                "channel": channel,
                "step": m.step,
                "a": m.left,
                "b": m.right,
                "distance": m.distance,
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn centroid(cluster: &[Vec<f64>]) -> Vec<f64> {
    let dim = cluster[0].len();
    let mut m = vec![0.0; dim];
    for v in cluster {
        for (acc, x) in m.iter_mut().zip(v) {
            *acc += x;
        }
    }
    let inv = 1.0 / cluster.len() as f64;
    for acc in &mut m {
        *acc *= inv;
    }
    m
}

/// Ward's linkage distance between two disjoint clusters:
/// `|A||B| / (|A|+|B|) * ||m_A - m_B||^2` with `m` the cluster centroids.
///
/// This equals the increase in total within-cluster sum of squared errors
/// caused by merging the two clusters.
pub fn ward_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let d2 = squared_euclidean(&centroid(a), &centroid(b));
    Ok(na * nb / (na + nb) * d2)
}

/// Heap entry ordered by (distance, left id, right id); distances are finite.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    distance: f64,
    left: usize,
    right: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.left.cmp(&other.left))
            .then(self.right.cmp(&other.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lance-Williams update for the distance between the merged cluster `a+b`
/// and another cluster `x`.
fn lance_williams(
    method: LinkageMethod,
    d_ax: f64,
    d_bx: f64,
    d_ab: f64,
    size_a: usize,
    size_b: usize,
    size_x: usize,
) -> f64 {
    match method {
        LinkageMethod::Single => d_ax.min(d_bx),
        LinkageMethod::Complete => d_ax.max(d_bx),
        LinkageMethod::Average => {
            let (sa, sb) = (size_a as f64, size_b as f64);
            (sa * d_ax + sb * d_bx) / (sa + sb)
        }
        LinkageMethod::Ward => {
            let (sa, sb, sx) = (size_a as f64, size_b as f64, size_x as f64);
            ((sa + sx) * d_ax + (sb + sx) * d_bx - sx * d_ab) / (sa + sb + sx)
        }
    }
}

/// Initial distance between two singleton kernels under `method`.
///
/// Ward distances carry the SSE-increment scale, so two singletons sit at
/// half their squared Euclidean distance; the other linkages start from the
/// plain Euclidean distance.
fn initial_distance(method: LinkageMethod, a: &[f64], b: &[f64]) -> f64 {
    let d2 = squared_euclidean(a, b);
    match method {
        LinkageMethod::Ward => 0.5 * d2,
        _ => d2.sqrt(),
    }
}

/// Run `steps` merges of bottom-up clustering over `kernels`.
///
/// Each step merges the globally closest pair under `method`; distance ties
/// are broken by the lowest (left id, right id) pair. Incremental distances
/// are maintained with the Lance-Williams recurrence over a lazy candidate
/// heap, so a full run costs O(n^2 log n).
pub fn agglomerate(
    kernels: &KernelSet,
    method: LinkageMethod,
    steps: usize,
) -> Result<MergeSequence> {
    let n = kernels.len();
    if steps > n.saturating_sub(1) {
        return Err(Error::StepsOutOfRange { steps, kernels: n });
    }
    if steps == 0 {
        return Ok(MergeSequence::from_merges(n, Vec::new()));
    }

    // Slot-indexed distance matrix; `slot_of[id]` maps live cluster ids into
    // it. A merged cluster reuses its left constituent's slot.
    let total_ids = n + steps;
    let mut dist = vec![0.0f64; n * n];
    let mut slot_of = vec![usize::MAX; total_ids];
    let mut id_of_slot = vec![usize::MAX; n];
    let mut size = vec![0usize; total_ids];
    let mut alive = vec![false; total_ids];
    let mut active_slots: Vec<usize> = (0..n).collect();

    for id in 0..n {
        slot_of[id] = id;
        id_of_slot[id] = id;
        size[id] = 1;
        alive[id] = true;
    }

    let mut heap = BinaryHeap::with_capacity(n * n / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = initial_distance(method, kernels.kernel(i), kernels.kernel(j));
            dist[i * n + j] = d;
            dist[j * n + i] = d;
            heap.push(std::cmp::Reverse(Candidate {
                distance: d,
                left: i,
                right: j,
            }));
        }
    }

    let mut merges = Vec::with_capacity(steps);
    for step in 1..=steps {
        // Entries referencing a dead id are stale; distances between two live
        // ids never change, so the first live entry is the current minimum.
        let top = loop {
            let std::cmp::Reverse(c) = heap.pop().expect("pairs remain while clusters remain");
            if alive[c.left] && alive[c.right] {
                break c;
            }
        };

        let new_id = n + step - 1;
        let slot_a = slot_of[top.left];
        let slot_b = slot_of[top.right];
        alive[top.left] = false;
        alive[top.right] = false;
        alive[new_id] = true;
        size[new_id] = size[top.left] + size[top.right];
        slot_of[new_id] = slot_a;
        id_of_slot[slot_a] = new_id;
        let pos = active_slots
            .iter()
            .position(|&s| s == slot_b)
            .expect("slot active");
        active_slots.swap_remove(pos);

        for &slot_x in &active_slots {
            if slot_x == slot_a {
                continue;
            }
            let x_id = id_of_slot[slot_x];
            let d_new = lance_williams(
                method,
                dist[slot_a * n + slot_x],
                dist[slot_b * n + slot_x],
                top.distance,
                size[top.left],
                size[top.right],
                size[x_id],
            );
            dist[slot_a * n + slot_x] = d_new;
            dist[slot_x * n + slot_a] = d_new;
            heap.push(std::cmp::Reverse(Candidate {
                distance: d_new,
                left: x_id,
                right: new_id,
            }));
        }

        merges.push(Merge {
            step,
            left: top.left,
            right: top.right,
            distance: top.distance,
        });
    }

    Ok(MergeSequence::from_merges(n, merges))
}
