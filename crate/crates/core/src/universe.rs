//! From one layer's kernels to a coverage universe.
//!
//! For a layer with `n` live filters and target sparsity `s`, every live
//! input channel's kernels are clustered independently with the same merge
//! budget `ceil(s * n)`. The layer's cut-off height is the largest linkage
//! objective any channel reached at that budget; cutting every channel's
//! dendrogram there yields the per-channel cluster sets whose union is the
//! universe the filter-selection stage must cover.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linkage::{agglomerate, KernelSet, LinkageMethod, MergeSequence};
use crate::snapshot::ConvLayer;

/// Ceiling that tolerates f64 representation error: values within 1e-9 of an
/// integer are snapped to it first, so e.g. 0.3 * 10 -> 3, not 4.
pub(crate) fn ceil_guarded(x: f64) -> usize {
    let rounded = x.round();
    if (x - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        x.ceil() as usize
    }
}

fn check_sparsity(sparsity: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&sparsity) || !sparsity.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sparsity must lie in [0, 1], got {sparsity}"
        )));
    }
    Ok(())
}

/// Number of merges to run per channel: `ceil(s * n)`, capped at the `n - 1`
/// merges a dendrogram over `n` kernels can perform.
pub fn merge_budget(sparsity: f64, n_filters: usize) -> Result<usize> {
    check_sparsity(sparsity)?;
    if n_filters == 0 {
        return Err(Error::EmptyLayer);
    }
    Ok(ceil_guarded(sparsity * n_filters as f64).min(n_filters - 1))
}

/// Cluster count each channel ends up with after spending `budget` merges.
pub fn clusters_per_channel(n_filters: usize, budget: usize) -> usize {
    n_filters - budget
}

/// Number of filters to keep: `ceil((1 - s) * n)`.
pub fn keep_count(sparsity: f64, n_filters: usize) -> Result<usize> {
    check_sparsity(sparsity)?;
    Ok(ceil_guarded((1.0 - sparsity) * n_filters as f64))
}

/// The layer cut-off height: the largest linkage objective reached at
/// `budget` across all channels' merge sequences.
pub fn layer_cutoff(sequences: &[MergeSequence], budget: usize) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::EmptyLayer);
    }
    let mut h = f64::NEG_INFINITY;
    for seq in sequences {
        h = h.max(seq.linkage_objective(budget)?);
    }
    Ok(h)
}

/// Kernels of all live filters at one input channel, as clustering vectors.
pub fn kernel_set(layer: &ConvLayer, channel: usize, live_out: &[bool]) -> Result<KernelSet> {
    let kernels: Vec<Vec<f64>> = live_out
        .iter()
        .enumerate()
        .filter(|(_, &live)| live)
        .map(|(o, _)| layer.kernel(o, channel).iter().map(|&w| w as f64).collect())
        .collect();
    KernelSet::new(channel, kernels)
}

/// Run the merge budget on every live input channel of a layer.
///
/// Channels are clustered in parallel; the result is ordered by channel
/// index. Kernel indices inside each sequence are positions within the live
/// filter list, not original filter indices.
pub fn channel_merge_sequences(
    layer: &ConvLayer,
    live_out: &[bool],
    live_in: &[bool],
    method: LinkageMethod,
    budget: usize,
) -> Result<Vec<(usize, MergeSequence)>> {
    let channels: Vec<usize> = live_in
        .iter()
        .enumerate()
        .filter_map(|(j, &live)| live.then_some(j))
        .collect();
    if channels.is_empty() {
        return Err(Error::LayerConstraint {
            layer: layer.name().to_string(),
            reason: "no live input channels".into(),
        });
    }
    channels
        .into_par_iter()
        .map(|j| {
            let ks = kernel_set(layer, j, live_out)?;
            Ok((j, agglomerate(&ks, method, budget)?))
        })
        .collect()
}

/// One channel's clusters after the layer cut.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelClusters {
    pub channel: usize,
    /// Clusters of live-filter positions, members ascending.
    pub clusters: Vec<Vec<usize>>,
}

/// Everything the selection stage needs to know about one layer at one
/// pruning event.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerClusterUniverse {
    pub layer: String,
    pub sparsity: f64,
    /// Original indices of the live filters, ascending; cluster members are
    /// positions into this list.
    pub live_filters: Vec<usize>,
    /// Merge budget spent per channel.
    pub merges: usize,
    /// Cut-off height shared by every channel of the layer.
    pub cutoff: f64,
    pub channels: Vec<ChannelClusters>,
    /// Total number of clusters across channels.
    pub universe_size: usize,
}

/// Cluster every live channel of `layer` and cut at the layer's own cut-off
/// height (or `external_cutoff` when a caller supplies one, e.g. a height
/// shared across layers).
pub fn build_universe(
    layer: &ConvLayer,
    live_out: &[bool],
    live_in: &[bool],
    method: LinkageMethod,
    sparsity: f64,
    external_cutoff: Option<f64>,
) -> Result<LayerClusterUniverse> {
    let live_filters: Vec<usize> = live_out
        .iter()
        .enumerate()
        .filter_map(|(o, &live)| live.then_some(o))
        .collect();
    if live_filters.is_empty() {
        return Err(Error::EmptyLayer);
    }
    let n = live_filters.len();
    let budget = merge_budget(sparsity, n)?;
    let sequences = channel_merge_sequences(layer, live_out, live_in, method, budget)?;

    let seqs_only: Vec<MergeSequence> = sequences.iter().map(|(_, s)| s.clone()).collect();
    let own_cutoff = layer_cutoff(&seqs_only, budget)?;
    let cutoff = external_cutoff.unwrap_or(own_cutoff);

    let mut channels = Vec::with_capacity(sequences.len());
    let mut universe_size = 0;
    for (channel, seq) in &sequences {
        let clusters = seq.control_cut(budget, cutoff)?;
        universe_size += clusters.len();
        channels.push(ChannelClusters {
            channel: *channel,
            clusters,
        });
    }

    Ok(LayerClusterUniverse {
        layer: layer.name().to_string(),
        sparsity,
        live_filters,
        merges: budget,
        cutoff,
        channels,
        universe_size,
    })
}
