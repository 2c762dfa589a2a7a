//! Output-channel keep masks and their application to a snapshot.
//!
//! A [`PruneMask`] maps layer names to boolean keep vectors over output
//! channels. During a pruning run the mask is the single source of truth for
//! which channels are live; [`apply_masks`] materializes it at the end by
//! physically dropping filters, the matching input slices of consumer layers,
//! and the classifier inputs fed by the last convolution.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::Classifier;
use crate::error::{Error, Result};
use crate::snapshot::{ConvLayer, ModelSnapshot};

/// Per-layer keep masks over output channels. Layers are keyed by name and
/// kept in sorted order so serialized masks are byte-stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMask {
    schema: u32,
    keep: BTreeMap<String, Vec<bool>>,
}

impl PruneMask {
    pub const SCHEMA: u32 = 1;

    pub fn empty() -> Self {
        PruneMask {
            schema: Self::SCHEMA,
            keep: BTreeMap::new(),
        }
    }

    /// A mask keeping every channel of every layer in `snap`.
    pub fn all_true(snap: &ModelSnapshot) -> Self {
        let mut mask = PruneMask::empty();
        for layer in snap.layers() {
            mask.keep
                .insert(layer.name().to_string(), vec![true; layer.out_channels()]);
        }
        mask
    }

    pub fn get(&self, layer: &str) -> Option<&[bool]> {
        self.keep.get(layer).map(|v| v.as_slice())
    }

    pub fn set(&mut self, layer: impl Into<String>, keep: Vec<bool>) {
        self.keep.insert(layer.into(), keep);
    }

    /// Flip a single channel; no-op if the layer is absent.
    pub fn set_channel(&mut self, layer: &str, channel: usize, live: bool) {
        if let Some(v) = self.keep.get_mut(layer) {
            v[channel] = live;
        }
    }

    pub fn kept_count(&self, layer: &str) -> usize {
        self.keep
            .get(layer)
            .map(|v| v.iter().filter(|&&b| b).count())
            .unwrap_or(0)
    }

    pub fn kept_indices(&self, layer: &str) -> Vec<usize> {
        self.keep
            .get(layer)
            .map(|v| {
                v.iter()
                    .enumerate()
                    .filter_map(|(i, &b)| b.then_some(i))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &[bool])> {
        self.keep.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn mask_for<'m>(
    mask: &'m PruneMask,
    layer: &ConvLayer,
    all_true: &'m [bool],
) -> Result<&'m [bool]> {
    match mask.get(layer.name()) {
        None => Ok(&all_true[..layer.out_channels()]),
        Some(m) if m.len() == layer.out_channels() => Ok(m),
        Some(m) => Err(Error::MaskShape {
            layer: layer.name().to_string(),
            expected: layer.out_channels(),
            got: m.len(),
        }),
    }
}

/// Materialize `mask` on `snap`: drop masked-out filters, shrink consumer
/// input channels along producer edges, and narrow the classifier if it is
/// fed by the last convolution. Layers absent from the mask keep all
/// channels.
pub fn apply_masks(snap: &ModelSnapshot, mask: &PruneMask) -> Result<ModelSnapshot> {
    let widest = snap
        .layers()
        .iter()
        .map(|l| l.out_channels().max(l.in_channels()))
        .max()
        .unwrap_or(0);
    let all_true = vec![true; widest];

    let mut layers = Vec::with_capacity(snap.layers().len());
    for (i, layer) in snap.layers().iter().enumerate() {
        let out_keep = mask_for(mask, layer, &all_true)?;
        if !snap.arch().is_prunable(i) && out_keep.iter().any(|&b| !b) {
            return Err(Error::MaskOnNonPrunable(layer.name().to_string()));
        }
        let kept_out = out_keep.iter().filter(|&&b| b).count();
        if kept_out == 0 {
            return Err(Error::LayerConstraint {
                layer: layer.name().to_string(),
                reason: "mask removes every output channel".into(),
            });
        }
        let in_keep = match snap.arch().producer(i) {
            Some(p) => mask_for(mask, snap.layer(p), &all_true)?,
            None => &all_true[..layer.in_channels()],
        };
        let kept_in = in_keep.iter().filter(|&&b| b).count();

        let k = layer.kernel_len();
        let mut weights = Vec::with_capacity(kept_out * kept_in * k);
        for (o, &keep_o) in out_keep.iter().enumerate() {
            if !keep_o {
                continue;
            }
            for (j, &keep_j) in in_keep.iter().enumerate() {
                if keep_j {
                    weights.extend_from_slice(layer.kernel(o, j));
                }
            }
        }
        let gammas = layer.gammas().map(|g| {
            g.iter()
                .zip(out_keep)
                .filter_map(|(&v, &keep)| keep.then_some(v))
                .collect()
        });
        layers.push(ConvLayer::new(
            layer.name(),
            kept_out,
            kept_in,
            layer.kernel_h(),
            layer.kernel_w(),
            layer.out_hw(),
            layer.block(),
            weights,
            gammas,
        )?);
    }

    // The classifier consumes pooled features of the last conv; its input
    // width follows that layer's surviving channels.
    let classifier = snap.classifier().map(|c| {
        let last = snap.layers().last().expect("non-empty model");
        if c.in_features == last.out_channels() {
            Classifier {
                in_features: mask
                    .get(last.name())
                    .map(|m| m.iter().filter(|&&b| b).count())
                    .unwrap_or(c.in_features),
                out_features: c.out_features,
            }
        } else {
            c
        }
    });

    ModelSnapshot::new(snap.model(), snap.input_hw(), classifier, layers)
}
