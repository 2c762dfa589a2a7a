//! The model weight container: an in-memory snapshot plus its on-disk format.
//!
//! A snapshot is stored as a pair of files sharing one stem: `{stem}.json`
//! holds the manifest (shapes, block tags, byte offsets) and `{stem}.bin`
//! holds every tensor back to back as little-endian f32. Offsets are byte
//! positions into the blob; tensor lengths are implied by the layer shapes.
//! Weights round-trip bit-exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{ArchGraph, BlockRef, Classifier};
use crate::error::{Error, Result};

/// One convolution layer: shape, block tag, weights, and optional
/// batch-norm scales (one gamma per output channel).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    name: String,
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    out_hw: usize,
    block: BlockRef,
    weights: Vec<f32>,
    gammas: Option<Vec<f32>>,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        out_hw: usize,
        block: BlockRef,
        weights: Vec<f32>,
        gammas: Option<Vec<f32>>,
    ) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidArch("layer with empty name".into()));
        }
        let constraint = |reason: &str| Error::LayerConstraint {
            layer: name.clone(),
            reason: reason.into(),
        };
        if out_channels == 0 || in_channels == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(constraint("all shape dimensions must be positive"));
        }
        if out_hw == 0 {
            return Err(constraint("output resolution must be positive"));
        }
        let expected = out_channels * in_channels * kernel_h * kernel_w;
        if weights.len() != expected {
            return Err(constraint(&format!(
                "weight count {} does not match shape ({expected})",
                weights.len()
            )));
        }
        if let Some(g) = &gammas {
            if g.len() != out_channels {
                return Err(constraint(&format!(
                    "gamma count {} does not match {out_channels} output channels",
                    g.len()
                )));
            }
        }
        if let Some(idx) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFiniteWeight {
                tensor: format!("{name}.weights"),
                index: idx,
            });
        }
        if let Some(g) = &gammas {
            if let Some(idx) = g.iter().position(|w| !w.is_finite()) {
                return Err(Error::NonFiniteWeight {
                    tensor: format!("{name}.gammas"),
                    index: idx,
                });
            }
        }
        Ok(ConvLayer {
            name,
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            out_hw,
            block,
            weights,
            gammas,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_h(&self) -> usize {
        self.kernel_h
    }

    pub fn kernel_w(&self) -> usize {
        self.kernel_w
    }

    /// Spatial side length of the output feature map.
    pub fn out_hw(&self) -> usize {
        self.out_hw
    }

    pub fn block(&self) -> BlockRef {
        self.block
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    /// Mutable weight access for training-style updates; shapes are fixed.
    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn gammas(&self) -> Option<&[f32]> {
        self.gammas.as_deref()
    }

    pub fn gammas_mut(&mut self) -> Option<&mut [f32]> {
        self.gammas.as_deref_mut()
    }

    /// Number of weights in one kernel (kh * kw).
    pub fn kernel_len(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// The 2-D kernel applied by filter `o` to input channel `i`.
    pub fn kernel(&self, o: usize, i: usize) -> &[f32] {
        let k = self.kernel_len();
        let start = (o * self.in_channels + i) * k;
        &self.weights[start..start + k]
    }

    /// All weights of filter `o` (its full in_channels x kh x kw tensor).
    pub fn filter(&self, o: usize) -> &[f32] {
        let f = self.in_channels * self.kernel_len();
        &self.weights[o * f..(o + 1) * f]
    }

    /// L2 norm of filter `o`, restricted to live input channels.
    pub fn filter_l2(&self, o: usize, live_in: &[bool]) -> f64 {
        let mut sum = 0.0f64;
        for (i, &live) in live_in.iter().enumerate() {
            if !live {
                continue;
            }
            for &w in self.kernel(o, i) {
                sum += (w as f64) * (w as f64);
            }
        }
        sum.sqrt()
    }
}

/// A full model: named conv layers in execution order plus the derived
/// block/producer structure.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    model: String,
    layers: Vec<ConvLayer>,
    arch: ArchGraph,
}

impl ModelSnapshot {
    pub fn new(
        model: impl Into<String>,
        input_hw: usize,
        classifier: Option<Classifier>,
        layers: Vec<ConvLayer>,
    ) -> Result<Self> {
        let refs: Vec<BlockRef> = layers.iter().map(|l| l.block).collect();
        let arch = ArchGraph::derive(&refs, input_hw, classifier)?;
        let snap = ModelSnapshot {
            model: model.into(),
            layers,
            arch,
        };
        snap.validate()?;
        Ok(snap)
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &ConvLayer {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut ConvLayer {
        &mut self.layers[i]
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn arch(&self) -> &ArchGraph {
        &self.arch
    }

    pub fn input_hw(&self) -> usize {
        self.arch.input_hw()
    }

    pub fn classifier(&self) -> Option<Classifier> {
        self.arch.classifier()
    }

    /// Structural consistency: unique names and matching channel counts
    /// along every producer edge.
    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.layers.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArch(format!("duplicate layer name `{}`", w[0])));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(p) = self.arch.producer(i) {
                let src = &self.layers[p];
                if src.out_channels != layer.in_channels {
                    return Err(Error::InvalidArch(format!(
                        "`{}` expects {} input channels but producer `{}` emits {}",
                        layer.name, layer.in_channels, src.name, src.out_channels
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLayer {
    name: String,
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    out_hw: usize,
    block: BlockRef,
    weights_offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gammas_offset: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    model: String,
    input_hw: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classifier: Option<Classifier>,
    layers: Vec<ManifestLayer>,
}

/// Resolve the `{stem}.json` / `{stem}.bin` pair for a container path. The
/// path may be the bare stem or either of the two files.
pub fn container_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("bin"))
}

fn read_f32s(blob: &[u8], tensor: &str, offset: u64, count: usize) -> Result<Vec<f32>> {
    let start = offset as usize;
    let needed = count * 4;
    if start.checked_add(needed).is_none_or(|end| end > blob.len()) {
        return Err(Error::BlobSizeMismatch {
            tensor: tensor.into(),
            offset,
            needed: needed as u64,
            available: blob.len() as u64,
        });
    }
    Ok(blob[start..start + needed]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Load a snapshot from its manifest/blob pair.
pub fn load_snapshot(path: impl AsRef<Path>) -> Result<ModelSnapshot> {
    let (json_path, bin_path) = container_paths(path.as_ref());
    let manifest_text =
        std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&manifest_text).map_err(|e| Error::ManifestParse {
            path: json_path.clone(),
            reason: e.to_string(),
        })?;
    let blob = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for ml in &manifest.layers {
        let count = ml.out_channels * ml.in_channels * ml.kernel_h * ml.kernel_w;
        let weights = read_f32s(
            &blob,
            &format!("{}.weights", ml.name),
            ml.weights_offset,
            count,
        )?;
        let gammas = ml
            .gammas_offset
            .map(|off| read_f32s(&blob, &format!("{}.gammas", ml.name), off, ml.out_channels))
            .transpose()?;
        layers.push(ConvLayer::new(
            ml.name.clone(),
            ml.out_channels,
            ml.in_channels,
            ml.kernel_h,
            ml.kernel_w,
            ml.out_hw,
            ml.block,
            weights,
            gammas,
        )?);
    }
    ModelSnapshot::new(manifest.model, manifest.input_hw, manifest.classifier, layers)
}

/// Write a snapshot as `{stem}.json` + `{stem}.bin`.
pub fn save_snapshot(path: impl AsRef<Path>, snap: &ModelSnapshot) -> Result<()> {
    let (json_path, bin_path) = container_paths(path.as_ref());

    let mut blob = Vec::new();
    let mut layers = Vec::with_capacity(snap.layers().len());
    for layer in snap.layers() {
        let weights_offset = blob.len() as u64;
        for w in layer.weights() {
            blob.extend_from_slice(&w.to_le_bytes());
        }
        let gammas_offset = layer.gammas().map(|g| {
            let off = blob.len() as u64;
            for v in g {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            off
        });
        layers.push(ManifestLayer {
            name: layer.name().to_string(),
            out_channels: layer.out_channels(),
            in_channels: layer.in_channels(),
            kernel_h: layer.kernel_h(),
            kernel_w: layer.kernel_w(),
            out_hw: layer.out_hw(),
            block: layer.block(),
            weights_offset,
            gammas_offset,
        });
    }
    let manifest = Manifest {
        model: snap.model().to_string(),
        input_hw: snap.input_hw(),
        classifier: snap.classifier(),
        layers,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    std::fs::write(&bin_path, blob).map_err(|e| Error::io(&bin_path, e))?;
    Ok(())
}
