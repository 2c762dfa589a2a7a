//! Block structure of a convolutional model and the pruning rules it implies.
//!
//! The container stores convolutions as a flat, execution-ordered list; each
//! layer carries a `(kind, pos)` tag describing its role inside a block.
//! [`ArchGraph::derive`] reassembles the blocks from those tags and computes
//! two per-layer facts the rest of the engine relies on:
//!
//! - **prunable**: whether the layer's output channels may be removed. Only
//!   convolutions whose outputs stay inside a block (or feed another plain
//!   conv / the classifier) are safe to prune; anything that feeds a residual
//!   sum must keep its full width.
//! - **producer**: the layer whose output mask determines this layer's live
//!   input channels. Cross-block inputs have no producer entry because their
//!   sources are never pruned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of a convolution within the model's block structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    /// Stand-alone convolution (stem convs, plain feed-forward chains).
    Plain,
    /// Two 3x3 convolutions joined by a residual sum.
    Basic,
    /// 1x1 reduce, 3x3, 1x1 expand joined by a residual sum.
    Bottleneck,
    /// Projection shortcut on a residual block's identity path.
    Downsample,
}

impl BlockKind {
    /// Number of convolutions a block of this kind contains.
    pub fn member_count(&self) -> usize {
        match self {
            BlockKind::Plain | BlockKind::Downsample => 1,
            BlockKind::Basic => 2,
            BlockKind::Bottleneck => 3,
        }
    }
}

/// Per-layer block tag stored in the container manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRef {
    pub kind: BlockKind,
    pub pos: u8,
}

impl BlockRef {
    pub fn new(kind: BlockKind, pos: u8) -> Self {
        BlockRef { kind, pos }
    }

    pub fn plain() -> Self {
        BlockRef::new(BlockKind::Plain, 0)
    }
}

/// A reassembled block: contiguous layer indices sharing one `kind`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub members: Vec<usize>,
}

/// Classifier head shape; it carries no weights in the container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classifier {
    pub in_features: usize,
    pub out_features: usize,
}

/// Derived structural view over a snapshot's layer list.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchGraph {
    input_hw: usize,
    classifier: Option<Classifier>,
    blocks: Vec<Block>,
    producer: Vec<Option<usize>>,
    prunable: Vec<bool>,
}

impl ArchGraph {
    /// Rebuild blocks from the ordered `(kind, pos)` tags and derive the
    /// prunability and producer tables.
    pub fn derive(
        refs: &[BlockRef],
        input_hw: usize,
        classifier: Option<Classifier>,
    ) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::InvalidArch("model has no convolution layers".into()));
        }
        if input_hw == 0 {
            return Err(Error::InvalidArch("input resolution must be positive".into()));
        }

        let mut blocks = Vec::new();
        let mut i = 0;
        while i < refs.len() {
            let head = refs[i];
            if head.pos != 0 {
                return Err(Error::InvalidArch(format!(
                    "layer {i} starts mid-block ({:?} pos {})",
                    head.kind, head.pos
                )));
            }
            let count = head.kind.member_count();
            for p in 1..count {
                match refs.get(i + p) {
                    Some(r) if r.kind == head.kind && r.pos as usize == p => {}
                    _ => {
                        return Err(Error::InvalidArch(format!(
                            "{:?} block at layer {i} is truncated: expected pos {p} at layer {}",
                            head.kind,
                            i + p
                        )))
                    }
                }
            }
            if head.kind == BlockKind::Downsample {
                let follows_residual = blocks.last().is_some_and(|b: &Block| {
                    matches!(b.kind, BlockKind::Basic | BlockKind::Bottleneck)
                });
                if !follows_residual {
                    return Err(Error::InvalidArch(format!(
                        "downsample at layer {i} does not follow a residual block"
                    )));
                }
            }
            blocks.push(Block {
                kind: head.kind,
                members: (i..i + count).collect(),
            });
            i += count;
        }

        let n = refs.len();
        let mut prunable = vec![false; n];
        let mut producer = vec![None; n];
        for (bi, block) in blocks.iter().enumerate() {
            match block.kind {
                BlockKind::Basic | BlockKind::Bottleneck => {
                    // Every member but the last feeds only the next conv in
                    // the block; the last one feeds the residual sum.
                    let last = block.members.len() - 1;
                    for (p, &layer) in block.members.iter().enumerate() {
                        prunable[layer] = p < last;
                        if p > 0 {
                            producer[layer] = Some(block.members[p - 1]);
                        }
                    }
                }
                BlockKind::Downsample => {}
                BlockKind::Plain => {
                    let layer = block.members[0];
                    let next_plain = refs
                        .get(layer + 1)
                        .map(|r| r.kind == BlockKind::Plain)
                        .unwrap_or(true);
                    prunable[layer] = next_plain;
                    if bi > 0 && blocks[bi - 1].kind == BlockKind::Plain {
                        producer[layer] = Some(blocks[bi - 1].members[0]);
                    }
                }
            }
        }

        Ok(ArchGraph {
            input_hw,
            classifier,
            blocks,
            producer,
            prunable,
        })
    }

    pub fn input_hw(&self) -> usize {
        self.input_hw
    }

    pub fn classifier(&self) -> Option<Classifier> {
        self.classifier
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn n_layers(&self) -> usize {
        self.prunable.len()
    }

    /// Whether output channels of `layer` may be pruned.
    pub fn is_prunable(&self, layer: usize) -> bool {
        self.prunable[layer]
    }

    /// The layer whose output mask drives `layer`'s live input channels, if
    /// that source can shrink at all.
    pub fn producer(&self, layer: usize) -> Option<usize> {
        self.producer[layer]
    }

    /// Indices of all prunable layers, in execution order.
    pub fn prunable_layers(&self) -> Vec<usize> {
        (0..self.prunable.len())
            .filter(|&i| self.prunable[i])
            .collect()
    }
}
