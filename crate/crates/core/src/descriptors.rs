//! Built-in architecture descriptors.
//!
//! Each builder produces a full [`ModelSnapshot`] with seeded synthetic
//! weights and batch-norm scales, so every subcommand and test can run
//! without external files. Shapes and output resolutions follow the standard
//! residual-network definitions (stride folded into `out_hw`; pooling layers
//! carry no weights and are not materialized).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{BlockKind, BlockRef, Classifier};
use crate::error::{Error, Result};
use crate::snapshot::{ConvLayer, ModelSnapshot};

/// Names accepted by [`build`].
pub fn names() -> &'static [&'static str] {
    &[
        "resnet18", "resnet34", "resnet50", "resnet56", "toy8", "toyres", "toymix",
    ]
}

/// Build a named descriptor with weights drawn from `seed`.
pub fn build(name: &str, seed: u64) -> Result<ModelSnapshot> {
    match name {
        "resnet18" => resnet_imagenet(
            "resnet18",
            &[(2, 64), (2, 128), (2, 256), (2, 512)],
            false,
            seed,
        ),
        "resnet34" => resnet_imagenet(
            "resnet34",
            &[(3, 64), (4, 128), (6, 256), (3, 512)],
            false,
            seed,
        ),
        "resnet50" => resnet_imagenet(
            "resnet50",
            &[(3, 64), (4, 128), (6, 256), (3, 512)],
            true,
            seed,
        ),
        "resnet56" => resnet56(seed),
        "toy8" => toy_chain("toy8", &[8, 8, 8], 3, 3, 8, 4, seed),
        "toyres" => toy_residual(seed),
        "toymix" => toy_mixed(seed),
        other => Err(Error::UnknownDescriptor(other.into())),
    }
}

struct Synth {
    rng: ChaCha8Rng,
}

impl Synth {
    fn new(seed: u64) -> Self {
        Synth {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn conv(
        &mut self,
        name: &str,
        out: usize,
        inn: usize,
        k: usize,
        hw: usize,
        block: BlockRef,
    ) -> Result<ConvLayer> {
        let weights = (0..out * inn * k * k)
            .map(|_| self.rng.random_range(-0.5f32..0.5))
            .collect();
        let gammas = (0..out)
            .map(|_| self.rng.random_range(0.05f32..1.2))
            .collect();
        ConvLayer::new(name, out, inn, k, k, hw, block, weights, Some(gammas))
    }
}

/// ImageNet-style residual net: 7x7 stem at 112, four stages at
/// 56/28/14/7, and a 1000-way classifier. `layout` gives (blocks, width) per
/// stage; `bottleneck` switches between two-conv and three-conv blocks
/// (expansion 4).
fn resnet_imagenet(
    name: &str,
    layout: &[(usize, usize)],
    bottleneck: bool,
    seed: u64,
) -> Result<ModelSnapshot> {
    let mut s = Synth::new(seed);
    let mut layers = vec![s.conv("conv1", 64, 3, 7, 112, BlockRef::plain())?];
    let mut in_ch = 64;
    let hws = [56, 28, 14, 7];
    for (si, &(blocks, width)) in layout.iter().enumerate() {
        let hw = hws[si];
        let hw_in = if si == 0 { 56 } else { hws[si - 1] };
        for b in 0..blocks {
            let prefix = format!("layer{}.{b}", si + 1);
            let out = if bottleneck { width * 4 } else { width };
            if bottleneck {
                // The stride sits on the 3x3, so a strided block's 1x1
                // reduction still runs at the input resolution.
                let pos0_hw = if b == 0 { hw_in } else { hw };
                layers.push(s.conv(
                    &format!("{prefix}.conv1"),
                    width,
                    in_ch,
                    1,
                    pos0_hw,
                    BlockRef::new(BlockKind::Bottleneck, 0),
                )?);
                layers.push(s.conv(
                    &format!("{prefix}.conv2"),
                    width,
                    width,
                    3,
                    hw,
                    BlockRef::new(BlockKind::Bottleneck, 1),
                )?);
                layers.push(s.conv(
                    &format!("{prefix}.conv3"),
                    out,
                    width,
                    1,
                    hw,
                    BlockRef::new(BlockKind::Bottleneck, 2),
                )?);
            } else {
                layers.push(s.conv(
                    &format!("{prefix}.conv1"),
                    width,
                    in_ch,
                    3,
                    hw,
                    BlockRef::new(BlockKind::Basic, 0),
                )?);
                layers.push(s.conv(
                    &format!("{prefix}.conv2"),
                    width,
                    width,
                    3,
                    hw,
                    BlockRef::new(BlockKind::Basic, 1),
                )?);
            }
            if b == 0 && (in_ch != out || hw != hw_in) {
                layers.push(s.conv(
                    &format!("{prefix}.downsample"),
                    out,
                    in_ch,
                    1,
                    hw,
                    BlockRef::new(BlockKind::Downsample, 0),
                )?);
            }
            in_ch = out;
        }
    }
    ModelSnapshot::new(
        name,
        224,
        Some(Classifier {
            in_features: in_ch,
            out_features: 1000,
        }),
        layers,
    )
}

/// CIFAR-style 56-layer residual net: 3x3 stem at 32, three stages of nine
/// basic blocks at widths 16/32/64 and resolutions 32/16/8, 10-way head.
fn resnet56(seed: u64) -> Result<ModelSnapshot> {
    let mut s = Synth::new(seed);
    let mut layers = vec![s.conv("conv1", 16, 3, 3, 32, BlockRef::plain())?];
    let mut in_ch = 16;
    for (si, &(width, hw)) in [(16usize, 32usize), (32, 16), (64, 8)].iter().enumerate() {
        for b in 0..9 {
            let prefix = format!("layer{}.{b}", si + 1);
            layers.push(s.conv(
                &format!("{prefix}.conv1"),
                width,
                in_ch,
                3,
                hw,
                BlockRef::new(BlockKind::Basic, 0),
            )?);
            layers.push(s.conv(
                &format!("{prefix}.conv2"),
                width,
                width,
                3,
                hw,
                BlockRef::new(BlockKind::Basic, 1),
            )?);
            if b == 0 && in_ch != width {
                layers.push(s.conv(
                    &format!("{prefix}.downsample"),
                    width,
                    in_ch,
                    1,
                    hw,
                    BlockRef::new(BlockKind::Downsample, 0),
                )?);
            }
            in_ch = width;
        }
    }
    ModelSnapshot::new(
        "resnet56",
        32,
        Some(Classifier {
            in_features: 64,
            out_features: 10,
        }),
        layers,
    )
}

/// A chain of plain convolutions `c0, c1, ...` with the given widths; every
/// layer is prunable, the classifier follows the last one.
pub fn toy_chain(
    name: &str,
    widths: &[usize],
    in_channels: usize,
    k: usize,
    hw: usize,
    classes: usize,
    seed: u64,
) -> Result<ModelSnapshot> {
    if widths.is_empty() {
        return Err(Error::InvalidParameter("toy chain needs at least one layer".into()));
    }
    let mut s = Synth::new(seed);
    let mut layers = Vec::with_capacity(widths.len());
    let mut in_ch = in_channels;
    for (i, &w) in widths.iter().enumerate() {
        layers.push(s.conv(&format!("c{i}"), w, in_ch, k, hw, BlockRef::plain())?);
        in_ch = w;
    }
    ModelSnapshot::new(
        name,
        hw,
        Some(Classifier {
            in_features: in_ch,
            out_features: classes,
        }),
        layers,
    )
}

/// A minimal residual model: plain stem plus two basic blocks of width 8.
/// Only the blocks' first convolutions are prunable.
pub fn toy_residual(seed: u64) -> Result<ModelSnapshot> {
    let mut s = Synth::new(seed);
    let layers = vec![
        s.conv("conv1", 8, 3, 3, 8, BlockRef::plain())?,
        s.conv("layer1.0.conv1", 8, 8, 3, 8, BlockRef::new(BlockKind::Basic, 0))?,
        s.conv("layer1.0.conv2", 8, 8, 3, 8, BlockRef::new(BlockKind::Basic, 1))?,
        s.conv("layer2.0.conv1", 8, 8, 3, 8, BlockRef::new(BlockKind::Basic, 0))?,
        s.conv("layer2.0.conv2", 8, 8, 3, 8, BlockRef::new(BlockKind::Basic, 1))?,
    ];
    ModelSnapshot::new(
        "toyres",
        8,
        Some(Classifier {
            in_features: 8,
            out_features: 4,
        }),
        layers,
    )
}

/// A model mixing every block kind: plain stem, one basic block, then two
/// bottleneck blocks (the first with a projection shortcut).
pub fn toy_mixed(seed: u64) -> Result<ModelSnapshot> {
    let mut s = Synth::new(seed);
    let layers = vec![
        s.conv("conv1", 8, 3, 3, 8, BlockRef::plain())?,
        s.conv("layer1.0.conv1", 8, 8, 3, 8, BlockRef::new(BlockKind::Basic, 0))?,
        s.conv("layer1.0.conv2", 8, 8, 3, 8, BlockRef::new(BlockKind::Basic, 1))?,
        s.conv("layer2.0.conv1", 4, 8, 1, 8, BlockRef::new(BlockKind::Bottleneck, 0))?,
        s.conv("layer2.0.conv2", 4, 4, 3, 8, BlockRef::new(BlockKind::Bottleneck, 1))?,
        s.conv("layer2.0.conv3", 16, 4, 1, 8, BlockRef::new(BlockKind::Bottleneck, 2))?,
        s.conv("layer2.0.downsample", 16, 8, 1, 8, BlockRef::new(BlockKind::Downsample, 0))?,
        s.conv("layer3.0.conv1", 4, 16, 1, 8, BlockRef::new(BlockKind::Bottleneck, 0))?,
        s.conv("layer3.0.conv2", 4, 4, 3, 8, BlockRef::new(BlockKind::Bottleneck, 1))?,
        s.conv("layer3.0.conv3", 16, 4, 1, 8, BlockRef::new(BlockKind::Bottleneck, 2))?,
    ];
    ModelSnapshot::new(
        "toymix",
        8,
        Some(Classifier {
            in_features: 16,
            out_features: 4,
        }),
        layers,
    )
}
