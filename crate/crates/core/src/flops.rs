//! Cost accounting. One multiply-accumulate counts as one FLOP; batch norm,
//! activations, and pooling are excluded, matching the usual convention for
//! reporting pruning results.

use serde::{Deserialize, Serialize};

use crate::arch::Classifier;
use crate::snapshot::{ConvLayer, ModelSnapshot};

/// FLOPs of one convolution: `out * in * kh * kw * out_hw^2`.
pub fn conv_flops(layer: &ConvLayer) -> u64 {
    let macs = layer.out_channels() as u64
        * layer.in_channels() as u64
        * layer.kernel_h() as u64
        * layer.kernel_w() as u64;
    macs * (layer.out_hw() as u64) * (layer.out_hw() as u64)
}

/// FLOPs of the classifier head: `in_features * out_features`.
pub fn classifier_flops(c: &Classifier) -> u64 {
    c.in_features as u64 * c.out_features as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer: String,
    pub flops: u64,
}

/// Per-layer and total cost of a snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub model: String,
    pub total: u64,
    pub per_layer: Vec<LayerFlops>,
    pub classifier: u64,
}

impl FlopsReport {
    /// Fractional reduction relative to a baseline total (1 - total/base).
    pub fn reduction_vs(&self, baseline_total: u64) -> f64 {
        if baseline_total == 0 {
            return 0.0;
        }
        1.0 - self.total as f64 / baseline_total as f64
    }
}

/// Sum convolution and classifier FLOPs over the whole snapshot.
pub fn model_flops(snap: &ModelSnapshot) -> FlopsReport {
    let per_layer: Vec<LayerFlops> = snap
        .layers()
        .iter()
        .map(|l| LayerFlops {
            layer: l.name().to_string(),
            flops: conv_flops(l),
        })
        .collect();
    let classifier = snap.classifier().map(|c| classifier_flops(&c)).unwrap_or(0);
    let total = per_layer.iter().map(|l| l.flops).sum::<u64>() + classifier;
    FlopsReport {
        model: snap.model().to_string(),
        total,
        per_layer,
        classifier,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::BlockRef;

    fn shape_only(out: usize, inn: usize, k: usize, hw: usize) -> ConvLayer {
        ConvLayer::new(
            "c",
            out,
            inn,
            k,
            k,
            hw,
            BlockRef::plain(),
            vec![0.0; out * inn * k * k],
            None,
        )
        .unwrap()
    }

    #[test]
    fn conv_flops_known_values() {
        // A 7x7 stem over 224x224 input with stride 2.
        assert_eq!(conv_flops(&shape_only(64, 3, 7, 112)), 118_013_952);
        // A 1x1 conv at 56x56.
        assert_eq!(conv_flops(&shape_only(64, 64, 1, 56)), 12_845_056);
    }

    #[test]
    fn classifier_flops_is_in_times_out() {
        let c = Classifier {
            in_features: 512,
            out_features: 1000,
        };
        assert_eq!(classifier_flops(&c), 512_000);
    }

    #[test]
    fn model_total_sums_layers_and_classifier() {
        let a = shape_only(4, 3, 1, 8);
        let b = ConvLayer::new(
            "d",
            2,
            4,
            1,
            1,
            8,
            BlockRef::plain(),
            vec![0.0; 8],
            None,
        )
        .unwrap();
        let snap = crate::snapshot::ModelSnapshot::new(
            "m",
            8,
            Some(Classifier {
                in_features: 2,
                out_features: 10,
            }),
            vec![a, b],
        )
        .unwrap();
        let report = model_flops(&snap);
        assert_eq!(report.per_layer[0].flops, 4 * 3 * 64);
        assert_eq!(report.per_layer[1].flops, 2 * 4 * 64);
        assert_eq!(report.classifier, 20);
        assert_eq!(report.total, 768 + 512 + 20);
        assert!((report.reduction_vs(2600) - 0.5).abs() < 1e-12);
    }
}
