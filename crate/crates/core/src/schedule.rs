//! When to prune and how hard.
//!
//! Layer sparsities are not fixed up front: at every pruning event the live
//! batch-norm scales of all prunable layers are pooled, the global target
//! sparsity picks a scale threshold by empirical quantile, and each layer's
//! sparsity is the fraction of its live scales at or below that threshold.
//! Layers whose scales all fall below the threshold are skipped for that
//! event and may regrow previously pruned channels instead.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mask::PruneMask;
use crate::snapshot::ModelSnapshot;
use crate::universe::ceil_guarded;

/// The pruning-event calendar: prune every `delta_t` epochs while within the
/// first `t_prune` epochs, aiming at global sparsity `s_bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub t_prune: usize,
    pub delta_t: usize,
    pub s_bar: f64,
}

impl Schedule {
    pub fn new(t_prune: usize, delta_t: usize, s_bar: f64) -> Result<Self> {
        if delta_t == 0 {
            return Err(Error::InvalidParameter(
                "pruning interval must be at least 1 epoch".into(),
            ));
        }
        if !(0.0..=1.0).contains(&s_bar) || !s_bar.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "target sparsity must lie in [0, 1], got {s_bar}"
            )));
        }
        Ok(Schedule {
            t_prune,
            delta_t,
            s_bar,
        })
    }

    /// Whether a pruning event fires after epoch `t` (1-based).
    pub fn should_prune(&self, t: usize) -> bool {
        t >= 1 && t <= self.t_prune && t.is_multiple_of(self.delta_t)
    }

    /// Epochs in `1..=epochs` at which events fire.
    pub fn events(&self, epochs: usize) -> Vec<usize> {
        (1..=epochs).filter(|&t| self.should_prune(t)).collect()
    }
}

/// Scale threshold by empirical quantile: the smallest pooled value whose
/// cumulative frequency reaches `s_bar`. `None` when `s_bar` is zero (no
/// pruning anywhere).
pub fn quantile_threshold(gammas: &[f64], s_bar: f64) -> Result<Option<f64>> {
    if !(0.0..=1.0).contains(&s_bar) || !s_bar.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "target sparsity must lie in [0, 1], got {s_bar}"
        )));
    }
    if s_bar == 0.0 {
        return Ok(None);
    }
    if gammas.is_empty() {
        return Err(Error::EmptyGammaPool);
    }
    if gammas.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidParameter(
            "scale pool contains a non-finite value".into(),
        ));
    }
    let mut sorted = gammas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ceil_guarded(s_bar * sorted.len() as f64).max(1);
    Ok(Some(sorted[(rank - 1).min(sorted.len() - 1)]))
}

/// A layer's sparsity for this event: the fraction of its live scales at or
/// below the pooled threshold.
pub fn layer_sparsity(live_gammas: &[f64], threshold: Option<f64>) -> f64 {
    let Some(t) = threshold else { return 0.0 };
    if live_gammas.is_empty() {
        return 0.0;
    }
    let hit = live_gammas.iter().filter(|&&g| g <= t).count();
    hit as f64 / live_gammas.len() as f64
}

/// Live batch-norm scales of all prunable layers, pooled in layer order.
/// Every prunable layer must carry scales.
pub fn gamma_pool(snap: &ModelSnapshot, mask: &PruneMask) -> Result<Vec<f64>> {
    let mut pool = Vec::new();
    for i in snap.arch().prunable_layers() {
        let layer = snap.layer(i);
        let gammas = layer.gammas().ok_or_else(|| Error::LayerConstraint {
            layer: layer.name().to_string(),
            reason: "prunable layer has no batch-norm scales".into(),
        })?;
        match mask.get(layer.name()) {
            Some(keep) => pool.extend(
                gammas
                    .iter()
                    .zip(keep)
                    .filter(|(_, &k)| k)
                    .map(|(&g, _)| g as f64),
            ),
            None => pool.extend(gammas.iter().map(|&g| g as f64)),
        }
    }
    Ok(pool)
}

/// One channel removed during the run, with the scale it had at that moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrunedChannel {
    pub channel: usize,
    pub gamma: f64,
    pub epoch: usize,
}

/// Chooses which previously pruned channels to revive.
pub trait RegrowthPolicy {
    /// Pick up to `want` channels from `history` (the layer's pruned
    /// channels, oldest first). Returned channels must come from `history`.
    fn pick(&self, layer: &str, history: &[PrunedChannel], want: usize) -> Vec<usize>;
}

/// Never regrows anything.
pub struct NoRegrowth;

impl RegrowthPolicy for NoRegrowth {
    fn pick(&self, _layer: &str, _history: &[PrunedChannel], _want: usize) -> Vec<usize> {
        Vec::new()
    }
}

/// Revive the channels that had the largest scales when pruned; scale ties
/// favor the most recently pruned.
pub struct GammaDescending;

impl RegrowthPolicy for GammaDescending {
    fn pick(&self, _layer: &str, history: &[PrunedChannel], want: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..history.len()).collect();
        order.sort_by(|&a, &b| {
            history[b]
                .gamma
                .total_cmp(&history[a].gamma)
                .then(b.cmp(&a))
        });
        order
            .into_iter()
            .take(want)
            .map(|i| history[i].channel)
            .collect()
    }
}

/// Mutable pruning state of a run: the live mask plus, per layer, the
/// history of removed channels available for regrowth.
#[derive(Debug, Clone)]
pub struct PruneState {
    mask: PruneMask,
    pruned: BTreeMap<String, Vec<PrunedChannel>>,
}

impl PruneState {
    pub fn new(snap: &ModelSnapshot) -> Self {
        PruneState {
            mask: PruneMask::all_true(snap),
            pruned: BTreeMap::new(),
        }
    }

    pub fn mask(&self) -> &PruneMask {
        &self.mask
    }

    pub fn live(&self, layer: &str) -> Option<&[bool]> {
        self.mask.get(layer)
    }

    pub fn live_count(&self, layer: &str) -> usize {
        self.mask.kept_count(layer)
    }

    /// Channels pruned from `layer` and not yet regrown, oldest first.
    pub fn history(&self, layer: &str) -> &[PrunedChannel] {
        self.pruned.get(layer).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Mark `channels` of `layer` as pruned at `epoch`, recording the scale
    /// each one carried.
    pub fn prune(&mut self, layer: &str, channels: &[usize], gammas: &[f64], epoch: usize) {
        let history = self.pruned.entry(layer.to_string()).or_default();
        for (&c, &g) in channels.iter().zip(gammas) {
            self.mask.set_channel(layer, c, false);
            history.push(PrunedChannel {
                channel: c,
                gamma: g,
                epoch,
            });
        }
    }

    /// Revive `want` channels of `layer` chosen by `policy`. Returns the
    /// revived channels (ascending). Asking for more than the history holds
    /// is an error; `want` of zero is a no-op.
    pub fn regrow(
        &mut self,
        layer: &str,
        want: usize,
        policy: &dyn RegrowthPolicy,
    ) -> Result<Vec<usize>> {
        if want == 0 {
            return Ok(Vec::new());
        }
        let available = self.history(layer).len();
        if want > available {
            return Err(Error::RegrowTooMany {
                layer: layer.to_string(),
                requested: want,
                available,
            });
        }
        let mut chosen = policy.pick(layer, self.history(layer), want);
        chosen.sort_unstable();
        chosen.dedup();
        let history = self.pruned.entry(layer.to_string()).or_default();
        for &c in &chosen {
            if !history.iter().any(|p| p.channel == c) {
                return Err(Error::InvalidParameter(format!(
                    "regrowth policy picked channel {c} outside `{layer}`'s pruned history"
                )));
            }
            history.retain(|p| p.channel != c);
            self.mask.set_channel(layer, c, true);
        }
        Ok(chosen)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::toy_chain;

    #[test]
    fn quantile_threshold_worked_examples() {
        let pool = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(quantile_threshold(&pool, 0.5).unwrap(), Some(0.2));
        assert_eq!(quantile_threshold(&pool, 0.75).unwrap(), Some(0.3));
        assert_eq!(quantile_threshold(&pool, 0.9).unwrap(), Some(0.4));
        assert_eq!(quantile_threshold(&pool, 1.0).unwrap(), Some(0.4));
        assert_eq!(quantile_threshold(&pool, 1e-9).unwrap(), Some(0.1));
        assert_eq!(quantile_threshold(&pool, 0.0).unwrap(), None);
    }

    #[test]
    fn quantile_threshold_is_order_insensitive_and_validated() {
        let shuffled = [0.4, 0.1, 0.3, 0.2];
        assert_eq!(quantile_threshold(&shuffled, 0.5).unwrap(), Some(0.2));
        assert!(matches!(
            quantile_threshold(&[], 0.5),
            Err(Error::EmptyGammaPool)
        ));
        assert!(quantile_threshold(&[0.1], 1.5).is_err());
        assert!(quantile_threshold(&[f64::NAN], 0.5).is_err());
    }

    #[test]
    fn layer_sparsity_counts_at_or_below() {
        let g = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(layer_sparsity(&g, Some(0.2)), 0.5);
        assert_eq!(layer_sparsity(&g, Some(0.05)), 0.0);
        assert_eq!(layer_sparsity(&g, Some(0.4)), 1.0);
        assert_eq!(layer_sparsity(&g, None), 0.0);
        assert_eq!(layer_sparsity(&[], Some(0.2)), 0.0);
    }

    #[test]
    fn schedule_fires_on_multiples_within_window() {
        let s = Schedule::new(6, 2, 0.5).unwrap();
        assert_eq!(s.events(10), vec![2, 4, 6]);
        assert!(!s.should_prune(0));
        assert!(!s.should_prune(3));
        assert!(!s.should_prune(8));

        let every = Schedule::new(3, 1, 0.5).unwrap();
        assert_eq!(every.events(5), vec![1, 2, 3]);

        assert!(Schedule::new(6, 0, 0.5).is_err());
        assert!(Schedule::new(6, 2, -0.1).is_err());
    }

    #[test]
    fn gamma_pool_skips_dead_channels() {
        let snap = toy_chain("t", &[4, 4], 3, 1, 8, 4, 3).unwrap();
        let mut state = PruneState::new(&snap);
        let full = gamma_pool(&snap, state.mask()).unwrap();
        assert_eq!(full.len(), 8);

        state.prune("c0", &[1, 2], &[0.5, 0.6], 1);
        let pool = gamma_pool(&snap, state.mask()).unwrap();
        assert_eq!(pool.len(), 6);
        let g = snap.layer(0).gammas().unwrap();
        assert!((pool[0] - g[0] as f64).abs() < 1e-12);
        assert!((pool[1] - g[3] as f64).abs() < 1e-12);
    }

    #[test]
    fn prune_then_regrow_round_trip() {
        let snap = toy_chain("t", &[4], 3, 1, 8, 4, 3).unwrap();
        let mut state = PruneState::new(&snap);
        state.prune("c0", &[0, 3, 2], &[0.9, 0.1, 0.5], 2);
        assert_eq!(state.live_count("c0"), 1);
        assert_eq!(state.history("c0").len(), 3);

        // Highest scale at prune time comes back first.
        let revived = state.regrow("c0", 1, &GammaDescending).unwrap();
        assert_eq!(revived, vec![0]);
        assert_eq!(state.live("c0").unwrap(), &[true, true, false, false]);
        assert_eq!(state.history("c0").len(), 2);

        let revived = state.regrow("c0", 2, &GammaDescending).unwrap();
        assert_eq!(revived, vec![2, 3]);
        assert_eq!(state.live_count("c0"), 4);

        assert!(matches!(
            state.regrow("c0", 1, &GammaDescending),
            Err(Error::RegrowTooMany { available: 0, .. })
        ));
        assert!(state.regrow("c0", 0, &GammaDescending).unwrap().is_empty());
    }

    #[test]
    fn no_regrowth_policy_picks_nothing() {
        let snap = toy_chain("t", &[4], 3, 1, 8, 4, 3).unwrap();
        let mut state = PruneState::new(&snap);
        state.prune("c0", &[1], &[0.4], 1);
        // The policy returns an empty pick even though history is available.
        let revived = state.regrow("c0", 1, &NoRegrowth);
        assert!(revived.unwrap().is_empty());
    }

    #[test]
    fn missing_gammas_on_prunable_layer_is_an_error() {
        use crate::arch::BlockRef;
        use crate::snapshot::{ConvLayer, ModelSnapshot};
        let layer =
            ConvLayer::new("c0", 2, 1, 1, 1, 4, BlockRef::plain(), vec![0.0, 1.0], None).unwrap();
        let snap = ModelSnapshot::new("m", 4, None, vec![layer]).unwrap();
        let state = PruneState::new(&snap);
        assert!(matches!(
            gamma_pool(&snap, state.mask()),
            Err(Error::LayerConstraint { .. })
        ));
    }
}
