//! The progressive train-prune loop.
//!
//! Pruning interleaves with training: after each epoch the schedule may fire
//! a pruning event, which pools the live batch-norm scales, derives one
//! sparsity per layer, and runs clustering plus coverage selection on each
//! layer's *live* view (already-pruned channels do not participate). Masks
//! stay logical during the run — weights are only physically dropped once at
//! the end — so channels revived by regrowth keep their trained weights.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coverage::{select_greedy, CoverageInstance, TieBreak};
use crate::error::Result;
use crate::flops::model_flops;
use crate::linkage::LinkageMethod;
use crate::mask::{apply_masks, PruneMask};
use crate::schedule::{
    gamma_pool, layer_sparsity, quantile_threshold, PruneState, RegrowthPolicy, Schedule,
};
use crate::snapshot::{ConvLayer, ModelSnapshot};
use crate::universe::{build_universe, keep_count};

/// One selection pass over a layer's live view.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    /// Original filter indices kept, ascending.
    pub kept: Vec<usize>,
    /// Original filter indices newly removed, ascending.
    pub pruned: Vec<usize>,
    pub merges: usize,
    pub cutoff: f64,
    pub universe: usize,
    pub covered: usize,
    pub coverage_rate: f64,
}

/// Cluster a layer's live kernels and pick `ceil((1 - s) * n)` filters by
/// greedy cluster coverage. Indices in the outcome are original filter
/// indices; `live_out`/`live_in` give the current masks of the layer and of
/// its input source.
pub fn channel_selection<R: Rng>(
    layer: &ConvLayer,
    live_out: &[bool],
    live_in: &[bool],
    sparsity: f64,
    linkage: LinkageMethod,
    tie: TieBreak,
    rng: &mut R,
) -> Result<SelectionOutcome> {
    let u = build_universe(layer, live_out, live_in, linkage, sparsity, None)?;
    let n_live = u.live_filters.len();
    let k = keep_count(sparsity, n_live)?;

    let norms: Vec<f64> = u
        .live_filters
        .iter()
        .map(|&o| layer.filter_l2(o, live_in))
        .collect();
    let inst = CoverageInstance::from_clusters(
        n_live,
        u.channels.iter().map(|c| &c.clusters),
    )?
    .with_norms(norms)?;
    let picked = select_greedy(&inst, k, tie, rng)?;

    let mut kept: Vec<usize> = picked.selected.iter().map(|&p| u.live_filters[p]).collect();
    kept.sort_unstable();
    let pruned: Vec<usize> = u
        .live_filters
        .iter()
        .copied()
        .filter(|o| kept.binary_search(o).is_err())
        .collect();

    Ok(SelectionOutcome {
        kept,
        pruned,
        merges: u.merges,
        cutoff: u.cutoff,
        universe: u.universe_size,
        covered: picked.covered,
        coverage_rate: picked.coverage_rate,
    })
}

/// Per-epoch hook standing in for actual model training.
pub trait Trainer {
    fn train_epoch(&mut self, snap: &mut ModelSnapshot, state: &PruneState, epoch: usize);
}

/// A trainer stub that jitters weights and drifts batch-norm scales with a
/// seeded generator, so schedules make progress without a real optimizer.
pub struct MockTrainer {
    rng: ChaCha8Rng,
    weight_jitter: f32,
    gamma_drift: f32,
}

impl MockTrainer {
    pub fn new(seed: u64) -> Self {
        MockTrainer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            weight_jitter: 0.01,
            gamma_drift: 0.05,
        }
    }
}

impl Trainer for MockTrainer {
    fn train_epoch(&mut self, snap: &mut ModelSnapshot, _state: &PruneState, _epoch: usize) {
        // Touch every tensor regardless of masks so the stream of random
        // draws (and thus the run) is a function of the seed alone.
        for i in 0..snap.layers().len() {
            let jitter = self.weight_jitter;
            let drift = self.gamma_drift;
            let layer = snap.layer_mut(i);
            for w in layer.weights_mut() {
                *w += jitter * self.rng.random_range(-1.0f32..1.0);
            }
            if let Some(gammas) = layer.gammas_mut() {
                for g in gammas {
                    *g = (*g * self.rng.random_range(1.0 - drift..1.0 + drift)).max(1e-4);
                }
            }
        }
    }
}

/// A trainer that leaves the snapshot untouched.
pub struct NoopTrainer;

impl Trainer for NoopTrainer {
    fn train_epoch(&mut self, _snap: &mut ModelSnapshot, _state: &PruneState, _epoch: usize) {}
}

/// Knobs of a pruning run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub epochs: usize,
    pub schedule: Schedule,
    pub linkage: LinkageMethod,
    pub tie: TieBreak,
    pub seed: u64,
}

/// What happened to one layer at one pruning event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEvent {
    pub layer: String,
    /// Live channels going into the event.
    pub live_before: usize,
    /// The layer's sparsity for this event.
    pub sparsity: f64,
    /// True when the whole layer fell at or below the threshold and was left
    /// untouched for this event.
    pub skipped: bool,
    pub merges: usize,
    pub cutoff: f64,
    pub universe: usize,
    pub covered: usize,
    pub coverage_rate: f64,
    /// Live channels after the event, ascending original indices.
    pub kept: Vec<usize>,
    /// Channels removed by this event.
    pub pruned: Vec<usize>,
    /// Channels revived by this event.
    pub regrown: Vec<usize>,
}

/// One pruning event: the pooled threshold and every prunable layer's record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub epoch: usize,
    pub threshold: Option<f64>,
    pub layers: Vec<LayerEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: String,
    pub out_channels: usize,
    pub kept: usize,
}

/// Machine-readable result of a full run. Serialization is deterministic:
/// field order is fixed and every collection is ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub model: String,
    pub linkage: String,
    pub tie: String,
    pub s_bar: f64,
    pub t_prune: usize,
    pub delta_t: usize,
    pub epochs: usize,
    pub seed: u64,
    pub events: Vec<EventRecord>,
    pub final_keep: PruneMask,
    /// Prunable layers only.
    pub layer_summary: Vec<LayerSummary>,
    pub flops_before: u64,
    pub flops_after: u64,
    pub flops_reduction: f64,
}

impl RunReport {
    pub const SCHEMA: u32 = 1;
}

/// Result of [`run_pipeline`]: the report plus the physically pruned model.
/// The input snapshot is left holding the trained dense weights.
pub struct PipelineOutcome {
    pub report: RunReport,
    pub pruned: ModelSnapshot,
}

/// Run the full loop with an observer called after every pruning event
/// (dense snapshot, current state, event record). Observers exist for
/// structural checks in tests and progress displays; returning an error
/// aborts the run.
pub fn run_pipeline_observed<T, F>(
    snap: &mut ModelSnapshot,
    trainer: &mut T,
    cfg: &PipelineConfig,
    policy: &dyn RegrowthPolicy,
    mut observer: F,
) -> Result<PipelineOutcome>
where
    T: Trainer,
    F: FnMut(&ModelSnapshot, &PruneState, &EventRecord) -> Result<()>,
{
    let flops_before = model_flops(snap).total;
    let mut state = PruneState::new(snap);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut events = Vec::new();

    for epoch in 1..=cfg.epochs {
        trainer.train_epoch(snap, &state, epoch);
        if !cfg.schedule.should_prune(epoch) {
            continue;
        }

        let pool = gamma_pool(snap, state.mask())?;
        let threshold = quantile_threshold(&pool, cfg.schedule.s_bar)?;

        let mut layer_events = Vec::new();
        for li in snap.arch().prunable_layers() {
            let layer = snap.layer(li);
            let name = layer.name().to_string();
            let live_out: Vec<bool> = state
                .live(&name)
                .expect("state tracks every layer")
                .to_vec();
            let live_before = live_out.iter().filter(|&&b| b).count();
            let live_in: Vec<bool> = match snap.arch().producer(li) {
                Some(p) => state
                    .live(snap.layer(p).name())
                    .expect("state tracks every layer")
                    .to_vec(),
                None => vec![true; layer.in_channels()],
            };
            let gammas = layer.gammas().expect("pool construction checked scales");
            let live_gammas: Vec<f64> = gammas
                .iter()
                .zip(&live_out)
                .filter(|(_, &live)| live)
                .map(|(&g, _)| g as f64)
                .collect();
            let s_l = layer_sparsity(&live_gammas, threshold);

            if s_l >= 1.0 {
                // Every live scale sits at or below the threshold: removing
                // them all would delete the layer, so it is left untouched
                // and one previously pruned channel comes back instead.
                let want = state.history(&name).len().min(1);
                let regrown = state.regrow(&name, want, policy)?;
                layer_events.push(LayerEvent {
                    layer: name.clone(),
                    live_before,
                    sparsity: s_l,
                    skipped: true,
                    merges: 0,
                    cutoff: 0.0,
                    universe: 0,
                    covered: 0,
                    coverage_rate: 0.0,
                    kept: state.mask().kept_indices(&name),
                    pruned: Vec::new(),
                    regrown,
                });
                continue;
            }

            if s_l == 0.0 {
                // Zero sparsity keeps all n filters; clustering would run a
                // zero-merge budget and selection would pick everything, so
                // the identity outcome is recorded directly.
                layer_events.push(LayerEvent {
                    layer: name.clone(),
                    live_before,
                    sparsity: 0.0,
                    skipped: false,
                    merges: 0,
                    cutoff: 0.0,
                    universe: 0,
                    covered: 0,
                    coverage_rate: 1.0,
                    kept: state.mask().kept_indices(&name),
                    pruned: Vec::new(),
                    regrown: Vec::new(),
                });
                continue;
            }

            let outcome =
                channel_selection(layer, &live_out, &live_in, s_l, cfg.linkage, cfg.tie, &mut rng)?;
            let pruned_gammas: Vec<f64> = outcome
                .pruned
                .iter()
                .map(|&c| gammas[c] as f64)
                .collect();
            state.prune(&name, &outcome.pruned, &pruned_gammas, epoch);
            layer_events.push(LayerEvent {
                layer: name,
                live_before,
                sparsity: s_l,
                skipped: false,
                merges: outcome.merges,
                cutoff: outcome.cutoff,
                universe: outcome.universe,
                covered: outcome.covered,
                coverage_rate: outcome.coverage_rate,
                kept: outcome.kept,
                pruned: outcome.pruned,
                regrown: Vec::new(),
            });
        }

        let record = EventRecord {
            epoch,
            threshold,
            layers: layer_events,
        };
        observer(snap, &state, &record)?;
        events.push(record);
    }

    let pruned = apply_masks(snap, state.mask())?;
    let flops_after = model_flops(&pruned).total;
    let layer_summary = snap
        .arch()
        .prunable_layers()
        .into_iter()
        .map(|li| {
            let layer = snap.layer(li);
            LayerSummary {
                layer: layer.name().to_string(),
                out_channels: layer.out_channels(),
                kept: state.mask().kept_count(layer.name()),
            }
        })
        .collect();

    let report = RunReport {
        schema: RunReport::SCHEMA,
        model: snap.model().to_string(),
        linkage: cfg.linkage.name().to_string(),
        tie: cfg.tie.name().to_string(),
        s_bar: cfg.schedule.s_bar,
        t_prune: cfg.schedule.t_prune,
        delta_t: cfg.schedule.delta_t,
        epochs: cfg.epochs,
        seed: cfg.seed,
        events,
        final_keep: state.mask().clone(),
        layer_summary,
        flops_before,
        flops_after,
        flops_reduction: 1.0 - flops_after as f64 / flops_before as f64,
    };
    Ok(PipelineOutcome { report, pruned })
}

/// [`run_pipeline_observed`] without an observer.
pub fn run_pipeline<T: Trainer>(
    snap: &mut ModelSnapshot,
    trainer: &mut T,
    cfg: &PipelineConfig,
    policy: &dyn RegrowthPolicy,
) -> Result<PipelineOutcome> {
    run_pipeline_observed(snap, trainer, cfg, policy, |_, _, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::toy_chain;
    use crate::schedule::GammaDescending;

    fn cfg(epochs: usize, t_prune: usize, delta_t: usize, s_bar: f64, seed: u64) -> PipelineConfig {
        PipelineConfig {
            epochs,
            schedule: Schedule::new(t_prune, delta_t, s_bar).unwrap(),
            linkage: LinkageMethod::Ward,
            tie: TieBreak::MaxL2,
            seed,
        }
    }

    #[test]
    fn channel_selection_keeps_count_and_partitions_live_set() {
        let snap = toy_chain("t", &[12, 10], 3, 3, 8, 4, 11).unwrap();
        let layer = snap.layer(0);
        let live_out = vec![true; 12];
        let live_in = vec![true; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = channel_selection(
            layer,
            &live_out,
            &live_in,
            0.5,
            LinkageMethod::Ward,
            TieBreak::MaxL2,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.kept.len(), 6);
        assert_eq!(out.pruned.len(), 6);
        let mut all: Vec<usize> = out.kept.iter().chain(&out.pruned).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        assert_eq!(out.merges, 6);
        assert!(out.covered <= out.universe);
        assert!(out.coverage_rate > 0.0);
    }

    #[test]
    fn channel_selection_respects_existing_mask() {
        let snap = toy_chain("t", &[12, 10], 3, 3, 8, 4, 11).unwrap();
        let layer = snap.layer(0);
        let mut live_out = vec![true; 12];
        live_out[3] = false;
        live_out[7] = false;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = channel_selection(
            layer,
            &live_out,
            &[true; 3],
            0.5,
            LinkageMethod::Ward,
            TieBreak::MaxL2,
            &mut rng,
        )
        .unwrap();
        // 10 live filters -> keep 5, prune 5; dead ones never reappear.
        assert_eq!(out.kept.len(), 5);
        assert!(!out.kept.contains(&3) && !out.kept.contains(&7));
        assert!(!out.pruned.contains(&3) && !out.pruned.contains(&7));
    }

    #[test]
    fn pipeline_event_calendar_and_monotone_masks() {
        let mut snap = toy_chain("t", &[16, 12, 8], 3, 3, 8, 4, 5).unwrap();
        let config = cfg(10, 6, 2, 0.4, 9);
        let mut trainer = MockTrainer::new(3);
        let outcome = run_pipeline_observed(
            &mut snap,
            &mut trainer,
            &config,
            &GammaDescending,
            |_, state, record| {
                for le in &record.layers {
                    // Non-skipped layers keep exactly ceil((1-s)*live).
                    if !le.skipped {
                        let expect = keep_count(le.sparsity, le.live_before).unwrap();
                        assert_eq!(le.kept.len(), expect, "layer {}", le.layer);
                    }
                    assert_eq!(state.live_count(&le.layer), le.kept.len());
                }
                Ok(())
            },
        )
        .unwrap();
        let report = outcome.report;
        let epochs: Vec<usize> = report.events.iter().map(|e| e.epoch).collect();
        assert_eq!(epochs, vec![2, 4, 6]);
        assert_eq!(report.schema, 1);
        assert_eq!(report.model, "t");
        assert!(report.flops_after < report.flops_before);
        assert!(report.flops_reduction > 0.0);

        // Masks shrink monotonically over events (no regrowth fired here or
        // it is reflected in `regrown`).
        for w in report.events.windows(2) {
            for (a, b) in w[0].layers.iter().zip(&w[1].layers) {
                assert_eq!(a.layer, b.layer);
                if b.regrown.is_empty() {
                    assert!(b.kept.iter().all(|c| a.kept.contains(c)));
                }
            }
        }

        // The pruned snapshot's shapes match the final mask.
        for ls in &report.layer_summary {
            let idx = outcome.pruned.layer_index(&ls.layer).unwrap();
            assert_eq!(outcome.pruned.layer(idx).out_channels(), ls.kept);
        }
    }

    #[test]
    fn pipeline_is_seed_deterministic() {
        let config = cfg(8, 6, 2, 0.5, 21);
        let run = |seed: u64| {
            let mut snap = toy_chain("t", &[10, 8], 3, 3, 8, 4, seed).unwrap();
            let mut trainer = MockTrainer::new(17);
            run_pipeline(&mut snap, &mut trainer, &config, &GammaDescending)
                .unwrap()
                .report
        };
        let a = run(4);
        let b = run(4);
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn zero_target_sparsity_prunes_nothing() {
        let mut snap = toy_chain("t", &[8, 6], 3, 3, 8, 4, 2).unwrap();
        let config = cfg(4, 4, 2, 0.0, 1);
        let mut trainer = MockTrainer::new(1);
        let outcome =
            run_pipeline(&mut snap, &mut trainer, &config, &GammaDescending).unwrap();
        assert_eq!(outcome.report.events.len(), 2);
        for event in &outcome.report.events {
            assert_eq!(event.threshold, None);
            for le in &event.layers {
                assert!(!le.skipped);
                assert!(le.pruned.is_empty());
                assert_eq!(le.kept.len(), le.live_before);
            }
        }
        assert_eq!(outcome.report.flops_after, outcome.report.flops_before);
    }

    struct LayerDecay {
        layer: &'static str,
        from_epoch: usize,
    }

    impl Trainer for LayerDecay {
        fn train_epoch(&mut self, snap: &mut ModelSnapshot, _state: &PruneState, epoch: usize) {
            if epoch < self.from_epoch {
                return;
            }
            let idx = snap.layer_index(self.layer).unwrap();
            if let Some(gammas) = snap.layer_mut(idx).gammas_mut() {
                for g in gammas {
                    *g *= 0.01;
                }
            }
        }
    }

    #[test]
    fn saturated_layer_is_skipped_and_regrows() {
        // c0's scales straddle the pooled median at the first event, so it
        // gets partially pruned; decay then pushes its survivors below every
        // c1 scale, so the second event skips c0 and revives one channel.
        let mut snap = toy_chain("t", &[4, 4], 3, 1, 8, 4, 0).unwrap();
        {
            let g0 = snap.layer_mut(0).gammas_mut().unwrap();
            g0.copy_from_slice(&[0.1, 0.1, 0.9, 0.9]);
            let g1 = snap.layer_mut(1).gammas_mut().unwrap();
            g1.copy_from_slice(&[0.5, 0.5, 0.5, 0.5]);
        }
        let config = cfg(4, 4, 2, 0.5, 1);
        let mut trainer = LayerDecay {
            layer: "c0",
            from_epoch: 3,
        };
        let outcome =
            run_pipeline(&mut snap, &mut trainer, &config, &GammaDescending).unwrap();
        let events = &outcome.report.events;
        assert_eq!(events.len(), 2);

        let first = &events[0].layers[0];
        assert_eq!(first.layer, "c0");
        assert!(!first.skipped);
        assert_eq!(first.pruned.len(), 2);

        let second = &events[1].layers[0];
        assert!(second.skipped);
        assert_eq!(second.sparsity, 1.0);
        assert!(second.pruned.is_empty());
        assert_eq!(second.regrown.len(), 1);
        assert_eq!(second.kept.len(), 3);
    }
}
