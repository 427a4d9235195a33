//! Unsupervised training loop: uniform segment sampling over the pooled
//! corpus, Adam on all parameters including the μ2 table.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{read_features, Manifest};
use crate::dsp::FeatureKind;
use crate::numerics::nn::Session;
use crate::numerics::optim::{adam_step, AdamState};
use crate::numerics::tensor::Tensor;

use super::bound::{batch_bound, BoundItem, BoundTerms};
use super::{FhvaeError, FhvaeModel};

/// Segment view over a pooled corpus: cached per-sequence features plus a
/// flat (sequence, start) index. Labels are never read.
pub struct SegmentSet {
    pub segment_len: usize,
    pub input_dim: usize,
    features: Vec<Tensor>,
    index: Vec<(usize, usize)>,
    seq_counts: Vec<usize>,
}

impl SegmentSet {
    /// Loads every utterance of `manifest` (paths resolved against
    /// `base_dir`) and cuts non-overlapping segments.
    pub fn load(
        manifest: &Manifest,
        base_dir: &Path,
        segment_len: usize,
    ) -> Result<SegmentSet, FhvaeError> {
        if manifest.is_empty() {
            return Err(FhvaeError::EmptyManifest);
        }
        let mut features = Vec::with_capacity(manifest.len());
        let mut index = Vec::new();
        let mut seq_counts = Vec::with_capacity(manifest.len());
        let mut input_dim = 0;
        for (seq_id, row) in manifest.rows.iter().enumerate() {
            let f = read_features(&base_dir.join(&row.path), FeatureKind::Fbank, 10.0)?;
            input_dim = f.dim();
            let starts = crate::dsp::segment_starts(f.n_frames(), segment_len, segment_len);
            seq_counts.push(starts.len());
            for start in starts {
                index.push((seq_id, start));
            }
            features.push(f.frames);
        }
        if index.is_empty() {
            return Err(FhvaeError::EmptyManifest);
        }
        Ok(SegmentSet {
            segment_len,
            input_dim,
            features,
            index,
            seq_counts,
        })
    }

    pub fn n_segments(&self) -> usize {
        self.index.len()
    }

    pub fn n_sequences(&self) -> usize {
        self.features.len()
    }

    pub fn seq_count(&self, seq_id: usize) -> usize {
        self.seq_counts[seq_id]
    }

    /// Materializes segment `idx` as (frames, seq_id, 1/seq_count).
    pub fn segment(&self, idx: usize) -> (Tensor, usize, f64) {
        let (seq_id, start) = self.index[idx];
        let f = &self.features[seq_id];
        let d = f.cols();
        let mut frames = Tensor::zeros(&[self.segment_len, d]);
        for i in 0..self.segment_len {
            for j in 0..d {
                frames.set(i, j, f.at(start + i, j));
            }
        }
        (frames, seq_id, 1.0 / self.seq_counts[seq_id] as f64)
    }
}

/// Optimizer/loop settings for unsupervised training.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(steps: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            steps,
            batch_size,
            learning_rate,
            beta1: 0.95,
            beta2: 0.999,
            seed,
        }
    }
}

/// Trains in place and returns the per-step bound trace.
pub fn train(
    model: &mut FhvaeModel,
    data: &SegmentSet,
    cfg: &TrainConfig,
) -> Result<Vec<BoundTerms>, FhvaeError> {
    if data.n_sequences() != model.n_sequences {
        return Err(FhvaeError::BadHyper(format!(
            "model has a {}-row μ2 table but the corpus has {} sequences",
            model.n_sequences,
            data.n_sequences()
        )));
    }
    if data.input_dim != model.input_dim || data.segment_len != model.hyper.segment_len {
        return Err(FhvaeError::BadHyper(
            "segment shape does not match the model".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut trace = Vec::with_capacity(cfg.steps);
    let (d1, d2) = (model.hyper.dim_z1, model.hyper.dim_z2);

    for _ in 0..cfg.steps {
        let batch: Vec<(Tensor, usize, f64)> = (0..cfg.batch_size)
            .map(|_| data.segment(rng.gen_range(0..data.n_segments())))
            .collect();
        let b = batch.len();
        let gauss = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| StandardNormal.sample(rng)).collect()
        };
        let eps1 = Tensor::from_vec(&[b, d1], gauss(&mut rng, b * d1)).expect("sized");
        let eps2 = Tensor::from_vec(&[b, d2], gauss(&mut rng, b * d2)).expect("sized");

        let items: Vec<BoundItem> = batch
            .iter()
            .map(|(frames, seq_id, w)| BoundItem {
                frames,
                seq_id: *seq_id,
                seq_weight: *w,
            })
            .collect();
        let mut sess = Session::new(&model.params);
        let bb = batch_bound(model, &mut sess, &items, eps1, eps2)?;
        let (_, grads) = sess.graph.forward_backward(bb.loss)?;
        adam_step(&mut model.params, &grads, &mut adam)?;
        trace.push(bb.terms);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{synth_corpus, CorpusSpec};
    use crate::fhvae::{init_model, FhvaeHyper};

    fn tiny_corpus(seed: u64, n_train: usize, n_test: usize) -> (tempfile::TempDir, Manifest) {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = CorpusSpec::default_with_seed(seed);
        spec.n_train_domain_utts = n_train;
        spec.n_test_domain_utts = n_test;
        spec.frames_per_utt = (60, 80);
        spec.feature_dim = 8;
        let (m, _) = synth_corpus(&spec, dir.path()).unwrap();
        (dir, m)
    }

    #[test]
    fn single_segment_overfit_gains_at_least_100_nats() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = CorpusSpec::default_with_seed(2);
        spec.n_train_domain_utts = 1;
        spec.n_test_domain_utts = 1;
        spec.frames_per_utt = (20, 20); // exactly one segment each
        spec.feature_dim = 8;
        let (manifest, _) = synth_corpus(&spec, dir.path()).unwrap();
        let data = SegmentSet::load(&manifest, dir.path(), 20).unwrap();
        assert_eq!(data.n_segments(), 2);

        let mut model = init_model(FhvaeHyper::micro(), 8, 2, 3).unwrap();
        let cfg = TrainConfig::new(300, 2, 0.01, 7);
        let trace = train(&mut model, &data, &cfg).unwrap();
        let gain = trace.last().unwrap().recon - trace[0].recon;
        assert!(gain >= 100.0, "reconstruction gained only {gain} nats");
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let (dir, manifest) = tiny_corpus(5, 6, 4);
        let data = SegmentSet::load(&manifest, dir.path(), 20).unwrap();
        let run = || {
            let mut model = init_model(FhvaeHyper::micro(), 8, 10, 11).unwrap();
            let cfg = TrainConfig::new(40, 4, 2e-3, 13);
            train(&mut model, &data, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        for (ta, tb) in a.iter().zip(&b) {
            assert!((ta.total - tb.total).abs() <= 1e-10);
            assert!((ta.recon - tb.recon).abs() <= 1e-10);
        }
    }

    #[test]
    fn sequence_count_mismatch_is_rejected() {
        let (dir, manifest) = tiny_corpus(6, 4, 2);
        let data = SegmentSet::load(&manifest, dir.path(), 20).unwrap();
        let mut model = init_model(FhvaeHyper::micro(), 8, 99, 1).unwrap();
        let cfg = TrainConfig::new(1, 2, 1e-3, 1);
        assert!(train(&mut model, &data, &cfg).is_err());
    }
}
