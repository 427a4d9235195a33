//! Factorized hierarchical VAE over feature segments.
//!
//! Generative story per sequence: an s-vector μ2 ~ N(0, σ²_μ2·I); per
//! segment, z1 ~ N(0, σ²_z1·I) and z2 ~ N(μ2, σ²_z2·I); frames decode from
//! [z1; z2]. The sequence-tied prior on z2 pushes factors that are constant
//! within an utterance (channel, speaker) into z2, leaving segment-varying
//! content to z1. Training maximizes a discriminative segment variational
//! lower bound; at test time μ2 comes from a closed-form MAP estimate
//! instead of the training lookup table.

pub mod bound;
pub mod extract;
pub mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::dsp::Segment;
use crate::numerics::graph::NodeId;
use crate::numerics::nn::{Affine, LstmStack, Session};
use crate::numerics::optim::ParamStore;
use crate::numerics::tensor::Tensor;
use crate::numerics::NumericsError;

pub use bound::{segment_bound, BoundTerms};
pub use extract::{extract_features, infer_svector, SVector};
pub use train::{train, SegmentSet, TrainConfig};

/// Log-variance heads are clamped to this range before exponentiation,
/// identically at train and test time.
pub const LOGVAR_CLAMP: (f64, f64) = (-7.0, 7.0);

#[derive(Debug, thiserror::Error)]
pub enum FhvaeError {
    #[error("segment is {got_rows}×{got_cols}, model wants {want_rows}×{want_cols}")]
    BadSegmentShape {
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("vector has dim {got}, expected {want}")]
    BadDim { got: usize, want: usize },
    #[error("sequence id {0} not in the μ2 table ({1} rows)")]
    UnknownSequence(usize, usize),
    #[error("manifest has no usable utterances")]
    EmptyManifest,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("corpus error: {0}")]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid hyperparameters: {0}")]
    BadHyper(String),
}

/// Model hyperparameters. Prior variances follow the reference setting
/// (σ²_z1 = σ²_μ2 = 1, σ²_z2 = 0.25, α = 10, 20-frame segments).
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct FhvaeHyper {
    pub dim_z1: usize,
    pub dim_z2: usize,
    pub var_z1: f64,
    pub var_mu2: f64,
    pub var_z2: f64,
    /// weight of the discriminative sequence term
    pub alpha: f64,
    pub segment_len: usize,
    /// LSTM cells per layer in both encoders and the decoder
    pub hidden: usize,
    pub n_layers: usize,
}

impl FhvaeHyper {
    /// Full-size configuration: 32-dim latents, two 256-cell LSTM layers.
    pub fn paper() -> Self {
        FhvaeHyper {
            dim_z1: 32,
            dim_z2: 32,
            var_z1: 1.0,
            var_mu2: 1.0,
            var_z2: 0.25,
            alpha: 10.0,
            segment_len: 20,
            hidden: 256,
            n_layers: 2,
        }
    }

    /// Desk-scale configuration used by the experiment harness.
    pub fn small() -> Self {
        FhvaeHyper {
            dim_z1: 16,
            dim_z2: 16,
            hidden: 32,
            n_layers: 1,
            ..FhvaeHyper::paper()
        }
    }

    /// Tiny configuration for gradient checks and CI.
    pub fn micro() -> Self {
        FhvaeHyper {
            dim_z1: 8,
            dim_z2: 8,
            hidden: 32,
            n_layers: 1,
            ..FhvaeHyper::paper()
        }
    }

    pub fn validate(&self) -> Result<(), FhvaeError> {
        if self.var_z1 <= 0.0 || self.var_z2 <= 0.0 || self.var_mu2 <= 0.0 {
            return Err(FhvaeError::BadHyper("variances must be positive".into()));
        }
        if self.alpha < 0.0 {
            return Err(FhvaeError::BadHyper("alpha must be nonnegative".into()));
        }
        if self.dim_z1 == 0 || self.dim_z2 == 0 || self.hidden == 0 || self.n_layers == 0 {
            return Err(FhvaeError::BadHyper("zero-sized layer".into()));
        }
        if self.segment_len == 0 {
            return Err(FhvaeError::BadHyper("zero segment length".into()));
        }
        Ok(())
    }
}

/// Gaussian posterior parameters for one segment.
#[derive(Clone, Debug)]
pub struct PosteriorEstimate {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// Network layout (derived from hyperparameters, not serialized).
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub z2_encoder: LstmStack,
    pub z2_mean: Affine,
    pub z2_logvar: Affine,
    pub z1_encoder: LstmStack,
    pub z1_mean: Affine,
    pub z1_logvar: Affine,
    pub decoder: LstmStack,
    pub dec_mean: Affine,
    pub dec_logvar: Affine,
}

/// Trained FHVAE: parameters (including the per-sequence μ2 lookup table),
/// the layout, and its hyperparameters.
#[derive(Clone, Debug)]
pub struct FhvaeModel {
    pub hyper: FhvaeHyper,
    pub input_dim: usize,
    pub n_sequences: usize,
    pub params: ParamStore,
    pub(crate) layout: Layout,
}

fn build_layout(
    store: &mut ParamStore,
    hyper: &FhvaeHyper,
    input_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Layout {
    let h = hyper.hidden;
    let z2_encoder = LstmStack::init(store, "enc_z2", input_dim, h, hyper.n_layers, rng);
    let z2_mean = Affine::init(store, "enc_z2.mu", h, hyper.dim_z2, rng);
    // zero-initialized log-variance heads make a fresh model predict unit
    // variance everywhere
    let z2_logvar = Affine::init_zero(store, "enc_z2.lv", h, hyper.dim_z2);
    let z1_encoder = LstmStack::init(
        store,
        "enc_z1",
        input_dim + hyper.dim_z2,
        h,
        hyper.n_layers,
        rng,
    );
    let z1_mean = Affine::init(store, "enc_z1.mu", h, hyper.dim_z1, rng);
    let z1_logvar = Affine::init_zero(store, "enc_z1.lv", h, hyper.dim_z1);
    let decoder = LstmStack::init(
        store,
        "dec",
        hyper.dim_z1 + hyper.dim_z2,
        h,
        hyper.n_layers,
        rng,
    );
    let dec_mean = Affine::init(store, "dec.mu", h, input_dim, rng);
    let dec_logvar = Affine::init_zero(store, "dec.lv", h, input_dim);
    Layout {
        z2_encoder,
        z2_mean,
        z2_logvar,
        z1_encoder,
        z1_mean,
        z1_logvar,
        decoder,
        dec_mean,
        dec_logvar,
    }
}

/// Initializes a model: fan-in uniform encoder/decoder weights, zeroed
/// log-variance heads, and a zero μ2 table with one row per training
/// sequence.
pub fn init_model(
    hyper: FhvaeHyper,
    input_dim: usize,
    n_train_sequences: usize,
    seed: u64,
) -> Result<FhvaeModel, FhvaeError> {
    hyper.validate()?;
    if n_train_sequences == 0 {
        return Err(FhvaeError::EmptyManifest);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let layout = build_layout(&mut params, &hyper, input_dim, &mut rng);
    params.insert("mu2_table", Tensor::zeros(&[n_train_sequences, hyper.dim_z2]));
    Ok(FhvaeModel {
        hyper,
        input_dim,
        n_sequences: n_train_sequences,
        params,
        layout,
    })
}

impl FhvaeModel {
    fn check_segment(&self, x: &Segment) -> Result<(), FhvaeError> {
        let (r, c) = (x.frames.rows(), x.frames.cols());
        if r != self.hyper.segment_len || c != self.input_dim {
            return Err(FhvaeError::BadSegmentShape {
                got_rows: r,
                got_cols: c,
                want_rows: self.hyper.segment_len,
                want_cols: self.input_dim,
            });
        }
        Ok(())
    }

    /// Stacks `segments` into one input node per time step (B×D each).
    pub(crate) fn time_major_inputs(
        &self,
        sess: &mut Session,
        frames: &[&Tensor],
    ) -> Vec<NodeId> {
        let batch = frames.len();
        let d = self.input_dim;
        (0..self.hyper.segment_len)
            .map(|t| {
                let mut step = Tensor::zeros(&[batch, d]);
                for (b, f) in frames.iter().enumerate() {
                    for j in 0..d {
                        step.set(b, j, f.at(t, j));
                    }
                }
                sess.input(step)
            })
            .collect()
    }

    /// q(z2 | x) head over a batch: LSTM final state → mean and clamped
    /// log-variance nodes.
    pub(crate) fn encode_z2_nodes(
        &self,
        sess: &mut Session,
        xs: &[NodeId],
        batch: usize,
    ) -> (NodeId, NodeId) {
        let h = self.layout.z2_encoder.run_final(sess, xs, batch);
        let mean = self.layout.z2_mean.forward(sess, h);
        let lv = self.layout.z2_logvar.forward(sess, h);
        let lv = sess.graph.clamp(lv, LOGVAR_CLAMP.0, LOGVAR_CLAMP.1);
        (mean, lv)
    }

    /// q(z1 | x, z2): each frame is concatenated with the conditioning z2.
    pub(crate) fn encode_z1_nodes(
        &self,
        sess: &mut Session,
        xs: &[NodeId],
        z2: NodeId,
        batch: usize,
    ) -> (NodeId, NodeId) {
        let joined: Vec<NodeId> = xs
            .iter()
            .map(|&x| sess.graph.concat_cols(x, z2))
            .collect();
        let h = self.layout.z1_encoder.run_final(sess, &joined, batch);
        let mean = self.layout.z1_mean.forward(sess, h);
        let lv = self.layout.z1_logvar.forward(sess, h);
        let lv = sess.graph.clamp(lv, LOGVAR_CLAMP.0, LOGVAR_CLAMP.1);
        (mean, lv)
    }

    /// p(x | z1, z2): [z1; z2] is fed as the decoder input at every time
    /// step; shared per-frame heads emit mean and clamped log-variance.
    pub(crate) fn decode_nodes(
        &self,
        sess: &mut Session,
        z1: NodeId,
        z2: NodeId,
        batch: usize,
    ) -> Vec<(NodeId, NodeId)> {
        let latent = sess.graph.concat_cols(z1, z2);
        let steps: Vec<NodeId> = (0..self.hyper.segment_len).map(|_| latent).collect();
        let hs = self.layout.decoder.run(sess, &steps, batch);
        hs.into_iter()
            .map(|h| {
                let mu = self.layout.dec_mean.forward(sess, h);
                let lv = self.layout.dec_logvar.forward(sess, h);
                let lv = sess.graph.clamp(lv, LOGVAR_CLAMP.0, LOGVAR_CLAMP.1);
                (mu, lv)
            })
            .collect()
    }

    /// Posterior q(z2|x) for one segment.
    pub fn encode_z2(&self, x: &Segment) -> Result<PosteriorEstimate, FhvaeError> {
        self.check_segment(x)?;
        let mut sess = Session::new(&self.params);
        let xs = self.time_major_inputs(&mut sess, &[&x.frames]);
        let (mean, lv) = self.encode_z2_nodes(&mut sess, &xs, 1);
        Ok(PosteriorEstimate {
            mean: sess.graph.value(mean).data().to_vec(),
            logvar: sess.graph.value(lv).data().to_vec(),
        })
    }

    /// Posterior q(z1|x, z2) for one segment given a conditioning z2.
    pub fn encode_z1(&self, x: &Segment, z2: &[f64]) -> Result<PosteriorEstimate, FhvaeError> {
        self.check_segment(x)?;
        if z2.len() != self.hyper.dim_z2 {
            return Err(FhvaeError::BadDim {
                got: z2.len(),
                want: self.hyper.dim_z2,
            });
        }
        let mut sess = Session::new(&self.params);
        let xs = self.time_major_inputs(&mut sess, &[&x.frames]);
        let z2_node = sess.input(Tensor::from_vec(&[1, z2.len()], z2.to_vec()).expect("sized"));
        let (mean, lv) = self.encode_z1_nodes(&mut sess, &xs, z2_node, 1);
        Ok(PosteriorEstimate {
            mean: sess.graph.value(mean).data().to_vec(),
            logvar: sess.graph.value(lv).data().to_vec(),
        })
    }

    /// Per-frame decoder output (means, log-variances), each segment_len × D.
    pub fn decode(&self, z1: &[f64], z2: &[f64]) -> Result<(Tensor, Tensor), FhvaeError> {
        if z1.len() != self.hyper.dim_z1 {
            return Err(FhvaeError::BadDim {
                got: z1.len(),
                want: self.hyper.dim_z1,
            });
        }
        if z2.len() != self.hyper.dim_z2 {
            return Err(FhvaeError::BadDim {
                got: z2.len(),
                want: self.hyper.dim_z2,
            });
        }
        let mut sess = Session::new(&self.params);
        let z1_node = sess.input(Tensor::from_vec(&[1, z1.len()], z1.to_vec()).expect("sized"));
        let z2_node = sess.input(Tensor::from_vec(&[1, z2.len()], z2.to_vec()).expect("sized"));
        let per_frame = self.decode_nodes(&mut sess, z1_node, z2_node, 1);
        let (t, d) = (self.hyper.segment_len, self.input_dim);
        let mut means = Tensor::zeros(&[t, d]);
        let mut logvars = Tensor::zeros(&[t, d]);
        for (i, (mu, lv)) in per_frame.iter().enumerate() {
            for j in 0..d {
                means.set(i, j, sess.graph.value(*mu).at(0, j));
                logvars.set(i, j, sess.graph.value(*lv).at(0, j));
            }
        }
        Ok((means, logvars))
    }

    pub fn save(&self, path: &Path) -> Result<(), FhvaeError> {
        let mut ck = Checkpoint::new("fhvae");
        ck.scalars.insert("dim_z1".into(), self.hyper.dim_z1 as f64);
        ck.scalars.insert("dim_z2".into(), self.hyper.dim_z2 as f64);
        ck.scalars.insert("var_z1".into(), self.hyper.var_z1);
        ck.scalars.insert("var_mu2".into(), self.hyper.var_mu2);
        ck.scalars.insert("var_z2".into(), self.hyper.var_z2);
        ck.scalars.insert("alpha".into(), self.hyper.alpha);
        ck.scalars
            .insert("segment_len".into(), self.hyper.segment_len as f64);
        ck.scalars.insert("hidden".into(), self.hyper.hidden as f64);
        ck.scalars
            .insert("n_layers".into(), self.hyper.n_layers as f64);
        ck.scalars.insert("input_dim".into(), self.input_dim as f64);
        ck.scalars
            .insert("n_sequences".into(), self.n_sequences as f64);
        ck.insert_params(&self.params);
        ck.save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FhvaeModel, FhvaeError> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind("fhvae")?;
        let hyper = FhvaeHyper {
            dim_z1: ck.scalar_usize("dim_z1")?,
            dim_z2: ck.scalar_usize("dim_z2")?,
            var_z1: ck.scalar("var_z1")?,
            var_mu2: ck.scalar("var_mu2")?,
            var_z2: ck.scalar("var_z2")?,
            alpha: ck.scalar("alpha")?,
            segment_len: ck.scalar_usize("segment_len")?,
            hidden: ck.scalar_usize("hidden")?,
            n_layers: ck.scalar_usize("n_layers")?,
        };
        let input_dim = ck.scalar_usize("input_dim")?;
        let n_sequences = ck.scalar_usize("n_sequences")?;
        // build the expected layout, then swap in the stored tensors
        let proto = init_model(hyper, input_dim, n_sequences, 0)?;
        let params = ck.params_matching(&proto.params)?;
        Ok(FhvaeModel { params, ..proto })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn random_segment(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Segment {
        let frames = Tensor::from_vec(
            &[len, dim],
            (0..len * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        Segment {
            source: 0,
            start: 0,
            frames,
        }
    }

    #[test]
    fn table_shape_and_seeded_init() {
        let m = init_model(FhvaeHyper::paper(), 40, 7, 3).unwrap();
        assert_eq!(m.params.get("mu2_table").shape(), &[7, 32]);
        let m2 = init_model(FhvaeHyper::paper(), 40, 7, 3).unwrap();
        for ((na, ta), (nb, tb)) in m.params.iter().zip(m2.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "{na} differs across same-seed init");
        }
    }

    #[test]
    fn logvar_heads_start_at_unit_variance() {
        let m = init_model(FhvaeHyper::micro(), 6, 2, 1).unwrap();
        for head in ["enc_z2.lv", "enc_z1.lv", "dec.lv"] {
            assert!(m.params.get(&format!("{head}.w")).data().iter().all(|&v| v == 0.0));
            assert!(m.params.get(&format!("{head}.b")).data().iter().all(|&v| v == 0.0));
        }
        // a forward pass therefore predicts logvar exactly 0 → variance 1
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_segment(&mut rng, m.hyper.segment_len, 6);
        let post = m.encode_z2(&x).unwrap();
        assert!(post.logvar.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoders_have_right_dims_and_are_deterministic() {
        let m = init_model(FhvaeHyper::small(), 12, 3, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_segment(&mut rng, m.hyper.segment_len, 12);
        let p2a = m.encode_z2(&x).unwrap();
        let p2b = m.encode_z2(&x).unwrap();
        assert_eq!(p2a.mean.len(), 16);
        assert_eq!(p2a.logvar.len(), 16);
        assert_eq!(p2a.mean, p2b.mean, "deterministic given model and input");
        let p1 = m.encode_z1(&x, &p2a.mean).unwrap();
        assert_eq!(p1.mean.len(), 16);
    }

    #[test]
    fn different_segments_and_conditioning_move_the_posterior() {
        let m = init_model(FhvaeHyper::small(), 10, 3, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xa = random_segment(&mut rng, m.hyper.segment_len, 10);
        let xb = random_segment(&mut rng, m.hyper.segment_len, 10);
        let pa = m.encode_z2(&xa).unwrap();
        let pb = m.encode_z2(&xb).unwrap();
        let dist: f64 = pa
            .mean
            .iter()
            .zip(&pb.mean)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        assert!(dist > 1e-12, "distinct segments should map to distinct means");

        // changing z2 changes the z1 posterior
        let z2a = pa.mean.clone();
        let mut z2b = pa.mean.clone();
        z2b[0] += 0.5;
        let p1a = m.encode_z1(&xa, &z2a).unwrap();
        let p1b = m.encode_z1(&xa, &z2b).unwrap();
        let sens: f64 = p1a
            .mean
            .iter()
            .zip(&p1b.mean)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(sens > 1e-12, "z1 posterior should be sensitive to z2");
    }

    #[test]
    fn decode_shapes_and_purity() {
        let m = init_model(FhvaeHyper::small(), 40, 2, 13).unwrap();
        let z1 = vec![0.3; 16];
        let z2 = vec![-0.2; 16];
        let (mu, lv) = m.decode(&z1, &z2).unwrap();
        assert_eq!(mu.shape(), &[20, 40]);
        assert_eq!(lv.shape(), &[20, 40]);
        let (mu2, _) = m.decode(&z1, &z2).unwrap();
        assert_eq!(mu.data(), mu2.data());
    }

    #[test]
    fn shape_errors_are_reported() {
        let m = init_model(FhvaeHyper::small(), 10, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bad = random_segment(&mut rng, 7, 10);
        assert!(matches!(
            m.encode_z2(&bad),
            Err(FhvaeError::BadSegmentShape { .. })
        ));
        let ok = random_segment(&mut rng, 20, 10);
        assert!(matches!(
            m.encode_z1(&ok, &[0.0; 3]),
            Err(FhvaeError::BadDim { .. })
        ));
        assert!(m.decode(&[0.0; 16], &[0.0; 5]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fhvm");
        let m = init_model(FhvaeHyper::micro(), 8, 4, 17).unwrap();
        m.save(&path).unwrap();
        let back = FhvaeModel::load(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_segment(&mut rng, m.hyper.segment_len, 8);
        let a = m.encode_z2(&x).unwrap();
        let b = back.encode_z2(&x).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.logvar, b.logvar);
    }
}
