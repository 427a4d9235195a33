//! Test-time inference: MAP s-vectors and z1/z2 feature extraction.
//!
//! Everything here uses posterior means only (no sampling) and never reads
//! the training μ2 lookup table; the s-vector comes from the closed-form MAP
//! estimate over a sequence's z2 posterior means.

use crate::dsp::{self, FeatureKind, FeatureMatrix};
use crate::numerics::nn::Session;
use crate::numerics::tensor::Tensor;

use super::{FhvaeError, FhvaeModel};

/// MAP estimate of a sequence's s-vector.
#[derive(Clone, Debug)]
pub struct SVector {
    pub mean: Vec<f64>,
    pub n_segments: usize,
}

/// μ̂2 = Σₙ z̄2⁽ⁿ⁾ / (N + σ²_z2/σ²_μ2); zero segments yield the prior mean.
pub fn infer_svector(model: &FhvaeModel, z2_means: &[Vec<f64>]) -> SVector {
    let d = model.hyper.dim_z2;
    let n = z2_means.len();
    let mut mean = vec![0.0; d];
    for z in z2_means {
        for (acc, v) in mean.iter_mut().zip(z) {
            *acc += v;
        }
    }
    let denom = n as f64 + model.hyper.var_z2 / model.hyper.var_mu2;
    for acc in mean.iter_mut() {
        *acc /= denom;
    }
    SVector {
        mean,
        n_segments: n,
    }
}

/// z2 posterior means for every segment of an utterance, batched in one
/// forward pass. Rows follow segment order.
fn z2_means_batched(
    model: &FhvaeModel,
    f: &FeatureMatrix,
    shift: usize,
) -> Result<(Vec<Tensor>, Tensor), FhvaeError> {
    let len = model.hyper.segment_len;
    let segments = dsp::segment(f, 0, len, shift);
    if segments.is_empty() {
        return Err(FhvaeError::BadSegmentShape {
            got_rows: f.n_frames(),
            got_cols: f.dim(),
            want_rows: len,
            want_cols: model.input_dim,
        });
    }
    let frames: Vec<Tensor> = segments.into_iter().map(|s| s.frames).collect();
    let refs: Vec<&Tensor> = frames.iter().collect();
    let mut sess = Session::new(&model.params);
    let xs = model.time_major_inputs(&mut sess, &refs);
    let (mu, _lv) = model.encode_z2_nodes(&mut sess, &xs, refs.len());
    let means = sess.graph.value(mu).clone();
    Ok((frames, means))
}

/// MAP s-vector for one utterance (the test-time replacement for the
/// training lookup table).
pub fn svector_for(
    model: &FhvaeModel,
    f: &FeatureMatrix,
    shift: usize,
) -> Result<SVector, FhvaeError> {
    let (_, means) = z2_means_batched(model, f, shift)?;
    let rows: Vec<Vec<f64>> = (0..means.rows()).map(|i| means.row(i).to_vec()).collect();
    Ok(infer_svector(model, &rows))
}

/// Segment-rate latent features for an utterance: one row per segment,
/// z1 conditioned on that segment's z2 posterior mean.
pub fn extract_features(
    model: &FhvaeModel,
    f: &FeatureMatrix,
    which: FeatureKind,
    shift: usize,
) -> Result<FeatureMatrix, FhvaeError> {
    assert!(
        matches!(which, FeatureKind::Z1 | FeatureKind::Z2),
        "extract_features produces z1 or z2"
    );
    let len = model.hyper.segment_len;
    let segments = dsp::segment(f, 0, len, shift);
    if segments.is_empty() {
        return Err(FhvaeError::BadSegmentShape {
            got_rows: f.n_frames(),
            got_cols: f.dim(),
            want_rows: len,
            want_cols: model.input_dim,
        });
    }
    let frames: Vec<Tensor> = segments.into_iter().map(|s| s.frames).collect();
    let refs: Vec<&Tensor> = frames.iter().collect();
    let batch = refs.len();
    let mut sess = Session::new(&model.params);
    let xs = model.time_major_inputs(&mut sess, &refs);
    let (z2_mean, _) = model.encode_z2_nodes(&mut sess, &xs, batch);
    let out = match which {
        FeatureKind::Z2 => sess.graph.value(z2_mean).clone(),
        _ => {
            let (z1_mean, _) = model.encode_z1_nodes(&mut sess, &xs, z2_mean, batch);
            sess.graph.value(z1_mean).clone()
        }
    };
    Ok(FeatureMatrix::new(
        out,
        f.frame_shift_ms * shift as f64,
        which,
    ))
}
