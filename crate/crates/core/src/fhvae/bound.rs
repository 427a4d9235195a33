//! The discriminative segment variational lower bound.
//!
//! Per segment x of sequence i (with N segments in the corpus):
//!   total = recon − KL(q(z1|x,z̃2) ‖ N(0, σ²_z1·I))
//!                 − KL(q(z2|x)   ‖ N(μ̃2[i], σ²_z2·I))
//!                 + log N(μ̃2[i] | 0, σ²_μ2·I) / N
//!                 + α · log softmax_j log N(z̄2; μ̃2[j], σ²_z2·I) |_{j=i}
//! where z̃ are reparameterized samples, z̄2 is the posterior mean, and μ̃2
//! is the trainable per-sequence lookup table. The discriminative term is a
//! softmax over all table rows, evaluated at the segment's own sequence.

use std::collections::BTreeMap;

use crate::dsp::Segment;
use crate::numerics::gauss;
use crate::numerics::graph::NodeId;
use crate::numerics::nn::Session;
use crate::numerics::tensor::Tensor;

use super::{FhvaeError, FhvaeModel};

/// Values of the bound's terms (batch means when built from a batch).
/// `seq_prior` is the raw log-density of the table row; `seq_prior_scaled`
/// is its per-segment share, the term that actually enters `total`.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct BoundTerms {
    pub recon: f64,
    pub kl_z1: f64,
    pub kl_z2: f64,
    pub seq_prior: f64,
    pub seq_prior_scaled: f64,
    pub disc: f64,
    pub total: f64,
}

/// One batch item: a segment's frames, its sequence id in the μ2 table, and
/// the reciprocal of that sequence's corpus segment count.
pub struct BoundItem<'a> {
    pub frames: &'a Tensor,
    pub seq_id: usize,
    pub seq_weight: f64,
}

pub(crate) struct BatchBound {
    pub terms: BoundTerms,
    /// node for −mean(total); minimize this
    pub loss: NodeId,
}

/// Builds the batched bound in `sess`. `eps1`/`eps2` are the reparameterization
/// draws, B×dim_z1 and B×dim_z2.
pub(crate) fn batch_bound(
    model: &FhvaeModel,
    sess: &mut Session,
    items: &[BoundItem],
    eps1: Tensor,
    eps2: Tensor,
) -> Result<BatchBound, FhvaeError> {
    let batch = items.len();
    let table_rows = model.n_sequences;
    for item in items {
        if item.seq_id >= table_rows {
            return Err(FhvaeError::UnknownSequence(item.seq_id, table_rows));
        }
        let (r, c) = (item.frames.rows(), item.frames.cols());
        if r != model.hyper.segment_len || c != model.input_dim {
            return Err(FhvaeError::BadSegmentShape {
                got_rows: r,
                got_cols: c,
                want_rows: model.hyper.segment_len,
                want_cols: model.input_dim,
            });
        }
    }
    let frames: Vec<&Tensor> = items.iter().map(|i| i.frames).collect();
    let seq_ids: Vec<usize> = items.iter().map(|i| i.seq_id).collect();
    let weights = Tensor::from_vec(
        &[batch, 1],
        items.iter().map(|i| i.seq_weight).collect(),
    )
    .expect("sized");

    let xs = model.time_major_inputs(sess, &frames);

    // inference: z̃2 ~ q(z2|x), then z̃1 ~ q(z1|x, z̃2)
    let (mu2q, lv2q) = model.encode_z2_nodes(sess, &xs, batch);
    let eps2_node = sess.input(eps2);
    let z2 = gauss::reparam_rows(&mut sess.graph, mu2q, lv2q, eps2_node);
    let (mu1q, lv1q) = model.encode_z1_nodes(sess, &xs, z2, batch);
    let eps1_node = sess.input(eps1);
    let z1 = gauss::reparam_rows(&mut sess.graph, mu1q, lv1q, eps1_node);

    // reconstruction log-likelihood summed over frames
    let per_frame = model.decode_nodes(sess, z1, z2, batch);
    let mut recon: Option<NodeId> = None;
    for (t, (mu_x, lv_x)) in per_frame.iter().enumerate() {
        let ll = gauss::logpdf_rows(&mut sess.graph, xs[t], *mu_x, *lv_x);
        recon = Some(match recon {
            Some(acc) => sess.graph.add(acc, ll),
            None => ll,
        });
    }
    let recon = recon.expect("segment_len >= 1");

    // KL terms against the hierarchical priors
    let kl1 = gauss::kl_rows(&mut sess.graph, mu1q, lv1q, None, model.hyper.var_z1.ln());
    let table = sess.param("mu2_table");
    let mu2_rows = sess.graph.row_select(table, &seq_ids);
    let kl2 = gauss::kl_rows(
        &mut sess.graph,
        mu2q,
        lv2q,
        Some(mu2_rows),
        model.hyper.var_z2.ln(),
    );

    // sequence prior on the table rows, charged per segment via seq_weight
    let zero = sess.input(Tensor::zeros(&[batch, model.hyper.dim_z2]));
    let prior_lv = sess.input(Tensor::filled(
        &[batch, model.hyper.dim_z2],
        model.hyper.var_mu2.ln(),
    ));
    let seq_prior = gauss::logpdf_rows(&mut sess.graph, mu2_rows, zero, prior_lv);
    let w_node = sess.input(weights);
    let seq_prior_scaled = sess.graph.mul(seq_prior, w_node);

    // discriminative term: which sequence does z̄2 look like?
    // logits_j = (z̄2·μ̃2[j] − ½‖μ̃2[j]‖²)/σ²_z2; the ‖z̄2‖² part is constant
    // per row and drops out of the softmax.
    let inv_var = 1.0 / model.hyper.var_z2;
    let table_t = sess.graph.transpose(table);
    let cross = sess.graph.matmul(mu2q, table_t);
    let cross = sess.graph.scale(cross, inv_var);
    let tsq = sess.graph.mul(table, table);
    let row_norms = sess.graph.row_sum(tsq);
    let row_norms_t = sess.graph.transpose(row_norms);
    let neg_half_norms = sess.graph.scale(row_norms_t, -0.5 * inv_var);
    let logits = sess.graph.add_row(cross, neg_half_norms);
    let log_post = sess.graph.log_softmax_rows(logits);
    let disc = sess.graph.pick_per_row(log_post, &seq_ids);

    // total = recon − KL₁ − KL₂ + seq_prior/N + α·disc
    let t1 = sess.graph.sub(recon, kl1);
    let t2 = sess.graph.sub(t1, kl2);
    let t3 = sess.graph.add(t2, seq_prior_scaled);
    let disc_w = sess.graph.scale(disc, model.hyper.alpha);
    let total = sess.graph.add(t3, disc_w);
    let total_mean = sess.graph.mean_all(total);
    let loss = sess.graph.scale(total_mean, -1.0);

    let mean_of = |g: &crate::numerics::graph::Graph, id: NodeId| -> f64 {
        let v = g.value(id);
        v.data().iter().sum::<f64>() / v.len() as f64
    };
    let g = &sess.graph;
    let recon_m = mean_of(g, recon);
    let kl1_m = mean_of(g, kl1);
    let kl2_m = mean_of(g, kl2);
    let seq_prior_m = mean_of(g, seq_prior);
    let seq_prior_scaled_m = mean_of(g, seq_prior_scaled);
    let disc_m = mean_of(g, disc);
    let terms = BoundTerms {
        recon: recon_m,
        kl_z1: kl1_m,
        kl_z2: kl2_m,
        seq_prior: seq_prior_m,
        seq_prior_scaled: seq_prior_scaled_m,
        disc: disc_m,
        total: recon_m - kl1_m - kl2_m + seq_prior_scaled_m + model.hyper.alpha * disc_m,
    };
    Ok(BatchBound { terms, loss })
}

/// Evaluates the bound for one segment. `n_segments` is the number of
/// segments its sequence contributes to the corpus (the sequence prior is
/// charged once per sequence, so each segment carries a 1/N share).
pub fn segment_bound(
    model: &FhvaeModel,
    x: &Segment,
    seq_id: usize,
    n_segments: usize,
    eps1: &[f64],
    eps2: &[f64],
) -> Result<BoundTerms, FhvaeError> {
    let (terms, _, _) = segment_bound_with_grads(model, x, seq_id, n_segments, eps1, eps2)?;
    Ok(terms)
}

/// Like [`segment_bound`] but also runs the backward pass, returning the
/// scalar loss (−total) and parameter gradients. Used by training and by the
/// gradient-fidelity checks.
pub fn segment_bound_with_grads(
    model: &FhvaeModel,
    x: &Segment,
    seq_id: usize,
    n_segments: usize,
    eps1: &[f64],
    eps2: &[f64],
) -> Result<(BoundTerms, f64, BTreeMap<String, Tensor>), FhvaeError> {
    if eps1.len() != model.hyper.dim_z1 {
        return Err(FhvaeError::BadDim {
            got: eps1.len(),
            want: model.hyper.dim_z1,
        });
    }
    if eps2.len() != model.hyper.dim_z2 {
        return Err(FhvaeError::BadDim {
            got: eps2.len(),
            want: model.hyper.dim_z2,
        });
    }
    let mut sess = Session::new(&model.params);
    let items = [BoundItem {
        frames: &x.frames,
        seq_id,
        seq_weight: 1.0 / n_segments.max(1) as f64,
    }];
    let eps1_t = Tensor::from_vec(&[1, eps1.len()], eps1.to_vec()).expect("sized");
    let eps2_t = Tensor::from_vec(&[1, eps2.len()], eps2.to_vec()).expect("sized");
    let bb = batch_bound(model, &mut sess, &items, eps1_t, eps2_t)?;
    let (loss, grads) = sess.graph.forward_backward(bb.loss)?;
    Ok((bb.terms, loss, grads))
}
