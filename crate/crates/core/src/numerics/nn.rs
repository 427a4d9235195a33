//! Network building blocks shared by the trainable models: fan-in uniform
//! initialization, affine layers, and a standard LSTM stack.
//!
//! Parameters live in a [`ParamStore`]; a [`Session`] binds them into a fresh
//! graph per forward pass so the same weights serve training (with gradients)
//! and inference (values only).

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::optim::ParamStore;
use super::tensor::Tensor;

/// Fan-in uniform init: U(−1/√fan_in, 1/√fan_in).
pub fn fan_in_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(&[fan_in, fan_out], data).expect("sized")
}

/// A graph under construction plus the parameter store backing it.
///
/// Parameters are registered on first use, so the gradient map only contains
/// what the pass actually touched.
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    bound: HashMap<String, NodeId>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Session {
            graph: Graph::new(),
            store,
            bound: HashMap::new(),
        }
    }

    /// Node for the named parameter, registering it on first use.
    pub fn param(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.bound.get(name) {
            return id;
        }
        let id = self.graph.param(name, self.store.get(name).clone());
        self.bound.insert(name.to_string(), id);
        id
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.graph.input(value)
    }
}

/// Affine layer `x·W + b` with parameters `{name}.w` and `{name}.b`.
#[derive(Clone, Debug)]
pub struct Affine {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    /// Initializes weights fan-in uniform, bias zero.
    pub fn init(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        store.insert(&format!("{name}.w"), fan_in_uniform(rng, in_dim, out_dim));
        store.insert(&format!("{name}.b"), Tensor::zeros(&[1, out_dim]));
        Affine {
            name: name.to_string(),
            in_dim,
            out_dim,
        }
    }

    /// Initializes weights and bias to zero. Used for log-variance heads so a
    /// freshly initialized model predicts unit variance everywhere.
    pub fn init_zero(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        store.insert(&format!("{name}.w"), Tensor::zeros(&[in_dim, out_dim]));
        store.insert(&format!("{name}.b"), Tensor::zeros(&[1, out_dim]));
        Affine {
            name: name.to_string(),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, sess: &mut Session, x: NodeId) -> NodeId {
        let w = sess.param(&format!("{}.w", self.name));
        let b = sess.param(&format!("{}.b", self.name));
        let xw = sess.graph.matmul(x, w);
        sess.graph.add_row(xw, b)
    }
}

/// One LSTM layer. Gate order is [input, forget, cell, output]; the forget
/// gate bias starts at 1.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub name: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn init(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        store.insert(&format!("{name}.wx"), fan_in_uniform(rng, in_dim, 4 * hidden));
        store.insert(&format!("{name}.wh"), fan_in_uniform(rng, hidden, 4 * hidden));
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        for j in hidden..2 * hidden {
            b.data_mut()[j] = 1.0;
        }
        store.insert(&format!("{name}.b"), b);
        LstmLayer {
            name: name.to_string(),
            in_dim,
            hidden,
        }
    }

    /// One step: (x_t B×in, h B×H, c B×H) → (h', c').
    pub fn step(&self, sess: &mut Session, x: NodeId, h: NodeId, c: NodeId) -> (NodeId, NodeId) {
        let wx = sess.param(&format!("{}.wx", self.name));
        let wh = sess.param(&format!("{}.wh", self.name));
        let b = sess.param(&format!("{}.b", self.name));
        let g = &mut sess.graph;
        let xw = g.matmul(x, wx);
        let hw = g.matmul(h, wh);
        let pre = g.add(xw, hw);
        let gates = g.add_row(pre, b);
        let hsz = self.hidden;
        let i_pre = g.slice_cols(gates, 0, hsz);
        let f_pre = g.slice_cols(gates, hsz, hsz);
        let c_pre = g.slice_cols(gates, 2 * hsz, hsz);
        let o_pre = g.slice_cols(gates, 3 * hsz, hsz);
        let i = g.sigmoid(i_pre);
        let f = g.sigmoid(f_pre);
        let cc = g.tanh(c_pre);
        let o = g.sigmoid(o_pre);
        let fc = g.mul(f, c);
        let ic = g.mul(i, cc);
        let c_new = g.add(fc, ic);
        let c_tanh = g.tanh(c_new);
        let h_new = g.mul(o, c_tanh);
        (h_new, c_new)
    }
}

/// A stack of LSTM layers run over a step-major sequence.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

impl LstmStack {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        n_layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|l| {
                let layer_in = if l == 0 { in_dim } else { hidden };
                LstmLayer::init(store, &format!("{name}.l{l}"), layer_in, hidden, rng)
            })
            .collect();
        LstmStack { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().expect("non-empty stack").hidden
    }

    /// Runs the stack over `xs` (one B×in node per time step) and returns the
    /// top layer's hidden state at every step.
    pub fn run(&self, sess: &mut Session, xs: &[NodeId], batch: usize) -> Vec<NodeId> {
        let mut inputs: Vec<NodeId> = xs.to_vec();
        for layer in &self.layers {
            let zero = Tensor::zeros(&[batch, layer.hidden]);
            let mut h = sess.input(zero.clone());
            let mut c = sess.input(zero);
            let mut outs = Vec::with_capacity(inputs.len());
            for &x in &inputs {
                let (h_new, c_new) = layer.step(sess, x, h, c);
                h = h_new;
                c = c_new;
                outs.push(h);
            }
            inputs = outs;
        }
        inputs
    }

    /// Final hidden state of the top layer.
    pub fn run_final(&self, sess: &mut Session, xs: &[NodeId], batch: usize) -> NodeId {
        *self
            .run(sess, xs, batch)
            .last()
            .expect("at least one time step")
    }
}
