use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::tensor::Mat;
use super::{ModelConfig, Pooling};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fixed affine maps applied to inputs and targets, fitted on training data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_mean: f64,
    pub input_std: f64,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { input_mean: 0.0, input_std: 1.0, target_mean: 0.0, target_std: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerIds {
    ln1: (ParamId, ParamId),
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    o: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    ffn1: (ParamId, ParamId),
    ffn2: (ParamId, ParamId),
}

#[derive(Clone, Debug, PartialEq)]
struct Ids {
    encoder: Option<(ParamId, ParamId)>,
    pos: ParamId,
    layers: Vec<LayerIds>,
    final_ln: (ParamId, ParamId),
    pool_post: (ParamId, ParamId),
    pool_pre: (ParamId, ParamId),
    alpha: ParamId,
    head1: (ParamId, ParamId),
    head2: (ParamId, ParamId),
}

/// Expected `(name, rows, cols)` for every tensor, in registration order.
fn layout(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let d = cfg.token_dim;
    let f = cfg.ffn_dim();
    let mut out = Vec::new();
    let mut push = |n: String, r: usize, c: usize| out.push((n, r, c));
    if cfg.linear_encoder {
        push("encoder.weight".into(), cfg.input_dim, d);
        push("encoder.bias".into(), 1, d);
    }
    push("pos_embedding".into(), cfg.window_k, d);
    for l in 0..cfg.layers {
        let p = format!("layers.{l}");
        push(format!("{p}.ln1.gamma"), 1, d);
        push(format!("{p}.ln1.beta"), 1, d);
        for m in ["q", "k", "v", "o"] {
            push(format!("{p}.attn.w{m}"), d, d);
            push(format!("{p}.attn.b{m}"), 1, d);
        }
        push(format!("{p}.ln2.gamma"), 1, d);
        push(format!("{p}.ln2.beta"), 1, d);
        push(format!("{p}.ffn.w1"), d, f);
        push(format!("{p}.ffn.b1"), 1, f);
        push(format!("{p}.ffn.w2"), f, d);
        push(format!("{p}.ffn.b2"), 1, d);
    }
    push("final_ln.gamma".into(), 1, d);
    push("final_ln.beta".into(), 1, d);
    push("pool_post.weight".into(), d, 1);
    push("pool_post.bias".into(), 1, 1);
    push("pool_pre.weight".into(), d, 1);
    push("pool_pre.bias".into(), 1, 1);
    push("alpha".into(), 1, 1);
    push("head.w1".into(), d, cfg.head_dim);
    push("head.b1".into(), 1, cfg.head_dim);
    push("head.w2".into(), cfg.head_dim, 1);
    push("head.b2".into(), 1, 1);
    out
}

fn resolve<T: Scalar>(store: &ParamStore<T>, cfg: &ModelConfig) -> Result<Ids> {
    let expected = layout(cfg);
    if expected.len() != store.len() {
        return Err(Error::Format(format!(
            "parameter count mismatch: expected {} tensors, found {}",
            expected.len(),
            store.len()
        )));
    }
    for (name, r, c) in &expected {
        let t = store.by_name(name).ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
        if t.shape() != (*r, *c) {
            return Err(Error::Format(format!("parameter {name} has shape {:?}, expected ({r}, {c})", t.shape())));
        }
    }
    let id = |n: &str| store.id(n).expect("checked above");
    let pair = |a: &str, b: &str| (id(a), id(b));
    Ok(Ids {
        encoder: cfg.linear_encoder.then(|| pair("encoder.weight", "encoder.bias")),
        pos: id("pos_embedding"),
        layers: (0..cfg.layers)
            .map(|l| {
                let p = format!("layers.{l}");
                let n = |s: &str| format!("{p}.{s}");
                LayerIds {
                    ln1: pair(&n("ln1.gamma"), &n("ln1.beta")),
                    q: pair(&n("attn.wq"), &n("attn.bq")),
                    k: pair(&n("attn.wk"), &n("attn.bk")),
                    v: pair(&n("attn.wv"), &n("attn.bv")),
                    o: pair(&n("attn.wo"), &n("attn.bo")),
                    ln2: pair(&n("ln2.gamma"), &n("ln2.beta")),
                    ffn1: pair(&n("ffn.w1"), &n("ffn.b1")),
                    ffn2: pair(&n("ffn.w2"), &n("ffn.b2")),
                }
            })
            .collect(),
        final_ln: pair("final_ln.gamma", "final_ln.beta"),
        pool_post: pair("pool_post.weight", "pool_post.bias"),
        pool_pre: pair("pool_pre.weight", "pool_pre.bias"),
        alpha: id("alpha"),
        head1: pair("head.w1", "head.b1"),
        head2: pair("head.w2", "head.b2"),
    })
}

/// Seeded inverted-dropout mask source.
pub(crate) struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    /// Independent stream per `(seed, stream)` so masks do not depend on
    /// scheduling.
    pub(crate) fn new(p: f64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { p, rng }
    }

    fn mask<T: Scalar>(&mut self, len: usize) -> Vec<T> {
        let keep = T::lit(1.0 / (1.0 - self.p));
        (0..len).map(|_| if self.rng.random::<f64>() < self.p { T::zero() } else { keep }).collect()
    }
}

/// Handles into a recorded forward pass.
pub(crate) struct Graph {
    pub out: NodeId,
}

/// Trained (or freshly initialized) model: configuration, weights and normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub normalization: Normalization,
    ids: Ids,
}

impl<T: Scalar> ModelParams<T> {
    /// Fan-in scaled uniform weights, zero biases, unit layer-norm gains,
    /// small normal positional embeddings.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let pos_dist = Normal::new(0.0, 0.02).expect("valid sigma");
        let mut store = ParamStore::default();
        for (name, r, c) in layout(config) {
            let value = if name == "alpha" {
                Mat::scalar(T::lit(config.alpha_init))
            } else if name == "pos_embedding" {
                Mat::from_fn(r, c, |_, _| T::lit(pos_dist.sample(&mut rng)))
            } else if name.ends_with(".gamma") {
                Mat::from_fn(r, c, |_, _| T::one())
            } else if name.ends_with(".beta") || r == 1 {
                Mat::zeros(r, c)
            } else {
                let bound = 1.0 / (r as f64).sqrt();
                Mat::from_fn(r, c, |_, _| T::lit(rng.random_range(-bound..bound)))
            };
            store.insert(name, value);
        }
        let ids = resolve(&store, config)?;
        Ok(Self { config: config.clone(), store, normalization: Normalization::default(), ids })
    }

    /// Wraps a loaded store, checking names and shapes against the config.
    pub fn from_store(config: ModelConfig, store: ParamStore<T>, normalization: Normalization) -> Result<Self> {
        config.validate()?;
        let ids = resolve(&store, &config)?;
        Ok(Self { config, store, normalization, ids })
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            store: self.store.cast(),
            normalization: self.normalization,
            ids: self.ids.clone(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.store.get(self.ids.alpha).data[0].as_f64()
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.store.get_mut(self.ids.alpha).data[0] = T::lit(alpha);
    }

    pub(crate) fn alpha_id(&self) -> ParamId {
        self.ids.alpha
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        let want = self.config.window_k * self.config.input_dim;
        if input.len() != want {
            return Err(Error::input(format!(
                "window has {} samples, model expects {} traces x {} samples",
                input.len(),
                self.config.window_k,
                self.config.input_dim
            )));
        }
        Ok(())
    }

    fn attention(
        &self,
        tape: &mut Tape<'_, T>,
        x: NodeId,
        l: &LayerIds,
        blocks: usize,
        dropout: &mut [Dropout],
    ) -> NodeId {
        let p = |tape: &mut Tape<'_, T>, (w, b): (ParamId, ParamId)| (tape.param(w), tape.param(b));
        let (wq, bq) = p(tape, l.q);
        let (wk, bk) = p(tape, l.k);
        let (wv, bv) = p(tape, l.v);
        let (wo, bo) = p(tape, l.o);
        let q = tape.affine(x, wq, bq);
        let k = tape.affine(x, wk, bk);
        let v = tape.affine(x, wv, bv);
        let heads = self.config.heads;
        let dh = self.config.token_dim / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (tape.slice_cols(q, h * dh, dh), tape.slice_cols(k, h * dh, dh), tape.slice_cols(v, h * dh, dh))
            };
            let s = tape.block_matmul(qh, kh, true, blocks);
            let s = tape.scale(s, scale);
            let a = tape.softmax_rows(s);
            outs.push(tape.block_matmul(a, vh, false, blocks));
        }
        let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let o = tape.affine(cat, wo, bo);
        self.dropout(tape, o, dropout)
    }

    /// Each window draws its slice of the mask from its own stream.
    fn dropout(&self, tape: &mut Tape<'_, T>, x: NodeId, dropout: &mut [Dropout]) -> NodeId {
        if dropout.is_empty() || dropout[0].p <= 0.0 {
            return x;
        }
        let per = tape.value(x).len() / dropout.len();
        let mask = dropout.iter_mut().flat_map(|d| d.mask::<T>(per)).collect();
        tape.mask(x, mask)
    }

    /// Attention pooling over the `k` tokens of each window: `blocks x d`.
    fn pool(
        &self,
        tape: &mut Tape<'_, T>,
        scores_from: NodeId,
        values: NodeId,
        (w, b): (ParamId, ParamId),
        blocks: usize,
    ) -> NodeId {
        let (w, b) = (tape.param(w), tape.param(b));
        let s = tape.affine(scores_from, w, b);
        let s = tape.reshape(s, blocks, self.config.window_k);
        let a = tape.softmax_rows(s);
        tape.block_matmul(a, values, false, blocks)
    }

    /// Records one forward pass over a batch of windows; the output node is
    /// `batch x 1` normalized displacements. `dropout` is empty at inference
    /// or holds one mask source per window.
    pub(crate) fn forward_graph<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        inputs: &[&[f64]],
        dropout: &mut [Dropout],
    ) -> Result<Graph> {
        if inputs.is_empty() {
            return Err(Error::input("empty batch"));
        }
        assert!(dropout.is_empty() || dropout.len() == inputs.len(), "one dropout stream per window");
        for x in inputs {
            self.check_input(x)?;
        }
        let cfg = &self.config;
        let blocks = inputs.len();
        let n = self.normalization;
        let x = Mat::from_vec(
            blocks * cfg.window_k,
            cfg.input_dim,
            inputs.iter().flat_map(|x| x.iter()).map(|v| T::lit((v - n.input_mean) / n.input_std)).collect(),
        );
        let x = tape.input(x);
        let tokens = match self.ids.encoder {
            Some((w, b)) => {
                let (w, b) = (tape.param(w), tape.param(b));
                tape.affine(x, w, b)
            }
            None => x,
        };
        let pos = tape.param(self.ids.pos);
        let pre = tape.add_tiled(tokens, pos);

        let mut h = pre;
        for l in &self.ids.layers {
            let (g, b) = (tape.param(l.ln1.0), tape.param(l.ln1.1));
            let a = tape.layer_norm(h, g, b);
            let a = self.attention(tape, a, l, blocks, dropout);
            h = tape.add(h, a);
            let (g, b) = (tape.param(l.ln2.0), tape.param(l.ln2.1));
            let f = tape.layer_norm(h, g, b);
            let (w1, b1) = (tape.param(l.ffn1.0), tape.param(l.ffn1.1));
            let f = tape.affine(f, w1, b1);
            let f = tape.gelu(f);
            let (w2, b2) = (tape.param(l.ffn2.0), tape.param(l.ffn2.1));
            let f = tape.affine(f, w2, b2);
            let f = self.dropout(tape, f, dropout);
            h = tape.add(h, f);
        }
        let (g, b) = (tape.param(self.ids.final_ln.0), tape.param(self.ids.final_ln.1));
        let post = tape.layer_norm(h, g, b);

        let x1 = self.pool(tape, post, post, self.ids.pool_post, blocks);
        let pooled = match cfg.pooling {
            Pooling::Dual => {
                // attention weights from pre-transformer tokens applied to post-transformer outputs
                let x2 = self.pool(tape, pre, post, self.ids.pool_pre, blocks);
                let alpha = tape.param(self.ids.alpha);
                tape.blend(alpha, x1, x2)
            }
            Pooling::PostOnly => x1,
        };
        let (w1, b1) = (tape.param(self.ids.head1.0), tape.param(self.ids.head1.1));
        let z = tape.affine(pooled, w1, b1);
        let z = tape.relu(z);
        let z = self.dropout(tape, z, dropout);
        let (w2, b2) = (tape.param(self.ids.head2.0), tape.param(self.ids.head2.1));
        let out = tape.affine(z, w2, b2);
        Ok(Graph { out })
    }

    /// Displacement (m) predicted for one row-major window (`window_k x input_dim`).
    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        Ok(self.predict_batch(&[input])?[0])
    }

    /// Displacements (m) for several windows evaluated as one batch.
    pub fn predict_batch(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let g = self.forward_graph(&mut tape, inputs, &mut [])?;
        let n = self.normalization;
        tape.value(g.out)
            .data
            .iter()
            .map(|y| {
                let y = y.as_f64();
                if y.is_finite() {
                    Ok(y * n.target_std + n.target_mean)
                } else {
                    Err(Error::numerical("non-finite model output"))
                }
            })
            .collect()
    }

    /// Sum of squared errors in normalized units over a batch; adds
    /// `weight * d(loss)/d(params)` into `grads`.
    pub(crate) fn accumulate_gradient(
        &self,
        batch: &[(&[f64], f64)],
        dropout: &mut [Dropout],
        weight: T,
        grads: &mut Grads<T>,
    ) -> Result<T> {
        let inputs: Vec<&[f64]> = batch.iter().map(|(x, _)| *x).collect();
        let mut tape = Tape::new(&self.store);
        let g = self.forward_graph(&mut tape, &inputs, dropout)?;
        let n = self.normalization;
        let mut seed = Mat::zeros(batch.len(), 1);
        let mut loss = T::zero();
        for (i, (y, (_, label))) in tape.value(g.out).data.iter().zip(batch).enumerate() {
            let r = *y - T::lit((label - n.target_mean) / n.target_std);
            seed.data[i] = T::lit(2.0) * r * weight;
            loss += r * r;
        }
        tape.backward(g.out, seed, grads);
        Ok(loss)
    }

    /// Mean normalized squared error and its gradient over a batch (no dropout).
    pub fn loss_and_gradient(&self, batch: &[(&[f64], f64)]) -> Result<(f64, Grads<T>)> {
        let mut grads = self.store.zeros_like();
        let w = T::lit(1.0 / batch.len() as f64);
        let loss = self.accumulate_gradient(batch, &mut [], w, &mut grads)?;
        grads.check_finite(&self.store)?;
        Ok((loss.as_f64() / batch.len() as f64, grads))
    }

    /// Compares analytic gradients of the batch loss with central differences
    /// (step 1e-4) on `count` sampled scalars. Alpha and four positional
    /// embedding entries are always included.
    pub fn gradient_check(&self, batch: &[(Vec<f64>, f64)], count: usize, seed: u64) -> Result<GradientCheck> {
        let refs: Vec<(&[f64], f64)> = batch.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let (_, grads) = self.loss_and_gradient(&refs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks: Vec<(ParamId, usize)> = vec![(self.ids.alpha, 0)];
        for _ in 0..4 {
            picks.push((self.ids.pos, rng.random_range(0..self.store.get(self.ids.pos).len())));
        }
        while picks.len() < count {
            let id = rng.random_range(0..self.store.len());
            picks.push((id, rng.random_range(0..self.store.get(id).len())));
        }
        let h = T::lit(1e-4);
        let mut worst: f64 = 0.0;
        for &(id, e) in &picks {
            let mut probe = self.clone();
            probe.store.get_mut(id).data[e] += h;
            let up = probe.loss_and_gradient(&refs)?.0;
            probe.store.get_mut(id).data[e] -= h + h;
            let down = probe.loss_and_gradient(&refs)?.0;
            let fd = (up - down) / (2.0 * h.as_f64());
            let an = grads.tensors[id].data[e].as_f64();
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
        }
        Ok(GradientCheck {
            max_rel_error: worst,
            checked: picks.len(),
            names: picks.iter().map(|(id, _)| self.store.name(*id).to_string()).collect(),
        })
    }
}

/// Outcome of [`ModelParams::gradient_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Tensor name of every probed scalar.
    pub names: Vec<String>,
}

/// Mean squared error.
pub fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "mse length mismatch");
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(cfg: &ModelConfig, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cfg.window_k * cfg.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Parameters with non-trivial biases and gains so no gradient path is degenerate.
    fn perturbed(cfg: &ModelConfig) -> ModelParams<f64> {
        let mut m = ModelParams::<f64>::init(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for id in 0..m.store.len() {
            let name = m.store.name(id).to_string();
            if name == "alpha" {
                continue;
            }
            for v in &mut m.store.get_mut(id).data {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        m.set_alpha(0.37);
        m
    }

    #[test]
    fn loss_examples() {
        assert_eq!(mse(&[1.5], &[1.5]), 0.0);
        assert_eq!(mse(&[3.0], &[1.0]), 4.0);
        assert_eq!(mse(&[0.0, 1.0], &[0.0, 3.0]), 2.0);
    }

    #[test]
    fn default_parameter_count_is_pinned() {
        let m = ModelParams::<f32>::init(&ModelConfig::default()).unwrap();
        assert_eq!(m.parameter_count(), 4_038_660);
    }

    #[test]
    fn batches_match_single_windows() {
        let cfg = ModelConfig { dropout_p: 0.3, ..ModelConfig::reduced() };
        let m = perturbed(&cfg);
        let xs: Vec<Vec<f64>> = (0..3).map(|s| random_input(&cfg, s)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        for (b, x) in m.predict_batch(&refs).unwrap().iter().zip(&xs) {
            assert!((b - m.predict(x).unwrap()).abs() < 1e-12);
        }

        let batch: Vec<(&[f64], f64)> = refs.iter().zip([0.1, -0.2, 0.3]).map(|(x, y)| (*x, y)).collect();
        let drops = || (0..3).map(|i| Dropout::new(0.3, 5, i)).collect::<Vec<_>>();
        let mut joint = m.store.zeros_like();
        let l = m.accumulate_gradient(&batch, &mut drops(), 0.5, &mut joint).unwrap();
        let mut split = m.store.zeros_like();
        let mut ls = 0.0;
        for (item, mut d) in batch.iter().zip(drops()) {
            ls += m
                .accumulate_gradient(std::slice::from_ref(item), std::slice::from_mut(&mut d), 0.5, &mut split)
                .unwrap();
        }
        assert!((l - ls).abs() < 1e-12);
        for (a, b) in joint.tensors.iter().zip(&split.tensors) {
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() < 1e-10 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn inference_is_deterministic_and_shape_checked() {
        let cfg = ModelConfig::reduced();
        let m = perturbed(&cfg);
        let x = random_input(&cfg, 1);
        assert_eq!(m.predict(&x).unwrap().to_bits(), m.predict(&x).unwrap().to_bits());
        assert!(matches!(m.predict(&x[1..]), Err(Error::Input(_))));
    }

    #[test]
    fn trace_order_matters() {
        let cfg = ModelConfig::reduced();
        let m = perturbed(&cfg);
        let x = random_input(&cfg, 2);
        let d = cfg.input_dim;
        let mut swapped = x.clone();
        swapped[..d].copy_from_slice(&x[d..2 * d]);
        swapped[d..2 * d].copy_from_slice(&x[..d]);
        assert!((m.predict(&x).unwrap() - m.predict(&swapped).unwrap()).abs() > 1e-9);
    }

    #[test]
    fn blend_endpoints_isolate_pooling_paths() {
        let cfg = ModelConfig::reduced();
        let x = random_input(&cfg, 3);
        for (alpha, silenced) in [(1.0, "pool_pre.weight"), (0.0, "pool_post.weight")] {
            let mut m = perturbed(&cfg);
            m.set_alpha(alpha);
            let before = m.predict(&x).unwrap();
            for v in &mut m.store.by_name_mut(silenced).unwrap().data {
                *v = 0.0;
            }
            assert_eq!(m.predict(&x).unwrap(), before, "alpha {alpha}");
            // the other path does matter
            let live = if alpha == 1.0 { "pool_post.weight" } else { "pool_pre.weight" };
            for v in &mut m.store.by_name_mut(live).unwrap().data {
                *v = 0.0;
            }
            assert_ne!(m.predict(&x).unwrap(), before);
        }
    }

    #[test]
    fn post_only_pooling_ignores_alpha() {
        let mut cfg = ModelConfig::reduced();
        cfg.pooling = Pooling::PostOnly;
        let mut m = perturbed(&cfg);
        let x = random_input(&cfg, 4);
        let a = m.predict(&x).unwrap();
        m.set_alpha(0.9);
        assert_eq!(m.predict(&x).unwrap(), a);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = ModelConfig::reduced();
        let m = perturbed(&cfg);
        let batch: Vec<(Vec<f64>, f64)> = (0..3).map(|i| (random_input(&cfg, 10 + i), 0.3 * i as f64 - 0.2)).collect();
        let check = m.gradient_check(&batch, 60, 5).unwrap();
        assert_eq!(check.checked, 60);
        assert!(check.names.iter().any(|n| n == "alpha"));
        assert!(check.names.iter().any(|n| n == "pos_embedding"));
        assert!(check.max_rel_error <= 1e-4, "max relative error {}", check.max_rel_error);
    }

    #[test]
    fn alpha_gradient_is_blend_difference() {
        let cfg = ModelConfig::reduced();
        let m = perturbed(&cfg);
        let x = random_input(&cfg, 20);
        let refs = [(x.as_slice(), 0.5)];
        let (_, grads) = m.loss_and_gradient(&refs).unwrap();
        let h = 1e-5;
        let mut plus = m.clone();
        plus.set_alpha(m.alpha() + h);
        let mut minus = m.clone();
        minus.set_alpha(m.alpha() - h);
        let fd = (plus.loss_and_gradient(&refs).unwrap().0 - minus.loss_and_gradient(&refs).unwrap().0) / (2.0 * h);
        let an = grads.tensors[m.alpha_id()].data[0];
        assert!((fd - an).abs() <= 1e-6 * fd.abs().max(1e-3), "{an} vs {fd}");
    }

    #[test]
    fn perfect_prediction_gives_zero_head_bias_gradient() {
        let cfg = ModelConfig::reduced();
        let m = perturbed(&cfg);
        let x = random_input(&cfg, 30);
        let y = m.predict(&x).unwrap();
        let (loss, grads) = m.loss_and_gradient(&[(x.as_slice(), y)]).unwrap();
        assert!(loss < 1e-24);
        let b = m.store.id("head.b2").unwrap();
        assert!(grads.tensors[b].data[0].abs() < 1e-12);
    }

    #[test]
    fn no_encoder_variant_runs() {
        let mut cfg = ModelConfig::reduced();
        cfg.linear_encoder = false;
        cfg.token_dim = cfg.input_dim;
        let m = perturbed(&cfg);
        assert!(m.store.id("encoder.weight").is_none());
        assert!(m.predict(&random_input(&cfg, 5)).unwrap().is_finite());
    }

    #[test]
    fn single_precision_inference() {
        let cfg = ModelConfig::reduced();
        let m64 = perturbed(&cfg);
        let m32: ModelParams<f32> = m64.cast();
        let x = random_input(&cfg, 6);
        assert!((m32.predict(&x).unwrap() - m64.predict(&x).unwrap()).abs() < 1e-3);
    }
}
