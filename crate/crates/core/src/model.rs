//! Bag-level attention over sentence and path encodings, the optional
//! complexity-ranked path attention, the relation classifier and the joint
//! KG + classification objective, with hand-derived gradients.

use rand::{Rng, SeedableRng};

use crate::complexity::{rank_and_group, ComplexityGroups, ComplexityWeights};
use crate::encoders::{cnn_max, cnn_max_backward, embed, embed_backward, featurize, CnnCache, KgParams, Norm, TokenFeatures};
use crate::error::{Error, Result};
use crate::graph::PathType;
use crate::numerics::ops::{self, axpy, dot_slice};
use crate::numerics::{finite_difference_check, sample_coords, GradCheckReport, LrGroup, NamedTensor, ParamSet, ParamSlot, Tensor};

/// Classifier input layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `[s_all; p_all]`
    Base,
    /// `[s_all; p_all; p_complex; p_simple]`
    Ranking,
}

impl Mode {
    pub fn blocks(self) -> usize {
        match self {
            Mode::Base => 2,
            Mode::Ranking => 4,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "base" => Ok(Mode::Base),
            "ranking" => Ok(Mode::Ranking),
            other => Err(format!("expected base or ranking, got `{other}`")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Base => "base",
            Mode::Ranking => "ranking",
        })
    }
}

/// Everything that fixes parameter shapes and forward behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub vocab_size: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub kg_dim: usize,
    pub filters: usize,
    pub window: usize,
    pub maxdist: usize,
    pub mode: Mode,
    pub kg_bias: f64,
    pub norm: Norm,
    pub j: usize,
    pub complexity: ComplexityWeights,
    pub dropout: f64,
    /// Let the attention query `t − h` receive gradient from the
    /// classification loss. Off by default: entity embeddings then learn
    /// only from the KG term.
    pub attention_grad_to_kg: bool,
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        self.word_dim + 2 * self.pos_dim
    }

    pub fn classifier_dim(&self) -> usize {
        self.mode.blocks() * self.filters
    }
}

/// A path as model input.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPath {
    pub features: TokenFeatures,
    pub path_type: PathType,
    pub tau1: usize,
    pub tau2: usize,
}

/// One training or evaluation unit in index space.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBag {
    pub head: usize,
    pub tail: usize,
    pub label: usize,
    pub sentences: Vec<TokenFeatures>,
    pub paths: Vec<EncodedPath>,
}

pub const SLOT_NAMES: [&str; 12] = [
    "entity_emb",
    "relation_emb",
    "word_emb",
    "pos_emb",
    "conv_sent.w",
    "conv_sent.b",
    "conv_path.w",
    "conv_path.b",
    "attn.w",
    "attn.b",
    "cls.m",
    "cls.d",
];

const ENTITY: usize = 0;
const RELATION: usize = 1;
const WORD: usize = 2;
const POS: usize = 3;
const CONV_SENT_W: usize = 4;
const CONV_SENT_B: usize = 5;
const CONV_PATH_W: usize = 6;
const CONV_PATH_B: usize = 7;
const ATTN_W: usize = 8;
const ATTN_B: usize = 9;
const CLS_M: usize = 10;
const CLS_D: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub word_emb: ParamSlot,
    pub pos_emb: ParamSlot,
    pub conv_sent_w: ParamSlot,
    pub conv_sent_b: ParamSlot,
    pub conv_path_w: ParamSlot,
    pub conv_path_b: ParamSlot,
    pub attn_w: ParamSlot,
    pub attn_b: ParamSlot,
    pub cls_m: ParamSlot,
    pub cls_d: ParamSlot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub kg: KgParams,
    pub net: NetParams,
}

/// Gradient buffers in [`SLOT_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            axpy(1.0, b.data(), a.data_mut());
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).expect("shape")
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    uniform(rng, &[rows, cols], (6.0 / (rows + cols) as f64).sqrt())
}

/// Attention forward state for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCache {
    /// Positions of the attended items in the caller's vector list.
    pub items: Vec<usize>,
    pub x: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
}

/// `x_i = tanh(W v_i + b)`, `a = softmax_i ⟨r_ht, x_i⟩`, output `Σ a_i v_i`,
/// over the vectors selected by `items`.
pub fn bag_attention(
    vecs: &[Vec<f64>],
    items: &[usize],
    r_ht: &[f64],
    attn_w: &Tensor,
    attn_b: &Tensor,
) -> Result<AttentionCache> {
    if items.is_empty() {
        return Err(Error::Empty("attention bag"));
    }
    let width = vecs[items[0]].len();
    if attn_w.shape() != [r_ht.len(), width] {
        return Err(Error::ShapeMismatch { left: attn_w.shape().to_vec(), right: vec![r_ht.len(), width] });
    }
    let mut x = Vec::with_capacity(items.len());
    let mut logits = Vec::with_capacity(items.len());
    for &i in items {
        let v = &vecs[i];
        let xi: Vec<f64> =
            (0..r_ht.len()).map(|k| (dot_slice(attn_w.row(k), v) + attn_b.data()[k]).tanh()).collect();
        logits.push(dot_slice(r_ht, &xi));
        x.push(xi);
    }
    let weights = ops::softmax_slice(&logits);
    let mut output = vec![0.0; width];
    for (&i, &a) in items.iter().zip(&weights) {
        axpy(a, &vecs[i], &mut output);
    }
    Ok(AttentionCache { items: items.to_vec(), x, weights, output })
}

/// Backward of [`bag_attention`]. Accumulates into `g_w`, `g_b`, the item
/// gradients `g_vecs` and, when given, the query gradient `g_r`.
#[allow(clippy::too_many_arguments)]
pub fn bag_attention_backward(
    cache: &AttentionCache,
    vecs: &[Vec<f64>],
    r_ht: &[f64],
    attn_w: &Tensor,
    g_out: &[f64],
    g_w: &mut Tensor,
    g_b: &mut Tensor,
    g_vecs: &mut [Vec<f64>],
    mut g_r: Option<&mut [f64]>,
) {
    let g_a: Vec<f64> = cache.items.iter().map(|&i| dot_slice(g_out, &vecs[i])).collect();
    let g_logit = ops::softmax_backward_slice(&cache.weights, &g_a);
    for (n, &i) in cache.items.iter().enumerate() {
        axpy(cache.weights[n], g_out, &mut g_vecs[i]);
        let xi = &cache.x[n];
        if let Some(g_r) = g_r.as_deref_mut() {
            axpy(g_logit[n], xi, g_r);
        }
        for k in 0..r_ht.len() {
            let g_pre = g_logit[n] * r_ht[k] * (1.0 - xi[k] * xi[k]);
            if g_pre == 0.0 {
                continue;
            }
            g_b.data_mut()[k] += g_pre;
            axpy(g_pre, &vecs[i], g_w.row_mut(k));
            axpy(g_pre, attn_w.row(k), &mut g_vecs[i]);
        }
    }
}

/// Attention restricted to the complex and the simple group separately,
/// each normalized within its own group.
pub fn complexity_guided_reps(
    path_vecs: &[Vec<f64>],
    groups: &ComplexityGroups,
    r_ht: &[f64],
    attn_w: &Tensor,
    attn_b: &Tensor,
) -> Result<(AttentionCache, AttentionCache)> {
    let complex = bag_attention(path_vecs, &groups.complex, r_ht, attn_w, attn_b)?;
    let simple = bag_attention(path_vecs, &groups.simple, r_ht, attn_w, attn_b)?;
    Ok((complex, simple))
}

/// `o = M·features + d`; returns `(o, softmax(o))`.
pub fn classify(features: &[f64], m: &Tensor, d: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    if m.shape().len() != 2 || m.shape()[1] != features.len() || d.shape() != [m.rows()] {
        return Err(Error::ShapeMismatch { left: m.shape().to_vec(), right: vec![d.len(), features.len()] });
    }
    let logits: Vec<f64> = (0..m.rows()).map(|r| dot_slice(m.row(r), features) + d.data()[r]).collect();
    let probs = ops::softmax_slice(&logits);
    Ok((logits, probs))
}

/// Forward pass of one bag.
#[derive(Debug, Clone)]
pub struct BagForward {
    pub r_ht: Vec<f64>,
    pub sent_vecs: Vec<Vec<f64>>,
    pub path_vecs: Vec<Vec<f64>>,
    pub s_all: Vec<f64>,
    pub p_all: Vec<f64>,
    pub p_complex: Option<Vec<f64>>,
    pub p_simple: Option<Vec<f64>>,
    pub sent_attention: Option<AttentionCache>,
    pub path_attention: Option<AttentionCache>,
    pub complex_attention: Option<AttentionCache>,
    pub simple_attention: Option<AttentionCache>,
    /// Classifier input after dropout.
    pub features: Vec<f64>,
    pub dropout_mask: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    pub class_probs: Vec<f64>,
    /// Path vectors that entered this pass, by [`PathType::index`].
    pub path_type_counts: [usize; 3],
    sent_cnn: Vec<CnnCache>,
    path_cnn: Vec<CnnCache>,
}

impl BagForward {
    /// Sentence attention weights `a_i` (empty when the bag has no sentences).
    pub fn sent_weights(&self) -> &[f64] {
        self.sent_attention.as_ref().map(|c| c.weights.as_slice()).unwrap_or(&[])
    }

    /// Global path attention weights `a′_i`.
    pub fn path_weights(&self) -> &[f64] {
        self.path_attention.as_ref().map(|c| c.weights.as_slice()).unwrap_or(&[])
    }
}

/// Side information from a backward pass.
#[derive(Debug, Clone, Default)]
pub struct BackwardInfo {
    /// L2 norm of the loss gradient w.r.t. each path's embedded input rows.
    pub path_input_grad_norms: Vec<f64>,
    pub sentence_input_grad_norms: Vec<f64>,
}

impl Model {
    pub fn new<R: Rng>(arch: Architecture, rng: &mut R) -> Self {
        let kg = KgParams::new(arch.num_entities, arch.num_relations, arch.kg_dim, arch.kg_bias, arch.norm, rng);
        let span = arch.window * arch.input_dim();
        let net = NetParams {
            word_emb: ParamSlot::new(SLOT_NAMES[WORD], uniform(rng, &[arch.vocab_size, arch.word_dim], 0.25), LrGroup::Net),
            pos_emb: ParamSlot::new(SLOT_NAMES[POS], uniform(rng, &[2 * arch.maxdist + 1, arch.pos_dim], 0.25), LrGroup::Net),
            conv_sent_w: ParamSlot::new(SLOT_NAMES[CONV_SENT_W], xavier(rng, arch.filters, span), LrGroup::Net),
            conv_sent_b: ParamSlot::new(SLOT_NAMES[CONV_SENT_B], Tensor::zeros(&[arch.filters]), LrGroup::Net),
            conv_path_w: ParamSlot::new(SLOT_NAMES[CONV_PATH_W], xavier(rng, arch.filters, span), LrGroup::Net),
            conv_path_b: ParamSlot::new(SLOT_NAMES[CONV_PATH_B], Tensor::zeros(&[arch.filters]), LrGroup::Net),
            attn_w: ParamSlot::new(SLOT_NAMES[ATTN_W], xavier(rng, arch.kg_dim, arch.filters), LrGroup::Net),
            attn_b: ParamSlot::new(SLOT_NAMES[ATTN_B], Tensor::zeros(&[arch.kg_dim]), LrGroup::Net),
            cls_m: ParamSlot::new(SLOT_NAMES[CLS_M], xavier(rng, arch.num_relations, arch.classifier_dim()), LrGroup::Net),
            cls_d: ParamSlot::new(SLOT_NAMES[CLS_D], Tensor::zeros(&[arch.num_relations]), LrGroup::Net),
        };
        Model { arch, kg, net }
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients { tensors: self.slots().iter().map(|s| Tensor::zeros(s.value.shape())).collect() }
    }

    /// Adds `grads` into each slot's `grad`.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (slot, g) in self.slots_mut().into_iter().zip(&grads.tensors) {
            axpy(1.0, g.data(), slot.grad.data_mut());
        }
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        self.slots().into_iter().map(|s| NamedTensor { name: s.name.clone(), tensor: s.value.clone() }).collect()
    }

    /// Replaces parameter values from named tensors; every slot must be
    /// present with a matching shape.
    pub fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        for slot in self.slots_mut() {
            let t = tensors
                .iter()
                .find(|t| t.name == slot.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", slot.name)))?;
            t.tensor.expect_shape(slot.value.shape())?;
            slot.value = t.tensor.clone();
        }
        Ok(())
    }

    fn encode(&self, features: &TokenFeatures, kernel: &Tensor, bias: &Tensor) -> Result<CnnCache> {
        let input = embed(features, &self.net.word_emb.value, &self.net.pos_emb.value)?;
        cnn_max(input, kernel, bias, self.arch.window)
    }

    /// Forward pass. When `dropout_rng` is given and the dropout rate is
    /// positive, an inverted-dropout mask is drawn for the classifier input.
    pub fn forward<R: Rng>(&self, bag: &EncodedBag, dropout_rng: Option<&mut R>) -> Result<BagForward> {
        let a = &self.arch;
        let nu = a.filters;
        let r_ht = self.kg.latent_relation(bag.head, bag.tail)?;
        let (w, b) = (&self.net.attn_w.value, &self.net.attn_b.value);

        let sent_cnn = bag
            .sentences
            .iter()
            .map(|s| self.encode(s, &self.net.conv_sent_w.value, &self.net.conv_sent_b.value))
            .collect::<Result<Vec<_>>>()?;
        let path_cnn = bag
            .paths
            .iter()
            .map(|p| self.encode(&p.features, &self.net.conv_path_w.value, &self.net.conv_path_b.value))
            .collect::<Result<Vec<_>>>()?;
        let sent_vecs: Vec<Vec<f64>> = sent_cnn.iter().map(|c| c.output.data().to_vec()).collect();
        let path_vecs: Vec<Vec<f64>> = path_cnn.iter().map(|c| c.output.data().to_vec()).collect();
        let mut path_type_counts = [0usize; 3];
        for p in &bag.paths {
            path_type_counts[p.path_type.index()] += 1;
        }

        let all = |n: usize| (0..n).collect::<Vec<_>>();
        let sent_attention =
            if sent_vecs.is_empty() { None } else { Some(bag_attention(&sent_vecs, &all(sent_vecs.len()), &r_ht, w, b)?) };
        let path_attention =
            if path_vecs.is_empty() { None } else { Some(bag_attention(&path_vecs, &all(path_vecs.len()), &r_ht, w, b)?) };
        let (complex_attention, simple_attention) = if a.mode == Mode::Ranking && !path_vecs.is_empty() {
            let taus: Vec<(usize, usize)> = bag.paths.iter().map(|p| (p.tau1, p.tau2)).collect();
            let groups = rank_and_group(&taus, a.j, a.complexity)?;
            let (c, s) = complexity_guided_reps(&path_vecs, &groups, &r_ht, w, b)?;
            (Some(c), Some(s))
        } else {
            (None, None)
        };

        let zero = || vec![0.0; nu];
        let s_all = sent_attention.as_ref().map(|c| c.output.clone()).unwrap_or_else(zero);
        let p_all = path_attention.as_ref().map(|c| c.output.clone()).unwrap_or_else(zero);
        let (p_complex, p_simple) = match a.mode {
            Mode::Base => (None, None),
            Mode::Ranking => (
                Some(complex_attention.as_ref().map(|c| c.output.clone()).unwrap_or_else(zero)),
                Some(simple_attention.as_ref().map(|c| c.output.clone()).unwrap_or_else(zero)),
            ),
        };

        let mut features = Vec::with_capacity(a.classifier_dim());
        features.extend_from_slice(&s_all);
        features.extend_from_slice(&p_all);
        if let (Some(c), Some(s)) = (&p_complex, &p_simple) {
            features.extend_from_slice(c);
            features.extend_from_slice(s);
        }
        let dropout_mask = match dropout_rng {
            Some(rng) if a.dropout > 0.0 => {
                let keep = 1.0 - a.dropout;
                let mask: Vec<f64> =
                    (0..features.len()).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                for (f, m) in features.iter_mut().zip(&mask) {
                    *f *= m;
                }
                Some(mask)
            }
            _ => None,
        };
        let (logits, class_probs) = classify(&features, &self.net.cls_m.value, &self.net.cls_d.value)?;

        Ok(BagForward {
            r_ht,
            sent_vecs,
            path_vecs,
            s_all,
            p_all,
            p_complex,
            p_simple,
            sent_attention,
            path_attention,
            complex_attention,
            simple_attention,
            features,
            dropout_mask,
            logits,
            class_probs,
            path_type_counts,
            sent_cnn,
            path_cnn,
        })
    }

    /// Per-bag objective: `−log P(r | S, P) − log P(r | h, t)` with `r` the bag label.
    pub fn bag_loss(&self, bag: &EncodedBag, fwd: &BagForward) -> Result<f64> {
        let cls = -ops::log_softmax_at(&fwd.logits, bag.label);
        let kg = -self.kg.kg_log_prob(bag.head, bag.label, bag.tail)?;
        Ok(cls + kg)
    }

    /// Accumulates `scale · ∇ bag_loss` into `grads`.
    pub fn backward(&self, bag: &EncodedBag, fwd: &BagForward, scale: f64, grads: &mut Gradients) -> Result<BackwardInfo> {
        let a = &self.arch;
        let nu = a.filters;
        let g = &mut grads.tensors;

        // Classifier.
        let mut g_logits = fwd.class_probs.clone();
        g_logits[bag.label] -= 1.0;
        g_logits.iter_mut().for_each(|v| *v *= scale);
        let mut g_features = vec![0.0; fwd.features.len()];
        for (r, &gl) in g_logits.iter().enumerate() {
            g[CLS_D].data_mut()[r] += gl;
            axpy(gl, &fwd.features, g[CLS_M].row_mut(r));
            axpy(gl, self.net.cls_m.value.row(r), &mut g_features);
        }
        if let Some(mask) = &fwd.dropout_mask {
            for (gf, m) in g_features.iter_mut().zip(mask) {
                *gf *= m;
            }
        }
        let block = |k: usize| &g_features[k * nu..(k + 1) * nu];

        // Attention blocks.
        let (w, attn) = (&self.net.attn_w.value, (ATTN_W, ATTN_B));
        let mut g_r = vec![0.0; fwd.r_ht.len()];
        let want_r = a.attention_grad_to_kg;
        let mut g_sent = vec![vec![0.0; nu]; fwd.sent_vecs.len()];
        let mut g_path = vec![vec![0.0; nu]; fwd.path_vecs.len()];
        let mut attend = |cache: &Option<AttentionCache>, vecs: &[Vec<f64>], g_out: &[f64], g_items: &mut [Vec<f64>], g: &mut Vec<Tensor>| {
            if let Some(c) = cache {
                let (gw, gb) = two_mut(g, attn.0, attn.1);
                let gr = if want_r { Some(g_r.as_mut_slice()) } else { None };
                bag_attention_backward(c, vecs, &fwd.r_ht, w, g_out, gw, gb, g_items, gr);
            }
        };
        attend(&fwd.sent_attention, &fwd.sent_vecs, block(0), &mut g_sent, g);
        attend(&fwd.path_attention, &fwd.path_vecs, block(1), &mut g_path, g);
        if a.mode == Mode::Ranking {
            attend(&fwd.complex_attention, &fwd.path_vecs, block(2), &mut g_path, g);
            attend(&fwd.simple_attention, &fwd.path_vecs, block(3), &mut g_path, g);
        }

        // Encoders.
        let mut info = BackwardInfo::default();
        for (n, s) in bag.sentences.iter().enumerate() {
            let norm = self.encoder_backward(s, &fwd.sent_cnn[n], &g_sent[n], CONV_SENT_W, CONV_SENT_B, g);
            info.sentence_input_grad_norms.push(norm);
        }
        for (n, p) in bag.paths.iter().enumerate() {
            let norm = self.encoder_backward(&p.features, &fwd.path_cnn[n], &g_path[n], CONV_PATH_W, CONV_PATH_B, g);
            info.path_input_grad_norms.push(norm);
        }

        // KG term, plus the attention-query gradient when enabled.
        let (_, kg_grad) = self.kg.nll_backward(bag.head, bag.label, bag.tail, scale)?;
        for (row, v) in &kg_grad.entity_rows {
            axpy(1.0, v, g[ENTITY].row_mut(*row));
        }
        for (row, v) in &kg_grad.relation_rows {
            axpy(1.0, v, g[RELATION].row_mut(*row));
        }
        if want_r {
            axpy(1.0, &g_r, g[ENTITY].row_mut(bag.tail));
            axpy(-1.0, &g_r, g[ENTITY].row_mut(bag.head));
        }
        Ok(info)
    }

    fn encoder_backward(
        &self,
        features: &TokenFeatures,
        cache: &CnnCache,
        g_vec: &[f64],
        w_slot: usize,
        b_slot: usize,
        g: &mut [Tensor],
    ) -> f64 {
        let kernel = &self.slots()[w_slot].value;
        let g_out = Tensor::vector(g_vec.to_vec());
        let (gw, gb) = two_mut(g, w_slot, b_slot);
        let g_input = cnn_max_backward(cache, kernel, self.arch.window, &g_out, gw, gb);
        let (gword, gpos) = two_mut(g, WORD, POS);
        embed_backward(features, &g_input, gword, gpos);
        g_input.norm()
    }

    /// Mean loss over `bags` and its gradient. Dropout masks are drawn from
    /// `rng` bag by bag in order; `None` disables dropout.
    pub fn batch_loss_and_grad<R: Rng>(
        &self,
        bags: &[&EncodedBag],
        mut rng: Option<&mut R>,
    ) -> Result<(f64, Gradients, [usize; 3])> {
        let mut grads = self.zero_gradients();
        let scale = 1.0 / bags.len() as f64;
        let mut loss = 0.0;
        let mut counts = [0usize; 3];
        for bag in bags {
            let fwd = self.forward(bag, rng.as_deref_mut())?;
            loss += self.bag_loss(bag, &fwd)? * scale;
            self.backward(bag, &fwd, scale, &mut grads)?;
            for k in 0..3 {
                counts[k] += fwd.path_type_counts[k];
            }
        }
        Ok((loss, grads, counts))
    }

    /// Mean loss without dropout.
    pub fn batch_loss(&self, bags: &[&EncodedBag]) -> Result<f64> {
        let mut total = 0.0;
        for bag in bags {
            let fwd = self.forward::<rand_chacha::ChaCha8Rng>(bag, None)?;
            total += self.bag_loss(bag, &fwd)?;
        }
        Ok(total / bags.len() as f64)
    }
}

fn two_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert!(i < j);
    let (a, b) = v.split_at_mut(j);
    (&mut a[i], &mut b[0])
}

impl ParamSet for Model {
    fn slots(&self) -> Vec<&ParamSlot> {
        let n = &self.net;
        vec![
            &self.kg.entity_emb,
            &self.kg.relation_emb,
            &n.word_emb,
            &n.pos_emb,
            &n.conv_sent_w,
            &n.conv_sent_b,
            &n.conv_path_w,
            &n.conv_path_b,
            &n.attn_w,
            &n.attn_b,
            &n.cls_m,
            &n.cls_d,
        ]
    }

    fn slots_mut(&mut self) -> Vec<&mut ParamSlot> {
        let n = &mut self.net;
        vec![
            &mut self.kg.entity_emb,
            &mut self.kg.relation_emb,
            &mut n.word_emb,
            &mut n.pos_emb,
            &mut n.conv_sent_w,
            &mut n.conv_sent_b,
            &mut n.conv_path_w,
            &mut n.conv_path_b,
            &mut n.attn_w,
            &mut n.attn_b,
            &mut n.cls_m,
            &mut n.cls_d,
        ]
    }
}

/// A tiny architecture for gradient checks and tests.
pub fn toy_architecture(mode: Mode) -> Architecture {
    Architecture {
        vocab_size: 12,
        num_entities: 6,
        num_relations: 3,
        word_dim: 4,
        pos_dim: 2,
        kg_dim: 3,
        filters: 5,
        window: 3,
        maxdist: 4,
        mode,
        kg_bias: 7.0,
        norm: Norm::L2,
        j: 1,
        complexity: ComplexityWeights::default(),
        dropout: 0.5,
        attention_grad_to_kg: true,
    }
}

/// A bag of random token sequences with strictly growing path lengths.
pub fn random_bag<R: Rng>(rng: &mut R, arch: &Architecture, sentences: usize, paths: usize) -> EncodedBag {
    let seq = |rng: &mut R, len: usize| {
        let words = (0..len).map(|_| rng.gen_range(0..arch.vocab_size)).collect();
        featurize(words, 0, len - 1, arch.maxdist).unwrap()
    };
    let head = rng.gen_range(0..arch.num_entities);
    let tail = (head + 1 + rng.gen_range(0..arch.num_entities - 1)) % arch.num_entities;
    EncodedBag {
        head,
        tail,
        label: rng.gen_range(0..arch.num_relations),
        sentences: (0..sentences).map(|_| { let n = rng.gen_range(2..7); seq(rng, n) }).collect(),
        paths: (0..paths)
            .map(|k| {
                let len = 3 + 2 * k + rng.gen_range(0..2);
                let features = seq(rng, len);
                let path_type = PathType::ALL[k % 3];
                EncodedPath { tau2: len - rng.gen_range(0..2), tau1: len, features, path_type }
            })
            .collect(),
    }
}

/// Central-difference check of the full joint loss over `bags` random toy
/// bags with dropout off. The attention query gradient is switched on so
/// that the entity gradient is a true gradient of the loss.
pub fn check_gradients(mode: Mode, seed: u64, bags: usize, per_slot: usize, eps: f64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut arch = toy_architecture(mode);
    arch.attention_grad_to_kg = true;
    let mut model = Model::new(arch.clone(), &mut rng);
    let batch: Vec<EncodedBag> = (0..bags).map(|i| random_bag(&mut rng, &arch, 1 + i % 3, 2 + i % 4)).collect();
    let refs: Vec<&EncodedBag> = batch.iter().collect();
    for slot in model.slots_mut() {
        slot.zero_grad();
    }
    let (_, grads, _) = model.batch_loss_and_grad::<rand_chacha::ChaCha8Rng>(&refs, None)?;
    model.accumulate(&grads);
    let coords = sample_coords(&model, per_slot, &mut rng);
    Ok(finite_difference_check(&mut model, |m| m.batch_loss(&refs).unwrap_or(f64::NAN), &coords, eps, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn vecs(n: usize, width: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn single_item_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = vecs(1, 4, &mut rng);
        let w = xavier(&mut rng, 3, 4);
        let c = bag_attention(&v, &[0], &[1.0, -2.0, 0.5], &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(c.weights, vec![1.0]);
        assert_eq!(c.output, v[0]);
    }

    #[test]
    fn identical_items_share_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = vec![vec![0.3, -0.2], vec![0.3, -0.2]];
        let w = xavier(&mut rng, 3, 2);
        let c = bag_attention(&v, &[0, 1], &[1.0, 2.0, 3.0], &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(c.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn attention_matches_direct_arithmetic() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let w = Tensor::matrix(2, 2, vec![0.5, -0.5, 1.0, 0.25]).unwrap();
        let b = Tensor::vector(vec![0.1, -0.1]);
        let r = [2.0, -1.0];
        let c = bag_attention(&v, &[0, 1, 2], &r, &w, &b).unwrap();
        let x = |v: &[f64]| [(0.5 * v[0] - 0.5 * v[1] + 0.1f64).tanh(), (v[0] + 0.25 * v[1] - 0.1f64).tanh()];
        let logits: Vec<f64> = v.iter().map(|vi| { let xi = x(vi); 2.0 * xi[0] - xi[1] }).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for i in 0..3 {
            assert!((c.weights[i] - logits[i].exp() / z).abs() < 1e-15);
        }
        let out0 = c.weights[0] + c.weights[2];
        assert!((c.output[0] - out0).abs() < 1e-15);
        assert!(bag_attention(&v, &[], &r, &w, &b).is_err());
    }

    #[test]
    fn grouped_attention_normalizes_within_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = vecs(4, 3, &mut rng);
        let w = xavier(&mut rng, 2, 3);
        let b = Tensor::zeros(&[2]);
        let r = [1.5, -0.5];
        let groups = rank_and_group(&[(9, 9), (2, 2), (7, 7), (1, 1)], 2, ComplexityWeights::default()).unwrap();
        let (c, s) = complexity_guided_reps(&v, &groups, &r, &w, &b).unwrap();
        assert_eq!(c.items, vec![0, 2]);
        assert_eq!(s.items, vec![1, 3]);
        let logit = |i: usize| {
            let x: Vec<f64> = (0..2).map(|k| dot_slice(w.row(k), &v[i]).tanh()).collect();
            dot_slice(&r, &x)
        };
        let (l0, l2) = (logit(0), logit(2));
        let oracle = l0.exp() / (l0.exp() + l2.exp());
        assert!((c.weights[0] - oracle).abs() < 1e-14);
        // group of one
        let one = ComplexityGroups { complex: vec![3], simple: vec![1] };
        let (c, _) = complexity_guided_reps(&v, &one, &r, &w, &b).unwrap();
        assert_eq!(c.output, v[3]);
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let (_, p) = classify(&[1.0, 2.0, 3.0, 4.0], &Tensor::zeros(&[4, 4]), &Tensor::zeros(&[4])).unwrap();
        assert!(p.iter().all(|&x| x == 0.25));
        assert!(classify(&[1.0, 2.0], &Tensor::zeros(&[4, 4]), &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn classify_two_relation_oracle() {
        let m = Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let d = Tensor::vector(vec![0.0, -1.0]);
        let (o, p) = classify(&[0.3, 0.4], &m, &d).unwrap();
        assert!((o[0] - (-0.1)).abs() < 1e-15 && (o[1] - (0.15 + 0.8 - 1.0)).abs() < 1e-15);
        let p0 = 1.0 / (1.0 + (o[1] - o[0]).exp());
        assert!((p[0] - p0).abs() < 1e-15);
    }

    #[test]
    fn uniform_model_loss_is_log_nr_plus_log_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arch = toy_architecture(Mode::Base);
        let mut model = Model::new(arch.clone(), &mut rng);
        model.net.cls_m.value.fill(0.0);
        model.kg.relation_emb.value.fill(0.0);
        let bag = random_bag(&mut rng, &arch, 2, 2);
        let fwd = model.forward::<ChaCha8Rng>(&bag, None).unwrap();
        let expected = 2.0 * (arch.num_relations as f64).ln();
        assert!((model.bag_loss(&bag, &fwd).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn forward_normalization_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [Mode::Base, Mode::Ranking] {
            let arch = toy_architecture(mode);
            let model = Model::new(arch.clone(), &mut rng);
            let bag = random_bag(&mut rng, &arch, 3, 5);
            let fwd = model.forward::<ChaCha8Rng>(&bag, None).unwrap();
            assert_eq!(fwd.features.len(), mode.blocks() * arch.filters);
            for w in [fwd.sent_weights(), fwd.path_weights(), fwd.class_probs.as_slice()] {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_evidence_is_zero_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = toy_architecture(Mode::Ranking);
        let model = Model::new(arch.clone(), &mut rng);
        let mut bag = random_bag(&mut rng, &arch, 2, 0);
        let fwd = model.forward::<ChaCha8Rng>(&bag, None).unwrap();
        assert!(fwd.p_all.iter().chain(fwd.p_complex.as_ref().unwrap()).all(|&v| v == 0.0));
        bag.sentences.clear();
        let fwd = model.forward::<ChaCha8Rng>(&bag, None).unwrap();
        assert!(fwd.s_all.iter().all(|&v| v == 0.0));
        assert!((fwd.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = vecs(5, 4, &mut rng);
        let w = xavier(&mut rng, 3, 4);
        let b = Tensor::vector(vec![0.1, 0.2, -0.3]);
        let r = [0.5, -1.0, 2.0];
        let c = bag_attention(&v, &[0, 1, 2, 3, 4], &r, &w, &b).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let c2 = bag_attention(&v, &perm, &r, &w, &b).unwrap();
        for (n, &i) in perm.iter().enumerate() {
            assert!((c2.weights[n] - c.weights[i]).abs() < 1e-15);
        }
    }

    fn gradcheck(mode: Mode, kg_grad: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut arch = toy_architecture(mode);
        arch.attention_grad_to_kg = kg_grad;
        let mut model = Model::new(arch.clone(), &mut rng);
        let bags = [random_bag(&mut rng, &arch, 2, 2), random_bag(&mut rng, &arch, 1, 4)];
        let refs: Vec<&EncodedBag> = bags.iter().collect();
        let (_, grads, _) = model.batch_loss_and_grad::<ChaCha8Rng>(&refs, None).unwrap();
        model.accumulate(&grads);
        let mut coords = sample_coords(&model, 24, &mut rng);
        if !kg_grad {
            // With a detached query the entity gradient is not a true gradient.
            coords.retain(|c| c.slot != ENTITY);
        }
        let report = finite_difference_check(&mut model, |m| m.batch_loss(&refs).unwrap(), &coords, 1e-4, 1e-3);
        assert!(report.passed(), "{:#?}", report.failures);
        assert_eq!(report.families().len(), if kg_grad { 12 } else { 11 });
    }

    #[test]
    fn base_mode_gradients() {
        gradcheck(Mode::Base, true);
    }

    #[test]
    fn ranking_mode_gradients() {
        gradcheck(Mode::Ranking, true);
    }

    #[test]
    fn detached_query_gradients() {
        gradcheck(Mode::Ranking, false);
    }

    #[test]
    fn dropout_mask_is_inverted() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let arch = toy_architecture(Mode::Base);
        let model = Model::new(arch.clone(), &mut rng);
        let bag = random_bag(&mut rng, &arch, 2, 2);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(10);
        let fwd = model.forward(&bag, Some(&mut drop_rng)).unwrap();
        let mask = fwd.dropout_mask.unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
    }
}
