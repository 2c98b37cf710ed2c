//! TransE triplet scoring and the CNN-Max evidence encoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::ops::{self, axpy};
use crate::numerics::{LrGroup, ParamSlot, Tensor};

/// Distance used in the TransE score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

impl std::str::FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l1" | "L1" => Ok(Norm::L1),
            "l2" | "L2" => Ok(Norm::L2),
            other => Err(format!("expected l1 or l2, got `{other}`")),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

/// Entity and relation embeddings plus the score offset `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct KgParams {
    pub entity_emb: ParamSlot,
    pub relation_emb: ParamSlot,
    pub bias: f64,
    pub norm: Norm,
}

/// Gradient of the KG log-likelihood for one triplet, as sparse rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KgGrad {
    pub entity_rows: Vec<(usize, Vec<f64>)>,
    pub relation_rows: Vec<(usize, Vec<f64>)>,
}

impl KgParams {
    /// Uniform `±6/√d` initialization.
    pub fn new<R: Rng>(entities: usize, relations: usize, dim: usize, bias: f64, norm: Norm, rng: &mut R) -> Self {
        let bound = 6.0 / (dim as f64).sqrt();
        let mut init = |rows: usize| {
            let data = (0..rows * dim).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::matrix(rows, dim, data).expect("shape")
        };
        let entity_emb = ParamSlot::new("entity_emb", init(entities), LrGroup::Kg);
        let relation_emb = ParamSlot::new("relation_emb", init(relations), LrGroup::Kg);
        KgParams { entity_emb, relation_emb, bias, norm }
    }

    pub fn dim(&self) -> usize {
        self.entity_emb.value.row_len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_emb.value.rows()
    }

    fn entity(&self, e: usize) -> Result<&[f64]> {
        if e >= self.entity_emb.value.rows() {
            return Err(Error::UnknownEntity(format!("#{e}")));
        }
        Ok(self.entity_emb.value.row(e))
    }

    fn relation(&self, r: usize) -> Result<&[f64]> {
        if r >= self.num_relations() {
            return Err(Error::UnknownRelation(format!("#{r}")));
        }
        Ok(self.relation_emb.value.row(r))
    }

    /// `r_ht = t − h`.
    pub fn latent_relation(&self, head: usize, tail: usize) -> Result<Vec<f64>> {
        let h = self.entity(head)?;
        let t = self.entity(tail)?;
        Ok(t.iter().zip(h).map(|(t, h)| t - h).collect())
    }

    fn residual(&self, r_ht: &[f64], r: usize) -> Result<Vec<f64>> {
        Ok(r_ht.iter().zip(self.relation(r)?).map(|(a, b)| a - b).collect())
    }

    fn distance(&self, res: &[f64]) -> f64 {
        match self.norm {
            Norm::L2 => res.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::L1 => res.iter().map(|v| v.abs()).sum(),
        }
    }

    /// `b − ‖(t − h) − r‖`.
    pub fn transe_score(&self, head: usize, relation: usize, tail: usize) -> Result<f64> {
        let r_ht = self.latent_relation(head, tail)?;
        Ok(self.bias - self.distance(&self.residual(&r_ht, relation)?))
    }

    /// Scores of `(head, r, tail)` for every relation `r`.
    pub fn all_scores(&self, head: usize, tail: usize) -> Result<Vec<f64>> {
        if self.num_relations() == 0 {
            return Err(Error::Empty("relation vocabulary"));
        }
        let r_ht = self.latent_relation(head, tail)?;
        (0..self.num_relations()).map(|r| Ok(self.bias - self.distance(&self.residual(&r_ht, r)?))).collect()
    }

    /// Log of the softmax over all relations of the TransE score, at `relation`.
    pub fn kg_log_prob(&self, head: usize, relation: usize, tail: usize) -> Result<f64> {
        let scores = self.all_scores(head, tail)?;
        self.relation(relation)?;
        Ok(ops::log_softmax_at(&scores, relation))
    }

    /// Negative log-likelihood of the triplet and its gradient scaled by `scale`.
    pub fn nll_backward(&self, head: usize, relation: usize, tail: usize, scale: f64) -> Result<(f64, KgGrad)> {
        let scores = self.all_scores(head, tail)?;
        let loss = -ops::log_softmax_at(&scores, relation);
        let mut g_score = ops::softmax_slice(&scores);
        g_score[relation] -= 1.0;

        let r_ht = self.latent_relation(head, tail)?;
        let d = self.dim();
        let mut g_rht = vec![0.0; d];
        let mut relation_rows = Vec::with_capacity(scores.len());
        for (r, &gs) in g_score.iter().enumerate() {
            let res = self.residual(&r_ht, r)?;
            // d score / d res = −d‖res‖/d res
            let g_res = self.distance_grad(&res, -gs * scale);
            axpy(1.0, &g_res, &mut g_rht);
            relation_rows.push((r, g_res.iter().map(|v| -v).collect()));
        }
        let entity_rows = if head == tail {
            vec![(head, vec![0.0; d])]
        } else {
            vec![(head, g_rht.iter().map(|v| -v).collect()), (tail, g_rht)]
        };
        Ok((loss, KgGrad { entity_rows, relation_rows }))
    }

    /// `upstream · ∂‖res‖/∂res`; the subgradient at zero is zero.
    fn distance_grad(&self, res: &[f64], upstream: f64) -> Vec<f64> {
        match self.norm {
            Norm::L2 => {
                let n = self.distance(res);
                if n == 0.0 {
                    vec![0.0; res.len()]
                } else {
                    res.iter().map(|v| upstream * v / n).collect()
                }
            }
            Norm::L1 => res.iter().map(|v| upstream * if *v > 0.0 { 1.0 } else if *v < 0.0 { -1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Word ids plus clipped relative offsets to both entity mentions, already
/// shifted into `0..=2·maxdist`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFeatures {
    pub words: Vec<usize>,
    pub pos1: Vec<usize>,
    pub pos2: Vec<usize>,
}

impl TokenFeatures {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Builds per-token features. The offset of token `i` to a mention at `p`
/// is `clamp(i − p, −maxdist, maxdist) + maxdist`.
pub fn featurize(words: Vec<usize>, e1_pos: usize, e2_pos: usize, maxdist: usize) -> Result<TokenFeatures> {
    let n = words.len();
    for pos in [e1_pos, e2_pos] {
        if pos >= n {
            return Err(Error::PositionOutOfBounds { pos, len: n });
        }
    }
    let offset = |i: usize, p: usize| -> usize {
        let rel = (i as i64 - p as i64).clamp(-(maxdist as i64), maxdist as i64);
        (rel + maxdist as i64) as usize
    };
    Ok(TokenFeatures {
        pos1: (0..n).map(|i| offset(i, e1_pos)).collect(),
        pos2: (0..n).map(|i| offset(i, e2_pos)).collect(),
        words,
    })
}

/// Forward state of one CNN-Max encoding, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CnnCache {
    pub input: Tensor,
    pub hidden: Tensor,
    pub argmax: Vec<usize>,
    pub output: Tensor,
}

/// Gathers `[word; pos1; pos2]` embedding rows into a `[T, dw + 2·dp]` matrix.
pub fn embed(features: &TokenFeatures, word_emb: &Tensor, pos_emb: &Tensor) -> Result<Tensor> {
    if features.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    let (dw, dp) = (word_emb.row_len(), pos_emb.row_len());
    let width = dw + 2 * dp;
    let mut data = Vec::with_capacity(features.len() * width);
    for i in 0..features.len() {
        let (w, p1, p2) = (features.words[i], features.pos1[i], features.pos2[i]);
        if w >= word_emb.rows() {
            return Err(Error::InvalidArgument(format!("word id {w} outside vocabulary of {}", word_emb.rows())));
        }
        if p1 >= pos_emb.rows() || p2 >= pos_emb.rows() {
            return Err(Error::InvalidArgument(format!("position index outside table of {}", pos_emb.rows())));
        }
        data.extend_from_slice(word_emb.row(w));
        data.extend_from_slice(pos_emb.row(p1));
        data.extend_from_slice(pos_emb.row(p2));
    }
    Tensor::matrix(features.len(), width, data)
}

/// `out[i] = max_t tanh(W z_t + b)[i]`, `z_t` the zero-padded window of
/// `window` embedded tokens centred on `t`.
pub fn cnn_max(input: Tensor, kernel: &Tensor, bias: &Tensor, window: usize) -> Result<CnnCache> {
    let pre = ops::conv1d_same(&input, kernel, bias, window)?;
    let hidden = ops::tanh(&pre);
    let (output, argmax) = ops::max_over_time(&hidden)?;
    Ok(CnnCache { input, hidden, argmax, output })
}

/// Backward of [`cnn_max`]; accumulates kernel/bias gradients and returns
/// the gradient with respect to the embedded input rows.
pub fn cnn_max_backward(
    cache: &CnnCache,
    kernel: &Tensor,
    window: usize,
    g_out: &Tensor,
    g_kernel: &mut Tensor,
    g_bias: &mut Tensor,
) -> Tensor {
    let steps = cache.input.rows();
    let filters = kernel.rows();
    // Only the argmax position of each filter carries gradient.
    let mut g_pre = Tensor::zeros(&[steps, filters]);
    for (f, &t) in cache.argmax.iter().enumerate() {
        let h = cache.hidden.data()[t * filters + f];
        g_pre.data_mut()[t * filters + f] = g_out.data()[f] * (1.0 - h * h);
    }
    let mut g_input = Tensor::zeros(cache.input.shape());
    ops::conv1d_same_backward(&cache.input, kernel, &g_pre, window, &mut g_input, g_kernel, g_bias);
    g_input
}

/// Scatters input-row gradients back into the embedding tables.
pub fn embed_backward(features: &TokenFeatures, g_input: &Tensor, g_word: &mut Tensor, g_pos: &mut Tensor) {
    let dw = g_word.row_len();
    let dp = g_pos.row_len();
    for i in 0..features.len() {
        let row = g_input.row(i);
        axpy(1.0, &row[..dw], g_word.row_mut(features.words[i]));
        axpy(1.0, &row[dw..dw + dp], g_pos.row_mut(features.pos1[i]));
        axpy(1.0, &row[dw + dp..], g_pos.row_mut(features.pos2[i]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kg_from(entities: Vec<Vec<f64>>, relations: Vec<Vec<f64>>, bias: f64) -> KgParams {
        let d = entities[0].len();
        let e = Tensor::matrix(entities.len(), d, entities.concat()).unwrap();
        let r = Tensor::matrix(relations.len(), d, relations.concat()).unwrap();
        KgParams {
            entity_emb: ParamSlot::new("entity_emb", e, LrGroup::Kg),
            relation_emb: ParamSlot::new("relation_emb", r, LrGroup::Kg),
            bias,
            norm: Norm::L2,
        }
    }

    #[test]
    fn latent_relation_is_difference() {
        let kg = kg_from(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 0.0]], 0.0);
        assert_eq!(kg.latent_relation(0, 1).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(kg.latent_relation(0, 0).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(kg.latent_relation(0, 7), Err(Error::UnknownEntity(_))));
    }

    #[test]
    fn latent_relation_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kg = KgParams::new(4, 2, 50, 7.0, Norm::L2, &mut rng);
        let got = kg.latent_relation(1, 3).unwrap();
        for (i, g) in got.iter().enumerate() {
            assert_eq!(*g, kg.entity_emb.value.data()[3 * 50 + i] - kg.entity_emb.value.data()[50 + i]);
        }
    }

    #[test]
    fn transe_score_values() {
        let kg = kg_from(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 0.0], vec![-1.0, 1.0]], 0.0);
        assert!((kg.transe_score(0, 0, 1).unwrap() + 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(kg.transe_score(0, 1, 1).unwrap(), 0.0);
        let mut kg7 = kg.clone();
        kg7.bias = 7.0;
        assert_eq!(kg7.transe_score(0, 1, 1).unwrap(), 7.0);
        assert!(kg.transe_score(0, 5, 1).is_err());
    }

    #[test]
    fn transe_score_decreases_with_residual() {
        let mut prev = f64::INFINITY;
        for k in 0..6 {
            let kg = kg_from(vec![vec![0.0, 0.0], vec![k as f64, 0.0]], vec![vec![0.0, 0.0]], 1.0);
            let s = kg.transe_score(0, 0, 1).unwrap();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn log_prob_degenerate_cases() {
        let kg = kg_from(vec![vec![1.0, 2.0], vec![3.0, -1.0]], vec![vec![0.5, 0.5]], 7.0);
        assert_eq!(kg.kg_log_prob(0, 0, 1).unwrap(), 0.0);
        let kg = kg_from(vec![vec![1.0, 2.0], vec![3.0, -1.0]], vec![vec![0.5, 0.5], vec![0.5, 0.5]], 7.0);
        assert!((kg.kg_log_prob(0, 1, 1).unwrap() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_prob_matches_direct_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kg = KgParams::new(3, 5, 6, 7.0, Norm::L2, &mut rng);
        let scores: Vec<f64> = (0..5).map(|r| kg.transe_score(0, r, 2).unwrap()).collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for r in 0..5 {
            let oracle = (scores[r].exp() / z).ln();
            assert!((kg.kg_log_prob(0, r, 2).unwrap() - oracle).abs() < 1e-12);
        }
        let total: f64 = (0..5).map(|r| kg.kg_log_prob(0, r, 2).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kg = KgParams::new(2, 3, 8, 7.0, Norm::L2, &mut rng);
        let mut shifted = kg.clone();
        let c: Vec<f64> = (0..8).map(|i| i as f64 * 0.25 - 1.0).collect();
        for e in 0..2 {
            axpy(1.0, &c, shifted.entity_emb.value.row_mut(e));
        }
        for r in 0..3 {
            let a = kg.transe_score(0, r, 1).unwrap();
            let b = shifted.transe_score(0, r, 1).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nll_gradient_matches_central_difference() {
        for norm in [Norm::L2, Norm::L1] {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let mut kg = KgParams::new(3, 4, 5, 7.0, norm, &mut rng);
            let (_, g) = kg.nll_backward(0, 2, 1, 1.0).unwrap();
            let eps = 1e-5;
            for (row, grad) in &g.entity_rows {
                for k in 0..5 {
                    let idx = row * 5 + k;
                    let orig = kg.entity_emb.value.data()[idx];
                    kg.entity_emb.value.data_mut()[idx] = orig + eps;
                    let plus = -kg.kg_log_prob(0, 2, 1).unwrap();
                    kg.entity_emb.value.data_mut()[idx] = orig - eps;
                    let minus = -kg.kg_log_prob(0, 2, 1).unwrap();
                    kg.entity_emb.value.data_mut()[idx] = orig;
                    assert!((grad[k] - (plus - minus) / (2.0 * eps)).abs() < 1e-6);
                }
            }
            for (row, grad) in &g.relation_rows {
                for k in 0..5 {
                    let idx = row * 5 + k;
                    let orig = kg.relation_emb.value.data()[idx];
                    kg.relation_emb.value.data_mut()[idx] = orig + eps;
                    let plus = -kg.kg_log_prob(0, 2, 1).unwrap();
                    kg.relation_emb.value.data_mut()[idx] = orig - eps;
                    let minus = -kg.kg_log_prob(0, 2, 1).unwrap();
                    kg.relation_emb.value.data_mut()[idx] = orig;
                    assert!((grad[k] - (plus - minus) / (2.0 * eps)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn featurize_offsets() {
        let f = featurize((0..120).collect(), 110, 60, 30).unwrap();
        assert_eq!(f.pos1[110], 30);
        // three to the left of e2
        assert_eq!(f.pos2[57], 30 - 3);
        // 100 to the left of e1 clips to −30
        assert_eq!(f.pos1[10], 0);
        assert_eq!(f.pos2[119], 60);
        assert!(featurize(vec![1, 2], 2, 0, 30).is_err());
    }

    #[test]
    fn single_token_output_is_centre_tap() {
        let features = featurize(vec![0], 0, 0, 1).unwrap();
        let word = Tensor::matrix(1, 1, vec![0.7]).unwrap();
        let pos = Tensor::matrix(3, 1, vec![0.1, 0.2, 0.3]).unwrap();
        let input = embed(&features, &word, &pos).unwrap();
        assert_eq!(input.data(), &[0.7, 0.2, 0.2]);
        // window 3 over 3 channels; only the centre block touches real data
        let kernel = Tensor::matrix(1, 9, vec![9.0, 9.0, 9.0, 1.0, 2.0, 3.0, 9.0, 9.0, 9.0]).unwrap();
        let bias = Tensor::vector(vec![0.1]);
        let out = cnn_max(input, &kernel, &bias, 3).unwrap();
        let expected = (0.7 + 2.0 * 0.2 + 3.0 * 0.2 + 0.1f64).tanh();
        assert!((out.output.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_convolution() {
        // 4 tokens, 1 channel, window 3, 2 filters.
        let input = Tensor::matrix(4, 1, vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        let kernel = Tensor::matrix(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
        let bias = Tensor::vector(vec![0.0, -0.5]);
        let out = cnn_max(input, &kernel, &bias, 3).unwrap();
        // filter 0: x[t-1] - x[t+1] => [0-(-1), 1-2, -1-0.5, 2-0] = [1, -1, -1.5, 2]
        // filter 1: 0.5(x[t-1]+x[t]+x[t+1]) - 0.5 => [-0.5, 0.5, 0.25, 0.75]
        assert!((out.output.data()[0] - 2f64.tanh()).abs() < 1e-15);
        assert!((out.output.data()[1] - 0.75f64.tanh()).abs() < 1e-15);
        assert_eq!(out.argmax, vec![3, 3]);
    }

    #[test]
    fn zero_rows_beyond_window_reach_change_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let input = Tensor::matrix(5, 4, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let kernel = Tensor::matrix(3, 12, (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let bias = Tensor::vector(vec![0.1, -0.2, 0.3]);
        let plain = cnn_max(input.clone(), &kernel, &bias, 3).unwrap();
        // Explicit zero rows on both sides; conv outputs at the original
        // positions see exactly the same windows.
        let mut padded = vec![0.0; 2 * 4];
        padded.extend_from_slice(input.data());
        padded.extend(vec![0.0; 2 * 4]);
        let padded = Tensor::matrix(9, 4, padded).unwrap();
        let pre = ops::conv1d_same(&padded, &kernel, &bias, 3).unwrap();
        let inner = Tensor::matrix(5, 3, pre.data()[2 * 3..7 * 3].to_vec()).unwrap();
        let (max, _) = ops::max_over_time(&ops::tanh(&inner)).unwrap();
        assert_eq!(max.data(), plain.output.data());
    }

    #[test]
    fn output_width_is_filter_count() {
        for filters in [100, 230] {
            let input = Tensor::zeros(&[6, 60]);
            let kernel = Tensor::zeros(&[filters, 180]);
            let bias = Tensor::zeros(&[filters]);
            assert_eq!(cnn_max(input, &kernel, &bias, 3).unwrap().output.len(), filters);
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let f = TokenFeatures { words: vec![], pos1: vec![], pos2: vec![] };
        assert!(matches!(embed(&f, &Tensor::zeros(&[1, 1]), &Tensor::zeros(&[1, 1])), Err(Error::Empty(_))));
    }
}
