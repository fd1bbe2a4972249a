//! Autoregressive decoding with cached keys and values.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use super::layers::{affine, attention, gelu, layer_norm, softmax_rows, AttnView};
use super::{view1, view2, DecoderModel, Real};
use crate::error::{Error, Result};
use crate::tokenizer::{BOS, EOS, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeMode {
    #[default]
    Greedy,
    Beam(usize),
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeMode::Greedy => f.write_str("greedy"),
            DecodeMode::Beam(b) => write!(f, "beam:{b}"),
        }
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "greedy" {
            return Ok(DecodeMode::Greedy);
        }
        let width = s
            .strip_prefix("beam:")
            .and_then(|w| w.parse::<usize>().ok())
            .filter(|&w| w > 0)
            .ok_or_else(|| Error::Config(format!("unknown decode mode {s}, expected greedy or beam:<width>")))?;
        Ok(DecodeMode::Beam(width))
    }
}

impl Serialize for DecodeMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DecodeMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// One generated clause next to its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOutput {
    pub example_id: String,
    pub clause_type: String,
    pub token_ids: Vec<u32>,
    pub text: String,
    pub target: String,
}

#[derive(Clone)]
struct LayerKv<F> {
    k: Array2<F>,
    v: Array2<F>,
}

#[derive(Clone)]
struct DecodeState<F> {
    len: usize,
    layers: Vec<LayerKv<F>>,
}

impl<F: Real> DecoderModel<F> {
    fn start_state(&self) -> DecodeState<F> {
        let shape = (self.config.max_len, self.config.model_dim);
        DecodeState {
            len: 0,
            layers: vec![
                LayerKv {
                    k: Array2::zeros(shape),
                    v: Array2::zeros(shape),
                };
                self.config.layers
            ],
        }
    }

    /// Feeds one token and returns the next-token logits.
    fn step(&self, state: &mut DecodeState<F>, memory: &Array2<F>, id: u32) -> Array1<F> {
        let p = &self.params;
        let lay = &self.layout;
        let t = state.len;
        let d = self.config.model_dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = F::one() / F::from_usize(dh).expect("head dim").sqrt();

        let mut h = Array2::zeros((1, d));
        h.row_mut(0).assign(&view2(p, lay.tok_emb).row(id as usize));
        h += &self.positions.row(t);

        for (ls, kv) in lay.layers.iter().zip(state.layers.iter_mut()) {
            let (a1, _) = layer_norm(&h, view1(p, ls.ln1_g), view1(p, ls.ln1_b));
            let att = AttnView::new(p, &ls.self_attn);
            let q = affine(&a1, att.wq, att.bq);
            kv.k.row_mut(t).assign(&affine(&a1, att.wk, att.bk).row(0));
            kv.v.row_mut(t).assign(&affine(&a1, att.wv, att.bv).row(0));
            let mut concat = Array2::zeros((1, d));
            for hd in 0..heads {
                let r = hd * dh..(hd + 1) * dh;
                let keys = kv.k.slice(s![..=t, r.clone()]);
                let mut scores = q.slice(s![.., r.clone()]).dot(&keys.t());
                scores.mapv_inplace(|v| v * scale);
                softmax_rows(&mut scores);
                concat
                    .slice_mut(s![.., r.clone()])
                    .assign(&scores.dot(&kv.v.slice(s![..=t, r])));
            }
            h += &affine(&concat, att.wo, att.bo);

            let (a2, _) = layer_norm(&h, view1(p, ls.ln2_g), view1(p, ls.ln2_b));
            let (ca, _) = attention(&a2, memory, &AttnView::new(p, &ls.cross_attn), heads, false);
            h += &ca;

            let (a3, _) = layer_norm(&h, view1(p, ls.ln3_g), view1(p, ls.ln3_b));
            let act = affine(&a3, view2(p, ls.w1), view1(p, ls.b1)).mapv(gelu);
            h += &affine(&act, view2(p, ls.w2), view1(p, ls.b2));
        }
        let (z, _) = layer_norm(&h, view1(p, lay.lnf_g), view1(p, lay.lnf_b));
        state.len += 1;
        self.project(&z).row(0).to_owned()
    }
}

/// Log-probabilities with PAD and BOS excluded from the candidates.
fn candidate_log_probs<F: Real>(logits: &Array1<F>) -> Vec<f64> {
    let mut v: Vec<f64> = logits.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
    v[PAD as usize] = f64::NEG_INFINITY;
    v[BOS as usize] = f64::NEG_INFINITY;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter_mut().for_each(|x| *x -= lse);
    v
}

/// Lowest id wins ties.
fn argmax(v: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best as u32
}

/// Decodes from BOS until EOS or `max_len` tokens. The result excludes BOS
/// and ends with EOS unless the length cap was hit first.
pub fn generate<F: Real>(
    model: &DecoderModel<F>,
    context: &[F],
    max_len: usize,
    mode: DecodeMode,
) -> Result<Vec<u32>> {
    model.check_context(context)?;
    if max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    let steps = max_len.min(model.config.max_len);
    let memory = model.memory(context);
    match mode {
        DecodeMode::Greedy => Ok(greedy(model, &memory, steps)),
        DecodeMode::Beam(0) => Err(Error::Config("beam width must be positive".into())),
        DecodeMode::Beam(width) => Ok(beam(model, &memory, steps, width)),
    }
}

fn greedy<F: Real>(model: &DecoderModel<F>, memory: &Array2<F>, steps: usize) -> Vec<u32> {
    let mut state = model.start_state();
    let mut out = Vec::new();
    let mut token = BOS;
    while out.len() < steps {
        let logits = model.step(&mut state, memory, token);
        token = argmax(&candidate_log_probs(&logits));
        out.push(token);
        if token == EOS {
            break;
        }
    }
    out
}

struct Hyp<F> {
    tokens: Vec<u32>,
    log_prob: f64,
    state: DecodeState<F>,
    next: Vec<f64>,
}

/// Beam search; finished hypotheses are ranked by mean token log-probability.
fn beam<F: Real>(model: &DecoderModel<F>, memory: &Array2<F>, steps: usize, width: usize) -> Vec<u32> {
    let mut state = model.start_state();
    let next = candidate_log_probs(&model.step(&mut state, memory, BOS));
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        log_prob: 0.0,
        state,
        next,
    }];
    let mut finished: Vec<(f64, Vec<u32>)> = Vec::new();

    while !live.is_empty() {
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (bi, hyp) in live.iter().enumerate() {
            let mut order: Vec<u32> = (0..hyp.next.len() as u32).collect();
            order.sort_by(|&a, &b| hyp.next[b as usize].total_cmp(&hyp.next[a as usize]).then(a.cmp(&b)));
            for &tok in order.iter().take(width) {
                cands.push((hyp.log_prob + hyp.next[tok as usize], bi, tok));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next_live = Vec::new();
        for (score, bi, tok) in cands.into_iter().take(width) {
            let mut tokens = live[bi].tokens.clone();
            tokens.push(tok);
            if tok == EOS || tokens.len() >= steps {
                finished.push((score / tokens.len() as f64, tokens));
                continue;
            }
            let mut state = live[bi].state.clone();
            let next = candidate_log_probs(&model.step(&mut state, memory, tok));
            next_live.push(Hyp {
                tokens,
                log_prob: score,
                state,
                next,
            });
        }
        live = next_live;
    }
    let mut best = 0;
    for (i, f) in finished.iter().enumerate() {
        if f.0 > finished[best].0 {
            best = i;
        }
    }
    finished.swap_remove(best).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderConfig;

    fn tiny() -> DecoderModel<f64> {
        DecoderModel::init(DecoderConfig {
            layers: 2,
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            max_len: 12,
            vocab_size: 13,
            context_dim: 4,
            dropout: 0.0,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn incremental_steps_match_full_forward() {
        let m = tiny();
        let ctx = [0.2, -0.4, 0.7, 0.1];
        let ids = [BOS, 6, 9, 4, 12, 5];
        let full = m.logits(&ids, &ctx).unwrap();
        let memory = m.memory(&ctx);
        let mut state = m.start_state();
        for (t, &id) in ids.iter().enumerate() {
            let row = m.step(&mut state, &memory, id);
            for v in 0..13 {
                assert!((row[v] - full[[t, v]]).abs() < 1e-12, "t={t} v={v}");
            }
        }
    }

    #[test]
    fn greedy_is_deterministic_and_capped() {
        let m = tiny();
        let ctx = [0.5, 0.5, -0.5, 0.0];
        let a = generate(&m, &ctx, 12, DecodeMode::Greedy).unwrap();
        let b = generate(&m, &ctx, 12, DecodeMode::Greedy).unwrap();
        assert_eq!(a, b);
        assert!(a.len() == 12 || a.last() == Some(&EOS));
        assert!(a.iter().all(|&t| t != PAD && t != BOS));
        assert_eq!(generate(&m, &ctx, 1, DecodeMode::Greedy).unwrap().len(), 1);
        assert!(generate(&m, &ctx, 0, DecodeMode::Greedy).is_err());
        assert!(generate(&m, &[0.0; 3], 4, DecodeMode::Greedy).is_err());
    }

    #[test]
    fn beam_of_one_is_greedy() {
        let m = tiny();
        let ctx = [0.1, 0.9, 0.0, -0.3];
        let g = generate(&m, &ctx, 12, DecodeMode::Greedy).unwrap();
        let b = generate(&m, &ctx, 12, DecodeMode::Beam(1)).unwrap();
        assert_eq!(g, b);
        let wide = generate(&m, &ctx, 12, DecodeMode::Beam(4)).unwrap();
        assert!(!wide.is_empty() && wide.len() <= 12);
        assert_eq!(wide, generate(&m, &ctx, 12, DecodeMode::Beam(4)).unwrap());
    }

    #[test]
    fn decode_mode_parsing() {
        assert_eq!("greedy".parse::<DecodeMode>().unwrap(), DecodeMode::Greedy);
        assert_eq!("beam:5".parse::<DecodeMode>().unwrap(), DecodeMode::Beam(5));
        assert!("beam:0".parse::<DecodeMode>().is_err());
        assert!("sample".parse::<DecodeMode>().is_err());
        assert_eq!(DecodeMode::Beam(3).to_string(), "beam:3");
    }
}
