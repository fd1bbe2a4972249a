//! Forward pass, teacher-forced loss and backpropagation.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    acc_bias, acc_weight, affine, attention, attention_backward, dropout_mask, gelu, gelu_grad,
    layer_norm, layer_norm_backward, AttnCache, AttnView, LnCache,
};
use super::{view1, view2, view2_mut, DecoderModel, Real};
use crate::error::{Error, Result};
use crate::tokenizer::PAD;

struct LayerTrace<F> {
    ln1: LnCache<F>,
    a1: Array2<F>,
    self_attn: AttnCache<F>,
    mask1: Option<Array2<F>>,
    ln2: LnCache<F>,
    a2: Array2<F>,
    cross_attn: AttnCache<F>,
    mask2: Option<Array2<F>>,
    ln3: LnCache<F>,
    a3: Array2<F>,
    pre: Array2<F>,
    act: Array2<F>,
    mask3: Option<Array2<F>>,
}

/// Activations kept from the forward pass for backpropagation.
pub(crate) struct Trace<F> {
    ids: Vec<u32>,
    mask0: Option<Array2<F>>,
    memory: Array2<F>,
    layers: Vec<LayerTrace<F>>,
    lnf: LnCache<F>,
    pub z: Array2<F>,
}

fn make_mask<F: Real, R: Rng>(rng: &mut Option<&mut R>, rows: usize, cols: usize, p: f64) -> Option<Array2<F>> {
    match rng {
        Some(r) if p > 0.0 => Some(dropout_mask(&mut **r, rows, cols, p)),
        _ => None,
    }
}

/// Summed negative log-likelihood over non-PAD targets and the number of such targets.
pub fn nll_sum<F: Real>(logits: ArrayView2<'_, F>, targets: &[u32]) -> (F, usize) {
    let mut total = F::zero();
    let mut count = 0;
    for (row, &t) in logits.rows().into_iter().zip(targets) {
        if t == PAD {
            continue;
        }
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        total += lse - row[t as usize];
        count += 1;
    }
    (total, count)
}

/// Token-mean negative log-likelihood with PAD targets masked out.
pub fn nll_loss<F: Real>(logits: ArrayView2<'_, F>, targets: &[u32]) -> F {
    let (sum, count) = nll_sum(logits, targets);
    if count == 0 {
        F::zero()
    } else {
        sum / F::from_usize(count).expect("count")
    }
}

impl<F: Real> DecoderModel<F> {
    pub(crate) fn memory(&self, context: &[F]) -> Array2<F> {
        let c = ArrayView2::from_shape((1, context.len()), context)
            .expect("row vector")
            .to_owned();
        affine(
            &c,
            view2(&self.params, self.layout.ctx_w),
            view1(&self.params, self.layout.ctx_b),
        )
    }

    fn check_sequence(&self, ids: &[u32], context: &[F]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Config("empty decoder input".into()));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::Config(format!(
                "sequence of {} tokens exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        self.check_ids(ids)?;
        self.check_context(context)
    }

    pub(crate) fn forward_trace<R: Rng>(
        &self,
        ids: &[u32],
        context: &[F],
        mut rng: Option<&mut R>,
    ) -> Result<Trace<F>> {
        self.check_sequence(ids, context)?;
        let p = &self.params;
        let lay = &self.layout;
        let (t, d) = (ids.len(), self.config.model_dim);
        let heads = self.config.heads;
        let drop = self.config.dropout;

        let emb = view2(p, lay.tok_emb);
        let mut h = Array2::zeros((t, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = h.row_mut(i);
            row.assign(&emb.row(id as usize));
            row += &self.positions.row(i);
        }
        let mask0 = make_mask(&mut rng, t, d, drop);
        if let Some(m) = &mask0 {
            h *= m;
        }
        let memory = self.memory(context);

        let mut layers = Vec::with_capacity(lay.layers.len());
        for ls in &lay.layers {
            let (a1, ln1) = layer_norm(&h, view1(p, ls.ln1_g), view1(p, ls.ln1_b));
            let (mut sa, self_attn) = attention(&a1, &a1, &AttnView::new(p, &ls.self_attn), heads, true);
            let mask1 = make_mask(&mut rng, t, d, drop);
            if let Some(m) = &mask1 {
                sa *= m;
            }
            h += &sa;

            let (a2, ln2) = layer_norm(&h, view1(p, ls.ln2_g), view1(p, ls.ln2_b));
            let (mut ca, cross_attn) =
                attention(&a2, &memory, &AttnView::new(p, &ls.cross_attn), heads, false);
            let mask2 = make_mask(&mut rng, t, d, drop);
            if let Some(m) = &mask2 {
                ca *= m;
            }
            h += &ca;

            let (a3, ln3) = layer_norm(&h, view1(p, ls.ln3_g), view1(p, ls.ln3_b));
            let pre = affine(&a3, view2(p, ls.w1), view1(p, ls.b1));
            let act = pre.mapv(gelu);
            let mut ff = affine(&act, view2(p, ls.w2), view1(p, ls.b2));
            let mask3 = make_mask(&mut rng, t, d, drop);
            if let Some(m) = &mask3 {
                ff *= m;
            }
            h += &ff;

            layers.push(LayerTrace {
                ln1,
                a1,
                self_attn,
                mask1,
                ln2,
                a2,
                cross_attn,
                mask2,
                ln3,
                a3,
                pre,
                act,
                mask3,
            });
        }
        let (z, lnf) = layer_norm(&h, view1(p, lay.lnf_g), view1(p, lay.lnf_b));
        Ok(Trace {
            ids: ids.to_vec(),
            mask0,
            memory,
            layers,
            lnf,
            z,
        })
    }

    pub(crate) fn project(&self, z: &Array2<F>) -> Array2<F> {
        affine(
            z,
            view2(&self.params, self.layout.out_w),
            view1(&self.params, self.layout.out_b),
        )
    }

    /// Vocabulary logits for every input position, without dropout.
    pub fn logits(&self, input: &[u32], context: &[F]) -> Result<Array2<F>> {
        let trace = self.forward_trace::<ChaCha8Rng>(input, context, None)?;
        Ok(self.project(&trace.z))
    }

    /// Summed NLL of `target` under teacher forcing on `input`, and its token count.
    pub fn loss(&self, input: &[u32], target: &[u32], context: &[F]) -> Result<(F, usize)> {
        check_pair(input, target)?;
        self.check_ids(target)?;
        let logits = self.logits(input, context)?;
        Ok(nll_sum(logits.view(), target))
    }

    /// Adds `scale * d(summed NLL)/d(params)` into `grad` and returns the
    /// summed NLL and token count. Dropout is applied when `rng` is given.
    pub fn loss_and_grad<R: Rng>(
        &self,
        input: &[u32],
        target: &[u32],
        context: &[F],
        scale: F,
        grad: &mut [F],
        rng: Option<&mut R>,
    ) -> Result<(F, usize)> {
        check_pair(input, target)?;
        self.check_ids(target)?;
        if grad.len() != self.params.len() {
            return Err(Error::DimMismatch {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let trace = self.forward_trace(input, context, rng)?;
        let mut dlogits = self.project(&trace.z);
        let mut total = F::zero();
        let mut count = 0;
        for (mut row, &t) in dlogits.rows_mut().into_iter().zip(target) {
            if t == PAD {
                row.fill(F::zero());
                continue;
            }
            let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
            total += lse - row[t as usize];
            count += 1;
            row.mapv_inplace(|v| (v - lse).exp() * scale);
            row[t as usize] -= scale;
        }
        acc_weight(grad, self.layout.out_w, &trace.z, &dlogits);
        acc_bias(grad, self.layout.out_b, &dlogits);
        let dz = dlogits.dot(&view2(&self.params, self.layout.out_w).t());
        self.backward(&trace, dz, context, grad);
        Ok((total, count))
    }

    fn backward(&self, trace: &Trace<F>, dz: Array2<F>, context: &[F], grad: &mut [F]) {
        let p = &self.params;
        let lay = &self.layout;
        let heads = self.config.heads;
        let mut dh = layer_norm_backward(&dz, &trace.lnf, p, grad, lay.lnf_g, lay.lnf_b);
        let mut dmem = Array2::zeros(trace.memory.raw_dim());

        for (ls, c) in lay.layers.iter().zip(&trace.layers).rev() {
            let mut dff = dh.clone();
            if let Some(m) = &c.mask3 {
                dff *= m;
            }
            acc_weight(grad, ls.w2, &c.act, &dff);
            acc_bias(grad, ls.b2, &dff);
            let mut dpre = dff.dot(&view2(p, ls.w2).t());
            Zip::from(&mut dpre)
                .and(&c.pre)
                .for_each(|g, &x| *g *= gelu_grad(x));
            acc_weight(grad, ls.w1, &c.a3, &dpre);
            acc_bias(grad, ls.b1, &dpre);
            let da3 = dpre.dot(&view2(p, ls.w1).t());
            dh += &layer_norm_backward(&da3, &c.ln3, p, grad, ls.ln3_g, ls.ln3_b);

            let mut dca = dh.clone();
            if let Some(m) = &c.mask2 {
                dca *= m;
            }
            let (da2, dm) = attention_backward(
                &dca,
                &c.a2,
                &trace.memory,
                &c.cross_attn,
                p,
                grad,
                &ls.cross_attn,
                heads,
            );
            dmem += &dm;
            dh += &layer_norm_backward(&da2, &c.ln2, p, grad, ls.ln2_g, ls.ln2_b);

            let mut dsa = dh.clone();
            if let Some(m) = &c.mask1 {
                dsa *= m;
            }
            let (mut da1, dsrc) =
                attention_backward(&dsa, &c.a1, &c.a1, &c.self_attn, p, grad, &ls.self_attn, heads);
            da1 += &dsrc;
            dh += &layer_norm_backward(&da1, &c.ln1, p, grad, ls.ln1_g, ls.ln1_b);
        }

        if let Some(m) = &trace.mask0 {
            dh *= m;
        }
        {
            let mut demb = view2_mut(grad, lay.tok_emb);
            for (i, &id) in trace.ids.iter().enumerate() {
                let mut row = demb.row_mut(id as usize);
                row += &dh.row(i);
            }
        }
        let c = ArrayView2::from_shape((1, context.len()), context).expect("row vector");
        general_mat_mul(F::one(), &c.t(), &dmem, F::one(), &mut view2_mut(grad, lay.ctx_w));
        acc_bias(grad, lay.ctx_b, &dmem);
    }
}

fn check_pair(input: &[u32], target: &[u32]) -> Result<()> {
    if input.len() != target.len() {
        return Err(Error::DimMismatch {
            expected: input.len(),
            got: target.len(),
        });
    }
    Ok(())
}
