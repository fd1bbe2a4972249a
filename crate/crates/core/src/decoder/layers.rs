//! Layer primitives and their backward passes.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{view1, view1_mut, view2, view2_mut, AttnSlots, Real, Slot};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;

/// `x · w + b` with `b` broadcast over rows.
pub(crate) fn affine<F: Real>(x: &Array2<F>, w: ArrayView2<'_, F>, b: ArrayView1<'_, F>) -> Array2<F> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// `grad[w] += a^T · d`.
pub(crate) fn acc_weight<F: Real>(grad: &mut [F], w: Slot, a: &Array2<F>, d: &Array2<F>) {
    general_mat_mul(F::one(), &a.t(), d, F::one(), &mut view2_mut(grad, w));
}

/// `grad[b] += column sums of d`.
pub(crate) fn acc_bias<F: Real>(grad: &mut [F], b: Slot, d: &Array2<F>) {
    let mut gb = view1_mut(grad, b);
    gb += &d.sum_axis(Axis(0));
}

pub(crate) struct LnCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

pub(crate) fn layer_norm<F: Real>(
    x: &Array2<F>,
    g: ArrayView1<'_, F>,
    b: ArrayView1<'_, F>,
) -> (Array2<F>, LnCache<F>) {
    let n = F::from_usize(x.ncols()).expect("width");
    let eps = F::lit(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().fold(F::zero(), |acc, &v| acc + v * v) / n;
        let s = F::one() / (var + eps).sqrt();
        *is = s;
        row.mapv_inplace(|v| v * s);
    }
    let mut y = &xhat * &g;
    y += &b;
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward<F: Real>(
    dy: &Array2<F>,
    cache: &LnCache<F>,
    params: &[F],
    grad: &mut [F],
    g: Slot,
    b: Slot,
) -> Array2<F> {
    {
        let mut gg = view1_mut(grad, g);
        gg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    acc_bias(grad, b, dy);
    let gain = view1(params, g);
    let dxhat = dy * &gain;
    let n = F::from_usize(dy.ncols()).expect("width");
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
        let dxh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = dxh.sum() / n;
        let m2 = dxh.dot(&xh) / n;
        let s = cache.inv_std[i];
        ndarray::Zip::from(&mut out)
            .and(&dxh)
            .and(&xh)
            .for_each(|o, &d, &x| *o = (d - m1 - x * m2) * s);
    }
    dx
}

pub(crate) fn gelu<F: Real>(x: F) -> F {
    let half = F::lit(0.5);
    let u = F::lit(GELU_C) * (x + F::lit(GELU_K) * x * x * x);
    half * x * (F::one() + u.tanh())
}

pub(crate) fn gelu_grad<F: Real>(x: F) -> F {
    let half = F::lit(0.5);
    let c = F::lit(GELU_C);
    let k = F::lit(GELU_K);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::lit(3.0) * k * x * x)
}

pub(crate) fn softmax_rows<F: Real>(m: &mut Array2<F>) {
    for mut row in m.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else `1/(1-p)`.
pub(crate) fn dropout_mask<F: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, p: f64) -> Array2<F> {
    let keep = F::lit(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    })
}

pub(crate) struct AttnView<'a, F> {
    pub wq: ArrayView2<'a, F>,
    pub bq: ArrayView1<'a, F>,
    pub wk: ArrayView2<'a, F>,
    pub bk: ArrayView1<'a, F>,
    pub wv: ArrayView2<'a, F>,
    pub bv: ArrayView1<'a, F>,
    pub wo: ArrayView2<'a, F>,
    pub bo: ArrayView1<'a, F>,
}

impl<'a, F> AttnView<'a, F> {
    pub fn new(params: &'a [F], s: &AttnSlots) -> Self {
        AttnView {
            wq: view2(params, s.wq),
            bq: view1(params, s.bq),
            wk: view2(params, s.wk),
            bk: view1(params, s.bk),
            wv: view2(params, s.wv),
            bv: view1(params, s.bv),
            wo: view2(params, s.wo),
            bo: view1(params, s.bo),
        }
    }
}

pub(crate) struct AttnCache<F> {
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    concat: Array2<F>,
}

/// Multi-head attention of queries from `x` over keys and values from `src`.
pub(crate) fn attention<F: Real>(
    x: &Array2<F>,
    src: &Array2<F>,
    p: &AttnView<'_, F>,
    heads: usize,
    causal: bool,
) -> (Array2<F>, AttnCache<F>) {
    let q = affine(x, p.wq, p.bq);
    let k = affine(src, p.wk, p.bk);
    let v = affine(src, p.wv, p.bv);
    let (t, d) = q.dim();
    let dh = d / heads;
    let scale = F::one() / F::from_usize(dh).expect("head dim").sqrt();
    let mut concat = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        let mut scores = q.slice(s![.., r.clone()]).dot(&k.slice(s![.., r.clone()]).t());
        scores.mapv_inplace(|v| v * scale);
        if causal {
            for i in 0..t {
                for j in i + 1..scores.ncols() {
                    scores[[i, j]] = F::neg_infinity();
                }
            }
        }
        softmax_rows(&mut scores);
        concat
            .slice_mut(s![.., r.clone()])
            .assign(&scores.dot(&v.slice(s![.., r])));
        probs.push(scores);
    }
    let out = affine(&concat, p.wo, p.bo);
    (
        out,
        AttnCache {
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

/// Returns the gradients with respect to `x` and to `src`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<F: Real>(
    dout: &Array2<F>,
    x: &Array2<F>,
    src: &Array2<F>,
    cache: &AttnCache<F>,
    params: &[F],
    grad: &mut [F],
    slots: &AttnSlots,
    heads: usize,
) -> (Array2<F>, Array2<F>) {
    let p = AttnView::new(params, slots);
    acc_weight(grad, slots.wo, &cache.concat, dout);
    acc_bias(grad, slots.bo, dout);
    let dconcat = dout.dot(&p.wo.t());

    let d = cache.q.ncols();
    let dh = d / heads;
    let scale = F::one() / F::from_usize(dh).expect("head dim").sqrt();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        let probs = &cache.probs[h];
        let d_o = dconcat.slice(s![.., r.clone()]);
        dv.slice_mut(s![.., r.clone()]).assign(&probs.t().dot(&d_o));
        let mut ds = d_o.dot(&cache.v.slice(s![.., r.clone()]).t());
        for (mut drow, prow) in ds.rows_mut().into_iter().zip(probs.rows()) {
            let dot = drow.dot(&prow);
            drow.zip_mut_with(&prow, |g, &pr| *g = pr * (*g - dot) * scale);
        }
        dq.slice_mut(s![.., r.clone()])
            .assign(&ds.dot(&cache.k.slice(s![.., r.clone()])));
        dk.slice_mut(s![.., r.clone()])
            .assign(&ds.t().dot(&cache.q.slice(s![.., r])));
    }

    acc_weight(grad, slots.wq, x, &dq);
    acc_bias(grad, slots.bq, &dq);
    acc_weight(grad, slots.wk, src, &dk);
    acc_bias(grad, slots.bk, &dk);
    acc_weight(grad, slots.wv, src, &dv);
    acc_bias(grad, slots.bv, &dv);
    let dx = dq.dot(&p.wq.t());
    let mut dsrc = dk.dot(&p.wk.t());
    general_mat_mul(F::one(), &dv, &p.wv.t(), F::one(), &mut dsrc);
    (dx, dsrc)
}
