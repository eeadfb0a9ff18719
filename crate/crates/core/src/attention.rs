//! Group representation from member representations.
//!
//! Multi-head self-attention over the member matrix `X` (one row per member):
//!
//! ```text
//! M_k = softmax(X Wq_k (X Wk_k)ᵀ · s) · X Wv_k        s = 1/√d (or 1/√(d/h))
//! O   = [M_1 … M_h] Wo
//! a_i = tanh(Ws O_i + bs)
//! λ   = softmax(a_i · as)
//! g   = Σ λ_i a_i
//! ```
//!
//! [`baseline_aggregate`] provides the fixed mean / weighted-sum aggregators
//! used for comparison.

#[cfg(test)]
use crate::linalg::norm;
use crate::linalg::{axpy, dot, matvec, matvec_t_acc, outer_acc, softmax_backward_in_place, softmax_in_place, vecmat};
use crate::params::{Block, Gradients, ModelState};
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionScale {
    /// `1/√d` with `d` the full embedding width.
    #[default]
    Full,
    /// `1/√(d/h)`, the per-head key width.
    PerHead,
}

pub fn scale_factor(d: usize, heads: usize, scale: AttentionScale) -> f64 {
    match scale {
        AttentionScale::Full => 1.0 / (d as f64).sqrt(),
        AttentionScale::PerHead => 1.0 / ((d / heads) as f64).sqrt(),
    }
}

#[derive(Clone, Debug)]
pub struct GroupForward<F> {
    pub size: usize,
    pub members: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    /// `heads × size × size`, row-stochastic per head.
    pub attention: Vec<F>,
    concat: Vec<F>,
    /// `size × d`, the mixed member representations.
    pub output: Vec<F>,
    /// `size × d`, `tanh(Ws O_i + bs)`.
    pub activated: Vec<F>,
    pub lambda: Vec<F>,
    pub group: Vec<F>,
    pub scale: F,
}

impl<F: Real> GroupForward<F> {
    pub fn attention_row(&self, head: usize, i: usize) -> &[F] {
        let n = self.size;
        &self.attention[(head * n + i) * n..(head * n + i + 1) * n]
    }
}

fn head_matrix<F: Real>(m: &[F], head: usize, d: usize, dk: usize) -> &[F] {
    &m[head * d * dk..(head + 1) * d * dk]
}

/// Forward pass for a group whose member representations are the rows of
/// `members` (`size × d`, flattened).
pub fn group_forward<F: Real>(state: &ModelState<F>, members: &[F], scale: AttentionScale) -> Result<GroupForward<F>> {
    let shape = &state.shape;
    let (d, heads, dk) = (shape.d, shape.heads, shape.head_dim());
    if members.is_empty() {
        return Err(Error::EmptyGroup("<input>".into()));
    }
    if !members.len().is_multiple_of(d) {
        return Err(Error::Shape(format!("member matrix of {} values is not a multiple of d={d}", members.len())));
    }
    let n = members.len() / d;
    let s = F::of(scale_factor(d, heads, scale));

    let mut q = vec![F::zero(); heads * n * dk];
    let mut k = vec![F::zero(); heads * n * dk];
    let mut v = vec![F::zero(); heads * n * dk];
    for h in 0..heads {
        for i in 0..n {
            let x = &members[i * d..(i + 1) * d];
            let at = (h * n + i) * dk;
            vecmat(x, head_matrix(&state.att_wq, h, d, dk), d, dk, &mut q[at..at + dk]);
            vecmat(x, head_matrix(&state.att_wk, h, d, dk), d, dk, &mut k[at..at + dk]);
            vecmat(x, head_matrix(&state.att_wv, h, d, dk), d, dk, &mut v[at..at + dk]);
        }
    }

    let mut attention = vec![F::zero(); heads * n * n];
    let mut concat = vec![F::zero(); n * d];
    for h in 0..heads {
        for i in 0..n {
            let qi = &q[(h * n + i) * dk..(h * n + i + 1) * dk];
            let row = &mut attention[(h * n + i) * n..(h * n + i + 1) * n];
            for (j, r) in row.iter_mut().enumerate() {
                *r = dot(qi, &k[(h * n + j) * dk..(h * n + j + 1) * dk]) * s;
            }
            softmax_in_place(row);
            let out = &mut concat[i * d + h * dk..i * d + (h + 1) * dk];
            for (j, &a) in row.iter().enumerate() {
                axpy(a, &v[(h * n + j) * dk..(h * n + j + 1) * dk], out);
            }
        }
    }

    let mut output = vec![F::zero(); n * d];
    let mut activated = vec![F::zero(); n * d];
    let mut lambda = vec![F::zero(); n];
    for i in 0..n {
        vecmat(&concat[i * d..(i + 1) * d], &state.att_wo, d, d, &mut output[i * d..(i + 1) * d]);
        let a = &mut activated[i * d..(i + 1) * d];
        matvec(&state.pool_ws, d, d, &output[i * d..(i + 1) * d], a);
        for (x, &b) in a.iter_mut().zip(&state.pool_bs) {
            *x = (*x + b).tanh();
        }
        lambda[i] = dot(a, &state.pool_as);
    }
    softmax_in_place(&mut lambda);
    let mut group = vec![F::zero(); d];
    for (i, &l) in lambda.iter().enumerate() {
        axpy(l, &activated[i * d..(i + 1) * d], &mut group);
    }

    Ok(GroupForward {
        size: n,
        members: members.to_vec(),
        q,
        k,
        v,
        attention,
        concat,
        output,
        activated,
        lambda,
        group,
        scale: s,
    })
}

/// Backpropagates `grad_group` into the attention and pooling parameters.
/// Returns the gradient with respect to the member matrix.
pub fn group_backward<F: Real>(
    state: &ModelState<F>,
    fwd: &GroupForward<F>,
    grad_group: &[F],
    grads: &mut Gradients<F>,
) -> Vec<F> {
    let shape = &state.shape;
    let (d, heads, dk, n) = (shape.d, shape.heads, shape.head_dim(), fwd.size);
    grads.attention_touched = true;

    // Attention pooling.
    let mut d_act = vec![F::zero(); n * d];
    let mut d_lambda = vec![F::zero(); n];
    for i in 0..n {
        let a = &fwd.activated[i * d..(i + 1) * d];
        axpy(fwd.lambda[i], grad_group, &mut d_act[i * d..(i + 1) * d]);
        d_lambda[i] = dot(grad_group, a);
    }
    softmax_backward_in_place(&fwd.lambda, &mut d_lambda);
    {
        let d_as = grads.dense_mut(Block::PoolAs);
        for (i, &de) in d_lambda.iter().enumerate() {
            axpy(de, &fwd.activated[i * d..(i + 1) * d], d_as);
        }
    }
    for (i, &de) in d_lambda.iter().enumerate() {
        axpy(de, &state.pool_as, &mut d_act[i * d..(i + 1) * d]);
    }

    // tanh and the pooling feed-forward layer.
    let mut d_output = vec![F::zero(); n * d];
    for i in 0..n {
        let a = &fwd.activated[i * d..(i + 1) * d];
        let d_pre: Vec<F> = d_act[i * d..(i + 1) * d].iter().zip(a).map(|(&g, &x)| g * (F::one() - x * x)).collect();
        {
            let (d_ws, d_bs) = grads.dense_pair_mut(Block::PoolWs, Block::PoolBs);
            outer_acc(d_ws, &d_pre, &fwd.output[i * d..(i + 1) * d]);
            axpy(F::one(), &d_pre, d_bs);
        }
        matvec_t_acc(&state.pool_ws, d, d, &d_pre, &mut d_output[i * d..(i + 1) * d]);
    }

    // Output projection O = concat · Wo.
    let mut d_concat = vec![F::zero(); n * d];
    {
        let d_wo = grads.dense_mut(Block::AttWo);
        for i in 0..n {
            outer_acc(d_wo, &fwd.concat[i * d..(i + 1) * d], &d_output[i * d..(i + 1) * d]);
        }
    }
    for i in 0..n {
        matvec(&state.att_wo, d, d, &d_output[i * d..(i + 1) * d], &mut d_concat[i * d..(i + 1) * d]);
    }

    // Heads.
    let mut d_members = vec![F::zero(); n * d];
    let mut tmp = vec![F::zero(); d];
    for h in 0..heads {
        let mut dq = vec![F::zero(); n * dk];
        let mut dk_ = vec![F::zero(); n * dk];
        let mut dv = vec![F::zero(); n * dk];
        let at = |i: usize| (h * n + i) * dk..(h * n + i + 1) * dk;
        for i in 0..n {
            let dm = &d_concat[i * d + h * dk..i * d + (h + 1) * dk];
            let row = fwd.attention_row(h, i);
            let mut d_row: Vec<F> = (0..n).map(|j| dot(dm, &fwd.v[at(j)])).collect();
            for (j, &a) in row.iter().enumerate() {
                axpy(a, dm, &mut dv[j * dk..(j + 1) * dk]);
            }
            softmax_backward_in_place(row, &mut d_row);
            for (j, &ds) in d_row.iter().enumerate() {
                let ds = ds * fwd.scale;
                axpy(ds, &fwd.k[at(j)], &mut dq[i * dk..(i + 1) * dk]);
                axpy(ds, &fwd.q[at(i)], &mut dk_[j * dk..(j + 1) * dk]);
            }
        }
        for (block, grad) in [(Block::AttWq, &dq), (Block::AttWk, &dk_), (Block::AttWv, &dv)] {
            let weights = head_matrix(state.block(block), h, d, dk);
            for i in 0..n {
                let x = &fwd.members[i * d..(i + 1) * d];
                let g = &grad[i * dk..(i + 1) * dk];
                outer_acc(&mut grads.dense_mut(block)[h * d * dk..(h + 1) * d * dk], x, g);
                matvec(weights, d, dk, g, &mut tmp);
                axpy(F::one(), &tmp, &mut d_members[i * d..(i + 1) * d]);
            }
        }
    }
    d_members
}

/// Fixed aggregation strategies.
#[derive(Clone, Debug, PartialEq)]
pub enum Baseline {
    Mean,
    /// Nonnegative per-member weights, normalized before use.
    Weighted(Vec<f64>),
}

pub fn baseline_aggregate<F: Real>(members: &[&[F]], strategy: &Baseline) -> Result<Vec<F>> {
    let first = members.first().ok_or_else(|| Error::EmptyGroup("<input>".into()))?;
    let weights: Vec<f64> = match strategy {
        Baseline::Mean => vec![1.0; members.len()],
        Baseline::Weighted(w) => {
            if w.len() != members.len() || w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::Shape("weights must be nonnegative, one per member".into()));
            }
            w.clone()
        }
    };
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyDistribution);
    }
    let mut out = vec![F::zero(); first.len()];
    for (m, w) in members.iter().zip(&weights) {
        axpy(F::of(w / total), m, &mut out);
    }
    Ok(out)
}
