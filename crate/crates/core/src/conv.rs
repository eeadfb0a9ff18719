//! Centrality-aware user representation.
//!
//! For each centrality view `k` and user `i`, the top `n_neighbors` neighbors
//! under that view's ranking form the receptive field:
//!
//! ```text
//! h   = POOL({ relu(P_k u_n + p_k) })          (zero when there are no neighbors)
//! s   = relu(W_k [u_i ; h] + w_k)
//! u_k = s / |s|
//! ```
//!
//! The per-view vectors are fused with softmax weights
//! `α_k ∝ exp(z_k · [u_1; …; u_C])` into `Σ α_k u_k`.

use crate::graph::SocialGraph;
use crate::linalg::{axpy, dot, matvec, matvec_t_acc, norm, outer_acc, softmax_backward_in_place, softmax_in_place};
use crate::params::{Block, Gradients, ModelState};
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvOptions {
    pub n_neighbors: usize,
    pub pooling: Pooling,
}

impl Default for ConvOptions {
    fn default() -> Self {
        ConvOptions { n_neighbors: 4, pooling: Pooling::Mean }
    }
}

/// Forward values of one view for one user, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ViewForward<F> {
    pub view: usize,
    pub user: u32,
    pub neighbors: Vec<u32>,
    neighbor_pre: Vec<F>,
    input: Vec<F>,
    pre: Vec<F>,
    norm: F,
    pub output: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct ConvOutput<F> {
    pub user: u32,
    pub views: Vec<ViewForward<F>>,
    pub alpha: Vec<F>,
    pub fused: Vec<F>,
}

/// One view's convolution for `user`. A zero post-activation yields a zero
/// output (there is no direction to normalize).
pub fn convolve_view<F: Real>(
    state: &ModelState<F>,
    social: &SocialGraph,
    view: usize,
    user: u32,
    opts: &ConvOptions,
) -> ViewForward<F> {
    let d = state.shape.d;
    let ranked = &social.views()[view].ranked[user as usize];
    let neighbors: Vec<u32> = ranked.iter().take(opts.n_neighbors).copied().collect();

    let p = &state.conv_p[view * d * d..(view + 1) * d * d];
    let p_bias = &state.conv_p_bias[view * d..(view + 1) * d];
    let mut neighbor_pre = vec![F::zero(); neighbors.len() * d];
    let mut input = vec![F::zero(); 2 * d];
    input[..d].copy_from_slice(state.user(user));
    if !neighbors.is_empty() {
        let pooled = &mut input[d..];
        for (n, &nb) in neighbors.iter().enumerate() {
            let t = &mut neighbor_pre[n * d..(n + 1) * d];
            matvec(p, d, d, state.user(nb), t);
            axpy(F::one(), p_bias, t);
            for (h, &x) in pooled.iter_mut().zip(t.iter()) {
                *h += x.max(F::zero());
            }
        }
        if opts.pooling == Pooling::Mean {
            let inv = F::one() / F::of(neighbors.len() as f64);
            pooled.iter_mut().for_each(|x| *x *= inv);
        }
    }

    let w = &state.conv_w[view * d * 2 * d..(view + 1) * d * 2 * d];
    let w_bias = &state.conv_w_bias[view * d..(view + 1) * d];
    let mut pre = vec![F::zero(); d];
    matvec(w, d, 2 * d, &input, &mut pre);
    axpy(F::one(), w_bias, &mut pre);
    let mut output: Vec<F> = pre.iter().map(|x| x.max(F::zero())).collect();
    let n = norm(&output);
    if n > F::zero() {
        output.iter_mut().for_each(|x| *x /= n);
    }
    ViewForward { view, user, neighbors, neighbor_pre, input, pre, norm: n, output }
}

fn view_vector<F: Real>(state: &ModelState<F>, k: usize) -> &[F] {
    let width = state.shape.views * state.shape.d;
    &state.view_z[k * width..(k + 1) * width]
}

/// Softmax view weights and the fused vector for per-view `outputs`.
pub fn fuse_views<F: Real>(state: &ModelState<F>, outputs: &[&[F]]) -> (Vec<F>, Vec<F>) {
    let d = state.shape.d;
    let concat: Vec<F> = outputs.iter().flat_map(|o| o.iter().copied()).collect();
    let mut alpha: Vec<F> = (0..outputs.len()).map(|k| dot(view_vector(state, k), &concat)).collect();
    softmax_in_place(&mut alpha);
    let mut fused = vec![F::zero(); d];
    for (&a, out) in alpha.iter().zip(outputs) {
        axpy(a, out, &mut fused);
    }
    (fused, alpha)
}

/// Every view's convolution for `user`, fused. Requires at least one view.
pub fn user_forward<F: Real>(
    state: &ModelState<F>,
    social: &SocialGraph,
    user: u32,
    opts: &ConvOptions,
) -> ConvOutput<F> {
    let views: Vec<ViewForward<F>> =
        (0..state.shape.views).map(|k| convolve_view(state, social, k, user, opts)).collect();
    let outputs: Vec<&[F]> = views.iter().map(|v| v.output.as_slice()).collect();
    let (fused, alpha) = fuse_views(state, &outputs);
    ConvOutput { user, views, alpha, fused }
}

/// Backpropagates `grad_fused` through view fusion and every view's
/// convolution, accumulating into `grads`.
pub fn convolve_backward<F: Real>(
    state: &ModelState<F>,
    fwd: &ConvOutput<F>,
    grad_fused: &[F],
    grads: &mut Gradients<F>,
    opts: &ConvOptions,
) {
    let d = state.shape.d;
    let views = fwd.views.len();
    grads.conv_touched = true;

    // Fusion.
    let mut d_out: Vec<Vec<F>> = fwd.alpha.iter().map(|&a| grad_fused.iter().map(|&g| a * g).collect()).collect();
    let mut d_score: Vec<F> = fwd.views.iter().map(|v| dot(grad_fused, &v.output)).collect();
    softmax_backward_in_place(&fwd.alpha, &mut d_score);
    let concat: Vec<F> = fwd.views.iter().flat_map(|v| v.output.iter().copied()).collect();
    let width = views * d;
    {
        let dz = grads.dense_mut(Block::ViewZ);
        for (k, &ds) in d_score.iter().enumerate() {
            axpy(ds, &concat, &mut dz[k * width..(k + 1) * width]);
        }
    }
    for (k, &ds) in d_score.iter().enumerate() {
        let z = view_vector(state, k);
        for (j, dj) in d_out.iter_mut().enumerate() {
            axpy(ds, &z[j * d..(j + 1) * d], dj);
        }
    }

    for (v, dv) in fwd.views.iter().zip(&d_out) {
        view_backward(state, v, dv, grads, opts);
    }
}

fn view_backward<F: Real>(
    state: &ModelState<F>,
    v: &ViewForward<F>,
    d_out: &[F],
    grads: &mut Gradients<F>,
    opts: &ConvOptions,
) {
    if v.norm <= F::zero() {
        return;
    }
    let d = state.shape.d;
    let k = v.view;

    // Normalization: d s = (I - o oᵀ) d_out / |s|, then relu.
    let proj = dot(&v.output, d_out);
    let d_pre: Vec<F> = (0..d)
        .map(|r| if v.pre[r] > F::zero() { (d_out[r] - v.output[r] * proj) / v.norm } else { F::zero() })
        .collect();

    let w = &state.conv_w[k * d * 2 * d..(k + 1) * d * 2 * d];
    {
        let (dw, dw_bias) = grads.dense_pair_mut(Block::ConvW, Block::ConvWBias);
        outer_acc(&mut dw[k * d * 2 * d..(k + 1) * d * 2 * d], &d_pre, &v.input);
        axpy(F::one(), &d_pre, &mut dw_bias[k * d..(k + 1) * d]);
    }
    let mut d_input = vec![F::zero(); 2 * d];
    matvec_t_acc(w, d, 2 * d, &d_pre, &mut d_input);
    grads.users.add(v.user, &d_input[..d]);

    if v.neighbors.is_empty() {
        return;
    }
    let scale = match opts.pooling {
        Pooling::Mean => F::one() / F::of(v.neighbors.len() as f64),
        Pooling::Sum => F::one(),
    };
    let p = &state.conv_p[k * d * d..(k + 1) * d * d];
    for (n, &nb) in v.neighbors.iter().enumerate() {
        let t = &v.neighbor_pre[n * d..(n + 1) * d];
        let dt: Vec<F> = (0..d).map(|r| if t[r] > F::zero() { d_input[d + r] * scale } else { F::zero() }).collect();
        if dt.iter().all(|&x| x == F::zero()) {
            continue;
        }
        {
            let (dp, dp_bias) = grads.dense_pair_mut(Block::ConvP, Block::ConvPBias);
            outer_acc(&mut dp[k * d * d..(k + 1) * d * d], &dt, state.user(nb));
            axpy(F::one(), &dt, &mut dp_bias[k * d..(k + 1) * d]);
        }
        let row = grads.users.push(nb);
        matvec_t_acc(p, d, d, &dt, row);
    }
}
