"""Differentiable prompt encoders.

An encoder maps the flat learnable prompt vector w (length n) to K per-class
embeddings (the "class embeddings", flattened length d = K * feature_dim) and
exposes the vector-Jacobian product needed by the analytic prompt gradient.

Two surrogates are provided:

* ``LinearEncoder`` -- v_k = A_k w + b_k with fixed per-class weights. The
  Jacobian is constant and the whole gradient pipeline becomes closed-form
  and inspectable. No output normalization.
* ``TinyAttentionEncoder`` -- one single-head attention block over
  [prompt tokens || class tokens], mean-pool, linear projection, L2
  normalization. Nonlinear enough that finite-difference checks are
  non-trivial; its backward pass is hand-derived (no autodiff).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ClassContext:
    """Frozen per-class token embeddings (stand-in for tokenized class names)."""

    num_classes: int
    token_dim: int
    num_prompt_tokens: int
    num_class_tokens: int
    seed: int
    class_tokens: np.ndarray = field(repr=False)  # (K, num_class_tokens, token_dim)

    @property
    def prompt_dim(self):
        return self.num_prompt_tokens * self.token_dim


def new_class_context(num_classes, token_dim=16, num_prompt_tokens=4,
                      num_class_tokens=4, seed=0):
    """Seeded context; token entries ~ N(0, 1) / sqrt(token_dim)."""
    rng = np.random.default_rng(seed)
    tokens = rng.standard_normal(
        (num_classes, num_class_tokens, token_dim)) / np.sqrt(token_dim)
    return ClassContext(num_classes=num_classes, token_dim=token_dim,
                        num_prompt_tokens=num_prompt_tokens,
                        num_class_tokens=num_class_tokens, seed=seed,
                        class_tokens=tokens)


def init_prompt(n, seed=0, scale=0.02):
    """Seed-controlled Gaussian prompt initialization."""
    return scale * np.random.default_rng(seed).standard_normal(n)


def _check_prompt(w, n):
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"prompt vector has shape {w.shape}, expected ({n},)")
    if not np.all(np.isfinite(w)):
        raise ValueError("prompt vector contains non-finite entries")
    return w


def _check_cotangent(cot, d):
    cot = np.asarray(cot, dtype=np.float64)
    if cot.shape != (d,):
        raise ValueError(f"cotangent has shape {cot.shape}, expected ({d},)")
    return cot


class LinearEncoder:
    """v_k = A_k w + b_k per class; constant Jacobian [A_1; ...; A_K]."""

    def __init__(self, weights, biases):
        weights = np.asarray(weights, dtype=np.float64)
        biases = np.asarray(biases, dtype=np.float64)
        if weights.ndim != 3 or biases.shape != weights.shape[:2]:
            raise ValueError("weights must be (K, feature_dim, n) with "
                             "matching (K, feature_dim) biases")
        self.weights = weights
        self.biases = biases
        self.num_classes, self.feature_dim, self.n = weights.shape
        self.d = self.num_classes * self.feature_dim

    @classmethod
    def seeded(cls, ctx, feature_dim):
        """Per-class A_k, b_k drawn once from the context seed."""
        rng = np.random.default_rng(ctx.seed)
        n = ctx.prompt_dim
        weights = rng.standard_normal(
            (ctx.num_classes, feature_dim, n)) / np.sqrt(n)
        biases = rng.standard_normal((ctx.num_classes, feature_dim))
        biases /= np.linalg.norm(biases, axis=1, keepdims=True)
        return cls(weights, biases)

    @classmethod
    def identity(cls, num_classes, feature_dim):
        """A_k = I, b_k = 0 (n = feature_dim): encode(w) = (w, ..., w)."""
        weights = np.broadcast_to(
            np.eye(feature_dim), (num_classes, feature_dim, feature_dim)).copy()
        biases = np.zeros((num_classes, feature_dim))
        return cls(weights, biases)

    @classmethod
    def from_anchors(cls, anchors, n, seed=0, coupling=1.0):
        """b_k = anchor_k (e.g. class means or exported text embeddings),
        A_k random with scale coupling/sqrt(n) and projected onto the tangent
        space of the unit sphere at anchor_k, so the prompt perturbs each
        class embedding the way an L2-normalized encoder could (first order:
        v_k stays unit-norm)."""
        anchors = np.asarray(anchors, dtype=np.float64)
        num_classes, feature_dim = anchors.shape
        rng = np.random.default_rng(seed)
        weights = coupling * rng.standard_normal(
            (num_classes, feature_dim, n)) / np.sqrt(n)
        for k in range(num_classes):
            a = anchors[k] / np.linalg.norm(anchors[k])
            weights[k] -= np.outer(a, a @ weights[k])
        return cls(weights, anchors.copy())

    def encode(self, w):
        w = _check_prompt(w, self.n)
        return self.weights @ w + self.biases  # (K, feature_dim)

    def vjp(self, w, cotangent):
        _check_prompt(w, self.n)
        cot = _check_cotangent(cotangent, self.d)
        cot = cot.reshape(self.num_classes, self.feature_dim)
        return np.einsum("kfn,kf->n", self.weights, cot)

    def vjp_batch(self, w, cotangents):
        """Apply vjp to each row of an (m, d) cotangent matrix at once."""
        _check_prompt(w, self.n)
        cots = np.asarray(cotangents, dtype=np.float64)
        cots = cots.reshape(-1, self.num_classes, self.feature_dim)
        return np.einsum("kfn,mkf->mn", self.weights, cots)


class TinyAttentionEncoder:
    """Single-head attention over [prompt tokens || class tokens], mean-pool,
    linear projection to feature_dim, L2 normalization per class."""

    def __init__(self, ctx, feature_dim):
        self.ctx = ctx
        self.feature_dim = feature_dim
        self.num_classes = ctx.num_classes
        self.n = ctx.prompt_dim
        self.d = ctx.num_classes * feature_dim
        td = ctx.token_dim
        rng = np.random.default_rng(ctx.seed + 1)
        scale = 1.0 / np.sqrt(td)
        self.wq = rng.standard_normal((td, td)) * scale
        self.wk = rng.standard_normal((td, td)) * scale
        self.wv = rng.standard_normal((td, td)) * scale
        self.proj = rng.standard_normal((feature_dim, td)) * scale
        self.proj_bias = rng.standard_normal(feature_dim) * scale

    def _forward_class(self, w, c):
        ctx = self.ctx
        prompts = w.reshape(ctx.num_prompt_tokens, ctx.token_dim)
        x = np.vstack([prompts, ctx.class_tokens[c]])
        q = x @ self.wq
        k = x @ self.wk
        v = x @ self.wv
        scores = q @ k.T / np.sqrt(ctx.token_dim)
        scores = scores - scores.max(axis=1, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=1, keepdims=True)
        pooled = (att @ v).mean(axis=0)
        raw = self.proj @ pooled + self.proj_bias
        norm = np.linalg.norm(raw)
        return {"x": x, "q": q, "k": k, "v": v, "att": att,
                "raw": raw, "norm": norm, "out": raw / norm}

    def encode(self, w):
        w = _check_prompt(w, self.n)
        return np.stack([self._forward_class(w, c)["out"]
                         for c in range(self.num_classes)])

    def vjp(self, w, cotangent):
        w = _check_prompt(w, self.n)
        cot = _check_cotangent(cotangent, self.d)
        cot = cot.reshape(self.num_classes, self.feature_dim)
        ctx = self.ctx
        sqrt_td = np.sqrt(ctx.token_dim)
        grad = np.zeros(self.n)
        for c in range(self.num_classes):
            fwd = self._forward_class(w, c)
            out, norm = fwd["out"], fwd["norm"]
            # normalization backward: d(raw) = (dv - out * <out, dv>) / ||raw||
            d_raw = (cot[c] - out * (out @ cot[c])) / norm
            d_pool = self.proj.T @ d_raw
            num_tokens = fwd["x"].shape[0]
            d_att_out = np.tile(d_pool / num_tokens, (num_tokens, 1))
            att, v = fwd["att"], fwd["v"]
            d_att = d_att_out @ v.T
            d_v = att.T @ d_att_out
            # row-softmax backward
            d_scores = att * (d_att - (d_att * att).sum(axis=1, keepdims=True))
            d_scores /= sqrt_td
            d_q = d_scores @ fwd["k"]
            d_k = d_scores.T @ fwd["q"]
            d_x = d_q @ self.wq.T + d_k @ self.wk.T + d_v @ self.wv.T
            grad += d_x[:ctx.num_prompt_tokens].ravel()
        return grad

    def vjp_batch(self, w, cotangents):
        cots = np.asarray(cotangents, dtype=np.float64)
        return np.stack([self.vjp(w, cot) for cot in cots])


def finite_diff_jacobian(encoder, w, step=1e-5):
    """Central-difference d x n Jacobian of encoder.encode; test oracle only."""
    if step <= 0:
        raise ValueError("step must be positive")
    w = np.asarray(w, dtype=np.float64)
    jac = np.empty((encoder.d, encoder.n))
    for i in range(encoder.n):
        wp, wm = w.copy(), w.copy()
        wp[i] += step
        wm[i] -= step
        jac[:, i] = (encoder.encode(wp) - encoder.encode(wm)).ravel() / (2 * step)
    return jac
