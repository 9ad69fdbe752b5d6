"""Numerical kernels: temperature-scaled softmax, KL-to-uniform loss and its
analytic gradients, plus the scalar scoring functions used for unknown-sample
detection.

All math runs in float64. Probabilities are clamped at PROB_FLOOR before any
log so gradients stay bounded near the simplex boundary.
"""

import numpy as np

# Floor applied to probabilities before log / division.
PROB_FLOOR = 1e-12

# Default logit scale divisor: logits = f / T. 0.01 matches the conventional
# pretrained cosine-similarity logit scale of 100.
DEFAULT_TEMPERATURE = 0.01


def _as_vector(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def check_prob(p):
    """Validate a probability vector: finite, >= 0, sums to 1 within 1e-9."""
    p = _as_vector(p, "p")
    if p.size < 2:
        raise ValueError("probability vector needs at least 2 entries")
    if np.any(p < -1e-12):
        raise ValueError("probability vector has negative entries")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum()}, expected 1")
    return p


def _check_temperature(t):
    t = float(t)
    if not np.isfinite(t) or t <= 0.0:
        raise ValueError(f"temperature must be positive, got {t}")
    return t


def temp_softmax(f, t=DEFAULT_TEMPERATURE):
    """softmax(f / t), numerically stable via max subtraction."""
    f = _as_vector(f, "f")
    if f.size < 2:
        raise ValueError("need at least 2 logits")
    t = _check_temperature(t)
    g = f / t
    g = g - g.max()
    e = np.exp(g)
    return e / e.sum()


def kl_uniform(p):
    """KL divergence from the uniform distribution u to p:
    D_KL(u || p) = (1/K) * sum_i(-log p_i) - log K.  Zero iff p is uniform."""
    p = check_prob(p)
    k = p.size
    q = np.maximum(p, PROB_FLOOR)
    return float(-np.log(q).mean() - np.log(k))


def entropy_score(p):
    """Shannon entropy -sum p_i log p_i; equals log K - D_KL(p || u)."""
    p = check_prob(p)
    q = np.maximum(p, PROB_FLOOR)
    return float(-(p * np.log(q)).sum())


def softmax_jacobian(p):
    """Jacobian of softmax at output p: diag(p) - p p^T (symmetric PSD,
    zero row sums)."""
    p = check_prob(p)
    return np.diag(p) - np.outer(p, p)


def kl_loss_grad_wrt_probs(p):
    """Gradient of kl_uniform w.r.t. p directly: -(1/K) / p_i per entry."""
    p = check_prob(p)
    q = np.maximum(p, PROB_FLOOR)
    return -1.0 / (p.size * q)


def kl_grad_wrt_logits(p, composed=False):
    """Gradient of kl_uniform(softmax(g)) w.r.t. the logits g.

    Closed form is p - u.  With composed=True the gradient is instead built
    from the softmax Jacobian and the probability-space gradient; both paths
    agree to ~1e-12 and the composed one exists as an internal cross-check.
    """
    p = check_prob(p)
    if composed:
        return softmax_jacobian(p).T @ kl_loss_grad_wrt_probs(p)
    return p - 1.0 / p.size


def similarity_cotangent(z, p):
    """The d-vector (d = K * feature_dim) whose k-th block is z * (p_k - 1/K);
    the blockdiag(z) matrix applied to p - u."""
    z = _as_vector(z, "z")
    p = check_prob(p)
    return np.kron(p - 1.0 / p.size, z)


def prompt_gradient(z, p, encoder_vjp, t=DEFAULT_TEMPERATURE):
    """Analytic gradient of the KL-to-uniform loss w.r.t. the prompt vector.

    Equals (1/t) * J^T * blockdiag(z, ..., z) * (p - u), with J = dv/dw
    supplied through ``encoder_vjp`` (a map cotangent -> J^T cotangent).
    """
    t = _check_temperature(t)
    cot = similarity_cotangent(z, p)
    g = np.asarray(encoder_vjp(cot), dtype=np.float64)
    if g.ndim != 1:
        raise ValueError("encoder vjp must return a 1-D vector")
    return g / t


def prompt_gradient_composed(z, p, jacobian, t=DEFAULT_TEMPERATURE):
    """Reference chain-rule path: J^T * (df/dv)^T * (dp/df)^T * dl/dp with the
    full matrices materialized.  ``jacobian`` is the dense d x n matrix dv/dw.
    Used to cross-check prompt_gradient; O(K * d * n) memory."""
    z = _as_vector(z, "z")
    p = check_prob(p)
    t = _check_temperature(t)
    jacobian = np.asarray(jacobian, dtype=np.float64)
    k = p.size
    d = k * z.size
    if jacobian.shape[0] != d:
        raise ValueError(
            f"jacobian has {jacobian.shape[0]} rows, expected {d}")
    df_dv = np.zeros((k, d))
    for i in range(k):
        df_dv[i, i * z.size:(i + 1) * z.size] = z
    dl_df = softmax_jacobian(p).T @ kl_loss_grad_wrt_probs(p)
    return jacobian.T @ (df_dv.T @ dl_df) / t


def grad_l2_score(gradient):
    """L2 norm of the prompt-space gradient. Higher => more likely unknown."""
    gradient = _as_vector(gradient, "gradient")
    return float(np.linalg.norm(gradient))


def gradnorm_l1_baseline(z, p):
    """GradNorm-style baseline: L1 norm of the KL loss gradient w.r.t. a
    final fully connected layer (weights + bias) acting on feature z.

    Equals ||p - u||_1 * (||z||_1 + 1).  Higher => more likely KNOWN, the
    opposite convention of grad_l2_score.
    """
    z = _as_vector(z, "z")
    p = check_prob(p)
    r = p - 1.0 / p.size
    return float(np.abs(r).sum() * (np.abs(z).sum() + 1.0))


def energy_score(f, t=DEFAULT_TEMPERATURE):
    """-t * logsumexp(f / t). Higher => more likely unknown under this sign."""
    f = _as_vector(f, "f")
    t = _check_temperature(t)
    g = f / t
    m = g.max()
    return float(-t * (m + np.log(np.exp(g - m).sum())))


def msp_score(f, t=DEFAULT_TEMPERATURE):
    """Maximum softmax probability of f / t. Higher => more likely known."""
    return float(temp_softmax(f, t).max())
