"""Bifurcated adaptation loop: gradient-norm separation of the target set,
uncertainty-weighted pseudolabel CE on the known partition, KL-to-uniform
regularization on the unknown partition, SGD with warm-up + cosine annealing.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import core, metrics, separation


class NumericalError(RuntimeError):
    """Loss or gradient became non-finite during training."""


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 0.1
    beta: float = 0.01
    lr: float = 1e-4
    warmup_lr: float = 1e-5
    epochs: int = 5
    batch_size: int = 32
    temperature: float = core.DEFAULT_TEMPERATURE
    seed: int = 0
    # Reserved, unused: kept so configs mentioning a third loss weight parse;
    # no corresponding loss term exists.
    gamma: float = 0.001

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.lr <= 0 or self.warmup_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class PseudoLabel:
    sample_id: str
    label: int
    confidence: float


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    source_ce: float  # full-source CE evaluated after the epoch's updates
    threshold: float
    num_known: int
    num_unknown: int
    lr: float

    def as_dict(self):
        return {"epoch": self.epoch, "mean_loss": self.mean_loss,
                "source_ce": self.source_ce, "threshold": self.threshold,
                "num_known": self.num_known, "num_unknown": self.num_unknown,
                "lr": self.lr}


@dataclass
class AdaptationOutput:
    prompt: np.ndarray
    result: metrics.MetricTriple
    threshold: separation.Threshold
    epoch_logs: list = field(default_factory=list)


def pseudolabel(p, sample_id):
    """Argmax pseudolabel (lowest index wins ties) with its confidence."""
    p = core.check_prob(p)
    label = int(np.argmax(p))
    return PseudoLabel(sample_id=sample_id, label=label,
                       confidence=float(p[label]))


def lr_schedule(step, total_steps, hp):
    """Constant warm-up LR during epoch 0, then cosine annealing from hp.lr
    toward 0 over the remaining steps."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} out of range [0, {total_steps})")
    warmup_steps = total_steps // hp.epochs
    if step < warmup_steps:
        return hp.warmup_lr
    span = max(total_steps - warmup_steps, 1)
    progress = (step - warmup_steps) / span
    return hp.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def _probs(features, class_embeddings, t):
    """Row-wise temperature softmax of the cosine-similarity logits."""
    logits = features @ class_embeddings.T / t
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def _ce_terms(features, labels, class_embeddings, t):
    """Per-sample cross-entropy values and the summed similarity-space
    cotangent sum_i kron((p_i - onehot_i) / t, z_i), optionally weighted."""
    probs = _probs(features, class_embeddings, t)
    idx = np.arange(len(labels))
    losses = -np.log(np.maximum(probs[idx, labels], core.PROB_FLOOR))
    resid = probs.copy()
    resid[idx, labels] -= 1.0
    return losses, resid / t


def total_loss(source_batch, target_known_batch, target_unknown_batch,
               w, encoder, hp):
    """Loss of the bifurcated objective and its exact analytic gradient
    w.r.t. the prompt vector.

    loss = mean CE(source) + alpha * mean(conf * CE(target known, pseudo))
         + beta * mean(KL(u || p) over target unknown)

    source_batch: list of (feature, label); target_known_batch: list of
    (feature, PseudoLabel); target_unknown_batch: list of features. Batches
    may be empty; pseudolabel confidences are constant weights (no gradient
    flows through them).
    """
    k = encoder.num_classes
    t = hp.temperature
    v = encoder.encode(w)
    d = encoder.d
    loss = 0.0
    cot = np.zeros(d)

    if source_batch:
        feats = np.stack([z for z, _ in source_batch])
        labels = np.asarray([y for _, y in source_batch])
        if labels.min() < 0 or labels.max() >= k:
            raise ValueError("source label outside known-class range")
        losses, resid = _ce_terms(feats, labels, v, t)
        loss += losses.mean()
        cot += np.einsum("ik,if->ikf", resid, feats).reshape(-1, d).sum(0) \
            / len(source_batch)

    if target_known_batch and hp.alpha > 0:
        feats = np.stack([z for z, _ in target_known_batch])
        labels = np.asarray([pl.label for _, pl in target_known_batch])
        if labels.min() < 0 or labels.max() >= k:
            raise ValueError("pseudolabel outside known-class range")
        conf = np.asarray([pl.confidence for _, pl in target_known_batch])
        losses, resid = _ce_terms(feats, labels, v, t)
        loss += hp.alpha * (conf * losses).mean()
        weighted = resid * conf[:, None]
        cot += hp.alpha * np.einsum(
            "ik,if->ikf", weighted, feats).reshape(-1, d).sum(0) \
            / len(target_known_batch)

    if target_unknown_batch and hp.beta > 0:
        feats = np.stack(list(target_unknown_batch))
        probs = _probs(feats, v, t)
        kl = (-np.log(np.maximum(probs, core.PROB_FLOOR)).mean(axis=1)
              - np.log(k))
        loss += hp.beta * kl.mean()
        resid = (probs - 1.0 / k) / t
        cot += hp.beta * np.einsum(
            "ik,if->ikf", resid, feats).reshape(-1, d).sum(0) \
            / len(target_unknown_batch)

    grad = encoder.vjp(w, cot)
    return float(loss), grad


def gradient_scores(features, w, encoder, t):
    """L2 norms of the analytic KL-to-uniform prompt gradients, one per row
    of `features`. Higher => more likely unknown."""
    v = encoder.encode(w)
    probs = _probs(features, v, t)
    k = encoder.num_classes
    resid = probs - 1.0 / k
    cots = np.einsum("ik,if->ikf", resid, features).reshape(len(features), -1)
    grads = encoder.vjp_batch(w, cots) / t
    return np.linalg.norm(grads, axis=1)


def evaluate_msp(records, class_embeddings, known_labels, t):
    """Score records with temperature-scaled MSP against fixed class
    embeddings; returns ScoredSamples for the metric suite."""
    known = set(known_labels)
    label_of = {i: lab for i, lab in enumerate(sorted(known))}
    feats = np.stack([r.feature for r in records])
    probs = _probs(feats, class_embeddings, t)
    samples = []
    for i, rec in enumerate(records):
        is_id = rec.label in known
        pred = label_of[int(np.argmax(probs[i]))]
        samples.append(metrics.ScoredSample(
            id=rec.id, score=float(probs[i].max()), is_id=is_id,
            pred_correct=(pred == rec.label) if is_id else None))
    return samples


def run_adaptation(source_records, target_records, encoder, hp,
                   use_ce_term=True, use_kl_term=True, retention=0.9,
                   w_init=None):
    """Full adaptation loop.

    Per epoch: score targets and sources with the gradient-norm detector,
    recalibrate the threshold on source scores, partition the target set,
    refresh pseudolabels on the known partition, then run interleaved
    source/target minibatch SGD. Ablation flags zero the alpha (CE) and/or
    beta (KL) terms. Final metrics use temperature-scaled MSP.
    """
    if not source_records:
        raise ValueError("source set is empty")
    known_labels = sorted({r.label for r in source_records})
    if known_labels != list(range(encoder.num_classes)):
        raise ValueError(
            "source labels must cover 0..K-1 for the configured encoder")

    hp_eff = Hyperparams(
        alpha=hp.alpha if use_ce_term else 0.0,
        beta=hp.beta if use_kl_term else 0.0,
        lr=hp.lr, warmup_lr=hp.warmup_lr, epochs=hp.epochs,
        batch_size=hp.batch_size, temperature=hp.temperature,
        seed=hp.seed, gamma=hp.gamma)

    rng = np.random.default_rng(hp.seed)
    w = (np.asarray(w_init, dtype=np.float64).copy() if w_init is not None
         else np.zeros(encoder.n))
    src_feats = np.stack([r.feature for r in source_records])
    src_labels = np.asarray([r.label for r in source_records])
    tgt_feats = np.stack([r.feature for r in target_records])
    tgt_index = {r.id: i for i, r in enumerate(target_records)}

    steps_per_epoch = math.ceil(len(source_records) / hp.batch_size)
    total_steps = steps_per_epoch * hp.epochs
    epoch_logs = []
    threshold = None

    for epoch in range(hp.epochs):
        src_scores = gradient_scores(src_feats, w, encoder, hp.temperature)
        tgt_scores = gradient_scores(tgt_feats, w, encoder, hp.temperature)
        threshold = separation.calibrate_threshold(
            src_scores, retention=retention,
            convention=separation.HIGHER_IS_UNKNOWN)
        part = separation.separate(
            [(r.id, tgt_scores[tgt_index[r.id]]) for r in target_records],
            threshold)

        v = encoder.encode(w)
        known_batchpool = []
        for sample_id in part.known_ids:
            i = tgt_index[sample_id]
            p = _probs(tgt_feats[i:i + 1], v, hp.temperature)[0]
            known_batchpool.append(
                (tgt_feats[i], pseudolabel(p, sample_id)))
        unknown_batchpool = [tgt_feats[tgt_index[s]] for s in part.unknown_ids]

        src_order = rng.permutation(len(source_records))
        if known_batchpool:
            known_order = rng.permutation(len(known_batchpool))
        if unknown_batchpool:
            unknown_order = rng.permutation(len(unknown_batchpool))

        losses = []
        lr = hp.warmup_lr
        for step in range(steps_per_epoch):
            global_step = epoch * steps_per_epoch + step
            lr = lr_schedule(global_step, total_steps, hp_eff)
            bs = hp.batch_size
            idx = src_order[step * bs:(step + 1) * bs]
            source_batch = [(src_feats[i], int(src_labels[i])) for i in idx]
            known_batch = []
            if known_batchpool:
                picks = [known_order[(step * bs + j) % len(known_batchpool)]
                         for j in range(min(bs, len(known_batchpool)))]
                known_batch = [known_batchpool[i] for i in picks]
            unknown_batch = []
            if unknown_batchpool:
                picks = [unknown_order[(step * bs + j) % len(unknown_batchpool)]
                         for j in range(min(bs, len(unknown_batchpool)))]
                unknown_batch = [unknown_batchpool[i] for i in picks]
            loss, grad = total_loss(source_batch, known_batch, unknown_batch,
                                    w, encoder, hp_eff)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NumericalError(
                    f"non-finite loss/gradient at epoch {epoch} step {step}")
            w = w - lr * grad
            losses.append(loss)

        v_now = encoder.encode(w)
        probs_y = _probs(src_feats, v_now, hp.temperature)[
            np.arange(len(src_labels)), src_labels]
        source_ce = float(-np.log(np.maximum(probs_y, core.PROB_FLOOR)).mean())
        epoch_logs.append(EpochLog(
            epoch=epoch, mean_loss=float(np.mean(losses)),
            source_ce=source_ce, threshold=threshold.value,
            num_known=len(part.known_ids),
            num_unknown=len(part.unknown_ids), lr=lr))

    final_v = encoder.encode(w)
    samples = evaluate_msp(target_records, final_v, known_labels,
                           hp.temperature)
    triple = metrics.metric_triple(samples)
    return AdaptationOutput(prompt=w, result=triple, threshold=threshold,
                            epoch_logs=epoch_logs)
