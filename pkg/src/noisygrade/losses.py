"""Training objectives and label constructions for the two training stages.

Per-sample losses take probabilities ``p`` (a vector, or a batch with one
row per sample) produced by a temperature-1 softmax and return the loss
value together with its gradient with respect to the *logits*. Batched
inputs give per-row losses and per-row gradients; averaging over the batch
is the caller's job. ``supcon_loss`` is the exception: it is defined over
a whole batch and returns the batch mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import (
    DegenerateInput,
    InvalidArgument,
    check_probability,
    softmax,
    softmax_backward,
)

LOG_CLAMP = 1e-8
REG_SIGNS = ("prose", "literal")


def _scalar_or_rows(x: np.ndarray, single: bool):
    return float(x[0]) if single else x


def nl_loss(p, y_or) -> tuple[float | np.ndarray, np.ndarray]:
    """Negative-learning loss on the complement of the OR-ed annotations.

    -sum_k (1 - y_k) ln(1 - p_k), with 1 - p_k clamped at 1e-8. A sample
    whose annotations cover every class has no complementary label and a
    loss of exactly 0.
    """
    p = check_probability(p)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    comp = 1.0 - np.atleast_2d(np.asarray(y_or, dtype=np.float64))
    if comp.shape != p.shape:
        raise InvalidArgument(f"label shape {comp.shape} does not match {p.shape}")
    q = 1.0 - p
    live = q > LOG_CLAMP
    loss = -np.sum(comp * np.log(np.maximum(q, LOG_CLAMP)), axis=1)
    # d/dp_k of -ln(1-p_k) is 1/(1-p_k); zero where the clamp is active
    grad_p = np.where(live, comp / np.where(live, q, 1.0), 0.0)
    grad = softmax_backward(p, grad_p)
    return _scalar_or_rows(loss, single), grad[0] if single else grad


def ce_loss(p, y) -> tuple[float | np.ndarray, np.ndarray]:
    """Cross-entropy against a one-hot annotation; gradient is p - y."""
    p = check_probability(p)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape != p.shape:
        raise InvalidArgument(f"label shape {y.shape} does not match {p.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise InvalidArgument("ce_loss expects one-hot labels")
    pc = np.sum(p * y, axis=1)
    loss = -np.log(np.maximum(pc, LOG_CLAMP))
    grad = p - y
    return _scalar_or_rows(loss, single), grad[0] if single else grad


def reg_loss(p, p_mem, sign: str = "prose") -> tuple[float | np.ndarray, np.ndarray]:
    """Memory regulariser on the inner product s = <p_mem, p>.

    ``sign="prose"`` gives ln(1 - s), whose minimisation pulls ``p`` towards
    the memory target. ``sign="literal"`` gives -ln(1 - s). ``s`` is clamped
    to at most 1 - 1e-8. The memory vector is a constant target.
    """
    if sign not in REG_SIGNS:
        raise InvalidArgument(f"reg sign must be one of {REG_SIGNS}, got {sign!r}")
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    m = np.atleast_2d(np.asarray(p_mem, dtype=np.float64))
    if m.shape != p.shape:
        raise InvalidArgument(f"memory shape {m.shape} does not match {p.shape}")
    s = np.sum(m * p, axis=1)
    live = s < 1.0 - LOG_CLAMP
    s_c = np.minimum(s, 1.0 - LOG_CLAMP)
    k = 1.0 if sign == "prose" else -1.0
    loss = k * np.log1p(-s_c)
    grad_p = np.where(live, -k / (1.0 - s_c), 0.0)[:, None] * m
    grad = softmax_backward(p, grad_p)
    return _scalar_or_rows(loss, single), grad[0] if single else grad


def unimodal_loss(p, y_hat) -> tuple[float | np.ndarray, np.ndarray]:
    """Hinge penalty for a distribution that is not unimodal at ``y_hat``.

    ``y_hat`` is 1-based. The penalty sums max(0, p_k - p_{k+1}) for
    k < y_hat (must rise up to the mode) and max(0, p_{k+1} - p_k) for
    y_hat <= k < C (must fall after it). Returns a subgradient that is 0 on
    the hinge kinks.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    n_classes = p.shape[1]
    mode = np.broadcast_to(np.asarray(y_hat, dtype=np.int64), (p.shape[0],))
    if np.any(mode < 1) or np.any(mode > n_classes):
        raise InvalidArgument(f"mode must be in [1, {n_classes}]")
    k = np.arange(1, n_classes)  # 1-based left index of each adjacent pair
    diff = p[:, 1:] - p[:, :-1]  # p_{k+1} - p_k
    rising = k[None, :] < mode[:, None]
    # violation is -diff before the mode, +diff from the mode on
    signed = np.where(rising, -diff, diff)
    active = signed > 0
    loss = np.sum(np.where(active, signed, 0.0), axis=1)
    coeff = np.where(active, np.where(rising, -1.0, 1.0), 0.0)  # d loss / d diff
    grad_p = np.zeros_like(p)
    grad_p[:, 1:] += coeff
    grad_p[:, :-1] -= coeff
    grad = softmax_backward(p, grad_p)
    return _scalar_or_rows(loss, single), grad[0] if single else grad


def supcon_loss(features, labels, temperature: float = 0.1) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss over a batch, with its feature gradient.

    Features are L2-normalised internally. For anchor i the positives are
    the other samples sharing its label and the denominator runs over every
    other sample. Anchors without a positive are dropped from the mean; if
    no anchor has one the loss is 0.
    """
    z = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n = z.shape[0]
    if z.ndim != 2 or n < 2:
        raise InvalidArgument("supcon_loss needs a batch of at least 2 feature rows")
    if labels.shape != (n,):
        raise InvalidArgument("one label per feature row required")
    if not temperature > 0:
        raise InvalidArgument("temperature must be positive")
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise DegenerateInput("zero feature vector in supcon batch")
    u = z / norm
    logits = (u @ u.T) / temperature
    off_diag = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & off_diag
    n_pos = pos.sum(axis=1)
    anchors = n_pos > 0
    n_anchor = int(anchors.sum())
    if n_anchor == 0:
        return 0.0, np.zeros_like(z)

    masked = np.where(off_diag, logits, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    expd = np.where(off_diag, np.exp(masked - row_max), 0.0)
    denom = expd.sum(axis=1, keepdims=True)
    log_prob = logits - row_max - np.log(denom)
    per_anchor = -np.sum(np.where(pos, log_prob, 0.0), axis=1) / np.maximum(n_pos, 1)
    loss = float(per_anchor[anchors].sum() / n_anchor)

    # dL/dlogits for anchor rows: (softmax over others - positive indicator / |U|) / n_anchor
    g = (expd / denom - pos / np.maximum(n_pos, 1)[:, None]) * anchors[:, None] / n_anchor
    du = (g + g.T) @ u / temperature
    dz = (du - u * np.sum(du * u, axis=1, keepdims=True)) / norm
    return loss, dz


@dataclass
class ClassCentroids:
    """Per-class mean features; ``seen[k]`` is False until class k has a member."""

    means: np.ndarray  # (C, d_z)
    seen: np.ndarray  # (C,) bool
    ema: float | None = None

    @classmethod
    def empty(cls, n_classes: int, dim: int, ema: float | None = None) -> "ClassCentroids":
        return cls(np.zeros((n_classes, dim)), np.zeros(n_classes, dtype=bool), ema)


def batch_centroids(features, predictions, previous: ClassCentroids | None = None,
                    ema: float | None = None) -> ClassCentroids:
    """Class means of ``features`` grouped by argmax of ``predictions``.

    With ``previous`` and an ``ema`` coefficient, classes seen in this batch
    blend as ``ema * old + (1 - ema) * batch_mean`` (or take the batch mean
    the first time they are seen); classes absent from the batch keep their
    previous state.
    """
    z = np.atleast_2d(np.asarray(features, dtype=np.float64))
    p = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    if z.shape[0] == 0 or z.shape[0] != p.shape[0]:
        raise InvalidArgument("features and predictions need the same non-zero batch size")
    n_classes = p.shape[1]
    pred = np.argmax(p, axis=1)
    counts = np.bincount(pred, minlength=n_classes)
    sums = np.zeros((n_classes, z.shape[1]))
    np.add.at(sums, pred, z)
    seen_now = counts > 0
    means = np.zeros_like(sums)
    means[seen_now] = sums[seen_now] / counts[seen_now, None]
    if previous is None:
        return ClassCentroids(means, seen_now, ema)
    coeff = previous.ema if ema is None else ema
    out = previous.means.copy()
    blend = seen_now & previous.seen
    fresh = seen_now & ~previous.seen
    if coeff is None:
        out[seen_now] = means[seen_now]
    else:
        out[blend] = coeff * previous.means[blend] + (1 - coeff) * means[blend]
        out[fresh] = means[fresh]
    return ClassCentroids(out, previous.seen | seen_now, coeff)


def pseudo_label(z, centroids: ClassCentroids, temperature: float = 0.1) -> np.ndarray:
    """Softmax of cosine similarity to each seen centroid; unseen classes get 0."""
    seen = np.asarray(centroids.seen, dtype=bool)
    if not seen.any():
        raise DegenerateInput("no class centroid has been observed yet")
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = np.atleast_2d(z)
    cen = centroids.means[seen]
    zn = np.linalg.norm(zb, axis=1, keepdims=True)
    cn = np.linalg.norm(cen, axis=1)
    if np.any(zn == 0) or np.any(cn == 0):
        raise DegenerateInput("zero-norm feature or centroid")
    sim = np.clip((zb @ cen.T) / (zn * cn[None, :]), -1.0, 1.0)
    out = np.zeros((zb.shape[0], seen.size))
    out[:, seen] = softmax(sim, temperature)
    return out[0] if single else out


@dataclass
class MemoryBank:
    """Per-image exponential moving average of pseudo-labels, zero-initialised."""

    n_classes: int
    beta: float = 0.9
    vectors: dict[int, np.ndarray] = field(default_factory=dict)
    epoch: int = 0

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise InvalidArgument(f"beta must lie in (0, 1), got {self.beta}")

    def get(self, image_ids) -> np.ndarray:
        """Stored vectors for ``image_ids`` (zeros for ids never updated)."""
        zero = np.zeros(self.n_classes)
        return np.array([self.vectors.get(int(i), zero) for i in image_ids]).reshape(-1, self.n_classes)

    def update(self, image_id: int, p_hat) -> np.ndarray:
        p_hat = np.asarray(p_hat, dtype=np.float64)
        if p_hat.shape != (self.n_classes,):
            raise InvalidArgument(f"pseudo-label must have length {self.n_classes}")
        old = self.vectors.get(int(image_id))
        if old is None:
            old = np.zeros(self.n_classes)
        new = self.beta * old + (1.0 - self.beta) * p_hat
        self.vectors[int(image_id)] = new
        return new


def memory_update(bank: MemoryBank, image_id: int, p_hat) -> MemoryBank:
    bank.update(image_id, p_hat)
    return bank


@dataclass
class LossBreakdown:
    ce: float
    reg: float
    uni: float
    total: float
    alpha1: float
    alpha2: float
    grad: np.ndarray | None = None


def mu_total_loss(ce, reg, uni, alpha1: float = 0.8, alpha2: float = 3.0,
                  grads: tuple | None = None) -> LossBreakdown:
    """Combine the fine-tuning terms as ce + alpha1*reg + alpha2*uni.

    ``grads``, when given, is a (ce, reg, uni) triple of gradient arrays that
    is combined with the same coefficients.
    """
    total = ce + alpha1 * reg + alpha2 * uni
    grad = None
    if grads is not None:
        g_ce, g_reg, g_uni = grads
        grad = g_ce + alpha1 * g_reg + alpha2 * g_uni
    return LossBreakdown(ce, reg, uni, total, alpha1, alpha2, grad)
