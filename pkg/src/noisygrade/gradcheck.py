"""Finite-difference checks of every training objective.

Each check draws random instances, compares the analytic gradient against
central differences, and records the worst relative error. Loss gradients
are checked end to end: with respect to the logits (or features) and with
respect to every network parameter.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import losses
from .model import backward, forward, init_params
from .numcore import finite_difference_gradient, seeded_rng, softmax

STEP = 1e-5
REL_TOL = 1e-4
KINK_GAP = 1e-3


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < REL_TOL


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(|a|, |n|, 1e-6) elementwise, as one number.

    The floor keeps coordinates whose true derivative is 0 from dividing by
    rounding noise.
    """
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


def _random_logits(rng, c, spread=2.0):
    return rng.normal(scale=spread, size=c)


def _far_from_kinks(p: np.ndarray) -> bool:
    # unimodal hinges sit where adjacent probabilities are equal; argmax
    # flips where the top two are equal
    d = np.abs(np.diff(p))
    top = np.sort(p)[-2:]
    return bool(d.min() >= KINK_GAP and top[1] - top[0] >= KINK_GAP)


def _check_logit_loss(name, loss_fn, make_args, rng, n) -> CheckResult:
    worst = 0.0
    done = 0
    while done < n:
        c = int(rng.integers(3, 7))
        logits = _random_logits(rng, c)
        p = softmax(logits)
        args = make_args(rng, c, p)
        if args is None:
            continue
        _, g = loss_fn(p, *args)
        numeric = finite_difference_gradient(lambda l: float(loss_fn(softmax(l), *args)[0]), logits, STEP)
        worst = max(worst, rel_error(g, numeric))
        done += 1
    return CheckResult(name, n, worst)


def check_nl(rng, n=100) -> CheckResult:
    def args(rng, c, p):
        y = (rng.random(c) < 0.4).astype(float)
        return (y,)
    return _check_logit_loss("nl", losses.nl_loss, args, rng, n)


def check_ce(rng, n=100) -> CheckResult:
    def args(rng, c, p):
        return (np.eye(c)[rng.integers(c)],)
    return _check_logit_loss("ce", losses.ce_loss, args, rng, n)


def check_reg(rng, n=100, sign="prose") -> CheckResult:
    def args(rng, c, p):
        m = rng.dirichlet(np.ones(c)) * rng.uniform(0.0, 1.0)
        return (m, sign)
    return _check_logit_loss(f"reg[{sign}]", losses.reg_loss, args, rng, n)


def check_uni(rng, n=100) -> CheckResult:
    def args(rng, c, p):
        if not _far_from_kinks(p):
            return None
        return (int(np.argmax(p)) + 1,)
    return _check_logit_loss("uni", losses.unimodal_loss, args, rng, n)


def check_total(rng, n=100, alpha1=0.8, alpha2=3.0) -> CheckResult:
    def total(p, y, m, mode):
        parts = [losses.ce_loss(p, y), losses.reg_loss(p, m), losses.unimodal_loss(p, mode)]
        out = losses.mu_total_loss(*(float(v) for v, _ in parts), alpha1, alpha2,
                                   grads=tuple(g for _, g in parts))
        return out.total, out.grad

    def args(rng, c, p):
        if not _far_from_kinks(p):
            return None
        return (np.eye(c)[rng.integers(c)], rng.dirichlet(np.ones(c)) * 0.9, int(np.argmax(p)) + 1)
    return _check_logit_loss("total", total, args, rng, n)


def check_supcon(rng, n=100, tau=0.1) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        b = int(rng.integers(2, 7))
        d = int(rng.integers(2, 6))
        z = rng.normal(size=(b, d))
        labels = rng.integers(0, 3, size=b)
        _, g = losses.supcon_loss(z, labels, tau)
        numeric = finite_difference_gradient(lambda x: losses.supcon_loss(x, labels, tau)[0], z, STEP)
        worst = max(worst, rel_error(g, numeric))
    return CheckResult("con", n, worst)


def check_network(rng, n=10, batch=5) -> CheckResult:
    """Every objective backpropagated to every network parameter."""
    worst = 0.0
    dims = (6, 5, 4, 5)
    done = 0
    while done < n:
        params = init_params(dims, seeded_rng(int(rng.integers(2**31)), 0))
        for t in params.tensors.values():
            t += rng.normal(scale=0.3, size=t.shape)
        x = rng.normal(size=(batch, dims[0]))
        eye = np.eye(dims[3])
        y = eye[rng.integers(dims[3], size=batch)]
        y_or = np.clip(y + eye[rng.integers(dims[3], size=batch)], 0, 1)
        mem = rng.dirichlet(np.ones(dims[3]), size=batch) * 0.8
        labels = rng.integers(0, 2, size=batch)
        _, p0, _ = forward(params, x)
        modes = np.argmax(p0, axis=1) + 1

        def objective(pr):
            z, p, cache = forward(pr, x)
            nl, g_nl = losses.nl_loss(p, y_or)
            ce, g_ce = losses.ce_loss(p, y)
            reg, g_reg = losses.reg_loss(p, mem)
            uni, g_uni = losses.unimodal_loss(p, modes)
            con, g_con = losses.supcon_loss(z, labels, 0.1)
            value = (nl.sum() + ce.sum() + 0.8 * reg.sum() + 3.0 * uni.sum()) / batch + con
            g_logits = (g_nl + g_ce + 0.8 * g_reg + 3.0 * g_uni) / batch
            return value, backward(pr, cache, g_logits, g_con)

        if not all(_far_from_kinks(row) for row in p0):
            continue
        _, grads = objective(params)
        for name, tensor in params.tensors.items():
            def f(v, name=name):
                trial = params.copy()
                trial.tensors[name] = v
                return objective(trial)[0]
            numeric = finite_difference_gradient(f, tensor, STEP)
            worst = max(worst, rel_error(grads[name], numeric))
        done += 1
    return CheckResult("network", done, worst)


def run_all(seed: int = 0, instances: int = 100) -> tuple[list[CheckResult], float]:
    rng = seeded_rng(seed, 99)
    start = time.perf_counter()
    results = [
        check_nl(rng, instances),
        check_supcon(rng, instances),
        check_ce(rng, instances),
        check_reg(rng, instances, "prose"),
        check_reg(rng, instances, "literal"),
        check_uni(rng, instances),
        check_total(rng, instances),
        check_network(rng),
    ]
    return results, time.perf_counter() - start
