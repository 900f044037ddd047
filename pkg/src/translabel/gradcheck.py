"""Finite-difference verification of analytic gradients.

``grad_check`` reruns a scalar-valued function with each parameter
entry nudged up and down (central differences) and compares the slope
against the gradient produced by ``Tensor.backward()``. It is the
independent oracle for every backward closure in ``autodiff``.

Checks should run on float64 parameters; at float32 the difference
quotient itself carries too much rounding noise for the tolerances
used here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

log = logging.getLogger(__name__)

# Relative error floor: differences below this magnitude are compared
# against the floor instead, so difference-quotient noise on true-zero
# gradients does not register as error.
REL_FLOOR = 1e-5


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float

    def ok(self, tolerance: float) -> bool:
        return self.max_rel_err <= tolerance


@dataclass
class GradCheckReport:
    step: float
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.ok(self.tolerance) for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            status = "ok" if e.ok(self.tolerance) else "FAIL"
            out.append(f"{status:4s} {e.name:30s} max_rel_err={e.max_rel_err:.3e}")
        return out


def grad_check(fn, params: dict[str, Tensor], step: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare backward() gradients of fn() against central differences.

    ``fn`` takes no arguments, reads the parameter tensors, and returns
    a scalar Tensor. It must be deterministic and rebuild its graph on
    every call. Parameter data is perturbed in place and restored.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            log.warning("grad_check: parameter %r is %s, expected float64",
                        name, p.data.dtype)

    try:
        loss = fn()
    except ad.NonFiniteError as err:
        raise ad.NonFiniteError(err.op, err.where) from err
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}

    report = GradCheckReport(step=step, tolerance=tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        worst = 0.0
        worst_ix: tuple[int, ...] = ()
        worst_a = worst_n = 0.0
        ana_flat = analytic[name].reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + step
            with ad.no_grad():
                up = fn().item()
            flat[i] = orig - step
            with ad.no_grad():
                down = fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = float(ana_flat[i])
            denom = max(abs(a), abs(numeric), REL_FLOOR)
            err = abs(a - numeric) / denom
            if err > worst:
                worst = err
                worst_ix = np.unravel_index(i, p.data.shape)
                worst_a, worst_n = a, numeric
        report.entries.append(GradCheckEntry(
            name=name, max_rel_err=worst, worst_index=worst_ix,
            analytic=worst_a, numeric=worst_n))
    return report


# -- primitive suite ---------------------------------------------------


def primitive_suite(seed: int = 7, step: float = 1e-5,
                    tolerance: float = 1e-4) -> dict[str, GradCheckReport]:
    """Check every autodiff primitive against finite differences."""
    rng = np.random.default_rng(seed)
    dt = np.float64

    def t(*shape):
        return Tensor(rng.standard_normal(shape).astype(dt) * 0.7)

    reports: dict[str, GradCheckReport] = {}

    def check(name, params, fn):
        reports[name] = grad_check(fn, params, step=step, tolerance=tolerance)

    a, b = t(5, 4), t(5, 4)
    check("add", {"a": a, "b": b}, lambda: ad.mul(ad.add(a, b), b).sum())
    a2, b2 = t(4, 3), t(4, 3)
    check("mul", {"a": a2, "b": b2}, lambda: ad.mul(a2, b2).sum())
    n1 = t(6)
    check("neg", {"a": n1}, lambda: ad.mul(ad.neg(n1), n1).sum())

    m1, m2 = t(5, 4), t(4, 3)
    check("matmul_2d_2d", {"a": m1, "b": m2},
          lambda: ad.tanh(ad.matmul(m1, m2)).sum())
    v1 = t(4)
    check("matmul_2d_1d", {"a": m1, "v": v1},
          lambda: ad.tanh(ad.matmul(m1, v1)).sum())
    v2 = t(5)
    check("matmul_1d_2d", {"v": v2, "a": m1},
          lambda: ad.tanh(ad.matmul(v2, m1)).sum())
    d1, d2 = t(6), t(6)
    check("matmul_1d_1d", {"a": d1, "b": d2}, lambda: ad.matmul(d1, d2))

    e1 = t(7)
    check("tanh", {"a": e1}, lambda: ad.tanh(e1).sum())
    check("sigmoid", {"a": e1}, lambda: ad.sigmoid(e1).sum())
    check("exp", {"a": e1}, lambda: ad.exp(e1).sum())
    pos = Tensor(np.abs(rng.standard_normal(7)) + 0.5)
    check("log", {"a": pos}, lambda: ad.log(pos).sum())

    c1, c2, c3 = t(3), t(4), t(2)
    check("concat", {"a": c1, "b": c2, "c": c3},
          lambda: ad.tanh(ad.concat([c1, c2, c3])).sum())
    s1, s2 = t(5), t(5)
    check("stack", {"a": s1, "b": s2},
          lambda: ad.tanh(ad.stack([s1, s2])).sum())
    nr = t(8)
    check("narrow", {"a": nr},
          lambda: ad.mul(ad.narrow(nr, 2, 4), ad.narrow(nr, 0, 4)).sum())
    tk = t(6)
    check("take", {"a": tk},
          lambda: ad.tanh(ad.take(tk, [0, 3, 3, 5])).sum())
    rw = t(5, 3)
    check("take_row", {"a": rw},
          lambda: ad.mul(ad.take_row(rw, 1), ad.take_row(rw, 4)).sum())

    sm = t(9)
    check("softmax", {"a": sm},
          lambda: ad.mul(ad.softmax(sm), ad.softmax(sm)).sum())
    logits = t(6)
    check("cross_entropy", {"logits": logits},
          lambda: ad.cross_entropy(ad.softmax(logits), 2))

    x = t(5)
    h0, c0 = t(4), t(4)
    w = ad.init_lstm(rng, 5, 4, dt)
    check("lstm_step",
          {"x": x, "h0": h0, "c0": c0, "w_in": w.w_in, "w_rec": w.w_rec,
           "bias": w.bias},
          lambda: _lstm_probe(x, h0, c0, w))

    return reports


def _lstm_probe(x, h0, c0, w):
    h, c = ad.lstm_step(x, (h0, c0), w)
    h2, _ = ad.lstm_step(x, (h, c), w)
    return ad.mul(h2, h2).sum()
