"""Class-confidence aware weight and its derivatives.

All functions accept plain floats, numpy arrays (broadcast elementwise) or
the small validated wrappers below.  Scalar in, float out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

E = math.e
# sup over f of the derivative jump at the pivot, ln(e / (e - 1))
JUMP_BOUND = math.log(E / (E - 1.0))


@dataclass(frozen=True)
class Confidence:
    """Probability the model assigns to the ground-truth class."""

    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.value!r}")


@dataclass(frozen=True)
class ClassFrequency:
    value: float

    def __post_init__(self):
        if not 0.0 < self.value < 1.0:
            raise ValueError(f"class frequency must lie in (0, 1), got {self.value!r}")


@dataclass(frozen=True)
class PivotOmega:
    value: float = 0.75

    def __post_init__(self):
        if not 0.0 < self.value <= 1.0:
            raise ValueError(f"pivot omega must lie in (0, 1], got {self.value!r}")


def _unwrap(x, lo, hi, lo_open, hi_open, name):
    if isinstance(x, (Confidence, ClassFrequency, PivotOmega)):
        return x.value
    arr = np.asarray(x, dtype=np.float64)
    bad_lo = arr <= lo if lo_open else arr < lo
    bad_hi = arr >= hi if hi_open else arr > hi
    if np.any(bad_lo | bad_hi | ~np.isfinite(arr)):
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ValueError(f"{name} outside {lb}{lo}, {hi}{rb}: {x!r}")
    return x


def _args(p, f, w):
    p = _unwrap(p, 0.0, 1.0, False, False, "confidence")
    f = _unwrap(f, 0.0, 1.0, True, True, "class frequency")
    w = _unwrap(w, 0.0, 1.0, True, False, "pivot omega")
    return np.asarray(p, float), np.asarray(f, float), np.asarray(w, float)


def _out(x, *inputs):
    if all(np.ndim(i) == 0 for i in inputs):
        return float(x)
    return x


def dual_phase_frequency(p, f, w=0.75):
    """Frequency below the pivot, ``1 - f`` at or above it."""
    pa, fa, wa = _args(p, f, w)
    return _out(np.where(pa < wa, fa, 1.0 - fa), p, f, w)


def adaptive_capacity(p, f, w=0.75):
    """``ln(e - f')``; always inside ``(ln(e - 1), 1)``."""
    pa, fa, wa = _args(p, f, w)
    fp = np.where(pa < wa, fa, 1.0 - fa)
    return _out(np.log(E - fp), p, f, w)


def effective_base(p, f, w=0.75):
    pa, fa, wa = _args(p, f, w)
    return _out(E - np.where(pa < wa, fa, 1.0 - fa), p, f, w)


def _capacity(pa, fa, wa):
    return np.log(E - np.where(pa < wa, fa, 1.0 - fa))


def omega_weight(p, f, w=0.75):
    """Per-sample weight ``(e - f')**(w - p)``.

    Evaluated as ``exp((w - p) * ln(e - f'))`` so the weight, its derivative
    and the modulation factor share one log value.
    """
    pa, fa, wa = _args(p, f, w)
    return _out(np.exp((wa - pa) * _capacity(pa, fa, wa)), p, f, w)


def omega_derivative(p, f, w=0.75, *, return_flag=False):
    """d(weight)/dp with the dual-phase frequency held locally constant.

    At ``p == w`` the inverted branch applies, so the value returned there is
    the right-hand limit; with ``return_flag=True`` a second result marks
    which entries are one-sided.
    """
    pa, fa, wa = _args(p, f, w)
    beta = _capacity(pa, fa, wa)
    d = _out(-beta * np.exp((wa - pa) * beta), p, f, w)
    if not return_flag:
        return d
    at_pivot = pa == wa
    return d, bool(at_pivot) if at_pivot.ndim == 0 else at_pivot


def derivative_jump(f):
    """Size of the derivative discontinuity at the pivot, ``|ln((e-f)/(e-1+f))|``."""
    fa = np.asarray(_unwrap(f, 0.0, 1.0, True, True, "class frequency"), float)
    jump = np.abs(np.log(E - fa) - np.log(E - 1.0 + fa))
    return float(jump) if np.ndim(jump) == 0 else jump


def modulation_factor(p, f, w=0.75):
    """Scalar multiplying ``p - e_t`` in the logit gradient of weighted CE.

    ``gamma**(w - p) * (1 - p * ln(gamma) * ln(p))``.  At ``p == 0`` the
    ``p ln p`` term is replaced by its limit 0.
    """
    pa, fa, wa = _args(p, f, w)
    beta = _capacity(pa, fa, wa)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(pa > 0.0, pa * np.log(np.where(pa > 0.0, pa, 1.0)), 0.0)
    psi = np.exp((wa - pa) * beta) * (1.0 - beta * plogp)
    return _out(psi, p, f, w)


def modulation_bound(w=0.75):
    """Upper bound ``e**w * (1 + 1/e)`` on the modulation factor."""
    w = _unwrap(w, 0.0, 1.0, True, False, "pivot omega")
    return math.exp(float(w)) * (1.0 + 1.0 / E)
