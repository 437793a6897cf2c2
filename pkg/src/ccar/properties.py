"""Invariant suite behind ``ccar check``.

Each check returns a :class:`PropertyResult`; ``max_error`` is the worst
violation measure seen and ``passed`` compares it with ``tolerance``.
Functions are looked up through their modules at call time so a patched
implementation is what gets checked.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, List, NamedTuple

import numpy as np

from . import data, losses, tinynet, weighting


class PropertyResult(NamedTuple):
    name: str
    samples: int
    max_error: float
    tolerance: float
    passed: bool


def _result(name, samples, err, tol, ok=None) -> PropertyResult:
    err = float(err)
    return PropertyResult(name, int(samples), err, tol, bool(err <= tol if ok is None else ok))


def _rng(tag: int) -> np.random.Generator:
    return np.random.default_rng(20240917 + tag)


def _f_grid(n=1000):
    return (np.arange(n) + 0.5) / n


def pivot_continuity():
    fs = _f_grid(200)
    ws = np.linspace(0.01, 1.0, 100)
    F, Wg = np.meshgrid(fs, ws)
    err = 0.0
    for sign in (-1.0, 1.0):
        P = np.clip(Wg + sign * 1e-9, 0.0, 1.0)
        err = max(err, np.max(np.abs(weighting.omega_weight(P, F, Wg) - 1.0)))
    err = max(err, np.max(np.abs(weighting.omega_weight(Wg, F, Wg) - 1.0)))
    return _result("pivot continuity |weight(w +- 1e-9) - 1|", 3 * F.size, err, 1e-8)


def monotone_in_confidence():
    rng = _rng(1)
    n = 10_000
    p1, p2 = np.sort(rng.uniform(0, 1, (2, n)), axis=0)
    f = rng.uniform(0.001, 0.999, n)
    w = rng.uniform(0.05, 1.0, n)
    keep = p2 - p1 > 1e-9
    d = weighting.omega_weight(p1, f, w) - weighting.omega_weight(p2, f, w)
    bad = int(np.sum(d[keep] <= 0))
    return _result("weight strictly decreasing in confidence (violations)", keep.sum(), bad, 0)


def rare_class_emphasis():
    rng = _rng(2)
    n = 10_000
    f1, f2 = np.sort(rng.uniform(0.001, 0.999, (2, n)), axis=0)
    p = rng.uniform(0, 1, n)
    w = np.full(n, 0.75)
    keep = (np.abs(p - w) > 1e-6) & (f2 - f1 > 1e-9)
    d = weighting.omega_weight(p, f1, w) - weighting.omega_weight(p, f2, w)
    bad = int(np.sum(d[keep] <= 0))
    return _result("rarer class gets larger weight (violations)", keep.sum(), bad, 0)


def jump_bound():
    j = weighting.derivative_jump(_f_grid())
    sup = float(j.max())
    # report the supremum itself; it must stay under ln(e/(e-1)) and round to 0.46
    ok = sup <= weighting.JUMP_BOUND + 1e-12 and 0.45 <= sup <= 0.46
    return _result("derivative jump max over f-grid (<= 0.4587)", j.size, sup, weighting.JUMP_BOUND, ok)


def modulation_bounded():
    ps = np.linspace(0, 1, 100)
    fs = _f_grid(100)
    P, F = np.meshgrid(ps, fs)
    worst = 0.0
    ok = True
    for w in (0.25, 0.5, 0.75, 1.0):
        psi = weighting.modulation_factor(P, F, w)
        ok &= bool(np.all(psi > 0))
        worst = max(worst, float(np.max(psi / weighting.modulation_bound(w))))
    return _result("modulation factor / e^w(1+1/e) (<= 1, > 0)", 4 * P.size, worst, 1.0, ok and worst <= 1.0)


def derivative_consistency():
    rng = _rng(3)
    h = 1e-6
    n = 2000
    w = rng.uniform(0.05, 1.0, n)
    f = rng.uniform(0.001, 0.999, n)
    p = rng.uniform(0.0 + 2 * h, 1.0 - 2 * h, n)
    keep = np.abs(p - w) >= 1e-3
    p, f, w = p[keep], f[keep], w[keep]
    fd = (weighting.omega_weight(p + h, f, w) - weighting.omega_weight(p - h, f, w)) / (2 * h)
    an = np.asarray(weighting.omega_derivative(p, f, w))
    rel = np.abs(an - fd) / np.abs(fd)
    return _result("analytic d(weight)/dp vs central difference (rel)", p.size, rel.max(), 1e-5)


def phase_agreement():
    h = 1e-4
    worst = 0.0
    ws = np.linspace(0.1, 0.9, 9)
    for w in ws:
        p = np.array([w - h, w, w + h])
        v = weighting.omega_weight(p, 0.5, w)
        second = (v[0] - 2 * v[1] + v[2]) / h**2
        beta = math.log(math.e - 0.5)
        worst = max(worst, abs(second - beta**2))
    return _result("f=0.5 second difference across pivot vs smooth value", ws.size, worst, 1e-3)


def _loss_points(rng, n, K=5):
    counts = rng.integers(1, 200, K)
    stats = losses.ClassStats(counts)
    return stats, rng.uniform(-3, 3, (n, K)), rng.integers(0, K, n)


def gradient_oracle():
    rng = _rng(4)
    worst = 0.0
    samples = 0
    for cfg in losses.config_grid():
        stats, Z, T = _loss_points(rng, 140)
        for z, t in zip(Z, T):
            out = losses.total_loss_and_grad(z, int(t), stats, cfg)
            if cfg.ccar and abs(out.p_target.value - cfg.omega) < 1e-3:
                continue
            fd = losses.finite_difference_grad(z, int(t), stats, cfg, 1e-6)
            worst = max(worst, losses.relative_error(out.grad_logits, fd))
            samples += 1
    return _result("analytic logit gradient vs finite differences, 10 configs (rel)", samples, worst, 1e-5)


def closed_form_equivalence():
    rng = _rng(5)
    stats, Z, T = _loss_points(rng, 1000)
    cfg = losses.LossConfig(base="ce", ccar=True)
    worst = 0.0
    for z, t in zip(Z, T):
        g = losses.total_loss_and_grad(z, int(t), stats, cfg).grad_logits
        worst = max(worst, np.max(np.abs(g - losses.closed_form_gradient(z, int(t), stats, cfg.omega))))
    return _result("product-rule gradient vs psi*(p - e_t) (abs)", len(Z), worst, 1e-10)


def ccar_off_reduction():
    rng = _rng(6)
    stats, Z, T = _loss_points(rng, 200)
    bad = 0
    for base in losses.Base:
        cfg = losses.LossConfig(base=base, ccar=False)
        for z, t in zip(Z, T):
            out = losses.total_loss_and_grad(z, int(t), stats, cfg)
            ref_loss, ref_grad = losses.plain_loss_and_grad(z, int(t), stats, cfg)
            bad += not (out.loss == ref_loss and np.array_equal(out.grad_logits, ref_grad) and out.weight_applied == 1.0)
    return _result("weighting off equals plain base (mismatches)", 5 * len(Z), bad, 0)


def shift_invariance():
    rng = _rng(7)
    stats, Z, T = _loss_points(rng, 100)
    worst = 0.0
    for cfg in losses.config_grid():
        for z, t in zip(Z, T):
            a = losses.total_loss_and_grad(z, int(t), stats, cfg)
            b = losses.total_loss_and_grad(z + 3.0, int(t), stats, cfg)
            worst = max(worst, abs(a.loss - b.loss), np.max(np.abs(a.grad_logits - b.grad_logits)))
    return _result("logit shift changes loss/gradient by", 10 * len(Z), worst, 1e-12)


def sign_structure_and_bound():
    rng = _rng(8)
    stats, Z, T = _loss_points(rng, 1000)
    cfg = losses.LossConfig(base="ce", ccar=True)
    bound = weighting.modulation_bound(cfg.omega)
    bad, worst = 0, 0.0
    for z, t in zip(Z, T):
        out = losses.total_loss_and_grad(z, int(t), stats, cfg)
        g = out.grad_logits
        others = np.delete(g, t)
        bad += not (g[t] < 0 and np.all(others > 0))
        worst = max(worst, np.max(np.abs(g)) / bound)
    return _result("CE+weight gradient sign pattern and |grad|/bound", len(Z), max(bad, worst), 1.0, bad == 0 and worst <= 1.0)


def network_gradient():
    rng = _rng(9)
    stats = losses.ClassStats([40, 25, 15, 8, 2])
    X = rng.normal(size=(3, 4))
    y = np.array([0, 3, 4])
    worst = 0.0
    for cfg in losses.config_grid():
        params = tinynet.init_params([4, 8, 5], 11)
        _, grads = tinynet.loss_and_param_grads(params, X, y, stats, cfg)
        for (W, b), (gW, gb) in zip(params.layers, grads):
            for arr, g in ((W, gW), (b, gb)):
                def fn(v, arr=arr):
                    saved = arr.copy()
                    arr[...] = v
                    loss, _ = tinynet.loss_and_param_grads(params, X, y, stats, cfg)
                    arr[...] = saved
                    return loss
                fd = losses.central_difference(fn, arr.copy(), 1e-6)
                worst = max(worst, losses.relative_error(g, fd))
    return _result("network parameter gradients vs finite differences (rel)", 10, worst, 1e-4)


def _small_run(seed, ccar=False):
    spec = data.DatasetSpec(num_classes=5, max_count=60, imbalance_factor=1, input_dim=4,
                            class_separation=6.0, noise_sigma=0.5, seed=seed, test_per_class=20)
    tr, te, stats = data.generate(spec)
    params = tinynet.init_params([4, 16, 5], seed)
    cfg = losses.LossConfig(ccar=ccar)
    params, trace = tinynet.train(params, tr.features, tr.labels, stats, cfg, tinynet.SGDConfig(epochs=5, batch_size=32, seed=seed))
    return params, trace


def training_determinism_and_descent():
    bad = 0
    for seed in range(3):
        p1, t1 = _small_run(seed)
        p2, t2 = _small_run(seed)
        bad += p1.tobytes() != p2.tobytes() or t1 != t2
        bad += not t1[-1] < t1[0]
    return _result("training reproducible and loss decreasing (failures)", 3, bad, 0)


def data_profile():
    bad = 0
    n = 0
    for IF in (10, 50, 100, 200):
        for K in (10, 50, 100):
            counts = data.exponential_class_counts(data.DatasetSpec(num_classes=K, max_count=500, imbalance_factor=IF))
            ratio = counts.max() / counts.min()
            bad += not (np.all(np.diff(counts) <= 0) and 0.8 * IF <= ratio <= 1.2 * IF)
            n += 1
    spec = data.DatasetSpec(num_classes=10, max_count=50, imbalance_factor=10, seed=3, test_per_class=7)
    a, at, _ = data.generate(spec)
    b, _, _ = data.generate(spec)
    c, _, _ = data.generate(dataclasses.replace(spec, seed=4))
    bad += not np.array_equal(a.features, b.features)
    bad += np.array_equal(a.features, c.features)
    bad += not np.all(np.bincount(at.labels) == 7)
    return _result("long-tail profile, imbalance fidelity, test balance, seeds (failures)", n + 3, bad, 0)


CHECKS: List[Callable[[], PropertyResult]] = [
    pivot_continuity,
    monotone_in_confidence,
    rare_class_emphasis,
    jump_bound,
    modulation_bounded,
    derivative_consistency,
    phase_agreement,
    gradient_oracle,
    closed_form_equivalence,
    ccar_off_reduction,
    shift_invariance,
    sign_structure_and_bound,
    network_gradient,
    training_determinism_and_descent,
    data_profile,
]


def check_properties() -> List[PropertyResult]:
    out = []
    for check in CHECKS:
        try:
            out.append(check())
        except Exception as exc:  # a crashing check is a failing check
            out.append(PropertyResult(f"{check.__name__} raised {type(exc).__name__}: {exc}", 0, math.inf, 0.0, False))
    return out


def format_report(results: List[PropertyResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'property':<{width}}  {'samples':>8}  {'max error':>12}  {'tolerance':>10}  verdict"]
    for r in results:
        lines.append(
            f"{r.name:<{width}}  {r.samples:>8}  {r.max_error:>12.4g}  {r.tolerance:>10.3g}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
