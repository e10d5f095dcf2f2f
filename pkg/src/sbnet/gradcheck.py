"""Analytic-vs-central-difference checks for every differentiable path.

Each check builds a small random instance (B=8, d=16, C=4), computes the
analytic gradient, and compares it per tensor with
:func:`sbnet.numerics.finite_diff_grad`.  Tensors whose true gradient is
zero (e.g. the bias feeding batch norm) are compared against a floor of
``1e-5`` times the largest gradient norm in the check, so rounding noise in
the finite differences does not read as a failure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from sbnet.losses import Batch, ClassifierHead, LossConfig, ce_loss, center_loss, git_loss, oc_loss, total_loss
from sbnet.model import init_single, init_two, single_backward, single_forward, two_backward, two_forward
from sbnet.numerics import Rng, finite_diff_grad, gaussian

B, D, C, D_IN, HIDDEN = 8, 16, 4, 12, 10
FD_EPS = 1e-5
TOLERANCE = 1e-4
_FLOOR = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    per_tensor: dict[str, float]

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _labels(rng: Rng) -> np.ndarray:
    # every class present at least once, the rest random
    lab = np.concatenate([np.arange(C), rng.integers(C, B - C)])
    return lab[rng.permutation(B)]


def _fd_of(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    shape = x.shape

    def flat(v):
        return f(v.reshape(shape))

    return finite_diff_grad(flat, x, FD_EPS).reshape(shape)


def _compare(name: str, analytic: dict, numeric: dict) -> CheckResult:
    scale = max(np.linalg.norm(v) for v in numeric.values())
    floor = max(_FLOOR * scale, 1e-12)
    errs = {}
    for k in analytic:
        a, n = np.ravel(analytic[k]), np.ravel(numeric[k])
        errs[k] = float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))
    return CheckResult(name, max(errs.values()), errs)


def _perturbed(grads: dict, rng: Rng) -> dict:
    return {k: v * (1.0 + 0.05 * rng.normal(v.size).reshape(v.shape)) for k, v in grads.items()}


def _params_fd(make_loss, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Finite differences w.r.t. each named array, holding the others fixed."""
    out = {}
    for k, base in arrays.items():
        def f(v, k=k):
            return make_loss({**arrays, k: v})

        out[k] = _fd_of(f, base)
    return out


# --------------------------------------------------------------------------
# individual checks
# --------------------------------------------------------------------------


def check_ce(rng: Rng):
    x = gaussian(rng, B, D)
    head = ClassifierHead(gaussian(rng, D, C), gaussian(rng, 1, C).ravel())
    y = _labels(rng)
    _, gx, gh = ce_loss(head, Batch(x, y))
    analytic = {"embeddings": gx, "head.W": gh["head.W"], "head.b": gh["head.b"]}

    def loss(a):
        return ce_loss(ClassifierHead(a["head.W"], a["head.b"]), Batch(a["embeddings"], y))[0]

    return analytic, _params_fd(loss, {"embeddings": x, "head.W": head.W, "head.b": head.b})


def _emb_check(fn):
    def check(rng: Rng):
        x = gaussian(rng, B, D)
        y = _labels(rng)
        centers = gaussian(rng, C, D, 0.0, 0.5)
        _, g = fn(Batch(x, y), centers)
        return {"embeddings": g}, {"embeddings": _fd_of(lambda v: fn(Batch(v, y), centers)[0], x)}

    return check


check_oc = _emb_check(lambda b, c: oc_loss(b, "mean"))
check_oc_sum = _emb_check(lambda b, c: oc_loss(b, "sum"))
check_center = _emb_check(center_loss)
check_git = _emb_check(git_loss)


def check_single_branch(rng: Rng):
    p = init_single(D_IN, HIDDEN, D, rng.spawn("model"))
    p.b1 = gaussian(rng, 1, HIDDEN, 0.0, 0.1).ravel()
    p.bn_gamma = gaussian(rng, 1, D, 1.0, 0.2).ravel()
    p.bn_beta = gaussian(rng, 1, D, 0.0, 0.2).ravel()
    x = gaussian(rng, B, D_IN)
    weight = gaussian(rng, B, D)

    def forward_loss(arrays):
        q = p.copy()
        q.set_arrays({k: v for k, v in arrays.items() if k != "x"})
        out, _ = single_forward(q, arrays["x"], "train")
        return float(np.sum(out * weight))

    q = p.copy()
    _, cache = single_forward(q, x, "train")
    grads, gx = single_backward(p, cache, weight)
    analytic = {**grads, "x": gx}
    return analytic, _params_fd(forward_loss, {**p.trainable(), "x": x})


def check_two_branch(rng: Rng):
    p = init_two(D_IN, HIDDEN, D, rng.spawn("model"))
    p.fusion_W = gaussian(rng, 2 * D, 2)
    p.fusion_b = gaussian(rng, 1, 2).ravel()
    xf, xv = gaussian(rng, B, D_IN), gaussian(rng, B, D_IN)
    weight = gaussian(rng, B, D)

    def forward_loss(arrays):
        q = p.copy()
        q.set_arrays(arrays)
        l, _, _, _ = two_forward(q, xf, xv)
        return float(np.sum(l * weight))

    _, _, _, cache = two_forward(p, xf, xv)
    return two_backward(p, cache, weight), _params_fd(forward_loss, p.trainable())


def _end_to_end(loss_name: str):
    def check(rng: Rng):
        cfg = LossConfig(loss=loss_name, alpha=1.0, alpha_c=0.5, alpha_g=0.5)
        p = init_single(D_IN, HIDDEN, D, rng.spawn("model"))
        head = ClassifierHead(gaussian(rng, D, C, 0.0, 0.5), np.zeros(C))
        centers = gaussian(rng, C, D, 0.0, 0.5)
        x = gaussian(rng, B, D_IN)
        y = _labels(rng)

        def run(arrays):
            q = p.copy()
            q.set_arrays({k: v for k, v in arrays.items() if not k.startswith("head.")})
            h = ClassifierHead(arrays["head.W"], arrays["head.b"])
            out, cache = single_forward(q, x, "train")
            return q, h, out, cache

        arrays = {**p.trainable(), **head.trainable()}
        q, h, out, cache = run(arrays)
        res = total_loss(cfg, h, centers, Batch(out, y, "face"))
        grads, _ = single_backward(q, cache, res.grad_embeddings)
        grads.update(res.grad_head)

        def loss(a):
            _, hh, o, _ = run(a)
            return total_loss(cfg, hh, centers, Batch(o, y, "face")).loss

        return grads, _params_fd(loss, arrays)

    return check


CHECKS: dict[str, Callable] = {
    "CE": check_ce,
    "OC": check_oc,
    "OC-sum": check_oc_sum,
    "Center": check_center,
    "Git": check_git,
    "single-branch": check_single_branch,
    "two-branch": check_two_branch,
    "e2e-FOP": _end_to_end("fop"),
    "e2e-Center": _end_to_end("center"),
    "e2e-Git": _end_to_end("git"),
}


def run_gradchecks(names=None, seed: int = 0, fault: str | None = None) -> list[CheckResult]:
    """Run the registered checks; ``fault`` corrupts one check's analytic gradient."""
    names = list(CHECKS) if names is None else list(names)
    if fault is not None and fault not in CHECKS:
        raise KeyError(f"unknown check {fault!r}")
    root = Rng(seed)
    results = []
    for name in names:
        analytic, numeric = CHECKS[name](root.spawn(name))
        if name == fault:
            analytic = _perturbed(analytic, root.spawn("fault"))
        results.append(_compare(name, analytic, numeric))
    return results


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'check':<14} {'max rel err':>12}  status"]
    for r in results:
        lines.append(f"{r.name:<14} {r.max_rel_err:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
