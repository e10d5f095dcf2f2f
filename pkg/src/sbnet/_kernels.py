"""Hot inner loops, each in two flavours: numba ``@njit`` and pure numpy.

The public names at the bottom of this module are bound to the numba
variants when numba imports and ``SBNET_DISABLE_JIT`` is unset (or ``0``);
otherwise to the numpy variants.  Both variants are always importable as
``nb_<name>`` / ``np_<name>`` so they can be cross-checked and benchmarked.

Integer kernels (the splitmix64 stream) are bit-identical across the two
paths.  Floating point kernels agree to rounding, since summation order
differs.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _jit_disabled() -> bool:
    return os.environ.get("SBNET_DISABLE_JIT", "").strip().lower() not in ("", "0", "false", "no")


USE_JIT = HAS_NUMBA and not _jit_disabled()

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


# --------------------------------------------------------------------------
# splitmix64 counter stream
# --------------------------------------------------------------------------


def np_splitmix64(seed: np.uint64, start: np.uint64, n: int) -> np.ndarray:
    """Outputs ``start+1 .. start+n`` of the splitmix64 sequence seeded by ``seed``."""
    idx = np.arange(1, n + 1, dtype=np.uint64) + np.full(n, start, dtype=np.uint64)
    z = np.full(n, seed, dtype=np.uint64) + idx * GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def nb_splitmix64(seed, start, n):
    out = np.empty(n, dtype=np.uint64)
    golden = np.uint64(0x9E3779B97F4A7C15)
    m1 = np.uint64(0xBF58476D1CE4E5B9)
    m2 = np.uint64(0x94D049BB133111EB)
    s30 = np.uint64(30)
    s27 = np.uint64(27)
    s31 = np.uint64(31)
    state = np.uint64(seed) + np.uint64(start) * golden
    for i in range(n):
        state = state + golden
        z = state
        z = (z ^ (z >> s30)) * m1
        z = (z ^ (z >> s27)) * m2
        out[i] = z ^ (z >> s31)
    return out


# --------------------------------------------------------------------------
# Git push term over cross-class ordered pairs
# --------------------------------------------------------------------------


def np_git_push(emb: np.ndarray, labels: np.ndarray, centers: np.ndarray):
    # Ordered pairs (i, j), i != j, y_i != y_j only depend on the class of j,
    # so weight each foreign class by its multiplicity in the batch.
    classes, counts = np.unique(labels, return_counts=True)
    diff = emb[:, None, :] - centers[classes][None, :, :]
    denom = 1.0 + np.einsum("ikd,ikd->ik", diff, diff)
    w = counts[None, :] * (labels[:, None] != classes[None, :])
    loss = float(np.sum(w / denom))
    grad = np.einsum("ik,ikd->id", -2.0 * w / denom**2, diff)
    return loss, grad


@njit(cache=True)
def nb_git_push(emb, labels, centers):
    b, d = emb.shape
    grad = np.zeros((b, d))
    loss = 0.0
    for i in range(b):
        for j in range(b):
            if i == j or labels[i] == labels[j]:
                continue
            c = labels[j]
            sq = 0.0
            for k in range(d):
                t = emb[i, k] - centers[c, k]
                sq += t * t
            den = 1.0 + sq
            loss += 1.0 / den
            coef = -2.0 / (den * den)
            for k in range(d):
                grad[i, k] += coef * (emb[i, k] - centers[c, k])
    return loss, grad


# --------------------------------------------------------------------------
# ROC operating points from score-sorted trials
# --------------------------------------------------------------------------


def np_roc_points(scores_desc: np.ndarray, labels_desc: np.ndarray):
    """Cumulative (false, true) accept counts at every distinct threshold.

    Inputs are sorted by descending score.  Point 0 is the reject-all
    threshold; point k accepts every trial scoring at least the k-th
    distinct score.
    """
    pos = labels_desc.astype(np.int64)
    tp = np.cumsum(pos)
    fp = np.cumsum(1 - pos)
    last = np.flatnonzero(np.diff(scores_desc) != 0)
    ends = np.concatenate([last, [scores_desc.size - 1]]) if scores_desc.size else last
    zero = np.zeros(1, dtype=np.int64)
    return np.concatenate([zero, fp[ends]]), np.concatenate([zero, tp[ends]])


@njit(cache=True)
def nb_roc_points(scores_desc, labels_desc):
    n = scores_desc.shape[0]
    fp = np.zeros(n + 1, dtype=np.int64)
    tp = np.zeros(n + 1, dtype=np.int64)
    k = 0
    cf = 0
    ct = 0
    for i in range(n):
        if labels_desc[i]:
            ct += 1
        else:
            cf += 1
        if i == n - 1 or scores_desc[i + 1] != scores_desc[i]:
            k += 1
            fp[k] = cf
            tp[k] = ct
    return fp[: k + 1], tp[: k + 1]


# --------------------------------------------------------------------------
# 1:n matching decisions
# --------------------------------------------------------------------------


def np_match_argmax(scores: np.ndarray, true_idx: np.ndarray):
    """Count rows whose argmax (lowest index on ties) is the true column."""
    pred = np.argmax(scores, axis=1)
    top = scores[np.arange(scores.shape[0]), pred]
    ties = int(np.count_nonzero(np.sum(scores == top[:, None], axis=1) > 1))
    return int(np.count_nonzero(pred == true_idx)), ties


@njit(cache=True)
def nb_match_argmax(scores, true_idx):
    t, n = scores.shape
    correct = 0
    ties = 0
    for r in range(t):
        best = 0
        tied = False
        for c in range(1, n):
            if scores[r, c] > scores[r, best]:
                best = c
                tied = False
            elif scores[r, c] == scores[r, best]:
                tied = True
        if best == true_idx[r]:
            correct += 1
        if tied:
            ties += 1
    return correct, ties


if USE_JIT:
    splitmix64 = nb_splitmix64
    git_push = nb_git_push
    roc_points = nb_roc_points
    match_argmax = nb_match_argmax
else:
    splitmix64 = np_splitmix64
    git_push = np_git_push
    roc_points = np_roc_points
    match_argmax = np_match_argmax

KERNELS = ("splitmix64", "git_push", "roc_points", "match_argmax")
