"""Dense float64 helpers, a reproducible RNG, and the finite-difference oracle.

Matrices are plain 2-D ``float64`` numpy arrays.  The helpers here add the
shape and degeneracy checks the rest of the package relies on.
"""

from __future__ import annotations

import zlib
from typing import Callable

import numpy as np

from sbnet import _kernels
from sbnet.errors import DegenerateVectorError, DimensionError, NumericError

EPS_NORM = 1e-12
_TWO_POW_M53 = 2.0**-53


class Rng:
    """Counter-addressed splitmix64 generator.

    Output ``k`` depends only on ``(seed, k)``, so a stream is fully described
    by its seed and how many words have been consumed.  Independent child
    streams come from :meth:`spawn`.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def state(self) -> tuple[int, int]:
        return self.seed, self.counter

    def uint64(self, n: int) -> np.ndarray:
        out = _kernels.splitmix64(np.uint64(self.seed), np.uint64(self.counter), int(n))
        self.counter += int(n)
        return out

    def uniform(self, n: int) -> np.ndarray:
        """Doubles in [0, 1) built from the top 53 bits of each word."""
        return (self.uint64(n) >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53

    def normal(self, n: int) -> np.ndarray:
        m = (int(n) + 1) // 2
        u = self.uniform(2 * m).reshape(m, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((m, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:n]

    def integers(self, high: int, n: int) -> np.ndarray:
        """Integers in [0, high)."""
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), in random order."""
        if k > n:
            raise ValueError(f"cannot choose {k} distinct items from {n}")
        return self.permutation(n)[:k]

    def coin(self, n: int) -> np.ndarray:
        return self.uniform(n) < 0.5

    def spawn(self, key: int | str) -> "Rng":
        """Child stream keyed by an int or a string tag; the parent is not advanced."""
        if isinstance(key, str):
            key = zlib.crc32(key.encode("utf-8"))
        mixed = np.uint64(self.seed) ^ _kernels.np_splitmix64(np.uint64(int(key) & 0xFFFFFFFFFFFFFFFF), np.uint64(0), 1)[0]
        child = _kernels.np_splitmix64(mixed, np.uint64(0), 1)[0]
        return Rng(int(child))


def gaussian(rng: Rng, rows: int, cols: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    return mean + std * rng.normal(rows * cols).reshape(rows, cols)


def _check_finite(m: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{what} produced non-finite values")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return _check_finite(out, "matmul")


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError(f"cosine of vectors with lengths {u.size} and {v.size}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < EPS_NORM or nv < EPS_NORM:
        raise DegenerateVectorError("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def row_norms(m: np.ndarray, eps: float = EPS_NORM) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    bad = np.flatnonzero(norms < eps)
    if bad.size:
        raise DegenerateVectorError(f"row {int(bad[0])} has norm {norms[bad[0]]:.3g} < {eps:g}")
    return norms


def row_l2_normalize(m: np.ndarray, eps: float = EPS_NORM) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {m.shape}")
    return m / row_norms(m, eps)[:, None]


def row_l2_normalize_backward(grad_n: np.ndarray, n: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Pull a gradient on ``n = x / |x|`` back to ``x``."""
    radial = np.einsum("ij,ij->i", grad_n, n)
    return (grad_n - n * radial[:, None]) / norms[:, None]


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine between two equally shaped matrices, clamped to [-1, 1]."""
    if a.shape != b.shape:
        raise DimensionError(f"row-wise cosine of {a.shape} and {b.shape}")
    s = np.einsum("ij,ij->i", row_l2_normalize(a), row_l2_normalize(b))
    return np.clip(s, -1.0, 1.0)


def finite_diff_grad(f: Callable[[np.ndarray], float], at, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(at, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + eps
        fp = f(x)
        x[i] = orig - eps
        fm = f(x)
        x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"objective is non-finite near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Norm-wise relative discrepancy ``|a - n| / max(|a|, |n|)``.

    Two vanishing gradients compare equal (the floor keeps the ratio finite).
    """
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)
