"""Single-branch and two-branch embedding networks with manual backprop.

Single branch::

    I = BN(W2 . relu(W1 . x + b1) + b2)

The same parameters serve face and voice inputs; nothing in the forward
pass looks at a modality tag.

Two branch::

    u = l2norm(branch_f(xf)),  v = l2norm(branch_v(xv))
    (a_f, a_v) = softmax([u; v] . Wa + ba)
    l = a_f * u + a_v * v

where each branch is FC-ReLU-FC without batch norm.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from sbnet.errors import BatchTooSmallError, ContractError, DimensionError
from sbnet.numerics import Rng, gaussian, row_l2_normalize_backward, row_norms

MODES = ("train", "eval")


@dataclass
class SingleBranchParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    TRAINABLE = ("W1", "b1", "W2", "b2", "bn_gamma", "bn_beta")
    BUFFERS = ("bn_running_mean", "bn_running_var")
    variant = "single"

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.TRAINABLE}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.TRAINABLE + self.BUFFERS}

    def set_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, a in arrays.items():
            setattr(self, k, a)

    def copy(self) -> "SingleBranchParams":
        return copy.deepcopy(self)


@dataclass
class BranchParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass
class TwoBranchParams:
    face: BranchParams
    voice: BranchParams
    fusion_W: np.ndarray
    fusion_b: np.ndarray

    variant = "two"

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.face.W1.shape[0], self.face.W1.shape[1], self.face.W2.shape[1]

    def trainable(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("face", "voice"):
            br = getattr(self, name)
            for k in ("W1", "b1", "W2", "b2"):
                out[f"{name}.{k}"] = getattr(br, k)
        out["fusion_W"] = self.fusion_W
        out["fusion_b"] = self.fusion_b
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        return self.trainable()

    def set_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, a in arrays.items():
            if "." in k:
                br, attr = k.split(".")
                setattr(getattr(self, br), attr, a)
            else:
                setattr(self, k, a)

    def copy(self) -> "TwoBranchParams":
        return copy.deepcopy(self)


@dataclass
class ForwardCache:
    mode: str
    values: dict[str, Any] = field(default_factory=dict)
    consumed: bool = False

    def take(self) -> dict[str, Any]:
        if self.consumed:
            raise ContractError("forward cache already consumed by a backward pass")
        if self.mode != "train":
            raise ContractError(f"backward needs a train-mode cache, got mode={self.mode!r}")
        self.consumed = True
        return self.values


def _he(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    return gaussian(rng, fan_in, fan_out, 0.0, np.sqrt(2.0 / fan_in))


def init_single(d_in: int, hidden: int, d: int, rng: Rng, bn_momentum: float = 0.1, bn_eps: float = 1e-5) -> SingleBranchParams:
    if min(d_in, hidden, d) <= 0:
        raise DimensionError(f"dimensions must be positive, got {(d_in, hidden, d)}")
    return SingleBranchParams(
        W1=_he(rng, d_in, hidden),
        b1=np.zeros(hidden),
        W2=_he(rng, hidden, d),
        b2=np.zeros(d),
        bn_gamma=np.ones(d),
        bn_beta=np.zeros(d),
        bn_running_mean=np.zeros(d),
        bn_running_var=np.ones(d),
        bn_momentum=bn_momentum,
        bn_eps=bn_eps,
    )


def _init_branch(d_in: int, hidden: int, d: int, rng: Rng) -> BranchParams:
    return BranchParams(W1=_he(rng, d_in, hidden), b1=np.zeros(hidden), W2=_he(rng, hidden, d), b2=np.zeros(d))


def init_two(d_in: int, hidden: int, d: int, rng: Rng) -> TwoBranchParams:
    if min(d_in, hidden, d) <= 0:
        raise DimensionError(f"dimensions must be positive, got {(d_in, hidden, d)}")
    face = _init_branch(d_in, hidden, d, rng.spawn("face"))
    voice = _init_branch(d_in, hidden, d, rng.spawn("voice"))
    fusion_W = gaussian(rng.spawn("fusion"), 2 * d, 2, 0.0, np.sqrt(1.0 / (2 * d)))
    return TwoBranchParams(face=face, voice=voice, fusion_W=fusion_W, fusion_b=np.zeros(2))


def _check_input(x: np.ndarray, d_in: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != d_in:
        raise DimensionError(f"expected input of shape (B, {d_in}), got {x.shape}")
    return x


# --------------------------------------------------------------------------
# single branch
# --------------------------------------------------------------------------


def single_forward(p: SingleBranchParams, x: np.ndarray, mode: str = "train"):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    x = _check_input(x, p.dims[0])
    B = x.shape[0]
    if mode == "train" and B < 2:
        raise BatchTooSmallError("train-mode batch norm needs at least 2 rows")

    z1 = x @ p.W1 + p.b1
    mask = z1 > 0
    a1 = z1 * mask
    z2 = a1 @ p.W2 + p.b2

    if mode == "train":
        mu = z2.mean(axis=0)
        var = z2.var(axis=0)
        m = p.bn_momentum
        # running variance tracks the unbiased estimate
        p.bn_running_mean = (1.0 - m) * p.bn_running_mean + m * mu
        p.bn_running_var = (1.0 - m) * p.bn_running_var + m * var * (B / (B - 1))
    else:
        mu = p.bn_running_mean
        var = p.bn_running_var
    inv_std = 1.0 / np.sqrt(var + p.bn_eps)
    xhat = (z2 - mu) * inv_std
    out = p.bn_gamma * xhat + p.bn_beta

    cache = ForwardCache(mode, {"x": x, "mask": mask, "a1": a1, "xhat": xhat, "inv_std": inv_std})
    return out, cache


def single_backward(p: SingleBranchParams, cache: ForwardCache, grad_out: np.ndarray):
    """Returns ``(param_grads, grad_x)`` for a train-mode forward."""
    c = cache.take()
    xhat, inv_std = c["xhat"], c["inv_std"]
    if grad_out.shape != xhat.shape:
        raise DimensionError(f"grad_out shape {grad_out.shape} != output shape {xhat.shape}")
    B = xhat.shape[0]

    g_gamma = np.sum(grad_out * xhat, axis=0)
    g_beta = np.sum(grad_out, axis=0)
    dxhat = grad_out * p.bn_gamma
    dz2 = (inv_std / B) * (B * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))

    gW2 = c["a1"].T @ dz2
    gb2 = dz2.sum(axis=0)
    dz1 = (dz2 @ p.W2.T) * c["mask"]
    gW1 = c["x"].T @ dz1
    gb1 = dz1.sum(axis=0)
    grad_x = dz1 @ p.W1.T

    grads = {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2, "bn_gamma": g_gamma, "bn_beta": g_beta}
    return grads, grad_x


# --------------------------------------------------------------------------
# two branch
# --------------------------------------------------------------------------


def _branch_forward(br: BranchParams, x: np.ndarray):
    z1 = x @ br.W1 + br.b1
    mask = z1 > 0
    a1 = z1 * mask
    h = a1 @ br.W2 + br.b2
    norms = row_norms(h)
    n = h / norms[:, None]
    return n, {"x": x, "mask": mask, "a1": a1, "n": n, "norms": norms}


def _branch_backward(br: BranchParams, c: dict, grad_n: np.ndarray):
    dh = row_l2_normalize_backward(grad_n, c["n"], c["norms"])
    gW2 = c["a1"].T @ dh
    gb2 = dh.sum(axis=0)
    dz1 = (dh @ br.W2.T) * c["mask"]
    gW1 = c["x"].T @ dz1
    gb1 = dz1.sum(axis=0)
    return {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}, dz1 @ br.W1.T


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def embed_branch(p: TwoBranchParams, x: np.ndarray, modality: str) -> np.ndarray:
    """Unit-norm output of one modality branch (u for face, v for voice)."""
    x = _check_input(x, p.dims[0])
    n, _ = _branch_forward(getattr(p, modality), x)
    return n


def two_forward(p: TwoBranchParams, xf: np.ndarray, xv: np.ndarray):
    d_in = p.dims[0]
    xf = _check_input(xf, d_in)
    xv = _check_input(xv, d_in)
    if xf.shape[0] != xv.shape[0]:
        raise DimensionError(f"face batch has {xf.shape[0]} rows, voice batch {xv.shape[0]}")

    u, cf = _branch_forward(p.face, xf)
    v, cv = _branch_forward(p.voice, xv)
    cat = np.concatenate([u, v], axis=1)
    att = _softmax(cat @ p.fusion_W + p.fusion_b)
    l = att[:, :1] * u + att[:, 1:] * v
    cache = ForwardCache("train", {"face": cf, "voice": cv, "u": u, "v": v, "cat": cat, "att": att})
    return l, u, v, cache


def two_backward(p: TwoBranchParams, cache: ForwardCache, grad_l: np.ndarray, grad_u=None, grad_v=None):
    """Param grads of the fused output; optional extra grads on u and v are folded in."""
    c = cache.take()
    u, v, att = c["u"], c["v"], c["att"]
    if grad_l.shape != u.shape:
        raise DimensionError(f"grad_l shape {grad_l.shape} != output shape {u.shape}")
    d = u.shape[1]

    d_att = np.stack([np.einsum("ij,ij->i", grad_l, u), np.einsum("ij,ij->i", grad_l, v)], axis=1)
    du = att[:, :1] * grad_l
    dv = att[:, 1:] * grad_l
    d_logits = att * (d_att - np.sum(att * d_att, axis=1, keepdims=True))
    g_fW = c["cat"].T @ d_logits
    g_fb = d_logits.sum(axis=0)
    d_cat = d_logits @ p.fusion_W.T
    du = du + d_cat[:, :d]
    dv = dv + d_cat[:, d:]
    if grad_u is not None:
        du = du + grad_u
    if grad_v is not None:
        dv = dv + grad_v

    gf, _ = _branch_backward(p.face, c["face"], du)
    gv, _ = _branch_backward(p.voice, c["voice"], dv)
    grads = {f"face.{k}": g for k, g in gf.items()}
    grads.update({f"voice.{k}": g for k, g in gv.items()})
    grads["fusion_W"] = g_fW
    grads["fusion_b"] = g_fb
    return grads


# --------------------------------------------------------------------------
# inference
# --------------------------------------------------------------------------


def embed(p, x: np.ndarray, modality: str) -> np.ndarray:
    """Eval-mode embedding of a stack of inputs of one modality.

    The single branch ignores ``modality``.  The two-branch network scores
    modalities through their own normalized branch outputs.
    """
    if isinstance(p, SingleBranchParams):
        out, _ = single_forward(p, x, mode="eval")
        return out
    return embed_branch(p, x, modality)
