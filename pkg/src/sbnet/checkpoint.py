"""JSON checkpoints and atomic file writes.

A checkpoint stores dimensions, every parameter tensor (shape plus
row-major float64 data), batch-norm running statistics, the classifier
head, class centers, the identity-to-label map and the run seed.  Floats
are written with Python's shortest round-trip repr, so a save/load cycle is
bit-exact and equal runs produce equal bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sbnet.errors import ParseError
from sbnet.losses import ClassifierHead
from sbnet.model import BranchParams, SingleBranchParams, TwoBranchParams

FORMAT_NAME = "sbnet-checkpoint"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: SingleBranchParams | TwoBranchParams
    head: ClassifierHead
    centers: np.ndarray | None
    label_ids: list[str]
    seed: int
    extra: dict


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _enc(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _dec(obj: dict) -> np.ndarray:
    return np.asarray(obj["data"], dtype=np.float64).reshape(obj["shape"])


def to_json(ck: Checkpoint) -> str:
    m = ck.model
    d_in, hidden, d = m.dims
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "variant": m.variant,
        "dims": {"d_in": d_in, "hidden": hidden, "embed_dim": d},
        "params": {k: _enc(v) for k, v in m.arrays().items()},
        "head": {"W": _enc(ck.head.W), "b": _enc(ck.head.b)},
        "centers": None if ck.centers is None else _enc(ck.centers),
        "label_ids": list(ck.label_ids),
        "seed": ck.seed,
        "extra": ck.extra,
    }
    if isinstance(m, SingleBranchParams):
        doc["bn"] = {"momentum": m.bn_momentum, "eps": m.bn_eps}
    return json.dumps(doc, sort_keys=True)


def save(path: str | os.PathLike, ck: Checkpoint) -> Path:
    return atomic_write_text(path, to_json(ck))


def load_text(text: str, source: str = "<string>") -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint {source} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME or doc.get("version") != FORMAT_VERSION:
        raise ParseError(f"{source} is not a version {FORMAT_VERSION} checkpoint")
    p = {k: _dec(v) for k, v in doc["params"].items()}
    if doc["variant"] == "single":
        model = SingleBranchParams(**p, bn_momentum=doc["bn"]["momentum"], bn_eps=doc["bn"]["eps"])
    else:
        branches = {
            name: BranchParams(**{k.split(".")[1]: v for k, v in p.items() if k.startswith(name + ".")})
            for name in ("face", "voice")
        }
        model = TwoBranchParams(branches["face"], branches["voice"], p["fusion_W"], p["fusion_b"])
    head = ClassifierHead(_dec(doc["head"]["W"]), _dec(doc["head"]["b"]))
    centers = None if doc["centers"] is None else _dec(doc["centers"])
    return Checkpoint(model, head, centers, doc["label_ids"], doc["seed"], doc.get("extra", {}))


def load(path: str | os.PathLike) -> Checkpoint:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read checkpoint {path}: {exc}") from None
    return load_text(text, str(path))
