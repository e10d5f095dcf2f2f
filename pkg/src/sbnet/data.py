"""Embedding corpora: records, file formats, identity-disjoint splits, synthetic data.

Two canonical on-disk formats hold the same content:

* JSON lines (``.jsonl``): a header object
  ``{"format": "sbnet-corpus", "version": 1, "d_in": D}`` followed by one
  record per line, ``{"id", "modality", "vector", "meta"}``.
* binary (``.sbc``): ``b"SBNC"`` magic, little-endian ``<HIQQ`` holding
  version, d_in, record count and the byte length of a UTF-8 JSON list of
  ``[id, modality, meta]`` triples, then that JSON, then the vectors as
  little-endian float64, row-major.

Python's float repr round-trips exactly, so both formats are lossless.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from sbnet.errors import ConfigError, DataError, ParseError
from sbnet.numerics import Rng, gaussian
from sbnet.schedule import FACE, MODALITIES, VOICE

FORMAT_NAME = "sbnet-corpus"
FORMAT_VERSION = 1
BINARY_MAGIC = b"SBNC"
_BIN_HEADER = struct.Struct("<HIQQ")
DATA_ROOT_ENV = "SBNET_DATA_ROOT"
ATTRIBUTES = ("gender", "nationality", "age_group")


@dataclass
class EmbeddingRecord:
    identity_id: str
    modality: str
    vector: np.ndarray
    meta: dict | None = None

    def to_json(self) -> dict:
        out = {"id": self.identity_id, "modality": self.modality, "vector": [float(v) for v in self.vector]}
        if self.meta is not None:
            out["meta"] = self.meta
        return out


@dataclass
class SplitSpec:
    train: list[str]
    validation: list[str]
    test: list[str]

    def __post_init__(self):
        a, b, c = set(self.train), set(self.validation), set(self.test)
        if a & b or a & c or b & c:
            raise DataError("split identity lists overlap")

    @property
    def held_out(self) -> frozenset:
        return frozenset(self.validation) | frozenset(self.test)

    def to_json(self) -> dict:
        return {"train": self.train, "validation": self.validation, "test": self.test}


@dataclass
class SynthConfig:
    n_identities: int = 64
    samples_per_identity: int = 10
    latent_dim: int = 16
    d_in: int = 64
    noise_std: float = 0.3
    seed: int = 7
    # 0 draws the face and voice maps independently; 1 makes them identical
    map_correlation: float = 0.0
    # scale of per-attribute latent offsets; 0 leaves metadata uninformative
    attribute_strength: float = 0.0
    genders: tuple = ("m", "f")
    nationalities: tuple = ("A", "B", "C", "D", "E")
    age_groups: tuple = ("young", "mid", "senior")

    def __post_init__(self):
        for name in ("n_identities", "samples_per_identity", "latent_dim", "d_in"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if not 0.0 <= self.map_correlation <= 1.0:
            raise ConfigError("map_correlation must lie in [0, 1]")


# --------------------------------------------------------------------------
# validation and I/O
# --------------------------------------------------------------------------


def _validate(records: Sequence[EmbeddingRecord], d_in: int) -> None:
    for i, r in enumerate(records):
        if not isinstance(r.identity_id, str) or not r.identity_id:
            raise DataError(f"record {i}: identity id must be a nonempty string")
        if r.modality not in MODALITIES:
            raise DataError(f"record {i}: unknown modality {r.modality!r}")
        if r.vector.shape != (d_in,):
            raise DataError(f"record {i}: vector length {r.vector.size} != corpus d_in {d_in}")
        if not np.all(np.isfinite(r.vector)):
            raise DataError(f"record {i}: vector has non-finite values")


def resolve_path(path: str | os.PathLike) -> Path:
    """Use the path as given, else look for it under ``$SBNET_DATA_ROOT``."""
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get(DATA_ROOT_ENV):
        alt = Path(os.environ[DATA_ROOT_ENV]) / p
        if alt.exists():
            return alt
    return p


def save_corpus(path: str | os.PathLike, records: Sequence[EmbeddingRecord], d_in: int) -> Path:
    path = Path(path)
    _validate(records, d_in)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".sbc":
        meta = json.dumps([[r.identity_id, r.modality, r.meta] for r in records]).encode("utf-8")
        vecs = np.ascontiguousarray(np.stack([r.vector for r in records]) if records else np.zeros((0, d_in)), dtype="<f8")
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(_BIN_HEADER.pack(FORMAT_VERSION, d_in, len(records), len(meta)))
            fh.write(meta)
            fh.write(vecs.tobytes())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"format": FORMAT_NAME, "version": FORMAT_VERSION, "d_in": d_in}) + "\n")
            for r in records:
                fh.write(json.dumps(r.to_json()) + "\n")
    return path


def _load_binary(raw: bytes) -> tuple[list[EmbeddingRecord], int]:
    off = len(BINARY_MAGIC)
    try:
        version, d_in, n, meta_len = _BIN_HEADER.unpack_from(raw, off)
    except struct.error as exc:
        raise ParseError(f"truncated binary corpus header: {exc}") from None
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported binary corpus version {version}")
    off += _BIN_HEADER.size
    try:
        meta = json.loads(raw[off : off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad binary corpus metadata: {exc}") from None
    off += meta_len
    expected = n * d_in * 8
    if len(raw) - off != expected or len(meta) != n:
        raise ParseError(f"binary corpus body has {len(raw) - off} bytes, expected {expected}")
    vecs = np.frombuffer(raw, dtype="<f8", count=n * d_in, offset=off).astype(np.float64).reshape(n, d_in)
    return [EmbeddingRecord(str(m[0]), str(m[1]), vecs[i].copy(), m[2]) for i, m in enumerate(meta)], d_in


def load_corpus(path: str | os.PathLike) -> tuple[list[EmbeddingRecord], int | None]:
    """Read either canonical format. An empty file yields ``([], None)``."""
    path = resolve_path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read corpus {path}: {exc}") from None
    if raw.startswith(BINARY_MAGIC):
        records, d_in = _load_binary(raw)
        _validate(records, d_in)
        return records, d_in

    lines = raw.decode("utf-8").splitlines()
    if not any(line.strip() for line in lines):
        return [], None
    records: list[EmbeddingRecord] = []
    d_in = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: {exc.msg}") from None
        if d_in is None:
            if not isinstance(obj, dict) or obj.get("format") != FORMAT_NAME or "d_in" not in obj:
                raise ParseError(f"{path}:{lineno}: missing corpus header")
            d_in = int(obj["d_in"])
            continue
        try:
            rec = EmbeddingRecord(
                identity_id=obj["id"],
                modality=obj["modality"],
                vector=np.asarray(obj["vector"], dtype=np.float64),
                meta=obj.get("meta"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: malformed record ({exc})") from None
        records.append(rec)
    _validate(records, d_in)
    return records, d_in


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------


def identities(records: Sequence[EmbeddingRecord]) -> list[str]:
    return sorted({r.identity_id for r in records})


def make_splits(records: Sequence[EmbeddingRecord], fractions=(0.7, 0.1, 0.2), rng: Rng | None = None) -> SplitSpec:
    """Partition identities (never records) into train/validation/test."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three nonnegative numbers summing to 1, got {fractions}")
    ids = identities(records)
    n = len(ids)
    if n < 3:
        raise DataError(f"need at least 3 identities to split, got {n}")
    rng = rng or Rng(0)
    ids = [ids[i] for i in rng.permutation(n)]
    n_train = int(np.floor(fractions[0] * n + 0.5))
    n_val = min(int(np.floor(fractions[1] * n + 0.5)), n - n_train)
    return SplitSpec(
        train=sorted(ids[:n_train]),
        validation=sorted(ids[n_train : n_train + n_val]),
        test=sorted(ids[n_train + n_val :]),
    )


def select(records: Sequence[EmbeddingRecord], ids, modality: str | None = None) -> list[EmbeddingRecord]:
    keep = set(ids)
    return [r for r in records if r.identity_id in keep and (modality is None or r.modality == modality)]


# --------------------------------------------------------------------------
# synthetic corpora
# --------------------------------------------------------------------------


def gen_synthetic(cfg: SynthConfig) -> list[EmbeddingRecord]:
    """Identity latents pushed through fixed per-modality linear maps plus noise."""
    rng = Rng(cfg.seed)
    k, d = cfg.latent_dim, cfg.d_in
    scale = 1.0 / np.sqrt(k)
    A_f = gaussian(rng.spawn("map:face"), d, k, 0.0, scale)
    indep = gaussian(rng.spawn("map:voice"), d, k, 0.0, scale)
    rho = cfg.map_correlation
    A_v = rho * A_f + np.sqrt(1.0 - rho * rho) * indep

    vocab = {"gender": cfg.genders, "nationality": cfg.nationalities, "age_group": cfg.age_groups}
    offsets = {
        (attr, val): gaussian(rng.spawn(f"attr:{attr}:{val}"), k, 1).ravel()
        for attr, vals in vocab.items()
        for val in vals
    }
    latent_rng = rng.spawn("latent")
    noise_rng = rng.spawn("noise")

    records = []
    n = cfg.samples_per_identity
    width = max(5, len(str(cfg.n_identities)))
    for i in range(cfg.n_identities):
        meta = {attr: vals[i % len(vals)] for attr, vals in vocab.items()}
        z = latent_rng.normal(k)
        if cfg.attribute_strength:
            z = z + cfg.attribute_strength * sum(offsets[(a, meta[a])] for a in ATTRIBUTES)
        ident = f"id{i:0{width}d}"
        for modality, A in ((FACE, A_f), (VOICE, A_v)):
            clean = A @ z
            noise = gaussian(noise_rng, n, d, 0.0, cfg.noise_std)
            for j in range(n):
                records.append(EmbeddingRecord(ident, modality, clean + noise[j], dict(meta)))
    return records
