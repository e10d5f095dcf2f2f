"""Modality-interleaving strategies and single-modality batch construction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from sbnet.errors import ConfigError, DataError
from sbnet.numerics import Rng

FACE = "face"
VOICE = "voice"
MODALITIES = (FACE, VOICE)

# presentation order used by reports
STRATEGY_ORDER = ("hefhev", "hevhef", "random", "vfvf", "fvfv")
_DISPLAY = {"hefhev": "HeFHeV", "hevhef": "HeVHeF", "random": "Random", "vfvf": "VFVF", "fvfv": "FVFV",
            "only_face": "Face only", "only_voice": "Voice only"}


def _other(m: str) -> str:
    return VOICE if m == FACE else FACE


@dataclass(frozen=True)
class Strategy:
    kind: str
    modality: str | None = None
    k_epochs: int = 1

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        t = text.strip().lower()
        if t in ("random", "hefhev", "hevhef", "vfvf", "fvfv"):
            return cls(t)
        if t in ("only_face", "only_voice"):
            return cls(t, t.split("_")[1])
        if t.startswith("block:"):
            parts = t.split(":")
            if len(parts) != 3 or parts[1] not in MODALITIES:
                raise ConfigError(f"bad block strategy {text!r}; expected block:face:K or block:voice:K")
            try:
                k = int(parts[2])
            except ValueError:
                raise ConfigError(f"bad block length in {text!r}") from None
            if k < 1:
                raise ConfigError("block length must be >= 1")
            return cls("block", parts[1], k)
        raise ConfigError(f"unknown strategy {text!r}")

    @property
    def name(self) -> str:
        if self.kind == "block":
            return f"block:{self.modality}:{self.k_epochs}"
        return self.kind

    @property
    def display(self) -> str:
        if self.kind == "block":
            return f"{self.modality} x{self.k_epochs}"
        return _DISPLAY[self.kind]


def plan_epoch(s: Strategy, epoch: int, n_batches: int, rng: Rng) -> list[str]:
    """Modality tag for each batch of one epoch."""
    if n_batches < 1:
        raise ValueError("n_batches must be >= 1")
    if s.kind == "random":
        return [FACE if c else VOICE for c in rng.coin(n_batches)]
    if s.kind in ("hefhev", "hevhef"):
        first = FACE if s.kind == "hefhev" else VOICE
        half = (n_batches + 1) // 2
        return [first] * half + [_other(first)] * (n_batches - half)
    if s.kind in ("vfvf", "fvfv"):
        even = VOICE if s.kind == "vfvf" else FACE
        return [even if epoch % 2 == 0 else _other(even)] * n_batches
    if s.kind == "block":
        m = s.modality if (epoch // s.k_epochs) % 2 == 0 else _other(s.modality)
        return [m] * n_batches
    if s.kind in ("only_face", "only_voice"):
        return [s.modality] * n_batches
    raise ConfigError(f"unknown strategy kind {s.kind!r}")


def _grouped_order(labels: Sequence, rng: Rng, group: int = 2) -> np.ndarray:
    # Shuffle within each identity, cut into small same-identity groups, then
    # shuffle the groups: batches mix identities but keep positive pairs.
    labels = np.asarray(labels)
    ids = np.unique(labels)
    groups = []
    for ident in ids:
        idx = np.flatnonzero(labels == ident)
        idx = idx[rng.permutation(idx.size)]
        groups.extend(idx[i : i + group] for i in range(0, idx.size, group))
    order = rng.permutation(len(groups))
    return np.concatenate([groups[i] for i in order]) if groups else np.zeros(0, dtype=np.int64)


def make_batches(records: Sequence, modality: str, batch_size: int, rng: Rng, exclude_ids=frozenset()) -> list[list]:
    """Shuffled single-modality batches; a short final batch is dropped.

    ``exclude_ids`` holds identities that must never reach training (the
    held-out splits); meeting one is a hard error.
    """
    recs = [r for r in records if r.modality == modality]
    leaked = {r.identity_id for r in recs} & set(exclude_ids)
    if leaked:
        raise DataError(f"held-out identity {sorted(leaked)[0]!r} reached batch construction")
    if len(recs) < batch_size:
        raise DataError(f"only {len(recs)} {modality} records for batch size {batch_size}")
    order = _grouped_order([r.identity_id for r in recs], rng)
    n_full = len(recs) // batch_size
    return [[recs[i] for i in order[k * batch_size : (k + 1) * batch_size]] for k in range(n_full)]


def make_paired_batches(records: Sequence, batch_size: int, rng: Rng, exclude_ids=frozenset()) -> list[list[tuple]]:
    """Batches of same-identity (face, voice) record pairs for the two-branch model."""
    by_id: dict[str, dict[str, list]] = {}
    for r in records:
        if r.identity_id in exclude_ids:
            raise DataError(f"held-out identity {r.identity_id!r} reached batch construction")
        by_id.setdefault(r.identity_id, {FACE: [], VOICE: []})[r.modality].append(r)
    pairs = []
    for ident in sorted(by_id):
        faces, voices = by_id[ident][FACE], by_id[ident][VOICE]
        n = min(len(faces), len(voices))
        fi = rng.permutation(len(faces))[:n]
        vi = rng.permutation(len(voices))[:n]
        pairs.extend((faces[a], voices[b]) for a, b in zip(fi, vi))
    if len(pairs) < batch_size:
        raise DataError(f"only {len(pairs)} face-voice pairs for batch size {batch_size}")
    order = _grouped_order([p[0].identity_id for p in pairs], rng)
    n_full = len(pairs) // batch_size
    return [[pairs[i] for i in order[k * batch_size : (k + 1) * batch_size]] for k in range(n_full)]
