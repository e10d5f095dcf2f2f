"""Verification (EER/AUC) and 1:n matching on embedded test identities."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from sbnet import _kernels
from sbnet.data import EmbeddingRecord
from sbnet.errors import DataError, DimensionError, MetricUndefinedError, StratificationError
from sbnet.model import embed
from sbnet.numerics import Rng, row_l2_normalize
from sbnet.schedule import FACE, VOICE

STRATA = {
    "random": (),
    "G": ("gender",),
    "N": ("nationality",),
    "A": ("age_group",),
    "GNA": ("gender", "nationality", "age_group"),
}
DEFAULT_GALLERY_SIZES = (2, 4, 6, 8, 10)


@dataclass
class EmbeddingTable:
    modality: str
    ids: list[str]
    vectors: np.ndarray

    def __len__(self):
        return len(self.ids)

    def rows_by_identity(self) -> dict[str, np.ndarray]:
        out: dict[str, list[int]] = {}
        for i, ident in enumerate(self.ids):
            out.setdefault(ident, []).append(i)
        return {k: np.asarray(v) for k, v in out.items()}


@dataclass
class TrialSet:
    """Pairs of rows (probe table row, candidate table row) with ground truth."""

    probe_modality: str
    candidate_modality: str
    probe_idx: np.ndarray
    candidate_idx: np.ndarray
    same: np.ndarray
    stratify: str = "random"
    scores: np.ndarray | None = None

    def __len__(self):
        return self.same.size


@dataclass
class VerificationReport:
    eer: float
    auc: float
    n_trials: int
    stratify: str = "random"
    paradigm: str = "face-voice"

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class MatchingReport:
    probe_modality: str
    rows: list[dict] = field(default_factory=list)

    def accuracy(self, n_c: int) -> float:
        for r in self.rows:
            if r["n_c"] == n_c:
                return r["accuracy"]
        raise KeyError(n_c)

    def to_json(self) -> dict:
        return asdict(self)


def embed_corpus(model, records: Sequence[EmbeddingRecord], modality: str) -> EmbeddingTable:
    """Eval-mode embeddings of every record of one modality, in record order."""
    recs = [r for r in records if r.modality == modality]
    d_in, _, d = model.dims
    if not recs:
        return EmbeddingTable(modality, [], np.zeros((0, d)))
    x = np.stack([r.vector for r in recs])
    if x.shape[1] != d_in:
        raise DataError(f"records have dimension {x.shape[1]}, model expects {d_in}")
    return EmbeddingTable(modality, [r.identity_id for r in recs], embed(model, x, modality))


# --------------------------------------------------------------------------
# trials
# --------------------------------------------------------------------------


def _stratum_keys(records, attrs) -> dict[str, tuple]:
    keys = {}
    for r in records:
        if r.identity_id in keys:
            continue
        if attrs and not r.meta:
            raise StratificationError(f"identity {r.identity_id!r} has no demographic metadata")
        try:
            keys[r.identity_id] = tuple(r.meta[a] for a in attrs) if attrs else ()
        except KeyError as exc:
            raise StratificationError(f"identity {r.identity_id!r} lacks attribute {exc.args[0]!r}") from None
    return keys


def _at(frac: float, n: int) -> int:
    return min(int(frac * n), n - 1)


def make_verification_trials(
    test_records: Sequence[EmbeddingRecord],
    n_trials: int,
    stratify: str = "random",
    rng: Rng | None = None,
    probe_modality: str = FACE,
    candidate_modality: str = VOICE,
) -> TrialSet:
    """Half same-identity, half different-identity pairs.

    Indices point into the modality-filtered record lists (the row order of
    :func:`embed_corpus`).  Under a demographic stratification the negative
    candidate shares the listed attributes with the probe; probes are drawn
    only from identities that have such a partner.
    """
    if stratify not in STRATA:
        raise StratificationError(f"unknown stratification {stratify!r}; expected one of {list(STRATA)}")
    if n_trials < 2:
        raise ValueError("need at least 2 trials")
    rng = rng or Rng(0)
    attrs = STRATA[stratify]
    unimodal = probe_modality == candidate_modality

    probe_rows: dict[str, list[int]] = {}
    cand_rows: dict[str, list[int]] = {}
    pi = ci = 0
    for r in test_records:
        if r.modality == probe_modality:
            probe_rows.setdefault(r.identity_id, []).append(pi)
            pi += 1
        if r.modality == candidate_modality and not unimodal:
            cand_rows.setdefault(r.identity_id, []).append(ci)
            ci += 1
    if unimodal:
        cand_rows = probe_rows

    min_rows = 2 if unimodal else 1
    ids = sorted(i for i in probe_rows if i in cand_rows and len(cand_rows[i]) >= min_rows)
    id_set = set(ids)
    keys = _stratum_keys([r for r in test_records if r.identity_id in id_set], attrs)
    strata: dict[tuple, list[str]] = {}
    for ident in ids:
        strata.setdefault(keys[ident], []).append(ident)
    eligible = [i for i in ids if len(strata[keys[i]]) >= 2]
    if not eligible:
        if not strata:
            raise StratificationError("no identities with both trial modalities")
        key = min(strata)
        label = ", ".join(f"{a}={v}" for a, v in zip(attrs, key)) or "all identities"
        raise StratificationError(f"stratum {label} has fewer than 2 identities")

    n_pos = (n_trials + 1) // 2
    probe_idx = np.empty(n_trials, dtype=np.int64)
    cand_idx = np.empty(n_trials, dtype=np.int64)
    same = np.zeros(n_trials, dtype=bool)
    same[:n_pos] = True

    pick = rng.integers(len(eligible), n_trials)
    u = rng.uniform(3 * n_trials).reshape(n_trials, 3)
    for t in range(n_trials):
        ident = eligible[pick[t]]
        prow = probe_rows[ident]
        a = _at(u[t, 0], len(prow))
        probe_idx[t] = prow[a]
        if t < n_pos:
            crow = cand_rows[ident]
            if unimodal:
                # any other sample of the same identity
                b = _at(u[t, 1], len(crow) - 1)
                cand_idx[t] = crow[b + (b >= a)]
            else:
                cand_idx[t] = crow[_at(u[t, 1], len(crow))]
        else:
            peers = strata[keys[ident]]
            me = peers.index(ident)
            j = _at(u[t, 1], len(peers) - 1)
            other = peers[j + (j >= me)]
            crow = cand_rows[other]
            cand_idx[t] = crow[_at(u[t, 2], len(crow))]

    order = rng.permutation(n_trials)
    return TrialSet(probe_modality, candidate_modality, probe_idx[order], cand_idx[order], same[order], stratify)


def score_trials(trials: TrialSet, probe_table: EmbeddingTable, candidate_table: EmbeddingTable) -> np.ndarray:
    """Cosine score of every trial; stored on the trial set and returned."""
    if probe_table.vectors.shape[1] != candidate_table.vectors.shape[1]:
        raise DimensionError("probe and candidate embeddings differ in dimension")
    p = row_l2_normalize(probe_table.vectors)[trials.probe_idx]
    c = row_l2_normalize(candidate_table.vectors)[trials.candidate_idx]
    trials.scores = np.clip(np.einsum("ij,ij->i", p, c), -1.0, 1.0)
    return trials.scores


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def eer_auc(scores, labels) -> tuple[float, float]:
    """Equal error rate and ROC area of scored trials.

    AUC is the probability that a positive outscores a negative, ties
    counting one half.  EER is read where false-accept and false-reject
    rates cross, interpolating linearly between adjacent operating points.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(f"need both classes, got {n_pos} positive and {n_neg} negative trials")
    if not np.all(np.isfinite(scores)):
        raise MetricUndefinedError("scores must be finite")

    order = np.argsort(-scores, kind="mergesort")
    fp, tp = _kernels.roc_points(np.ascontiguousarray(scores[order]), np.ascontiguousarray(labels[order]))
    # integer trapezoid keeps rational AUCs exact up to the final division
    auc = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1]))) / (2 * n_pos * n_neg)

    far = fp / n_neg
    frr = 1.0 - tp / n_pos
    gap = far - frr
    k = int(np.argmax(gap >= 0))
    if gap[k] == 0 or k == 0:
        eer = float(far[k])
    else:
        w = -gap[k - 1] / (gap[k] - gap[k - 1])
        eer = float(far[k - 1] + w * (far[k] - far[k - 1]))
    return eer, float(auc)


def verification_metrics(trials: TrialSet, paradigm: str | None = None) -> VerificationReport:
    if trials.scores is None:
        raise MetricUndefinedError("trials have not been scored")
    eer, auc = eer_auc(trials.scores, trials.same)
    if paradigm is None:
        paradigm = trials.probe_modality if trials.probe_modality == trials.candidate_modality else "face-voice"
    return VerificationReport(eer, auc, len(trials), trials.stratify, paradigm)


def cross_modal_verification(model, test_records, n_trials: int = 10_000, stratify: str = "random", rng: Rng | None = None) -> VerificationReport:
    trials = make_verification_trials(test_records, n_trials, stratify, rng, FACE, VOICE)
    score_trials(trials, embed_corpus(model, test_records, FACE), embed_corpus(model, test_records, VOICE))
    return verification_metrics(trials)


def unimodal_verification(model, test_records, modality: str, n_trials: int = 10_000, stratify: str = "random", rng: Rng | None = None) -> VerificationReport:
    """Same-modality verification through the unchanged network."""
    trials = make_verification_trials(test_records, n_trials, stratify, rng, modality, modality)
    table = embed_corpus(model, test_records, modality)
    score_trials(trials, table, table)
    return verification_metrics(trials)


# --------------------------------------------------------------------------
# matching
# --------------------------------------------------------------------------


def matching_accuracy(scores: np.ndarray, true_idx: np.ndarray) -> tuple[float, int]:
    """Fraction of rows whose argmax (lowest index on ties) is the true item, and the tie count."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    true_idx = np.ascontiguousarray(true_idx, dtype=np.int64)
    correct, ties = _kernels.match_argmax(scores, true_idx)
    return correct / scores.shape[0], int(ties)


def _distinct_rows(rng: Rng, rows: int, n: int, k: int) -> np.ndarray:
    """``rows`` independent uniform random ordered k-subsets of ``range(n)``.

    Floyd's subset sampler, vectorised over rows, then a per-row shuffle;
    cost does not depend on ``n``.
    """
    out = np.empty((rows, k), dtype=np.int64)
    r = np.arange(rows)
    for col, j in enumerate(range(n - k, n)):
        t = np.minimum((rng.uniform(rows) * (j + 1)).astype(np.int64), j)
        taken = np.any(out[:, :col] == t[:, None], axis=1)
        out[:, col] = np.where(taken, j, t)
    order = np.argsort(rng.uniform(rows * k).reshape(rows, k), axis=1, kind="stable")
    return out[r[:, None], order]


def matching_task(
    probe_table: EmbeddingTable,
    gallery_table: EmbeddingTable,
    gallery_sizes: Sequence[int] = DEFAULT_GALLERY_SIZES,
    n_trials: int = 10_000,
    rng: Rng | None = None,
) -> MatchingReport:
    """1:n_c matching: one probe against n_c gallery items, exactly one a match."""
    rng = rng or Rng(0)
    probe_rows = probe_table.rows_by_identity()
    gal_rows = gallery_table.rows_by_identity()
    ids = sorted(set(probe_rows) & set(gal_rows))
    if any(n < 2 for n in gallery_sizes):
        raise ValueError("gallery sizes must be >= 2")
    need = max(gallery_sizes) + 1
    if len(ids) < need:
        raise DataError(f"matching up to n_c={max(gallery_sizes)} needs {need} identities, have {len(ids)}")

    P = row_l2_normalize(probe_table.vectors)
    G = row_l2_normalize(gallery_table.vectors)
    p_count = np.array([probe_rows[i].size for i in ids])
    g_count = np.array([gal_rows[i].size for i in ids])
    p_flat = np.concatenate([probe_rows[i] for i in ids])
    g_flat = np.concatenate([gal_rows[i] for i in ids])
    p_off = np.concatenate([[0], np.cumsum(p_count)[:-1]])
    g_off = np.concatenate([[0], np.cumsum(g_count)[:-1]])

    # Galleries are nested: every size shares the trial's probe and a prefix of
    # one distractor ordering, so accuracies across n_c are paired comparisons.
    # Each size on its own is still a uniform random 1:n_c trial.
    n_max = max(gallery_sizes)
    r = rng.spawn("trials")
    chosen = _distinct_rows(r, n_trials, len(ids), n_max)
    true_id = chosen[:, 0]
    probe = p_flat[p_off[true_id] + (r.uniform(n_trials) * p_count[true_id]).astype(np.int64)]
    gal = g_flat[g_off[chosen] + (r.uniform(n_trials * n_max).reshape(n_trials, n_max) * g_count[chosen]).astype(np.int64)]
    all_scores = np.einsum("td,tkd->tk", P[probe], G[gal])
    rows = np.arange(n_trials)

    report = MatchingReport(probe_table.modality)
    for n_c in gallery_sizes:
        true_pos = rng.spawn(f"n_c={n_c}").integers(n_c, n_trials)
        scores = all_scores[:, :n_c].copy()
        # move the true item from column 0 to its random slot
        scores[rows, 0], scores[rows, true_pos] = scores[rows, true_pos], all_scores[:, 0]
        acc, ties = matching_accuracy(scores, true_pos)
        report.rows.append({"n_c": int(n_c), "accuracy": acc, "n_trials": int(n_trials), "ties": ties})
    return report
