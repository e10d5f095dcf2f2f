"""Training loop and end-of-run evaluation.

One epoch is ``n_batches`` optimizer steps.  For the single branch each step
draws a batch of the modality chosen by the interleaving plan from that
modality's own reshuffling stream; the two-branch model consumes paired
face/voice batches and ignores the plan.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from sbnet import checkpoint as ckpt
from sbnet.config import RunConfig
from sbnet.data import EmbeddingRecord, SplitSpec, make_splits, select
from sbnet.errors import DataError, SBNetError
from sbnet.evaluation import cross_modal_verification, embed_corpus, matching_task, unimodal_verification
from sbnet.losses import Batch, ClassifierHead, center_update, init_centers, init_head, total_loss
from sbnet.model import (
    SingleBranchParams,
    TwoBranchParams,
    init_single,
    init_two,
    single_backward,
    single_forward,
    two_backward,
    two_forward,
)
from sbnet.numerics import Rng
from sbnet.optim import AdamState, adam_step, flatten, lr_at, unflatten
from sbnet.schedule import FACE, MODALITIES, VOICE, make_batches, make_paired_batches, plan_epoch

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: SingleBranchParams | TwoBranchParams
    head: ClassifierHead
    centers: np.ndarray | None
    label_ids: list[str]
    split: SplitSpec
    trace: list[dict] = field(default_factory=list)

    def checkpoint(self, cfg: RunConfig) -> ckpt.Checkpoint:
        # the output directory is not part of the experiment
        config = {k: v for k, v in cfg.to_dict().items() if k != "out"}
        return ckpt.Checkpoint(self.model, self.head, self.centers, self.label_ids, cfg["seed"],
                               {"split": self.split.to_json(), "config": config})


class _Stream:
    """Endless batches of one kind, reshuffled each time the data runs out."""

    def __init__(self, make, rng: Rng):
        self._make = make
        self._rng = rng
        self._queue: list = []
        self.per_pass = len(make(rng.spawn("probe")))

    def next(self):
        if not self._queue:
            self._queue = list(reversed(self._make(self._rng)))
        return self._queue.pop()


def _params(model, head) -> dict[str, np.ndarray]:
    return {**model.trainable(), **head.trainable()}


def _write_back(model, head, arrays: dict[str, np.ndarray]) -> None:
    model.set_arrays({k: v for k, v in arrays.items() if not k.startswith("head.")})
    head.set_arrays({k: v for k, v in arrays.items() if k.startswith("head.")})


def build(cfg: RunConfig, d_in: int, n_classes: int, rng: Rng):
    m = cfg["model"]
    if cfg["variant"] == "single":
        model = init_single(d_in, m["hidden"], m["embed_dim"], rng.spawn("model"), m["bn_momentum"], m["bn_eps"])
    else:
        model = init_two(d_in, m["hidden"], m["embed_dim"], rng.spawn("model"))
    head = init_head(m["embed_dim"], n_classes, rng.spawn("head"))
    centers = init_centers(n_classes, m["embed_dim"]) if cfg.loss_config().uses_centers else None
    return model, head, centers


def train(cfg: RunConfig, records: Sequence[EmbeddingRecord], d_in: int | None, init: ckpt.Checkpoint | None = None) -> TrainResult:
    if not records or d_in is None:
        raise DataError("corpus is empty; nothing to train on")
    rng = Rng(cfg["seed"])
    split = make_splits(records, tuple(cfg["split"]["fractions"]), Rng(cfg["split"]["seed"]))
    if not split.train:
        raise DataError("training split is empty")
    train_recs = select(records, split.train)
    loss_cfg = cfg.loss_config()

    if init is not None:
        if init.model.variant != cfg["variant"] or init.model.dims[0] != d_in:
            raise DataError("resume checkpoint does not match the configured variant or corpus dimension")
        if init.label_ids != split.train:
            raise DataError("resume checkpoint was trained on a different identity split")
        model, head, centers = init.model, init.head, init.centers
        if centers is None and loss_cfg.uses_centers:
            centers = init_centers(head.n_classes, model.dims[2])
    else:
        model, head, centers = build(cfg, d_in, len(split.train), rng)
    label_of = {ident: i for i, ident in enumerate(split.train)}

    bs = cfg["batch_size"]
    held_out = split.held_out
    if cfg["variant"] == "single":
        strategy = cfg.strategy()
        streams = {}
        for m in MODALITIES:
            if any(r.modality == m for r in train_recs):
                streams[m] = _Stream(
                    lambda r, m=m: make_batches(train_recs, m, bs, r, held_out), rng.spawn(f"batches:{m}")
                )
        if not streams:
            raise DataError("no training records")
        n_batches = max(s.per_pass for s in streams.values())
    else:
        stream = _Stream(lambda r: make_paired_batches(train_recs, bs, r, held_out), rng.spawn("batches:paired"))
        n_batches = stream.per_pass

    sched = cfg.schedule()
    o = cfg["optim"]
    adam = AdamState.zeros(flatten(_params(model, head)).size, o["beta1"], o["beta2"], o["eps_adam"])
    trace = []

    for epoch in range(cfg["epochs"]):
        lr = lr_at(sched, epoch)
        if cfg["variant"] == "single":
            plan = plan_epoch(strategy, epoch, n_batches, rng.spawn(f"plan:{epoch}"))
        else:
            plan = ["paired"] * n_batches
        losses, parts = [], {}
        for b, tag in enumerate(plan):
            try:
                if tag == "paired":
                    pairs = stream.next()
                    labels = np.array([label_of[f.identity_id] for f, _ in pairs])
                    xf = np.stack([f.vector for f, _ in pairs])
                    xv = np.stack([v.vector for _, v in pairs])
                    emb, _, _, cache = two_forward(model, xf, xv)
                    out = total_loss(loss_cfg, head, centers, Batch(emb, labels, "fused"))
                    grads = two_backward(model, cache, out.grad_embeddings)
                else:
                    if tag not in streams:
                        raise DataError(f"plan asks for {tag} batches but the training split has no {tag} records")
                    batch = streams[tag].next()
                    labels = np.array([label_of[r.identity_id] for r in batch])
                    emb, cache = single_forward(model, np.stack([r.vector for r in batch]), "train")
                    out = total_loss(loss_cfg, head, centers, Batch(emb, labels, tag))
                    grads, _ = single_backward(model, cache, out.grad_embeddings)
                grads.update(out.grad_head)
                current = _params(model, head)
                new_flat, adam = adam_step(adam, flatten(current), flatten(grads), lr)
                _write_back(model, head, unflatten(new_flat, current))
                if centers is not None:
                    centers = center_update(centers, Batch(emb, labels), loss_cfg.center_lr)
            except SBNetError as exc:
                raise type(exc)(f"epoch {epoch}, batch {b}: {exc}") from exc
            losses.append(out.loss)
            for k, v in out.parts.items():
                parts[k] = parts.get(k, 0.0) + v / n_batches
        entry = {"epoch": epoch, "lr": lr, "mean_loss": float(np.mean(losses)), "parts": parts,
                 "face_batches": plan.count(FACE), "voice_batches": plan.count(VOICE)}
        trace.append(entry)
        log.info("epoch %d lr=%.3g loss=%.5f", epoch, lr, entry["mean_loss"])

    return TrainResult(model, head, centers, list(split.train), split, trace)


def _guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs).to_json()
    except SBNetError as exc:
        log.warning("evaluation skipped: %s", exc)
        return {"error": str(exc)}


def evaluate(model, records: Sequence[EmbeddingRecord], split: SplitSpec, ev: dict, strict: bool = False) -> dict:
    """Verification and matching reports on the test identities.

    With ``strict`` a failing report raises; otherwise it is recorded as an
    error entry so a finished training run still writes its manifest.
    """
    test = select(records, split.test)
    rng = Rng(ev["seed"])
    n = int(ev["n_trials"])
    call = (lambda fn, *a, **k: fn(*a, **k).to_json()) if strict else _guard

    out = {"verification": {}, "unimodal": {}, "matching": {}}
    for tag in ev["strata"]:
        out["verification"][tag] = call(cross_modal_verification, model, test, n, tag, rng.spawn(f"verify:{tag}"))
    if ev["unimodal"]:
        for m in MODALITIES:
            out["unimodal"][m] = call(unimodal_verification, model, test, m, n, "random", rng.spawn(f"unimodal:{m}"))
    sizes = [int(s) for s in ev["gallery_sizes"]]
    if sizes:
        tables = {m: embed_corpus(model, test, m) for m in MODALITIES}
        for probe, gallery in ((FACE, VOICE), (VOICE, FACE)):
            out["matching"][probe] = call(matching_task, tables[probe], tables[gallery], sizes,
                                          int(ev["matching_trials"]), rng.spawn(f"match:{probe}"))
    return out
