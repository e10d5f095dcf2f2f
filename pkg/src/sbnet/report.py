"""Merge run manifests into comparison tables (CSV plus plain text).

Values are percentages with two decimals, like published verification
tables.  Table kinds:

* ``runs``     one row per manifest
* ``variants`` train/test paradigm x loss, single vs two branch EER/AUC
* ``strata``   loss x variant, AUC per demographic stratification
* ``strategy`` interleaving strategy x loss, EER/AUC
* ``epochs``   single-modality continuation length, EER/AUC and unimodal AUC
* ``matching`` gallery size x run, matching accuracy
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

from sbnet.errors import MergeError, ParseError
from sbnet.evaluation import STRATA
from sbnet.losses import LOSSES
from sbnet.schedule import STRATEGY_ORDER, Strategy

_LOSS_NAME = {"fop": "FOP", "center": "Center", "git": "Git"}
_EVAL_KEYS = ("n_trials", "strata", "gallery_sizes", "matching_trials", "seed")


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        m = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}") from None
    m.setdefault("_path", str(path))
    return m


def _pct(x) -> str:
    return "" if x is None else f"{100.0 * x:.2f}"


def _metric(report: dict | None, key: str):
    if not report or "error" in report:
        return None
    return report.get(key)


def check_compatible(manifests: Sequence[dict]) -> None:
    if not manifests:
        raise MergeError("need at least one manifest")
    ref = {k: manifests[0]["config"]["eval"].get(k) for k in _EVAL_KEYS}
    for m in manifests[1:]:
        ev = {k: m["config"]["eval"].get(k) for k in _EVAL_KEYS}
        if ev != ref:
            diff = sorted(k for k in _EVAL_KEYS if ev[k] != ref[k])
            raise MergeError(f"{m.get('_path', '?')} was evaluated differently ({', '.join(diff)})")


def _run_name(m: dict) -> str:
    return Path(m.get("_path", "run")).parent.name or "run"


def runs_table(manifests) -> tuple[list[str], list[list[str]]]:
    header = ["run", "variant", "loss", "strategy", "epochs", "EER", "AUC", "voice AUC", "face AUC"]
    rows = []
    for m in manifests:
        c, rep = m["config"], m["reports"]
        fv = rep["verification"].get("random")
        rows.append([
            _run_name(m), c["variant"], _LOSS_NAME[c["loss"]["loss"]],
            c["strategy"] if c["variant"] == "single" else "paired", str(c["epochs"]),
            _pct(_metric(fv, "eer")), _pct(_metric(fv, "auc")),
            _pct(_metric(rep["unimodal"].get("voice"), "auc")), _pct(_metric(rep["unimodal"].get("face"), "auc")),
        ])
    return header, rows


def _index(manifests, key_fn) -> dict:
    out = {}
    for m in manifests:
        key = key_fn(m)
        if key in out:
            raise MergeError(f"two manifests share the table cell {key}: {out[key].get('_path')} and {m.get('_path')}")
        out[key] = m
    return out


def _not_block(manifests):
    return [m for m in manifests if not m["config"]["strategy"].startswith("block")]


def variants_table(manifests):
    idx = _index(_not_block(manifests), lambda m: (m["config"]["variant"], m["config"]["loss"]["loss"]))
    header = ["paradigm", "loss", "single EER", "single AUC", "two EER", "two AUC"]
    rows = []
    for loss in LOSSES:
        if not any(k[1] == loss for k in idx):
            continue
        for paradigm, pick in (
            ("Face+Voice", lambda r: r["verification"].get("random")),
            ("Voice only", lambda r: r["unimodal"].get("voice")),
            ("Face only", lambda r: r["unimodal"].get("face")),
        ):
            row = [paradigm, _LOSS_NAME[loss]]
            for variant in ("single", "two"):
                m = idx.get((variant, loss))
                # unimodal rows only exist for the single branch
                rep = pick(m["reports"]) if m and (variant == "single" or paradigm == "Face+Voice") else None
                row += [_pct(_metric(rep, "eer")), _pct(_metric(rep, "auc"))]
            rows.append(row)
    return header, rows


def strata_table(manifests):
    idx = _index(_not_block(manifests), lambda m: (m["config"]["variant"], m["config"]["loss"]["loss"]))
    labels = {"random": "Rand."}
    header = ["loss"] + [f"{v} {labels.get(s, s)}" for v in ("single", "two") for s in STRATA]
    rows = []
    for loss in LOSSES:
        if not any(k[1] == loss for k in idx):
            continue
        row = [_LOSS_NAME[loss]]
        for variant in ("single", "two"):
            m = idx.get((variant, loss))
            for s in STRATA:
                row.append(_pct(_metric(m["reports"]["verification"].get(s), "auc")) if m else "")
        rows.append(row)
    return header, rows


def _strategy_rank(name: str) -> tuple:
    kind = Strategy.parse(name).kind
    return (STRATEGY_ORDER.index(kind) if kind in STRATEGY_ORDER else len(STRATEGY_ORDER), name)


def strategy_table(manifests):
    singles = [m for m in manifests if m["config"]["variant"] == "single" and not m["config"]["strategy"].startswith("block")]
    idx = _index(singles, lambda m: (m["config"]["strategy"], m["config"]["loss"]["loss"]))
    losses = [l for l in LOSSES if any(k[1] == l for k in idx)]
    header = ["strategy"] + [f"{_LOSS_NAME[l]} {x}" for l in losses for x in ("EER", "AUC")]
    rows = []
    for strat in sorted({k[0] for k in idx}, key=_strategy_rank):
        row = [Strategy.parse(strat).display]
        for l in losses:
            m = idx.get((strat, l))
            rep = m["reports"]["verification"].get("random") if m else None
            row += [_pct(_metric(rep, "eer")), _pct(_metric(rep, "auc"))]
        rows.append(row)
    return header, rows


def epochs_table(manifests):
    blocks = [m for m in manifests if m["config"]["strategy"].startswith("block")]
    idx = _index(blocks, lambda m: (m["config"]["strategy"], m["config"]["epochs"], m["config"]["loss"]["loss"]))
    header = ["modality", "epochs", "loss", "EER", "AUC", "voice AUC", "face AUC"]
    rows = []
    for (strat, epochs, loss) in sorted(idx, key=lambda k: (k[0].split(":")[1], k[1], k[2])):
        rep = idx[(strat, epochs, loss)]["reports"]
        fv = rep["verification"].get("random")
        rows.append([
            Strategy.parse(strat).modality, str(epochs), _LOSS_NAME[loss],
            _pct(_metric(fv, "eer")), _pct(_metric(fv, "auc")),
            _pct(_metric(rep["unimodal"].get("voice"), "auc")), _pct(_metric(rep["unimodal"].get("face"), "auc")),
        ])
    return header, rows


def matching_table(manifests):
    header = ["run", "probe", "n_c", "accuracy", "chance"]
    rows = []
    for m in manifests:
        for probe, rep in m["reports"].get("matching", {}).items():
            if "error" in rep:
                continue
            for r in rep["rows"]:
                rows.append([_run_name(m), probe, str(r["n_c"]), _pct(r["accuracy"]), _pct(1.0 / r["n_c"])])
    return header, rows


TABLES = {
    "runs": runs_table,
    "variants": variants_table,
    "strata": strata_table,
    "strategy": strategy_table,
    "epochs": epochs_table,
    "matching": matching_table,
}


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def to_text(title: str, header, rows) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)] if rows else [len(h) for h in header]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
    lines = [title, sep, fmt.format(*header), sep]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines)


def build_tables(manifests: Sequence[dict], kinds: Sequence[str] | None = None) -> dict[str, tuple[list, list]]:
    """Every requested table that has at least one row.

    Without explicit ``kinds`` a table whose cells would be ambiguous for
    this set of runs is skipped instead of raising.
    """
    check_compatible(manifests)
    auto = kinds is None
    kinds = list(TABLES) if auto else list(kinds)
    out = {}
    for kind in kinds:
        try:
            header, rows = TABLES[kind](manifests)
        except MergeError:
            if auto:
                continue
            raise
        if rows:
            out[kind] = (header, rows)
    return out
