"""Command-line entry point: ``sbnet <command> [options]``.

Commands: gen-synth, train, eval-verification, eval-matching, gradcheck, report.
Every file a command writes goes under its ``--out`` directory.

Exit codes: 0 success, 1 check or validation failure, 2 I/O error,
3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from sbnet import __version__
from sbnet import checkpoint as ckpt
from sbnet import report as rpt
from sbnet.checkpoint import atomic_write_text
from sbnet.config import RunConfig, parse_override
from sbnet.data import SplitSpec, SynthConfig, gen_synthetic, load_corpus, resolve_path, save_corpus, select
from sbnet.errors import ConfigError, DataError, SBNetError
from sbnet.evaluation import (
    STRATA,
    cross_modal_verification,
    embed_corpus,
    matching_task,
    unimodal_verification,
)
from sbnet.gradcheck import CHECKS, format_table, run_gradchecks
from sbnet.numerics import Rng
from sbnet.schedule import FACE, MODALITIES, VOICE
from sbnet.train import evaluate, train

log = logging.getLogger("sbnet")


def _write_json(path: Path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _verification_csv(reports: dict) -> str:
    rows = []
    for tag, rep in reports.get("verification", {}).items():
        if "error" not in rep:
            rows.append(["face-voice", tag, rep["eer"], rep["auc"], rep["n_trials"]])
    for m, rep in reports.get("unimodal", {}).items():
        if "error" not in rep:
            rows.append([m, rep["stratify"], rep["eer"], rep["auc"], rep["n_trials"]])
    return rpt.to_csv(["paradigm", "stratify", "eer", "auc", "n_trials"], rows)


def _matching_csv(reports: dict) -> str:
    rows = []
    for probe, rep in reports.get("matching", {}).items():
        if "error" in rep:
            continue
        for r in rep["rows"]:
            rows.append([probe, r["n_c"], r["accuracy"], r["n_trials"], r["ties"]])
    return rpt.to_csv(["probe_modality", "n_c", "accuracy", "n_trials", "ties"], rows)


def _load_corpus(path) -> tuple[list, int]:
    if path is None:
        raise ConfigError("no corpus given (use --corpus or the config's corpus key)")
    records, d_in = load_corpus(resolve_path(path))
    if not records:
        raise DataError(f"corpus {path} is empty")
    return records, d_in


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    cfg = SynthConfig(
        n_identities=args.n_identities,
        samples_per_identity=args.samples,
        latent_dim=args.latent_dim,
        d_in=args.d_in,
        noise_std=args.noise_std,
        seed=args.seed,
        map_correlation=args.map_correlation,
        attribute_strength=args.attribute_strength,
    )
    out = Path(args.out) / args.name
    save_corpus(out, gen_synthetic(cfg), cfg.d_in)
    print(out)
    return 0


def _run_config(args) -> RunConfig:
    overrides = [parse_override(s) for s in args.set or []]
    for flag, key in (("seed", "seed"), ("out", "out"), ("strategy", "strategy"), ("corpus", "corpus"),
                      ("variant", "variant"), ("epochs", "epochs"), ("resume", "resume")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append({key: val})
    if getattr(args, "loss", None) is not None:
        overrides.append({"loss": {"loss": args.loss}})
    return RunConfig.load(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    records, d_in = _load_corpus(cfg["corpus"])
    out = Path(cfg["out"])
    init = ckpt.load(cfg["resume"]) if cfg["resume"] else None

    started = time.time()
    result = train(cfg, records, d_in, init=init)
    reports = evaluate(result.model, records, result.split, cfg["eval"])
    wall = time.time() - started

    ckpt.save(out / "checkpoint.json", result.checkpoint(cfg))
    _write_json(out / "reports.json", reports)
    atomic_write_text(out / "verification.csv", _verification_csv(reports))
    atomic_write_text(out / "matching.csv", _matching_csv(reports))
    manifest = {
        "config": cfg.to_dict(),
        "code_version": __version__,
        "seed": cfg["seed"],
        "corpus_d_in": d_in,
        "split": result.split.to_json(),
        "resumed_from": cfg["resume"],
        "wall_clock_s": round(wall, 3),
        "loss_trace": result.trace,
        "reports": reports,
        "checkpoint": "checkpoint.json",
    }
    _write_json(out / "manifest.json", manifest)
    fv = reports["verification"].get("random", {})
    if "auc" in fv:
        log.info("face-voice EER %.4f AUC %.4f", fv["eer"], fv["auc"])
    print(out / "manifest.json")
    return 0


def _eval_setup(args):
    ck = ckpt.load(args.checkpoint)
    corpus = args.corpus or ck.extra.get("config", {}).get("corpus")
    records, d_in = _load_corpus(corpus)
    if d_in != ck.model.dims[0]:
        raise DataError(f"checkpoint expects d_in={ck.model.dims[0]}, corpus has {d_in}")
    split = SplitSpec(**ck.extra["split"])
    return ck, select(records, split.test)


def cmd_eval_verification(args) -> int:
    ck, test = _eval_setup(args)
    rng = Rng(args.seed)
    reports = {"verification": {}, "unimodal": {}}
    for tag in args.strata:
        reports["verification"][tag] = cross_modal_verification(ck.model, test, args.n_trials, tag, rng.spawn(f"verify:{tag}")).to_json()
    if args.unimodal:
        for m in MODALITIES:
            reports["unimodal"][m] = unimodal_verification(ck.model, test, m, args.n_trials, "random", rng.spawn(f"unimodal:{m}")).to_json()
    out = Path(args.out)
    _write_json(out / "verification.json", reports)
    text = _verification_csv(reports)
    atomic_write_text(out / "verification.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_eval_matching(args) -> int:
    ck, test = _eval_setup(args)
    gallery = VOICE if args.probe == FACE else FACE
    rep = matching_task(embed_corpus(ck.model, test, args.probe), embed_corpus(ck.model, test, gallery),
                        args.gallery_sizes, args.n_trials, Rng(args.seed).spawn(f"match:{args.probe}"))
    reports = {"matching": {args.probe: rep.to_json()}}
    out = Path(args.out)
    _write_json(out / "matching.json", reports)
    text = _matching_csv(reports)
    atomic_write_text(out / "matching.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    started = time.time()
    results = run_gradchecks(seed=args.seed, fault=args.inject_fault)
    print(format_table(results))
    print(f"({time.time() - started:.2f} s)")
    return 0 if all(r.passed for r in results) else 1


def cmd_report(args) -> int:
    manifests = [rpt.load_manifest(p) for p in args.manifests]
    tables = rpt.build_tables(manifests, args.table)
    out = Path(args.out)
    texts = []
    for kind, (header, rows) in tables.items():
        atomic_write_text(out / f"{kind}.csv", rpt.to_csv(header, rows))
        texts.append(rpt.to_text(kind, header, rows))
    text = "\n\n".join(texts) + "\n"
    atomic_write_text(out / "report.txt", text)
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sbnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic face/voice embedding corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", default="corpus.jsonl", help="file name; a .sbc suffix selects the binary format")
    p.add_argument("--n-identities", type=int, default=64)
    p.add_argument("--samples", type=int, default=10, help="samples per identity per modality")
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--d-in", type=int, default=64)
    p.add_argument("--noise-std", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--map-correlation", type=float, default=0.0)
    p.add_argument("--attribute-strength", type=float, default=0.0)
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("train", help="train a model and evaluate it on held-out identities")
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", help="random|hefhev|hevhef|vfvf|fvfv|block:MOD:K|only_face|only_voice")
    p.add_argument("--loss", choices=("fop", "center", "git"))
    p.add_argument("--variant", choices=("single", "two"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", help="checkpoint to continue training from")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config leaf, e.g. optim.lr0=1e-3")
    p.set_defaults(fn=cmd_train)

    for name, fn, helptext in (
        ("eval-verification", cmd_eval_verification, "EER/AUC on the checkpoint's test identities"),
        ("eval-matching", cmd_eval_matching, "1:n_c matching accuracy on the checkpoint's test identities"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--corpus", help="defaults to the corpus recorded in the checkpoint")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        if name == "eval-verification":
            p.add_argument("--n-trials", type=int, default=10000)
            p.add_argument("--strata", nargs="+", default=["random"], choices=list(STRATA))
            p.add_argument("--no-unimodal", dest="unimodal", action="store_false")
        else:
            p.add_argument("--n-trials", type=int, default=2000)
            p.add_argument("--gallery-sizes", type=int, nargs="+", default=[2, 4, 6, 8, 10])
            p.add_argument("--probe", choices=MODALITIES, default=FACE)
        p.set_defaults(fn=fn)

    p = sub.add_parser("gradcheck", help="compare every analytic gradient with finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", choices=list(CHECKS), help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("report", help="merge run manifests into comparison tables")
    p.add_argument("manifests", nargs="+", help="manifest.json files or run directories")
    p.add_argument("--out", required=True)
    p.add_argument("--table", action="append", choices=list(rpt.TABLES), help="restrict to these tables")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except SBNetError as exc:
        print(f"sbnet: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sbnet: I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
