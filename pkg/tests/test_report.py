import copy

import pytest

from sbnet.config import RunConfig
from sbnet.errors import MergeError
from sbnet.report import build_tables, check_compatible, strategy_table, variants_table


def manifest(variant="single", loss="fop", strategy="random", epochs=30, auc=0.9, name="r"):
    cfg = RunConfig.from_dict({"variant": variant, "loss": {"loss": loss}, "strategy": strategy, "epochs": epochs}).to_dict()
    v = {"eer": 1 - auc, "auc": auc, "n_trials": 10, "stratify": "random", "paradigm": "face-voice"}
    uni = {m: dict(v, paradigm=m) for m in ("face", "voice")}
    rows = [{"n_c": n, "accuracy": 1 / n, "n_trials": 10, "ties": 0} for n in (2, 4)]
    return {"config": cfg, "reports": {"verification": {"random": v, "G": dict(v, stratify="G")}, "unimodal": uni,
                                       "matching": {"face": {"probe_modality": "face", "rows": rows}}},
            "_path": f"/runs/{name}/manifest.json"}


def test_single_manifest_single_row():
    tables = build_tables([manifest()])
    assert len(tables["runs"][1]) == 1


def test_six_run_grid():
    runs = [manifest(v, l, auc=0.8 + 0.01 * i, name=f"{v}-{l}")
            for i, (v, l) in enumerate((v, l) for v in ("single", "two") for l in ("fop", "center", "git"))]
    header, rows = variants_table(runs)
    assert header == ["paradigm", "loss", "single EER", "single AUC", "two EER", "two AUC"]
    assert [r[:2] for r in rows] == [[p, l] for l in ("FOP", "Center", "Git")
                                     for p in ("Face+Voice", "Voice only", "Face only")]
    assert rows[0][3] == "80.00" and rows[0][5] == "83.00"
    assert rows[1][4] == "" and rows[1][5] == ""  # no unimodal two-branch rows


def test_strategy_rows_ordered():
    runs = [manifest(strategy=s, name=s) for s in ("fvfv", "random", "hevhef", "vfvf", "hefhev")]
    _, rows = strategy_table(runs)
    assert [r[0] for r in rows] == ["HeFHeV", "HeVHeF", "Random", "VFVF", "FVFV"]


def test_incompatible_eval_specs():
    a, b = manifest(name="a"), manifest(name="b")
    b["config"]["eval"]["n_trials"] = 99
    with pytest.raises(MergeError, match="n_trials"):
        check_compatible([a, b])


def test_duplicate_cells():
    runs = [manifest(name="a"), copy.deepcopy(manifest(name="b"))]
    with pytest.raises(MergeError):
        build_tables(runs, ["variants"])
    assert "variants" not in build_tables(runs)  # skipped when not asked for explicitly


def test_epochs_table():
    runs = [manifest(strategy=f"block:face:{k}", epochs=k, name=f"k{k}") for k in (1, 2, 3, 5)]
    _, rows = build_tables(runs)["epochs"]
    assert [r[1] for r in rows] == ["1", "2", "3", "5"]
