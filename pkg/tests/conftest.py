import numpy as np
import pytest

from sbnet.data import SynthConfig, gen_synthetic
from sbnet.numerics import Rng


@pytest.fixture
def rng():
    return Rng(12345)


@pytest.fixture(scope="session")
def small_corpus():
    cfg = SynthConfig(n_identities=24, samples_per_identity=6, latent_dim=8, d_in=16, noise_std=0.3, seed=3)
    return gen_synthetic(cfg), cfg.d_in


def brute_auc(pos, neg):
    """Pairwise rank statistic: P(pos > neg) + P(pos == neg) / 2."""
    pos, neg = np.asarray(pos)[:, None], np.asarray(neg)[None, :]
    return float(np.mean((pos > neg) + 0.5 * (pos == neg)))


def brute_eer(pos, neg):
    """Sweep every threshold; interpolate FAR and FRR linearly where they cross."""
    pos, neg = np.asarray(pos), np.asarray(neg)
    thresholds = np.concatenate([[np.inf], np.sort(np.concatenate([pos, neg]))[::-1]])
    pts = [(np.mean(neg >= t), np.mean(pos < t)) for t in thresholds]
    for (far0, frr0), (far1, frr1) in zip(pts, pts[1:]):
        g0, g1 = far0 - frr0, far1 - frr1
        if g0 == 0:
            return far0
        if g0 < 0 <= g1:
            w = -g0 / (g1 - g0)
            return far0 + w * (far1 - far0)
    raise AssertionError("FAR and FRR never cross")


# acceptance criteria register their verdicts here; printed after the run
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {name}: {detail}")
