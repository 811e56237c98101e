"""Shared fixtures: a tiny deterministic CNN and the committed fixture paths.

Also prints one PASS/FAIL line per acceptance criterion at the end of the
run (the tests live in test_acceptance.py).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance_outcomes[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_acceptance_outcomes):
        outcome = _acceptance_outcomes[nodeid]
        label = "PASS" if outcome == "passed" else ("SKIP" if outcome == "skipped" else "FAIL")
        terminalreporter.write_line(f"[{label}] {nodeid.split('::')[-1]}")

from gaia_ood.archive import WeightArchive
from gaia_ood.graph import parse_graph
from gaia_ood.tensor import as_tensor

FIXTURE_DIR = Path(__file__).parent / "fixtures"

TINY_GRAPH_TEXT = """
input 3 8 8
classes 4
c1: conv out=6 kernel=3 pad=1 w=c1.w b=c1.b
b1: batchnorm gamma=b1.g beta=b1.b mean=b1.m var=b1.v
r1: relu
c2: conv out=6 kernel=3 pad=1 w=c2.w b=c2.b
res2: residual_add source=r1
r2: relu
p2: maxpool kernel=2 stride=2
c3: conv out=8 kernel=3 stride=1 pad=1 w=c3.w b=c3.b
r3: relu
gap: global_avg_pool
fc: linear out=4 w=fc.w b=fc.b
tap t1 r2 block1
tap t2 r3 block2
split gap
"""


def tiny_weights(rng: np.random.Generator, scale: float = 0.5) -> WeightArchive:
    def nrm(*shape, s=scale):
        return (rng.standard_normal(shape) * s).astype(np.float32)

    return WeightArchive({
        "c1.w": nrm(6, 3, 3, 3), "c1.b": nrm(6, s=0.1),
        "b1.g": (1 + nrm(6, s=0.1)), "b1.b": nrm(6, s=0.1),
        "b1.m": nrm(6, s=0.1), "b1.v": (0.5 + rng.random(6)).astype(np.float32),
        "c2.w": nrm(6, 6, 3, 3), "c2.b": nrm(6, s=0.1),
        "c3.w": nrm(8, 6, 3, 3), "c3.b": nrm(8, s=0.1),
        "fc.w": nrm(4, 8), "fc.b": nrm(4, s=0.1),
    })


@pytest.fixture(scope="session")
def tiny_graph():
    return parse_graph(TINY_GRAPH_TEXT)


@pytest.fixture()
def tiny_model(tiny_graph):
    rng = np.random.default_rng(42)
    return tiny_graph, tiny_weights(rng)


@pytest.fixture()
def tiny_batch():
    rng = np.random.default_rng(11)
    return as_tensor(rng.standard_normal((6, 3, 8, 8)).astype(np.float32))


@pytest.fixture(scope="session")
def fixture_paths():
    paths = {
        "graph": FIXTURE_DIR / "toycnn.graph",
        "weights": FIXTURE_DIR / "toycnn.gwta",
        "id_test": FIXTURE_DIR / "id_test.gwta",
        "ood_noise": FIXTURE_DIR / "ood_noise.gwta",
        "ood_texture": FIXTURE_DIR / "ood_texture.gwta",
        "manifest": FIXTURE_DIR / "manifest.json",
        "reference": FIXTURE_DIR / "reference.gwta",
    }
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        pytest.skip(f"committed fixture archives missing: {missing}")
    return paths
