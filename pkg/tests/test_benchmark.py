"""Benchmark sweep cells, determinism, and per-cell error isolation."""

import numpy as np
import pytest

from gaia_ood.archive import SampleBatch
from gaia_ood.benchmark import format_report, run_benchmark
from gaia_ood.errors import ConfigurationError
from gaia_ood.tensor import as_tensor


@pytest.fixture()
def batches():
    rng = np.random.default_rng(0)
    id_batch = SampleBatch(as_tensor(rng.standard_normal((10, 3, 8, 8)).astype(np.float32)), source="id")
    ood = SampleBatch(as_tensor((rng.random((8, 3, 8, 8)) * 4 - 2).astype(np.float32)), source="noise")
    return id_batch, {"noise": ood}


def test_single_method_single_ood_gives_one_cell(tiny_model, batches):
    graph, weights = tiny_model
    id_batch, oods = batches
    report = run_benchmark(graph, weights, id_batch, oods, ["msp"])
    assert len(report["cells"]) == 1
    cell = report["cells"][0]
    assert cell["method"] == "msp" and cell["dataset"] == "noise"
    assert 0.0 <= cell["auroc"] <= 1.0 and 0.0 <= cell["fpr95"] <= 1.0


def test_grid_expands_for_gradient_methods(tiny_model, batches):
    graph, weights = tiny_model
    id_batch, oods = batches
    report = run_benchmark(
        graph, weights, id_batch, oods, ["gaia-z", "energy"],
        block_subsets=[("block1",), ("block1", "block2")], ps=(1.0, 2.0))
    gaia_cells = [c for c in report["cells"] if c["method"] == "gaia-z"]
    energy_cells = [c for c in report["cells"] if c["method"] == "energy"]
    assert len(gaia_cells) == 4  # 2 subsets x 2 norms
    assert len(energy_cells) == 1


def test_rerun_is_byte_identical(tiny_model, batches, tmp_path):
    graph, weights = tiny_model
    id_batch, oods = batches
    kwargs = dict(block_subsets=[("block1", "block2")], ps=(2.0,))
    r1 = run_benchmark(graph, weights, id_batch, oods, ["gaia-z", "gaia-a", "msp"], **kwargs)
    r2 = run_benchmark(graph, weights, id_batch, oods, ["gaia-z", "gaia-a", "msp"], **kwargs)
    assert format_report(r1) == format_report(r2)


def test_failing_cell_recorded_and_others_proceed(tiny_model, batches):
    graph, weights = tiny_model
    id_batch, oods = batches
    report = run_benchmark(graph, weights, id_batch, oods, ["gaia-z", "msp"],
                           block_subsets=[("doesnotexist",)])
    errored = [c for c in report["cells"] if "error" in c]
    fine = [c for c in report["cells"] if "error" not in c]
    assert len(errored) == 1 and errored[0]["method"] == "gaia-z"
    assert len(fine) == 1 and fine[0]["method"] == "msp"


def test_score_files_written(tiny_model, batches, tmp_path):
    graph, weights = tiny_model
    id_batch, oods = batches
    run_benchmark(graph, weights, id_batch, oods, ["msp"], scores_dir=tmp_path)
    files = list(tmp_path.glob("scores_*.csv"))
    assert len(files) == 1
    from gaia_ood.metrics import ScoreSet

    sset = ScoreSet.from_csv(files[0])
    assert len(sset) == 18  # 10 ID + 8 OOD rows


def test_empty_method_list_rejected(tiny_model, batches):
    graph, weights = tiny_model
    id_batch, oods = batches
    with pytest.raises(ConfigurationError):
        run_benchmark(graph, weights, id_batch, oods, [])
