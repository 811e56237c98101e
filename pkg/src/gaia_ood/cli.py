"""Command-line surface: score, eval, sweep, gradcheck, inspect.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 data
error. Every flag can also be set through the environment with a ``GAIA_``
prefix (the explicit flag wins), e.g. ``GAIA_METHOD=gaia-a``.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .archive import MAGIC, load_dataset, load_weights, read_archive
from .baselines import score_energy, score_msp
from .benchmark import run_benchmark, write_report
from .errors import ConfigurationError, DataError, GaiaError, UsageError
from .gradcheck import run_gradcheck
from .graph import load_graph, plain_forward
from .metrics import ScoreSet, evaluate_scores
from .scoring import ScorerConfig, score_batch
from .tensor import Tensor

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3

CLI_METHODS = ("gaia-z", "gaia-a", "msp", "energy")


def _env(name: str, default):
    return os.environ.get("GAIA_" + name.upper().replace("-", "_"), default)


def _split_list(value: str) -> list[str]:
    return [v for v in value.replace(",", " ").split() if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaia", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("score", help="score a dataset archive with one method")
    sc.add_argument("--model", default=_env("model", None), required=_env("model", None) is None)
    sc.add_argument("--weights", default=_env("weights", None), required=_env("weights", None) is None)
    sc.add_argument("--data", default=_env("data", None), required=_env("data", None) is None)
    sc.add_argument("--method", default=_env("method", "gaia-z"))
    sc.add_argument("--taps", default=_env("taps", "block3,block4"),
                    help="comma-separated tap ids or block labels")
    sc.add_argument("--tau", type=float, default=float(_env("tau", "0.0")))
    sc.add_argument("--p", type=float, default=float(_env("p", "2.0")))
    sc.add_argument("--fusion", default=_env("fusion", "two_stage"))
    sc.add_argument("--out", default=_env("out", None), required=_env("out", None) is None)
    sc.add_argument("--batch-size", type=int, default=int(_env("batch_size", "32")))
    sc.add_argument("--origin", default=_env("origin", "ID"), choices=["ID", "OOD"])
    sc.add_argument("--workers", type=int, default=int(_env("workers", "1")))

    ev = sub.add_parser("eval", help="compute FPR95/AUROC from score files")
    ev.add_argument("--id", dest="id_file", default=_env("id", None),
                    required=_env("id", None) is None)
    ev.add_argument("--ood", dest="ood_files", action="append",
                    default=None, help="repeatable")
    ev.add_argument("--out", default=_env("out", None))

    sw = sub.add_parser("sweep", help="benchmark methods x blocks x norms")
    sw.add_argument("--model", required=True)
    sw.add_argument("--weights", required=True)
    sw.add_argument("--id", dest="id_data", required=True)
    sw.add_argument("--ood", dest="ood_data", action="append", required=True)
    sw.add_argument("--methods", default="gaia-z,gaia-a,msp,energy")
    sw.add_argument("--blocks", action="append", default=None,
                    help="repeatable block subset, e.g. --blocks block3,block4")
    sw.add_argument("--p", default="2")
    sw.add_argument("--fusion", default="two_stage")
    sw.add_argument("--tau", type=float, default=0.0)
    sw.add_argument("--out", required=True)
    sw.add_argument("--scores-dir", default=None)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    gc.add_argument("--seed", type=int, default=int(_env("seed", "0")))
    gc.add_argument("--trials", type=int, default=int(_env("trials", "20")))

    ins = sub.add_parser("inspect", help="list archive tensors or graph layers")
    ins.add_argument("--file", required=True)
    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_score(args) -> int:
    if args.method not in CLI_METHODS:
        raise ConfigurationError(
            f"unknown method {args.method!r}; valid methods: {', '.join(CLI_METHODS)}"
        )
    if args.batch_size < 1:
        raise ConfigurationError(f"--batch-size must be >= 1, got {args.batch_size}")
    if args.workers < 1:
        raise ConfigurationError(f"--workers must be >= 1, got {args.workers}")
    graph = load_graph(args.model)
    weights = load_weights(args.weights)
    batch = load_dataset(args.data)

    cfg = None
    if args.method == "gaia-z":
        cfg = ScorerConfig(method="gaia_z", taps=tuple(_split_list(args.taps)),
                           tau=args.tau, p=args.p)
    elif args.method == "gaia-a":
        cfg = ScorerConfig(method="gaia_a", taps=tuple(_split_list(args.taps)),
                           p=args.p, fusion=args.fusion)
    if cfg is not None:
        cfg.validate()

    chunks = [
        Tensor(batch.images.data[start : start + args.batch_size].copy())
        for start in range(0, len(batch), args.batch_size)
    ]

    def score_chunk(images: Tensor) -> np.ndarray:
        if cfg is None:
            logits = plain_forward(graph, weights, images).data
            return score_msp(logits) if args.method == "msp" else score_energy(logits)
        return score_batch(graph, weights, images, cfg).scores

    if args.workers == 1:
        parts = [score_chunk(c) for c in chunks]
    else:
        # bounded pool; map() preserves input order for the single writer below
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            parts = list(pool.map(score_chunk, chunks))
    scores = np.concatenate(parts) if parts else np.empty(0)

    out = ScoreSet()
    out.add_batch(scores, args.origin, batch.source, args.method,
                  ids=[str(i) for i in range(len(batch))])
    out.to_csv(args.out)
    print(f"wrote {len(out)} scores to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.ood_files:
        raise ConfigurationError("at least one --ood score file is required")
    id_set = ScoreSet.from_csv(args.id_file)
    id_scores = id_set.scores("ID")
    if id_scores.size == 0:
        raise DataError(f"{args.id_file}: no ID-origin records")

    rows = []
    for path in args.ood_files:
        ood_set = ScoreSet.from_csv(path)
        ood_scores = ood_set.scores("OOD")
        if ood_scores.size == 0:
            raise DataError(f"{path}: no OOD-origin records")
        m = evaluate_scores(id_scores, ood_scores)
        dataset = ood_set.records[0].dataset
        method = ood_set.records[0].method
        rows.append((dataset, method, m))

    lines = [f"{'dataset':<20} {'method':<10} {'fpr95':>8} {'auroc':>8} {'threshold':>12} {'n_id':>6} {'n_ood':>6}"]
    for dataset, method, m in rows:
        lines.append(
            f"{dataset:<20} {method:<10} {m.fpr95:>8.4f} {m.auroc:>8.4f} "
            f"{m.threshold:>12.6g} {m.n_id:>6} {m.n_ood:>6}"
        )
    avg_fpr = float(np.mean([m.fpr95 for _, _, m in rows]))
    avg_auc = float(np.mean([m.auroc for _, _, m in rows]))
    lines.append(f"{'average':<20} {'-':<10} {avg_fpr:>8.4f} {avg_auc:>8.4f}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_sweep(args) -> int:
    graph = load_graph(args.model)
    weights = load_weights(args.weights)
    id_batch = load_dataset(args.id_data)
    ood_batches = {}
    for path in args.ood_data:
        b = load_dataset(path)
        ood_batches[b.source] = b
    methods = _split_list(args.methods)
    blocks = [tuple(_split_list(b)) for b in args.blocks] if args.blocks else None
    ps = [float(p) for p in _split_list(args.p)]
    report = run_benchmark(graph, weights, id_batch, ood_batches, methods,
                           block_subsets=blocks, ps=ps, fusion=args.fusion,
                           tau=args.tau, scores_dir=args.scores_dir,
                           id_name=id_batch.source)
    write_report(report, args.out)
    n_err = sum(1 for c in report["cells"] if "error" in c)
    print(f"wrote {len(report['cells'])} cells to {args.out}" +
          (f" ({n_err} failed)" if n_err else ""))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(trials=args.trials, seed=args.seed)
    print(
        f"gradcheck: {report.checks} checks over {report.trials} graphs, "
        f"{report.skipped} skipped (non-smooth), max error {report.max_error:.3e}"
    )
    if report.failures:
        for f in report.failures:
            print(
                f"FAIL trial {f.trial} tap {f.tap_id} op {f.op_kind} element {f.element}: "
                f"analytic {f.analytic:.6g} vs finite-diff {f.finite_diff:.6g} "
                f"(error {f.error:.3e})",
                file=sys.stderr,
            )
        return EXIT_CHECK_FAILED
    print("all gradients within tolerance")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.file)
    try:
        head = path.open("rb").read(4)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if head == MAGIC:
        tensors = read_archive(path)
        for name, arr in tensors.items():
            print(f"{name}  {arr.dtype}  {list(arr.shape)}")
        print(f"{len(tensors)} tensors")
        return EXIT_OK
    try:
        graph = load_graph(path)
    except (ConfigurationError, DataError) as e:
        raise DataError(f"{path} is neither a GWTA archive nor a readable graph: {e}") from e
    for i, layer in enumerate(graph.layers):
        marks = []
        for t in graph.taps:
            if t.layer_index == i:
                marks.append(f"tap {t.tap_id} ({t.block_label})")
        if i == graph.split_index:
            marks.append("classifier starts here")
        suffix = ("   # " + "; ".join(marks)) if marks else ""
        shape = graph.activation_shapes[i]
        print(f"{i:3d}  {layer.name:<14} {layer.kind:<16} -> {shape}{suffix}")
    print(f"input {graph.input_shape}, classes {graph.num_classes}, "
          f"{len(graph.layers)} layers, split at {graph.split_index}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "score": cmd_score,
        "eval": cmd_eval,
        "sweep": cmd_sweep,
        "gradcheck": cmd_gradcheck,
        "inspect": cmd_inspect,
    }
    try:
        return handlers[args.command](args)
    except (ConfigurationError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except GaiaError as e:  # pragma: no cover - safety net
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
