"""Command line front end.

Subcommands compose through files: gen-data makes .fvecs datasets, train
fits a model, encode compresses a dataset against it, search scans codes,
eval scores results against ground truth, analyze reports code statistics.
Every run writes a manifest.json recording the resolved parameters, and
report-producing commands render a PNG next to each CSV.

Exit codes: 0 success, 1 usage error, 2 data or file-format error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import error_vs_stages, mutual_info_matrix, write_error_vs_stages_csv
from .clustering import KMeansConfig, TransitionSchedule
from .dataio import (
    gen_synthetic,
    read_codes,
    read_model,
    read_vecs,
    write_codes,
    write_model,
    write_vecs,
)
from .encode import build_cross_tables, encode_dataset, eps_quantizer_fit
from .model import CodeMatrix, QuantModel
from .search import ground_truth, recall_at_r, search_batch
from .train import EpsRegularization, TrainConfig, grvq_train, pq_train, rvq_train, train_eps_eliminated

DATA_DIR_ENV = "GRVQ_DATA_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve_input(path: str) -> Path:
    """Resolve an input path, falling back to $GRVQ_DATA_DIR for relative names."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    if base:
        candidate = Path(base) / p
        if candidate.exists():
            return candidate
    return p


def _load_vecs(path: str, limit=None) -> np.ndarray:
    return read_vecs(_resolve_input(path), limit=limit)


def _write_manifest(out_dir: Path, subcommand: str, args, inputs, outputs, seconds: float):
    params = {
        k: v
        for k, v in vars(args).items()
        if k not in ("func", "subcommand") and v is not None and not callable(v)
    }
    manifest = {
        "tool": "grvq",
        "version": __version__,
        "subcommand": subcommand,
        "params": params,
        "inputs": [str(Path(p).resolve()) for p in inputs],
        "outputs": [str(Path(p).resolve()) for p in outputs],
        "wall_time_s": seconds,
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_eps(value: str):
    if value == "store":
        return ("stored", None)
    if value == "eliminate":
        return ("eliminated", None)
    if value.startswith("quant:"):
        try:
            bits = int(value.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad --eps value {value!r}; expected quant:BITS") from None
        if not 1 <= bits <= 16:
            raise UsageError("--eps quant bits must be in [1, 16]")
        return ("quantized", bits)
    raise UsageError(f"bad --eps value {value!r}; expected store, quant:BITS or eliminate")


def cmd_gen_data(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    data = gen_synthetic(args.n, args.d, args.clusters, args.correlation, args.seed)
    target = out / "data.fvecs"
    write_vecs(target, data, "fvecs")
    _write_manifest(out, "gen-data", args, [], [target], time.perf_counter() - t0)
    return 0


def cmd_train(args) -> int:
    from . import plots

    t0 = time.perf_counter()
    method = args.method
    if method in ("pq", "kmeans") and args.eps is not None:
        raise UsageError(f"--eps does not apply to method {method}")
    if method == "kmeans":
        if args.M not in (None, 1):
            raise UsageError("method kmeans implies --M 1")
        args.M = 1
    if args.M is None:
        raise UsageError(f"method {method} requires --M")
    if (args.lam_step is not None or args.lam_max is not None) and args.eps != "eliminate":
        raise UsageError("--lam-step/--lam-max require --eps eliminate")
    eps_mode, eps_bits = _parse_eps(args.eps) if args.eps is not None else ("stored", None)
    if eps_mode == "eliminated" and method != "grvq":
        raise UsageError("--eps eliminate requires --method grvq")

    data = _load_vecs(args.data, args.limit)
    cfg = TrainConfig(
        m_codebooks=args.M,
        k_codewords=args.K,
        sweeps=args.sweeps,
        pick_order=args.pick_order,
        beam_width=args.beam,
        seed=args.seed,
        schedule=TransitionSchedule(steps=args.schedule_steps),
        kmeans=KMeansConfig(seed=args.seed, workers=args.workers),
    )

    if method == "grvq" and eps_mode == "eliminated":
        reg = EpsRegularization(
            lam_step=args.lam_step if args.lam_step is not None else 0.01,
            lam_max=args.lam_max if args.lam_max is not None else 1.0,
        )
        from dataclasses import replace

        model, codes, report = train_eps_eliminated(
            data, replace(cfg, eps_regularization=reg)
        )
    elif method == "grvq":
        model, codes, report = grvq_train(data, cfg)
    elif method == "rvq":
        model, codes, report = rvq_train(data, args.M, args.K, cfg)
    elif method == "pq":
        model, codes, report = pq_train(data, args.M, args.K, cfg)
    else:
        model, codes, report = rvq_train(data, 1, args.K, cfg)

    if eps_bits is not None:
        if codes.eps is None:
            raise UsageError(f"--eps quant does not apply to method {method}")
        quantizer = eps_quantizer_fit(codes.eps, eps_bits, seed=args.seed)
        model = QuantModel(
            model.codebooks,
            eps_mode="quantized",
            eps_quantizer=quantizer,
            variance_ordered=model.variance_ordered,
            seed=model.seed,
        )
        codes = CodeMatrix(codes.codes, eps=quantizer.dequantize(quantizer.quantize(codes.eps)))

    out = _out_dir(args)
    model_path = out / "model.bin"
    codes_path = out / "codes.bin"
    report_path = out / "training_report.csv"
    figure_path = out / "training_report.png"
    write_model(model_path, model)
    write_codes(codes_path, codes, model)
    report.write_csv(report_path)
    plots.save_training_curves(report, figure_path)
    _write_manifest(
        out,
        "train",
        args,
        [_resolve_input(args.data)],
        [model_path, codes_path, report_path, figure_path],
        time.perf_counter() - t0,
    )
    return 0


def cmd_encode(args) -> int:
    t0 = time.perf_counter()
    model = read_model(_resolve_input(args.model))
    data = _load_vecs(args.data, args.limit)
    codes = encode_dataset(data, model, width=args.beam)
    out = _out_dir(args)
    codes_path = out / "codes.bin"
    write_codes(codes_path, codes, model)
    _write_manifest(
        out,
        "encode",
        args,
        [_resolve_input(args.model), _resolve_input(args.data)],
        [codes_path],
        time.perf_counter() - t0,
    )
    return 0


def cmd_search(args) -> int:
    t0 = time.perf_counter()
    model = read_model(_resolve_input(args.model))
    codes = read_codes(_resolve_input(args.codes), model)
    queries = _load_vecs(args.queries, args.limit)
    result = search_batch(queries, codes, model, args.R)
    out = _out_dir(args)
    results_path = out / "results.csv"
    with open(results_path, "w", newline="") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        writer.writerow(["query", "rank", "id", "distance"])
        for qi in range(result.ids.shape[0]):
            for rank in range(result.ids.shape[1]):
                writer.writerow(
                    [qi, rank + 1, int(result.ids[qi, rank]), repr(float(result.distances[qi, rank]))]
                )
    _write_manifest(
        out,
        "search",
        args,
        [_resolve_input(args.model), _resolve_input(args.codes), _resolve_input(args.queries)],
        [results_path],
        time.perf_counter() - t0,
    )
    return 0


def _read_results_csv(path) -> np.ndarray:
    import csv as _csv

    rows = {}
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["query", "rank", "id"]:
            raise ValueError(f"{path}: not a search results file")
        for row in reader:
            rows.setdefault(int(row[0]), []).append((int(row[1]), int(row[2])))
    if not rows:
        raise ValueError(f"{path}: no result rows")
    queries = sorted(rows)
    width = min(len(v) for v in rows.values())
    out = np.empty((len(queries), width), dtype=np.int64)
    for qi, q in enumerate(queries):
        ranked = sorted(rows[q])[:width]
        out[qi] = [ident for _, ident in ranked]
    return out


def cmd_eval(args) -> int:
    from . import plots

    t0 = time.perf_counter()
    results = _read_results_csv(_resolve_input(args.results))
    inputs = [_resolve_input(args.results)]
    if args.truth is not None:
        truth = read_vecs(_resolve_input(args.truth))
        inputs.append(_resolve_input(args.truth))
    else:
        if args.database is None or args.queries is None:
            raise UsageError("eval needs --truth, or --database plus --queries")
        database = _load_vecs(args.database)
        queries = _load_vecs(args.queries, args.limit)
        if queries.shape[0] != results.shape[0]:
            raise ValueError("query count does not match the results file")
        truth = ground_truth(queries, database, 1)
        inputs += [_resolve_input(args.database), _resolve_input(args.queries)]
    if truth.shape[0] != results.shape[0]:
        raise ValueError("truth and results disagree on query count")

    r_values = sorted({r for r in args.R if 1 <= r <= results.shape[1]})
    if not r_values:
        raise ValueError(f"no requested R fits the result width {results.shape[1]}")
    points = [(r, recall_at_r(results, truth, r)) for r in r_values]
    out = _out_dir(args)
    recall_path = out / "recall.csv"
    figure_path = out / "recall.png"
    with open(recall_path, "w", newline="") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        writer.writerow(["R", "recall"])
        for r, value in points:
            writer.writerow([r, repr(float(value))])
    plots.save_recall_curve(points, figure_path)
    _write_manifest(
        out, "eval", args, inputs, [recall_path, figure_path], time.perf_counter() - t0
    )
    return 0


def cmd_analyze(args) -> int:
    from . import plots

    t0 = time.perf_counter()
    model = read_model(_resolve_input(args.model)) if args.model else None
    codes = read_codes(_resolve_input(args.codes), model)
    out = _out_dir(args)
    k = model.k_codewords if model is not None else None
    matrix = mutual_info_matrix(codes, k)
    mi_path = out / "mutual_info.csv"
    mi_figure = out / "mutual_info.png"
    matrix.write_csv(mi_path)
    plots.save_mutual_info_heatmap(matrix, mi_figure)
    inputs = [_resolve_input(args.codes)]
    outputs = [mi_path, mi_figure]
    if args.model:
        inputs.append(_resolve_input(args.model))
    if args.data is not None:
        if model is None:
            raise UsageError("error-vs-stages needs --model along with --data")
        data = _load_vecs(args.data, args.limit)
        pairs = error_vs_stages(data, model, codes)
        stage_path = out / "error_vs_stages.csv"
        stage_figure = out / "error_vs_stages.png"
        write_error_vs_stages_csv(pairs, stage_path)
        plots.save_error_vs_stages(pairs, stage_figure)
        inputs.append(_resolve_input(args.data))
        outputs += [stage_path, stage_figure]
    _write_manifest(out, "analyze", args, inputs, outputs, time.perf_counter() - t0)
    return 0


def cmd_rerun(args) -> int:
    with open(_resolve_input(args.manifest)) as fh:
        manifest = json.load(fh)
    sub = manifest.get("subcommand")
    params = dict(manifest.get("params", {}))
    if args.out is not None:
        params["out"] = args.out
    argv = [sub]
    for key, value in params.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, list):
            argv += [flag, ",".join(str(v) for v in value)]
        else:
            argv += [flag, str(value)]
    return main(argv)


def _int_list(text: str):
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grvq", description=__doc__)
    parser.add_argument("--version", action="version", version=f"grvq {__version__}")
    sub = parser.add_subparsers(dest="subcommand")

    p = sub.add_parser("gen-data", help="synthesize a correlated Gaussian-mixture .fvecs dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--clusters", type=int, default=1)
    p.add_argument("--correlation", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a model and encode the training data")
    p.add_argument("--method", choices=("grvq", "rvq", "pq", "kmeans"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--M", type=int, default=None, help="number of codebooks")
    p.add_argument("--K", type=int, required=True, help="codewords per codebook")
    p.add_argument("--sweeps", type=int, default=8)
    p.add_argument("--beam", type=int, default=10, help="beam width L")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", default=None, help="store, quant:BITS or eliminate")
    p.add_argument("--schedule-steps", type=int, default=10)
    p.add_argument("--pick-order", choices=("random", "sequential"), default="random")
    p.add_argument("--lam-step", type=float, default=None)
    p.add_argument("--lam-max", type=float, default=None)
    p.add_argument("--workers", type=int, default=max(1, os.cpu_count() or 1))
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode a dataset against a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("search", help="approximate nearest neighbors over encoded vectors")
    p.add_argument("--model", required=True)
    p.add_argument("--codes", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="recall of search results against ground truth")
    p.add_argument("--results", required=True)
    p.add_argument("--truth", default=None, help="ivecs ground-truth ids")
    p.add_argument("--database", default=None, help="fvecs database to compute truth from")
    p.add_argument("--queries", default=None)
    p.add_argument("--R", type=_int_list, default=[1, 10, 100])
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="entropy/MI matrix and error-vs-stages reports")
    p.add_argument("--codes", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("rerun", help="re-execute a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("a subcommand is required (see --help)")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
