"""``homecast`` command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 input data failed
validation, 3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from . import forest as rf
from . import pipeline as pl
from .config import RunConfig, header_comment, resolve_seed
from .data import (DataValidationError, Dataset, read_checkins, read_records, write_checkins,
                   write_predictions, write_records)
from .features import cluster_checkins, extract_dataset, group_by_user, label_homes
from .nn import NumericalError
from .preprocess import NormParams, apply_norm, fit_norm
from .synthetic import (GeneratorConfig, InfeasibleLayoutError, bayes_gap_report, generate,
                        read_truth, write_truth)

log = logging.getLogger("homecast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="homecast", description="Two-phase home-location prediction.")
    parser.add_argument("--version", action="version", version=f"homecast {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic check-ins")
    p.add_argument("--gen-config", "--generator", dest="gen_config", type=Path,
                   help="JSON generator configuration")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--report", type=Path, help="also write a feature-separation report (JSON)")

    p = sub.add_parser("cluster", parents=[common], help="per-user DBSCAN of check-ins")
    p.add_argument("--checkins", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--eps-m", type=float)
    p.add_argument("--min-pts", type=int)

    p = sub.add_parser("features", parents=[common], help="build location records")
    p.add_argument("--checkins", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True, help="cluster label CSV from `cluster`")
    p.add_argument("--truth", type=Path, help="true home points (user_id,home_lat,home_lon)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train-forest", parents=[common], help="train the phase-1 forest")
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-trees", type=int)

    p = sub.add_parser("filter", parents=[common], help="apply the phase-1 filter")
    p.add_argument("--forest", type=Path, required=True)
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--curve", type=Path, help="write recall/selected-fraction vs threshold CSV")

    p = sub.add_parser("fit", parents=[common], help="fit the full pipeline")
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("predict", parents=[common], help="predict homes with a fitted artifact")
    p.add_argument("--artifact", type=Path, required=True)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--gate", type=float, help="override the DNN-C gating threshold")

    p = sub.add_parser("sweep", parents=[common], help="DNN-C gate sweep on labelled records")
    p.add_argument("--artifact", type=Path, required=True)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--thresholds", default="0:1:0.01")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", parents=[common], help="k-fold cross-validation")
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--thresholds", default="0:1:0.01")

    p = sub.add_parser("ablate", parents=[common], help="component ablation")
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sweep-dropout", parents=[common], help="DNN-R accuracy vs dropout")
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--rates", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sweep-epochs", parents=[common], help="DNN-R accuracy vs epochs")
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--epochs", default="1,5,10,20,30,50,75,100")
    p.add_argument("--out", type=Path, required=True)
    return parser


def _resolve_config(args) -> RunConfig:
    raw = json.loads(args.config.read_text(encoding="utf-8")) if args.config else {}
    cfg = RunConfig.from_dict(raw)
    cfg = cfg.with_seed(resolve_seed(args.seed, raw.get("seed")))
    log.info("resolved config %s", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


def _header(tool: str, payload: dict) -> str:
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]
    return header_comment(tool, digest)


def _read_labels(path: Path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = [l.rstrip("\n") for l in fh if not l.startswith("#")]
    if not lines or lines[0] != "row,user_id,cluster_id":
        raise DataValidationError(f"{path}: expected header row,user_id,cluster_id")
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3 or int(parts[0]) != n - 2:
            raise DataValidationError(f"{path}: malformed label row {n - 1}")
        rows.append(int(parts[2]))
    return np.array(rows, dtype=int)


def _cmd_synth(args) -> int:
    raw = json.loads(args.gen_config.read_text(encoding="utf-8")) if args.gen_config else {}
    gen = GeneratorConfig.from_dict(raw)
    seed = resolve_seed(args.seed, raw.get("seed"), gen.seed)
    gen = GeneratorConfig.from_dict({**gen.to_dict(), "seed": seed})
    log.info("resolved generator config %s", json.dumps(gen.to_dict(), sort_keys=True))
    checkins, truth = generate(gen)
    header = _header("synth", gen.to_dict())
    write_checkins(checkins, args.out, header)
    write_truth(truth, args.truth, header)
    if args.report:
        cfg = RunConfig()
        labels = cluster_checkins(checkins, cfg.eps_m, cfg.min_pts)
        homes = label_homes(group_by_user(checkins, labels), truth)
        report = bayes_gap_report(extract_dataset(checkins, labels, homes))
        args.report.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(checkins)} check-ins for {len(truth)} users to {args.out}")
    return EXIT_OK


def _cmd_cluster(args) -> int:
    cfg = _resolve_config(args)
    eps = args.eps_m if args.eps_m is not None else cfg.eps_m
    min_pts = args.min_pts if args.min_pts is not None else cfg.min_pts
    checkins = read_checkins(args.checkins)
    labels = cluster_checkins(checkins, eps, min_pts)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {_header('cluster', cfg.to_dict())} eps_m={eps} min_pts={min_pts}\n")
        fh.write("row,user_id,cluster_id\n")
        for i, (c, lab) in enumerate(zip(checkins, labels)):
            fh.write(f"{i},{c.user_id},{lab}\n")
    print(f"clustered {len(checkins)} check-ins into {len(set(zip((c.user_id for c in checkins), labels)))} locations")
    return EXIT_OK


def _cmd_features(args) -> int:
    cfg = _resolve_config(args)
    checkins = read_checkins(args.checkins)
    labels = _read_labels(args.labels)
    if len(labels) != len(checkins):
        raise DataValidationError("label file and check-in file differ in length")
    homes = {}
    if args.truth:
        homes = label_homes(group_by_user(checkins, labels), read_truth(args.truth))
    ds = extract_dataset(checkins, labels, homes, cfg.pagerank_damping, cfg.pagerank_tol,
                         cfg.pagerank_max_iter)
    write_records(ds, args.out, _header("features", cfg.to_dict()))
    print(f"wrote {len(ds)} records for {len(ds.users)} users to {args.out}")
    return EXIT_OK


def _cmd_train_forest(args) -> int:
    cfg = _resolve_config(args)
    n_trees = args.n_trees if args.n_trees is not None else cfg.n_trees
    ds = read_records(args.records)
    norm = fit_norm(ds)
    dn = apply_norm(norm, ds)
    model = rf.train_forest(dn.feature_matrix(), dn.labels(), n_trees,
                            pl.stage_seed(cfg.seed, pl.STAGE_FOREST), cfg.feature_subset_size, args.jobs)
    doc = {"format": "homecast-forest/1", "norm": norm.to_dict(), "forest": model.to_dict()}
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {_header('train-forest', cfg.to_dict())}\n")
        fh.write(json.dumps(doc, sort_keys=True) + "\n")
    print(f"trained {model.n_trees} trees on {len(ds)} records")
    return EXIT_OK


def _load_json_doc(path: Path) -> dict:
    lines = path.read_text(encoding="utf-8").splitlines()
    return json.loads("\n".join(l for l in lines if not l.startswith("#")))


def _cmd_filter(args) -> int:
    cfg = _resolve_config(args)
    threshold = args.threshold if args.threshold is not None else cfg.phase1_threshold
    doc = _load_json_doc(args.forest)
    if doc.get("format") != "homecast-forest/1":
        raise DataValidationError(f"{args.forest}: not a forest model")
    model = rf.ForestModel.from_dict(doc["forest"])
    norm = NormParams.from_dict(doc["norm"])
    ds = read_records(args.records)
    votes = rf.vote_fractions(model, apply_norm(norm, ds).feature_matrix())
    keep = votes >= threshold
    selected = Dataset(r for r, k in zip(ds.records, keep) if k)
    stats = rf.filter_stats([r.user_id for r in ds.records], ds.labels(), keep)
    write_records(selected, args.out, _header("filter", cfg.to_dict()))
    if args.curve:
        grid = [i / model.n_trees for i in range(model.n_trees + 1)]
        rows = ev.phase1_curve(model, ds, grid, votes)
        with open(args.curve, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("threshold,recall,selected_fraction\n")
            for t, r, s in rows:
                fh.write(f"{t!r},{r!r},{s!r}\n")
    print(f"recall {stats.recall:.4f}; kept {stats.n_selected}/{stats.n_records} records "
          f"({stats.mean_records_per_user:.2f} -> {stats.mean_selected_per_user:.2f} per user); "
          f"{len(stats.empty_users)} users lost every record")
    return EXIT_OK


def _cmd_fit(args) -> int:
    cfg = _resolve_config(args)
    ds = read_records(args.records)
    timings: dict = {}
    art = pl.fit(ds, cfg, jobs=args.jobs, timings=timings)
    art.save(args.out, _header("fit", cfg.to_dict()))
    print("trained pipeline; seconds: " + ", ".join(f"{k} {v:.2f}" for k, v in timings.items()))
    return EXIT_OK


def _cmd_predict(args) -> int:
    art = pl.PipelineArtifact.load(args.artifact)
    ds = pl.normalize(art, read_records(args.inp))
    preds = pl.predict_all(art, ds, args.gate)
    write_predictions(preds, args.out, _header("predict", art.config))
    n_rep = sum(p.reported for p in preds)
    print(f"predicted {len(preds)} users, {n_rep} reported")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    art = pl.PipelineArtifact.load(args.artifact)
    ds = pl.normalize(art, read_records(args.inp))
    curve = pl.sweep_gate(art, ds, pl.parse_grid(args.thresholds))
    ev.write_curve(curve, args.out, _header("sweep", art.config))
    for p in curve[:: max(1, len(curve) // 10)]:
        print(f"threshold {p.threshold:.2f}: reported {p.reported_fraction:.3f}, accuracy {p.subset_accuracy:.3f}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    ds = read_records(args.records)
    report = ev.cross_validate(ds, cfg, pl.parse_grid(args.thresholds), args.jobs)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    header = _header("evaluate", cfg.to_dict())
    ev.write_report(report, args.out_dir / "folds.csv", header)
    ev.write_curve(report.pooled_curve, args.out_dir / "gate_curve.csv", header)
    ev.write_curve(report.mean_curve, args.out_dir / "gate_curve_fold_mean.csv", header)
    write_predictions(report.predictions, args.out_dir / "predictions.csv", header)
    print(report.table())
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    rows = ev.ablate(read_records(args.records), cfg, args.jobs)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {_header('ablate', cfg.to_dict())}\n")
        fh.write("method,accuracy,reported_fraction,subset_accuracy,train_seconds\n")
        for r in rows:
            fh.write(f"{r.method},{r.accuracy!r},{r.reported_fraction!r},{r.subset_accuracy!r},"
                     f"{r.train_seconds:.3f}\n")
    print(ev.ablation_table(rows))
    return EXIT_OK


def _cmd_sweep_dnnr(args, kind: str) -> int:
    cfg = _resolve_config(args)
    ds = read_records(args.records)
    if kind == "dropout":
        values = pl.parse_grid(args.rates)
        points = ev.sweep_dropout(ds, values, cfg, args.jobs)
    else:
        values = [int(v) for v in pl.parse_grid(args.epochs)]
        points = ev.sweep_epochs(ds, values, cfg, args.jobs)
    ev.write_sweep(points, kind, args.out, _header(f"sweep-{kind}", cfg.to_dict()))
    for p in points:
        print(f"{kind} {p.value:g}: accuracy {p.accuracy:.4f}")
    return EXIT_OK


COMMANDS = {
    "synth": _cmd_synth,
    "cluster": _cmd_cluster,
    "features": _cmd_features,
    "train-forest": _cmd_train_forest,
    "filter": _cmd_filter,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "sweep": _cmd_sweep,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "sweep-dropout": lambda a: _cmd_sweep_dnnr(a, "dropout"),
    "sweep-epochs": lambda a: _cmd_sweep_dnnr(a, "epochs"),
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"homecast: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"homecast: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataValidationError, pl.PipelineError, InfeasibleLayoutError, FileNotFoundError) as exc:
        print(f"homecast: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"homecast: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
