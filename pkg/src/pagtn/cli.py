"""Command-line entry point: ``pagtn {featurize,train,eval,gradcheck,ringtask}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Metric rows go to stdout, logs to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .io import Checkpoint, FormatError, load_checkpoint, save_checkpoint, write_features
from .model import MODEL_KINDS, PagtnConfig, featurize, forward
from .ring_task import generate_ring_dataset, train_pair_classifier, write_pairs_csv
from .smiles import SmilesError, parse_smiles
from .training import DataError, DivergenceError, TaskSpec, TrainConfig, evaluate, load_csv, make_folds, train

log = logging.getLogger("pagtn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# regex for the metric rows printed by ``train``
METRIC_ROW_RE = r"^(?P<name>\S+)\s+(?P<metric>mae|rmse|auc)\s+(?P<mean>\d+\.\d+) ± (?P<std>\d+\.\d+)$"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def metric_row(name: str, metric: str, values) -> str:
    values = np.asarray(values, dtype=np.float64)
    return f"{name}  {metric}  {values.mean():.3f} ± {values.std():.3f}"


def _read_smiles_column(path: Path, column: str) -> list[str]:
    import csv

    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise DataError(f"column {column!r} not in {path.name}")
        return [(row[column] or "").strip() for row in reader]


def cmd_featurize(args) -> int:
    smiles = _read_smiles_column(Path(args.input), args.smiles_col)
    feats, failed = [], 0
    for k, smi in enumerate(smiles):
        try:
            feats.append(featurize(parse_smiles(smi, stereo="ignore"), args.d))
        except SmilesError as e:
            failed += 1
            log.warning("row %d: %s", k + 1, e)
    if not feats:
        log.error("no molecule could be featurized")
        return EXIT_DATA
    write_features(args.out, feats)
    log.info("wrote %d molecules to %s (%d rows failed)", len(feats), args.out, failed)
    return EXIT_OK


def _task_from_args(task: str, metric: str | None, n_targets: int) -> TaskSpec:
    kind = {"reg": "regression", "clf": "classification"}[task]
    metric = metric or ("rmse" if kind == "regression" else "auc")
    try:
        return TaskSpec(kind, metric, n_targets)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _checkpoint_path(base: str, fold: int, n_folds: int) -> Path:
    p = Path(base)
    return p if n_folds == 1 else p.with_name(f"{p.stem}.fold{fold}{p.suffix}")


def _dump_attention(path: str, dataset, params, config: PagtnConfig, limit: int) -> None:
    out = []
    for k in range(min(limit, len(dataset))):
        record: list = []
        forward(dataset.features[k], params, config, record=record)
        out.append({"smiles": dataset.samples[k].smiles, "alpha": [a.tolist() for a in record]})
    Path(path).write_text(json.dumps(out))


def cmd_train(args) -> int:
    targets = args.targets.split(",") if args.targets else None
    dataset = load_csv(args.input, args.smiles_col, targets, d=args.d)
    task = _task_from_args(args.task, args.metric, len(dataset.target_names))
    try:
        config = PagtnConfig.for_model(args.model, layers=args.layers, dim=args.dim, heads=args.heads, d=args.d, layer_norm=args.layer_norm)
    except ValueError as e:
        raise UsageError(str(e)) from None
    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, patience=args.patience, seed=args.seed)
    name = args.name or dataset.name
    history_fh = open(args.history, "w") if args.history else None
    scores = []
    try:
        for f, fold in enumerate(make_folds(len(dataset), args.folds, args.seed)):
            t0 = time.time()

            def on_epoch(rec, f=f):
                log.debug("fold %d epoch %d loss %.5f valid %.5f", f, rec["epoch"], rec["train_loss"], rec["valid_metric"])
                if history_fh:
                    history_fh.write(json.dumps({"fold": f, **rec}) + "\n")

            result = train(dataset, task, config, fold, replace(tc, seed=args.seed + f), on_epoch)
            scores.append(result.test_metric)
            print(f"fold {f}  {task.metric}  {result.test_metric:.6f}", flush=True)
            log.info("fold %d: best epoch %d, %.1fs", f, result.best_epoch, time.time() - t0)
            if args.checkpoint_out:
                meta = {
                    "input": str(args.input), "smiles_col": args.smiles_col, "targets": dataset.target_names,
                    "task": task.kind, "metric": task.metric, "base_seed": args.seed, "fold": f,
                    "test_metric": result.test_metric, "best_epoch": result.best_epoch,
                }
                save_checkpoint(
                    _checkpoint_path(args.checkpoint_out, f, args.folds),
                    Checkpoint(result.model_config, result.params, result.normalizer.mean, result.normalizer.std, args.seed + f, meta),
                )
            if args.debug_attention and f == 0:
                _dump_attention(args.debug_attention, dataset, result.params, result.model_config, args.debug_limit)
    finally:
        if history_fh:
            history_fh.close()
    print(metric_row(name, task.metric, scores), flush=True)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .training import Normalizer

    ckpt = load_checkpoint(args.checkpoint)
    if args.d is not None and args.d != ckpt.config.d:
        raise FormatError(f"incompatible feature layout: checkpoint uses d={ckpt.config.d}, got --d {args.d}")
    meta = ckpt.meta
    smiles_col = args.smiles_col or meta.get("smiles_col", "smiles")
    targets = args.targets.split(",") if args.targets else meta.get("targets")
    dataset = load_csv(args.input or meta["input"], smiles_col, targets, d=ckpt.config.d)
    task = TaskSpec(meta.get("task", "regression"), args.metric or meta.get("metric", "rmse"), len(dataset.target_names))
    if args.split == "test":
        fold = make_folds(len(dataset), meta["fold"] + 1, meta["base_seed"])[meta["fold"]]
        dataset = dataset.subset(fold.test)
    value = evaluate(dataset, ckpt.params, ckpt.config, task, Normalizer(ckpt.norm_mean, ckpt.norm_std))
    print(f"{args.split}  {task.metric}  {value:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOL, run_suite

    t0 = time.time()

    def show(r):
        log.info("%-40s max rel err %.2e over %d entries%s", r.name, r.max_rel_err, r.n_checked, "" if r.ok else "  FAIL")

    results = run_suite(seed=args.seed, log=show)
    worst = max(r.max_rel_err for r in results)
    failed = [r.name for r in results if not r.ok]
    print(f"gradcheck  cases {len(results)}  max rel err {worst:.3e}  tol {TOL:.0e}  {time.time() - t0:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_ringtask(args) -> int:
    smiles = _read_smiles_column(Path(args.input), args.smiles_col)
    graphs = []
    for smi in smiles:
        try:
            graphs.append(parse_smiles(smi, stereo="ignore"))
        except SmilesError:
            continue
    pairs = generate_ring_dataset(graphs, seed=args.seed)
    mol_ids = sorted({s.molecule for s in pairs})
    if args.max_molecules:
        mol_ids = mol_ids[: args.max_molecules]
    keep = set(mol_ids)
    remap = {m: k for k, m in enumerate(mol_ids)}
    pairs = [replace(s, molecule=remap[s.molecule]) for s in pairs if s.molecule in keep]
    if args.pairs_out:
        write_pairs_csv(args.pairs_out, pairs)
    try:
        config = PagtnConfig.for_model(args.model, layers=args.layers, dim=args.dim, heads=args.heads, d=args.d)
    except ValueError as e:
        raise UsageError(str(e)) from None
    feats = [featurize(graphs[m], config.d) for m in mol_ids]
    tc = TrainConfig(epochs=args.epochs, lr=args.lr, patience=args.patience, seed=args.seed)
    result = train_pair_classifier(feats, pairs, config, tc, split_seed=args.seed)
    print(f"ringtask  {args.model}  molecules {result.n_molecules}  pairs {result.n_pairs}  "
          f"accuracy {100 * result.accuracy:.1f}  auc {100 * result.auc:.1f}")
    return EXIT_OK


def _model_flags(p, layers=5, dim=64):
    p.add_argument("--model", choices=MODEL_KINDS, default="pagtn")
    p.add_argument("--layers", type=int, default=layers)
    p.add_argument("--dim", type=int, default=dim)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--d", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pagtn", description="Path-augmented graph transformer for molecular property prediction.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("featurize", help="write node and path feature tensors")
    p.add_argument("--input", required=True)
    p.add_argument("--smiles-col", default="smiles")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train and test over random 80:10:10 folds")
    p.add_argument("--input", required=True)
    p.add_argument("--smiles-col", default="smiles")
    p.add_argument("--targets", help="comma-separated target columns (default: last column)")
    p.add_argument("--task", choices=("reg", "clf"), default="reg")
    p.add_argument("--metric", choices=("mae", "rmse", "auc"))
    _model_flags(p)
    p.add_argument("--layer-norm", action="store_true")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=1)
    p.add_argument("--name", help="row label (default: input file stem)")
    p.add_argument("--checkpoint-out")
    p.add_argument("--history", help="write per-epoch records as JSON lines")
    p.add_argument("--debug-attention", help="dump attention matrices of the first molecules as JSON")
    p.add_argument("--debug-limit", type=int, default=5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input")
    p.add_argument("--smiles-col")
    p.add_argument("--targets")
    p.add_argument("--metric", choices=("mae", "rmse", "auc"))
    p.add_argument("--split", choices=("test", "all"), default="test")
    p.add_argument("--d", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and model")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ringtask", help="synthetic same-ring pair classification")
    p.add_argument("--input", required=True)
    p.add_argument("--smiles-col", default="smiles")
    _model_flags(p, layers=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--max-molecules", type=int, default=1500)
    p.add_argument("--pairs-out")
    p.set_defaults(func=cmd_ringtask)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as e:
        log.error("%s", e)
        return EXIT_USAGE
    except (DataError, SmilesError, FormatError, FileNotFoundError, KeyError) as e:
        log.error("%s", e)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError) as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
