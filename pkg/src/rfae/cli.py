"""``rfae`` command line: gen-tree, fit, transform, evaluate, plot.

Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import persistence
from .dataset import (DatasetError, SplitSpec, add_noise_features, generate_artificial_tree,
                      load_csv, save_csv, stratified_split)
from .evaluation import knn_accuracy_curve, pairwise_distances, sia
from .model import RFAE, RFAEConfig, StageError, stage_seed
from .plotting import save_scatter
from .target import load_embedding

log = logging.getLogger("rfae")

EXTENSION_FLAGS = {"rfae": "rfae", "least-squares": "least_squares", "nystrom": "nystrom",
                   "linear-reconstruction": "linear_reconstruction"}
EVAL_HEADER = "method,qnx_sia,trust_sia,spear_sia,pearson_sia,knn_acc"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument types
# ---------------------------------------------------------------------------

def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _unit_float(s):
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {s}")
    return v


def _prototype_count(s):
    v = float(s)
    if not v > 0 or (v >= 1 and v != int(v)):
        raise argparse.ArgumentTypeError("expected a count >= 1 or a fraction in (0, 1)")
    return v


def _target(s):
    if s == "diffusion" or (s.startswith("file:") and len(s) > 5):
        return s
    raise argparse.ArgumentTypeError("expected 'diffusion' or 'file:<path>'")


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("RFAE_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"RFAE_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise UsageError(f"RFAE_THREADS must be a positive integer, got {env!r}")
    return n


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def read_features(path, n_features: int, label_column=None) -> np.ndarray:
    """Feature matrix from a headered CSV that may or may not carry labels.

    An explicit ``label_column`` is dropped; otherwise a column named
    ``label`` is dropped, or the last one when there is exactly one extra.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DatasetError(f"empty file (no header): {path}")
    header, body = rows[0], rows[1:]
    width = len(header)
    if label_column is not None:
        drop = header.index(label_column) if label_column in header else int(label_column) % width
    elif "label" in header:
        drop = header.index("label")
    elif width == n_features + 1:
        drop = width - 1
    else:
        drop = None
    cols = [c for c in range(width) if c != drop]
    if len(cols) != n_features:
        raise DatasetError(f"dimension mismatch: {len(cols)} features, model expects {n_features}")
    X = np.empty((len(body), len(cols)))
    for r, row in enumerate(body):
        if len(row) != width:
            raise DatasetError(f"ragged row at line {r + 2}")
        try:
            X[r] = [float(row[c]) for c in cols]
        except ValueError:
            raise DatasetError(f"non-numeric feature at line {r + 2}") from None
    return X


def read_labels(path, label_column="label") -> list[str]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        return []
    header = rows[0]
    if label_column in header:
        col = header.index(label_column)
    else:
        try:
            col = int(label_column) % len(header)
        except ValueError:
            raise DatasetError(f"label column {label_column!r} not in header") from None
    return [r[col].strip() for r in rows[1:]]


def encode_labels(raw, class_names) -> np.ndarray:
    index = {c: k for k, c in enumerate(class_names)}
    unknown = sorted(set(raw) - set(index))
    if unknown:
        raise DatasetError(f"labels not seen during training: {unknown[:5]}")
    return np.array([index[v] for v in raw], dtype=np.int64)


def write_embedding(path, Z, extension: str):
    lines = ["index," + ",".join(f"z{k + 1}" for k in range(Z.shape[1])) + ",extension"]
    for i, row in enumerate(Z):
        lines.append(f"{i}," + ",".join(repr(float(v)) for v in row) + f",{extension}")
    text = "\n".join(lines) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def read_embedding(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        return np.zeros((0, 2))
    header = rows[0]
    cols = [k for k, h in enumerate(header) if h.startswith("z")]
    if len(cols) < 2:
        raise DatasetError("embedding CSV needs z1 and z2 columns")
    return np.array([[float(r[c]) for c in cols[:2]] for r in rows[1:]],
                    dtype=np.float64).reshape(-1, 2)


def _write_matrix(path, M):
    np.savetxt(path, np.asarray(M), delimiter=",", fmt="%.17g")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_tree(args):
    data = generate_artificial_tree(seed=args.seed, noise_sd=args.noise_sd,
                                    branch_lengths=tuple(args.branch_lengths))
    data = add_noise_features(data, args.snr, seed=stage_seed(args.seed, "noise-features"))
    tr, te = stratified_split(data, SplitSpec(args.test_fraction, args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(out / "train.csv", data.features[tr], data.labels[tr], data.feature_names)
    save_csv(out / "test.csv", data.features[te], data.labels[te], data.feature_names)
    log.info("wrote %d train and %d test rows with %d features to %s", tr.size, te.size,
             data.n_features, out)
    return 0


def cmd_fit(args):
    threads = _threads(args)
    data = load_csv(args.train, args.label_column)
    n_proto = int(args.n_prototypes) if args.n_prototypes >= 1 else args.n_prototypes
    cfg = RFAEConfig(n_trees=args.n_trees, n_prototypes=n_proto, lam=args.lam, lr=args.lr,
                     weight_decay=args.weight_decay, batch_size=args.batch_size,
                     epochs=args.epochs, hidden=tuple(args.hidden), seed=args.seed,
                     n_jobs=threads)
    target = None
    if args.target.startswith("file:"):
        try:
            target = load_embedding(args.target[5:])
        except Exception as exc:
            raise StageError("target", exc) from exc
    model = RFAE(cfg).fit(data.features, data.labels, target=target,
                          class_names=data.class_names)
    persistence.save(model, args.model)
    h = model.history
    if h.total:
        log.info("loss: first epoch %.6g, last epoch %.6g", h.total[0], h.total[-1])

    if args.dump_proximities:
        _write_matrix(args.dump_proximities, model.artifacts["proximities"])
    if args.dump_dir:
        d = Path(args.dump_dir)
        d.mkdir(parents=True, exist_ok=True)
        _write_matrix(d / "proximities.csv", model.artifacts["proximities"])
        _write_matrix(d / "prototype_probabilities.csv", model.p_star)
        np.savetxt(d / "medoids.csv", model.medoids, fmt="%d")
        _write_matrix(d / "target.csv", model.artifacts["raw_target"])
        write_embedding(d / "train_embedding.csv", model.train_embedding(), "rfae")
        h.to_csv(d / "loss_history.csv")
        (d / "timings.json").write_text(json.dumps(model.timings, indent=2) + "\n")
    return 0


def cmd_transform(args):
    model = persistence.load(args.model)
    X = read_features(args.data, model.x_train.shape[1], args.label_column)
    ext = EXTENSION_FLAGS[args.extension]
    Z = model.transform(X, extension=ext)
    write_embedding(args.out, Z, args.extension)
    return 0


def cmd_evaluate(args):
    model = persistence.load(args.model)
    ext = EXTENSION_FLAGS[args.extension]
    X = read_features(args.data, model.x_train.shape[1], args.label_column)
    y = encode_labels(read_labels(args.data, args.label_column or "label"), model.class_names)
    if X.shape[0] == 0:
        raise DatasetError("evaluation needs at least one test row")
    Z_test = model.transform(X, extension=ext)
    Z_train = model.train_embedding(ext)
    X_test = model.normalize(X)
    scores = sia(model.x_train, model.y_train, X_test, y, Z_train, Z_test,
                 seed=stage_seed(args.seed, "perturbation"))
    acc = knn_accuracy_curve(pairwise_distances(Z_test, Z_train), model.y_train, y)
    row = [args.method or args.extension] + [repr(float(scores[k])) for k in
                                             ("qnx_sia", "trust_sia", "spear_sia", "pearson_sia")]
    text = EVAL_HEADER + "\n" + ",".join(row + [repr(acc)]) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


def cmd_plot(args):
    Z = read_embedding(args.embedding)
    names = None
    if args.labels:
        raw = read_labels(args.labels, args.label_column)
        if len(raw) != Z.shape[0]:
            raise DatasetError(f"row mismatch: {Z.shape[0]} embedding rows, {len(raw)} labels")
        names = list(dict.fromkeys(raw))
        labels = encode_labels(raw, names)
    else:
        labels = np.zeros(Z.shape[0], dtype=np.int64)
    save_scatter(args.out, Z, labels, names, title=args.title)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rfae", description="Random-forest autoencoder embeddings.")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-tree", help="write the artificial tree data set as train/test CSVs")
    g.add_argument("--out-dir", default=".")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--snr", type=_positive_float, default=math.inf,
                   help="signal:noise dimension ratio; appends U(0,1) columns (default: none)")
    g.add_argument("--noise-sd", type=float, default=7.0)
    g.add_argument("--branch-lengths", type=_positive_int, nargs="+", default=[100] * 10)
    g.add_argument("--test-fraction", type=float, default=0.2)
    g.set_defaults(func=cmd_gen_tree)

    f = sub.add_parser("fit", help="fit a model on a labelled training CSV")
    f.add_argument("train")
    f.add_argument("--model", default="model.rfae", help="output model file")
    f.add_argument("--label-column", default="-1")
    f.add_argument("--lambda", dest="lam", type=_unit_float, default=0.01)
    f.add_argument("--n-prototypes", type=_prototype_count, default=0.1,
                   help="absolute count or fraction of training rows")
    f.add_argument("--n-trees", type=_positive_int, default=500)
    f.add_argument("--epochs", type=_positive_int, default=200)
    f.add_argument("--batch-size", type=_positive_int, default=512)
    f.add_argument("--lr", type=_positive_float, default=1e-3)
    f.add_argument("--weight-decay", type=float, default=1e-5)
    f.add_argument("--hidden", type=_positive_int, nargs="+", default=[800, 400, 100])
    f.add_argument("--target", type=_target, default="diffusion",
                   help="'diffusion' or 'file:<path>' with one row per training row")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--threads", type=_positive_int, default=None)
    f.add_argument("--dump-dir", default=None, help="write intermediate artifacts here")
    f.add_argument("--dump-proximities", default=None, help="dense CSV of training proximities")
    f.set_defaults(func=cmd_fit)

    for name, fn, helptext in (("transform", cmd_transform, "embed unseen rows"),
                               ("evaluate", cmd_evaluate, "score test embeddings")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("data")
        t.add_argument("--model", default="model.rfae")
        t.add_argument("--extension", choices=list(EXTENSION_FLAGS), default="rfae")
        t.add_argument("--label-column", default=None)
        t.add_argument("--out", default=None, help="output CSV (default: stdout)")
        t.add_argument("--seed", type=int, default=0)
        t.add_argument("--threads", type=_positive_int, default=None)
        if name == "evaluate":
            t.add_argument("--method", default=None, help="label for the method column")
        t.set_defaults(func=fn)

    pl = sub.add_parser("plot", help="SVG scatter of an embedding CSV")
    pl.add_argument("embedding")
    pl.add_argument("labels", nargs="?", default=None, help="CSV holding the label column")
    pl.add_argument("--out", default="embedding.svg")
    pl.add_argument("--label-column", default="label")
    pl.add_argument("--title", default="")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rfae: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"rfae: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
