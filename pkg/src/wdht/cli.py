"""``wdht`` command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import plotting
from .codec import binarize_matrix, load_codes, save_codes
from .config import DESK_LEARNING_RATE, FIELD_TYPES, Config, build_config, parse_list, write_config_file
from .datastore import (
    SyntheticSpec, check_counts, load_features, load_labels, read_dataset, save_features, split,
    synth_generate, write_dataset,
)
from .errors import ConfigError, DataError, NumericError, WDHTError
from .evaluation import evaluate_codes, grid_search
from .hashnet import (
    encode, gradient_check, load_checkpoint, save_checkpoint, save_history, train,
)
from .retrieval import HammingIndex, write_results_tsv
from .tagvec import aggregate_corpus, load_embedding_table, load_tags, tag_vector_variance

log = logging.getLogger("wdht")

GRADCHECK_TOL = 1e-4

HYPER_KEYS = ["lambda1", "lambda2", "lambda3", "lambda4", "margin_hinge", "margin_contrastive",
              "learning_rate", "momentum", "batch_size", "epochs", "seed"]
MODEL_KEYS = ["bits", "hidden", "agg_mode", "loss_mode"]
SYNTH_KEYS = ["clusters", "per_cluster", "feature_dim", "feature_noise", "centroid_scale",
              "vocab_per_cluster", "tags_per_sample", "embedding_dim", "embedding_noise",
              "tag_noise", "query_fraction", "seed"]

COMMAND_KEYS = {
    "aggregate": ["dataset", "tags", "embeddings", "agg_mode", "out_dir", "plots"],
    "train": HYPER_KEYS + MODEL_KEYS + ["dataset", "features", "tags", "embeddings", "tag_vectors",
                                        "dropped", "out_dir", "plots"],
    "encode": ["dataset", "checkpoint", "features", "out_dir"],
    "query": ["db_codes", "query_codes", "k_values", "out_dir"],
    "eval": ["dataset", "db_codes", "query_codes", "db_labels", "query_labels", "k_values", "pr",
             "bits", "agg_mode", "loss_mode", "out_dir", "plots"],
    "synth": SYNTH_KEYS + ["out_dir"],
    "gradcheck": ["gradcheck_seeds"],
    "gridsearch": HYPER_KEYS + ["bits", "hidden", "agg_mode", "dataset", "features", "tags", "embeddings",
                                "labels", "lambda2_grid", "lambda3_grid", "validation_fraction",
                                "k_values", "out_dir", "plots"],
}

HELP = {
    "aggregate": "aggregate each sample's tags into one embedding-space vector",
    "train": "train the hashing head on features plus tag supervision",
    "encode": "encode features into packed binary codes",
    "query": "Hamming top-K retrieval of query codes against a database",
    "eval": "mAP@K report and precision-recall curve",
    "synth": "generate a synthetic clustered dataset",
    "gradcheck": "compare analytic gradients with finite differences",
    "gridsearch": "lambda2 x lambda3 grid search on a validation split",
}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if message.startswith("unrecognized arguments"):
            message = "unknown key(s): " + message.split(":", 1)[1].strip()
        raise UsageError(message)


def build_parser():
    defaults = Config()
    parser = _Parser(prog="wdht", description="Weakly supervised deep hashing from tag embeddings.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="key = value file; flags override its values")
        for key in dict.fromkeys(keys):
            flags = [f"--{key}", "--mode"] if key == "loss_mode" else [f"--{key}"]
            p.add_argument(*flags, dest=key, default=None, metavar=FIELD_TYPES[key].__name__.upper(),
                           help=f"(default: {getattr(defaults, key)!r})")
    return parser


def _out(cfg, name):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _from_dataset(cfg, key, filename):
    """Explicit path wins; otherwise fall back to a file inside --dataset."""
    path = getattr(cfg, key)
    if path:
        return path
    if cfg.dataset:
        return os.path.join(cfg.dataset, filename)
    raise ConfigError(f"--{key} (or --dataset) is required")


def _require(path, what):
    if not os.path.exists(path):
        raise DataError(f"{what} not found: {path}")
    return path


def cmd_aggregate(cfg):
    tags = load_tags(_require(_from_dataset(cfg, "tags", "train_tags.txt"), "tags file"))
    table = load_embedding_table(_require(_from_dataset(cfg, "embeddings", "embeddings.txt"), "embedding table"))
    W, valid = aggregate_corpus(tags, table, cfg.agg_mode)
    if not valid.any():
        raise DataError("every sample is out of vocabulary")
    save_features(_out(cfg, "tag_vectors.fvec"), W[valid])
    dropped = np.flatnonzero(~valid)
    with open(_out(cfg, "dropped.txt"), "w", encoding="utf-8") as fh:
        fh.writelines(f"{i}\n" for i in dropped)
    variances = np.array([tag_vector_variance(t, table) for t, ok in zip(tags, valid) if ok])
    if cfg.plots:
        plotting.plot_variance_histogram(variances, _out(cfg, "tag_variance.png"))
    print(f"aggregated {int(valid.sum())} samples ({cfg.agg_mode}); dropped {len(dropped)}; "
          f"tag-vector variance median={np.median(variances):.4f} max={variances.max():.4f}")
    return 0


def _load_dropped(path):
    with open(_require(path, "dropped-samples report"), encoding="utf-8") as fh:
        return np.array([int(x) for x in fh.read().split()], dtype=np.int64)


def cmd_train(cfg):
    X = load_features(_require(_from_dataset(cfg, "features", "train_features.fvec"), "features"))
    hyper = cfg.hyper()
    if cfg.loss_mode == "wdht":
        if cfg.tag_vectors:
            W = load_features(_require(cfg.tag_vectors, "tag vectors"))
            if cfg.dropped:
                X = np.delete(X, _load_dropped(cfg.dropped), axis=0)
            check_counts(features=X, tag_vectors=W)
        else:
            tags = load_tags(_require(_from_dataset(cfg, "tags", "train_tags.txt"), "tags file"))
            table = load_embedding_table(_require(_from_dataset(cfg, "embeddings", "embeddings.txt"), "embedding table"))
            check_counts(features=X, tags=tags)
            W, valid = aggregate_corpus(tags, table, cfg.agg_mode)
            if not valid.any():
                raise DataError("every sample is out of vocabulary")
            X, W = X[valid], W[valid]
        result = train(X, hyper, "wdht", W=W, bits=cfg.bits, hidden=cfg.hidden)
    else:
        tags = load_tags(_require(_from_dataset(cfg, "tags", "train_tags.txt"), "tags file"))
        check_counts(features=X, tags=tags)
        result = train(X, hyper, "binary_tag", tagsets=tags, bits=cfg.bits, hidden=cfg.hidden)
    save_checkpoint(_out(cfg, "model.wdhm"), result.params)
    save_history(_out(cfg, "loss.csv"), result.history)
    if cfg.plots and result.history:
        plotting.plot_loss_history(result.history, _out(cfg, "loss.png"))
    if result.history:
        first, last = result.history[0]["total"], result.history[-1]["total"]
        print(f"trained {cfg.loss_mode} {cfg.bits}-bit model: epoch 1 loss {first:.6g} -> epoch {len(result.history)} loss {last:.6g}")
    return 0


def cmd_encode(cfg):
    params = load_checkpoint(_require(cfg.checkpoint or _out(cfg, "model.wdhm"), "checkpoint"))
    X = load_features(_require(_from_dataset(cfg, "features", "train_features.fvec"), "features"))
    codes = binarize_matrix(encode(params, X))
    save_codes(_out(cfg, "codes.wdhc"), codes)
    print(f"encoded {codes.count} samples as {codes.bits}-bit codes")
    return 0


def cmd_query(cfg):
    db = load_codes(_require(cfg.db_codes, "database codes"))
    queries = load_codes(_require(cfg.query_codes, "query codes"))
    k = cfg.ks()[0]
    index = HammingIndex.build(db)
    positions, distances = index.rank_all(queries, k)
    with open(_out(cfg, "results.tsv"), "w", encoding="utf-8") as fh:
        write_results_tsv(fh, index, positions, distances)
    print(f"ranked {queries.count} queries, top {min(k, len(index))} each")
    return 0


def cmd_eval(cfg):
    db = load_codes(_require(cfg.db_codes, "database codes"))
    queries = load_codes(_require(cfg.query_codes, "query codes"))
    db_labels = load_labels(_require(_from_dataset(cfg, "db_labels", "train_labels.txt"), "database labels"))
    q_labels = load_labels(_require(_from_dataset(cfg, "query_labels", "query_labels.txt"), "query labels"))
    check_counts(db_codes=db, db_labels=db_labels)
    check_counts(query_codes=queries, query_labels=q_labels)
    ks = cfg.ks()
    maps, curve = evaluate_codes(db, queries, db_labels, q_labels, ks, with_pr=cfg.pr)
    mode = cfg.agg_mode if cfg.loss_mode == "wdht" else cfg.loss_mode
    with open(_out(cfg, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write("bits,mode,K,mAP\n")
        for k in ks:
            fh.write(f"{db.bits},{mode},{k},{maps[k]!r}\n")
            print(f"bits={db.bits} mode={mode} K={k} mAP={maps[k]:.4f}")
    if curve is not None:
        curve.save_csv(_out(cfg, "pr.csv"))
        if cfg.plots:
            plotting.plot_pr_curves({f"{mode} {db.bits} bits": curve}, _out(cfg, "pr.png"))
    return 0


def cmd_synth(cfg):
    spec = SyntheticSpec(
        clusters=cfg.clusters, per_cluster=cfg.per_cluster, feature_dim=cfg.feature_dim,
        feature_noise=cfg.feature_noise, centroid_scale=cfg.centroid_scale,
        vocab_per_cluster=cfg.vocab_per_cluster, tags_per_sample=cfg.tags_per_sample,
        embedding_dim=cfg.embedding_dim, embedding_noise=cfg.embedding_noise,
        tag_noise=cfg.tag_noise, seed=cfg.seed,
    )
    data = synth_generate(spec)
    sp = split(len(data), cfg.query_fraction, cfg.seed)
    write_dataset(cfg.out_dir, data, sp)
    write_config_file(os.path.join(cfg.out_dir, "train.cfg"), {
        "dataset": os.path.abspath(cfg.out_dir), "learning_rate": DESK_LEARNING_RATE, "seed": cfg.seed,
    })
    print(f"wrote {len(sp.train)} train and {len(sp.query)} query samples to {cfg.out_dir}")
    return 0


def cmd_gradcheck(cfg):
    report = gradient_check(range(cfg.gradcheck_seeds))
    worst = max(r[2] for r in report)
    status = "PASS" if worst <= GRADCHECK_TOL else "FAIL"
    print(f"{status} max_rel_err={worst:.3e} cases={len(report)}")
    if status == "FAIL":
        raise NumericError(f"gradient check failed: max relative error {worst:.3e} > {GRADCHECK_TOL}")
    return 0


def cmd_gridsearch(cfg):
    if cfg.dataset and not cfg.features:
        data = read_dataset(cfg.dataset, "train")
    else:
        from .datastore import Dataset
        X = load_features(_require(cfg.features, "features"))
        tags = load_tags(_require(cfg.tags, "tags file"))
        labels = load_labels(_require(cfg.labels, "labels"))
        table = load_embedding_table(_require(cfg.embeddings, "embedding table"))
        check_counts(features=X, tags=tags, labels=labels)
        data = Dataset(X, tags, labels, table)
    l2 = parse_list(cfg.lambda2_grid, float, "lambda2_grid")
    l3 = parse_list(cfg.lambda3_grid, float, "lambda3_grid")
    k = cfg.ks()[0]
    result = grid_search(data, l2, l3, cfg.validation_fraction, cfg.hyper(), cfg.agg_mode, cfg.bits, k, cfg.hidden)
    with open(_out(cfg, "grid.csv"), "w", encoding="utf-8") as fh:
        fh.write("lambda2,lambda3,mAP\n")
        for a, b, m in result.rows():
            fh.write(f"{a!r},{b!r},{m!r}\n")
    if cfg.plots:
        plotting.plot_grid(result, _out(cfg, "grid.png"))
    best = result.best
    print(f"best lambda2={best[0]:g} lambda3={best[1]:g} mAP@{k}={result.cells[best]:.4f}")
    return 0


COMMANDS = {
    "aggregate": cmd_aggregate, "train": cmd_train, "encode": cmd_encode, "query": cmd_query,
    "eval": cmd_eval, "synth": cmd_synth, "gradcheck": cmd_gradcheck, "gridsearch": cmd_gridsearch,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        overrides = {k: getattr(args, k, None) for k in COMMAND_KEYS[args.command]}
        cfg = build_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except WDHTError as exc:
        print(f"wdht: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"wdht: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
