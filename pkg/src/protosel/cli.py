"""Command-line front end.

Subcommands: summarize (select and write per-group prototype files), evaluate
(multi-split classification evaluation with CSV and text reports), prepare
(PCA fit/apply and split materialization), selftest (built-in oracle suites).

Configuration comes from an INI-style file (--config) with sections [data],
[run], [grids], [output]; any value can be overridden on the command line and
the command line wins. Exit codes: 0 success, 2 config error, 3 data error,
4 internal numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import io
import re
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import evaluation, selftest
from .corpus import (
    GroupedDataset,
    SplitPair,
    apply_pca,
    embed_documents,
    fit_pca,
    load_corpus,
    load_usps,
    load_usps_pair,
    load_word_vectors,
    make_splits,
)
from .errors import ConfigError, DataError, NumericError, ProtoselError
from .evaluation import Grids, HyperParams, build_summary, default_grids, run_experiment
from .kernel import KernelSpec, median_gamma
from .objectives import ObjectiveSpec, utility_value

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


@dataclass
class RunConfig:
    """Flat run configuration; see the module docstring for the file format."""

    corpus: str | None = None
    vectors: str | None = None
    usps_train: str | None = None
    usps_test: str | None = None
    pca_target: float | None = None
    method: tuple[str, ...] = ("mmd-diff-grad",)
    m: tuple[int, ...] = (4,)
    splits: int = 10
    seed: int = 0
    workers: int = 1
    classifier: tuple[str, ...] = ("1nn",)
    grad_init: str = "greedy"
    train_fraction: float = 0.8
    first_sentences: int = 3
    gamma: float | None = None
    lam: float | None = None
    subsample_train: int | None = None
    gammas: tuple[float, ...] = ()
    lambdas: tuple[float, ...] = ()
    cs: tuple[float, ...] = ()
    out: str = "protosel-out"

    def validate(self):
        for name in self.method:
            if name not in evaluation.METHOD_NAMES:
                raise ConfigError(f"unknown method {name!r}; valid: {', '.join(evaluation.METHOD_NAMES)}")
        for c in self.classifier:
            if c not in evaluation.CLASSIFIERS:
                raise ConfigError(f"unknown classifier {c!r}")
        if self.corpus is None and self.usps_train is None:
            raise ConfigError("no dataset given: set corpus+vectors or usps_train")
        if self.corpus is not None and self.vectors is None:
            raise ConfigError("a corpus needs a vectors file")
        if self.splits < 1:
            raise ConfigError("splits must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")


_SECTIONS = {
    "data": ("corpus", "vectors", "usps_train", "usps_test", "pca_target"),
    "run": (
        "method",
        "m",
        "splits",
        "seed",
        "workers",
        "classifier",
        "grad_init",
        "train_fraction",
        "first_sentences",
        "gamma",
        "lam",
        "subsample_train",
    ),
    "grids": ("gammas", "lambdas", "cs"),
    "output": ("out",),
}

_LIST_STR = {"method", "classifier"}
_LIST_INT = {"m"}
_LIST_FLOAT = {"gammas", "lambdas", "cs"}
_INT = {"splits", "seed", "workers", "first_sentences", "subsample_train"}
_FLOAT = {"pca_target", "train_fraction", "gamma", "lam"}


def _parse_value(key, raw):
    raw = raw.strip()
    if key in _LIST_STR:
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if key in _LIST_INT:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if key in _LIST_FLOAT:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if key in _INT:
        return int(raw)
    if key in _FLOAT:
        return float(raw)
    return raw


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    config = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section] or key not in known:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                setattr(config, key, _parse_value(key, raw))
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {key!r}: {raw!r}") from exc
    return config


def dump_config(config: RunConfig) -> str:
    """Serialize to the INI format; omitted keys carry their defaults."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section, keys in _SECTIONS.items():
        parser.add_section(section)
        for key in keys:
            value = getattr(config, key)
            if value is None:
                continue
            if isinstance(value, tuple):
                if not value:
                    continue
                rendered = ", ".join(format(v, ".10g") if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                rendered = format(value, ".10g")
            else:
                rendered = str(value)
            parser.set(section, key, rendered)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _load_dataset(config: RunConfig):
    """Returns (dataset, docs_by_id or None, canonical_split or None)."""
    if config.corpus is not None:
        docs = load_corpus(config.corpus)
        vecs = load_word_vectors(config.vectors)
        data = embed_documents(docs, vecs, first_k_sentences=config.first_sentences)
        return data, {d.id: d for d in docs}, None
    if config.usps_test is not None:
        combined, train_rows, test_rows = load_usps_pair(config.usps_train, config.usps_test)
        return combined, None, (train_rows, test_rows)
    return load_usps(config.usps_train), None, None


def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _grids_from_config(config: RunConfig, train: GroupedDataset) -> Grids:
    base = default_grids(train)
    return Grids(
        gammas=config.gammas or base.gammas,
        lams=config.lambdas or base.lams,
        Cs=config.cs or base.Cs,
    )


def _fmt(x):
    return format(x, ".12g")


def cmd_summarize(config: RunConfig) -> int:
    config.validate()
    if len(config.method) != 1 or len(config.m) != 1:
        raise ConfigError("summarize takes exactly one method and one m")
    method, m = config.method[0], config.m[0]
    data, docs_by_id, _ = _load_dataset(config)
    if config.pca_target is not None:
        data = apply_pca(fit_pca(data, config.pca_target), data)
    gamma = config.gamma
    if gamma is None:
        gamma = median_gamma(data.points, max_pairs=100_000, seed=config.seed)
    lam = config.lam if config.lam is not None else 1.0
    params = HyperParams(gamma=gamma, lam=lam, C=None)
    summary = build_summary(method, data, m, params, seed=config.seed, grad_init=config.grad_init)

    objective_value = None
    kind_by_method = {
        "nn-comp-greedy": "nn",
        "mmd-diff-greedy": "mmd-diff",
        "mmd-div-greedy": "mmd-div",
        "mmd-diff-grad": "mmd-diff",
        "mmd-div-grad": "mmd-div",
    }
    if method in kind_by_method:
        spec = ObjectiveSpec(kind=kind_by_method[method], kernel=KernelSpec(gamma), lam=lam)
        objective_value = utility_value(spec, summary, data)

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    for g, name in enumerate(data.group_names):
        lines = [f"# group: {name}", f"# method: {method}"]
        prov = summary.provenance
        if prov is not None:
            lines.append(f"# objective: {prov.objective}")
            lines.append(f"# optimizer: {prov.optimizer}")
            if prov.gamma is not None:
                lines.append(f"# gamma: {_fmt(prov.gamma)}")
            if prov.lam is not None:
                lines.append(f"# lambda: {_fmt(prov.lam)}")
        if objective_value is not None:
            lines.append(f"# objective_value: {_fmt(objective_value)}")
        lines.append(f"# selected: {len(summary.prototypes[g])}")
        for row in summary.prototypes[g]:
            if docs_by_id is not None:
                doc = docs_by_id[data.row_ids[row]]
                lines.append(f"{doc.id}\t{doc.group}\t{doc.title}")
                for sentence in doc.sentences[: config.first_sentences]:
                    lines.append(f"    {sentence}")
            else:
                lines.append(f"row {row}")
        path = out / f"summary_{_sanitize(name)}.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _subsample_split(split: SplitPair, n: int) -> SplitPair:
    """Stratified proportional subsample of the train side, at least one row
    per group; deterministic given the split seed."""
    train = split.train
    if train.n_points <= n:
        return split
    sizes = train.group_sizes()
    counts = np.maximum(1, np.floor(n * sizes / train.n_points).astype(int))
    while counts.sum() > n:
        counts[int(np.argmax(counts))] -= 1
    rng = np.random.Generator(np.random.PCG64(split.seed))
    rows = []
    for g in range(train.n_groups):
        take = rng.choice(train.group_index[g].size, size=int(counts[g]), replace=False)
        rows.append(train.group_index[g][np.sort(take)])
    return SplitPair(train=train.subset(np.concatenate(rows)), test=split.test, seed=split.seed)


def _pca_split(split: SplitPair, target: float) -> SplitPair:
    model = fit_pca(split.train, target)
    return SplitPair(
        train=apply_pca(model, split.train), test=apply_pca(model, split.test), seed=split.seed
    )


def cmd_evaluate(config: RunConfig) -> int:
    config.validate()
    data, _, canonical = _load_dataset(config)
    first_split = canonical if canonical is not None else None
    splits = make_splits(
        data, config.train_fraction, config.splits, config.seed, first_split=first_split
    )
    if config.pca_target is not None:
        splits = [_pca_split(s, config.pca_target) for s in splits]
    if config.subsample_train is not None:
        splits = [_subsample_split(s, config.subsample_train) for s in splits]
    grids = _grids_from_config(config, splits[0].train) if (config.gammas or config.lambdas or config.cs) else None
    reports = run_experiment(
        data,
        methods=list(config.method),
        m_list=list(config.m),
        n_splits=config.splits,
        base_seed=config.seed,
        classifiers=list(config.classifier),
        grids=grids,
        grad_init=config.grad_init,
        workers=config.workers,
        splits=splits,
    )
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(evaluation.reports_to_csv(reports), encoding="utf-8")
    (out / "summary.txt").write_text(evaluation.reports_to_text(reports), encoding="utf-8")
    return EXIT_OK


def cmd_prepare(config: RunConfig) -> int:
    config.validate()
    data, _, canonical = _load_dataset(config)
    if data.row_ids is None:
        data = GroupedDataset(
            points=data.points,
            group_of=data.group_of,
            group_names=data.group_names,
            group_index=data.group_index,
            row_ids=tuple(str(i) for i in range(data.n_points)),
        )
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    info = [
        f"points: {data.n_points}",
        f"dim: {data.dim}",
        f"groups: {', '.join(data.group_names)}",
        f"sizes: {', '.join(str(s) for s in data.group_sizes())}",
    ]
    if config.pca_target is not None:
        model = fit_pca(data, config.pca_target)
        data = apply_pca(model, data)
        info.append(f"pca_components: {model.n_components}")
        info.append(
            "pca_variance_ratio: "
            + ", ".join(format(r, ".6g") for r in model.explained_variance_ratio)
        )
    splits = make_splits(
        data, config.train_fraction, config.splits, config.seed,
        first_split=canonical if canonical is not None else None,
    )
    for s, split in enumerate(splits):
        train_lines = list(split.train.row_ids)
        test_lines = list(split.test.row_ids)
        (out / f"split_{s}_train.txt").write_text("\n".join(train_lines) + "\n", encoding="utf-8")
        (out / f"split_{s}_test.txt").write_text("\n".join(test_lines) + "\n", encoding="utf-8")
    (out / "dataset_info.txt").write_text("\n".join(info) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_selftest(grad_fn=None) -> int:
    results = selftest.run_all(grad_fn=grad_fn)
    failed = False
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name}: {detail}")
        failed = failed or not ok
    return EXIT_NUMERIC if failed else EXIT_OK


def _add_common(parser):
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--corpus", help="JSONL corpus path")
    parser.add_argument("--vectors", help="word-vector text file")
    parser.add_argument("--usps-train", dest="usps_train", help="USPS train file")
    parser.add_argument("--usps-test", dest="usps_test", help="USPS test file")
    parser.add_argument("--pca-target", dest="pca_target", type=float, help="PCA variance target in (0, 1]")
    parser.add_argument("--method", help="comma-separated method names")
    parser.add_argument("--m", help="comma-separated prototype counts")
    parser.add_argument("--splits", type=int, help="number of train/test splits")
    parser.add_argument("--seed", type=int, help="base seed")
    parser.add_argument("--workers", type=int, help="parallel workers (1 = sequential)")
    parser.add_argument("--classifier", help="comma-separated classifiers (1nn, svm)")
    parser.add_argument("--grad-init", dest="grad_init", help="gradient init: greedy, kmeans, random")
    parser.add_argument("--train-fraction", dest="train_fraction", type=float)
    parser.add_argument("--gamma", type=float, help="kernel bandwidth override")
    parser.add_argument("--lam", type=float, help="trade-off weight override")
    parser.add_argument("--fast", action="store_true", help="subsample each train split to 2000 points")
    parser.add_argument("--subsample-train", dest="subsample_train", type=int)
    parser.add_argument("--out", help="output directory")


def _merge_cli(config: RunConfig, args) -> RunConfig:
    updates = {}
    for key in ("corpus", "vectors", "usps_train", "usps_test", "pca_target", "splits",
                "seed", "workers", "grad_init", "train_fraction", "gamma", "lam",
                "subsample_train", "out"):
        value = getattr(args, key, None)
        if value is not None:
            updates[key] = value
    for key in ("method", "classifier"):
        raw = getattr(args, key, None)
        if raw is not None:
            updates[key] = _parse_value(key, raw)
    if getattr(args, "m", None) is not None:
        updates["m"] = _parse_value("m", args.m)
    if getattr(args, "fast", False):
        updates["subsample_train"] = 2000
    return replace(config, **updates)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="protosel",
                                     description="Comparative summarisation of grouped datasets")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("summarize", "evaluate", "prepare"):
        _add_common(sub.add_parser(name))
    sub.add_parser("selftest")
    args = parser.parse_args(argv)

    try:
        if args.command == "selftest":
            return cmd_selftest()
        config = load_config(args.config) if args.config else RunConfig()
        config = _merge_cli(config, args)
        if args.command == "summarize":
            return cmd_summarize(config)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        return cmd_prepare(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ProtoselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
