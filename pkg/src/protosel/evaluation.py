"""Classification-as-evaluation harness.

Summaries are scored by training a classifier (1-NN or kernel SVM) on the
selected prototypes and measuring balanced accuracy on held-out data.
Hyperparameters are chosen by stratified grid-search cross-validation on the
training split only; experiments aggregate over several splits with Student-t
confidence intervals.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import t as student_t

from . import baselines, gradopt, greedy
from .corpus import GroupedDataset, SplitPair, make_splits
from .errors import ValidationError
from .kernel import KernelSpec, kernel_matrix, median_gamma
from .objectives import ObjectiveSpec, Provenance, Summary

METHOD_NAMES = (
    "nn-comp-greedy",
    "mmd-diff-greedy",
    "mmd-div-greedy",
    "mmd-diff-grad",
    "mmd-div-grad",
    "kmeans",
    "kmedoids",
    "mmd-critic",
    "full",
)

CLASSIFIERS = ("1nn", "svm")

_GAMMA_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)
_DEFAULT_LAMBDAS = (0.5, 1.0, 2.0)
_DEFAULT_CS = (0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class LabeledPrototypeSet:
    """Prototype coordinates with their group labels, in summary order."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        labs = np.asarray(self.labels, dtype=int)
        if pts.shape[0] == 0:
            raise ValidationError("prototype set must be nonempty")
        if labs.shape != (pts.shape[0],):
            raise ValidationError("labels must align with points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labs)

    @classmethod
    def from_summary(cls, summary: Summary, train: GroupedDataset) -> "LabeledPrototypeSet":
        rows, labels = [], []
        for g, group in enumerate(summary.prototypes):
            for row in group:
                rows.append(row)
                labels.append(g)
        if not rows:
            raise ValidationError("summary selects no prototypes")
        return cls(points=train.points[rows], labels=np.array(labels))


def knn1_predict(protos: LabeledPrototypeSet, query) -> int:
    """Label of the Euclidean-nearest prototype; distance ties keep the
    earliest prototype ordinal."""
    query = np.asarray(query, dtype=float)
    d2 = np.sum((protos.points - query) ** 2, axis=1)
    return int(protos.labels[int(np.argmin(d2))])


def knn1_predict_batch(protos: LabeledPrototypeSet, queries) -> np.ndarray:
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    d2 = cdist(queries, protos.points, "sqeuclidean")
    return protos.labels[np.argmin(d2, axis=1)]


@dataclass(frozen=True)
class BinarySvm:
    """One binary soft-margin machine (positive class vs rest).

    alphas are the box-constrained dual variables (0 <= alpha_i <= C); the
    decision value is sum_i alpha_i y_i k(x_i, x) + bias.
    """

    points: np.ndarray
    labels: np.ndarray  # +1 / -1
    alphas: np.ndarray
    bias: float
    C: float
    spec: KernelSpec
    dual_objective: float

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        coef = self.alphas * self.labels
        K = kernel_matrix(self.points, X, self.spec).values
        return coef @ K + self.bias

    @property
    def support_points(self) -> np.ndarray:
        return self.points[self.alphas > 1e-12]


@dataclass(frozen=True)
class SvmModel:
    """One-vs-rest set of binary machines, one per class (ascending order)."""

    classes: tuple[int, ...]
    machines: tuple[BinarySvm, ...]

    def decision_values(self, X) -> np.ndarray:
        return np.vstack([m.decision(X) for m in self.machines])

    def predict(self, X) -> np.ndarray:
        values = self.decision_values(X)
        return np.asarray(self.classes)[np.argmax(values, axis=0)]


def _smo_binary(K, y, C, tol=1e-3):
    """Maximal-violating-pair dual ascent to KKT tolerance or 1e4*n updates.

    Solves min 0.5 a'Qa - sum(a) s.t. 0 <= a <= C, y'a = 0 with Q = yy' * K.
    Returns (alphas, bias, dual_objective).
    """
    n = y.size
    alpha = np.zeros(n)
    Q = K * np.outer(y, y)
    G = -np.ones(n)
    for _ in range(10_000 * n):
        neg_yG = -(y * G)
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            break
        up_idx = np.flatnonzero(up)
        low_idx = np.flatnonzero(low)
        i = int(up_idx[np.argmax(neg_yG[up_idx])])
        j = int(low_idx[np.argmin(neg_yG[low_idx])])
        if neg_yG[i] - neg_yG[j] <= tol:
            break
        eta = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        t = (neg_yG[i] - neg_yG[j]) / eta
        t_max_i = (C - alpha[i]) if y[i] > 0 else alpha[i]
        t_max_j = alpha[j] if y[j] > 0 else (C - alpha[j])
        t = min(t, t_max_i, t_max_j)
        dai = y[i] * t
        daj = -y[j] * t
        alpha[i] = np.clip(alpha[i] + dai, 0.0, C)
        alpha[j] = np.clip(alpha[j] + daj, 0.0, C)
        G += Q[:, i] * dai + Q[:, j] * daj

    u = y * (Q @ alpha)
    free = (alpha > 1e-8 * C) & (alpha < C * (1.0 - 1e-8))
    if free.any():
        bias = float(np.mean((y - u)[free]))
    else:
        neg_yG = y - u
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        lo = neg_yG[up].max() if up.any() else None
        hi = neg_yG[low].min() if low.any() else None
        if lo is not None and hi is not None:
            bias = float((lo + hi) / 2.0)
        else:
            bias = float(lo if lo is not None else (hi if hi is not None else 0.0))
    dual = float(alpha.sum() - 0.5 * (alpha @ (Q @ alpha)))
    return alpha, bias, dual


def svm_train(protos: LabeledPrototypeSet, C: float, spec: KernelSpec, tol: float = 1e-3) -> SvmModel:
    """One-vs-rest kernel SVM on the prototype set."""
    if C <= 0:
        raise ValidationError("C must be positive")
    classes = tuple(int(c) for c in np.unique(protos.labels))
    if len(classes) < 2:
        raise ValidationError("SVM training needs at least 2 classes")
    K = kernel_matrix(protos.points, protos.points, spec).values
    machines = []
    for c in classes:
        y = np.where(protos.labels == c, 1.0, -1.0)
        alpha, bias, dual = _smo_binary(K, y, C, tol=tol)
        machines.append(
            BinarySvm(
                points=protos.points,
                labels=y,
                alphas=alpha,
                bias=bias,
                C=C,
                spec=spec,
                dual_objective=dual,
            )
        )
    return SvmModel(classes=classes, machines=tuple(machines))


def balanced_accuracy(predictions, truth, classes=None) -> float:
    """Mean per-class recall.

    classes defaults to the labels present in truth; when given explicitly,
    every class must occur in truth at least once.
    """
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape or truth.size == 0:
        raise ValidationError("predictions and truth must be equal-length and nonempty")
    if classes is None:
        classes = np.unique(truth)
    recalls = []
    for c in classes:
        mask = truth == c
        if not mask.any():
            raise ValidationError(f"class {c!r} has no truth instances")
        recalls.append(float(np.mean(predictions[mask] == c)))
    return float(np.mean(recalls))


@dataclass(frozen=True)
class HyperParams:
    """Chosen hyperparameters; None marks an axis the method/classifier ignores."""

    gamma: float | None = None
    lam: float | None = None
    C: float | None = None


@dataclass(frozen=True)
class Grids:
    gammas: tuple[float, ...]
    lams: tuple[float, ...] = _DEFAULT_LAMBDAS
    Cs: tuple[float, ...] = _DEFAULT_CS


def default_grids(train: GroupedDataset, max_pairs: int = 100_000, seed: int = 0) -> Grids:
    """Gamma grid centered on the median heuristic; fixed lambda and C grids."""
    g_med = median_gamma(train.points, max_pairs=max_pairs, seed=seed)
    return Grids(gammas=tuple(g_med * f for f in _GAMMA_FACTORS))


def _method_axes(method: str, classifier: str) -> tuple[bool, bool, bool]:
    """(uses_gamma, uses_lam, uses_C) for one (method, classifier) pairing."""
    uses_gamma_method = method in (
        "nn-comp-greedy",
        "mmd-diff-greedy",
        "mmd-div-greedy",
        "mmd-diff-grad",
        "mmd-div-grad",
        "mmd-critic",
    )
    uses_lam = method in ("mmd-diff-greedy", "mmd-div-greedy", "mmd-diff-grad", "mmd-div-grad")
    svm = classifier == "svm"
    return (uses_gamma_method or svm, uses_lam, svm)


def build_summary(
    method: str,
    train: GroupedDataset,
    M: int,
    params: HyperParams,
    seed: int = 0,
    grad_init: str = "greedy",
) -> Summary:
    """Run one summariser by its public name."""
    if method not in METHOD_NAMES:
        raise ValidationError(f"unknown method {method!r}")
    gamma = params.gamma
    lam = params.lam if params.lam is not None else 1.0
    if method == "full":
        groups = tuple(tuple(int(r) for r in train.group_index[g]) for g in range(train.n_groups))
        return Summary(
            prototypes=groups, m_target=None, provenance=Provenance("none", "full")
        )
    if method == "kmeans":
        return baselines.kmeans_summary(train, M, seed=seed)
    if method == "kmedoids":
        return baselines.kmedoids_summary(train, M, seed=seed)
    if gamma is None:
        raise ValidationError(f"method {method!r} needs a gamma")
    kspec = KernelSpec(gamma=gamma)
    if method == "mmd-critic":
        total = (train.n_groups * M) // 2 * 2
        return baselines.mmd_critic_summary(train, total, kspec)
    if method == "nn-comp-greedy":
        return greedy.greedy_select(train, ObjectiveSpec(kind="nn", kernel=kspec), M)
    kind = "mmd-diff" if "diff" in method else "mmd-div"
    spec = ObjectiveSpec(kind=kind, kernel=kspec, lam=lam)
    if method.endswith("greedy"):
        return greedy.greedy_select(train, spec, M)
    config = gradopt.GradConfig(init=grad_init, random_seed=seed)
    return gradopt.gradient_summary(train, spec, M, config)


def _classify(classifier: str, protos: LabeledPrototypeSet, queries, params: HyperParams):
    if classifier == "1nn":
        return knn1_predict_batch(protos, queries)
    if classifier == "svm":
        model = svm_train(protos, params.C, KernelSpec(params.gamma))
        return model.predict(queries)
    raise ValidationError(f"unknown classifier {classifier!r}")


def stratified_folds(data: GroupedDataset, folds: int, seed: int) -> list[np.ndarray]:
    """Per-group shuffled round-robin deal into `folds` row-index arrays."""
    if folds < 2:
        raise ValidationError("folds must be >= 2")
    if int(data.group_sizes().min()) < folds:
        raise ValidationError("every group needs at least `folds` points")
    rng = np.random.Generator(np.random.PCG64(seed))
    buckets = [[] for _ in range(folds)]
    for g in range(data.n_groups):
        rows = data.group_index[g]
        perm = rng.permutation(rows.size)
        for k, r in enumerate(rows[perm]):
            buckets[k % folds].append(int(r))
    return [np.array(sorted(b)) for b in buckets]


def grid_search_cv(
    train: GroupedDataset,
    method: str,
    M: int,
    grids: Grids,
    classifier: str = "1nn",
    folds: int = 3,
    seed: int = 0,
    grad_init: str = "greedy",
) -> HyperParams:
    """Choose hyperparameters by stratified k-fold CV on the training split.

    Only the axes the (method, classifier) pair actually uses are searched;
    score ties keep the smallest (gamma, lambda, C) in that order.
    """
    use_gamma, use_lam, use_c = _method_axes(method, classifier)
    gammas = sorted(grids.gammas) if use_gamma else [None]
    lams = sorted(grids.lams) if use_lam else [None]
    cs = sorted(grids.Cs) if use_c else [None]
    if len(gammas) == len(lams) == len(cs) == 1:
        return HyperParams(gamma=gammas[0], lam=lams[0], C=cs[0])
    fold_rows = stratified_folds(train, folds, seed)
    fold_sets = []
    for held in range(folds):
        rest = np.concatenate([fold_rows[k] for k in range(folds) if k != held])
        fold_sets.append((train.subset(rest), fold_rows[held]))
    classes = np.arange(train.n_groups)

    best_score, best = -np.inf, None
    for gamma, lam, c in itertools.product(gammas, lams, cs):
        params = HyperParams(gamma=gamma, lam=lam, C=c)
        scores = []
        for sub_train, held_rows in fold_sets:
            summary = build_summary(method, sub_train, M, params, seed=seed, grad_init=grad_init)
            protos = LabeledPrototypeSet.from_summary(summary, sub_train)
            preds = _classify(classifier, protos, train.points[held_rows], params)
            truth = train.group_of[held_rows]
            scores.append(balanced_accuracy(preds, truth, classes=classes))
        score = float(np.mean(scores))
        if score > best_score:
            best_score, best = score, params
    return best


@dataclass(frozen=True)
class SplitResult:
    split: int
    seed: int
    balanced_accuracy: float
    params: HyperParams


@dataclass(frozen=True)
class EvalReport:
    """Aggregated evaluation of one (method, M, classifier) combination."""

    method: str
    m: int
    classifier: str
    splits: tuple[SplitResult, ...]
    mean: float
    ci95_halfwidth: float | None

    def __post_init__(self):
        accs = [s.balanced_accuracy for s in self.splits]
        if abs(self.mean - float(np.mean(accs))) > 1e-12:
            raise ValidationError("mean must equal the arithmetic mean of the split scores")


def _aggregate(method, m, classifier, results) -> EvalReport:
    accs = np.array([r.balanced_accuracy for r in results])
    mean = float(np.mean(accs))
    if accs.size > 1:
        half = float(
            student_t.ppf(0.975, accs.size - 1) * np.std(accs, ddof=1) / np.sqrt(accs.size)
        )
    else:
        half = None
    return EvalReport(
        method=method,
        m=m,
        classifier=classifier,
        splits=tuple(results),
        mean=mean,
        ci95_halfwidth=half,
    )


def _eval_cell(args):
    """One (method, M, classifier, split) evaluation; module-level for pickling."""
    (method, m, classifier, split_idx, split, grids, folds, grad_init) = args
    train, test = split.train, split.test
    cv_grids = grids
    if cv_grids is None:
        if any(_method_axes(method, classifier)):
            cv_grids = default_grids(train)
        else:
            cv_grids = Grids(gammas=(1.0,))  # no active axis; content unused
    params = grid_search_cv(
        train, method, m, cv_grids, classifier=classifier, folds=folds,
        seed=split.seed, grad_init=grad_init,
    )
    summary = build_summary(method, train, m, params, seed=split.seed, grad_init=grad_init)
    protos = LabeledPrototypeSet.from_summary(summary, train)
    preds = _classify(classifier, protos, test.points, params)
    acc = balanced_accuracy(preds, test.group_of, classes=np.arange(train.n_groups))
    return SplitResult(split=split_idx, seed=split.seed, balanced_accuracy=acc, params=params)


def run_experiment(
    data: GroupedDataset,
    methods,
    m_list,
    n_splits: int,
    base_seed: int,
    classifiers=("1nn",),
    train_fraction: float = 0.8,
    grids: Grids | None = None,
    folds: int = 3,
    grad_init: str = "greedy",
    workers: int = 1,
    splits: list[SplitPair] | None = None,
) -> list[EvalReport]:
    """Grid-search, select, train, and score every (method, M, classifier)
    combination over n_splits stratified splits.

    Results are reduced in deterministic task order regardless of the worker
    count.
    """
    for method in methods:
        if method not in METHOD_NAMES:
            raise ValidationError(f"unknown method {method!r}")
    for classifier in classifiers:
        if classifier not in CLASSIFIERS:
            raise ValidationError(f"unknown classifier {classifier!r}")
    if splits is None:
        splits = make_splits(data, train_fraction, n_splits, base_seed)
    combos = list(itertools.product(methods, m_list, classifiers))
    tasks = [
        (method, m, classifier, idx, split, grids, folds, grad_init)
        for (method, m, classifier) in combos
        for idx, split in enumerate(splits)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_eval_cell, tasks))
    else:
        results = [_eval_cell(task) for task in tasks]
    reports = []
    for k, (method, m, classifier) in enumerate(combos):
        cell_results = results[k * len(splits) : (k + 1) * len(splits)]
        reports.append(_aggregate(method, m, classifier, cell_results))
    return reports


def _fmt(x, digits=10):
    return "" if x is None else format(x, f".{digits}g")


def reports_to_csv(reports) -> str:
    """Machine-readable table: per-split rows plus one aggregate row per cell."""
    lines = ["method,M,classifier,split,gamma,lambda,C,balanced_accuracy"]
    for rep in reports:
        for s in rep.splits:
            lines.append(
                f"{rep.method},{rep.m},{rep.classifier},{s.split},"
                f"{_fmt(s.params.gamma)},{_fmt(s.params.lam)},{_fmt(s.params.C)},"
                f"{s.balanced_accuracy:.6f}"
            )
        lines.append(f"{rep.method},{rep.m},{rep.classifier},mean,,,,{rep.mean:.6f}")
    return "\n".join(lines) + "\n"


def reports_to_text(reports) -> str:
    """Human-readable table: one block per classifier, methods by rows,
    prototype counts by columns, cells 'mean +/- ci'."""
    out = []
    classifiers = sorted({r.classifier for r in reports})
    for classifier in classifiers:
        subset = [r for r in reports if r.classifier == classifier]
        ms = sorted({r.m for r in subset})
        methods = sorted({r.method for r in subset})
        out.append(f"classifier: {classifier}")
        header = ["method".ljust(18)] + [f"M={m}".rjust(16) for m in ms]
        out.append("".join(header))
        for method in methods:
            cells = [method.ljust(18)]
            for m in ms:
                match = [r for r in subset if r.method == method and r.m == m]
                if not match:
                    cells.append("".rjust(16))
                    continue
                rep = match[0]
                if rep.ci95_halfwidth is None:
                    cells.append(f"{rep.mean:.3f}".rjust(16))
                else:
                    cells.append(f"{rep.mean:.3f} +/- {rep.ci95_halfwidth:.3f}".rjust(16))
            out.append("".join(cells))
        out.append("")
    return "\n".join(out)
