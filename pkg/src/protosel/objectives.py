"""Pure evaluation of all summary utility functions.

Every function here is stateless and recomputes from its arguments; the
optimizer modules keep incremental caches and are cross-checked against these
in tests. A summary is scored per group: coverage of its own group, and
(for the comparative objectives) separation from all other groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import GroupedDataset
from .errors import NumericError, ValidationError
from .kernel import KernelSpec, kernel_matrix

OBJECTIVE_KINDS = ("nn", "mmd-diff", "mmd-div", "mmd-single")


@dataclass(frozen=True)
class Provenance:
    """How a summary was produced: objective, optimizer, and hyperparameters."""

    objective: str
    optimizer: str
    gamma: float | None = None
    lam: float | None = None


@dataclass(frozen=True)
class Summary:
    """Per-group ordered prototype row indices into a train dataset.

    m_target is the requested per-group count for the comparative methods;
    None for methods whose per-group sizes vary (e.g. unlabeled selection).
    """

    prototypes: tuple[tuple[int, ...], ...]
    m_target: int | None
    provenance: Provenance | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "prototypes", tuple(tuple(int(i) for i in group) for group in self.prototypes)
        )
        for group in self.prototypes:
            if len(set(group)) != len(group):
                raise ValidationError("duplicate prototype index within a group")

    def validate_against(self, data: GroupedDataset):
        if len(self.prototypes) != data.n_groups:
            raise ValidationError("summary group count does not match dataset")
        for g, group in enumerate(self.prototypes):
            for i in group:
                if not 0 <= i < data.n_points or data.group_of[i] != g:
                    raise ValidationError(f"prototype row {i} does not belong to group {g}")

    def sizes(self) -> list[int]:
        return [len(g) for g in self.prototypes]


@dataclass(frozen=True)
class MetaPrototypes:
    """Free continuous points in embedding space, one (M, d) array per group."""

    points: tuple[np.ndarray, ...]

    def __post_init__(self):
        arrays = tuple(np.atleast_2d(np.asarray(p, dtype=float)) for p in self.points)
        object.__setattr__(self, "points", arrays)
        for arr in arrays:
            if not np.all(np.isfinite(arr)):
                raise NumericError("meta-prototypes must be finite")
            arr.setflags(write=False)


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which utility to optimise, with its trade-off weight and kernel.

    kind 'nn' ignores lam; 'mmd-single' scores an unlabeled selection against
    the whole dataset and is the building block for criticism-style baselines.
    """

    kind: str
    kernel: KernelSpec
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValidationError(f"unknown objective kind {self.kind!r}")
        if self.lam < 0:
            raise ValidationError("lam must be nonnegative")


def mmd2(X, Y, spec: KernelSpec) -> float:
    """Squared maximum mean discrepancy between two samples (biased estimator).

    mean k(x, x') - 2 mean k(x, y) + mean k(y, y'); nonnegative for the RBF
    kernel up to rounding.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValidationError("mmd2 requires nonempty samples")
    kxx = float(kernel_matrix(X, X, spec).values.mean())
    kxy = float(kernel_matrix(X, Y, spec).values.mean())
    kyy = float(kernel_matrix(Y, Y, spec).values.mean())
    return kxx - 2.0 * kxy + kyy


def _prototype_points(selection, data: GroupedDataset, g: int) -> np.ndarray:
    """Group-g prototype coordinates from either a Summary or MetaPrototypes."""
    if isinstance(selection, Summary):
        idx = selection.prototypes[g]
        if len(idx) == 0:
            raise ValidationError(f"group {g} has an empty prototype list")
        return data.points[list(idx)]
    if isinstance(selection, MetaPrototypes):
        pts = selection.points[g]
        if pts.shape[0] == 0:
            raise ValidationError(f"group {g} has no meta-prototypes")
        return pts
    raise ValidationError(f"unsupported selection type {type(selection).__name__}")


def group_nn_term(points_g: np.ndarray, data: GroupedDataset, g: int, spec: KernelSpec) -> float:
    """sum over group-g points of the kernel similarity to their nearest prototype."""
    K = kernel_matrix(points_g, data.group_points(g), spec).values
    return float(np.sum(K.max(axis=0)))


def group_diff_term(points_g, data: GroupedDataset, g: int, spec: ObjectiveSpec) -> float:
    """-MMD^2(prototypes, own group) + lam * MMD^2(prototypes, rest)."""
    value = -mmd2(points_g, data.group_points(g), spec.kernel)
    if spec.lam > 0:
        rest = data.rest_points(g)
        if rest.shape[0] == 0:
            raise ValidationError("comparative term needs at least 2 groups when lam > 0")
        value += spec.lam * mmd2(points_g, rest, spec.kernel)
    return value


def group_div_term(points_g, data: GroupedDataset, g: int, spec: ObjectiveSpec) -> float:
    """-MMD^2(prototypes, own group) - 2 lam * mean k(prototype, point outside group)."""
    value = -mmd2(points_g, data.group_points(g), spec.kernel)
    if spec.lam > 0:
        rest = data.rest_points(g)
        if rest.shape[0] == 0:
            raise ValidationError("comparative term needs at least 2 groups when lam > 0")
        cross = float(kernel_matrix(points_g, rest, spec.kernel).values.mean())
        value -= 2.0 * spec.lam * cross
    return value


def utility_nn(summary: Summary, data: GroupedDataset, spec: KernelSpec) -> float:
    """Nearest-prototype coverage utility summed over groups."""
    summary.validate_against(data)
    return sum(
        group_nn_term(_prototype_points(summary, data, g), data, g, spec)
        for g in range(data.n_groups)
    )


def utility_diff(selection, data: GroupedDataset, spec: ObjectiveSpec) -> float:
    """Difference-of-MMD utility over all groups (Summary or MetaPrototypes)."""
    if spec.kind != "mmd-diff":
        raise ValidationError(f"utility_diff expects kind 'mmd-diff', got {spec.kind!r}")
    if isinstance(selection, Summary):
        selection.validate_against(data)
    return sum(
        group_diff_term(_prototype_points(selection, data, g), data, g, spec)
        for g in range(data.n_groups)
    )


def utility_div(selection, data: GroupedDataset, spec: ObjectiveSpec) -> float:
    """Diversity-emphasising MMD utility over all groups (Summary or MetaPrototypes)."""
    if spec.kind != "mmd-div":
        raise ValidationError(f"utility_div expects kind 'mmd-div', got {spec.kind!r}")
    if isinstance(selection, Summary):
        selection.validate_against(data)
    return sum(
        group_div_term(_prototype_points(selection, data, g), data, g, spec)
        for g in range(data.n_groups)
    )


def utility_single(selection, data: GroupedDataset, spec: KernelSpec) -> float:
    """-MMD^2(selected points, all points), ignoring group labels.

    selection is a sequence of row indices or an array of points.
    """
    sel = np.asarray(selection)
    if sel.ndim == 1 and np.issubdtype(sel.dtype, np.integer):
        pts = data.points[sel]
    else:
        pts = np.atleast_2d(np.asarray(selection, dtype=float))
    return -mmd2(pts, data.points, spec)


def utility_value(spec: ObjectiveSpec, selection, data: GroupedDataset) -> float:
    """Dispatch on spec.kind; 'nn' and 'mmd-single' accept only a Summary."""
    if spec.kind == "nn":
        return utility_nn(selection, data, spec.kernel)
    if spec.kind == "mmd-diff":
        return utility_diff(selection, data, spec)
    if spec.kind == "mmd-div":
        return utility_div(selection, data, spec)
    flat = [i for group in selection.prototypes for i in group]
    return utility_single(np.asarray(flat, dtype=int), data, spec.kernel)
