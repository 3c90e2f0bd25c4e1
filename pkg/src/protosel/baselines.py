"""Non-comparative baselines: kmeans (snapped), kmedoids, and an unlabeled
prototypes-plus-criticisms selector.

All clustering runs per group with kmeans++ initialization and is fully
deterministic under a fixed seed (PCG64).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .corpus import GroupedDataset, from_rows
from .errors import ValidationError
from .gradopt import snap
from .greedy import greedy_select
from .kernel import KernelSpec, kernel_matrix, row_sums
from .objectives import MetaPrototypes, ObjectiveSpec, Provenance, Summary


@dataclass(frozen=True)
class ClusterModel:
    """Cluster centers with per-point assignments and the resulting inertia."""

    centers: np.ndarray
    assignment: np.ndarray
    inertia: float

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "assignment", np.asarray(self.assignment, dtype=int))


def _kmeanspp(points, M, rng) -> np.ndarray:
    """kmeans++ D^2 seeding; returns row indices. Falls back to a uniform draw
    over unchosen points when all remaining squared distances are zero."""
    n = points.shape[0]
    chosen = [int(rng.integers(0, n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, M):
        probs = d2.copy()
        probs[chosen] = 0.0
        total = probs.sum()
        if total > 0:
            probs /= total
            nxt = int(rng.choice(n, p=probs))
        else:
            pool = np.setdiff1d(np.arange(n), chosen)
            nxt = int(pool[rng.integers(0, pool.size)])
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return np.array(chosen, dtype=int)


def kmeanspp_init(points, M: int, seed: int) -> np.ndarray:
    """Deterministic kmeans++ initial center indices."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if M < 1 or M > points.shape[0]:
        raise ValidationError(f"M must be in [1, {points.shape[0]}], got {M}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return _kmeanspp(points, M, rng)


def lloyd(points, M: int, seed: int, max_iter: int = 300, inertia_trace=None) -> ClusterModel:
    """Lloyd's iterations from kmeans++ seeding until the assignment stops
    changing or max_iter is reached.

    Empty clusters are repaired by moving the point currently farthest from its
    own center (among clusters that can spare one). inertia_trace, if given,
    collects the inertia after every full iteration.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    init = kmeanspp_init(points, M, seed)
    centers = points[init].copy()
    assignment = None
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assignment = np.argmin(d2, axis=1)
        counts = np.bincount(new_assignment, minlength=M)
        for c in np.flatnonzero(counts == 0):
            donors = np.flatnonzero(counts[new_assignment] >= 2)
            dist_own = d2[donors, new_assignment[donors]]
            p = donors[int(np.argmax(dist_own))]
            counts[new_assignment[p]] -= 1
            new_assignment[p] = c
            counts[c] += 1
            d2[p, c] = 0.0
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for c in range(M):
            members = np.flatnonzero(assignment == c)
            centers[c] = points[members].mean(axis=0)
        if inertia_trace is not None:
            inertia_trace.append(
                float(np.sum((points - centers[assignment]) ** 2))
            )
    inertia = float(np.sum((points - centers[assignment]) ** 2))
    return ClusterModel(centers=centers, assignment=assignment, inertia=inertia)


def kmeans_summary(data: GroupedDataset, M: int, seed: int) -> Summary:
    """Per-group kmeans prototypes: Lloyd's centers snapped to nearest unused rows."""
    sizes = data.group_sizes()
    if M < 1 or M > int(sizes.min()):
        raise ValidationError(f"M must be in [1, {int(sizes.min())}], got {M}")
    centers = []
    for g in range(data.n_groups):
        model = lloyd(data.group_points(g), M, seed=seed + g)
        centers.append(model.centers)
    snapped = snap(MetaPrototypes(points=tuple(centers)), data)
    return Summary(
        prototypes=snapped.prototypes,
        m_target=M,
        provenance=Provenance(objective="inertia", optimizer="kmeans"),
    )


def kmedoids_summary(data: GroupedDataset, M: int, seed: int, max_iter: int = 300) -> Summary:
    """Per-group PAM-style kmedoids; the medoids themselves are the prototypes."""
    sizes = data.group_sizes()
    if M < 1 or M > int(sizes.min()):
        raise ValidationError(f"M must be in [1, {int(sizes.min())}], got {M}")
    groups = []
    for g in range(data.n_groups):
        points = data.group_points(g)
        local = _pam(points, M, seed=seed + g, max_iter=max_iter)
        groups.append(tuple(int(data.group_index[g][i]) for i in local))
    return Summary(
        prototypes=tuple(groups),
        m_target=M,
        provenance=Provenance(objective="total-distance", optimizer="kmedoids"),
    )


def _pam(points, M, seed, max_iter=300, cost_trace=None) -> list[int]:
    """Alternate assignment and medoid updates until the medoid set is stable.

    Distances are plain Euclidean; medoid updates pick the in-cluster point
    minimizing the total distance to its cluster (ties: smallest index).
    """
    n = points.shape[0]
    dist = np.sqrt(np.maximum(np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2), 0.0))
    medoids = list(kmeanspp_init(points, M, seed))
    for _ in range(max_iter):
        assignment = np.argmin(dist[:, medoids], axis=1)
        new_medoids = list(medoids)
        for c in range(M):
            members = np.flatnonzero(assignment == c)
            if members.size == 0:
                continue
            totals = dist[np.ix_(members, members)].sum(axis=1)
            new_medoids[c] = int(members[int(np.argmin(totals))])
        if cost_trace is not None:
            a = np.argmin(dist[:, new_medoids], axis=1)
            cost_trace.append(float(dist[np.arange(n), np.asarray(new_medoids)[a]].sum()))
        if new_medoids == medoids:
            break
        medoids = new_medoids
    return medoids


def mmd_critic_summary(data: GroupedDataset, total: int, spec: KernelSpec) -> Summary:
    """Unlabeled selection: half prototypes, half criticisms.

    Prototypes greedily maximize the fit of the selection to the full dataset
    (the label-free MMD objective); criticisms then greedily maximize
    |witness value| plus the log-det gain of the criticism kernel submatrix.
    Selected rows keep their true group labels, so per-group list lengths vary
    and a group may receive nothing.
    """
    if total % 2 != 0:
        raise ValidationError(f"total must be even, got {total}")
    if not 2 <= total <= data.n_points:
        raise ValidationError(f"total must be in [2, {data.n_points}], got {total}")
    half = total // 2

    flat_view = from_rows(data.points, ["all"] * data.n_points)
    proto_summary = greedy_select(
        flat_view, ObjectiveSpec(kind="mmd-single", kernel=spec), half
    )
    protos = list(proto_summary.prototypes[0])

    criticisms = _select_criticisms(data.points, protos, half, spec)

    groups = [[] for _ in range(data.n_groups)]
    for row in protos + criticisms:
        groups[int(data.group_of[row])].append(row)
    return Summary(
        prototypes=tuple(tuple(g) for g in groups),
        m_target=None,
        provenance=Provenance(objective="mmd-critic", optimizer="greedy", gamma=spec.gamma),
    )


def _select_criticisms(points, protos, count, spec, jitter=1e-10):
    """Greedy criticisms: argmax of |witness| + log-det increment.

    The witness value of a candidate is mean_i k(x_i, c) - mean_{j in protos}
    k(x_j, c); the log-det increment comes from an incrementally updated
    Cholesky factor of the criticism kernel submatrix (diagonal jitter for
    stability; the first increment is log(1 + jitter) ~ 0).
    """
    n = points.shape[0]
    mean_all = row_sums(points, points, spec) / n
    K_sel = kernel_matrix(points, points[protos], spec).values
    witness = np.abs(mean_all - K_sel.mean(axis=1))

    mask = np.ones(n, dtype=bool)
    mask[protos] = False
    chosen: list[int] = []
    L = np.zeros((count, count))
    for t in range(count):
        pool = np.flatnonzero(mask)
        if pool.size == 0:
            break
        if t == 0:
            arg = np.full(pool.size, 1.0 + jitter)
        else:
            K_cp = kernel_matrix(points[chosen], points[pool], spec).values
            W = solve_triangular(L[:t, :t], K_cp, lower=True)
            arg = 1.0 + jitter - np.sum(W**2, axis=0)
        gains = witness[pool] + np.log(np.maximum(arg, 1e-18))
        pick = int(np.argmax(gains))
        row = int(pool[pick])
        if t > 0:
            L[t, :t] = W[:, pick]
        L[t, t] = np.sqrt(max(float(arg[pick]), 1e-18))
        chosen.append(row)
        mask[row] = False
    return chosen
