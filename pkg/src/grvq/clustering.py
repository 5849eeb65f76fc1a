"""Seeded k-means and transition clustering over a variance-ordered basis.

Transition clustering rotates the data onto an uncentered PCA basis and runs
warm-started k-means over a growing prefix of coordinates, so early rounds
fit the high-variance directions before the full space is opened up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class KMeansConfig:
    max_iters: int = 25
    rel_tol: float = 1e-4
    seed: int = 0
    workers: int = 1  # centroid accumulation merges per-chunk sums in chunk order

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class TransitionSchedule:
    """Geometric dimension schedule d_i = round(d ** (i / steps)).

    Duplicates collapse, so the effective number of rounds can be smaller
    than `steps`. An explicit dims list overrides the geometric rule.
    """

    steps: int = 10
    dims: list[int] | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def dims_for(self, d: int) -> list[int]:
        if d < 1:
            raise ValueError("dimension must be >= 1")
        if self.dims is not None:
            dims = list(self.dims)
            if not dims or dims[-1] != d:
                raise ValueError("explicit dims must end at the full dimension")
            if any(b <= a for a, b in zip(dims, dims[1:])) or dims[0] < 1:
                raise ValueError("dims must be strictly increasing and >= 1")
            return dims
        out = []
        for i in range(1, self.steps + 1):
            di = int(round(d ** (i / self.steps)))
            di = min(max(di, 1), d)
            if not out or di > out[-1]:
                out.append(di)
        if out[-1] != d:
            out.append(d)
        return out


@dataclass
class EpsPenalty:
    """Per-point state for cross-term regularized assignment.

    sums holds S_x, the sum of the codewords currently selected from the
    other codebooks; eps_other the cross term among those codebooks only.
    """

    sums: np.ndarray  # (N, d)
    eps_other: np.ndarray  # (N,)
    lam: float
    eps0: float

    def rotated(self, rot: np.ndarray) -> "EpsPenalty":
        return EpsPenalty(self.sums @ rot.T, self.eps_other, self.lam, self.eps0)


def pca_basis(data: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the uncentered second-moment matrix.

    Rows are the principal directions ordered by descending explained
    variance; projecting is `data @ R.T`, inverting is `@ R`.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("pca_basis needs at least two vectors")
    n, d = data.shape
    second_moment = (data.T @ data) / n
    eigvals, eigvecs = np.linalg.eigh(second_moment)
    order = np.argsort(-eigvals, kind="stable")
    return eigvecs[:, order].T.copy()


def regularized_assign(
    point: np.ndarray,
    centroids: np.ndarray,
    other_sum: np.ndarray,
    eps_other: float,
    lam: float,
    eps0: float,
) -> int:
    """Index minimizing squared distance plus lam * (eps(k) - eps0)^2.

    eps(k) is the full cross term the point would have if centroid k were
    selected while the other codebooks keep their current selections.
    """
    point = np.asarray(point, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    diff = centroids - point
    dist = np.einsum("kd,kd->k", diff, diff)
    eps_k = eps_other + 2.0 * (centroids @ np.asarray(other_sum, dtype=np.float64))
    scores = dist + lam * (eps_k - eps0) ** 2
    return int(np.argmin(scores))


def _assign(x, centroids, d_active, penalty):
    """Nearest-centroid assignment on the active prefix, ties to lower index."""
    xa = x[:, :d_active]
    ca = centroids[:, :d_active]
    dist = (
        np.einsum("nd,nd->n", xa, xa)[:, None]
        - 2.0 * (xa @ ca.T)
        + np.einsum("kd,kd->k", ca, ca)[None, :]
    )
    if penalty is not None and penalty.lam > 0.0:
        eps_k = penalty.eps_other[:, None] + 2.0 * (penalty.sums @ centroids.T)
        dist = dist + penalty.lam * (eps_k - penalty.eps0) ** 2
    return np.argmin(dist, axis=1)


def _objective(x, centroids, assign, d_active, penalty):
    diff = x[:, :d_active] - centroids[assign, :d_active]
    obj = np.einsum("nd,nd->n", diff, diff)
    if penalty is not None and penalty.lam > 0.0:
        sel = centroids[assign]
        eps = penalty.eps_other + 2.0 * np.einsum("nd,nd->n", penalty.sums, sel)
        obj = obj + penalty.lam * (eps - penalty.eps0) ** 2
    return float(obj.mean())


def _reseed_empty(x, centroids, assign, counts, d_active):
    """Move each empty cluster onto the point farthest from its centroid.

    The relocated point is reassigned to the revived cluster, so the step
    never increases the objective. Deterministic: farthest first, then next.
    """
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return
    diff = x[:, :d_active] - centroids[assign, :d_active]
    dist = np.einsum("nd,nd->n", diff, diff)
    order = np.argsort(-dist, kind="stable")
    pos = 0
    for j in empty:
        while pos < order.size and counts[assign[order[pos]]] <= 1:
            pos += 1  # do not strip a cluster down to empty
        if pos >= order.size:
            break
        p = order[pos]
        counts[assign[p]] -= 1
        centroids[j, :d_active] = x[p, :d_active]
        assign[p] = j
        counts[j] = 1
        pos += 1


def kmeans(
    data: np.ndarray,
    k: int,
    init: np.ndarray,
    cfg: KMeansConfig | None = None,
    active_dims: int | None = None,
    penalty: EpsPenalty | None = None,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations restricted to the first `active_dims` coordinates.

    Args:
        data: (N, d) vectors.
        k: number of centroids.
        init: (k, d) starting centroids; coordinates beyond the active
            prefix pass through unchanged.
        cfg: iteration budget, tolerance, worker count.
        active_dims: prefix length to cluster on, defaults to d.
        penalty: optional cross-term regularizer; assignments score the
            penalized objective and centroid updates solve the matching
            regularized least squares exactly.

    Returns:
        (centroids, assignments, objective_history); assignments are
        consistent with the returned centroids.
    """
    cfg = cfg or KMeansConfig()
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("data must be a non-empty (N, d) array")
    if k < 1:
        raise ValueError("k must be >= 1")
    n, d = x.shape
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (k, d):
        raise ValueError(f"init must have shape {(k, d)}")
    d_active = d if active_dims is None else active_dims
    if d_active < 1 or d_active > d:
        raise ValueError("active_dims out of range")

    centroids = init.copy()
    assign = _assign(x, centroids, d_active, penalty)
    counts = np.bincount(assign, minlength=k)
    _reseed_empty(x, centroids, assign, counts, d_active)
    history = [_objective(x, centroids, assign, d_active, penalty)]

    for _ in range(cfg.max_iters):
        if penalty is not None and penalty.lam > 0.0:
            centroids[:, :d_active] = _penalized_update(
                x, assign, counts, k, penalty, centroids, d_active
            )
        else:
            centroids[:, :d_active] = _mean_update(
                x[:, :d_active], assign, counts, k, cfg.workers, centroids[:, :d_active]
            )
        assign = _assign(x, centroids, d_active, penalty)
        counts = np.bincount(assign, minlength=k)
        _reseed_empty(x, centroids, assign, counts, d_active)
        obj = _objective(x, centroids, assign, d_active, penalty)
        history.append(obj)
        prev = history[-2]
        if penalty is None or penalty.lam == 0.0:
            assert obj <= prev + 1e-9 * max(1.0, abs(prev)), "objective increased"
        if abs(prev - obj) <= cfg.rel_tol * max(prev, np.finfo(np.float64).tiny):
            break

    return centroids, assign, history


def _penalized_update(x, assign, counts, k, penalty, centroids, d_active):
    """Exact minimizer of the penalized objective for each cluster's centroid.

    For cluster j the active coordinates solve the regularized least squares
    (N_j I + 4 lam sum S S^T) c = sum x + 2 lam sum (eps0 - eps_full) S,
    where eps_full folds in the contribution of the frozen trailing
    coordinates. With lam = 0 this reduces to the plain mean. Paired with
    exact assignments this makes every Lloyd iteration a descent step on
    the penalized objective, which keeps large lam stable.
    """
    lam, eps0 = penalty.lam, penalty.eps0
    out = centroids[:, :d_active].copy()
    for j in range(k):
        if counts[j] == 0:
            continue
        members = np.flatnonzero(assign == j)
        s = penalty.sums[members, :d_active]
        eps_fixed = penalty.eps_other[members]
        if d_active < x.shape[1]:
            eps_fixed = eps_fixed + 2.0 * (
                penalty.sums[members, d_active:] @ centroids[j, d_active:]
            )
        a = counts[j] * np.eye(d_active) + 4.0 * lam * (s.T @ s)
        b = x[members, :d_active].sum(axis=0) + 2.0 * lam * ((eps0 - eps_fixed) @ s)
        out[j] = np.linalg.solve(a, b)
    return out


def _mean_update(x_active, assign, counts, k, workers, current):
    """Per-cluster means; empty clusters keep their current coordinates.

    Accumulation runs over `workers` contiguous chunks merged in chunk
    order, which fixes the float summation order for a given worker count.
    """
    n, d_active = x_active.shape
    sums = np.zeros((k, d_active), dtype=np.float64)
    bounds = np.linspace(0, n, workers + 1).astype(np.int64)
    for w in range(workers):
        lo, hi = bounds[w], bounds[w + 1]
        if lo == hi:
            continue
        one_hot = np.zeros((hi - lo, k), dtype=np.float64)
        one_hot[np.arange(hi - lo), assign[lo:hi]] = 1.0
        sums += one_hot.T @ x_active[lo:hi]
    out = current.copy()
    nonzero = counts > 0
    out[nonzero] = sums[nonzero] / counts[nonzero, None]
    return out


def transition_cluster(
    xprime: np.ndarray,
    init: np.ndarray,
    sched: TransitionSchedule | None = None,
    cfg: KMeansConfig | None = None,
    penalty: EpsPenalty | None = None,
) -> np.ndarray:
    """Optimize one codebook against intermediate data X'.

    Rotates X' and the warm-start codebook onto the uncentered PCA basis,
    runs k-means over the dimension schedule (inactive coordinates pass
    through), and rotates back. Guarantees the returned codebook's
    optimal-assignment objective does not exceed the init's: if the
    scheduled run lands worse, it falls back to plain full-dimension
    k-means warm-started from init, which is monotone from that point.
    """
    sched = sched or TransitionSchedule()
    cfg = cfg or KMeansConfig()
    x = np.asarray(xprime, dtype=np.float64)
    init = np.asarray(init, dtype=np.float64)
    k = init.shape[0]
    d = x.shape[1]
    dims = sched.dims_for(d)

    if dims == [d]:
        centroids, _, _ = kmeans(x, k, init, cfg, penalty=penalty)
        return centroids

    rot = pca_basis(x)
    xr = x @ rot.T
    cr = init @ rot.T
    pen_r = penalty.rotated(rot) if penalty is not None else None
    for d_active in dims:
        cr, _, _ = kmeans(xr, k, cr, cfg, active_dims=d_active, penalty=pen_r)
    out = cr @ rot

    if penalty is not None and penalty.lam > 0.0:
        return out  # the penalized objective carries no monotonicity claim

    assign_out = _assign(x, out, d, None)
    assign_init = _assign(x, init, d, None)
    if _objective(x, out, assign_out, d, None) > _objective(x, init, assign_init, d, None):
        out, _, _ = kmeans(x, k, init, cfg)
    return out
