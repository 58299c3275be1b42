"""Spherical k-means on the unit hypersphere.

Points and centroids are unit-l2-norm; an assignment maximizes cosine
similarity and the tracked objective is

    objective = -(1/N) * sum_n  g_n . C[:, labels[n]]

so lower is better and -1 is a perfect fit. The solver is Lloyd-style
alternation with greedy cosine k-means++ seeding, best-of-``restarts``
selection, lowest-index tie-breaking, and farthest-point reseeding of empty
clusters. After Lloyd converges, single-point reassignment refinement keeps
moving the one row whose switch best improves the objective until no such
move exists, which escapes the shallow local optima Lloyd alone gets stuck
in. Everything is deterministic given (data, options, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateInputError

_NORM_TOL = 1e-6


@dataclass
class EmbeddingBank:
    """N x d matrix of embeddings; ``row_norm`` asserts unit-norm rows."""

    rows: np.ndarray
    row_norm: bool = False

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ContractError("EmbeddingBank.rows must be 2-D")
        if self.row_norm:
            norms = np.linalg.norm(self.rows, axis=1)
            if not np.all(np.abs(norms - 1.0) <= _NORM_TOL):
                raise ContractError("row_norm set but rows are not unit-norm")


@dataclass
class CentroidMatrix:
    """d x K centroid matrix with unit-norm columns."""

    C: np.ndarray

    def __post_init__(self) -> None:
        self.C = np.asarray(self.C, dtype=np.float64)
        if self.C.ndim != 2:
            raise ContractError("CentroidMatrix.C must be 2-D")
        norms = np.linalg.norm(self.C, axis=0)
        if not np.all(np.abs(norms - 1.0) <= _NORM_TOL):
            raise ContractError("centroid columns must be unit-norm")

    @property
    def k(self) -> int:
        return self.C.shape[1]


@dataclass
class ClusterResult:
    """Best restart's assignment plus per-restart objective traces.

    ``restart_objectives`` holds one list per restart: the objective after the
    initial assignment, then after every update/assign iteration and every
    accepted single-point refinement move. Each list is non-increasing; the
    solver's monotonicity is checkable from the outside.
    """

    labels: np.ndarray
    centroids: CentroidMatrix
    objective: float
    iterations_run: int
    restart_objectives: list[list[float]] = field(default_factory=list)


@dataclass(frozen=True)
class KMeansOptions:
    max_iters: int = 50
    tol: float = 1e-6
    restarts: int = 3


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Scale every row to unit l2 norm; zero rows are rejected."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot normalize a zero row")
    return matrix / norms


def _as_rows(bank) -> np.ndarray:
    rows = bank.rows if isinstance(bank, EmbeddingBank) else np.asarray(bank, dtype=np.float64)
    if rows.ndim != 2:
        raise ContractError("bank must be an N x d matrix")
    norms = np.linalg.norm(rows, axis=1)
    if not np.all(np.abs(norms - 1.0) <= _NORM_TOL):
        raise ContractError("bank rows must be unit-norm (call normalize_rows first)")
    return rows


def assign(bank, centroids: CentroidMatrix | np.ndarray) -> tuple[np.ndarray, float]:
    """Assign each row to its most-cosine-similar centroid.

    Ties break to the lowest centroid index. Returns (labels, objective).
    """
    rows = _as_rows(bank)
    C = centroids.C if isinstance(centroids, CentroidMatrix) else np.asarray(centroids)
    if rows.shape[1] != C.shape[0]:
        raise ContractError(
            f"dimension mismatch: bank is d={rows.shape[1]}, centroids d={C.shape[0]}")
    sims = rows @ C
    labels = np.argmax(sims, axis=1)
    objective = -float(np.mean(sims[np.arange(rows.shape[0]), labels]))
    return labels, objective


def update_centroids(bank, labels: np.ndarray, k: int,
                     rng: np.random.Generator) -> CentroidMatrix:
    """Normalized per-cluster means; empty clusters reseed to the worst-fit row.

    The reseed candidate is the row with the lowest cosine to its own cluster's
    centroid (exact ties broken through ``rng``), taken farthest-first when
    several clusters are empty.
    """
    rows = _as_rows(bank)
    labels = np.asarray(labels)
    if labels.shape[0] != rows.shape[0]:
        raise ContractError("labels length must match bank size")
    if np.any((labels < 0) | (labels >= k)):
        raise ContractError(f"labels must lie in [0, {k})")

    d = rows.shape[1]
    C = np.zeros((d, k))
    counts = np.bincount(labels, minlength=k)
    empty = []
    for j in range(k):
        if counts[j] == 0:
            empty.append(j)
            continue
        mean = rows[labels == j].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            # antipodal collapse: treat as empty and reseed
            empty.append(j)
            continue
        C[:, j] = mean / norm

    if empty:
        own_sim = np.einsum("nd,dn->n", rows, C[:, labels])
        order = [int(i) for i in np.argsort(own_sim, kind="stable")]
        taken: set[int] = set()
        for j in empty:
            candidates = [i for i in order if i not in taken]
            best = own_sim[candidates[0]]
            tied = [i for i in candidates if own_sim[i] == best]
            pick = tied[int(rng.integers(len(tied)))] if len(tied) > 1 else candidates[0]
            taken.add(pick)
            C[:, j] = rows[pick]

    return CentroidMatrix(C=C)


def _kmeanspp_init(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ seeding with cosine distance d(x, c) = 1 - x.c.

    Each center after the first is picked from several distance-weighted
    candidates, keeping the one that most reduces the summed squared
    distance to the nearest chosen center.
    """
    n = rows.shape[0]
    trials = 2 + int(np.log(max(k, 2)))
    chosen = [int(rng.integers(n))]
    best_sim = rows @ rows[chosen[0]]
    for _ in range(k - 1):
        dist = np.clip(1.0 - best_sim, 0.0, None)
        weights = dist * dist
        total = weights.sum()
        if total <= 0.0:
            candidates = [int(rng.integers(n))]
        else:
            candidates = [int(c) for c in rng.choice(n, size=trials, p=weights / total)]
        best_idx, best_potential = candidates[0], np.inf
        for idx in candidates:
            sim = np.maximum(best_sim, rows @ rows[idx])
            potential = float(np.sum(np.clip(1.0 - sim, 0.0, None) ** 2))
            if potential < best_potential:
                best_idx, best_potential = idx, potential
        chosen.append(best_idx)
        best_sim = np.maximum(best_sim, rows @ rows[best_idx])
    return rows[chosen].T.copy()


def _refine_single_moves(rows: np.ndarray, labels: np.ndarray, k: int,
                         history: list[float],
                         max_moves: int) -> tuple[np.ndarray, bool]:
    """Single-point reassignment refinement on the spherical objective.

    For fixed labels the optimal centroids are the normalized cluster sums
    S_j, so the objective equals -(1/N) * sum_j ||S_j||, and moving row i
    from cluster a to b changes the sum of norms by

        (||S_a - g_i|| + ||S_b + g_i||) - (||S_a|| + ||S_b||)

    which is O(d) to evaluate from maintained sums. The best strictly
    improving move is applied repeatedly; moves that would empty a cluster
    are skipped. Returns the refined labels and whether anything moved.
    """
    n, _ = rows.shape
    labels = labels.copy()
    sums = np.zeros((k, rows.shape[1]))
    np.add.at(sums, labels, rows)
    counts = np.bincount(labels, minlength=k)
    moved = False
    for _ in range(max_moves):
        norm_sq = np.einsum("kd,kd->k", sums, sums)
        norms = np.sqrt(norm_sq)
        dots = rows @ sums.T
        own = dots[np.arange(n), labels]
        after_remove = np.sqrt(np.maximum(norm_sq[labels] - 2.0 * own + 1.0, 0.0))
        after_add = np.sqrt(norm_sq[None, :] + 2.0 * dots + 1.0)
        gain = (after_remove[:, None] + after_add) - (norms[labels][:, None] + norms[None, :])
        gain[np.arange(n), labels] = -np.inf
        gain[counts[labels] <= 1, :] = -np.inf
        flat = int(np.argmax(gain))
        i, b = divmod(flat, k)
        if not np.isfinite(gain[i, b]) or gain[i, b] <= 1e-12:
            break
        a = labels[i]
        sums[a] -= rows[i]
        sums[b] += rows[i]
        counts[a] -= 1
        counts[b] += 1
        labels[i] = b
        moved = True
        history.append(-float(np.sum(np.sqrt(np.einsum("kd,kd->k", sums, sums)))) / n)
    return labels, moved


def spherical_kmeans(bank, k: int, opts: KMeansOptions | None = None,
                     rng: np.random.Generator | int | None = None) -> ClusterResult:
    """Best-of-restarts spherical k-means.

    Within one restart the objective is non-increasing; the returned labels
    are always the argmax assignment under the returned centroids.
    """
    rows = _as_rows(bank)
    opts = opts or KMeansOptions()
    if k <= 0:
        raise ContractError("k must be positive")
    if rows.shape[0] < k:
        raise ContractError(f"need at least k={k} points, got {rows.shape[0]}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    best: ClusterResult | None = None
    histories: list[list[float]] = []
    move_budget = max(opts.max_iters, 1) * rows.shape[0]
    for _ in range(max(opts.restarts, 1)):
        C = _kmeanspp_init(rows, k, rng)
        labels, objective = assign(rows, C)
        history = [objective]
        iterations = 0
        moved = False
        for _ in range(max(opts.max_iters, 1)):
            for _ in range(opts.max_iters):
                C_new = update_centroids(rows, labels, k, rng)
                new_labels, new_objective = assign(rows, C_new.C)
                iterations += 1
                history.append(new_objective)
                stable = bool(np.array_equal(new_labels, labels))
                improvement = objective - new_objective
                C, labels, objective = C_new.C, new_labels, new_objective
                if stable or improvement < opts.tol:
                    break
            labels, moved = _refine_single_moves(rows, labels, k, history, move_budget)
            if not moved:
                break
            objective = history[-1]
        if moved:
            # refinement budget ran out mid-round: restore the invariant that
            # labels are the argmax assignment under the returned centroids
            C_new = update_centroids(rows, labels, k, rng)
            labels, objective = assign(rows, C_new.C)
            C = C_new.C
            history.append(objective)
            iterations += 1
        histories.append(history)
        candidate = ClusterResult(labels=labels,
                                  centroids=CentroidMatrix(C=C),
                                  objective=objective,
                                  iterations_run=iterations)
        if best is None or candidate.objective < best.objective:
            best = candidate
    best.restart_objectives = histories
    return best


def cluster_sizes(labels: np.ndarray, k: int) -> list[int]:
    return np.bincount(np.asarray(labels), minlength=k).tolist()


def purity(pred_labels: np.ndarray, true_labels: np.ndarray) -> float:
    """Fraction of samples whose cluster's majority true label matches their own."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.size == 0:
        raise ContractError("label arrays must be non-empty and aligned")
    total = 0
    for cluster in np.unique(pred):
        members = true[pred == cluster]
        total += int(np.bincount(members).max())
    return total / pred.size
