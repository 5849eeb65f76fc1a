"""Asymmetric distance computation over encoded datasets.

The squared distance from a query to a reconstruction decomposes into M
table lookups minus (M - 1) times the query norm plus the per-vector cross
term, so a full scan touches only codes and small tables. All score math is
float64; ties rank the lower dataset id first.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import CodeMatrix, QuantModel, as_dataset


@dataclass
class QueryTable:
    """Per-query squared distances to every codeword, plus the query norm."""

    dists: np.ndarray  # (M, K) exact squared distances
    query_norm_sq: float

    def __post_init__(self):
        if self.dists.ndim != 2:
            raise ValueError("table must have shape (M, K)")
        if np.any(self.dists < 0):
            raise ValueError("squared distances cannot be negative")


def build_query_table(query: np.ndarray, model: QuantModel) -> QueryTable:
    """Exact squared distances from the query to all M*K codewords."""
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != model.dim:
        raise ValueError(f"query must be a vector of dimension {model.dim}")
    diff = model.codebooks - q[None, None, :]
    dists = np.einsum("mkd,mkd->mk", diff, diff)
    return QueryTable(dists=dists, query_norm_sq=float(q @ q))


def adc_distance(table: QueryTable, code: np.ndarray, eps: float = 0.0) -> float:
    """Approximate squared query-to-vector distance for one code."""
    m = table.dists.shape[0]
    code = np.asarray(code)
    if code.shape != (m,):
        raise ValueError(f"code must have shape ({m},)")
    lookup = float(table.dists[np.arange(m), code].sum())
    return lookup - (m - 1) * table.query_norm_sq + eps


def _eps_for_scan(model: QuantModel, codes: CodeMatrix):
    """Per-vector cross terms to add during a scan, resolved by eps mode."""
    if model.eps_mode in ("stored", "quantized"):
        if codes.eps is None:
            raise ValueError(f"{model.eps_mode} eps_mode requires eps values on the codes")
        return codes.eps
    if model.eps_mode == "eliminated":
        return float(model.eps0)
    return 0.0


def adc_scores(table: QueryTable, codes: CodeMatrix, model: QuantModel) -> np.ndarray:
    """Approximate squared distances from one query to every encoded vector."""
    m = table.dists.shape[0]
    total = table.dists[0][codes.codes[:, 0]].copy()
    for stage in range(1, m):
        total += table.dists[stage][codes.codes[:, stage]]
    return total - (m - 1) * table.query_norm_sq + _eps_for_scan(model, codes)


@dataclass
class SearchResult:
    """Ranked neighbors per query: ids and approximate squared distances."""

    ids: np.ndarray  # (Q, R)
    distances: np.ndarray  # (Q, R)


def exhaustive_search(
    query: np.ndarray, codes: CodeMatrix, model: QuantModel, r: int
) -> SearchResult:
    """Scan every encoded vector and return the top r by approximate distance."""
    return search_batch(np.asarray(query)[None, :], codes, model, r)


def search_batch(
    queries: np.ndarray, codes: CodeMatrix, model: QuantModel, r: int
) -> SearchResult:
    """exhaustive_search over a batch of queries."""
    queries = as_dataset(queries)
    n = codes.count
    if r < 1:
        raise ValueError("r must be >= 1")
    if r > n:
        warnings.warn(f"requested top-{r} from {n} vectors; clamping to {n}")
        r = n
    ids = np.empty((queries.shape[0], r), dtype=np.int64)
    dists = np.empty((queries.shape[0], r), dtype=np.float64)
    for qi in range(queries.shape[0]):
        table = build_query_table(queries[qi], model)
        scores = adc_scores(table, codes, model)
        top = np.argsort(scores, kind="stable")[:r]
        ids[qi] = top
        dists[qi] = scores[top]
    return SearchResult(ids=ids, distances=dists)


def ground_truth(queries: np.ndarray, database: np.ndarray, r: int) -> np.ndarray:
    """Exact Euclidean top-r ids by brute force, ties to the lower id."""
    queries = as_dataset(queries).astype(np.float64)
    database = as_dataset(database).astype(np.float64)
    if queries.shape[1] != database.shape[1]:
        raise ValueError("queries and database disagree on dimension")
    n = database.shape[0]
    if r < 1 or r > n:
        raise ValueError(f"r must be in [1, {n}]")
    db_norms = np.einsum("nd,nd->n", database, database)
    out = np.empty((queries.shape[0], r), dtype=np.int64)
    chunk = max(1, int(2e7) // max(n, 1))
    for lo in range(0, queries.shape[0], chunk):
        q = queries[lo : lo + chunk]
        scores = (
            np.einsum("qd,qd->q", q, q)[:, None] - 2.0 * (q @ database.T) + db_norms[None, :]
        )
        order = np.argsort(scores, axis=1, kind="stable")
        out[lo : lo + chunk] = order[:, :r]
    return out


def recall_at_r(result_ids: np.ndarray, truth_ids: np.ndarray, r: int) -> float:
    """Fraction of queries whose true nearest neighbor appears in the top r."""
    result_ids = np.asarray(result_ids)
    truth_ids = np.asarray(truth_ids)
    if result_ids.ndim != 2 or truth_ids.ndim != 2:
        raise ValueError("expected (Q, R) result ids and (Q, *) truth ids")
    if result_ids.shape[0] != truth_ids.shape[0]:
        raise ValueError("results and truth disagree on query count")
    if r < 1 or r > result_ids.shape[1]:
        raise ValueError(f"r must be in [1, {result_ids.shape[1]}]")
    hits = (result_ids[:, :r] == truth_ids[:, :1]).any(axis=1)
    return float(hits.mean())
