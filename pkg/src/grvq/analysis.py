"""Diagnostics over encoded datasets: code-usage entropy, pairwise mutual
information between codebooks, and error as stages accumulate.

Entropy near log2(K) with near-zero pairwise MI is the signature of codes
that spend their bits well; residual-style training famously decays in both
as stages deepen.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import CodeMatrix, QuantModel, as_dataset


def _column(codes: CodeMatrix, m: int) -> np.ndarray:
    if m < 0 or m >= codes.codes.shape[1]:
        raise ValueError(f"codebook index {m} out of range")
    return codes.codes[:, m]


def encoding_entropy(codes: CodeMatrix, m: int, k: int | None = None) -> float:
    """Plug-in entropy (bits) of codeword usage in column m."""
    col = _column(codes, m)
    counts = np.bincount(col, minlength=k or 0)
    p = counts[counts > 0] / col.shape[0]
    return float(-(p * np.log2(p)).sum())


def mutual_information(codes: CodeMatrix, i: int, j: int, k: int | None = None) -> float:
    """Plug-in mutual information (bits) between code columns i and j.

    The plug-in estimate can dip slightly negative on independent columns;
    it is clamped to zero. i == j is rejected: use encoding_entropy.
    """
    if i == j:
        raise ValueError("mutual information of a column with itself; use encoding_entropy")
    a = _column(codes, i)
    b = _column(codes, j)
    k = k or int(max(a.max(), b.max())) + 1
    n = a.shape[0]
    joint = np.zeros((k, k), dtype=np.float64)
    np.add.at(joint, (a, b), 1.0)
    joint /= n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    mask = joint > 0
    mi = (joint[mask] * np.log2(joint[mask] / np.outer(pa, pb)[mask])).sum()
    return max(float(mi), 0.0)


@dataclass
class MutualInfoMatrix:
    """(M, M) bits: diagonal holds entropies, off-diagonal pairwise MI."""

    values: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "bits"])
            m = self.values.shape[0]
            for i in range(m):
                for j in range(m):
                    writer.writerow([i, j, repr(float(self.values[i, j]))])


def mutual_info_matrix(codes: CodeMatrix, k: int | None = None) -> MutualInfoMatrix:
    """Entropy/MI summary for all codebook pairs."""
    m = codes.codes.shape[1]
    values = np.zeros((m, m), dtype=np.float64)
    for i in range(m):
        values[i, i] = encoding_entropy(codes, i, k)
        for j in range(i + 1, m):
            mi = mutual_information(codes, i, j, k)
            values[i, j] = mi
            values[j, i] = mi
    return MutualInfoMatrix(values=values)


def error_vs_stages(
    data: np.ndarray, model: QuantModel, codes: CodeMatrix
) -> list[tuple[int, float]]:
    """Mean squared error using only the first m codebooks, for m = 1..M.

    The trailing value equals the full quantization error. Stages count the
    codebooks in model order, so a variance-ordered model shows the
    steepest drops first.
    """
    x = as_dataset(data).astype(np.float64)
    if x.shape[0] != codes.count:
        raise ValueError("data and codes disagree on vector count")
    if x.shape[1] != model.dim:
        raise ValueError("data and model disagree on dimension")
    out = []
    partial = np.zeros_like(x)
    for m in range(model.m_codebooks):
        partial += model.codebooks[m][codes.codes[:, m]]
        diff = x - partial
        out.append((m + 1, float(np.einsum("nd,nd->n", diff, diff).mean())))
    return out


def write_error_vs_stages_csv(pairs: list[tuple[int, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stages", "error"])
        for m, err in pairs:
            writer.writerow([m, repr(float(err))])
