"""Core additive quantization model: codebooks, codes, reconstruction algebra.

A model holds M codebooks of K codewords each, all living in the full
d-dimensional space. A vector is approximated by the sum of one codeword per
codebook; the per-vector cross term eps = sum_{a != b} c_a . c_b is what makes
the compressed-domain distance computation exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_MODES = ("stored", "quantized", "eliminated", "none")


@dataclass
class EpsQuantizer:
    """Scalar quantizer for per-vector eps values (1-d k-means levels)."""

    bits: int
    levels: np.ndarray  # sorted ascending, up to 2**bits entries

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.float64)
        if self.bits < 1 or self.bits > 16:
            raise ValueError(f"bits must be in [1, 16], got {self.bits}")
        if self.levels.ndim != 1 or self.levels.size < 1:
            raise ValueError("levels must be a non-empty 1-d array")
        if self.levels.size > 2 ** self.bits:
            raise ValueError("more levels than 2**bits")
        if np.any(np.diff(self.levels) < 0):
            raise ValueError("levels must be sorted ascending")

    def quantize(self, values: np.ndarray) -> np.ndarray:
        """Map each value to the index of its nearest level (ties to lower)."""
        values = np.asarray(values, dtype=np.float64)
        if self.levels.size == 1:
            return np.zeros(values.shape, dtype=np.int64)
        # boundary at the midpoint between adjacent levels; a value exactly on
        # a midpoint goes to the lower level
        mids = (self.levels[:-1] + self.levels[1:]) / 2.0
        return np.searchsorted(mids, values, side="left")

    def dequantize(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices)
        if indices.size and (indices.min() < 0 or indices.max() >= self.levels.size):
            raise ValueError("quantizer index out of range")
        return self.levels[indices]


@dataclass
class QuantModel:
    """Additive quantizer: M codebooks of K codewords in d dimensions.

    Args:
        codebooks: (M, K, d) array of codewords, finite.
        eps_mode: how the cross term is handled at search time, one of
            "stored", "quantized", "eliminated", "none".
        eps_quantizer: fitted scalar quantizer, required for "quantized".
        eps0: shared cross-term constant recorded by regularized training.
        lam: final regularization weight recorded by regularized training.
        variance_ordered: True when codebooks are sorted by descending
            codeword variance (the order beam encoding expects).
        seed: seed the model was trained with.
    """

    codebooks: np.ndarray
    eps_mode: str = "stored"
    eps_quantizer: EpsQuantizer | None = None
    eps0: float = 0.0
    lam: float = 0.0
    variance_ordered: bool = False
    seed: int = 0

    def __post_init__(self):
        self.codebooks = np.asarray(self.codebooks, dtype=np.float64)
        if self.codebooks.ndim != 3:
            raise ValueError("codebooks must have shape (M, K, d)")
        m, k, d = self.codebooks.shape
        if m < 1 or k < 1 or d < 1:
            raise ValueError(f"degenerate codebook shape {(m, k, d)}")
        if not np.all(np.isfinite(self.codebooks)):
            raise ValueError("codewords must be finite")
        if self.eps_mode not in EPS_MODES:
            raise ValueError(f"unknown eps_mode {self.eps_mode!r}")
        if self.eps_mode == "quantized" and self.eps_quantizer is None:
            raise ValueError("quantized eps_mode requires a fitted eps_quantizer")
        if self.eps_mode == "none" and m > 1 and not has_disjoint_supports(self.codebooks):
            raise ValueError(
                "eps_mode 'none' requires M == 1 or codebooks with disjoint "
                "dimension support (the cross term is not identically zero)"
            )

    @property
    def m_codebooks(self) -> int:
        return self.codebooks.shape[0]

    @property
    def k_codewords(self) -> int:
        return self.codebooks.shape[1]

    @property
    def dim(self) -> int:
        return self.codebooks.shape[2]


@dataclass
class CodeMatrix:
    """Encoded dataset: one codeword index per codebook per vector.

    eps holds the per-vector cross term (exact, or dequantized) when the
    owning model stores it; None under "eliminated" and "none" modes.
    """

    codes: np.ndarray  # (N, M) integer, 0-based
    eps: np.ndarray | None = None  # (N,) float64

    def __post_init__(self):
        self.codes = np.asarray(self.codes)
        if self.codes.ndim != 2:
            raise ValueError("codes must have shape (N, M)")
        if not np.issubdtype(self.codes.dtype, np.integer):
            raise ValueError("codes must be integers")
        if self.eps is not None:
            self.eps = np.asarray(self.eps, dtype=np.float64)
            if self.eps.shape != (self.codes.shape[0],):
                raise ValueError("eps must have one value per vector")

    @property
    def count(self) -> int:
        return self.codes.shape[0]


def as_dataset(data) -> np.ndarray:
    """Validate a (N, d) vector set: 2-d, finite, at least one vector."""
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise ValueError(f"expected a (N, d) array, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("vectors must be finite")
    return data


def has_disjoint_supports(codebooks: np.ndarray) -> bool:
    """True when no dimension is touched by more than one codebook."""
    active = (np.abs(codebooks) > 0).any(axis=1)  # (M, d)
    return bool((active.sum(axis=0) <= 1).all())


def _check_code(code: np.ndarray, m: int, k: int) -> np.ndarray:
    code = np.asarray(code)
    if code.shape != (m,):
        raise ValueError(f"code must have one index per codebook, shape ({m},)")
    if code.size and (code.min() < 0 or code.max() >= k):
        raise ValueError(f"codeword index out of range [0, {k})")
    return code.astype(np.int64)


def reconstruct(model: QuantModel, code: np.ndarray) -> np.ndarray:
    """Sum of the selected codeword from each codebook."""
    code = _check_code(code, model.m_codebooks, model.k_codewords)
    return model.codebooks[np.arange(model.m_codebooks), code].sum(axis=0)


def reconstruct_batch(codebooks: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Reconstructions for a whole code matrix; stage sums in codebook order."""
    m = codebooks.shape[0]
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[1] != m:
        raise ValueError("codes must have shape (N, M)")
    if codes.size and (codes.min() < 0 or codes.max() >= codebooks.shape[1]):
        raise ValueError("codeword index out of range")
    recon = codebooks[0][codes[:, 0]].copy()
    for j in range(1, m):
        recon += codebooks[j][codes[:, j]]
    return recon


def residuals(data: np.ndarray, model: QuantModel, codes: CodeMatrix) -> np.ndarray:
    """data minus reconstructions, computed in float64."""
    data = as_dataset(data)
    if data.shape[0] != codes.count:
        raise ValueError("data and codes disagree on vector count")
    if data.shape[1] != model.dim:
        raise ValueError("data and model disagree on dimension")
    return data.astype(np.float64) - reconstruct_batch(model.codebooks, codes.codes)


def quantization_error(data: np.ndarray, model: QuantModel, codes: CodeMatrix) -> float:
    """Mean squared reconstruction error over the dataset."""
    r = residuals(data, model, codes)
    return float(np.einsum("nd,nd->n", r, r).mean())


def epsilon_of(model: QuantModel, code: np.ndarray) -> float:
    """Cross term of one code: sum over ordered pairs a != b of c_a . c_b."""
    code = _check_code(code, model.m_codebooks, model.k_codewords)
    sel = model.codebooks[np.arange(model.m_codebooks), code]  # (M, d)
    total = 0.0
    for a in range(model.m_codebooks):
        for b in range(model.m_codebooks):
            if a != b:
                total += float(sel[a] @ sel[b])
    return total


def codebook_variances(codebooks: np.ndarray) -> np.ndarray:
    """Per-codebook scatter: mean squared distance of codewords to their mean."""
    cb = np.asarray(codebooks, dtype=np.float64)
    centered = cb - cb.mean(axis=1, keepdims=True)
    return np.einsum("mkd,mkd->m", centered, centered) / cb.shape[1]


def reorder_by_variance(
    model: QuantModel, codes: CodeMatrix | None = None
) -> tuple[QuantModel, CodeMatrix | None, np.ndarray]:
    """Sort codebooks by descending codeword variance.

    Returns a new model, the codes with columns permuted identically (when
    given), and the permutation applied. Reconstructions are unchanged: the
    sum over codebooks does not depend on their order.
    """
    variances = codebook_variances(model.codebooks)
    perm = np.argsort(-variances, kind="stable")
    reordered = QuantModel(
        codebooks=model.codebooks[perm].copy(),
        eps_mode=model.eps_mode,
        eps_quantizer=model.eps_quantizer,
        eps0=model.eps0,
        lam=model.lam,
        variance_ordered=True,
        seed=model.seed,
    )
    new_codes = None
    if codes is not None:
        new_codes = CodeMatrix(codes.codes[:, perm].copy(), eps=codes.eps)
    return reordered, new_codes, perm
