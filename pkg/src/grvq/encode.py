"""Multi-path (beam) encoding against additive codebooks.

Per stage the beam extends every survivor with all K codewords, scoring the
exact prefix distortion from three cached pieces: codeword norms, fresh
point-codeword dots, and pairwise codeword cross dots. Keeping the running
cross term alongside also gives the regularized variant its eps estimate
for free.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import (
    CodeMatrix,
    EpsQuantizer,
    QuantModel,
    as_dataset,
    codebook_variances,
    reconstruct_batch,
)


@dataclass
class CrossDotTables:
    """Codeword norms plus pairwise inter-codebook dot products."""

    norms_sq: np.ndarray  # (M, K) squared codeword norms
    pair: dict  # (a, b) with a < b -> (K, K) array of c_a(j) . c_b(k)

    def cross(self, a: int, b: int) -> np.ndarray:
        """(K, K) table with rows indexed by codebook a, columns by b."""
        if a == b:
            raise ValueError("cross table is defined for distinct codebooks")
        return self.pair[(a, b)] if a < b else self.pair[(b, a)].T


def build_cross_tables(codebooks: np.ndarray) -> CrossDotTables:
    cb = np.asarray(codebooks, dtype=np.float64)
    norms = np.einsum("mkd,mkd->mk", cb, cb)
    pair = {}
    m = cb.shape[0]
    for a in range(m):
        for b in range(a + 1, m):
            pair[(a, b)] = cb[a] @ cb[b].T
    return CrossDotTables(norms_sq=norms, pair=pair)


def update_cross_tables(tables: CrossDotTables, codebooks: np.ndarray, m: int) -> None:
    """Refresh the rows involving codebook m after it was re-optimized."""
    cb = np.asarray(codebooks, dtype=np.float64)
    tables.norms_sq[m] = np.einsum("kd,kd->k", cb[m], cb[m])
    for a in range(cb.shape[0]):
        if a == m:
            continue
        key = (a, m) if a < m else (m, a)
        left, right = key
        tables.pair[key] = cb[left] @ cb[right].T


def epsilons_from_tables(tables: CrossDotTables, codes: np.ndarray) -> np.ndarray:
    """Exact per-vector cross terms via table lookups, accumulated in float64."""
    codes = np.asarray(codes)
    n, m = codes.shape
    eps = np.zeros(n, dtype=np.float64)
    for a in range(m):
        for b in range(a + 1, m):
            eps += 2.0 * tables.pair[(a, b)][codes[:, a], codes[:, b]]
    return eps


@dataclass
class BeamState:
    """Snapshot of the beam before a given stage; lets sequential training
    resume an encode instead of recomputing unchanged prefix stages."""

    stage: int
    codes: np.ndarray  # (N, B, stage)
    dist: np.ndarray  # (N, B) accumulated distortion
    eps: np.ndarray  # (N, B) accumulated cross term


def _beam_pass(
    x,
    codebooks,
    tables,
    width,
    lam=0.0,
    eps0=0.0,
    state: BeamState | None = None,
    checkpoint_stage: int | None = None,
):
    """Run beam search over all stages for a batch of vectors.

    Returns (codes, exact_dist, exact_eps, cached_dist, checkpoint). The
    exact values are recomputed from the winning code; cached_dist is the
    accumulated score kept by the beam, exposed for integrity checks.
    """
    n = x.shape[0]
    m_total, k, _ = codebooks.shape
    rows = np.arange(n)[:, None]

    if state is None:
        start = 0
        bc = np.zeros((n, 1, 0), dtype=np.int32)
        bd = np.einsum("nd,nd->n", x, x)[:, None].copy()
        be = np.zeros((n, 1), dtype=np.float64)
    else:
        start = state.stage
        bc = state.codes.copy()
        bd = state.dist.copy()
        be = state.eps.copy()

    checkpoint = None
    if checkpoint_stage is not None and checkpoint_stage == start:
        checkpoint = BeamState(start, bc.copy(), bd.copy(), be.copy())

    for stage in range(start, m_total):
        xc = x @ codebooks[stage].T  # (N, K)
        b = bc.shape[1]
        cross = np.zeros((n, b, k), dtype=np.float64)
        for prev in range(stage):
            cross += tables.cross(prev, stage)[bc[:, :, prev], :]
        cand_d = bd[:, :, None] + tables.norms_sq[stage][None, None, :]
        cand_d = cand_d - 2.0 * xc[:, None, :] + 2.0 * cross
        cand_e = be[:, :, None] + 2.0 * cross
        if lam > 0.0:
            score = cand_d + lam * (cand_e - eps0) ** 2
        else:
            score = cand_d
        flat = score.reshape(n, b * k)
        keep = min(width, b * k)
        # nested selection: step t admits children of beam slots <= t and
        # takes the best not yet chosen (ties to lower slot, then lower
        # codeword index). The kept set for width w is then a prefix of the
        # kept set for any larger width at every stage, so distortion is
        # non-increasing in width; plain top-L selection does not have that
        # property because a prefix can rank poorly mid-search yet finish
        # best. Step 1 alone reproduces greedy residual encoding.
        work = flat.copy()
        if b > 1:
            work[:, k:] = np.inf
        order = np.empty((n, keep), dtype=np.int64)
        arange_n = np.arange(n)
        for t in range(keep):
            if 0 < t < b:
                work[:, t * k : (t + 1) * k] = flat[:, t * k : (t + 1) * k]
            order[:, t] = np.argmin(work, axis=1)
            work[arange_n, order[:, t]] = np.inf
        slot = order // k
        word = (order % k).astype(np.int32)
        bc = np.concatenate([bc[rows, slot], word[:, :, None]], axis=2)
        bd = cand_d.reshape(n, b * k)[rows, order]
        be = cand_e.reshape(n, b * k)[rows, order]
        if checkpoint_stage is not None and checkpoint_stage == stage + 1:
            checkpoint = BeamState(stage + 1, bc.copy(), bd.copy(), be.copy())

    final_score = bd + lam * (be - eps0) ** 2 if lam > 0.0 else bd
    win = np.argmin(final_score, axis=1)
    arange_n = np.arange(n)
    codes = bc[arange_n, win, :].astype(np.int32)
    recon = reconstruct_batch(codebooks, codes)
    diff = x - recon
    dist = np.einsum("nd,nd->n", diff, diff)
    eps = epsilons_from_tables(tables, codes)
    return codes, dist, eps, bd[arange_n, win].copy(), checkpoint


def _warn_if_unordered(codebooks):
    variances = codebook_variances(codebooks)
    if np.any(np.diff(variances) > 0):
        warnings.warn(
            "codebooks are not in descending variance order; beam encoding "
            "quality degrades when low-variance stages come first",
            stacklevel=3,
        )


def multipath_encode(
    x: np.ndarray,
    model: QuantModel,
    tables: CrossDotTables | None = None,
    width: int = 10,
    warn_unordered: bool = True,
) -> tuple[np.ndarray, float]:
    """Beam-encode one vector; returns (code, exact distortion).

    Width 1 is greedy stage-by-stage encoding. Width >= K**(M-1) retains
    every prefix and therefore matches the exhaustive minimum.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise ValueError(f"expected a vector of dimension {model.dim}")
    if width < 1:
        raise ValueError("beam width must be >= 1")
    if warn_unordered:
        _warn_if_unordered(model.codebooks)
    if tables is None:
        tables = build_cross_tables(model.codebooks)
    codes, dist, _, _, _ = _beam_pass(x[None, :], model.codebooks, tables, width)
    return codes[0], float(dist[0])


def regularized_encode(
    x: np.ndarray,
    model: QuantModel,
    tables: CrossDotTables | None = None,
    width: int = 10,
    lam: float = 0.0,
    eps0: float = 0.0,
) -> tuple[np.ndarray, float, float]:
    """Beam encoding scored by distortion plus lam * (eps - eps0)^2.

    With lam = 0 the penalty term is exactly zero, so codes are
    byte-identical to multipath_encode. Returns (code, distortion, eps).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise ValueError(f"expected a vector of dimension {model.dim}")
    if width < 1:
        raise ValueError("beam width must be >= 1")
    if lam < 0.0:
        raise ValueError("lam must be >= 0")
    if tables is None:
        tables = build_cross_tables(model.codebooks)
    codes, dist, eps, _, _ = _beam_pass(
        x[None, :], model.codebooks, tables, width, lam=lam, eps0=eps0
    )
    return codes[0], float(dist[0]), float(eps[0])


_EXHAUSTIVE_LIMIT = 1_000_000
_CHUNK_CODES = 8192


def _code_grid(m: int, k: int) -> np.ndarray:
    """All K**M codes in lexicographic order (first stage most significant)."""
    total = k ** m
    if total > _EXHAUSTIVE_LIMIT:
        raise ValueError(f"K**M = {total} exceeds the exhaustive limit {_EXHAUSTIVE_LIMIT}")
    return np.indices((k,) * m).reshape(m, -1).T.astype(np.int32)


def exhaustive_encode_batch(data: np.ndarray, model: QuantModel) -> tuple[np.ndarray, np.ndarray]:
    """Exact minimum-distortion codes by scanning all K**M combinations.

    Ties resolve to the lexicographically smallest code because the grid is
    scanned in lexicographic order with strict improvement. Distortions are
    recomputed directly from the winning reconstruction.
    """
    x = as_dataset(data).astype(np.float64)
    m, k = model.m_codebooks, model.k_codewords
    grid = _code_grid(m, k)
    n = x.shape[0]
    x_norms = np.einsum("nd,nd->n", x, x)
    best_s = np.full(n, np.inf)
    best_c = np.zeros((n, m), dtype=np.int32)
    for lo in range(0, grid.shape[0], _CHUNK_CODES):
        chunk = grid[lo : lo + _CHUNK_CODES]
        recon = reconstruct_batch(model.codebooks, chunk)  # (C, d)
        score = (
            x_norms[:, None]
            - 2.0 * (x @ recon.T)
            + np.einsum("cd,cd->c", recon, recon)[None, :]
        )
        idx = np.argmin(score, axis=1)
        val = score[np.arange(n), idx]
        better = val < best_s
        best_s[better] = val[better]
        best_c[better] = chunk[idx[better]]
    diff = x - reconstruct_batch(model.codebooks, best_c)
    return best_c, np.einsum("nd,nd->n", diff, diff)


def exhaustive_encode(x: np.ndarray, model: QuantModel) -> tuple[np.ndarray, float]:
    """Exact best code for a single vector; see exhaustive_encode_batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise ValueError(f"expected a vector of dimension {model.dim}")
    codes, dists = exhaustive_encode_batch(x[None, :], model)
    return codes[0], float(dists[0])


def eps_quantizer_fit(eps_values: np.ndarray, bits: int, seed: int = 0) -> EpsQuantizer:
    """Fit 2**bits scalar levels to eps values with seeded 1-d Lloyd k-means.

    Fewer distinct values than levels is legal; surplus levels collapse
    onto duplicates.
    """
    values = np.asarray(eps_values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot fit a quantizer to an empty sample")
    if bits < 1 or bits > 16:
        raise ValueError("bits must be in [1, 16]")
    n_levels = min(2 ** bits, values.size)
    rng = np.random.default_rng(seed)
    levels = np.sort(rng.choice(values, size=n_levels, replace=False))
    for _ in range(50):
        mids = (levels[:-1] + levels[1:]) / 2.0
        idx = np.searchsorted(mids, values, side="left")
        sums = np.bincount(idx, weights=values, minlength=n_levels)
        counts = np.bincount(idx, minlength=n_levels)
        new_levels = levels.copy()
        filled = counts > 0
        new_levels[filled] = sums[filled] / counts[filled]
        new_levels = np.sort(new_levels)
        if np.array_equal(new_levels, levels):
            break
        levels = new_levels
    return EpsQuantizer(bits=bits, levels=levels)


def encode_dataset(
    data: np.ndarray,
    model: QuantModel,
    tables: CrossDotTables | None = None,
    width: int = 10,
    warn_unordered: bool = True,
    chunk: int = 8192,
) -> CodeMatrix:
    """Encode a dataset under the model's eps mode.

    Stored mode keeps exact per-vector cross terms, quantized mode passes
    them through the model's fitted quantizer, eliminated mode encodes with
    the regularized objective at the model's recorded (lam, eps0) and keeps
    no payload, none keeps no payload.
    """
    x = as_dataset(data).astype(np.float64)
    if x.shape[1] != model.dim:
        raise ValueError("data and model disagree on dimension")
    if model.eps_mode == "quantized" and model.eps_quantizer is None:
        raise ValueError("model lacks a fitted eps quantizer")
    if warn_unordered:
        _warn_if_unordered(model.codebooks)
    if tables is None:
        tables = build_cross_tables(model.codebooks)
    lam = model.lam if model.eps_mode == "eliminated" else 0.0
    eps0 = model.eps0 if model.eps_mode == "eliminated" else 0.0

    all_codes = []
    all_eps = []
    for lo in range(0, x.shape[0], chunk):
        codes, _, eps, _, _ = _beam_pass(
            x[lo : lo + chunk], model.codebooks, tables, width, lam=lam, eps0=eps0
        )
        all_codes.append(codes)
        all_eps.append(eps)
    codes = np.concatenate(all_codes, axis=0)
    eps = np.concatenate(all_eps, axis=0)

    if model.eps_mode == "stored":
        return CodeMatrix(codes, eps=eps)
    if model.eps_mode == "quantized":
        deq = model.eps_quantizer.dequantize(model.eps_quantizer.quantize(eps))
        return CodeMatrix(codes, eps=deq)
    return CodeMatrix(codes, eps=None)
