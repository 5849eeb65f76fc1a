"""File formats: TexMex-style vector files, model and code archives, and a
seeded synthetic data generator.

Vector files are a sequence of records, each a little-endian int32 dimension
header followed by the payload (float32 for fvecs, uint8 for bvecs, int32
for ivecs). Model and code files are small binary archives with explicit
magic and version; codewords are serialized as float32, codes as one byte
per stage when K <= 256 and two bytes up to K = 65536.
"""

from __future__ import annotations

import struct

import numpy as np

from .model import CodeMatrix, EpsQuantizer, QuantModel

_VECS_KINDS = {
    "fvecs": (np.dtype("<f4"), 4),
    "bvecs": (np.dtype("u1"), 1),
    "ivecs": (np.dtype("<i4"), 4),
}

MODEL_MAGIC = b"GRVQ"
CODES_MAGIC = b"GRVC"
FORMAT_VERSION = 1

_EPS_TAGS = {"stored": 0, "quantized": 1, "eliminated": 2, "none": 3}
_EPS_NAMES = {v: k for k, v in _EPS_TAGS.items()}


def _kind_for(path, kind):
    if kind is None:
        kind = str(path).rsplit(".", 1)[-1].lower()
    if kind not in _VECS_KINDS:
        raise ValueError(f"unknown vector file kind {kind!r} (fvecs, bvecs, ivecs)")
    return kind


def read_vecs(path, kind: str | None = None, limit: int | None = None) -> np.ndarray:
    """Read a vector file into an (N, d) array.

    bvecs payloads widen to float32; ivecs stay int32. The byte length must
    be a whole number of records and every record must agree on d.
    """
    kind = _kind_for(path, kind)
    dtype, width = _VECS_KINDS[kind]
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        out_dtype = np.float32 if kind in ("fvecs", "bvecs") else np.int32
        return np.empty((0, 0), dtype=out_dtype)
    if raw.size < 4:
        raise ValueError(f"{path}: truncated header")
    d = int(np.frombuffer(raw[:4].tobytes(), dtype="<i4")[0])
    if d < 1:
        raise ValueError(f"{path}: non-positive dimension {d}")
    record = 4 + d * width
    if raw.size % record != 0:
        raise ValueError(
            f"{path}: byte length {raw.size} is not a whole number of {record}-byte records"
        )
    rows = raw.reshape(-1, record)
    if limit is not None:
        if limit < 1:
            raise ValueError("limit must be >= 1")
        rows = rows[:limit]
    headers = rows[:, :4].copy().view("<i4").ravel()
    if not np.all(headers == d):
        raise ValueError(f"{path}: inconsistent dimension headers")
    payload = rows[:, 4:].copy().view(dtype).reshape(rows.shape[0], d)
    if kind == "bvecs":
        return payload.astype(np.float32)
    if kind == "fvecs":
        return payload.astype(np.float32, copy=False)
    return payload.astype(np.int32, copy=False)


def write_vecs(path, data: np.ndarray, kind: str | None = None) -> None:
    """Write an (N, d) array as a vector file; inverse of read_vecs."""
    kind = _kind_for(path, kind)
    dtype, width = _VECS_KINDS[kind]
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise ValueError("expected a non-empty (N, d) array")
    n, d = data.shape
    if kind == "bvecs":
        if np.any(data < 0) or np.any(data > 255) or np.any(data != np.round(data)):
            raise ValueError("bvecs payload must be integers in [0, 255]")
        payload = data.astype(np.uint8)
    elif kind == "ivecs":
        payload = data.astype("<i4")
    else:
        payload = data.astype("<f4")
    rows = np.empty((n, 4 + d * width), dtype=np.uint8)
    rows[:, :4] = np.frombuffer(struct.pack("<i", d), dtype=np.uint8)
    rows[:, 4:] = payload.view(np.uint8).reshape(n, d * width)
    rows.tofile(path)


def write_model(path, model: QuantModel) -> None:
    """Serialize a model; codewords are stored as little-endian float32."""
    m, k, d = model.codebooks.shape
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<III", d, m, k))
        fh.write(struct.pack("<BB", _EPS_TAGS[model.eps_mode], int(model.variance_ordered)))
        fh.write(struct.pack("<q", int(model.seed)))
        if model.eps_mode == "quantized":
            levels = model.eps_quantizer.levels
            fh.write(struct.pack("<BI", model.eps_quantizer.bits, levels.size))
            fh.write(levels.astype("<f8").tobytes())
        elif model.eps_mode == "eliminated":
            fh.write(struct.pack("<dd", float(model.eps0), float(model.lam)))
        fh.write(model.codebooks.astype("<f4").tobytes())


def read_model(path) -> QuantModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise ValueError(f"{path}: truncated model file")
        out = struct.unpack_from(fmt, blob, off)
        off += size
        return out

    if blob[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    off = 4
    (version,) = take("<I")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    d, m, k = take("<III")
    tag, ordered = take("<BB")
    (seed,) = take("<q")
    if tag not in _EPS_NAMES:
        raise ValueError(f"{path}: unknown eps tag {tag}")
    mode = _EPS_NAMES[tag]
    quantizer = None
    eps0 = 0.0
    lam = 0.0
    if mode == "quantized":
        bits, n_levels = take("<BI")
        raw = blob[off : off + 8 * n_levels]
        if len(raw) != 8 * n_levels:
            raise ValueError(f"{path}: truncated quantizer levels")
        off += 8 * n_levels
        quantizer = EpsQuantizer(bits=bits, levels=np.frombuffer(raw, dtype="<f8").copy())
    elif mode == "eliminated":
        eps0, lam = take("<dd")
    expected = 4 * m * k * d
    raw = blob[off : off + expected]
    if len(raw) != expected or off + expected != len(blob):
        raise ValueError(f"{path}: codeword payload size mismatch")
    codebooks = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(m, k, d)
    return QuantModel(
        codebooks,
        eps_mode=mode,
        eps_quantizer=quantizer,
        eps0=float(eps0),
        lam=float(lam),
        variance_ordered=bool(ordered),
        seed=int(seed),
    )


def write_codes(path, codes: CodeMatrix, model: QuantModel) -> None:
    """Serialize codes under the model's eps mode.

    Stored mode appends one float32 cross term per vector; quantized mode
    appends quantizer indices (one or two bytes per vector by bit depth);
    eliminated and none append nothing.
    """
    n, m = codes.codes.shape
    k = model.k_codewords
    if k > 65536:
        raise ValueError("codes files support K <= 65536")
    if codes.codes.size and (codes.codes.min() < 0 or codes.codes.max() >= k):
        raise ValueError("codeword index out of range for the model")
    code_dtype = np.dtype("u1") if k <= 256 else np.dtype("<u2")
    with open(path, "wb") as fh:
        fh.write(CODES_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<III", n, m, k))
        fh.write(struct.pack("<B", _EPS_TAGS[model.eps_mode]))
        fh.write(codes.codes.astype(code_dtype).tobytes())
        if model.eps_mode == "stored":
            if codes.eps is None:
                raise ValueError("stored eps_mode requires eps values on the codes")
            fh.write(codes.eps.astype("<f4").tobytes())
        elif model.eps_mode == "quantized":
            if codes.eps is None:
                raise ValueError("quantized eps_mode requires eps values on the codes")
            idx = model.eps_quantizer.quantize(codes.eps)
            idx_dtype = np.dtype("u1") if model.eps_quantizer.bits <= 8 else np.dtype("<u2")
            fh.write(struct.pack("<B", idx_dtype.itemsize))
            fh.write(idx.astype(idx_dtype).tobytes())


def read_codes(path, model: QuantModel | None = None) -> CodeMatrix:
    """Read a codes file; quantized payloads need the owning model to map
    indices back to eps values."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CODES_MAGIC:
        raise ValueError(f"{path}: not a codes file (bad magic)")
    version, n, m, k = struct.unpack_from("<IIII", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported codes version {version}")
    (tag,) = struct.unpack_from("<B", blob, 20)
    if tag not in _EPS_NAMES:
        raise ValueError(f"{path}: unknown eps tag {tag}")
    mode = _EPS_NAMES[tag]
    off = 21
    code_dtype = np.dtype("u1") if k <= 256 else np.dtype("<u2")
    body = n * m * code_dtype.itemsize
    raw = blob[off : off + body]
    if len(raw) != body:
        raise ValueError(f"{path}: truncated code payload")
    codes = np.frombuffer(raw, dtype=code_dtype).astype(np.int32).reshape(n, m)
    off += body
    eps = None
    if mode == "stored":
        raw = blob[off : off + 4 * n]
        if len(raw) != 4 * n or off + 4 * n != len(blob):
            raise ValueError(f"{path}: eps payload size mismatch")
        eps = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    elif mode == "quantized":
        (width,) = struct.unpack_from("<B", blob, off)
        off += 1
        idx_dtype = np.dtype("u1") if width == 1 else np.dtype("<u2")
        raw = blob[off : off + width * n]
        if len(raw) != width * n or off + width * n != len(blob):
            raise ValueError(f"{path}: eps index payload size mismatch")
        if model is None or model.eps_quantizer is None:
            raise ValueError("quantized codes need the owning model's eps quantizer")
        eps = model.eps_quantizer.dequantize(np.frombuffer(raw, dtype=idx_dtype).astype(np.int64))
    elif off != len(blob):
        raise ValueError(f"{path}: trailing bytes after code payload")
    return CodeMatrix(codes, eps=eps)


def gen_synthetic(
    n: int, d: int, clusters: int = 1, correlation: float = 0.0, seed: int = 0
) -> np.ndarray:
    """Seeded Gaussian mixture with a first-order-autocorrelated covariance.

    The shared covariance carries the eigenvalue spectrum of the Toeplitz
    matrix correlation**|i-j| placed on a random orthonormal basis, so
    correlation 0 gives isotropic data and values near 1 concentrate the
    variance in a few leading directions the way real descriptor sets do.
    Cluster centers are drawn from a scaled copy of the same covariance.
    Returns float32.
    """
    if n < 1 or d < 1 or clusters < 1:
        raise ValueError("n, d and clusters must be >= 1")
    if not 0.0 <= correlation < 1.0:
        raise ValueError("correlation must be in [0, 1)")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    idx = np.arange(d)
    cov = correlation ** np.abs(idx[:, None] - idx[None, :])
    eigvals = np.linalg.eigvalsh(cov)[::-1]
    scales = np.sqrt(np.clip(eigvals, 0.0, None))
    factor = basis * scales[None, :]  # covariance factor: cov = factor @ factor.T
    centers = (rng.standard_normal((clusters, d)) * 2.0) @ factor.T
    labels = rng.integers(0, clusters, size=n)
    noise = rng.standard_normal((n, d)) @ factor.T
    return (centers[labels] + noise).astype(np.float32)
