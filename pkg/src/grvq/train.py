"""Training loops: the iterative codebook re-optimization at the core of the
method, plus the stagewise residual and per-block baselines it generalizes.

One iteration = encode everything, pick one codebook, rebuild it against the
intermediate dataset X' = residual + that codebook's current contribution,
repeat. A sweep covers every codebook once.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import EpsPenalty, KMeansConfig, TransitionSchedule, transition_cluster, kmeans
from .encode import (
    BeamState,
    build_cross_tables,
    epsilons_from_tables,
    exhaustive_encode_batch,
    update_cross_tables,
    _beam_pass,
)
from .model import (
    CodeMatrix,
    QuantModel,
    as_dataset,
    codebook_variances,
    has_disjoint_supports,
    reconstruct_batch,
    reorder_by_variance,
)


@dataclass
class EpsRegularization:
    """Cross-term regularization schedule, in dataset-scale-free units.

    The effective weight is lam * mean_squared_norm / (initial eps variance),
    so lam_step = 0.01 nudges the penalty by the same relative amount on any
    dataset. lam starts at 0 and grows by lam_step per sweep up to lam_max.
    """

    lam_step: float = 0.01
    lam_max: float = 1.0

    def __post_init__(self):
        if self.lam_step < 0 or self.lam_max < 0:
            raise ValueError("lam_step and lam_max must be >= 0")


@dataclass
class TrainConfig:
    """Knobs for the training loops.

    Args:
        m_codebooks: number of additive stages M.
        k_codewords: codewords per codebook K.
        sweeps: full passes over the codebooks.
        pick_order: "random" draws a fresh no-replacement permutation per
            sweep; "sequential" walks codebooks in order (and lets encoding
            reuse the unchanged beam prefix between picks).
        beam_width: beam width L for encoding; 1 is greedy.
        seed: drives pick order and is recorded on the model.
        schedule: dimension schedule for transition clustering.
        kmeans: inner k-means settings.
        exhaustive: encode by scanning all K**M codes (tiny models only).
        early_stop_tol: stop when a full sweep improves the error by less
            than this relative amount; 0 disables.
        eps_regularization: enables cross-term regularized training.
    """

    m_codebooks: int
    k_codewords: int
    sweeps: int = 8
    pick_order: str = "random"
    beam_width: int = 10
    seed: int = 0
    schedule: TransitionSchedule = field(default_factory=TransitionSchedule)
    kmeans: KMeansConfig = field(default_factory=KMeansConfig)
    exhaustive: bool = False
    early_stop_tol: float = 1e-4
    eps_regularization: EpsRegularization | None = None

    def __post_init__(self):
        if self.m_codebooks < 1:
            raise ValueError("m_codebooks must be >= 1")
        if self.k_codewords < 2:
            raise ValueError("k_codewords must be >= 2")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.pick_order not in ("random", "sequential"):
            raise ValueError("pick_order must be 'random' or 'sequential'")
        if self.early_stop_tol < 0:
            raise ValueError("early_stop_tol must be >= 0")


@dataclass
class TrainReport:
    """Per-iteration training log; the last row reflects the final encode."""

    iterations: list = field(default_factory=list)
    codebook_picks: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    times_s: list = field(default_factory=list)
    lams: list = field(default_factory=list)
    eps_means: list = field(default_factory=list)
    eps_stds: list = field(default_factory=list)

    def add(self, iteration, pick, error, seconds, lam, eps_mean, eps_std):
        self.iterations.append(int(iteration))
        self.codebook_picks.append(int(pick))
        self.errors.append(float(error))
        self.times_s.append(float(seconds))
        self.lams.append(float(lam))
        self.eps_means.append(float(eps_mean))
        self.eps_stds.append(float(eps_std))

    @property
    def final_error(self) -> float:
        if not self.errors:
            raise ValueError("empty report")
        return self.errors[-1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["iteration", "codebook", "error", "time_s", "lambda", "eps_mean", "eps_std"]
            )
            for row in zip(
                self.iterations,
                self.codebook_picks,
                self.errors,
                self.times_s,
                self.lams,
                self.eps_means,
                self.eps_stds,
            ):
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _encode_all(x, codebooks, tables, cfg, lam, eps0, state, checkpoint_stage):
    """One full-dataset encode; returns codes, dists, eps, next checkpoint."""
    if cfg.exhaustive:
        codes, dists = exhaustive_encode_batch(x, QuantModel(codebooks, eps_mode="stored"))
        return codes, dists, epsilons_from_tables(tables, codes), None
    codes, dists, eps, _, ckpt = _beam_pass(
        x,
        codebooks,
        tables,
        cfg.beam_width,
        lam=lam,
        eps0=eps0,
        state=state,
        checkpoint_stage=checkpoint_stage,
    )
    return codes, dists, eps, ckpt


def _grvq_loop(x, cfg, init_codebooks, reorder_per_sweep=True, final_reorder=True):
    """Shared optimization loop; returns codebooks, codes, eps, report, lam, eps0."""
    n, d = x.shape
    m, k = cfg.m_codebooks, cfg.k_codewords
    codebooks = np.array(init_codebooks, dtype=np.float64, copy=True)
    if codebooks.shape != (m, k, d):
        raise ValueError(f"init codebooks must have shape {(m, k, d)}")
    tables = build_cross_tables(codebooks)
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport()

    reg = cfg.eps_regularization
    lam = 0.0
    eps0 = 0.0
    norm_factor = None
    mean_sq_norm = float(np.einsum("nd,nd->n", x, x).mean())

    codes = None
    eps_vec = np.zeros(n)
    checkpoint: BeamState | None = None
    iteration = 0
    sweep_first_errors = []

    for sweep in range(cfg.sweeps):
        if reorder_per_sweep:
            perm = np.argsort(-codebook_variances(codebooks), kind="stable")
            if not np.array_equal(perm, np.arange(m)):
                codebooks = codebooks[perm].copy()
                tables = build_cross_tables(codebooks)
                checkpoint = None  # stage order changed, cached prefixes are stale
        order = rng.permutation(m) if cfg.pick_order == "random" else np.arange(m)

        for j, pick in enumerate(order):
            t0 = time.perf_counter()
            state = None
            if cfg.pick_order == "sequential" and checkpoint is not None:
                state = checkpoint
            ckpt_stage = int(pick) if cfg.pick_order == "sequential" else None
            codes, dists, eps_vec, checkpoint = _encode_all(
                x, codebooks, tables, cfg, lam, eps0, state, ckpt_stage
            )
            error = float(dists.mean())
            if j == 0:
                sweep_first_errors.append(error)

            recon = reconstruct_batch(codebooks, codes)
            own = codebooks[pick][codes[:, pick]]
            xprime = x - recon + own
            penalty = None
            if reg is not None and lam > 0.0:
                other_sum = recon - own
                eps_other = eps_vec - 2.0 * np.einsum("nd,nd->n", own, other_sum)
                penalty = EpsPenalty(other_sum, eps_other, lam, eps0)
            codebooks[pick] = transition_cluster(
                xprime, codebooks[pick], cfg.schedule, cfg.kmeans, penalty=penalty
            )
            update_cross_tables(tables, codebooks, pick)
            report.add(
                iteration,
                pick,
                error,
                time.perf_counter() - t0,
                lam,
                eps_vec.mean(),
                eps_vec.std(),
            )
            iteration += 1

        if reg is not None:
            sweep_eps = epsilons_from_tables(tables, codes)
            if norm_factor is None:
                norm_factor = mean_sq_norm / (float(sweep_eps.var()) + 1e-30)
            eps0 = float(sweep_eps.mean())
            lam = min(lam + reg.lam_step * norm_factor, reg.lam_max * norm_factor)

        if (
            cfg.early_stop_tol > 0
            and len(sweep_first_errors) >= 2
            and sweep_first_errors[-2] - sweep_first_errors[-1]
            <= cfg.early_stop_tol * max(sweep_first_errors[-2], 1e-300)
        ):
            break

    t0 = time.perf_counter()
    state = checkpoint if cfg.pick_order == "sequential" else None
    codes, dists, eps_vec, _ = _encode_all(x, codebooks, tables, cfg, lam, eps0, state, None)
    report.add(
        iteration,
        -1,
        float(dists.mean()),
        time.perf_counter() - t0,
        lam,
        eps_vec.mean(),
        eps_vec.std(),
    )

    if final_reorder:
        perm = np.argsort(-codebook_variances(codebooks), kind="stable")
        codebooks = codebooks[perm].copy()
        codes = codes[:, perm].copy()
    return codebooks, codes, eps_vec, report, lam, eps0


def grvq_train(
    data: np.ndarray, cfg: TrainConfig, init: QuantModel | None = None
) -> tuple[QuantModel, CodeMatrix, TrainReport]:
    """Iterative codebook re-optimization from an all-zero or given start.

    Returns the trained model (codebooks sorted by descending variance),
    the final encoding of the training data, and the per-iteration report.
    """
    x = as_dataset(data).astype(np.float64)
    init_cb = _init_codebooks(x, cfg, init)
    if cfg.eps_regularization is not None:
        raise ValueError("use train_eps_eliminated for regularized training")
    codebooks, codes, eps_vec, report, _, _ = _grvq_loop(x, cfg, init_cb)
    if cfg.m_codebooks == 1:
        model = QuantModel(codebooks, eps_mode="none", variance_ordered=True, seed=cfg.seed)
        return model, CodeMatrix(codes, eps=None), report
    model = QuantModel(codebooks, eps_mode="stored", variance_ordered=True, seed=cfg.seed)
    return model, CodeMatrix(codes, eps=eps_vec), report


def train_eps_eliminated(
    data: np.ndarray, cfg: TrainConfig, init: QuantModel | None = None
) -> tuple[QuantModel, CodeMatrix, TrainReport]:
    """Regularized training that concentrates per-vector cross terms.

    Assignment and encoding both pay lam * (eps - eps0)^2 on top of the
    distortion; lam starts at 0 and grows each sweep while eps0 tracks the
    current mean cross term. The model records the final (eps0, lam) and
    searches use the shared constant instead of per-vector payloads.
    """
    x = as_dataset(data).astype(np.float64)
    if cfg.eps_regularization is None:
        cfg = replace(cfg, eps_regularization=EpsRegularization())
    init_cb = _init_codebooks(x, cfg, init)
    codebooks, codes, eps_vec, report, lam, _ = _grvq_loop(x, cfg, init_cb)
    model = QuantModel(
        codebooks,
        eps_mode="eliminated",
        eps0=float(eps_vec.mean()),
        lam=float(lam),
        variance_ordered=True,
        seed=cfg.seed,
    )
    return model, CodeMatrix(codes, eps=None), report


def _init_codebooks(x, cfg, init):
    m, k, d = cfg.m_codebooks, cfg.k_codewords, x.shape[1]
    if init is None:
        return np.zeros((m, k, d), dtype=np.float64)
    if init.codebooks.shape != (m, k, d):
        raise ValueError(
            f"init model shape {init.codebooks.shape} does not match config {(m, k, d)}"
        )
    return init.codebooks


def rvq_train(
    data: np.ndarray, m: int, k: int, cfg: TrainConfig | None = None
) -> tuple[QuantModel, CodeMatrix, TrainReport]:
    """Stagewise residual quantization: k-means per stage on what is left.

    Equivalent to one sequential greedy sweep of the main loop from zero
    codebooks; kept as an independent path so the equivalence is checkable.
    """
    x = as_dataset(data).astype(np.float64)
    cfg = cfg or TrainConfig(m_codebooks=m, k_codewords=k)
    n, d = x.shape
    codebooks = np.zeros((m, k, d), dtype=np.float64)
    codes = np.zeros((n, m), dtype=np.int32)
    report = TrainReport()
    resid = x.copy()
    for stage in range(m):
        t0 = time.perf_counter()
        centroids, assign, _ = kmeans(resid, k, np.zeros((k, d)), cfg.kmeans)
        codebooks[stage] = centroids
        codes[:, stage] = assign
        resid = resid - centroids[assign]
        error = float(np.einsum("nd,nd->n", resid, resid).mean())
        report.add(stage, stage, error, time.perf_counter() - t0, 0.0, 0.0, 0.0)

    mode = "none" if m == 1 else "stored"
    model = QuantModel(codebooks, eps_mode=mode, seed=cfg.seed)
    eps = None
    if mode == "stored":
        eps = epsilons_from_tables(build_cross_tables(codebooks), codes)
    model, code_matrix, _ = reorder_by_variance(model, CodeMatrix(codes, eps=eps))
    return model, code_matrix, report


def pq_train(
    data: np.ndarray, m: int, k: int, cfg: TrainConfig | None = None
) -> tuple[QuantModel, CodeMatrix, TrainReport]:
    """Product quantization: contiguous dimension blocks, k-means per block.

    Codewords live in the full space but are zero outside their block, so
    the cross term is identically zero and eps_mode is "none". The last
    block absorbs any remainder dimensions.
    """
    x = as_dataset(data).astype(np.float64)
    cfg = cfg or TrainConfig(m_codebooks=m, k_codewords=k)
    n, d = x.shape
    if m > d:
        raise ValueError(f"cannot split {d} dimensions into {m} blocks")
    base = d // m
    starts = [b * base for b in range(m)]
    stops = [b * base + base for b in range(m - 1)] + [d]

    codebooks = np.zeros((m, k, d), dtype=np.float64)
    codes = np.zeros((n, m), dtype=np.int32)
    report = TrainReport()
    resid = x.copy()
    for block, (lo, hi) in enumerate(zip(starts, stops)):
        t0 = time.perf_counter()
        centroids, assign, _ = kmeans(x[:, lo:hi], k, np.zeros((k, hi - lo)), cfg.kmeans)
        codebooks[block, :, lo:hi] = centroids
        codes[:, block] = assign
        resid[:, lo:hi] -= centroids[assign]
        error = float(np.einsum("nd,nd->n", resid, resid).mean())
        report.add(block, block, error, time.perf_counter() - t0, 0.0, 0.0, 0.0)

    model = QuantModel(codebooks, eps_mode="none", seed=cfg.seed)
    model, code_matrix, _ = reorder_by_variance(model, CodeMatrix(codes, eps=None))
    return model, code_matrix, report


def online_update(
    model: QuantModel,
    batch: np.ndarray,
    cfg: TrainConfig,
    codes_so_far: CodeMatrix | None = None,
) -> tuple[QuantModel, TrainReport]:
    """Refine an existing model on a new batch without touching old codes.

    Runs the usual sweeps initialized from the model, but skips all
    variance reordering so previously issued codes keep their stage
    alignment; their reconstructions drift as codewords move, and the
    caller re-encodes lazily if exactness matters. codes_so_far is accepted
    for interface symmetry and is not modified.
    """
    batch = np.asarray(batch)
    if batch.size == 0:
        return model, TrainReport()
    x = as_dataset(batch).astype(np.float64)
    if x.shape[1] != model.dim:
        raise ValueError("batch and model disagree on dimension")
    codebooks, _, _, report, _, _ = _grvq_loop(
        x, cfg, _init_codebooks(x, cfg, model), reorder_per_sweep=False, final_reorder=False
    )
    variances = codebook_variances(codebooks)
    mode = model.eps_mode
    if mode == "none" and cfg.m_codebooks > 1 and not has_disjoint_supports(codebooks):
        mode = "stored"  # updates filled dimensions outside the original blocks
    updated = QuantModel(
        codebooks,
        eps_mode=mode,
        eps_quantizer=model.eps_quantizer,
        eps0=model.eps0,
        lam=model.lam,
        variance_ordered=bool(np.all(np.diff(variances) <= 0)),
        seed=cfg.seed,
    )
    return updated, report
