"""Training loops: the main iterative optimizer, its reductions to plain
k-means / residual / per-block quantization, regularized training, and
streaming updates."""

from dataclasses import replace

import numpy as np
import pytest

from grvq.clustering import KMeansConfig, TransitionSchedule, kmeans
from grvq.dataio import gen_synthetic
from grvq.encode import encode_dataset
from grvq.model import QuantModel, quantization_error, reconstruct_batch
from grvq.train import (
    EpsRegularization,
    TrainConfig,
    TrainReport,
    grvq_train,
    online_update,
    pq_train,
    rvq_train,
    train_eps_eliminated,
)


@pytest.fixture(scope="module")
def blobs():
    return gen_synthetic(500, 8, clusters=6, correlation=0.6, seed=3).astype(np.float64)


def test_single_codebook_reduces_to_kmeans(blobs):
    cfg = TrainConfig(
        m_codebooks=1,
        k_codewords=8,
        sweeps=1,
        schedule=TransitionSchedule(steps=1),
        seed=0,
        kmeans=KMeansConfig(seed=0),
    )
    model, codes, report = grvq_train(blobs, cfg)
    _, assign, history = kmeans(blobs, 8, np.zeros((8, 8)), KMeansConfig(seed=0))
    assert report.final_error == pytest.approx(history[-1], rel=1e-9)
    assert np.array_equal(codes.codes[:, 0], assign)
    assert model.eps_mode == "none"


def test_sequential_greedy_single_sweep_is_rvq(blobs):
    cfg = TrainConfig(
        m_codebooks=3,
        k_codewords=4,
        sweeps=1,
        pick_order="sequential",
        beam_width=1,
        schedule=TransitionSchedule(steps=1),
        early_stop_tol=0.0,
        seed=0,
        kmeans=KMeansConfig(seed=0),
    )
    gm, gc, _ = grvq_train(blobs, cfg)
    rm, rc, _ = rvq_train(blobs, 3, 4, cfg)
    assert np.array_equal(gc.codes, rc.codes)
    # intermediate residuals differ only in float summation order, so the
    # codebooks agree to rounding, not bitwise
    assert np.allclose(gm.codebooks, rm.codebooks, rtol=1e-9, atol=1e-12)
    assert np.allclose(gc.eps, rc.eps, rtol=1e-9, atol=1e-10)


def test_beats_rvq_given_revisit_sweeps(blobs):
    cfg = TrainConfig(
        m_codebooks=2, k_codewords=4, sweeps=6, seed=0, kmeans=KMeansConfig(seed=0)
    )
    gm, gc, _ = grvq_train(blobs, cfg)
    rm, rc, _ = rvq_train(blobs, 2, 4, cfg)
    assert quantization_error(blobs, gm, gc) <= quantization_error(blobs, rm, rc) + 1e-9


def test_rvq_every_stage_improves(blobs):
    _, _, report = rvq_train(blobs, 4, 8)
    errs = np.array(report.errors)
    assert np.all(errs[1:] < errs[:-1])


def test_rvq_single_stage_mode_and_reorder():
    data = gen_synthetic(200, 4, clusters=3, seed=1).astype(np.float64)
    model, codes, _ = rvq_train(data, 1, 4)
    assert model.eps_mode == "none"
    assert codes.eps is None
    model3, _, _ = rvq_train(data, 3, 4)
    variances = np.einsum("mkd,mkd->m", model3.codebooks, model3.codebooks)
    assert np.all(np.diff(variances) <= 1e-12)


class TestPq:
    def test_blockwise_equals_independent_kmeans(self):
        rng = np.random.default_rng(5)
        data = rng.standard_normal((100, 4))
        model, codes, _ = pq_train(data, 2, 2, TrainConfig(m_codebooks=2, k_codewords=2))
        # reorder may swap blocks; identify each block by its support
        for lo, hi in ((0, 2), (2, 4)):
            block = [
                b
                for b in range(2)
                if np.any(model.codebooks[b, :, lo:hi]) or not np.any(model.codebooks[b])
            ]
            centroids, assign, _ = kmeans(
                data[:, lo:hi], 2, np.zeros((2, 2)), KMeansConfig()
            )
            match = [
                b for b in range(2) if np.allclose(model.codebooks[b, :, lo:hi], centroids)
            ]
            assert match, f"no codebook holds the k-means centroids of block {lo}:{hi}"
            b = match[0]
            assert np.array_equal(codes.codes[:, b], assign)
            other = np.ones(4, dtype=bool)
            other[lo:hi] = False
            assert np.all(model.codebooks[b][:, other] == 0.0)

    def test_eps_mode_none_and_zero_cross_terms(self):
        rng = np.random.default_rng(7)
        data = rng.standard_normal((80, 6))
        model, codes, _ = pq_train(data, 3, 4)
        assert model.eps_mode == "none"
        assert codes.eps is None

    def test_last_block_absorbs_remainder(self):
        rng = np.random.default_rng(9)
        data = rng.standard_normal((60, 5))
        model, codes, _ = pq_train(data, 2, 3)
        recon = reconstruct_batch(model.codebooks, codes.codes)
        assert recon.shape == (60, 5)
        supports = [np.flatnonzero(np.any(model.codebooks[b] != 0, axis=0)) for b in range(2)]
        assert sorted(len(s) for s in supports) == [2, 3]

    def test_error_at_least_main_method(self):
        data = gen_synthetic(400, 8, clusters=5, correlation=0.7, seed=11).astype(np.float64)
        cfg = TrainConfig(m_codebooks=2, k_codewords=4, sweeps=4, seed=0)
        gm, gc, _ = grvq_train(data, cfg)
        pm, pc, _ = pq_train(data, 2, 4, cfg)
        assert quantization_error(data, pm, pc) >= quantization_error(data, gm, gc) - 1e-9

    def test_more_blocks_than_dims_rejected(self):
        with pytest.raises(ValueError):
            pq_train(np.zeros((10, 2)), 3, 2)


def test_warm_start_from_trained_model_never_regresses(blobs):
    cfg = TrainConfig(
        m_codebooks=2,
        k_codewords=4,
        sweeps=2,
        exhaustive=True,
        early_stop_tol=0.0,
        seed=0,
        kmeans=KMeansConfig(seed=0),
    )
    model1, _, report1 = grvq_train(blobs, cfg)
    model2, _, report2 = grvq_train(blobs, cfg, init=model1)
    assert report2.errors[0] == pytest.approx(report1.final_error, rel=1e-9)
    errs = np.array(report2.errors)
    assert np.all(np.diff(errs) <= 1e-9 * np.maximum(errs[:-1], 1.0))
    assert report2.final_error <= report1.final_error + 1e-9


@pytest.fixture(scope="module")
def eps_runs():
    data = gen_synthetic(600, 8, clusters=6, correlation=0.6, seed=3).astype(np.float64)
    cfg = TrainConfig(
        m_codebooks=3,
        k_codewords=4,
        sweeps=6,
        early_stop_tol=0.0,
        seed=0,
        kmeans=KMeansConfig(seed=0),
    )
    plain = grvq_train(data, cfg)
    reg_cfg = replace(
        cfg, eps_regularization=EpsRegularization(lam_step=5.0, lam_max=20.0)
    )
    regularized = train_eps_eliminated(data, reg_cfg)
    return data, plain, regularized


class TestEpsElimination:
    def test_spread_shrinks(self, eps_runs):
        # cold starts log eps std 0.0 at iteration 0 (all-zero codebooks),
        # so the squeeze shows against the largest spread seen in training
        _, _, (_, _, report) = eps_runs
        assert report.eps_stds[-1] < max(report.eps_stds)

    def test_distortion_pays_for_the_squeeze(self, eps_runs):
        data, (pm, pc, _), (em, ec, _) = eps_runs
        assert quantization_error(data, em, ec) >= quantization_error(data, pm, pc) - 1e-9

    def test_model_records_the_penalty(self, eps_runs):
        _, _, (model, codes, _) = eps_runs
        assert model.eps_mode == "eliminated"
        assert model.lam > 0.0
        assert codes.eps is None

    def test_zero_step_schedule_matches_plain_training(self):
        data = gen_synthetic(300, 6, clusters=4, seed=5).astype(np.float64)
        cfg = TrainConfig(
            m_codebooks=2, k_codewords=4, sweeps=3, seed=0, kmeans=KMeansConfig(seed=0)
        )
        _, _, plain_report = grvq_train(data, cfg)
        reg_cfg = replace(
            cfg, eps_regularization=EpsRegularization(lam_step=0.0, lam_max=0.0)
        )
        model, _, report = train_eps_eliminated(data, reg_cfg)
        assert report.errors == plain_report.errors
        assert model.lam == 0.0

    def test_grvq_train_rejects_regularization_config(self):
        data = np.zeros((10, 2))
        cfg = TrainConfig(
            m_codebooks=2,
            k_codewords=2,
            eps_regularization=EpsRegularization(),
        )
        with pytest.raises(ValueError):
            grvq_train(data, cfg)


class TestOnlineUpdate:
    def test_empty_batch_is_a_no_op(self, blobs):
        cfg = TrainConfig(m_codebooks=2, k_codewords=4, sweeps=2, seed=0)
        model, _, _ = grvq_train(blobs, cfg)
        updated, report = online_update(model, np.empty((0, 8)), cfg)
        assert updated is model
        assert report.errors == []

    def test_shifted_stream_adapts_the_model(self):
        base = gen_synthetic(1500, 8, clusters=5, correlation=0.5, seed=13).astype(np.float64)
        shifted = base + 4.0
        cfg = TrainConfig(
            m_codebooks=2, k_codewords=4, sweeps=3, seed=0, kmeans=KMeansConfig(seed=0)
        )
        model, _, _ = grvq_train(base[:1000], cfg)
        updated, _ = online_update(model, shifted[:1000], cfg)

        def err(m, pts):
            return quantization_error(pts, m, encode_dataset(pts, m, warn_unordered=False))

        held = shifted[1000:]
        assert err(updated, held) < err(model, held)

    def test_same_batch_does_not_regress(self, blobs):
        cfg = TrainConfig(
            m_codebooks=2, k_codewords=4, sweeps=3, seed=0, kmeans=KMeansConfig(seed=0)
        )
        model, _, _ = grvq_train(blobs, cfg)

        def err(m):
            return quantization_error(blobs, m, encode_dataset(blobs, m, warn_unordered=False))

        updated, _ = online_update(model, blobs, cfg)
        assert err(updated) <= err(model) + 1e-9

    def test_block_structure_loss_switches_eps_mode(self):
        rng = np.random.default_rng(15)
        data = rng.standard_normal((200, 4))
        cfg = TrainConfig(m_codebooks=2, k_codewords=4, sweeps=2, seed=0)
        model, _, _ = pq_train(data, 2, 4, cfg)
        assert model.eps_mode == "none"
        updated, _ = online_update(model, rng.standard_normal((200, 4)), cfg)
        assert updated.eps_mode == "stored"

    def test_dimension_mismatch_rejected(self, blobs):
        cfg = TrainConfig(m_codebooks=2, k_codewords=4, sweeps=2, seed=0)
        model, _, _ = grvq_train(blobs, cfg)
        with pytest.raises(ValueError):
            online_update(model, np.zeros((5, 3)), cfg)


def test_early_stop_cuts_sweeps(blobs):
    eager = TrainConfig(
        m_codebooks=2,
        k_codewords=4,
        sweeps=12,
        early_stop_tol=0.5,
        seed=0,
        kmeans=KMeansConfig(seed=0),
    )
    patient = replace(eager, early_stop_tol=0.0)
    _, _, fast = grvq_train(blobs, eager)
    _, _, slow = grvq_train(blobs, patient)
    assert len(fast.errors) < len(slow.errors)
    assert len(slow.errors) == 12 * 2 + 1


def test_report_csv_roundtrip(tmp_path):
    report = TrainReport()
    report.add(0, 2, 1.23456789012345678, 0.5, 0.0, -0.25, 1.5)
    report.add(1, -1, 0.9876543210987654321, 0.25, 2.0, 0.125, 0.75)
    path = tmp_path / "report.csv"
    report.write_csv(path)
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "codebook", "error", "time_s", "lambda", "eps_mean", "eps_std"]
    assert [float(r[2]) for r in rows[1:]] == report.errors
    assert [int(r[1]) for r in rows[1:]] == report.codebook_picks
    assert [float(r[5]) for r in rows[1:]] == report.eps_means


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(m_codebooks=0, k_codewords=4)
    with pytest.raises(ValueError):
        TrainConfig(m_codebooks=1, k_codewords=1)
    with pytest.raises(ValueError):
        TrainConfig(m_codebooks=1, k_codewords=4, beam_width=0)
    with pytest.raises(ValueError):
        TrainConfig(m_codebooks=1, k_codewords=4, sweeps=0)
    with pytest.raises(ValueError):
        TrainConfig(m_codebooks=1, k_codewords=4, pick_order="zigzag")
    with pytest.raises(ValueError):
        TrainConfig(m_codebooks=1, k_codewords=4, early_stop_tol=-0.1)
    with pytest.raises(ValueError):
        EpsRegularization(lam_step=-1.0)


def test_init_shape_mismatch_rejected(blobs):
    cfg = TrainConfig(m_codebooks=2, k_codewords=4, sweeps=1)
    wrong = QuantModel(np.zeros((3, 4, 8)), eps_mode="stored")
    with pytest.raises(ValueError):
        grvq_train(blobs, cfg, init=wrong)
