"""Asymmetric-distance search: lookup tables, scan scores, ranking, exact
ground truth, and the recall metric."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model
from grvq.encode import encode_dataset, eps_quantizer_fit
from grvq.model import CodeMatrix, QuantModel, epsilon_of, reconstruct, reconstruct_batch
from grvq.search import (
    adc_distance,
    adc_scores,
    build_query_table,
    exhaustive_search,
    ground_truth,
    recall_at_r,
    search_batch,
)


class TestQueryTable:
    def test_entries_are_exact_codeword_distances(self, rng):
        model = random_model(rng, m=3, k=4, d=6)
        q = rng.standard_normal(6)
        table = build_query_table(q, model)
        for m in range(3):
            for k in range(4):
                want = float(((q - model.codebooks[m, k]) ** 2).sum())
                assert table.dists[m, k] == pytest.approx(want, rel=1e-6, abs=1e-12)
        assert table.query_norm_sq == pytest.approx(float(q @ q), rel=1e-12)

    def test_zero_query_tables_are_codeword_norms(self, rng):
        model = random_model(rng, m=2, k=3, d=5)
        table = build_query_table(np.zeros(5), model)
        norms = np.einsum("mkd,mkd->mk", model.codebooks, model.codebooks)
        assert np.allclose(table.dists, norms, rtol=1e-12)
        assert table.query_norm_sq == 0.0

    def test_rejects_wrong_dimension(self, rng):
        model = random_model(rng, m=2, k=3, d=5)
        with pytest.raises(ValueError):
            build_query_table(np.zeros(4), model)


class TestAdcDistance:
    def test_identity_with_reconstruction(self, rng):
        model = random_model(rng, m=3, k=4, d=8)
        for _ in range(50):
            q = rng.standard_normal(8)
            code = rng.integers(0, 4, size=3).astype(np.int32)
            table = build_query_table(q, model)
            got = adc_distance(table, code, eps=epsilon_of(model, code))
            want = float(((q - reconstruct(model, code)) ** 2).sum())
            assert got == pytest.approx(want, rel=1e-5, abs=1e-8)

    @settings(deadline=None, max_examples=30)
    @given(seed=st.integers(0, 10_000))
    def test_identity_holds_for_any_seed(self, seed):
        rng = np.random.default_rng(seed)
        model = random_model(rng, m=2, k=3, d=4)
        q = rng.standard_normal(4)
        code = rng.integers(0, 3, size=2).astype(np.int32)
        table = build_query_table(q, model)
        got = adc_distance(table, code, eps=epsilon_of(model, code))
        want = float(((q - reconstruct(model, code)) ** 2).sum())
        assert got == pytest.approx(want, rel=1e-5, abs=1e-8)

    def test_single_stage_needs_no_correction(self, rng):
        model = random_model(rng, m=1, k=5, d=6, eps_mode="none")
        q = rng.standard_normal(6)
        table = build_query_table(q, model)
        for k in range(5):
            got = adc_distance(table, np.array([k]))
            want = float(((q - model.codebooks[0, k]) ** 2).sum())
            assert got == pytest.approx(want, rel=1e-10)

    def test_rejects_wrong_code_shape(self, rng):
        model = random_model(rng, m=2, k=3, d=4)
        table = build_query_table(np.zeros(4), model)
        with pytest.raises(ValueError):
            adc_distance(table, np.array([0, 1, 2]))


def _pq_model(rng, d=6, k=3):
    """Two-block product layout: each codebook zero outside its block."""
    books = np.zeros((2, k, d))
    half = d // 2
    books[0, :, :half] = rng.standard_normal((k, half))
    books[1, :, half:] = rng.standard_normal((k, d - half))
    return QuantModel(books, eps_mode="none"), half


class TestAdcScores:
    def test_blockwise_lookup_matches_per_block_distances(self, rng):
        # with product-structured codebooks the scan must reduce to the
        # classic sum of per-block partial distances
        model, half = _pq_model(rng)
        codes = CodeMatrix(rng.integers(0, 3, size=(40, 2)).astype(np.int32))
        q = rng.standard_normal(6)
        table = build_query_table(q, model)
        got = adc_scores(table, codes, model)
        lo = ((q[:half] - model.codebooks[0, codes.codes[:, 0], :half]) ** 2).sum(axis=1)
        hi = ((q[half:] - model.codebooks[1, codes.codes[:, 1], half:]) ** 2).sum(axis=1)
        assert np.allclose(got, lo + hi, rtol=1e-10, atol=1e-10)

    def test_stored_mode_scores_are_exact_distances(self, rng):
        model = random_model(rng, m=3, k=4, d=6)
        data = rng.standard_normal((30, 6))
        codes = encode_dataset(data, model, warn_unordered=False)
        q = rng.standard_normal(6)
        table = build_query_table(q, model)
        scores = adc_scores(table, codes, model)
        recon = reconstruct_batch(model.codebooks, codes.codes)
        exact = ((q[None, :] - recon) ** 2).sum(axis=1)
        assert np.allclose(scores, exact, rtol=1e-5, atol=1e-8)

    def test_eliminated_mode_adds_shared_constant(self, rng):
        books = random_model(rng, m=2, k=3, d=5).codebooks
        model = QuantModel(books, eps_mode="eliminated", eps0=0.7, lam=1.0)
        codes = CodeMatrix(rng.integers(0, 3, size=(20, 2)).astype(np.int32))
        q = rng.standard_normal(5)
        table = build_query_table(q, model)
        with_const = adc_scores(table, codes, model)
        plain_model = QuantModel(books, eps_mode="stored")
        plain = adc_scores(table, CodeMatrix(codes.codes, eps=np.zeros(20)), plain_model)
        assert np.allclose(with_const - plain, 0.7, rtol=0, atol=1e-12)

    def test_stored_mode_requires_eps_payload(self, rng):
        model = random_model(rng, m=2, k=3, d=5)
        codes = CodeMatrix(rng.integers(0, 3, size=(10, 2)).astype(np.int32))
        table = build_query_table(np.zeros(5), model)
        with pytest.raises(ValueError):
            adc_scores(table, codes, model)

    def test_dropping_query_constant_preserves_ranking(self, rng):
        # the -(M-1)*query_norm term shifts every score equally, so argsort
        # with and without it must agree
        model = random_model(rng, m=3, k=4, d=6)
        data = rng.standard_normal((100, 6))
        codes = encode_dataset(data, model, warn_unordered=False)
        q = rng.standard_normal(6)
        table = build_query_table(q, model)
        scores = adc_scores(table, codes, model)
        shifted = scores + 2 * table.query_norm_sq
        assert np.array_equal(
            np.argsort(scores, kind="stable"), np.argsort(shifted, kind="stable")
        )


class TestSearch:
    def test_ranking_matches_decompressed_sort(self, rng):
        model = random_model(rng, m=3, k=4, d=8)
        data = rng.standard_normal((100, 8))
        codes = encode_dataset(data, model, warn_unordered=False)
        recon = reconstruct_batch(model.codebooks, codes.codes)
        for _ in range(5):
            q = rng.standard_normal(8)
            got = exhaustive_search(q, codes, model, r=100).ids[0]
            exact = ((q[None, :] - recon) ** 2).sum(axis=1)
            want = np.argsort(exact, kind="stable")
            assert np.array_equal(got, want)

    def test_realizable_query_is_its_own_top_hit(self, rng):
        model = random_model(rng, m=2, k=4, d=5)
        codes = CodeMatrix(
            rng.integers(0, 4, size=(20, 2)).astype(np.int32),
            eps=None,
        )
        codes = CodeMatrix(
            codes.codes,
            eps=np.array([epsilon_of(model, c) for c in codes.codes]),
        )
        target = 7
        q = reconstruct(model, codes.codes[target])
        result = exhaustive_search(q, codes, model, r=3)
        hit = result.ids[0, 0]
        assert np.array_equal(
            reconstruct(model, codes.codes[hit]), reconstruct(model, codes.codes[target])
        )
        assert result.distances[0, 0] == pytest.approx(0.0, abs=1e-8)

    def test_tied_scores_rank_lower_id_first(self, rng):
        model = random_model(rng, m=2, k=3, d=4)
        one = rng.integers(0, 3, size=(1, 2)).astype(np.int32)
        codes_arr = np.repeat(one, 5, axis=0)
        eps = np.array([epsilon_of(model, c) for c in codes_arr])
        codes = CodeMatrix(codes_arr, eps=eps)
        ids = exhaustive_search(rng.standard_normal(4), codes, model, r=5).ids[0]
        assert np.array_equal(ids, np.arange(5))

    def test_batch_matches_single_queries(self, rng):
        model = random_model(rng, m=2, k=4, d=6)
        data = rng.standard_normal((50, 6))
        codes = encode_dataset(data, model, warn_unordered=False)
        queries = rng.standard_normal((8, 6))
        batch = search_batch(queries, codes, model, 7)
        for i in range(8):
            single = exhaustive_search(queries[i], codes, model, 7)
            assert np.array_equal(batch.ids[i], single.ids[0])
            assert np.array_equal(batch.distances[i], single.distances[0])

    def test_oversized_r_warns_and_clamps(self, rng):
        model = random_model(rng, m=2, k=3, d=4)
        data = rng.standard_normal((6, 4))
        codes = encode_dataset(data, model, warn_unordered=False)
        with pytest.warns(UserWarning):
            result = search_batch(rng.standard_normal((2, 4)), codes, model, 10)
        assert result.ids.shape == (2, 6)

    def test_r_below_one_rejected(self, rng):
        model = random_model(rng, m=2, k=3, d=4)
        codes = encode_dataset(rng.standard_normal((6, 4)), model, warn_unordered=False)
        with pytest.raises(ValueError):
            search_batch(rng.standard_normal((2, 4)), codes, model, 0)


class TestGroundTruth:
    def test_matches_naive_double_loop(self, rng):
        queries = rng.standard_normal((10, 5))
        database = rng.standard_normal((30, 5))
        got = ground_truth(queries, database, 30)
        for qi in range(10):
            dists = [float(((queries[qi] - database[i]) ** 2).sum()) for i in range(30)]
            want = sorted(range(30), key=lambda i: (dists[i], i))
            assert np.array_equal(got[qi], want)

    def test_duplicate_rows_tie_to_lower_id(self, rng):
        row = rng.standard_normal(4)
        database = np.stack([row, row + 5.0, row, row + 5.0])
        got = ground_truth(row[None, :], database, 4)
        assert np.array_equal(got[0], [0, 2, 1, 3])

    def test_chunked_processing_is_invisible(self, rng):
        queries = rng.standard_normal((2000, 3))
        database = rng.standard_normal((15, 3))
        got = ground_truth(queries, database, 3)
        assert got.shape == (2000, 3)
        spot = rng.integers(0, 2000, size=20)
        for qi in spot:
            dists = ((queries[qi][None, :] - database) ** 2).sum(axis=1)
            assert got[qi, 0] == int(np.argmin(dists))

    def test_r_bounds(self, rng):
        with pytest.raises(ValueError):
            ground_truth(rng.standard_normal((2, 3)), rng.standard_normal((5, 3)), 0)
        with pytest.raises(ValueError):
            ground_truth(rng.standard_normal((2, 3)), rng.standard_normal((5, 3)), 6)
        with pytest.raises(ValueError):
            ground_truth(rng.standard_normal((2, 3)), rng.standard_normal((5, 4)), 2)


class TestRecall:
    def test_results_equal_truth_scores_one(self):
        truth = np.arange(12).reshape(4, 3)
        assert recall_at_r(truth, truth, 1) == 1.0
        assert recall_at_r(truth, truth, 3) == 1.0

    def test_counts_first_truth_column_only(self):
        truth = np.array([[5, 1], [6, 2]])
        results = np.array([[1, 5], [0, 3]])
        assert recall_at_r(results, truth, 1) == 0.0
        assert recall_at_r(results, truth, 2) == 0.5

    def test_non_decreasing_in_r(self, rng):
        truth = rng.integers(0, 50, size=(40, 1))
        results = rng.integers(0, 50, size=(40, 10))
        values = [recall_at_r(results, truth, r) for r in range(1, 11)]
        assert np.all(np.diff(values) >= 0)
        assert all(0.0 <= v <= 1.0 for v in values)

    def test_r_and_shape_validation(self):
        truth = np.zeros((4, 1), dtype=int)
        results = np.zeros((4, 5), dtype=int)
        with pytest.raises(ValueError):
            recall_at_r(results, truth, 0)
        with pytest.raises(ValueError):
            recall_at_r(results, truth, 6)
        with pytest.raises(ValueError):
            recall_at_r(results, np.zeros((3, 1), dtype=int), 1)
        with pytest.raises(ValueError):
            recall_at_r(np.zeros(4, dtype=int), truth, 1)


def test_quantized_eps_barely_moves_rankings(rng):
    # search with 8-bit cross terms must agree with stored mode on nearly
    # every top-10 position for a well-spread code sample
    model = random_model(rng, m=3, k=4, d=8)
    data = rng.standard_normal((300, 8)) * 2
    stored = encode_dataset(data, model, warn_unordered=False)
    quantizer = eps_quantizer_fit(stored.eps, 8)
    qmodel = QuantModel(model.codebooks, eps_mode="quantized", eps_quantizer=quantizer)
    qcodes = CodeMatrix(stored.codes, eps=quantizer.dequantize(quantizer.quantize(stored.eps)))
    queries = rng.standard_normal((40, 8))
    top_s = search_batch(queries, stored, model, 10).ids
    top_q = search_batch(queries, qcodes, qmodel, 10).ids
    agree = float((top_s == top_q).mean())
    assert agree >= 0.95
