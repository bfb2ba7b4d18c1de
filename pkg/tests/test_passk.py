import math
from fractions import Fraction
from itertools import combinations

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from t2plan.dataset import CheckpointRecord, CheckpointSet, DatasetError
from t2plan.passk import (
    build_pass_targets,
    exact_pass_at_k,
    macro_targets,
    naive_vs_mean_gap,
    read_pass_targets_csv,
    unbiased_pass_at_k,
    write_pass_targets_csv,
)


def nll_set(probs, task="t", model="m"):
    return CheckpointSet(
        CheckpointRecord(model, 10, 200, task, f"q{i}", nll=-math.log(p)) for i, p in enumerate(probs)
    )


def enumerate_pass(n, c, k):
    outcomes = [1] * c + [0] * (n - c)
    subsets = list(combinations(range(n), k))
    return Fraction(sum(any(outcomes[i] for i in s) for s in subsets), len(subsets))


class TestExact:
    def test_values(self):
        assert exact_pass_at_k(0.3, 1) == pytest.approx(0.3, rel=1e-15)
        assert exact_pass_at_k(0.3, 2) == pytest.approx(0.51, rel=1e-15)
        want = float(1 - (1 - mpmath.mpf("0.01")) ** 100)
        assert exact_pass_at_k(0.01, 100) == pytest.approx(want, rel=1e-14)


class TestUnbiased:
    def test_example(self):
        assert unbiased_pass_at_k(4, 2, 2) == 5 / 6

    def test_edges(self):
        assert unbiased_pass_at_k(7, 7, 1) == 1.0
        assert unbiased_pass_at_k(7, 0, 5) == 0.0

    def test_enumeration_small_n(self):
        for n in range(1, 9):
            for c in range(n + 1):
                for k in range(1, n + 1):
                    assert unbiased_pass_at_k(n, c, k) == float(enumerate_pass(n, c, k))

    def test_unbiased_over_binomial_draws(self):
        p = Fraction(3, 10)
        for n in range(1, 9):
            for k in range(1, n + 1):
                expect = sum(
                    math.comb(n, c) * p**c * (1 - p) ** (n - c) * (1 - Fraction(math.comb(n - c, k), math.comb(n, k)))
                    for c in range(n + 1)
                )
                assert expect == 1 - (1 - p) ** k

    def test_large_n_log_path(self):
        want = 1 - mpmath.binomial(4000 - 37, 50) / mpmath.binomial(4000, 50)
        assert unbiased_pass_at_k(4000, 37, 50) == pytest.approx(float(want), rel=1e-12)

    def test_domain(self):
        with pytest.raises(ValueError):
            unbiased_pass_at_k(3, 4, 1)
        with pytest.raises(ValueError):
            unbiased_pass_at_k(3, 1, 4)


class TestTargets:
    def test_single_question(self):
        ts = build_pass_targets(nll_set([0.5]), k_grid=[1, 2])
        assert [t.mean_pass for t in ts] == pytest.approx([0.5, 0.75], rel=1e-15)

    def test_two_questions(self):
        ts = build_pass_targets(nll_set([0.2, 0.8]), k_grid=[1])
        assert ts[0].mean_pass == pytest.approx(0.5, rel=1e-15)
        assert ts[0].mean_neg_log_pass == pytest.approx((-math.log(0.2) - math.log(0.8)) / 2, rel=1e-14)

    def test_beta_population(self):
        rng = np.random.default_rng(7)
        p = rng.beta(2.0, 3.0, size=1000)
        ts = build_pass_targets(nll_set(p), k_grid=[4])
        # 1 - B(2, 7) / B(2, 3) = 1 - (1/56) / (1/12)
        analytic = 1 - Fraction(12, 56)
        stderr = np.std(1 - (1 - p) ** 4, ddof=1) / math.sqrt(p.size)
        assert abs(ts[0].mean_pass - float(analytic)) <= 3 * stderr

    def test_nonincreasing_neg_log_in_k(self, rng):
        ts = build_pass_targets(nll_set(rng.uniform(0.001, 0.999, 50)))
        nl = [t.mean_neg_log_pass for t in ts]
        assert all(b <= a for a, b in zip(nl, nl[1:]))

    def test_count_evidence(self):
        cset = CheckpointSet([CheckpointRecord("m", 1, 1, "t", "q", n_attempts=4, n_correct=2)])
        ts = build_pass_targets(cset, k_grid=[1, 2])
        assert ts[1].mean_pass == 5 / 6
        with pytest.raises(DatasetError):
            build_pass_targets(cset, k_grid=[8])
        with pytest.raises(DatasetError):
            build_pass_targets(cset, k_grid=[1.5])

    def test_floor_contributes(self):
        ts = build_pass_targets(nll_set([1e-30, 0.5]), k_grid=[1])
        assert ts[0].mean_neg_log_pass == pytest.approx((-math.log(1e-12) + math.log(2)) / 2)

    def test_csv_round_trip(self, tmp_path, rng):
        ts = build_pass_targets(nll_set(rng.uniform(0.01, 0.9, 20)))
        path = tmp_path / "t.csv"
        write_pass_targets_csv(ts, path)
        assert read_pass_targets_csv(path) == ts

    def test_macro_targets(self):
        a = build_pass_targets(nll_set([0.2], task="a"), k_grid=[1])
        b = build_pass_targets(nll_set([0.4], task="b"), k_grid=[1])
        (m,) = macro_targets(a + b)
        assert m.task_id == "macro" and m.mean_pass == pytest.approx(0.3, abs=1e-16)


class TestGap:
    def test_k1_equal(self, rng):
        for row in naive_vs_mean_gap(nll_set(rng.uniform(0.01, 1, 30)), 1):
            assert row.naive == row.mean

    def test_two_point_population(self):
        cset = CheckpointSet(
            [
                CheckpointRecord("m", 1, 1, "t", "q0", n_attempts=1, n_correct=0),
                CheckpointRecord("m", 1, 1, "t", "q1", n_attempts=1, n_correct=1),
            ]
        )
        (row,) = naive_vs_mean_gap(cset, 2)
        assert row.naive == 0.75 and row.mean == 0.5

    def test_constant_population(self):
        (row,) = naive_vs_mean_gap(nll_set([0.3] * 5), 6)
        assert row.naive == pytest.approx(row.mean, rel=1e-15)

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20), st.floats(1.0, 300.0))
    def test_jensen(self, probs, k):
        cset = CheckpointSet(
            CheckpointRecord("m", 1, 1, "t", f"q{i}", nll=-math.log(max(p, 1e-300))) for i, p in enumerate(probs)
        )
        for row in naive_vs_mean_gap(cset, k):
            assert row.naive >= row.mean
