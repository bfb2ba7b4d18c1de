import io
import json
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from t2plan import synth
from t2plan.dataset import (
    P_FLOOR,
    CheckpointRecord,
    CheckpointSet,
    DatasetError,
    SchemaError,
    derive_probability,
    dump_checkpoints,
    group_isoflop,
    load_checkpoints,
    macro_average,
    save_checkpoints,
)


def nll_line(model="m0", n=1000, d=20000, task="t", q="q0", nll=0.5):
    return json.dumps(
        {"model_id": model, "n_params": n, "n_tokens": d, "task_id": task, "question_id": q, "nll": nll}
    )


class TestLoad:
    def test_counts(self):
        lines = [nll_line(model=m, n=n, q=f"q{i}") for m, n in (("a", 10), ("b", 20)) for i in range(3)]
        cset = load_checkpoints(lines)
        assert len(cset) == 6
        assert len(cset.checkpoints) == 2
        assert cset.tasks == ("t",)
        assert cset.report.n_records == 6

    def test_bad_counts_names_line(self):
        bad = json.dumps(
            {"model_id": "m", "n_params": 5, "n_tokens": 5, "task_id": "t", "question_id": "q",
             "n_attempts": 3, "n_correct": 4}
        )
        with pytest.raises(SchemaError) as err:
            load_checkpoints([nll_line(), bad])
        assert err.value.line == 2
        assert "line 2" in str(err.value)

    def test_unknown_key(self):
        obj = json.loads(nll_line())
        obj["extra"] = 1
        with pytest.raises(SchemaError):
            load_checkpoints([json.dumps(obj)])

    def test_both_evidence_kinds_rejected(self):
        obj = json.loads(nll_line())
        obj.update(n_attempts=3, n_correct=1)
        with pytest.raises(SchemaError):
            load_checkpoints([json.dumps(obj)])

    def test_invalid_json(self):
        with pytest.raises(SchemaError) as err:
            load_checkpoints([nll_line(), "{not json"])
        assert err.value.line == 2

    def test_inconsistent_sizes(self):
        with pytest.raises(DatasetError):
            load_checkpoints([nll_line(q="q0", n=10), nll_line(q="q1", n=11)])

    def test_duplicate_question(self):
        with pytest.raises(DatasetError):
            load_checkpoints([nll_line(), nll_line()])

    def test_empty(self):
        with pytest.raises(DatasetError):
            load_checkpoints([])
        with pytest.raises(DatasetError):
            load_checkpoints(io.StringIO("\n\n"))

    def test_negative_nll(self):
        with pytest.raises(SchemaError):
            load_checkpoints([nll_line(nll=-0.1)])

    def test_count_evidence(self):
        line = json.dumps(
            {"model_id": "m", "n_params": 5, "n_tokens": 5, "task_id": "t", "question_id": "q",
             "n_attempts": 8, "n_correct": 3}
        )
        rec = load_checkpoints([line]).records[0]
        assert rec.evidence == "counts" and rec.n_attempts == 8 and rec.n_correct == 3


class TestRoundTrip:
    def test_synth_dump_round_trips(self, tmp_path, grid):
        truth = synth.GroundTruth(1.7, 400.0, 0.34, 410.0, 0.28, noise_sigma=0.05, seed=4)
        cset = synth.generate_nll_data(truth, grid[:10], n_questions=7, task_ids=("x", "y"))
        path = tmp_path / "c.jsonl"
        save_checkpoints(cset, path)
        again = load_checkpoints(path)
        assert again == cset
        assert dump_checkpoints(again) == path.read_text()

    def test_mixed_evidence_round_trip(self):
        recs = [
            CheckpointRecord("m", 3, 4, "t", "q0", nll=0.25),
            CheckpointRecord("m", 3, 4, "t", "q1", n_attempts=10, n_correct=0),
        ]
        cset = CheckpointSet(recs)
        assert load_checkpoints(dump_checkpoints(cset).splitlines()) == cset


class TestProbability:
    def test_values(self):
        rec = CheckpointRecord("m", 1, 1, "t", "q", nll=0.0)
        assert derive_probability(rec) == 1.0
        rec = CheckpointRecord("m", 1, 1, "t", "q", nll=math.log(4))
        assert derive_probability(rec) == pytest.approx(0.25, rel=1e-15)

    def test_floor(self):
        assert float(mpmath.exp(-60)) < P_FLOOR
        rec = CheckpointRecord("m", 1, 1, "t", "q", nll=60.0)
        assert derive_probability(rec) == P_FLOOR

    def test_counts_rejected(self):
        with pytest.raises(DatasetError):
            derive_probability(CheckpointRecord("m", 1, 1, "t", "q", n_attempts=2, n_correct=1))

    @given(st.floats(0, 100), st.floats(0, 100))
    def test_monotone_in_unit_interval(self, a, b):
        lo, hi = sorted((a, b))
        p_lo = derive_probability(CheckpointRecord("m", 1, 1, "t", "q", nll=lo))
        p_hi = derive_probability(CheckpointRecord("m", 1, 1, "t", "q", nll=hi))
        assert 0 < p_hi <= p_lo <= 1


def cset_at(budgets):
    recs = []
    for i, (n, c) in enumerate(budgets):
        recs.append(CheckpointRecord(f"m{i}", n, round(c / (6 * n)), "t", "q", nll=1.0 + i))
    return CheckpointSet(recs)


class TestIsoflop:
    def test_same_budget_one_group(self):
        groups = group_isoflop(cset_at([(1000, 6e9), (2000, 6e9)]))
        assert len(groups) == 1 and len(groups[0].members) == 2
        assert groups[0].nll_variance["t"] == pytest.approx(0.25)

    def test_far_budgets_two_groups(self):
        groups = group_isoflop(cset_at([(10_000, 1e16), (10_000, 1e19)]))
        assert [len(g.members) for g in groups] == [1, 1]

    def test_appendix_grid_has_twelve_groups(self, grid):
        cset = synth.generate_nll_data(synth.GroundTruth(1.7, 400, 0.34, 410, 0.28), grid, n_questions=1)
        groups = group_isoflop(cset)
        assert len(groups) == 12
        members = [m for g in groups for m in g.members]
        assert sorted(members) == sorted(c.model_id for c in cset.checkpoints)

    def test_representative_is_geometric_mean(self):
        groups = group_isoflop(cset_at([(1000, 6e9), (2000, 6.6e9)]))
        assert groups[0].c_train == pytest.approx(math.sqrt(6e9 * 6.6e9), rel=1e-6)

    def test_width_validation(self):
        with pytest.raises(ValueError):
            group_isoflop(cset_at([(1000, 6e9)]), width=1.0)


class TestMacroAverage:
    def test_values(self):
        assert macro_average({"t1": 0.2, "t2": 0.4}) == pytest.approx(0.3, abs=1e-16)
        assert macro_average({"only": 0.123}) == 0.123

    def test_rational_oracle(self, rng):
        vals = {f"t{i}": float(v) for i, v in enumerate(rng.uniform(0, 5, 8))}
        exact = sum(Fraction(v) for v in vals.values()) / 8
        assert macro_average(vals) == float(exact)

    def test_empty(self):
        with pytest.raises(ValueError):
            macro_average({})
