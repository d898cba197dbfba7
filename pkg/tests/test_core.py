import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bineffect import (
    BinarizationRule,
    CsvSchema,
    Direction,
    EstimandSpec,
    EstimateReport,
    ObservationSet,
    PropensityModel,
    ValidationError,
    binarize,
    fit_logistic,
    load_csv,
    positivity_diagnostic,
    save_csv,
    z_quantile,
)
from bineffect.simulation import sample_dgp

GEQ6 = BinarizationRule(6.0, Direction.GEQ)


class TestBinarize:
    def test_geq_cutoff(self):
        assert binarize(np.array([5.9, 6.0, 7.2]), GEQ6).tolist() == [0.0, 1.0, 1.0]

    def test_empty(self):
        assert binarize(np.array([]), GEQ6).shape == (0,)

    def test_lt_boundary(self):
        rule = BinarizationRule(6.0, Direction.LT)
        assert binarize(np.array([6.0, 6.0, 6.0]), rule).tolist() == [0.0, 0.0, 0.0]

    def test_apply_at_cutoff(self):
        assert GEQ6.apply(6.0) == 1.0
        assert BinarizationRule(6.0, Direction.LT).apply(6.0) == 0.0

    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError):
            binarize(np.array([1.0, np.nan]), GEQ6)
        with pytest.raises(ValidationError):
            BinarizationRule(np.inf)

    @given(
        a=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
        cutoff=st.floats(-1e6, 1e6),
    )
    @settings(max_examples=50, deadline=None)
    def test_matches_region_frequency(self, a, cutoff):
        arr = np.array(a)
        out = binarize(arr, BinarizationRule(cutoff))
        assert set(np.unique(out)) <= {0.0, 1.0}
        assert out.mean() == np.mean(arr >= cutoff)


class TestObservationSet:
    def test_basic_shape(self, dataset):
        assert dataset.n == 40
        assert dataset.p == 2

    def test_rejects_nonbinary_t(self):
        with pytest.raises(ValidationError, match="t must contain only 0 or 1"):
            ObservationSet(w=np.zeros((3, 1)), t=[0, 1, 2], y=[1.0, 2.0, 3.0])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValidationError, match="non-finite"):
            ObservationSet(w=np.zeros((2, 1)), t=[0, 1], y=[1.0, np.inf])

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValidationError, match="lengths disagree"):
            ObservationSet(w=np.zeros((3, 1)), t=[0, 1], y=[1.0, 2.0])

    def test_rejects_rule_inconsistency(self):
        with pytest.raises(ValidationError, match="disagrees with the binarization rule"):
            ObservationSet(w=np.zeros((2, 1)), t=[1, 1], y=[0.0, 0.0], a=[5.0, 7.0], rule=GEQ6)

    def test_immutable(self, dataset):
        with pytest.raises(ValueError):
            dataset.y[0] = 99.0

    def test_with_rule_idempotent(self):
        a = np.array([4.0, 6.5, 7.0, 5.0])
        data = ObservationSet(w=np.zeros((4, 1)), t=binarize(a, GEQ6), y=np.ones(4), a=a, rule=GEQ6)
        twice = data.with_rule(GEQ6).with_rule(GEQ6)
        assert np.array_equal(twice.t, data.t)

    def test_mean_t_is_region_frequency(self):
        rng = np.random.default_rng(5)
        a = rng.normal(6.0, 2.0, size=200)
        data = ObservationSet(
            w=np.zeros((200, 1)), t=binarize(a, GEQ6), y=np.zeros(200), a=a, rule=GEQ6
        )
        assert data.t.mean() == np.mean(a >= 6.0)

    def test_subset_preserves_fields(self, dataset):
        sub = dataset.subset(np.array([3, 1, 1]))
        assert sub.n == 3
        assert sub.y[1] == sub.y[2] == dataset.y[1]


class TestCsv:
    def test_load_with_rule_derives_t(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,w1\n1.5,5.0,0.1\n2.5,6.0,0.2\n3.5,7.5,0.3\n")
        data = load_csv(path, CsvSchema(rule=GEQ6))
        assert data.n == 3
        assert data.t.tolist() == [0.0, 1.0, 1.0]
        assert data.a is not None and data.a.tolist() == [5.0, 6.0, 7.5]

    def test_nonbinary_t_without_rule_names_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,t,w1\n1.0,0,0.1\n2.0,2,0.2\n")
        with pytest.raises(ValidationError, match="line 3"):
            load_csv(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("t,w1\n0,0.1\n")
        with pytest.raises(ValidationError, match="missing required column 'y'"):
            load_csv(path)

    def test_non_numeric_cell_names_line_and_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,t,w1\n1.0,0,0.1\nfoo,1,0.2\n")
        with pytest.raises(ValidationError, match="line 3: column 'y'"):
            load_csv(path)

    def test_continuous_without_rule(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,w1\n1.0,5.0,0.1\n")
        with pytest.raises(ValidationError, match="binarization rule"):
            load_csv(path)

    @given(
        n=st.integers(1, 12),
        p=st.integers(0, 3),
        with_a=st.booleans(),
        seed=st.integers(0, 2**31),
    )
    @settings(max_examples=30, deadline=None)
    def test_round_trip_identity(self, n, p, with_a, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(6.0, 2.0, size=n) if with_a else None
        t = binarize(a, GEQ6) if with_a else (rng.random(n) < 0.5).astype(float)
        data = ObservationSet(
            w=rng.normal(size=(n, p)),
            t=t,
            y=rng.normal(size=n) * 10.0,
            a=a,
            rule=GEQ6 if with_a else None,
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "round.csv"
            save_csv(data, path)
            back = load_csv(path, CsvSchema(rule=data.rule))
        assert np.array_equal(back.y, data.y)
        assert np.array_equal(back.t, data.t)
        assert np.array_equal(back.w, data.w)
        if with_a:
            assert np.array_equal(back.a, data.a)


class _FixedProbs:
    def __init__(self, probs):
        self._probs = np.asarray(probs, dtype=float)

    def predict_proba(self, w):
        return self._probs


class TestPositivity:
    def test_all_half_is_clean(self, dataset):
        model = PropensityModel(intercept=0.0, coef=np.zeros(dataset.p))
        assert positivity_diagnostic(model, dataset, eps=0.01) == []

    def test_flags_extreme_unit(self, dataset):
        probs = np.full(dataset.n, 0.5)
        probs[7] = 0.001
        warnings = positivity_diagnostic(_FixedProbs(probs), dataset, eps=0.01)
        assert len(warnings) == 1
        assert "unit 7" in warnings[0]

    def test_dgp_fit_is_clean_at_default_eps(self, dgp):
        data = sample_dgp(dgp, 500, seed=11)
        model = fit_logistic(data)
        # population propensities are 1 - Phi(1) and Phi(1), far from 0/1
        assert positivity_diagnostic(model, data, eps=0.01) == []


class TestReportTypes:
    def test_estimand_validation(self):
        with pytest.raises(ValidationError):
            EstimandSpec.peb(2)
        assert EstimandSpec.bate().arm is None
        assert EstimandSpec.peb(0).key == "peb0"
        assert EstimandSpec.from_key("peb1") == EstimandSpec.peb(1)

    def test_normal_ci_identity(self):
        report = EstimateReport.from_point_se(
            EstimandSpec.bate(), "reg", point=2.0, se=1.5, n=10, ci_level=0.95
        )
        half = z_quantile(0.95) * 1.5
        assert report.ci == (2.0 - half, 2.0 + half)
        assert abs(z_quantile(0.95) - 1.959964) < 1e-6

    def test_negative_se_rejected(self):
        with pytest.raises(ValidationError):
            EstimateReport.from_point_se(EstimandSpec.bate(), "reg", 1.0, -0.1, 10)

    def test_to_dict_keys(self):
        d = EstimateReport.from_point_se(EstimandSpec.peb(1), "aipw", 1.0, 0.5, 20, seed=3).to_dict()
        assert set(d) == {
            "estimand", "arm", "estimator", "point", "se", "ci", "ci_level", "n", "warnings", "seed",
        }
        assert d["estimand"] == "peb" and d["arm"] == 1 and d["seed"] == 3
