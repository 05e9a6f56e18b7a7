import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bfmlab.channel import SimConfig, load_profile, simulate_csi
from bfmlab.evaluation import (
    DEFAULT_SWEEP,
    PUBLISHED_REFERENCE,
    EvalReport,
    Experiment,
    ecdf,
    ecdf_at,
    estimation_kind,
    evaluate,
    frobenius_error,
    run_comparison,
    sample_errors,
    subcarrier_sweep,
)
from bfmlab.report import render_report
from bfmlab.trainer import TrainConfig


def naive_frobenius(pred, true):
    total = 0.0
    for k in range(pred.shape[0]):
        s = 0.0
        for i in range(pred.shape[1]):
            for j in range(pred.shape[2]):
                s += (pred[k, i, j] - true[k, i, j]) ** 2
        total += s ** 0.5
    return total / pred.shape[0]


def count_ecdf(errors, x):
    return sum(1 for e in errors if e <= x) / len(errors)


def test_frobenius_examples():
    A = np.random.default_rng(0).random((5, 2, 2))
    assert frobenius_error(A, A) == 0.0
    for K in (1, 7):
        assert frobenius_error(np.ones((K, 2, 2)), np.zeros((K, 2, 2))) == 2.0
    with pytest.raises(ValueError):
        frobenius_error(np.ones((3, 2, 2)), np.ones((2, 2, 2)))


def test_frobenius_matches_naive_loop():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.random((11, 2, 2)), rng.random((11, 2, 2))
        assert abs(frobenius_error(a, b) - naive_frobenius(a, b)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=8, max_size=8), st.lists(st.floats(0, 10), min_size=8, max_size=8))
def test_frobenius_nonnegative_and_zero_iff_equal(a, b):
    a = np.array(a).reshape(2, 2, 2)
    b = np.array(b).reshape(2, 2, 2)
    e = frobenius_error(a, b)
    assert e >= 0
    assert (e == 0) == np.array_equal(a, b)


def test_sample_errors_match_frobenius_on_unmasked_bins():
    rng = np.random.default_rng(2)
    pred, label = rng.random((3, 16, 4, 1)), rng.random((3, 16, 4, 1))
    mask = np.zeros((3, 16), bool)
    mask[:, :11] = True
    pred[:, 11:] = 99.0
    errs = sample_errors(pred, label, mask, 2.5)
    for n in range(3):
        ref = frobenius_error(2.5 * pred[n, :11, :, 0].reshape(11, 2, 2),
                              2.5 * label[n, :11, :, 0].reshape(11, 2, 2))
        assert errs[n] == pytest.approx(ref, abs=1e-12)


def test_ecdf_examples():
    pts = ecdf([1, 2, 3])
    assert ecdf_at(pts, 2) == pytest.approx(2 / 3)
    assert ecdf_at(pts, 0.5) == 0.0
    assert ecdf([4, 4, 4]) == [(4.0, 1.0)]
    with pytest.raises(ValueError):
        ecdf([])


def test_ecdf_matches_counting_oracle():
    rng = np.random.default_rng(3)
    errors = np.round(rng.random(200), 2)
    pts = ecdf(errors)
    for x in np.linspace(-0.1, 1.1, 100):
        assert ecdf_at(pts, x) == pytest.approx(count_ecdf(errors, x), abs=1e-15)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=50))
def test_ecdf_monotone_to_one(errors):
    fr = [f for _, f in ecdf(errors)]
    assert all(b >= a for a, b in zip(fr, fr[1:]))
    assert fr[-1] == 1.0 and fr[0] > 0


def test_report_mean_and_json_round_trip():
    rep = EvalReport(np.array([0.1, 0.2, 0.4]), {"variant": "cnn", "group_size": 242},
                     np.array([1.0, 2.0]), np.array([1.5, 2.5]))
    assert abs(rep.mean - np.mean(rep.errors)) < 1e-12
    back = EvalReport.from_json(rep.to_json())
    assert back.errors.tobytes() == rep.errors.tobytes()
    assert back.metadata == rep.metadata and back.to_json() == rep.to_json()


def test_realization_errors_keep_the_mean():
    errs = np.random.default_rng(5).random(22 * 3)
    rep = EvalReport(errs, {"groups_per_realization": 22})
    assert rep.realization_errors.shape == (3,)
    assert rep.realization_errors.mean() == pytest.approx(rep.mean, abs=1e-12)
    np.testing.assert_allclose(rep.realization_errors[1], errs[22:44].mean())
    with pytest.raises(ValueError):
        EvalReport(errs[:-1], {"groups_per_realization": 22}).realization_errors


def test_reference_values_and_kinds():
    assert PUBLISHED_REFERENCE == {("cnn_convlstm", "integrated"): 0.434, ("cnn", "integrated"): 0.448,
                               ("cnn", "individual"): 0.539}
    assert estimation_kind(1) == "individual" and estimation_kind(242) == "integrated"
    assert DEFAULT_SWEEP == (1, 2, 11, 22, 121, 242)


@pytest.fixture(scope="module")
def experiment():
    sim = SimConfig(n_samples=20, seed=4)
    h = simulate_csi(load_profile("model-b"), sim)
    cfg = TrainConfig(max_epochs=1, dtype="float64", seed=4)
    return Experiment(h, sim, "model-b", cfg, base_channels=2)


def test_sweep_rows_and_conservation(experiment):
    rows = subcarrier_sweep(experiment)
    assert [r.group_size for r in rows] == list(DEFAULT_SWEEP)
    assert {r.label_entries for r in rows} == {20 * 242 * 4}
    assert [r.n_items for r in rows] == [20 * 242 // g for g in DEFAULT_SWEEP]
    assert rows[0].report.metadata["estimation"] == "individual"
    with pytest.raises(ValueError):
        subcarrier_sweep(experiment, [5])


def test_comparison_rows_and_determinism(experiment):
    rows = run_comparison(experiment)
    assert [(r.variant, r.group_size, r.reference) for r in rows] == [
        ("cnn_convlstm", 242, 0.434), ("cnn", 242, 0.448), ("cnn", 1, 0.539)]
    again = Experiment(experiment.h, experiment.sim, "model-b", experiment.train_config, base_channels=2)
    assert [r.mean_error for r in run_comparison(again)] == [r.mean_error for r in rows]
    res = experiment.run("cnn", 242)
    a = evaluate(res.weights, res.spec, experiment.dataset(242))
    b = evaluate(res.weights, res.spec, experiment.dataset(242))
    assert a.mean == b.mean == res.report.mean
    with pytest.raises(KeyError):
        evaluate(res.weights, res.spec, experiment.dataset(242), "holdout")


def test_render_report_files(tmp_path, experiment):
    reps = [experiment.run("cnn", g).report for g in (1, 242)]
    sweep = [(g, experiment.run("cnn", g).report.mean) for g in (1, 242)]
    a = render_report(reps, tmp_path / "a", sweep)
    b = render_report(reps, tmp_path / "b", sweep)
    names = sorted(p.name for p in a)
    assert names == sorted(p.name for p in b)
    for pa, pb in zip(sorted(a), sorted(b)):
        assert pa.read_bytes() == pb.read_bytes()
    for expected in ("report_table2_all_all.csv", "report_fig4_cnn_242.svg", "report_fig5_cnn_1.csv",
                     "report_fig5_all_all.svg", "report_fig6_cnn_all.csv", "report_errors_cnn_242.csv"):
        assert expected in names
    table = (tmp_path / "a" / "report_table2_all_all.csv").read_text()
    assert "0.448" in table and "0.539" in table
    assert "\r" not in table


def test_render_simple_ecdf(tmp_path):
    rep = EvalReport(np.array([1.0, 2.0, 3.0]), {"variant": "cnn", "group_size": 1})
    render_report([rep], tmp_path)
    rows = (tmp_path / "report_fig5_cnn_1.csv").read_text().splitlines()
    assert rows == ["error,fraction", "1.0,0.3333333333333333", "2.0,0.6666666666666666", "3.0,1.0"]
    svg = (tmp_path / "report_fig5_cnn_1.svg").read_text()
    assert svg.count("<polyline") == 1 and "<script" not in svg
    with pytest.raises(ValueError):
        render_report([], tmp_path)
