import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wcasim.calibration import default_calibration
from wcasim.errors import CalibrationError, FitError, ParameterError, StateError
from wcasim.timing import (
    BinTable,
    ExGaussianParams,
    NeuroticismLevel,
    TimingModel,
    TtfHistory,
    Variant,
    bin_index,
    fit_exgaussian,
    make_reference_model,
    make_weights,
    sample_exgaussian,
    weighted_ttf,
)

# frozen from a 30-digit mpmath summation of exp(-0.7 j), j = 1..12
W1 = 0.503527923185326502


def test_weights_default():
    w = make_weights()
    assert len(w) == 12
    assert math.isclose(w.sum(), 1.0, abs_tol=1e-12)
    assert w[0] == pytest.approx(W1, abs=1e-15)
    assert w[0] == pytest.approx(0.5035, abs=5e-5)
    assert w[0] / w[1] == pytest.approx(math.exp(0.7), rel=1e-12)


def test_weights_single():
    assert make_weights(1, 0.7).tolist() == [1.0]


@pytest.mark.parametrize("horizon, decay", [(0, 0.7), (-3, 0.7), (12, 0.0), (12, -1.0)])
def test_weights_reject(horizon, decay):
    with pytest.raises(ParameterError):
        make_weights(horizon, decay)


@given(st.integers(1, 40), st.floats(0.01, 3.0))
def test_weights_normalized_and_geometric(horizon, decay):
    w = make_weights(horizon, decay)
    assert abs(w.sum() - 1.0) < 1e-12
    ratios = w[:-1] / w[1:]
    assert np.allclose(ratios, math.exp(decay), rtol=1e-12, atol=0)


def test_history_padding_and_window():
    h = TtfHistory(12)
    h.push(3.0)
    assert h.values == (3.0,) * 12
    for x in range(20):
        h.push(float(x))
        assert len(h) == 12
    assert h.values[-1] == 19.0


def test_weighted_ttf_examples():
    w = make_weights()
    h = TtfHistory(12)
    h.push(2.5)
    assert weighted_ttf(h, w) == pytest.approx(2.5, abs=1e-12)
    h = TtfHistory(12)
    h.push(0.0)
    h.push(5.0)
    assert weighted_ttf(h, w) == pytest.approx(5 * W1, abs=1e-12)
    assert weighted_ttf(h, w) == pytest.approx(2.5175, abs=2e-4)
    h = TtfHistory(12)
    h.push(3.0)
    assert weighted_ttf(h, w) == pytest.approx(3.0, abs=1e-12)


def test_weighted_ttf_empty():
    with pytest.raises(StateError):
        weighted_ttf(TtfHistory(12), make_weights())
    with pytest.raises(StateError):
        TimingModel(default_calibration(), "low").weighted_ttf()


@pytest.mark.parametrize("wttf, k", [
    (0.0, 0), (0.5, 0), (0.82, 0), (0.83, 1), (1.53, 1), (2.08, 2), (2.09, 3),
    (2.67, 3), (3.45, 4), (4.13, 5), (4.14, 6), (10.0, 6),
])
def test_bin_index(wttf, k):
    assert bin_index(wttf) == k


def test_bin_index_negative():
    with pytest.raises(ParameterError):
        bin_index(-0.1)


@pytest.mark.parametrize("edges", [(), (1.0, 1.0), (2.0, 1.0), (-1.0, 2.0), (0.0, 1.0)])
def test_bintable_rejects(edges):
    with pytest.raises(ParameterError):
        BinTable(edges)


@given(st.floats(0, 1e6, allow_nan=False))
def test_bin_totality(x):
    bins = BinTable()
    k = bins.index(x)
    edges = (0.0,) + bins.edges + (math.inf,)
    assert 0 <= k < 7
    # (lo, hi] except that bin 0 includes 0
    assert x <= edges[k + 1]
    assert x > edges[k] or k == 0


def test_levels():
    assert NeuroticismLevel.from_score(0.0) is NeuroticismLevel.LOW
    assert NeuroticismLevel.from_score(0.4999) is NeuroticismLevel.LOW
    assert NeuroticismLevel.from_score(0.5) is NeuroticismLevel.HIGH
    assert NeuroticismLevel.from_score(1.0) is NeuroticismLevel.HIGH
    with pytest.raises(ParameterError):
        NeuroticismLevel.from_score(1.2)


def test_exgaussian_moments():
    p = ExGaussianParams(5.0, 1.0, 2.0)
    assert p.mean == 7.0 and p.var == 5.0
    rng = np.random.default_rng(7)
    x = np.array([sample_exgaussian(p, rng) for _ in range(100_000)])
    assert abs(x.mean() - 7.0) < 0.03
    assert abs(x.var() - 5.0) < 0.15


def test_exgaussian_moments_within_three_se():
    p = ExGaussianParams(3.0, 0.8, 1.5)
    rng = np.random.default_rng(11)
    x = np.array([sample_exgaussian(p, rng) for _ in range(100_000)])
    n = x.size
    assert abs(x.mean() - p.mean) < 3 * math.sqrt(p.var / n)
    # var of the sample variance uses the fourth central moment: 3 s^4 + 6 s^2 t^2 + 9 t^4
    m4 = 3 * p.sigma**4 + 6 * p.sigma**2 * p.tau**2 + 9 * p.tau**4
    assert abs(x.var(ddof=1) - p.var) < 3 * math.sqrt((m4 - p.var**2) / n)


def test_exgaussian_degenerate_limit(rng):
    p = ExGaussianParams(5.0, 1e-9, 1e-9)
    assert sample_exgaussian(p, rng) == pytest.approx(5.0, abs=1e-6)


def test_exgaussian_positive_by_redraw(rng):
    p = ExGaussianParams(0.1, 1.0, 0.1)
    assert all(sample_exgaussian(p, rng) > 0 for _ in range(2000))


def test_fit_round_trip():
    rng = np.random.default_rng(3)
    x = rng.normal(5, 1, 10_000) + rng.exponential(2, 10_000)
    p = fit_exgaussian(x)
    assert p.mu == pytest.approx(5, rel=0.1)
    assert p.sigma == pytest.approx(1, rel=0.1)
    assert p.tau == pytest.approx(2, rel=0.1)


def test_fit_likelihood_not_worse_than_start():
    from wcasim.timing import _moment_start

    rng = np.random.default_rng(4)
    x = rng.normal(2, 0.5, 300) + rng.exponential(1.0, 300)
    start = ExGaussianParams(*_moment_start(x))
    fit = fit_exgaussian(x)
    assert fit.logpdf(x).sum() >= start.logpdf(x).sum() - 1e-9


def test_fit_normal_tau_to_floor():
    rng = np.random.default_rng(5)
    p = fit_exgaussian(rng.normal(5, 1, 5000))
    assert p.mu == pytest.approx(5, abs=0.1)
    assert p.tau < 0.3


def test_fit_errors():
    with pytest.raises(FitError):
        fit_exgaussian([1.0] * 29)
    with pytest.raises(FitError):
        fit_exgaussian([2.0] * 100)
    with pytest.raises(FitError):
        fit_exgaussian([1.0, -1.0] * 20)


def test_advance_selects_cells(table, rng):
    m = TimingModel(table, "low")
    for _ in range(15):
        m.advance(0.0, rng)
    assert m.current_bin() == 0
    m = TimingModel(table, "high")
    for _ in range(15):
        m.advance(5.0, rng)
    assert m.current_bin() == 6
    low_samples = set(table.cell(NeuroticismLevel.LOW, 0).samples)
    m = TimingModel(table, "low")
    assert all(m.advance(0.0, rng) in low_samples for _ in range(50))


def test_advance_fitted_positive(table, rng):
    m = TimingModel(table, "high", Variant.FITTED)
    assert all(m.advance(2.0, rng) > 0 for _ in range(500))


def test_empirical_without_samples(table, rng):
    from wcasim.timing import CalibrationCell, CalibrationTable

    cells = {k: CalibrationCell(c.params) for k, c in table.cells.items()}
    m = TimingModel(CalibrationTable(cells), "low", "empirical")
    with pytest.raises(CalibrationError):
        m.advance(1.0, rng)


@pytest.mark.parametrize("level", ["low", "high"])
@pytest.mark.parametrize("variant", ["empirical", "fitted"])
def test_monotone_state_response(table, level, variant):
    rng = np.random.default_rng(0)
    means = []
    for ttf in (0.0, 5.0):
        m = TimingModel(table, level, variant)
        means.append(np.mean([m.advance(ttf, rng) for _ in range(10_000)]))
    assert means[0] < means[1]


def test_reference_model_ignores_ttf(table):
    ref = make_reference_model(table)
    a = [ref.advance(0.0, np.random.default_rng(9)) for _ in range(1)]
    b = [ref.advance(5.0, np.random.default_rng(9)) for _ in range(1)]
    assert a == b
    r1, r2 = np.random.default_rng(2), np.random.default_rng(2)
    ref2 = make_reference_model(table)
    assert [ref.advance(1.0, r1) for _ in range(100)] == [ref2.advance(3.0, r2) for _ in range(100)]


def test_reference_model_mean(table):
    ref = make_reference_model(table)
    assert ref.params.mean == pytest.approx(table.corpus().mean(), rel=0.02)


def test_reference_model_empty():
    with pytest.raises(FitError):
        make_reference_model([])
