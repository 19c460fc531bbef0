import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize, stats

from wcasim.errors import (
    CoverageError,
    DomainError,
    ModelConsistencyError,
    ParameterError,
    ResourceError,
)
from wcasim.optimizer import (
    GAMMA_3_4,
    EnergyParams,
    Empirical,
    ExGaussianLifetime,
    PenaltyWeights,
    Rayleigh,
    SamplingSchedule,
    brute_force_schedule,
    constant_rate,
    constrained_ratio,
    energy_weights,
    exact_moments,
    exact_penalty,
    expected_samples_numeric,
    expected_wait_closed_form,
    expected_wait_numeric,
    optimal_rate,
    periodic_schedule,
    rayleigh_mle,
    rayleigh_schedule,
    step_energy,
    unit_mass_check,
)
from wcasim.timing import ExGaussianParams

# 30-digit mpmath values
GAMMA_REF = 1.2254167024651776451
RATIO_REF = 1.8835510808874978906
WAIT_REF = 0.72863713070738086797
# closed-form schedules run to 1e-6 coverage, exact moments by mpmath quadrature
# of sum n dF and sum int (t_n - t) f dt
EXACT_REF = {
    (1, 1): (1.29111551813, 0.674199565223),
    (1, 2): (1.11931419039, 0.97168084391),
    (1, 10): (1.00178939348, 2.30731830783),
    (1, 0.5): (1.56811797375, 0.474128337014),
}
# grid 0.02 sigma, 12 instants; confirmed by continuous Nelder-Mead below
DP_REF = {0.5: 1.2505038, 2: 3.1816807, 10: 11.7360799}


def test_constants():
    assert GAMMA_3_4 == pytest.approx(GAMMA_REF, abs=1e-12)
    assert constrained_ratio(1, 1) == pytest.approx(RATIO_REF, rel=1e-12)
    assert expected_wait_closed_form(1, PenaltyWeights(1, 1)) == pytest.approx(WAIT_REF, rel=1e-12)


def test_constrained_ratio_examples():
    assert constrained_ratio(1, 1) == pytest.approx(1.88355, abs=1e-5)
    assert constrained_ratio(2, 1) == pytest.approx(7.5342, abs=1e-4)
    assert constrained_ratio(1, 2) == pytest.approx(0.94177, abs=1e-5)
    for bad in [(0, 1), (1, 0), (-1, 1)]:
        with pytest.raises(ParameterError):
            constrained_ratio(*bad)


def test_wait_closed_form_examples():
    assert expected_wait_closed_form(1, PenaltyWeights.from_ratio(1.88355108)) == pytest.approx(1.0, abs=1e-8)
    a = expected_wait_closed_form(2, PenaltyWeights.from_ratio(0.7))
    b = expected_wait_closed_form(2, PenaltyWeights.from_ratio(2.8))
    assert b == pytest.approx(2 * a, rel=1e-12)


@given(st.floats(0.05, 20), st.floats(0.01, 100))
def test_constraint_inverse(w0, sigma):
    w = PenaltyWeights.from_ratio(constrained_ratio(w0, sigma))
    assert expected_wait_closed_form(sigma, w) == pytest.approx(w0, rel=1e-12)


def test_weights_validation():
    for a, b in [(0, 1), (1, 0), (-1, 1), (math.inf, 1)]:
        with pytest.raises(ParameterError):
            PenaltyWeights(a, b)
    with pytest.raises(ParameterError):
        PenaltyWeights(1, 1, math.nan)


def test_optimal_rate_rayleigh():
    d = Rayleigh(1.0)
    r = optimal_rate(d, PenaltyWeights(1, 1))
    assert r(2.0) == pytest.approx(1.0, rel=1e-12)
    r4 = optimal_rate(d, PenaltyWeights(4, 1))
    t = np.linspace(0.1, 5, 50)
    assert np.allclose(r4(t), r(t) / 2, rtol=1e-12)
    d3 = Rayleigh(1.7)
    w = PenaltyWeights(0.3, 1.2)
    assert np.allclose(optimal_rate(d3, w)(t), np.sqrt(1.2 * t / (2 * 0.3 * 1.7**2)), rtol=1e-12)


def test_optimal_rate_general_matches_hazard_formula():
    d = ExGaussianLifetime(ExGaussianParams(3.0, 0.6, 1.2))
    w = PenaltyWeights(1.5, 0.5)
    r = optimal_rate(d, w)
    for t in (0.5, 2.0, 4.0, 8.0):
        ref = math.sqrt(0.5 * float(d.pdf(t)) / (2 * 1.5 * float(d.ccdf(t))))
        assert r(t) == pytest.approx(ref, rel=1e-9)


def test_optimal_rate_domain_error():
    samples = tuple(np.random.default_rng(0).uniform(1, 2, 50))
    d = Empirical(samples, bandwidth=0.01)
    with pytest.raises(DomainError):
        optimal_rate(d, PenaltyWeights(1, 1))(100.0)


@pytest.mark.parametrize("dist", [
    Rayleigh(1.3),
    ExGaussianLifetime(ExGaussianParams(3.0, 0.6, 1.2)),
    Empirical(tuple(np.random.default_rng(1).rayleigh(2.0, 200))),
])
def test_distribution_consistency(dist):
    t = np.linspace(0, 12, 400)
    assert np.all(np.abs(dist.cdf(t) + dist.ccdf(t) - 1) < 1e-9)
    assert np.all(np.diff(dist.cdf(t)) >= -1e-15)
    assert np.all(dist.pdf(t) >= 0)


def test_rayleigh_integrated_cdf_matches_quadrature():
    from wcasim.optimizer import LifetimeDistribution

    d = Rayleigh(1.7)
    t = np.array([0.0, 0.3, 1.0, 2.5, 7.0])
    generic = LifetimeDistribution.integrated_cdf(d, t)
    assert np.allclose(d.integrated_cdf(t), generic, rtol=1e-9, atol=1e-12)


def test_rayleigh_schedule_examples():
    w = PenaltyWeights.from_ratio(2)
    s = rayleigh_schedule(1, w, count=3)
    assert s.instants == pytest.approx((2.0800838, 3.3019272, 4.3267487), abs=1e-7)
    s10 = rayleigh_schedule(1, w, count=10).as_array()
    steps = np.diff(np.concatenate([[0], s10 ** 1.5]))
    assert np.allclose(steps, 3 * math.sqrt(1.0), rtol=1e-12)
    s2 = rayleigh_schedule(2, w, count=10).as_array()
    assert np.allclose(s2, s10 * 2 ** (2 / 3), rtol=1e-12)
    assert len(rayleigh_schedule(1, w, count=0)) == 0


def test_rayleigh_schedule_coverage():
    for sigma, ratio in [(1, 0.5), (3, 10), (0.2, 1)]:
        s = rayleigh_schedule(sigma, PenaltyWeights.from_ratio(ratio))
        assert s.uncovered(Rayleigh(sigma)) <= 1e-6
        shorter = SamplingSchedule(s.instants[:-1])
        assert shorter.uncovered(Rayleigh(sigma)) > 1e-6


def test_schedule_validation():
    with pytest.raises(ParameterError):
        SamplingSchedule((1.0, 1.0))
    with pytest.raises(ParameterError):
        SamplingSchedule((0.0, 1.0))
    with pytest.raises(ParameterError):
        rayleigh_schedule(0, PenaltyWeights(1, 1))


def test_unit_mass():
    w = PenaltyWeights.from_ratio(2)
    s = rayleigh_schedule(1, w, count=10)
    m = unit_mass_check(s, optimal_rate(Rayleigh(1), w))
    assert np.all(np.abs(m - 1) <= 1e-6)
    # constant rate with its own period: rectangle areas
    assert np.allclose(unit_mass_check(periodic_schedule(0.25, 3), constant_rate(4.0)), 1, atol=1e-12)
    # negative control
    m = unit_mass_check(periodic_schedule(1.0, 6), optimal_rate(Rayleigh(1), w))
    assert np.max(np.abs(m - 1)) > 0.1


def test_expected_wait_numeric():
    d = Rayleigh(1)
    assert expected_wait_numeric(d, optimal_rate(d, PenaltyWeights(1, 1))) == pytest.approx(WAIT_REF, abs=1e-4)
    assert expected_wait_numeric(d, constant_rate(2.0)) == pytest.approx(0.25, rel=1e-8)
    r = optimal_rate(d, PenaltyWeights(2, 1))
    a = expected_wait_numeric(d, r)
    b = expected_wait_numeric(d, lambda t: 2 * r(t))
    assert b == pytest.approx(a / 2, rel=1e-8)


def test_expected_samples_numeric():
    d = ExGaussianLifetime(ExGaussianParams(3.0, 0.6, 1.2))
    assert expected_samples_numeric(d, constant_rate(1.5)) == pytest.approx(1.5 * 4.2, rel=1e-6)
    # nested form of the same expectation, as an independent route
    r = optimal_rate(Rayleigh(1.0), PenaltyWeights(1, 1))
    ray = Rayleigh(1.0)
    from scipy import integrate

    nested, _ = integrate.quad(
        lambda t: integrate.quad(r, 0, t)[0] * float(ray.pdf(t)), 0, ray.upper(1e-14), limit=200)
    assert expected_samples_numeric(ray, r) == pytest.approx(nested, rel=1e-6)
    assert expected_samples_numeric(ray, lambda t: 2 * r(t)) == pytest.approx(2 * nested, rel=1e-6)


def test_expected_samples_vs_exact():
    # The smooth-rate expression is the area under r* up to T; a schedule needs
    # one capture for each started unit of area, so the exact count is the
    # ceiling of that area and sits between it and it + 1.
    ray = Rayleigh(1.0)
    w = PenaltyWeights(1, 1)
    approx = expected_samples_numeric(ray, optimal_rate(ray, w))
    e_s, _ = exact_moments(rayleigh_schedule(1, w), ray)
    assert e_s == pytest.approx(EXACT_REF[(1, 1)][0], rel=1e-9)
    assert approx <= e_s < approx + 1


@pytest.mark.parametrize("key", sorted(EXACT_REF))
def test_exact_moments_against_mpmath(key):
    sigma, ratio = key
    w = PenaltyWeights.from_ratio(ratio)
    e_s, e_w = exact_moments(rayleigh_schedule(sigma, w), Rayleigh(sigma))
    assert e_s == pytest.approx(EXACT_REF[key][0], rel=1e-9)
    assert e_w == pytest.approx(EXACT_REF[key][1], rel=1e-9)


def test_exact_penalty_general_distribution_matches_rayleigh_closed_form():
    from wcasim.optimizer import LifetimeDistribution

    class Generic(LifetimeDistribution):
        def __init__(self, s):
            self.r = Rayleigh(s)

        def pdf(self, t):
            return self.r.pdf(t)

        def cdf(self, t):
            return self.r.cdf(t)

    w = PenaltyWeights.from_ratio(2)
    s = rayleigh_schedule(1.4, w)
    a = exact_penalty(s, Rayleigh(1.4), w)
    b = exact_penalty(s, Generic(1.4), w)
    assert b.e_s == pytest.approx(a.e_s, rel=1e-12)
    assert b.e_w == pytest.approx(a.e_w, rel=1e-8)


def test_exact_penalty_uniform_periodic():
    from wcasim.optimizer import LifetimeDistribution

    class Uniform(LifetimeDistribution):
        def __init__(self, p):
            self.p = p

        def pdf(self, t):
            return np.where((np.asarray(t) >= 0) & (np.asarray(t) <= self.p), 1 / self.p, 0.0)

        def cdf(self, t):
            return np.clip(np.asarray(t, dtype=float) / self.p, 0, 1)

    d = Uniform(2.0)
    pen = exact_penalty(SamplingSchedule((2.0,)), d, PenaltyWeights(1, 1))
    assert pen.e_s == pytest.approx(1.0, abs=1e-12)
    assert pen.e_w == pytest.approx(1.0, rel=1e-9)


def test_single_late_instant():
    d = Rayleigh(1)
    e_s, _ = exact_moments(SamplingSchedule((d.upper(1e-9),)), d)
    assert e_s == pytest.approx(1.0, abs=1e-8)


def test_coverage_error():
    with pytest.raises(CoverageError):
        exact_penalty(rayleigh_schedule(1, PenaltyWeights(1, 1), count=3), Rayleigh(1), PenaltyWeights(1, 1))


@given(st.floats(0.3, 5), st.floats(0.2, 20), st.floats(1.05, 3))
def test_monotone_trade_off(sigma, ratio, factor):
    d = Rayleigh(sigma)
    lo = exact_moments(rayleigh_schedule(sigma, PenaltyWeights.from_ratio(ratio)), d)
    hi = exact_moments(rayleigh_schedule(sigma, PenaltyWeights.from_ratio(ratio * factor)), d)
    # once almost every run needs one capture, e_s only moves by the 1e-6 tail
    assert hi[0] <= lo[0] + 1e-5
    assert hi[1] > lo[1]


@pytest.mark.parametrize("ratio", sorted(DP_REF))
def test_brute_force_reference_values(ratio):
    w = PenaltyWeights.from_ratio(ratio)
    s = brute_force_schedule(Rayleigh(1), w, 0.02)
    assert exact_penalty(s, Rayleigh(1), w).penalty == pytest.approx(DP_REF[ratio], abs=1e-6)


@pytest.mark.parametrize("ratio", [0.5, 2, 10])
def test_brute_force_against_continuous_search(ratio):
    # free-instant Nelder-Mead from the DP answer can only shave grid error
    d = Rayleigh(1)
    w = PenaltyWeights.from_ratio(ratio)
    s = brute_force_schedule(d, w, 0.02)
    x0 = np.log(np.diff(np.concatenate([[0.0], s.as_array()])))

    def f(logs):
        t = np.cumsum(np.exp(logs))
        if d.ccdf(t[-1]) > 1e-6:
            return 1e6
        return exact_penalty(SamplingSchedule(tuple(t)), d, w).penalty

    res = optimize.minimize(f, x0, method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 20000})
    dp = exact_penalty(s, d, w).penalty
    assert res.fun <= dp + 1e-12
    assert dp <= res.fun * 1.005


def test_brute_force_limits():
    d = Rayleigh(1)
    late = brute_force_schedule(d, PenaltyWeights.from_ratio(1e4), 0.02)
    assert exact_moments(late, d)[0] == pytest.approx(1.0, abs=1e-3)
    dense = brute_force_schedule(d, PenaltyWeights.from_ratio(1e-4), 0.02, max_instants=12)
    assert len(dense) == 12


def test_brute_force_errors():
    d = Rayleigh(1)
    w = PenaltyWeights(1, 1)
    with pytest.raises(ParameterError):
        brute_force_schedule(d, w, 0.1)
    with pytest.raises(ResourceError):
        brute_force_schedule(d, w, 0.0005, budget=1e6)


def test_sandwich_lower_bound():
    # the closed form can never beat the grid optimum by more than grid error
    for ratio in (0.5, 2, 10):
        w = PenaltyWeights.from_ratio(ratio)
        closed = exact_penalty(rayleigh_schedule(1, w), Rayleigh(1), w).penalty
        assert DP_REF[ratio] <= closed


@pytest.mark.parametrize("sigma", [1, 2, 5])
@pytest.mark.parametrize("ratio", [0.5, 2, 10])
def test_oracle_sandwich(sigma, ratio):
    d = Rayleigh(sigma)
    w = PenaltyWeights.from_ratio(ratio)
    closed = exact_penalty(rayleigh_schedule(sigma, w), d, w).penalty
    best = exact_penalty(brute_force_schedule(d, w, 0.02 * sigma), d, w).penalty
    assert best <= closed <= 1.03 * best


def test_energy_weights():
    ep = EnergyParams(p0=0.015, pc=0.045, tau_p=0.25, tau_c=2.45)
    w = energy_weights(ep)
    assert w.alpha == pytest.approx(0.0735, rel=1e-12)
    assert w.beta == 0.015
    assert energy_weights(ep, mean_exec=4.0).c == pytest.approx((4.0 + 2.7) * 0.015)
    with pytest.raises(ParameterError):
        energy_weights(EnergyParams(p0=0.015, pc=0.015, tau_p=0.25, tau_c=1.0))
    with pytest.raises(ParameterError):
        energy_weights(EnergyParams(p0=0.015, pc=0.045, tau_p=0.25, tau_c=0.0))


def test_energy_params_validation():
    with pytest.raises(ParameterError):
        EnergyParams(p0=0.0)
    with pytest.raises(ParameterError):
        EnergyParams(p0=0.05, pc=0.04)
    with pytest.raises(ParameterError):
        EnergyParams.from_rtt(0.2, tau_p=0.25)
    assert EnergyParams.from_rtt(0.3).tau_c == pytest.approx(0.05)


def test_step_energy():
    ep = EnergyParams(p0=0.015, pc=0.045, tau_p=0.25, tau_c=0.05)
    assert step_energy(1, 5.0, 0.0, ep) == pytest.approx(0.08100, abs=1e-12)
    flat = EnergyParams(p0=0.03, pc=0.03, tau_p=0.25, tau_c=0.05)
    assert step_energy(1, 5.0, 0.4, flat) == pytest.approx(step_energy(7, 5.0, 0.4, flat), rel=1e-12)
    assert step_energy(7, 5.0, 0.4, flat) == pytest.approx(0.03 * 5.7, rel=1e-12)
    with pytest.raises(ModelConsistencyError):
        step_energy(200, 5.0, 0.0, ep)


def test_energy_decomposition():
    # E = alpha S + beta W + c exactly, with c built from the realized T
    ep = EnergyParams(p0=0.015, pc=0.045, tau_p=0.25, tau_c=0.8)
    w = energy_weights(ep, mean_exec=3.3)
    assert step_energy(3, 3.3, 0.7, ep) == pytest.approx(w.alpha * 3 + w.beta * 0.7 + w.c, rel=1e-12)


def test_rayleigh_mle():
    rng = np.random.default_rng(8)
    assert rayleigh_mle(rng.rayleigh(2.0, 100_000)) == pytest.approx(2.0, abs=0.01)
    assert rayleigh_mle([3.0] * 10) == pytest.approx(3 / math.sqrt(2), rel=1e-12)
    for bad in ([], [1.0], [1.0, -1.0], [1.0, math.nan]):
        with pytest.raises(ParameterError):
            rayleigh_mle(bad)


@given(st.lists(st.floats(0.01, 100), min_size=2, max_size=50), st.floats(0.1, 10))
def test_rayleigh_mle_homogeneous(x, k):
    assert rayleigh_mle([k * v for v in x]) == pytest.approx(k * rayleigh_mle(x), rel=1e-9)


def test_monte_carlo_wait_formula_matches_exact():
    # the exact e_w is the mean of (first instant >= T) - T
    d = Rayleigh(2.0)
    s = rayleigh_schedule(2.0, PenaltyWeights.from_ratio(1.0))
    t = np.random.default_rng(3).rayleigh(2.0, 200_000)
    inst = s.as_array()
    waits = inst[np.searchsorted(inst, t)] - t
    _, e_w = exact_moments(s, d)
    assert waits.mean() == pytest.approx(e_w, abs=4 * waits.std() / math.sqrt(t.size))
    assert stats.kstest(t, "rayleigh", args=(0, 2.0)).pvalue > 1e-3
