import math

import numpy as np
import pytest

from speclab.tails import (
    DomainError,
    TailLaw,
    f_eval,
    f_inv,
    invert_increasing,
    power_log,
    sample_omega,
    sample_omega_array,
    site_tail_prob,
    stretched_exp,
    tail_prob,
)

ALL_LAWS = [
    power_log(2.0, 0),
    power_log(1.0, 0),
    power_log(1.0, 1),
    power_log(0.5, 2),
    stretched_exp(0.5),
    stretched_exp(1.0),
]


def law_id(law):
    if law.family == "power_log":
        return f"power_p{law.p}_k{law.k}"
    return f"stretched_d{law.delta}"


def representable_max(law):
    """Largest x with f(x) inside float64 range, capped at the spec's 1e6."""
    if law.family == "stretched_exp":
        return min(1e6, (0.99 * math.log(np.finfo(float).max)) ** (1.0 / law.delta))
    return 1e6


# --- construction ----------------------------------------------------------

def test_power_log_clamp_points():
    assert power_log(2.0, 0).clamp_point == 1.0
    law = power_log(1.0, 1)
    assert law.monotone_from == pytest.approx(math.e)
    assert law.clamp_point == pytest.approx(math.e)  # f(e) = e >= 1
    # here f at the monotone threshold is below 1, so the clamp sits beyond it
    law2 = power_log(0.5, 2)
    assert law2.clamp_point > law2.monotone_from
    assert f_eval(law2, law2.clamp_point) == pytest.approx(1.0, rel=1e-10)


def test_stretched_clamp_is_origin():
    law = stretched_exp(0.7)
    assert law.clamp_point == 0.0
    assert law.f_at_clamp == 1.0


def test_invalid_parameters():
    with pytest.raises(ValueError):
        power_log(0.0, 0)
    with pytest.raises(ValueError):
        power_log(1.0, -1)
    with pytest.raises(ValueError):
        stretched_exp(0.0)
    with pytest.raises(ValueError):
        stretched_exp(1.5)
    with pytest.raises(ValueError):
        TailLaw("cauchy")


def test_serialization_roundtrip():
    for law in ALL_LAWS:
        assert TailLaw.from_dict(law.to_dict()) == law


# --- f_eval ----------------------------------------------------------------

def test_f_eval_values():
    assert f_eval(power_log(2.0, 0), 10.0) == pytest.approx(100.0, rel=1e-15)
    assert f_eval(power_log(1.0, 1), math.e) == pytest.approx(math.e, rel=1e-15)
    assert f_eval(stretched_exp(1.0), 3.0) == pytest.approx(math.exp(3.0), rel=1e-15)


def test_f_eval_domain_errors():
    with pytest.raises(DomainError):
        f_eval(power_log(2.0, 0), 0.0)
    with pytest.raises(DomainError):
        f_eval(power_log(1.0, 1), 1.0)
    with pytest.raises(DomainError):
        f_eval(stretched_exp(0.5), -1.0)


@pytest.mark.parametrize("law", ALL_LAWS, ids=law_id)
def test_f_eval_strictly_increasing_above_clamp(law):
    xs = np.geomspace(law.clamp_point + 0.5, representable_max(law), 200)
    vals = f_eval(law, xs)
    assert np.all(np.diff(vals) > 0)


# --- f_inv -----------------------------------------------------------------

def test_f_inv_closed_forms():
    assert f_inv(power_log(2.0, 0), 100.0) == pytest.approx(10.0, rel=1e-14)
    assert f_inv(stretched_exp(0.5), math.exp(2.0)) == pytest.approx(4.0, rel=1e-14)


def test_f_inv_log_corrected_root():
    law = power_log(1.0, 1)
    x = f_inv(law, 1000.0)
    # x / log(x) = 1000, checked by the forward map
    assert f_eval(law, x) == pytest.approx(1000.0, rel=1e-12)


def test_f_inv_domain_error():
    law = power_log(1.0, 1)  # f(clamp) = e
    with pytest.raises(DomainError):
        f_inv(law, 1.0)


@pytest.mark.parametrize("law", ALL_LAWS, ids=law_id)
def test_roundtrip_f_inv_of_f_eval(law):
    # 1000 log-uniform points between clamp+1 and 1e6 (capped where f would
    # overflow double precision), relative error <= 1e-10
    rng = np.random.default_rng(12)
    lo = law.clamp_point + 1.0
    xs = np.exp(rng.uniform(np.log(lo), np.log(representable_max(law)), size=1000))
    for x in xs:
        y = f_eval(law, float(x))
        back = f_inv(law, y)
        assert abs(back - x) / x <= 1e-10


def test_invert_increasing_errors():
    with pytest.raises(DomainError):
        invert_increasing(lambda x: x, 0.5, lo=1.0)
    with pytest.raises(DomainError):
        invert_increasing(lambda x: x, 3.0, lo=1.0, hi=2.0)


# --- tail_prob -------------------------------------------------------------

def test_tail_prob_values():
    assert tail_prob(power_log(2.0, 0), 10.0) == pytest.approx(0.01, rel=1e-15)
    assert tail_prob(stretched_exp(1.0), math.log(4.0)) == pytest.approx(0.25, rel=1e-14)
    for law in ALL_LAWS:
        assert tail_prob(law, 0.0) == 1.0


@pytest.mark.parametrize("law", ALL_LAWS, ids=law_id)
def test_tail_prob_nonincreasing(law):
    xs = np.linspace(0.0, 50.0, 500)
    probs = tail_prob(law, xs)
    assert np.all(np.diff(probs) <= 1e-15)
    assert np.all((probs >= 0) & (probs <= 1))


def test_tail_prob_huge_argument_underflows_quietly():
    with np.errstate(over="raise", invalid="raise"):
        assert tail_prob(stretched_exp(1.0), 1e6) == 0.0


# --- sampling --------------------------------------------------------------

def test_sample_omega_closed_forms():
    assert sample_omega(power_log(1.0, 0), 0.001) == pytest.approx(1000.0, rel=1e-12)
    assert sample_omega(stretched_exp(1.0), math.exp(-5.0)) == pytest.approx(5.0, rel=1e-12)
    with pytest.raises(DomainError):
        sample_omega(power_log(1.0, 0), 0.0)


@pytest.mark.parametrize("law", ALL_LAWS, ids=law_id)
def test_samples_never_below_clamp(law):
    rng = np.random.default_rng(5)
    u = 1.0 - rng.random(10_000)
    omega = sample_omega_array(law, u)
    assert np.all(omega >= law.clamp_point - 1e-12)


def test_sampler_tail_calibration_monte_carlo():
    # empirical survival within 3 binomial SE of tail_prob, 1e6 samples
    law = power_log(2.0, 0)
    rng = np.random.default_rng(2024)
    n = 1_000_000
    omega = sample_omega_array(law, 1.0 - rng.random(n))
    p10 = tail_prob(law, 10.0)
    frac = np.mean(omega >= 10.0)
    se = math.sqrt(p10 * (1 - p10) / n)
    assert abs(frac - p10) <= 3 * se
    # survival quantile levels from the spec invariant
    for level in (0.5, 0.9, 0.99, 0.999):
        x = f_inv(law, 1.0 / (1.0 - level))  # tail_prob(x) = 1 - level
        target = 1.0 - level
        se = math.sqrt(target * (1 - target) / n)
        assert abs(np.mean(omega >= x) - target) <= 3 * se


def test_sampler_atom_mass():
    # for this law f(clamp) = e, so the clamp atom carries 1 - 1/e
    law = power_log(1.0, 1)
    rng = np.random.default_rng(77)
    n = 200_000
    omega = sample_omega_array(law, 1.0 - rng.random(n))
    at_clamp = np.mean(np.abs(omega - law.clamp_point) < 1e-12)
    expected = 1.0 - 1.0 / law.f_at_clamp
    assert abs(at_clamp - expected) <= 3 * math.sqrt(expected * (1 - expected) / n)


# --- per-site exceedance ---------------------------------------------------

def test_site_tail_prob_flat_weight_exact():
    for law in ALL_LAWS:
        p = site_tail_prob(law, 1.0, gamma=500.0, x=2.0)
        assert p == pytest.approx(1.0 / 1000.0, rel=1e-12)


def test_site_tail_prob_examples():
    assert site_tail_prob(power_log(1.0, 0), 2.0, 100.0, 1.0) == pytest.approx(
        1.0 / 200.0, rel=1e-13
    )
    # f_inv(100) = 10, f(30) = 900
    assert site_tail_prob(power_log(2.0, 0), 3.0, 100.0, 1.0) == pytest.approx(
        1.0 / 900.0, rel=1e-13
    )


@pytest.mark.parametrize("law", ALL_LAWS, ids=law_id)
def test_site_tail_prob_upper_bound(law):
    # p_n <= 1/(gamma x) whenever the weight is >= 1
    gamma, x = 300.0, 1.5
    weights = np.linspace(1.0, 50.0, 100)
    probs = site_tail_prob(law, weights, gamma, x)
    assert np.all(probs <= 1.0 / (gamma * x) + 1e-15)


def test_log_derivative_vanishes_at_infinity():
    # f'/f -> 0 along x = 10^j for every law except delta = 1, where it is
    # identically 1. Checked by central finite differences in extended
    # precision (f exceeds double range for stretched laws at large x).
    import mpmath as mp

    mp.mp.dps = 40

    def fd_ratio(law, x):
        if law.family == "power_log":
            f = lambda t: t ** law.p * mp.log(t) ** (-law.k)
        else:
            f = lambda t: mp.exp(t ** mp.mpf(law.delta))
        x = mp.mpf(x)
        h = x * mp.mpf("1e-12")
        return float((f(x + h) - f(x - h)) / (2 * h) / f(x))

    for law in [power_log(2.0, 0), power_log(1.0, 1), stretched_exp(0.5)]:
        ratios = [fd_ratio(law, 10.0 ** j) for j in range(1, 7)]
        assert all(b < a for a, b in zip(ratios, ratios[1:]))
        assert ratios[-1] < 1e-2 * ratios[0]
    boundary = [fd_ratio(stretched_exp(1.0), 10.0 ** j) for j in range(1, 7)]
    assert all(abs(r - 1.0) < 1e-9 for r in boundary)
