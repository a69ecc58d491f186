import math

import numpy as np
import pytest

from evostab.evolution import EstimationError, exponential_family, from_pointwise, identity_family
from evostab.green import check_l1_linf_characterization, estimate_admissibility, green_apply, truncated_trajectories
from evostab.lp_spaces import INF, Grid, band_limited, indicator, lp_norm
from evostab.models import TravelTimeTable, scalar_flow_family, h_constant
from evostab.stability import converse_constant


def box_response(t):
    return np.where(t <= 1, 1 - np.exp(-t), (math.e - 1) * np.exp(-t))


def generic(F):
    # same family without the diagonal fast path
    return from_pointwise(lambda t, s, x: F.batch(t, s, x), F.M, F.omega, F.kind, F.dim)


def test_green_of_box_matches_analytic():
    g = Grid(5.0, 0.001)
    Gf = green_apply(exponential_family(1.0), indicator(0, 1, 1.0, g))
    assert np.abs(Gf.values - box_response(g.times)).max() <= 2e-3


def test_fast_path_agrees_with_direct_sum():
    g = Grid(4.0, 0.01)
    F = exponential_family(0.7)
    f = band_limited(g, np.random.default_rng(1))
    np.testing.assert_allclose(green_apply(F, f).values, green_apply(generic(F), f).values, atol=1e-12)


def test_green_of_zero_is_zero_for_linear_family():
    g = Grid(3.0, 0.01)
    assert np.all(green_apply(exponential_family(2.0), g.zeros()).values == 0)


def test_green_is_nonlinear_for_shift_family():
    g = Grid(3.0, 0.01)
    F = scalar_flow_family(TravelTimeTable(h_constant(1.0)))
    Gf = green_apply(F, g.zeros())
    assert np.abs(Gf.values - g.times**2 / 2).max() <= 1e-10
    f = band_limited(g, np.random.default_rng(0))
    additive_gap = lp_norm(green_apply(F, f + f) - green_apply(F, f) - green_apply(F, f), INF)
    assert additive_gap > 1.0


def test_green_is_additive_for_linear_family():
    g = Grid(4.0, 0.01)
    F = generic(exponential_family(1.0))
    rng = np.random.default_rng(2)
    f, h = band_limited(g, rng), band_limited(g, rng)
    gap = green_apply(F, f + h) - green_apply(F, f) - green_apply(F, h)
    assert lp_norm(gap, INF) <= 1e-12


def test_green_vanishes_at_origin():
    g = Grid(2.0, 0.05)
    F = scalar_flow_family(TravelTimeTable(h_constant(0.6)))
    assert green_apply(F, band_limited(g, np.random.default_rng(4))).values[0] == 0.0


def test_ax_members():
    g = Grid(5.0, 0.01)
    F = exponential_family(1.0)
    box, point, early = truncated_trajectories(F, g, [(1.0, 0.0, 0.0, 1.0), (1.0, 0.0, 2.0, 2.0), (1.0, 3.0, 0.0, 2.0)])
    np.testing.assert_allclose(box.values, np.where(g.times <= 1 + 1e-9, np.exp(-g.times), 0.0), atol=1e-12)
    assert np.count_nonzero(point.values) <= 1
    assert lp_norm(point, 1) <= g.dt
    assert np.all(early.values == 0)


def test_ax_random_count_is_seeded():
    g = Grid(5.0, 0.01)
    a = truncated_trajectories(exponential_family(1.0), g, 5, seed=3)
    b = truncated_trajectories(exponential_family(1.0), g, 5, seed=3)
    assert len(a) == 5
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)


def test_admissibility_sup_sup():
    nu = 1.0
    rep = estimate_admissibility(exponential_family(nu), INF, INF, Grid(30.0, 0.01), 32, seed=0)
    assert rep.K_estimate <= 1 / nu + 1e-9
    assert rep.K_estimate >= 0.5 / nu
    assert rep.estimate_quality()["label"] == "estimate (lower bound)"


def test_admissibility_one_sup():
    rep = estimate_admissibility(exponential_family(0.5), 1, INF, Grid(20.0, 0.01), 32, seed=1)
    assert rep.K_estimate <= 1.0 + 1e-9


def test_admissibility_is_prefix_monotone():
    g = Grid(10.0, 0.01)
    F = exponential_family(1.0)
    ks = [estimate_admissibility(F, 2, 2, g, n, seed=5).K_estimate for n in (4, 8, 16)]
    assert ks[0] <= ks[1] <= ks[2]


def test_admissibility_below_converse_constant():
    g = Grid(30.0, 0.01)
    for nu in (0.5, 2.0):
        for p, q in ((1, 1), (1, 2), (2, 2), (2, 4), (INF, INF)):
            rep = estimate_admissibility(exponential_family(nu), p, q, g, 16, seed=2)
            assert rep.K_estimate <= converse_constant(p, q, nu) * (1 + 1e-6) + 1e-9


def test_admissibility_workers_do_not_change_result():
    g = Grid(8.0, 0.01)
    F = exponential_family(1.0)
    a = estimate_admissibility(F, 2, 2, g, 12, seed=7)
    b = estimate_admissibility(F, 2, 2, g, 12, seed=7, workers=4)
    assert a.K_estimate == b.K_estimate
    assert a.witness_index == b.witness_index


def test_admissibility_report_serializes_witness():
    rep = estimate_admissibility(exponential_family(1.0), 2, INF, Grid(5.0, 0.05), 4, seed=0)
    d = rep.to_dict()
    assert d["q"] == "inf"
    assert len(d["witness_pair"]["f"]["values"]) == Grid(5.0, 0.05).n


def test_admissibility_all_pairs_equal_raises():
    # a constant sampler makes the single trajectory pair coincide
    const = lambda rng, n: np.ones((n, 1))
    with pytest.raises(EstimationError):
        estimate_admissibility(exponential_family(1.0), 2, 2, Grid(5.0, 0.05), 1, seed=0, sampler=const)


def test_characterization_identity():
    rep = check_l1_linf_characterization(identity_family(), Grid(10.0, 0.01))
    assert rep.passed
    assert rep.N_measured == pytest.approx(1.0)
    assert rep.G_psi_sup == 0.0


def test_characterization_decay():
    rep = check_l1_linf_characterization(exponential_family(1.0), Grid(10.0, 0.01), N=1.0)
    assert rep.passed and rep.bound_violations == 0


def test_characterization_expanding_reports_witness():
    rep = check_l1_linf_characterization(exponential_family(-0.1), Grid(30.0, 0.01))
    assert not rep.uniformly_bounded
    assert rep.witness_tau is not None and rep.witness_tau > 10
