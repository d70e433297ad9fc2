"""Constitutive laws: evaluation, sampling, curve building, fitting.

Expected values below were derived independently (direct arithmetic on
the law definitions) before being frozen here.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imprint import constitutive as con

RNG = np.random.default_rng(20260822)


# ---------------------------------------------------------------------------
# Hollomon

def test_hollomon_at_yield_point():
    p = con.HollomonParams(E=100.0, sigma_y=0.1, n=0.2)
    assert con.eval_hollomon(p, 0.001) == pytest.approx(0.1, abs=1e-12)


def test_hollomon_n_one_is_linear():
    p = con.HollomonParams(E=100.0, sigma_y=0.1, n=1.0)
    assert con.eval_hollomon(p, 0.05) == pytest.approx(5.0, abs=1e-12)


def test_hollomon_power_branch_value():
    # oracle: 100 * (1e-3)^0.8 * (1e-2)^0.2 computed by hand
    p = con.HollomonParams(E=100.0, sigma_y=0.1, n=0.2)
    assert con.eval_hollomon(p, 0.01) == pytest.approx(0.15848931924611132, rel=1e-12)


def test_hollomon_rejects_negative_strain():
    p = con.HollomonParams(E=100.0, sigma_y=0.1, n=0.2)
    with pytest.raises(ValueError):
        con.eval_hollomon(p, -0.01)


# ---------------------------------------------------------------------------
# Ludwik

def test_ludwik_hardening_branch_value():
    # oracle: sigma = K * ep^n evaluated directly, then the total strain
    # recovered as ep + sigma/E must map back to the same stress
    p = con.LudwikParams(E=200.0, sigma_y=0.28, n=0.65, K=1.365)
    sigma = 1.365 * 0.1**0.65
    assert sigma == pytest.approx(0.30558543541457833, rel=1e-12)
    eps = 0.1 + sigma / p.E
    assert con.eval_ludwik(p, eps) == pytest.approx(sigma, rel=1e-10)


def test_ludwik_unit_plastic_strain_gives_K():
    p = con.LudwikParams(E=100.0, sigma_y=0.1, n=0.3, K=0.8)
    eps = 1.0 + p.K / p.E
    assert con.eval_ludwik(p, eps) == pytest.approx(p.K, rel=1e-10)


def test_ludwik_elastic_branch():
    p = con.LudwikParams(E=100.0, sigma_y=0.5, n=0.3, K=1.0)
    assert con.eval_ludwik(p, 0.001) == pytest.approx(0.1, abs=1e-14)


def test_ludwik_plateaus_at_yield_until_hardening_crosses():
    # below the crossing plastic strain (sigma_y/K)^(1/n) the solve floors at sigma_y
    p = con.LudwikParams(E=200.0, sigma_y=0.28, n=0.65, K=1.365)
    ep_cross = (p.sigma_y / p.K) ** (1.0 / p.n)
    eps_mid = p.sigma_y / p.E + 0.5 * ep_cross
    assert con.eval_ludwik(p, eps_mid) == pytest.approx(p.sigma_y, rel=1e-11)
    eps_past = p.sigma_y / p.E + 2.0 * ep_cross
    assert con.eval_ludwik(p, eps_past) > p.sigma_y * 1.01


def test_yield_continuity_1000_draws():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        hp = con.sample_material("hollomon", rng).params
        ey = hp.sigma_y / hp.E
        assert abs(hp.E * ey - con.eval_hollomon(hp, ey)) <= 1e-12 * hp.sigma_y
        lp = con.sample_material("ludwik", rng).params
        ey = lp.sigma_y / lp.E
        assert abs(lp.E * ey - con.eval_ludwik(lp, ey)) <= 1e-12 * lp.sigma_y


# ---------------------------------------------------------------------------
# Point-stress strain grid

def test_pointstress_strains_uniform_at_q1():
    eps = con.pointstress_strains(1.0, 100.0, 0.1)
    gaps = np.diff(eps)
    assert np.allclose(gaps, (0.3 - 0.001) / 9.0, rtol=1e-12)
    assert eps[0] == pytest.approx(0.001, abs=1e-15)
    assert eps[-1] == pytest.approx(0.3, abs=1e-12)


def test_pointstress_strains_geometric_example():
    # oracle: first gap (0.3 - 0.001)(q-1)/(q^9-1) at q=1.5
    eps = con.pointstress_strains(1.5, 100.0, 0.1)
    assert eps[1] == pytest.approx(0.004992697303218403, rel=1e-12)
    assert eps[-1] == pytest.approx(0.3, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    q=st.floats(1.1, 1.5),
    E=st.floats(30.0, 300.0),
    sy=st.floats(0.05, 1.0),
)
def test_pointstress_gap_ratio_exact(q, E, sy):
    eps = con.pointstress_strains(q, E, sy)
    gaps = np.diff(eps)
    ratios = gaps[1:] / gaps[:-1]
    assert np.allclose(ratios, q, rtol=1e-12)
    assert eps[-1] == pytest.approx(0.3, rel=1e-12)


def test_pointstress_strains_reject_large_yield():
    with pytest.raises(ValueError):
        con.pointstress_strains(1.2, 1.0, 0.5)  # yield strain 0.5 >= 0.3


# ---------------------------------------------------------------------------
# Sampling

def test_sample_ludwik_in_box_and_deterministic():
    spec = con.sample_material("ludwik", np.random.default_rng(11))
    p = spec.params
    b = con.LUDWIK_BOX
    assert b["E"][0] <= p.E <= b["E"][1]
    assert b["sigma_y"][0] <= p.sigma_y <= b["sigma_y"][1]
    assert b["n"][0] <= p.n <= b["n"][1]
    assert b["K"][0] <= p.K <= b["K"][1]
    again = con.sample_material("ludwik", np.random.default_rng(11))
    assert again.params == p


def test_sample_pointstress_slope_constraints():
    for seed in range(30):
        spec = con.sample_material("pointstress", np.random.default_rng(seed))
        p = spec.params
        strains = con.pointstress_strains(p.q, p.E, p.sigma_y)
        stresses = np.concatenate(([p.sigma_y], p.sigmas))
        slopes = np.diff(stresses) / np.diff(strains)
        assert np.all(slopes > 0)
        assert np.all(np.diff(slopes) < 0)
        assert slopes[0] <= p.E
        assert p.sigmas[0] > p.sigma_y


# ---------------------------------------------------------------------------
# Curve building

def test_to_curve_hollomon_n1_collinear():
    spec = con.MaterialSpec("hollomon", con.HollomonParams(100.0, 0.1, 1.0))
    c = con.to_curve(spec)
    assert np.allclose(c.stresses, 100.0 * c.strains, rtol=1e-12)


def test_to_curve_pointstress_hits_anchors():
    spec = con.sample_material("pointstress", np.random.default_rng(3))
    p = spec.params
    c = con.to_curve(spec)
    strains = con.pointstress_strains(p.q, p.E, p.sigma_y)
    for e, s in zip(strains[1:], p.sigmas):
        assert c.eval(e) == pytest.approx(s, rel=1e-12)


def test_to_curve_monotone_and_elastic_slope():
    rng = np.random.default_rng(5)
    for kind in ("hollomon", "ludwik", "pointstress"):
        for _ in range(20):
            spec = con.sample_material(kind, rng)
            c = con.to_curve(spec)
            assert c.strains[0] == 0.0
            assert np.all(np.diff(c.strains) > 0)
            assert np.all(np.diff(c.stresses) >= -1e-12)
            slope = (c.stresses[1] - c.stresses[0]) / (c.strains[1] - c.strains[0])
            assert slope == pytest.approx(c.E, rel=1e-9)


def test_to_curve_includes_yield_node():
    spec = con.MaterialSpec("ludwik", con.LudwikParams(200.0, 0.28, 0.65, 1.365))
    c = con.to_curve(spec)
    ey = 0.28 / 200.0
    assert np.any(np.isclose(c.strains, ey, rtol=0, atol=1e-15))


# ---------------------------------------------------------------------------
# Pointwise strain grid

def test_pointwise_grid_example():
    g = con.pointwise_strain_grid(200.0, 0.2)
    assert np.allclose(g[:6], [0.001, 0.003, 0.005, 0.007, 0.009, 0.011], rtol=1e-12)
    steps = np.diff(g[6:])
    assert np.allclose(steps, (0.2 - 0.021) / 9.0, rtol=1e-12)
    assert len(g) == 16
    assert np.all(np.diff(g) > 0)


def test_pointwise_grid_domain_error():
    with pytest.raises(ValueError):
        con.pointwise_strain_grid(10.0, 1.9)  # yield strain 0.19, 0.19+0.02 > 0.2


# ---------------------------------------------------------------------------
# Fitting

def _identifiable_ludwik(rng):
    # rejection: hardening must be expressed inside the fit window, otherwise
    # (n, K) carry no signal and no fitter can recover them
    while True:
        spec = con.sample_material("ludwik", rng)
        p = spec.params
        if con.eval_ludwik(p, 0.15) > 1.05 * p.sigma_y:
            return spec


def test_fit_roundtrip_hollomon():
    rng = np.random.default_rng(13)
    for _ in range(60):
        spec = con.sample_material("hollomon", rng)
        p = spec.params
        fit, resid = con.fit_model(con.to_curve(spec), "hollomon")
        assert resid < 1e-8
        assert fit.E == pytest.approx(p.E, rel=1e-4)
        assert fit.sigma_y == pytest.approx(p.sigma_y, rel=1e-4)
        assert fit.n == pytest.approx(p.n, rel=1e-4)


def test_fit_roundtrip_ludwik():
    rng = np.random.default_rng(17)
    for _ in range(40):
        spec = _identifiable_ludwik(rng)
        p = spec.params
        fit, resid = con.fit_model(con.to_curve(spec), "ludwik")
        assert resid < 1e-8
        assert fit.E == pytest.approx(p.E, rel=1e-4)
        assert fit.sigma_y == pytest.approx(p.sigma_y, rel=1e-4)
        assert fit.n == pytest.approx(p.n, rel=1e-4)
        assert fit.K == pytest.approx(p.K, rel=1e-4)


def test_fit_elastic_only_curve_no_crash():
    strains = np.linspace(0.0, 0.002, 40)
    curve = con.StressStrainCurve(strains, 150.0 * strains, 150.0, 0.3, "raw")
    fit, resid = con.fit_model(curve, "hollomon")
    assert np.isfinite(resid)
    assert fit.E == pytest.approx(150.0, rel=1e-3)


def test_fit_discriminates_generating_law():
    # a curve with an expressed yield plateau is matched exactly by the
    # law that produced it and only approximately by the other one
    lud = con.MaterialSpec("ludwik", con.LudwikParams(200.0, 0.28, 0.65, 1.365))
    curve = con.to_curve(lud)
    _, resid_l = con.fit_model(curve, "ludwik")
    _, resid_h = con.fit_model(curve, "hollomon")
    assert resid_l < 1e-8
    assert resid_h > 100.0 * resid_l

    hol = con.MaterialSpec("hollomon", con.HollomonParams(150.0, 0.3, 0.25))
    curve = con.to_curve(hol)
    _, resid_h = con.fit_model(curve, "hollomon")
    _, resid_l = con.fit_model(curve, "ludwik")
    assert resid_h < 1e-8
    assert resid_l > resid_h


def test_fit_pointstress_curve_both_laws_finite():
    spec = con.sample_material("pointstress", np.random.default_rng(41))
    curve = con.to_curve(spec)
    for kind in ("hollomon", "ludwik"):
        fit, resid = con.fit_model(curve, kind)
        assert np.isfinite(resid)
        assert resid < 0.5 * float(np.max(curve.stresses))


# ---------------------------------------------------------------------------
# Serialization

def test_material_dict_roundtrip():
    rng = np.random.default_rng(23)
    for kind in ("hollomon", "ludwik", "pointstress"):
        spec = con.sample_material(kind, rng)
        again = con.material_from_dict(con.material_to_dict(spec))
        assert again == spec
