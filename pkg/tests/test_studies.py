import math

import numpy as np
import pytest

from fpeps import peps as P
from fpeps import studies as S
from fpeps.models import ModelSpec
from fpeps.update import UpdateReport


def test_exponential_fit_recovers_rate():
    xs = np.arange(1, 6)
    fit = S.fit_exponential(xs, 0.3 * np.exp(-xs / 1.7))
    assert fit.rate == pytest.approx(1.7) and fit.amplitude == pytest.approx(0.3)
    assert fit.r2 == pytest.approx(1.0) and fit.ok
    two = S.fit_exponential(xs, 0.3 * np.exp(-xs / 1.7) * (1 + 0.01 * xs), "two_point", pair=(2, 4))
    assert [p[0] for p in two.points] == [2.0, 4.0]


def test_fit_uses_only_sampled_points():
    fit = S.fit_exponential([1, 2, 3], [1e-2, 1e-20, 1e-4])
    assert [p[0] for p in fit.points] == [1.0, 3.0]
    assert not S.fit_exponential([1], [0.1]).ok
    assert not S.fit_exponential([1, 2], [0.1, 0.2]).ok  # growing data has no decay length
    with pytest.raises(ValueError):
        S.fit_exponential([1, 2], [1, 2], mode="cubic")
    with pytest.raises(ValueError):
        S.fit_exponential([1, 2], [1, 2], mode="two_point")


def test_cluster_errors_vanish_for_product_state():
    psi = P.init_separable_with_noise(5, 2, 1, np.array([0.8, 0.6]), 0.0)
    study = S.cluster_study(psi, ("sz", "sx"))
    assert S.center_site(psi) == (2, 2)
    assert all(e["eps"] < 1e-14 for e in study.errors)
    assert all(abs(c["G"]) < 1e-14 for c in study.correlations)
    assert {e["delta"] for e in study.errors} == set(range(5))


def test_full_cluster_error_is_zero():
    psi = P.random_peps(5, 5, 2, 2, seed=3)
    study = S.cluster_study(psi, ("sz",), deltas=[4], xs=[1, 2])
    assert study.errors[0]["eps"] < 1e-8


def _report(costs, conds):
    r = UpdateReport()
    r.costs, r.conds = list(costs), list(conds)
    r.eps = [abs(b - a) / costs[0] for a, b in zip(costs[1:], costs[2:])]
    return r


def test_gauge_study_summaries():
    st = S.GaugeStudy("x")
    st.with_gauge = [_report([1.0, 0.1, 0.09], [1.0, 2.0]), _report([2.0, 0.2, 0.19], [1.5, 1.5])]
    st.without_gauge = [_report([1.0, 1.0, 0.5, 0.2], [100.0, 300.0]), _report([2.0, 2.0, 1.0], [150.0, math.nan])]
    np.testing.assert_allclose(st.paired_ratios(), [200 / 1.5, 100.0])
    assert st.relative_drops() == pytest.approx((0.9, 0.5))
    assert st.absolute_drops() == pytest.approx((1.35, 0.75))
    assert len(st.conds_without) == 3
    eps = st.eps_table(horizon=2)
    assert {(r["arm"], r["u"]) for r in eps} >= {("gauge", 1), ("no_gauge", 1), ("no_gauge", 2)}


def test_prepared_state_and_gauge_study_run():
    m = ModelSpec("ising", B=3.0)
    psi = S.prepared_state(m, 3, 2, su_steps=3, tau=0.05)
    st = S.gauge_study(psi, m, 0.01, 1, 2)
    assert len(st.with_gauge) == len(st.without_gauge) == 12
    assert np.median(st.conds_with) <= np.median(st.conds_without)


def test_scaling_probe_small():
    recs, kb, kp = S.scaling_probe(Ds=(1, 2), L=4, repeats=1, row=1)
    assert [r["D"] for r in recs] == [1, 2]
    assert all(r["boundary_step_s"] > 0 for r in recs)
    assert math.isfinite(kb) and math.isfinite(kp)
