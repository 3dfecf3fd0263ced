import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sopfdroop import wind
from sopfdroop.errors import MomentError, PreconditionError, ZoneError
from sopfdroop.wind import DEFAULT_ZONE_STATS, Zone, ZoneConfig, ZoneStats


@pytest.mark.parametrize("p,zone", [(0.29, Zone.LOW), (0.30, Zone.MID), (0.70, Zone.HIGH),
                                    (0.0, Zone.LOW), (1.0, Zone.HIGH), (0.6999, Zone.MID)])
def test_classify(p, zone):
    assert wind.classify_zone(p) is zone


@pytest.mark.parametrize("p", [-0.01, 1.01])
def test_classify_out_of_range(p):
    with pytest.raises(PreconditionError):
        wind.classify_zone(p)


@pytest.mark.parametrize("t1,t2", [(0.0, 0.5), (0.5, 0.5), (0.7, 0.3), (0.3, 1.0)])
def test_zone_config_invariant(t1, t2):
    with pytest.raises(PreconditionError):
        ZoneConfig(t1, t2)


@given(st.floats(0.0, 1.0))
def test_zones_partition(p):
    cfg = ZoneConfig()
    hits = [z for z in wind.ZONES if cfg.bounds(z)[0] <= p < cfg.bounds(z)[1] or (z is Zone.HIGH and p == 1.0)]
    assert hits == [wind.classify_zone(p, cfg)]


def test_mid_example():
    s = wind.beta_spec(0.5, DEFAULT_ZONE_STATS[Zone.MID])
    # mu_eff = 0.531; K = mu(1-mu)/sigma^2 - 1 evaluated by hand
    K = 0.531 * 0.469 / 0.081 ** 2 - 1
    assert s.mu_eff == pytest.approx(0.531, abs=1e-15)
    assert K == pytest.approx(36.958, abs=1e-3)
    assert s.alpha == pytest.approx(19.625, abs=1e-3)
    assert s.beta == pytest.approx(17.333, abs=1e-3)


def test_arcsine_case():
    s = wind.beta_spec(0.5, ZoneStats(Zone.MID, 0.0, math.sqrt(0.125), 10))
    assert s.alpha == pytest.approx(0.5, abs=1e-12) and s.beta == pytest.approx(0.5, abs=1e-12)


def test_infeasible_moments():
    with pytest.raises(MomentError):
        wind.beta_spec(0.5, ZoneStats(Zone.MID, 0.0, 0.5, 10))


def test_mean_outside_support():
    with pytest.raises(MomentError):
        wind.beta_spec(0.995, ZoneStats(Zone.HIGH, 0.01, 0.01, 10))


def test_degenerate_zone_has_no_beta():
    with pytest.raises(MomentError):
        wind.beta_spec(0.5, ZoneStats(Zone.MID, 0.02, 0.0, 10, degenerate=True))


def test_clamp_near_edge():
    s = wind.beta_spec(0.001, ZoneStats(Zone.LOW, 0.0, 0.002, 10))
    assert s.mu_eff == 0.005


@given(st.floats(0.02, 0.98), st.sampled_from(list(wind.ZONES)))
def test_moment_matching_inverse(p, zone):
    stats = DEFAULT_ZONE_STATS[zone]
    try:
        s = wind.beta_spec(p, stats)
    except MomentError:
        return
    assert s.mean == pytest.approx(s.mu_eff, abs=1e-12)
    assert s.variance == pytest.approx(stats.sigma ** 2, abs=1e-12)


@given(st.floats(0.31, 0.68), st.floats(0.001, 0.01))
def test_bias_monotone(p, dp):
    a = wind.beta_spec(p, DEFAULT_ZONE_STATS[Zone.MID])
    b = wind.beta_spec(p + dp, DEFAULT_ZONE_STATS[Zone.MID])
    assert b.mean > a.mean


def test_sample_uniform():
    x = wind.sample(wind.BetaSpec(1.0, 1.0, 0.5), 100_000, 3)
    assert abs(x.mean() - 0.5) < 0.005
    assert x.min() >= 0 and x.max() <= 1


def test_sample_mid_mean():
    s = wind.beta_spec(0.5, DEFAULT_ZONE_STATS[Zone.MID])
    x = wind.sample(s, 100_000, 5)
    assert abs(x.mean() - 0.531) < 3 * s.std / math.sqrt(x.size)


def test_sample_deterministic():
    s = wind.beta_spec(0.5, DEFAULT_ZONE_STATS[Zone.MID])
    assert np.array_equal(wind.sample(s, 50, 9), wind.sample(s, 50, 9))
    assert not np.array_equal(wind.sample(s, 50, 9), wind.sample(s, 50, 10))


def test_fit_constant_error():
    pairs = [(p, p + 0.02 * 100) for p in np.linspace(1, 99, 60)]
    stats = wind.fit_zone_stats(pairs, 100.0)
    for z in wind.ZONES:
        assert stats[z].mu == pytest.approx(0.02, abs=1e-12)
        assert stats[z].sigma == 0.0 and stats[z].degenerate


def test_fit_empty_zone():
    pairs = [(10.0, 11.0), (20.0, 19.0), (80.0, 81.0), (90.0, 88.0)]
    with pytest.raises(ZoneError) as exc:
        wind.fit_zone_stats(pairs, 100.0)
    assert exc.value.zone is Zone.MID


def test_fit_recovers_table_i():
    n = 100_000
    pairs = wind.synthetic_archive(1970.7, n, seed=1)
    stats = wind.fit_zone_stats(pairs, 1970.7)
    for z in wind.ZONES:
        ref = DEFAULT_ZONE_STATS[z]
        se_mu = ref.sigma / math.sqrt(n)
        se_sd = ref.sigma / math.sqrt(2 * (n - 1))
        assert abs(stats[z].mu - ref.mu) < 3 * se_mu
        assert abs(stats[z].sigma - ref.sigma) < 3 * se_sd
        assert stats[z].n_samples == n


def test_archive_round_trip(tmp_path):
    rows = wind.synthetic_archive(100.0, 5, seed=2)
    p = tmp_path / "a.csv"
    wind.write_archive(rows, p)
    assert wind.read_archive(p) == [(float(a), float(b)) for a, b in rows]


def test_archive_missing(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        wind.read_archive(tmp_path / "nope.csv")


def test_zone_stats_round_trip(tmp_path):
    p = tmp_path / "z.csv"
    wind.write_zone_stats(DEFAULT_ZONE_STATS, p)
    back = wind.read_zone_stats(p)
    for z in wind.ZONES:
        assert back[z].mu == DEFAULT_ZONE_STATS[z].mu and back[z].sigma == DEFAULT_ZONE_STATS[z].sigma
    assert p.read_text().splitlines()[0] == "zone,range_lo,range_hi,mu_z,sigma_z,n_samples,degenerate"


def test_feasible_ranges_inside_zones():
    for z in wind.ZONES:
        lo, hi = wind.feasible_forecast_range(DEFAULT_ZONE_STATS[z])
        zlo, zhi = ZoneConfig().bounds(z)
        assert zlo <= lo < hi <= zhi
        for p in (lo, hi):
            s = wind.beta_spec(p, DEFAULT_ZONE_STATS[z], clamp=None)
            assert s.alpha >= 1 - 1e-9 and s.beta >= 1 - 1e-9
