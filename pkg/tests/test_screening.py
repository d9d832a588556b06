import numpy as np
import pandas as pd
import pytest

from metagap.metafeatures import CONTROL_FEATURES
from metagap.rng import SplitMix64
from metagap.screening import (
    BootstrapConfig, association_frame, bootstrap_sign_consistency, covariate_adjust,
    resample_indices, results_from_frame, screen_features,
)
from metagap.stats import spearman
from metagap.synthetic import PlantedStudySpec, gen_planted_matrix


def test_identity_relation_full_consistency():
    x = np.arange(20.0)
    cons, lo, hi = bootstrap_sign_consistency(x, x, BootstrapConfig(n_resamples=500, seed=1))
    assert cons == 1.0 and lo == hi == 1.0


def test_planted_consistency_high():
    m, g = gen_planted_matrix(PlantedStudySpec(n_datasets=50, n_null_features=0, seed=4))
    cons, lo, hi = bootstrap_sign_consistency(m.values["planted_0"], g, BootstrapConfig(seed=4))
    assert cons >= 0.99
    assert lo > 0


def test_noise_consistency_distribution():
    # Under independence the bootstrap rho is roughly centred on the sample rho with
    # the same spread, so consistency >= 0.90 happens iff |z| > 1.28, i.e. about 20%
    # of the time.  The gate alone is therefore not a 95% filter; the q-value does that.
    cons = []
    for s in range(200):
        r = SplitMix64(1000 + s)
        cons.append(bootstrap_sign_consistency(r.normal(50), r.normal(50), BootstrapConfig(seed=s))[0])
    cons = np.array(cons)
    assert 0.72 <= np.mean(cons < 0.90) <= 0.92
    assert 0.6 <= np.median(cons) <= 0.8


def test_resample_indices_reproducible_and_keyed():
    cfg = BootstrapConfig(n_resamples=50, seed=9)
    a = resample_indices(cfg, 30, "screen", "f1")
    assert np.array_equal(a, resample_indices(cfg, 30, "screen", "f1"))
    assert not np.array_equal(a, resample_indices(cfg, 30, "screen", "f2"))
    assert a.shape == (50, 30) and a.min() >= 0 and a.max() < 30


def test_batched_bootstrap_matches_single_feature_path():
    m, g = gen_planted_matrix(PlantedStudySpec(n_datasets=40, n_null_features=5, seed=2))
    cfg = BootstrapConfig(n_resamples=200, seed=3)
    res = {r.feature_name: r for r in screen_features(m, g, cfg, "c")}
    for name in ("planted_0", "null_0"):
        cons, lo, hi = bootstrap_sign_consistency(m.values[name].to_numpy(), g.to_numpy(), cfg, name)
        assert res[name].sign_consistency == cons
        assert (res[name].ci_low, res[name].ci_high) == (lo, hi)


def test_screen_outputs_and_order():
    m, g = gen_planted_matrix(PlantedStudySpec(n_datasets=50, n_null_features=30, seed=11, missing_rate=0.05))
    res = screen_features(m, g, BootstrapConfig(seed=11), "c")
    assert [r.p_value for r in res] == sorted(r.p_value for r in res)
    top = res[0]
    assert top.feature_name == "planted_0" and top.retained
    assert top.n == int(m.values["planted_0"].notna().sum())
    assert top.rho == pytest.approx(spearman(m.values["planted_0"], g), abs=1e-15)
    for r in res:
        assert r.retained == (r.q_bh < 0.05 and r.sign_consistency >= 0.90)


def test_noiseless_planted_is_retained():
    m, g = gen_planted_matrix(PlantedStudySpec(n_datasets=20, n_null_features=10, noise_sd=0.0, seed=1))
    res = {r.feature_name: r for r in screen_features(m, g, BootstrapConfig(seed=1))}
    assert res["planted_0"].rho == 1.0 and res["planted_0"].retained


def test_skips_sparse_and_constant_features(caplog):
    idx = [f"d{i}" for i in range(12)]
    g = pd.Series(np.arange(12.0), index=idx)
    values = pd.DataFrame({"const": np.ones(12), "sparse": [1.0, 2.0] + [np.nan] * 10, "ok": np.arange(12.0) ** 2},
                          index=idx)
    res = screen_features(values, g, BootstrapConfig(n_resamples=50))
    assert [r.feature_name for r in res] == ["ok"]
    with caplog.at_level("WARNING"):
        assert screen_features(values[["const"]], g) == []
    assert "no testable" in caplog.text
    with pytest.raises(ValueError):
        screen_features(values.iloc[:3], g.iloc[:3])


def test_adjust_with_constant_controls_keeps_sign():
    r = SplitMix64(5)
    x = r.normal(40)
    y = -x + 0.5 * r.normal(40)
    C = np.ones((40, 5))
    adj = covariate_adjust(x, C, y, BootstrapConfig(seed=5), "f")
    assert np.sign(adj.adj_coef) == np.sign(spearman(x, y)) == -1
    assert adj.direction_confirmed


def test_adjust_independent_controls_confirms():
    m, g = gen_planted_matrix(PlantedStudySpec(n_datasets=60, n_null_features=0, seed=21, with_controls=True))
    adj = covariate_adjust(m.values["planted_0"], m.values[list(CONTROL_FEATURES)], g, BootstrapConfig(seed=21), "planted_0")
    assert np.sign(adj.adj_coef) == np.sign(spearman(m.values["planted_0"], g))
    assert adj.adj_sign_consistency > 0.95
    assert adj.adj_ci_low <= adj.adj_coef <= adj.adj_ci_high


def test_adjust_insufficient_cases():
    adj = covariate_adjust([1.0, 2.0, 3.0], np.zeros((3, 5)), [1.0, 2.0, 3.0])
    assert not adj.direction_confirmed and np.isnan(adj.adj_coef)


def test_adjust_direction_flip_not_confirmed():
    # the feature is a noisy proxy of a control that drives the gap
    r = SplitMix64(8)
    c = r.normal(80)
    x = c + 0.3 * r.normal(80)
    y = c - 0.6 * x + 0.1 * r.normal(80)
    assert spearman(x, y) > 0
    adj = covariate_adjust(x, c[:, None], y, BootstrapConfig(seed=8), "proxy")
    assert adj.adj_coef < 0 and not adj.direction_confirmed


def test_association_frame_round_trip():
    m, g = gen_planted_matrix(PlantedStudySpec(n_datasets=30, n_null_features=3, seed=2))
    res = screen_features(m, g, BootstrapConfig(n_resamples=100), "c")
    df = association_frame(res)
    assert results_from_frame(df) == res
