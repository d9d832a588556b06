import math

import numpy as np
import pandas as pd
import pytest

from metagap.metafeatures import (
    CONTROL_FEATURES, SUMMARIZERS, ExtractionConfig, RawDatasetTable, attr_entropy, build_matrix,
    column_statistics, compute_controls, discretize, extract_all, extract_basic, extract_redundancy,
    feature_catalog, goodman_kruskal_tau, pairwise_moments, spectrum_summaries, split_train_indices,
    statistical_bases, summarize, tau_from_table,
)
from metagap.rng import SplitMix64
from metagap.synthetic import gen_raw_table


def tau_oracle(table):
    """Goodman-Kruskal tau from expected misclassification under proportional prediction.

    Without X, predicting Y by drawing from its marginal errs with probability
    1 - sum_y p(y)^2; knowing X it errs with sum_x p(x) (1 - sum_y p(y|x)^2).
    """
    t = [[float(v) for v in row] for row in table]
    total = sum(sum(r) for r in t)
    col = [sum(t[i][j] for i in range(len(t))) / total for j in range(len(t[0]))]
    err0 = 1.0 - sum(c * c for c in col)
    err1 = 0.0
    for row in t:
        nx = sum(row)
        if nx == 0:
            continue
        err1 += (nx / total) * (1.0 - sum((v / nx) ** 2 for v in row))
    return (err0 - err1) / err0


def _table(data, cats=()):
    return RawDatasetTable("t", pd.DataFrame(data), frozenset(cats))


def test_basic_ratios():
    r = SplitMix64(1)
    t = _table({f"c{j}": r.normal(100) for j in range(10)})
    b = extract_basic(t)
    assert b["cat_fraction"] == 0 and b["feature_missing_fraction"] == 0 and b["d_over_n"] == 0.1


def test_missing_fraction_one_empty_column():
    r = SplitMix64(2)
    data = {f"c{j}": r.normal(100) for j in range(10)}
    data["c3"] = np.full(100, np.nan)
    assert extract_basic(_table(data))["feature_missing_fraction"] == pytest.approx(0.1)


def test_high_cardinality_fraction():
    data = {"cat": [f"v{i % 50}" for i in range(200)], "a": np.arange(200.0), "b": np.ones(200),
            "low": [f"w{i % 3}" for i in range(200)]}
    assert extract_basic(_table(data, {"cat", "low"}))["high_cardinality_fraction"] == 0.25


def test_credit_g_shaped_controls():
    data = {f"c{j}": np.zeros(1000) for j in range(21)}
    c = compute_controls(_table(data))
    assert c["log_n"] == pytest.approx(6.907755, abs=1e-6)
    assert c["d_over_n"] == pytest.approx(0.021)
    assert set(c) == set(CONTROL_FEATURES)


def test_zero_column_table_rejected():
    with pytest.raises(ValueError):
        extract_basic(_table({}))


def test_identical_copies_redundancy():
    x = SplitMix64(3).normal(200)
    out = extract_redundancy(_table({f"c{j}": x for j in range(6)}))
    assert out["high_corr_pair_fraction"] == 1.0
    assert out["effective_rank"] == pytest.approx(1.0, abs=1e-9)


def test_independent_columns_full_rank():
    r = SplitMix64(4)
    out = extract_redundancy(_table({f"c{j}": r.normal(20000) for j in range(5)}))
    assert out["effective_rank"] == pytest.approx(5.0, rel=0.01)
    assert out["participation_ratio"] == pytest.approx(5.0, rel=0.01)


def test_spectrum_hand_values():
    eff, pr = spectrum_summaries([3.0, 1.0])
    assert pr == pytest.approx(1.6)
    h = -(0.75 * math.log(0.75) + 0.25 * math.log(0.25))
    assert eff == pytest.approx(math.exp(h)) and eff == pytest.approx(1.7548, abs=1e-4)


def test_column_statistics_edge_cases():
    s = column_statistics(np.full(10, 2.0))
    assert s["sparsity"] == 1.0 and s["sd"] == 0.0
    assert attr_entropy(np.full(10, 2.0)) == 0.0
    assert column_statistics(np.arange(10.0))["sparsity"] == 0.0
    assert column_statistics(np.array([1.0, 1.0, 2.0, 2.0]))["sparsity"] == pytest.approx(1 / 3)


def test_summarize_examples():
    s = summarize([1, 2, 3, 4])
    assert s["quantiles.1"] == 1.75 and s["iq_range"] == 1.5
    assert summarize([-1, 0, 1])["skewness"] == 0.0
    h = summarize(np.arange(10) + 0.5)
    assert [h[f"histogram.{k}"] for k in range(10)] == pytest.approx([0.1] * 10)
    assert math.isnan(summarize([1.0, 2.0])["skewness"])
    assert math.isnan(summarize([3.0, 3.0, 3.0])["kurtosis"])
    assert summarize([3.0, 3.0])["histogram.0"] == 1.0
    assert set(summarize([1.0])) == set(SUMMARIZERS)


def test_summarize_against_scipy(rng):
    from scipy import stats
    v = rng.gamma(2.0, size=57)
    s = summarize(v)
    assert s["skewness"] == pytest.approx(stats.skew(v), abs=1e-12)
    assert s["kurtosis"] == pytest.approx(stats.kurtosis(v), abs=1e-12)
    assert s["sd"] == pytest.approx(np.std(v, ddof=1), abs=1e-12)


def test_entropy_examples():
    assert attr_entropy(["a", "b", "c", "d"] * 25, categorical=True) == pytest.approx(math.log(4))
    assert attr_entropy(["a", "a", "b", "c"] * 5, categorical=True) == pytest.approx(1.039721, abs=1e-6)
    t = gen_raw_table([{"name": "k", "kind": "categorical", "n_levels": 4}], 400)
    assert attr_entropy(t.data["k"], categorical=True) == math.log(4)


def test_discretize_is_rank_based_and_ties_share_bins(rng):
    v = rng.normal(size=200).round(1)
    codes = discretize(v, False)
    for val in np.unique(v):
        assert len(set(codes[v == val])) == 1
    assert np.array_equal(codes, discretize(np.exp(v), False))
    assert codes.max() + 1 <= math.ceil(2 * 200 ** (1 / 3))
    assert discretize([1.0, np.nan, 2.0], False)[1] == -1


def test_tau_examples():
    assert tau_from_table([[2, 0], [0, 2]]) == 1.0
    assert tau_from_table([[1, 1], [1, 1]]) == 0.0
    assert tau_from_table([[2, 1], [1, 2]]) == pytest.approx(1 / 9, abs=1e-12)
    assert tau_oracle([[2, 1], [1, 2]]) == pytest.approx(1 / 9, abs=1e-12)
    assert math.isnan(goodman_kruskal_tau([0, 1, 2], [1, 1, 1]))


def test_tau_from_labels_matches_table():
    x = [0, 0, 0, 1, 1, 1]
    y = [0, 0, 1, 0, 1, 1]
    assert goodman_kruskal_tau(np.array(x), np.array(y)) == pytest.approx(1 / 9)
    assert goodman_kruskal_tau(np.array(["a", "a", "a", "b", "b", "b"], dtype=object),
                               np.array(["u", "u", "v", "u", "v", "v"], dtype=object)) == pytest.approx(1 / 9)


def test_tau_brute_force_random_tables(rng):
    for _ in range(500):
        t = rng.integers(0, 6, size=(int(rng.integers(1, 5)), int(rng.integers(2, 5))))
        if (t.sum(axis=0) > 0).sum() < 2:
            continue
        assert tau_from_table(t) == pytest.approx(tau_oracle(t), abs=1e-12)


def test_generated_function_and_product_pairs():
    specs = [{"name": "x", "kind": "categorical", "n_levels": 4},
             {"name": "f", "kind": "categorical", "n_levels": 2, "dependence": {"type": "function", "of": "x"}},
             {"name": "p", "kind": "categorical", "n_levels": 3, "dependence": {"type": "product", "with": "x"}}]
    t = gen_raw_table(specs, 120)
    codes = {c: discretize(t.data[c], True) for c in t.data.columns}
    assert goodman_kruskal_tau(codes["x"], codes["f"]) == 1.0
    assert goodman_kruskal_tau(codes["x"], codes["p"]) == pytest.approx(0.0, abs=1e-12)


def test_monotone_transform_invariance():
    r = SplitMix64(6)
    base = {f"c{j}": r.normal(300) for j in range(4)}
    base["cat"] = [f"l{i % 3}" for i in range(300)]
    t1 = _table(base, {"cat"})
    t2 = _table({k: (np.exp(v) if k != "cat" else v) for k, v in base.items()}, {"cat"})
    f1, f2 = extract_all(t1), extract_all(t2)
    rank_based = [k for k in f1 if k.startswith(("attr_ent.", "attr_conc."))] + \
        ["high_corr_pair_fraction", "nr_cor_attr", "effective_rank", "participation_ratio"]
    for k in rank_based:
        assert f1[k] == pytest.approx(f2[k], abs=1e-9, nan_ok=True), k


def test_pairwise_moments_match_pandas(rng):
    X = rng.normal(size=(60, 5))
    X[rng.random(X.shape) < 0.2] = np.nan
    cov, corr, N = pairwise_moments(X)
    df = pd.DataFrame(X)
    np.testing.assert_allclose(cov, df.cov().to_numpy(), atol=1e-12)
    np.testing.assert_allclose(corr, df.corr().to_numpy(), atol=1e-12)
    assert N[0, 1] == np.sum(~np.isnan(X[:, 0]) & ~np.isnan(X[:, 1]))


def test_catalog_and_extraction_shape():
    cat = feature_catalog()
    assert len(cat) == 12 + 18 * len(SUMMARIZERS)
    t = gen_raw_table([{"name": "a"}, {"name": "b", "distribution": "uniform"},
                       {"name": "k", "kind": "categorical", "n_levels": 3}], 90, dataset_id="x")
    f = extract_all(t)
    assert list(f) == list(cat)
    # the balanced 3-level categorical has entropy ln 3
    assert f["attr_ent.min"] <= math.log(3) + 1e-12
    assert f["n"] == 90 and f["d"] == 3 and f["cat_fraction"] == pytest.approx(1 / 3)


def test_attr_conc_pair_cap_sampling():
    r = SplitMix64(9)
    t = _table({f"c{j}": r.normal(50) for j in range(12)})
    full = statistical_bases(t)["attr_conc"]
    assert full.size == 12 * 11
    capped = statistical_bases(t, ExtractionConfig(pair_cap=30))["attr_conc"]
    assert capped.size == 30
    assert set(np.round(capped, 12)) <= set(np.round(full, 12))


def test_build_matrix_parallel_matches_serial():
    tables = [gen_raw_table([{"name": "a"}, {"name": "b", "distribution": "uniform"}], 60, seed=s,
                            dataset_id=f"d{s}") for s in range(4)]
    m1 = build_matrix(tables)
    m2 = build_matrix(list(reversed(tables)), jobs=2)
    pd.testing.assert_frame_equal(m1.values, m2.values)
    assert m1.groups["log_n"] == "control" and m1.groups["attr_ent.mean"] == "statistical"


def test_split_train_indices():
    kf = split_train_indices({"type": "kfold", "n_repeats": 1, "n_folds": 3, "seed": 1}, 9)
    assert set(kf) == {(0, 0), (0, 1), (0, 2)}
    assert all(len(v) == 6 for v in kf.values())
    explicit = split_train_indices({"type": "explicit", "train_indices": {"0/0": [4, 0, 2]}}, 6)
    assert explicit[(0, 0)].tolist() == [0, 2, 4]
