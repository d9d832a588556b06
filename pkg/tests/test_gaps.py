import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metagap.gaps import EPSILON, compute_gaps, normalize_split, normalize_store, select_family_rep
from metagap.store import ComparisonSpec, FamilySpec, MethodRun, SplitId

from conftest import make_store, random_store


def _pool(errors, val=None):
    val = errors if val is None else val
    return [MethodRun("d", SplitId(0, 0), f"m{i}", "default", v, e) for i, (e, v) in enumerate(zip(errors, val))]


def _fam(fid, *methods):
    return FamilySpec(fid, {m: None for m in methods})


def test_hand_evaluated_pool():
    norm = normalize_split(_pool([0.2, 0.4, 0.6, 0.3]))
    # median of {0.2, 0.3, 0.4, 0.6} is 0.35
    assert norm[3].test_norm == pytest.approx((0.3 - 0.2) / (0.35 - 0.2))
    norm = normalize_split(_pool([0.2, 0.4, 0.6]))
    assert [n.test_norm for n in norm] == [0.0, 1.0, 1.0]


def test_three_pool_example_with_extra_run():
    # the pool {0.2, 0.4, 0.6} anchors; a run at 0.3 scores 0.5 against those anchors
    from metagap.gaps import SplitAnchors
    anchors = SplitAnchors.from_errors([0.2, 0.4, 0.6])
    assert anchors.score(0.3) == pytest.approx(0.5)


def test_degenerate_pools():
    assert [n.test_norm for n in normalize_split(_pool([0.5, 0.5, 0.5]))] == [0.0, 0.0, 0.0]
    assert normalize_split(_pool([0.7]))[0].test_norm == 0.0
    with pytest.raises(ValueError):
        normalize_split([])


def test_validation_and_test_anchored_separately():
    norm = normalize_split(_pool([0.1, 0.2, 0.3], val=[10.0, 30.0, 20.0]))
    assert [n.val_norm for n in norm] == [0.0, 1.0, 1.0]
    assert [n.test_norm for n in norm] == [0.0, 1.0, 1.0]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=15), st.floats(0.01, 100), st.floats(-50, 50))
def test_normalization_properties(errors, a, b):
    scores = np.array([n.test_norm for n in normalize_split(_pool(errors))])
    e = np.array(errors)
    assert np.all((scores >= 0) & (scores <= 1))
    assert scores[np.argmin(e)] == 0
    if np.median(e) - e.min() >= EPSILON:
        assert np.all(scores[e >= np.median(e)] == 1)
    if np.median(e) - e.min() > EPSILON and (np.median(e) - e.min()) * a > EPSILON:
        scaled = np.array([n.test_norm for n in normalize_split(_pool(list(a * e + b)))])
        np.testing.assert_allclose(scaled, scores, atol=1e-9)


def test_vectorised_normalisation_matches_per_pool(rng):
    store = random_store(rng)
    df = normalize_store(store)
    for key, grp in df.groupby(["dataset_id", "repeat", "fold"]):
        pool = [MethodRun(*key[:1], SplitId(key[1], key[2]), r.method_id, r.subtype, r.val_error, r.test_error)
                for r in grp.itertuples()]
        ref = normalize_split(pool)
        np.testing.assert_allclose(grp["test_norm"], [n.test_norm for n in ref], rtol=0, atol=1e-15)
        np.testing.assert_allclose(grp["val_norm"], [n.val_norm for n in ref], rtol=0, atol=1e-15)


def test_selection_uses_validation_not_test():
    norm = normalize_split(_pool([0.9, 0.1, 0.5, 0.6], val=[0.1, 0.3, 0.5, 0.6]))
    fam = _fam("f", "m0", "m1")
    assert select_family_rep(fam, norm).run.method_id == "m0"


def test_selection_tie_break_and_absence():
    runs = [MethodRun("d", SplitId(0, 0), m, "default", 0.2, t) for m, t in (("xgboost", 0.1), ("catboost", 0.9))]
    norm = normalize_split(runs)
    assert select_family_rep(_fam("gbm", "xgboost", "catboost"), norm).run.method_id == "catboost"
    assert select_family_rep(_fam("solo", "xgboost"), norm).run.method_id == "xgboost"
    assert select_family_rep(_fam("none", "lightgbm"), norm) is None


def test_two_split_fixture_gives_point_two():
    # Each pool has minimum 0 and median 1, so normalised errors equal the raw
    # ones: A selects (0.2, 0.4) and B selects (0.1, 0.1).
    rows = []
    for k, (a, b) in enumerate(((0.2, 0.1), (0.4, 0.1))):
        rows += [("d", k, 0, "a", "default", 0.5, a), ("d", k, 0, "b", "default", 0.5, b),
                 ("d", k, 0, "lo", "default", 0.5, 0.0)]
        rows += [("d", k, 0, f"hi{j}", "default", 0.5, 1.0) for j in range(4)]
    fams = {"A": _fam("A", "a"), "B": _fam("B", "b")}
    (rec,) = compute_gaps(ComparisonSpec("c", "A", "B"), make_store(rows), fams)
    assert rec.per_split_gaps == pytest.approx([0.1, 0.3], abs=1e-15)
    assert rec.delta == 0.2
    assert rec.n_splits_used == 2


def test_identical_families_give_zero(rng):
    store = random_store(rng)
    fams = {"A": _fam("A", "a1", "a2"), "B": _fam("B", "a1", "a2")}
    assert all(r.delta == 0 for r in compute_gaps(ComparisonSpec("c", "A", "B"), store, fams))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_antisymmetry(seed):
    store = random_store(np.random.default_rng(seed), drop=0.3)
    fams = {"A": _fam("A", "a1", "a2"), "B": _fam("B", "b1", "b2", "c1")}
    ab = {r.dataset_id: r.delta for r in compute_gaps(ComparisonSpec("c", "A", "B"), store, fams)}
    ba = {r.dataset_id: r.delta for r in compute_gaps(ComparisonSpec("c", "B", "A"), store, fams)}
    assert ab.keys() == ba.keys()
    for d in ab:
        assert ab[d] == -ba[d]


def test_selection_ignores_test_errors_mutation(rng):
    store = random_store(rng, drop=0.0)
    fams = {"A": _fam("A", "a1", "a2"), "B": _fam("B", "b1", "b2")}
    base = normalize_store(store)
    from metagap.gaps import _representatives
    reps = _representatives(base, fams["A"])[["method_id", "subtype"]]
    df = store.frame.copy()
    df["test_error"] = rng.random(len(df)) * 100  # arbitrary test errors
    from metagap.store import RunStore
    mutated = _representatives(normalize_store(RunStore(df)), fams["A"])[["method_id", "subtype"]]
    assert reps.equals(mutated)


def test_missing_family_split_skipped():
    rows = [("d", 0, 0, "a", "default", 0.1, 0.1), ("d", 0, 0, "b", "default", 0.2, 0.2),
            ("d", 1, 0, "a", "default", 0.1, 0.1), ("d", 1, 0, "x", "default", 0.2, 0.2),
            ("e", 0, 0, "a", "default", 0.1, 0.1)]
    fams = {"A": _fam("A", "a"), "B": _fam("B", "b")}
    recs = compute_gaps(ComparisonSpec("c", "A", "B"), make_store(rows), fams)
    assert [(r.dataset_id, r.n_splits_used) for r in recs] == [("d", 1)]
