import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cilbench.errors import (
    CoverageError,
    GroupArityError,
    IndivisibleClassesError,
    InfeasibleKError,
    InvalidFeatureError,
    MissingGroupingError,
)
from cilbench.kmeans import kmeans_cluster, kmeans_plusplus_init, lloyd
from cilbench.manifest import FeatureMatrix
from cilbench.schemes import (
    PhasePartition,
    load_plan,
    phase_train_ids,
    save_plan,
    split_cluster,
    split_random,
    split_semantic,
    validate_plan,
)

from conftest import make_manifest


# -- random scheme ---------------------------------------------------------------

def test_split_random_basic():
    m = make_manifest(num_classes=100, train_per_class=1, test_per_class=1)
    plan = split_random(m, 5, seed=1)
    assert plan.num_phases == 5
    for part in plan.partitions:
        assert len(part.class_set) == 20
    assert validate_plan(plan, m).ok


def test_split_random_deterministic():
    m = make_manifest(num_classes=10)
    a = split_random(m, 5, seed=42)
    b = split_random(m, 5, seed=42)
    assert [p.class_set for p in a.partitions] == [p.class_set for p in b.partitions]


def test_split_random_indivisible():
    m = make_manifest(num_classes=10)
    with pytest.raises(IndivisibleClassesError):
        split_random(m, 3, seed=0)


@settings(max_examples=60, deadline=None)
@given(
    per=st.integers(min_value=1, max_value=8),
    n=st.integers(min_value=2, max_value=6),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_split_random_properties(per, n, seed):
    m = make_manifest(num_classes=per * n, train_per_class=1, test_per_class=1)
    plan = split_random(m, n, seed)
    report = validate_plan(plan, m)
    assert report.ok, report.violations
    sizes = {len(p.class_set) for p in plan.partitions}
    assert sizes == {per}
    union = set().union(*(p.class_set for p in plan.partitions))
    assert union == m.class_ids()


# -- semantic scheme -------------------------------------------------------------

def test_split_semantic_basic():
    grouping = {0: "animal", 1: "animal", 2: "tool", 3: "tool"}
    m = make_manifest(num_classes=4, grouping=grouping)
    plan = split_semantic(m, 2)
    assert [sorted(p.class_set) for p in plan.partitions] == [[0, 1], [2, 3]]
    assert validate_plan(plan, m).ok


def test_split_semantic_missing_grouping():
    m = make_manifest(num_classes=4)
    with pytest.raises(MissingGroupingError):
        split_semantic(m, 2)


def test_split_semantic_group_arity():
    grouping = {0: "a", 1: "b", 2: "c", 3: "c"}
    m = make_manifest(num_classes=4, grouping=grouping)
    with pytest.raises(GroupArityError):
        split_semantic(m, 2)


def test_split_semantic_order_is_lexicographic():
    grouping = {0: "zebra", 1: "zebra", 2: "apple", 3: "apple"}
    m = make_manifest(num_classes=4, grouping=grouping)
    plan = split_semantic(m, 2)
    assert sorted(plan.partitions[0].class_set) == [2, 3]


# -- k-means ---------------------------------------------------------------------

def reference_lloyd(x, centroids, iters=100):
    """Plain-loop Lloyd oracle, lowest-index tie-break, no tolerance exit."""
    centroids = centroids.copy().astype(float)
    assign = np.zeros(len(x), dtype=int)
    for _ in range(iters):
        for i, p in enumerate(x):
            dists = [float(np.sum((p - c) ** 2)) for c in centroids]
            assign[i] = int(np.argmin(dists))
        new = []
        for j in range(len(centroids)):
            members = x[assign == j]
            new.append(members.mean(axis=0) if len(members) else centroids[j])
        new = np.array(new)
        if np.allclose(new, centroids, atol=0, rtol=0):
            break
        centroids = new
    return assign


def test_kmeans_well_separated_pairs():
    pts = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    fm = FeatureMatrix(["a", "b", "c", "d"], pts)
    assign = kmeans_cluster(fm, 2, seed=0)
    assert assign["a"] == assign["b"]
    assert assign["c"] == assign["d"]
    assert assign["a"] != assign["c"]


def test_kmeans_k_equals_points_zero_inertia():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(5, 3))
    fm = FeatureMatrix([f"s{i}" for i in range(5)], pts)
    assign = kmeans_cluster(fm, 5, seed=3)
    assert sorted(assign.values()) == [0, 1, 2, 3, 4]
    _, _, inertia = lloyd(pts, kmeans_plusplus_init(pts, 5, 3))
    assert inertia[-1] == pytest.approx(0.0, abs=1e-20)


def test_kmeans_matches_reference_lloyd():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(200, 2))
    init = kmeans_plusplus_init(x, 4, seed=9)
    assign, _, _ = lloyd(x, init)
    ref = reference_lloyd(x, init)
    np.testing.assert_array_equal(assign, ref)


def test_kmeans_inertia_non_increasing():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(120, 3))
    init = kmeans_plusplus_init(x, 5, seed=2)
    _, _, inertia = lloyd(x, init)
    assert all(a >= b - 1e-9 for a, b in zip(inertia, inertia[1:]))


def test_kmeans_row_permutation_invariant_per_id():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(50, 2))
    init = kmeans_plusplus_init(x, 3, seed=1)
    assign_a, _, _ = lloyd(x, init)
    perm = rng.permutation(50)
    assign_b, _, _ = lloyd(x[perm], init)
    np.testing.assert_array_equal(assign_a[perm], assign_b)


def test_kmeans_rejects_bad_inputs():
    fm = FeatureMatrix(["a", "b"], np.ones((2, 2)))
    with pytest.raises(InfeasibleKError):
        kmeans_cluster(fm, 3, seed=0)
    with pytest.raises(InfeasibleKError):
        kmeans_cluster(fm, 1, seed=0)
    from cilbench.kmeans import _check_matrix

    bad = np.ones((3, 2))
    bad[0, 0] = np.inf
    with pytest.raises(InvalidFeatureError):
        _check_matrix(bad, 2)


# -- cluster scheme --------------------------------------------------------------

def test_split_cluster_mixes_classes():
    # two spatial clusters, each containing both classes
    m = make_manifest(num_classes=2, train_per_class=4, test_per_class=1)
    ids = sorted(m.train_ids())
    feats = []
    for i, sid in enumerate(ids):
        base = [0.0, 0.0] if i % 2 == 0 else [50.0, 50.0]
        feats.append([base[0] + 0.01 * i, base[1]])
    fm = FeatureMatrix(ids, np.array(feats))
    plan = split_cluster(m, fm, 2, seed=0)
    label = {s.sample_id: s.class_id for s in m.samples}
    for part in plan.partitions:
        classes = {label[sid] for sid in part.sample_set}
        assert classes == {0, 1}
    assert validate_plan(plan, m).ok


def test_split_cluster_onehot_recovers_class_split():
    m = make_manifest(num_classes=3, train_per_class=5, test_per_class=1)
    ids = sorted(m.train_ids())
    label = {s.sample_id: s.class_id for s in m.samples}
    feats = np.zeros((len(ids), 3))
    for i, sid in enumerate(ids):
        feats[i, label[sid]] = 1.0
    plan = split_cluster(m, FeatureMatrix(ids, feats), 3, seed=7)
    partition_classes = [
        {label[sid] for sid in part.sample_set} for part in plan.partitions
    ]
    assert sorted(map(tuple, partition_classes)) == [(0,), (1,), (2,)]


def test_split_cluster_requires_coverage():
    m = make_manifest(num_classes=2, train_per_class=3, test_per_class=1)
    ids = sorted(m.train_ids())[:-1]
    fm = FeatureMatrix(ids, np.random.default_rng(0).normal(size=(len(ids), 2)))
    with pytest.raises(CoverageError):
        split_cluster(m, fm, 2, seed=0)


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(min_value=2, max_value=5),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_split_cluster_properties(n, seed):
    m = make_manifest(num_classes=4, train_per_class=6, test_per_class=1)
    ids = sorted(m.train_ids())
    rng = np.random.default_rng(seed % (2**31))
    fm = FeatureMatrix(ids, rng.normal(size=(len(ids), 3)))
    plan = split_cluster(m, fm, n, seed)
    report = validate_plan(plan, m)
    assert report.ok, report.violations
    union = set().union(*(p.sample_set for p in plan.partitions))
    assert union == m.train_ids()


# -- validate_plan on injected violations -----------------------------------------

def test_validate_plan_catches_overlap(manifest4):
    plan = split_random(manifest4, 2, seed=0)
    a, b = plan.partitions
    plan.partitions[1] = PhasePartition(
        2, "class-level", frozenset(b.class_set | {next(iter(a.class_set))})
    )
    report = validate_plan(plan, manifest4)
    assert not report.ok
    assert any("appears in phases" in v for v in report.violations)


def test_validate_plan_catches_missing_class(manifest4):
    plan = split_random(manifest4, 2, seed=0)
    dropped = sorted(plan.partitions[0].class_set)[0]
    plan.partitions[0] = PhasePartition(
        1, "class-level", frozenset(plan.partitions[0].class_set - {dropped})
    )
    report = validate_plan(plan, manifest4)
    assert any(f"class {dropped} missing" in v for v in report.violations)


def test_validate_plan_catches_missing_sample(manifest4):
    ids = sorted(manifest4.train_ids())
    half = len(ids) // 2
    plan_parts = [
        PhasePartition(1, "sample-level", sample_set=frozenset(ids[:half])),
        PhasePartition(2, "sample-level", sample_set=frozenset(ids[half:-1])),
    ]
    from cilbench.schemes import PhasePlan

    plan = PhasePlan("cluster", 2, plan_parts, 0)
    report = validate_plan(plan, manifest4)
    assert any("missing from every phase" in v for v in report.violations)


def test_validate_plan_catches_empty_partition(manifest4):
    plan = split_random(manifest4, 2, seed=0)
    plan.partitions[0] = PhasePartition(1, "class-level", frozenset())
    assert not validate_plan(plan, manifest4).ok


# -- serialization ---------------------------------------------------------------

def test_plan_roundtrip(tmp_path, manifest4):
    plan = split_random(manifest4, 2, seed=3)
    path = tmp_path / "plan.json"
    save_plan(plan, path)
    back = load_plan(path)
    assert back.scheme == plan.scheme
    assert back.seed == plan.seed
    assert [p.class_set for p in back.partitions] == [
        p.class_set for p in plan.partitions
    ]
    save_plan(back, tmp_path / "plan2.json")
    assert (tmp_path / "plan.json").read_bytes() == (tmp_path / "plan2.json").read_bytes()


def test_phase_train_ids_class_level(manifest4):
    plan = split_random(manifest4, 2, seed=0)
    ids = phase_train_ids(plan, manifest4, 1)
    label = {s.sample_id: s.class_id for s in manifest4.samples}
    assert all(label[sid] in plan.partitions[0].class_set for sid in ids)
    assert ids == sorted(ids)
