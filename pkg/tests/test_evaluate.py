import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tvmf_lab.evaluate import accuracies, pca_project, write_embedding_dump


def brute_force(pred, labels, groups):
    ratios = {}
    for g in sorted(set(groups)):
        idx = [i for i in range(len(groups)) if groups[i] == g]
        ratios[g] = sum(pred[i] == labels[i] for i in idx) / len(idx)
    return ratios


def test_all_correct():
    r = accuracies([0, 1, 1], [0, 1, 1], [0, 1, 2], [0, 0, 1])
    assert r.overall == r.worst_group == 1.0
    assert set(r.per_group.values()) == {1.0} and set(r.per_domain.values()) == {1.0}


def test_two_groups_hand_count():
    r = accuracies([0, 1, 0, 0], [0, 1, 1, 1], [0, 0, 1, 1], [0, 0, 0, 0])
    assert r.overall == 0.5 and r.worst_group == 0.0
    assert r.per_group == {0: 1.0, 1: 0.0}


def test_worst_group_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        pred = rng.integers(0, 3, n)
        labels = rng.integers(0, 3, n)
        groups = rng.integers(0, 5, n)
        r = accuracies(pred, labels, groups, np.zeros(n, int))
        oracle = brute_force(pred.tolist(), labels.tolist(), groups.tolist())
        assert r.per_group == oracle
        assert r.worst_group == min(oracle.values())
        assert 0.0 <= r.worst_group <= r.overall <= 1.0


@settings(max_examples=200)
@given(st.integers(1, 60), st.integers(0, 2**31 - 1))
def test_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    pred, labels = rng.integers(0, 2, n), rng.integers(0, 2, n)
    groups, domains = rng.integers(0, 4, n), rng.integers(0, 3, n)
    p = rng.permutation(n)
    a = accuracies(pred, labels, groups, domains)
    b = accuracies(pred[p], labels[p], groups[p], domains[p])
    assert (a.overall, a.per_group, a.worst_group, a.per_domain) == (b.overall, b.per_group, b.worst_group, b.per_domain)
    assert all(0.0 <= v <= 1.0 for v in list(a.per_group.values()) + list(a.per_domain.values()))


def test_empty_groups_listed_and_excluded():
    r = accuracies([1, 1], [1, 1], [0, 2], [0, 0], all_groups=range(4))
    assert r.empty_groups == [1, 3] and r.worst_group == 1.0


def test_accuracy_errors():
    with pytest.raises(ValueError):
        accuracies([], [], [], [])
    with pytest.raises(ValueError):
        accuracies([0, 1], [0], [0, 0], [0, 0])


# PCA


def test_collinear_points_single_component():
    t = np.linspace(-2, 3, 20)[:, None]
    coords, ratio = pca_project(t * np.array([[1.0, -2.0, 0.5]]))
    assert ratio[0] == pytest.approx(1.0, abs=1e-12) and ratio[1] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(coords[:, 1], 0.0, atol=1e-12)


@settings(max_examples=100)
@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_ratios_nonincreasing_and_bounded(n, m, seed):
    Z = np.random.default_rng(seed).normal(size=(n, m))
    _, ratio = pca_project(Z, k=m)
    assert np.all(np.diff(ratio) <= 1e-12)
    assert ratio.sum() <= 1 + 1e-12 and np.all(ratio >= 0)


def test_full_rank_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n, m = int(rng.integers(8, 40)), int(rng.integers(2, 7))
        Z = rng.normal(size=(n, m)) * rng.uniform(0.1, 3, m) + rng.normal(size=m)
        coords, ratio = pca_project(Z, k=m)
        centred = Z - Z.mean(axis=0)
        V, *_ = np.linalg.lstsq(coords, centred, rcond=None)
        np.testing.assert_allclose(V @ V.T, np.eye(m), atol=1e-8)
        np.testing.assert_allclose(coords @ V, centred, atol=1e-8)
        assert ratio.sum() == pytest.approx(1.0, abs=1e-12)


def test_components_are_eigenvectors_and_signed():
    rng = np.random.default_rng(2)
    Z = rng.normal(size=(60, 5)) @ rng.normal(size=(5, 5))
    coords, _ = pca_project(Z, k=5)
    centred = Z - Z.mean(axis=0)
    V, *_ = np.linalg.lstsq(coords, centred, rcond=None)
    cov = centred.T @ centred / (len(Z) - 1)
    for v in V:
        lam = v @ cov @ v
        assert np.linalg.norm(cov @ v - lam * v) <= 1e-10 * max(1.0, lam)
        assert v[np.argmax(np.abs(v))] > 0
    # variance per coordinate is decreasing
    assert np.all(np.diff(coords.var(axis=0)) <= 1e-12)


def test_pca_rotation_equivariance():
    rng = np.random.default_rng(3)
    Z = rng.normal(size=(40, 4)) * [3, 2, 1, 0.5]
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a, ra = pca_project(Z, k=2)
    b, rb = pca_project(Z @ Q, k=2)
    np.testing.assert_allclose(ra, rb, atol=1e-12)
    np.testing.assert_allclose(np.abs(a), np.abs(b), atol=1e-9)


def test_pca_errors():
    with pytest.raises(ValueError):
        pca_project(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        pca_project(np.zeros((4, 2)), k=3)


def test_embedding_dump(tmp_path):
    path = tmp_path / "e.csv"
    coords = np.array([[0.5, -1.25], [1.0 / 3, 2.0]])
    write_embedding_dump(path, coords, ["test_id", "test_ood1"], [0, 1], [0, 6], [0, 1], source="backbone")
    lines = path.read_text().splitlines()
    assert lines[0] == "# source=backbone"
    assert lines[1] == "split,domain,group,label,pc1,pc2"
    assert lines[2] == "test_id,0,0,0,0.5,-1.25"
    assert float(lines[3].split(",")[4]) == 1.0 / 3
