import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mnb import metrics
from mnb.metrics import (
    MetricsLog,
    average_incremental_accuracy,
    average_new_accuracy,
    forgetting,
    forgetting_max,
    linear_cka,
    task_update_cosine_matrix,
)


def log_from_acc(stage_classes, table, n_per_class=10):
    """Build a log whose per-class accuracies are exactly ``table[k][c]``."""
    log = MetricsLog(len(stage_classes))
    seen = []
    for k, cs in enumerate(stage_classes, start=1):
        seen = seen + list(cs)
        labels, preds = [], []
        for c in seen:
            hits = int(round(table[k][c] * n_per_class))
            labels += [c] * n_per_class
            preds += [c] * hits + [-1] * (n_per_class - hits)
        log.record(k, cs, seen, labels, preds)
    return log


def test_single_stage():
    log = log_from_acc([[0, 1]], {1: {0: 0.8, 1: 0.6}})
    assert average_incremental_accuracy(log) == pytest.approx(0.7)
    assert average_new_accuracy(log) == pytest.approx(0.7)
    assert forgetting(log) == 0.0


def test_avg_inc_acc_of_two_stages():
    log = log_from_acc([[0], [1]], {1: {0: 1.0}, 2: {0: 0.5, 1: 0.5}})
    assert average_incremental_accuracy(log) == pytest.approx(0.75)


def test_forgetting_single_class():
    log = log_from_acc([[0], [1]], {1: {0: 1.0}, 2: {0: 0.6, 1: 1.0}})
    assert forgetting(log) == pytest.approx(0.4)


def test_forgetting_uses_intro_not_max():
    table = {1: {0: 0.5}, 2: {0: 0.9, 1: 1.0}, 3: {0: 0.4, 1: 1.0, 2: 1.0}}
    log = log_from_acc([[0], [1], [2]], table)
    assert forgetting(log) == pytest.approx(((0.5 - 0.4) + (1.0 - 1.0)) / 2)
    assert forgetting_max(log) == pytest.approx(((0.9 - 0.4) + 0.0) / 2)


def test_perfect_classifier():
    table = {1: {0: 1.0, 1: 1.0}, 2: {0: 1.0, 1: 1.0, 2: 1.0}}
    log = log_from_acc([[0, 1], [2]], table)
    assert average_new_accuracy(log) == 1.0
    assert average_incremental_accuracy(log) == 1.0


def test_constant_accuracy_log():
    table = {k: {c: 0.7 for c in range(k)} for k in range(1, 5)}
    log = log_from_acc([[0], [1], [2], [3]], table)
    assert average_incremental_accuracy(log) == pytest.approx(0.7, abs=1e-15)


def test_incomplete_log_rejected():
    log = MetricsLog(3)
    log.record(1, [0], [0], [0], [0])
    with pytest.raises(ValueError):
        average_incremental_accuracy(log)


def test_cosine_examples():
    u = np.array([1.0, 2.0, -3.0])
    assert task_update_cosine_matrix([u, u])[0, 1] == pytest.approx(1.0)
    assert task_update_cosine_matrix([[1, 0], [0, 1]])[0, 1] == 0.0
    assert task_update_cosine_matrix([u, -u])[0, 1] == pytest.approx(-1.0)
    z = task_update_cosine_matrix([u, np.zeros(3)])
    np.testing.assert_array_equal(z, [[1, 0], [0, 1]])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 6))
def test_cosine_matrix_symmetric_unit_diagonal(seed, k):
    rng = np.random.default_rng(seed)
    s = task_update_cosine_matrix(rng.normal(size=(k, 9)))
    np.testing.assert_array_equal(s, s.T)
    np.testing.assert_array_equal(np.diag(s), 1.0)
    assert np.all(np.abs(s) <= 1 + 1e-12)


def hsic_cka(x, y):
    """Gram-matrix HSIC estimator evaluated with explicit double loops."""
    n = len(x)
    kx = [[float(np.dot(x[i], x[j])) for j in range(n)] for i in range(n)]
    ky = [[float(np.dot(y[i], y[j])) for j in range(n)] for i in range(n)]

    def centered(k):
        rows = [sum(r) / n for r in k]
        cols = [sum(k[i][j] for i in range(n)) / n for j in range(n)]
        total = sum(rows) / n
        return [[k[i][j] - rows[i] - cols[j] + total for j in range(n)] for i in range(n)]

    def hsic(a, b):
        return sum(a[i][j] * b[i][j] for i in range(n) for j in range(n)) / (n - 1) ** 2

    cx, cy = centered(kx), centered(ky)
    return hsic(cx, cy) / np.sqrt(hsic(cx, cx) * hsic(cy, cy))


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def test_cka_identity_and_invariances(rng):
    x = rng.normal(size=(30, 6))
    assert linear_cka(x, x) == pytest.approx(1.0, abs=1e-12)
    y = 3.0 * x @ random_orthogonal(rng, 6)
    assert linear_cka(x, y) == pytest.approx(1.0, abs=1e-10)


def test_cka_matches_hsic_oracle(rng):
    for _ in range(3):
        x, y = rng.normal(size=(20, 5)), rng.normal(size=(20, 3)) + rng.normal(size=(20, 1))
        assert linear_cka(x, y) == pytest.approx(hsic_cka(x, y), abs=1e-10)


def test_cka_properties(rng):
    x, y = rng.normal(size=(25, 4)), rng.normal(size=(25, 7))
    v = linear_cka(x, y)
    assert 0 <= v <= 1
    assert linear_cka(y, x) == pytest.approx(v, abs=1e-14)
    perm = rng.permutation(25)
    assert linear_cka(x[perm], y[perm]) == pytest.approx(v, abs=1e-12)
    assert linear_cka(np.ones((5, 2)), rng.normal(size=(5, 2))) == 0.0


def test_metrics_csv_round_trip(tmp_path):
    table = {1: {0: 1.0, 1: 0.5}, 2: {0: 0.7, 1: 0.4, 2: 0.9}}
    log = log_from_acc([[0, 1], [2]], table)
    p = tmp_path / "m.csv"
    metrics.write_metrics_csv(log, p)
    stages, summary = metrics.read_metrics_csv(p)
    assert [s["seen_classes"] for s in stages] == ["2", "3"]
    assert summary["forgetting"] == forgetting(log)
    assert summary["avg_inc_acc"] == average_incremental_accuracy(log)
    assert p.read_text().splitlines()[0] == "stage,seen_classes,overall_acc,new_acc"
