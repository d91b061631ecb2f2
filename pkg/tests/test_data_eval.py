import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kishnn import data_eval
from kishnn.classifier import LabeledDatabase
from kishnn.data_eval import (DataFormatError, RawDataset, f1_score,
                              gaussian_sd_diagnostic, grid_dataset,
                              leave_one_out_f1, load_wdbc, plain_knn,
                              project_2d, quantize, sweep_benchmarks)



# --------------------------------------------------------------- loading


def test_load_wdbc_canonical_counts(wdbc_path):
    raw = load_wdbc(wdbc_path)
    assert raw.n == 569
    assert int(raw.labels.sum()) == 212          # malignant
    assert int((1 - raw.labels).sum()) == 357    # benign
    assert raw.features.shape == (569, 30)


def test_load_wdbc_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DataFormatError, match="no records"):
        load_wdbc(path)


def test_load_wdbc_wrong_column_count(tmp_path):
    path = tmp_path / "bad.csv"
    good = "1,M," + ",".join(["1.0"] * 30)
    short = "2,B," + ",".join(["1.0"] * 29)
    path.write_text(good + "\n" + short + "\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_wdbc(path)


def test_load_wdbc_bad_diagnosis_and_float(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,X," + ",".join(["1.0"] * 30) + "\n")
    with pytest.raises(DataFormatError, match="line 1"):
        load_wdbc(path)
    path.write_text("1,M," + ",".join(["1.0"] * 29) + ",zap\n")
    with pytest.raises(DataFormatError, match="line 1"):
        load_wdbc(path)


# ------------------------------------------------------------ projection


def synthetic_raw(n_per, offset, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 1, size=(n_per, 30))
    b = rng.normal(0, 1, size=(n_per, 30))
    b[:, 0] += offset  # separable along feature 1
    feats = np.vstack([a, b])
    diags = ("B",) * n_per + ("M",) * n_per
    ids = tuple(str(i) for i in range(2 * n_per))
    return RawDataset(ids, diags, feats)


def test_projection_separates_separable_classes():
    raw = synthetic_raw(50, offset=20.0)
    proj = project_2d(raw)
    axis1 = proj[:, 0]
    assert axis1[raw.labels == 1].min() > axis1[raw.labels == 0].max()


def test_projection_identical_class_means_uses_ridge_path():
    rng = np.random.default_rng(1)
    feats = np.vstack([rng.normal(0, 1, size=(40, 30))] * 2)
    raw = RawDataset(tuple(map(str, range(80))),
                     ("B",) * 40 + ("M",) * 40, feats)
    proj = project_2d(raw)  # must not crash; direction is arbitrary
    assert proj.shape == (80, 2) and np.isfinite(proj).all()


def test_projection_axes_deterministic_sign(wdbc_path):
    raw = load_wdbc(wdbc_path)
    p1 = project_2d(raw)
    p2 = project_2d(raw)
    assert (p1 == p2).all()


def test_wdbc_projection_linearly_separable_to_90_percent(wdbc_path):
    raw = load_wdbc(wdbc_path)
    axis1 = project_2d(raw)[:, 0]
    labels = raw.labels
    # threshold sweep oracle on axis 1
    best = 0
    for t in np.unique(axis1):
        for sgn in (1, -1):
            acc = ((sgn * axis1 > sgn * t) == labels).mean()
            best = max(best, acc)
    assert best >= 0.90


# ---------------------------------------------------------- quantization


def test_quantize_endpoints_and_midpoint():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]])
    cells, meta = quantize(pts, 11)
    assert list(cells[0]) == [0, 0]
    assert list(cells[1]) == [10, 10]
    assert list(cells[2]) == [5, 5]


def test_quantize_degenerate_axis_warns():
    pts = np.array([[1.0, 2.0], [1.0, 5.0]])
    with pytest.warns(UserWarning, match="degenerate"):
        cells, _ = quantize(pts, 10)
    assert list(cells[:, 0]) == [0, 0]


@given(st.integers(2, 64), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_quantize_dequantize_error_bounded(g, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-5, 5, size=(100, 2))
    cells, meta = quantize(pts, g)
    assert cells.min() >= 0 and cells.max() <= g - 1
    for axis in range(2):
        offset, scale = meta[axis]
        if scale == 0:
            continue
        back = cells[:, axis] / scale + offset
        assert np.abs(back - pts[:, axis]).max() <= 0.5 / scale + 1e-9


# -------------------------------------------------------------- plain kNN


def brute_knn(points, labels, q, k):
    scored = sorted((abs(int(p[0]) - q[0]) + abs(int(p[1]) - q[1]), i)
                    for i, p in enumerate(points))
    chosen = [labels[i] for _, i in scored[:k]]
    ones = sum(chosen)
    return 1 if 2 * ones > k else 0


def test_plain_knn_identity_point():
    db = LabeledDatabase(np.array([[5, 5], [1, 1], [9, 9]]),
                         np.array([1, 0, 0]))
    assert plain_knn(db, (5, 5), 1) == 1


def test_plain_knn_k_equals_n_is_global_majority():
    db = LabeledDatabase(np.array([[1, 1], [2, 2], [3, 3]]),
                         np.array([1, 1, 0]))
    assert plain_knn(db, (9, 9), 3) == 1


def test_plain_knn_matches_brute_force_oracle():
    rng = np.random.default_rng(12)
    for _ in range(100):
        n = 30
        pts = rng.integers(0, 50, size=(n, 2))
        labels = rng.integers(0, 2, size=n)
        q = tuple(rng.integers(0, 50, size=2))
        k = int(rng.integers(1, n + 1))
        db = LabeledDatabase(pts, labels)
        assert plain_knn(db, q, k) == brute_knn(pts, labels, q, k)


def test_plain_knn_class_tie_resolves_to_zero():
    db = LabeledDatabase(np.array([[0, 1], [1, 0]]), np.array([0, 1]))
    assert plain_knn(db, (0, 0), 2) == 0


# ------------------------------------------------------------------- F1


def test_f1_properties():
    a = np.array([1, 1, 0, 0], dtype=bool)
    b = np.array([1, 0, 1, 0], dtype=bool)
    assert f1_score(a, b) == f1_score(b, a)
    assert f1_score(a, a) == 1.0
    assert f1_score(a, ~a) == 0.0
    assert f1_score(np.zeros(4, bool), np.zeros(4, bool)) == 0.0


@given(st.lists(st.booleans(), min_size=1, max_size=30),
       st.lists(st.booleans(), min_size=1, max_size=30))
def test_f1_range_property(xs, ys):
    n = min(len(xs), len(ys))
    v = f1_score(np.array(xs[:n]), np.array(ys[:n]))
    assert 0.0 <= v <= 1.0


# ------------------------------------------------------- leave one out


def test_loo_perfect_db_scores_one():
    pts = np.vstack([np.full((10, 2), 2), np.full((10, 2), 90)])
    labels = np.array([0] * 10 + [1] * 10)
    gd = data_eval.GridDataset(pts, labels, grid=100,
                               quant_meta=((0.0, 1.0), (0.0, 1.0)))
    report = leave_one_out_f1(gd, 3, "plain")
    assert report.f1 == 1.0


def test_loo_all_benign_predictions_scores_zero():
    # the lone malignant point's neighbors are all benign
    pts = np.vstack([np.full((12, 2), 5), [[6, 6]]])
    labels = np.array([0] * 12 + [1])
    gd = data_eval.GridDataset(pts, labels, grid=100,
                               quant_meta=((0.0, 1.0), (0.0, 1.0)))
    report = leave_one_out_f1(gd, 3, "plain")
    assert report.f1 == 0.0


def test_loo_plain_matches_paper_span(wdbc_path):
    raw = load_wdbc(wdbc_path)
    gd = grid_dataset(raw, 100)
    report = leave_one_out_f1(gd, 13, "plain")
    assert abs(report.f1 - 0.98) <= 0.015


def test_loo_secure_thread_count_invariance():
    rng = np.random.default_rng(3)
    pts = rng.integers(0, 10, size=(30, 2))
    labels = rng.integers(0, 2, size=30)
    gd = data_eval.GridDataset(pts, labels, grid=10,
                               quant_meta=((0.0, 1.0), (0.0, 1.0)))
    r1 = leave_one_out_f1(gd, 3, "secure", repetitions=3, seed=9, threads=1)
    r2 = leave_one_out_f1(gd, 3, "secure", repetitions=3, seed=9, threads=4)
    assert (r1.per_point_predictions == r2.per_point_predictions).all()
    assert r1.metrics.mult_gates == r2.metrics.mult_gates


# ------------------------------------------------------------ diagnostic


def test_gaussian_diagnostic_on_gaussian_sample():
    rng = np.random.default_rng(0)
    n = 10000
    # place points on a line so L1 distance to 0 is the coordinate itself
    xs = np.clip(np.rint(rng.normal(500, 60, size=n)), 0, 999).astype(int)
    db = LabeledDatabase(np.column_stack([xs, np.zeros(n, int)]),
                         np.zeros(n, dtype=np.int64))
    sd = gaussian_sd_diagnostic(db, (0, 0))
    assert sd <= 0.01


def test_gaussian_diagnostic_degenerate_warns():
    db = LabeledDatabase(np.full((12, 2), 4), np.zeros(12, dtype=np.int64))
    with pytest.warns(UserWarning, match="degenerate"):
        assert gaussian_sd_diagnostic(db, (0, 0)) == 1.0


def test_distance_histogram_counts():
    db = LabeledDatabase(np.array([[0, 1], [1, 0], [2, 2]]),
                         np.zeros(3, dtype=np.int64))
    rows = data_eval.distance_histogram(db, (0, 0))
    assert rows == [(1, 2), (4, 1)]


# ------------------------------------------------------------- benchmark


@pytest.fixture(scope="module")
def small_grid_dataset():
    rng = np.random.default_rng(5)
    pts = rng.integers(0, 50, size=(60, 2))
    labels = rng.integers(0, 2, size=60)
    return data_eval.GridDataset(pts, labels, grid=50,
                                 quant_meta=((0.0, 1.0), (0.0, 1.0)))


def test_bench_schema(small_grid_dataset, tmp_path):
    rows = sweep_benchmarks(small_grid_dataset, 3, n_sweep=(60,))
    assert len(rows) == 1
    assert tuple(rows[0]) == data_eval.BENCH_FIELDS
    out = tmp_path / "bench.csv"
    data_eval.write_csv(out, data_eval.BENCH_FIELDS, rows)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == ",".join(data_eval.BENCH_FIELDS)
    assert len(lines) == 2 and len(lines[1].split(",")) == 6


def test_bench_gates_linear_in_n(small_grid_dataset):
    rows = sweep_benchmarks(small_grid_dataset, 3, n_sweep=(100, 200, 400))
    gates = [r["mult_gates"] for r in rows]
    assert abs(gates[1] / gates[0] - 2) < 0.05 * 2
    assert abs(gates[2] / gates[0] - 4) < 0.05 * 4


def test_bench_depth_grows_sublinearly_in_grid(small_grid_dataset):
    rows = sweep_benchmarks(small_grid_dataset, 3,
                            grid_sweep=(50, 100, 200))
    depths = [r["max_depth"] for r in rows]
    assert depths[0] <= depths[1] <= depths[2]
    assert depths[2] - depths[1] <= depths[1] - depths[0] + 1
