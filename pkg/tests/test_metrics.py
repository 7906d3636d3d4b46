"""Correlation, screening, and probe metrics against independent oracles."""

import math

import numpy as np
import pytest

from fscap.data import SyntheticSpec, generate_synthetic, sample_episode
from fscap.metrics import (
    ConstantInputError,
    SingleClassError,
    enrichment,
    export_encodings,
    logistic_probe,
    mean_per_group_r,
    pearson_r,
    roc_auc,
)
from fscap.model import FSCAPConfig, FSCAPModel


# ---------------------------------------------------------------------------
# pearson_r

def test_pearson_affine_increasing_is_one():
    x = [0.0, 1.0, 2.0, 5.0]
    y = [2 * v + 1 for v in x]
    assert pearson_r(x, y) == pytest.approx(1.0, abs=1e-12)


def test_pearson_negation_is_minus_one():
    x = [0.0, 1.0, 2.0, 5.0]
    assert pearson_r(x, [-v for v in x]) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_three_point_example():
    # direct formula: r = 1 / sqrt(2 * 2/3) = sqrt(3)/2
    assert pearson_r([1, 2, 3], [1, 2, 2]) == pytest.approx(0.866, abs=1e-3)
    assert pearson_r([1, 2, 3], [1, 2, 2]) == pytest.approx(math.sqrt(3) / 2,
                                                            abs=1e-12)


def test_pearson_matches_numpy_corrcoef():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        assert pearson_r(x, y) == pytest.approx(
            float(np.corrcoef(x, y)[0, 1]), abs=1e-12
        )


def test_pearson_constant_vector_rejected():
    with pytest.raises(ConstantInputError):
        pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ConstantInputError):
        pearson_r([1.0, 2.0, 3.0], [4.0, 4.0, 4.0])


def test_pearson_shape_validation():
    with pytest.raises(ValueError):
        pearson_r([1.0], [2.0])
    with pytest.raises(ValueError):
        pearson_r([1.0, 2.0], [1.0, 2.0, 3.0])


def test_pearson_affine_invariance():
    rng = np.random.default_rng(7)
    x = rng.normal(size=25)
    y = rng.normal(size=25)
    base = pearson_r(x, y)
    for a, b in ((2.0, 3.0), (0.1, -42.0), (1e6, 1e-6)):
        assert pearson_r(a * x + b, y) == pytest.approx(base, abs=1e-12)
        assert pearson_r(x, a * y + b) == pytest.approx(base, abs=1e-12)
    assert pearson_r(-x, y) == pytest.approx(-base, abs=1e-12)


# ---------------------------------------------------------------------------
# mean_per_group_r

def test_mean_per_group_average():
    records = (
        # group a: perfectly correlated
        [("a", 1.0, 10.0), ("a", 2.0, 20.0), ("a", 3.0, 30.0)]
        # group b: r exactly 0 by construction
        + [("b", 1.0, 1.0), ("b", 2.0, 2.0), ("b", 3.0, 1.0)]
    )
    report = mean_per_group_r(records)
    assert report.per_group["a"] == pytest.approx(1.0, abs=1e-12)
    assert report.per_group["b"] == pytest.approx(0.0, abs=1e-12)
    assert report.mean_r == pytest.approx(0.5, abs=1e-12)
    assert report.skipped == {}


def test_mean_per_group_single_group():
    records = [("only", 1.0, 1.0), ("only", 2.0, 2.0), ("only", 3.0, 2.0)]
    report = mean_per_group_r(records)
    assert report.mean_r == pytest.approx(math.sqrt(3) / 2, abs=1e-12)


def test_mean_per_group_skips_constant_predictions():
    records = (
        [("good", 1.0, 1.0), ("good", 2.0, 2.0)]
        + [("flat", 5.0, 1.0), ("flat", 5.0, 2.0)]
    )
    report = mean_per_group_r(records)
    assert "flat" in report.skipped
    assert list(report.per_group) == ["good"]
    assert report.mean_r == pytest.approx(1.0, abs=1e-12)


def test_mean_per_group_skips_tiny_groups():
    records = [("a", 1.0, 1.0), ("a", 2.0, 2.0), ("lonely", 3.0, 3.0)]
    report = mean_per_group_r(records)
    assert report.skipped == {"lonely": "fewer than 2 points"}


def test_mean_per_group_all_skipped_raises():
    report = mean_per_group_r([("x", 1.0, 1.0)])
    with pytest.raises(ValueError):
        report.mean_r


# ---------------------------------------------------------------------------
# roc_auc

def brute_auc(scores, labels):
    """Quadratic pairwise oracle: P(pos > neg) + 0.5 P(tie)."""
    s = np.asarray(scores, dtype=np.float64)
    l = np.asarray(labels)
    pos = s[l == 1]
    neg = s[l == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_roc_four_point_example():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)


def test_roc_perfect_separation():
    assert roc_auc([1, 2, 3, 10, 11], [0, 0, 0, 1, 1]) == 1.0
    # inverted: actives are the LOW scores (potent = low log10 nM)
    assert roc_auc([1, 2, 9, 10, 11], [1, 1, 0, 0, 0], invert=True) == 1.0


def test_roc_all_ties_is_half():
    assert roc_auc([3.0] * 6, [0, 1, 0, 1, 0, 1]) == pytest.approx(0.5)


def test_roc_invert_is_negation():
    rng = np.random.default_rng(3)
    s = rng.normal(size=30)
    l = (rng.random(30) < 0.4).astype(int)
    l[0], l[1] = 0, 1  # both classes present
    assert roc_auc(s, l, invert=True) == pytest.approx(roc_auc(-s, l), abs=1e-15)


def test_roc_matches_brute_force_with_ties():
    rng = np.random.default_rng(11)
    for trial in range(25):
        n = int(rng.integers(5, 201))
        # coarse grid forces plenty of exact ties
        s = np.round(rng.normal(size=n), 1)
        l = (rng.random(n) < 0.3).astype(int)
        if l.sum() in (0, n):
            l[0] = 1 - l[0]
        assert roc_auc(s, l) == pytest.approx(brute_auc(s, l), abs=1e-12)


def test_roc_complement_identity_tie_free():
    rng = np.random.default_rng(13)
    for _ in range(10):
        n = int(rng.integers(4, 60))
        s = rng.permutation(n).astype(float)  # distinct scores, no ties
        l = (rng.random(n) < 0.5).astype(int)
        if l.sum() in (0, n):
            l[0] = 1 - l[0]
        assert roc_auc(s, l) + roc_auc(-s, l) == pytest.approx(1.0, abs=1e-12)


def test_roc_single_class_rejected():
    with pytest.raises(SingleClassError):
        roc_auc([1.0, 2.0], [1, 1])
    with pytest.raises(SingleClassError):
        roc_auc([1.0, 2.0], [0, 0])


def test_roc_label_validation():
    with pytest.raises(ValueError):
        roc_auc([1.0, 2.0], [0, 2])
    with pytest.raises(ValueError):
        roc_auc([1.0, 2.0], [0.0, 0.5])


# ---------------------------------------------------------------------------
# enrichment

def test_enrichment_ten_percent_actives_top2():
    # 100 compounds, 10 active, the top-2% slice holds 2 actives
    scores = np.arange(100, dtype=float)  # 99 is ranked first
    labels = np.zeros(100, dtype=int)
    labels[98] = labels[99] = 1
    labels[:8] = 1  # the other 8 actives sit at the bottom
    assert enrichment(scores, labels, 2.0) == pytest.approx(900.0)


def test_enrichment_k100_exactly_zero():
    rng = np.random.default_rng(5)
    s = rng.normal(size=57)
    l = (rng.random(57) < 0.3).astype(int)
    l[0] = 1
    assert enrichment(s, l, 100.0) == 0.0


def test_enrichment_all_active_zero_any_k():
    s = np.arange(20, dtype=float)
    l = np.ones(20, dtype=int)
    for k in (5.0, 37.0, 100.0):
        assert enrichment(s, l, k) == 0.0


def test_enrichment_no_actives_rejected():
    with pytest.raises(SingleClassError):
        enrichment([1.0, 2.0], [0, 0], 50.0)


def test_enrichment_k_validation():
    with pytest.raises(ValueError):
        enrichment([1.0, 2.0], [0, 1], 0.0)
    with pytest.raises(ValueError):
        enrichment([1.0, 2.0], [0, 1], 100.5)


def test_enrichment_floor_and_minimum_one():
    scores = np.arange(10, dtype=float)
    labels = np.zeros(10, dtype=int)
    labels[9] = labels[8] = 1
    # floor(0.25 * 10) = 2 slots, both active: (1.0/0.2 - 1) * 100
    assert enrichment(scores, labels, 25.0) == pytest.approx(400.0)
    # floor(0.01 * 10) = 0 clamps to 1 slot
    assert enrichment(scores, labels, 1.0) == pytest.approx(400.0)


def test_enrichment_invert_ranks_low_scores_first():
    scores = np.arange(10, dtype=float)
    labels = np.zeros(10, dtype=int)
    labels[0] = labels[1] = 1  # actives have the LOWEST scores
    assert enrichment(scores, labels, 20.0, invert=True) == pytest.approx(400.0)
    assert enrichment(scores, labels, 20.0) == pytest.approx(-100.0)


def test_enrichment_ties_break_by_input_order():
    scores = [5.0, 5.0, 5.0, 5.0]
    assert enrichment(scores, [1, 0, 0, 1], 25.0) == pytest.approx(100.0)
    assert enrichment(scores, [0, 1, 1, 0], 25.0) == pytest.approx(-100.0)


def test_enrichment_random_scores_near_zero_on_average():
    # Monte-Carlo oracle: random ranking has expected enrichment 0
    rng = np.random.default_rng(17)
    labels = np.zeros(100, dtype=int)
    labels[:10] = 1
    vals = []
    for _ in range(2000):
        vals.append(enrichment(rng.normal(size=100), labels, 10.0))
    assert abs(float(np.mean(vals))) < 7.0  # se of the mean is about 2


# ---------------------------------------------------------------------------
# logistic_probe

def separable_encodings(per_class=10, n_classes=4, spread=3.0, seed=0):
    rng = np.random.default_rng(seed)
    enc, labels = [], []
    for c in range(n_classes):
        center = np.zeros(n_classes)
        center[c] = spread
        for _ in range(per_class):
            enc.append(center + 0.05 * rng.normal(size=n_classes))
            labels.append(f"class{c}")
    return np.asarray(enc), labels


def test_probe_separable_two_classes_trains_to_100():
    enc, labels = separable_encodings(per_class=15, n_classes=2)
    res = logistic_probe(enc, labels, seed=0)
    assert res.train_accuracy == 1.0
    assert res.test_accuracy == 1.0
    assert res.n_train + res.n_test == 30
    assert res.n_classes == 2


def test_probe_duplicated_points_test_equals_train():
    # each class is one exact point repeated; test items are copies of
    # train items, so accuracy is 100 on both sides
    enc, labels = [], []
    for c in range(4):
        point = np.zeros(4)
        point[c] = 3.0
        for _ in range(10):
            enc.append(point.copy())
            labels.append(c)
    res = logistic_probe(np.asarray(enc), labels, seed=1)
    assert res.train_accuracy == 1.0
    assert res.test_accuracy == 1.0


def test_probe_shuffled_labels_near_chance():
    rng = np.random.default_rng(23)
    n_classes, per_class = 20, 30
    x = rng.normal(size=(n_classes * per_class, 16))
    labels = list(np.repeat(np.arange(n_classes), per_class))
    accs = []
    for seed in range(5):
        shuffled = list(np.random.default_rng(100 + seed).permutation(labels))
        res = logistic_probe(x, shuffled, seed=seed)
        accs.append(res.test_accuracy)
    mean_acc = float(np.mean(accs)) * 100.0
    assert abs(mean_acc - 5.0) <= 5.0  # chance is 1/20


def test_probe_deterministic_in_seed():
    enc, labels = separable_encodings(per_class=8, n_classes=3, seed=2)
    a = logistic_probe(enc, labels, seed=9)
    b = logistic_probe(enc, labels, seed=9)
    assert (a.train_accuracy, a.test_accuracy) == (b.train_accuracy,
                                                   b.test_accuracy)
    assert a.n_train == b.n_train


def test_probe_split_fraction():
    enc, labels = separable_encodings(per_class=10, n_classes=2)
    res = logistic_probe(enc, labels, train_frac=0.8, seed=0)
    assert res.n_train == 16
    assert res.n_test == 4


def test_probe_degenerate_inputs_rejected():
    enc, labels = separable_encodings(per_class=5, n_classes=2)
    with pytest.raises(ValueError):
        logistic_probe(enc, ["same"] * len(labels))  # one class
    with pytest.raises(ValueError):
        logistic_probe(enc, labels[:-1] + ["rare"])  # class with 1 instance
    with pytest.raises(ValueError):
        logistic_probe(enc[:, 0], labels)  # not 2-d
    with pytest.raises(ValueError):
        logistic_probe(enc, labels[:-1])  # length mismatch


# ---------------------------------------------------------------------------
# export_encodings

def make_model_and_episodes(n_episodes):
    ds, _ = generate_synthetic(
        SyntheticSpec(n_assays=3, molecules_per_assay=12, nbits=64, radius=2,
                      seed=3)
    )
    config = FSCAPConfig(nbits=64, radius=2, encoding_dim=8, n_layers=3,
                         mlp_width=16, dropout_p=0.0, n_context=4)
    model = FSCAPModel(config, seed=0)
    rng = np.random.default_rng(4)
    assay_ids = ds.assay_ids()
    episodes = [
        sample_episode(ds, assay_ids[i % len(assay_ids)], 4, rng)
        for i in range(n_episodes)
    ]
    return model, episodes


def test_export_rows_and_header(tmp_path):
    model, episodes = make_model_and_episodes(7)
    path = tmp_path / "enc.tsv"
    n = export_encodings(model, episodes, str(path))
    assert n == 7
    lines = path.read_text().splitlines()
    assert lines[0].split("\t") == ["group"] + [f"enc_{i}" for i in range(8)]
    assert len(lines) == 8
    for line in lines[1:]:
        fields = line.split("\t")
        assert fields[0].startswith("synth-")
        assert len(fields) == 9
        floats = [float(v) for v in fields[1:]]
        assert all(np.isfinite(floats))


def test_export_byte_identical(tmp_path):
    model, episodes = make_model_and_episodes(5)
    export_encodings(model, episodes, str(tmp_path / "a.tsv"))
    export_encodings(model, episodes, str(tmp_path / "b.tsv"))
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()


def test_export_empty_is_header_only(tmp_path):
    model, _ = make_model_and_episodes(1)
    path = tmp_path / "empty.tsv"
    n = export_encodings(model, [], str(path))
    assert n == 0
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("group\tenc_0")
