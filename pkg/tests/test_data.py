import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdnad.core_math import Rng
from mdnad.data import (
    OTHER,
    NormStats,
    SchemaError,
    SchemaSpec,
    apply_preprocess,
    fit_preprocess,
    gen_synthetic_bimodal,
    inject_anomalies,
    load_csv,
    parse_labels,
    stratified_sample,
    table_from_frame,
    write_synthetic_csv,
)

FIXTURE = Path(__file__).parent / "data" / "unsw_nb15_sample.csv"

THREE_ROWS = """\
dur,proto,sbytes,label
0.5,tcp,100,0
1.25,udp,abc,1
2.0,tcp,300,normal
"""

TINY = SchemaSpec(target_column="dur", numeric_columns=("sbytes",), categorical_columns=("proto",), label_column="label")


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- loading ---------------------------------------------------------------


def test_three_row_fixture(tmp_path):
    t = load_csv(write(tmp_path, THREE_ROWS), TINY)
    assert len(t) == 3
    np.testing.assert_array_equal(t.target, [0.5, 1.25, 2.0])
    assert t.categorical["proto"].tolist() == ["tcp", "udp", "tcp"]
    assert t.labels.tolist() == [False, True, False]
    # "abc" is recorded missing and the row stays
    assert t.numeric["sbytes"][0] == 100 and math.isnan(t.numeric["sbytes"][1])
    assert t.missing["sbytes"].tolist() == [False, True, False]


def test_missing_target_column_is_named(tmp_path):
    p = write(tmp_path, "proto,sbytes,label\ntcp,1,0\n")
    with pytest.raises(SchemaError, match="dur"):
        load_csv(p, TINY)


def test_empty_file(tmp_path):
    with pytest.raises(SchemaError, match="empty"):
        load_csv(write(tmp_path, ""), TINY)
    with pytest.raises(SchemaError, match="no data rows"):
        load_csv(write(tmp_path, "dur,proto,sbytes,label\n"), TINY)


def test_comment_lines_and_quoting(tmp_path):
    p = write(tmp_path, '# provenance={"a": 1}\ndur,proto,sbytes,label\n"1.5","tc,p",7,1\n')
    t = load_csv(p, TINY)
    assert t.categorical["proto"].tolist() == ["tc,p"]
    assert t.target.tolist() == [1.5]


def test_label_optional_when_not_required(tmp_path):
    p = write(tmp_path, "dur,proto,sbytes\n1,tcp,2\n")
    assert load_csv(p, TINY, require_label=False).labels is None
    with pytest.raises(SchemaError, match="label"):
        load_csv(p, TINY)


def test_parse_labels():
    assert parse_labels(["0", "1", "normal", "attack", "False", "2.0", " 0 "]).tolist() == [
        False, True, False, True, False, True, False,
    ]


def test_unsw_fixture_loads():
    t = load_csv(FIXTURE, SchemaSpec.unsw_nb15())
    assert len(t) == 60
    assert set(t.numeric) == {"spkts", "dpkts", "sbytes", "dbytes", "rate", "sttl", "dttl"}
    assert "attack_cat" not in t.numeric and "id" not in t.numeric
    assert t.missing["sbytes"].sum() == 1 and t.missing["rate"].sum() == 1
    ds, stats = fit_preprocess(t)
    assert not np.isnan(ds.features).any()
    assert ds.features.shape[1] == stats.input_dim


def test_schema_validation():
    with pytest.raises(SchemaError):
        SchemaSpec(target_column="y", numeric_columns=("y",))
    with pytest.raises(SchemaError):
        SchemaSpec(target_column="y", categorical_columns=("c",), vocab_caps=(("c", 0),))


# -- preprocessing ---------------------------------------------------------


def frame_table(cols, schema=None, target=None):
    n = len(next(iter(cols.values())))
    data = {k: [str(v) for v in vals] for k, vals in cols.items()}
    data.setdefault("y", [str(v) for v in (target if target is not None else np.arange(n, dtype=float))])
    data.setdefault("label", ["0"] * n)
    schema = schema or SchemaSpec(target_column="y", numeric_columns=tuple(k for k in cols if k != "c"),
                                  categorical_columns=("c",) if "c" in cols else (), label_column="label")
    return table_from_frame(pd.DataFrame(data), schema)


def test_zscore_example():
    # mean 3, population std 2
    t = frame_table({"a": [1.0, 5.0, 1.0, 5.0]})
    ds, stats = fit_preprocess(t)
    assert stats.numeric["a"] == (3.0, 2.0)
    assert ds.features[1, 0] == 1.0


def test_vocab_and_other_bucket():
    schema = SchemaSpec(target_column="y", categorical_columns=("c",), vocab_caps=(("c", 3),), label_column="label")
    t = frame_table({"c": ["tcp", "udp", "tcp", "udp", "icmp"]}, schema)
    ds, stats = fit_preprocess(t)
    assert stats.vocab["c"] == ["tcp", "udp"]
    assert stats.feature_names == ["c=tcp", "c=udp", f"c={OTHER}"]
    assert ds.features[1].tolist() == [0.0, 1.0, 0.0]
    assert ds.features[4].tolist() == [0.0, 0.0, 1.0]
    unseen = apply_preprocess(frame_table({"c": ["sctp"]}, schema), stats)
    assert unseen.features[0].tolist() == [0.0, 0.0, 1.0]


def test_vocab_tie_break_is_lexical():
    schema = SchemaSpec(target_column="y", categorical_columns=("c",), vocab_caps=(("c", 3),), label_column="label")
    _, stats = fit_preprocess(frame_table({"c": ["b", "a", "c", "c"]}, schema))
    assert stats.vocab["c"] == ["c", "a"]


def test_constant_and_empty_columns_dropped():
    t = frame_table({"a": [1.0, 2.0, 4.0], "k": [7.0, 7.0, 7.0], "e": ["x", "?", ""]})
    ds, stats = fit_preprocess(t)
    assert list(stats.numeric) == ["a"]
    assert sorted(stats.dropped) == ["e", "k"]
    assert stats.missing_rate["e"] == 1.0
    assert ds.features.shape == (3, 1)


def test_missing_imputed_with_mean():
    t = frame_table({"a": [1.0, "nan?", 3.0]})
    ds, stats = fit_preprocess(t)
    assert stats.numeric["a"][0] == 2.0
    assert ds.features[1, 0] == 0.0
    assert stats.missing_rate["a"] == pytest.approx(1 / 3)


def test_rows_with_missing_target_dropped():
    t = frame_table({"a": [1.0, 2.0, 3.0]}, target=["1.0", "", "2.0"])
    ds, _ = fit_preprocess(t)
    assert len(ds) == 2
    assert ds.row_index.tolist() == [0, 2]


def test_apply_errors():
    t = frame_table({"a": [1.0, 2.0, 3.0]})
    with pytest.raises(SchemaError, match="before fit"):
        apply_preprocess(t, None)
    _, stats = fit_preprocess(t)
    other = frame_table({"a": [1.0, 2.0]}, SchemaSpec(target_column="y", numeric_columns=("a",), label_column=None))
    with pytest.raises(SchemaError, match="schema"):
        apply_preprocess(other, stats)


def test_norm_stats_round_trip():
    _, stats = fit_preprocess(load_csv(FIXTURE, SchemaSpec.unsw_nb15()))
    back = NormStats.from_dict(stats.to_dict())
    assert back == stats
    assert back.fingerprint() == stats.fingerprint()


mixed_tables = st.integers(2, 40).flatmap(
    lambda n: st.tuples(
        st.lists(st.one_of(st.floats(-1e6, 1e6), st.just("")), min_size=n, max_size=n),
        st.lists(st.floats(-1e3, 1e3), min_size=n, max_size=n),
        st.lists(st.sampled_from(["tcp", "udp", "arp", "-", "ospf"]), min_size=n, max_size=n),
        st.lists(st.floats(-50, 50), min_size=n, max_size=n),
        st.integers(1, 4),
    )
)


def _mixed(a, b, c, y, cap):
    schema = SchemaSpec(target_column="y", numeric_columns=("a", "b"), categorical_columns=("c",),
                        vocab_caps=(("c", cap),), label_column="label")
    return frame_table({"a": a, "b": b, "c": c}, schema, target=y)


@given(mixed_tables)
def test_fit_then_apply_is_bit_exact(inst):
    t = _mixed(*inst)
    try:
        ds, stats = fit_preprocess(t)
    except SchemaError:
        return  # constant target: nothing to model
    again = apply_preprocess(t, stats)
    assert again.features.tobytes() == ds.features.tobytes()
    assert again.targets.tobytes() == ds.targets.tobytes()
    assert not np.isnan(ds.features).any()


@given(mixed_tables)
def test_preprocessed_columns_are_standardized(inst):
    t = _mixed(*inst)
    try:
        ds, stats = fit_preprocess(t)
    except SchemaError:
        return
    k = len(stats.numeric)
    for j in range(k):
        col = ds.features[:, j]
        assert abs(col.mean()) < 1e-9
        assert abs(col.std() - 1.0) < 1e-9
    onehot = ds.features[:, k:]
    assert np.all(onehot.sum(axis=1) == 1.0)
    assert ds.features.shape[1] == k + len(stats.vocab["c"]) + 1


# -- synthetic -------------------------------------------------------------


def test_generator_is_deterministic():
    a, b = gen_synthetic_bimodal(100, Rng(3)), gen_synthetic_bimodal(100, Rng(3))
    assert a.targets.tobytes() == b.targets.tobytes()
    assert a.features.tobytes() == b.features.tobytes()


def test_generator_branch_frequency():
    ds = gen_synthetic_bimodal(100_000, Rng(0))
    assert abs((ds.truth.branch == 1).mean() - 0.5) < 0.01
    x = ds.features[:, 0]
    assert x.min() >= -1 and x.max() < 1


def test_generator_without_noise():
    ds = gen_synthetic_bimodal(500, Rng(1), noise_sigma=0.0)
    x = ds.features[:, 0]
    np.testing.assert_array_equal(np.abs(ds.targets), np.abs(x))


def test_truth_density_formula():
    ds = gen_synthetic_bimodal(10, Rng(2), 0.1)
    x, y = ds.features[:, 0], ds.targets
    direct = 0.5 * (np.exp(-0.5 * ((y - x) / 0.1) ** 2) + np.exp(-0.5 * ((y + x) / 0.1) ** 2)) / (0.1 * math.sqrt(2 * math.pi))
    np.testing.assert_allclose(ds.truth.log_density(x, y), np.log(direct), rtol=1e-12)
    assert ds.truth.mean_nll(x, y) == pytest.approx(-np.log(direct).mean(), rel=1e-12)


def test_inject_exact_count_and_determinism():
    ds = gen_synthetic_bimodal(1000, Rng(4))
    a = inject_anomalies(ds, 0.05, Rng(9))
    b = inject_anomalies(ds, 0.05, Rng(9))
    assert a.labels.sum() == 50
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.targets[~a.labels], ds.targets[~a.labels])
    assert ds.labels.sum() == 0  # input untouched


@pytest.mark.parametrize("frac", [0.0, 0.5, 0.9, -0.1])
def test_inject_fraction_range(frac):
    with pytest.raises(ValueError):
        inject_anomalies(gen_synthetic_bimodal(10, Rng(0)), frac, Rng(0))


def test_injected_points_are_off_manifold():
    ds = inject_anomalies(gen_synthetic_bimodal(2000, Rng(5)), 0.05, Rng(6), shift=10.0)
    x = ds.features[:, 0]
    ld = ds.truth.log_density(x, ds.targets)
    # every anomaly is at least 1e-6 times less likely than the least likely normal
    assert ld[ds.labels].max() - ld[~ds.labels].min() < math.log(1e-6)


def test_inject_without_truth_shifts_by_target_units():
    t = frame_table({"a": [1.0, 2.0, 3.0, 4.0]}, target=[0.0, 1.0, 2.0, 3.0])
    ds, _ = fit_preprocess(t)
    out = inject_anomalies(ds, 0.25, Rng(0), shift=4.0)
    moved = out.labels
    assert moved.sum() == 1
    assert abs(out.targets[moved] - ds.targets[moved])[0] == pytest.approx(4.0)


def test_stratified_sample_keeps_proportions():
    t = load_csv(FIXTURE, SchemaSpec.unsw_nb15())
    s = stratified_sample(t, 30, Rng(0))
    assert len(s) == 30
    assert s.labels.sum() == round(30 * t.labels.mean())
    assert len(set(s.row_index.tolist())) == 30
    assert stratified_sample(t, 1000, Rng(0)) is t


def test_synthetic_csv_round_trip(tmp_path):
    ds = inject_anomalies(gen_synthetic_bimodal(50, Rng(1)), 0.1, Rng(2))
    path = tmp_path / "s.csv"
    write_synthetic_csv(ds, path)
    t = load_csv(path, SchemaSpec.synthetic())
    assert t.target.tobytes() == ds.targets.tobytes()
    assert t.numeric["x"].tobytes() == ds.features[:, 0].tobytes()
    np.testing.assert_array_equal(t.labels, ds.labels)
