import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xferscore.errors import MissingFieldError, ParseError, ValidationError
from xferscore.matrixio import (
    MANIFEST_COLUMNS,
    TaskRecord,
    encode_labels,
    load_feature_matrix,
    load_labels,
    load_soft_predictions,
    load_task_bundle,
    read_matrix,
    validate_soft_predictions,
    write_labels,
    write_matrix,
    write_task_bundle,
)


def test_csv_parse(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("1,2\n3,4\n5,6")
    F = load_feature_matrix(p)
    assert F.shape == (3, 2)
    np.testing.assert_array_equal(F, [[1, 2], [3, 4], [5, 6]])


def test_fmb_matches_csv(tmp_path):
    M = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    p = tmp_path / "f.fmb"
    write_matrix(p, M)
    raw = p.read_bytes()
    assert raw[:4] == b"FMB1"
    magic, code, rows, cols = struct.unpack_from("<4sBQQ", raw)
    assert (code, rows, cols) == (2, 3, 2)
    assert len(raw) == 21 + 6 * 8
    c = tmp_path / "f.csv"
    c.write_text("1,2\n3,4\n5,6\n")
    np.testing.assert_array_equal(load_feature_matrix(p), load_feature_matrix(c))


def test_fmb_f32(tmp_path):
    M = np.arange(6, dtype=np.float32).reshape(2, 3)
    p = tmp_path / "f.fmb"
    write_matrix(p, M, dtype="f32")
    out = read_matrix(p)
    assert out.dtype == np.dtype("<f4")
    np.testing.assert_array_equal(out, M)


@pytest.mark.parametrize("text", ["1,nan\n2,3", "1,inf\n2,3"])
def test_csv_nonfinite_rejected(tmp_path, text):
    p = tmp_path / "f.csv"
    p.write_text(text)
    with pytest.raises(ValidationError):
        load_feature_matrix(p)


def test_csv_ragged_rejected(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(ValidationError):
        load_feature_matrix(p)


def test_csv_garbage_is_parse_error(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("1,abc\n")
    with pytest.raises(ParseError):
        load_feature_matrix(p)


def test_fmb_bad_header(tmp_path):
    p = tmp_path / "f.fmb"
    p.write_bytes(b"XXXX" + bytes(17))
    with pytest.raises(ParseError):
        load_feature_matrix(p)
    p.write_bytes(struct.pack("<4sBQQ", b"FMB1", 2, 3, 2) + bytes(8))
    with pytest.raises(ParseError, match="payload"):
        load_feature_matrix(p)
    p.write_bytes(struct.pack("<4sBQQ", b"FMB1", 9, 1, 1) + bytes(8))
    with pytest.raises(ParseError, match="dtype"):
        load_feature_matrix(p)


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        load_feature_matrix(tmp_path / "nope.csv")


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-1e300, 1e300, allow_nan=False)))
def test_fmb_roundtrip_bit_exact(tmp_path_factory, M):
    p = tmp_path_factory.mktemp("rt") / "m.fmb"
    write_matrix(p, M)
    out = load_feature_matrix(p)
    assert out.tobytes() == np.ascontiguousarray(M).tobytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_csv_roundtrip(tmp_path_factory, M):
    p = tmp_path_factory.mktemp("rt") / "m.csv"
    write_matrix(p, M)
    np.testing.assert_allclose(load_feature_matrix(p), M, rtol=0, atol=1e-12)


def test_labels_first_appearance(tmp_path):
    p = tmp_path / "y.txt"
    p.write_text("7\n7\n3\n7")
    lv = load_labels(p)
    assert lv.labels.tolist() == [0, 0, 1, 0]
    assert lv.n_classes == 2
    assert lv.classes == (7, 3)


def test_labels_identity(tmp_path):
    p = tmp_path / "y.txt"
    p.write_text("0\n1\n2\n")
    lv = load_labels(p)
    assert lv.labels.tolist() == [0, 1, 2] and lv.n_classes == 3


def test_labels_empty(tmp_path):
    p = tmp_path / "y.txt"
    p.write_text("")
    with pytest.raises(ValidationError):
        load_labels(p)


def test_labels_flb_roundtrip(tmp_path):
    y = np.array([4, 4, 9, 0, 9])
    p = tmp_path / "y.flb"
    write_labels(p, y)
    assert p.read_bytes()[:4] == b"FLB1"
    assert load_labels(p).labels.tolist() == [0, 0, 1, 2, 1]


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=30))
def test_label_remap_idempotent(raw):
    once = encode_labels(raw)
    twice = encode_labels(once.labels)
    assert once.labels.tolist() == twice.labels.tolist()
    assert set(once.labels.tolist()) == set(range(once.n_classes))
    # order-stable: first occurrence of code k precedes first occurrence of k+1
    firsts = [once.labels.tolist().index(k) for k in range(once.n_classes)]
    assert firsts == sorted(firsts)


def test_softpred_validation():
    P = np.array([[0.5, 0.5], [0.2, 0.8 + 5e-7]])
    out = validate_soft_predictions(P)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-15)
    with pytest.raises(ValidationError):
        validate_soft_predictions([[0.5, 0.6]])
    with pytest.raises(ValidationError):
        validate_soft_predictions([[-0.1, 1.1]])


def test_softpred_file(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("0.25,0.75\n1,0\n")
    np.testing.assert_allclose(load_soft_predictions(p), [[0.25, 0.75], [1, 0]])


def _write_manifest(path, rows):
    path.write_text("\n".join(["\t".join(MANIFEST_COLUMNS)] + ["\t".join(r) for r in rows]) + "\n")


def test_manifest_rows(tmp_path):
    rows = [(f"t{i}", f"f{i}.fmb", f"y{i}.flb", "-", "0.5", "3") for i in range(50)]
    _write_manifest(tmp_path / "m.tsv", rows)
    recs = load_task_bundle(tmp_path / "m.tsv")
    assert len(recs) == 50
    assert recs[0].softpred is None and recs[0].num_classes == 3
    assert recs[0].features == tmp_path / "f0.fmb"


def test_manifest_missing_accuracy_column(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("id\tfeatures\tlabels\tsoftpred\tnum_classes\nt0\tf\ty\t-\t2\n")
    with pytest.raises(MissingFieldError):
        load_task_bundle(p)


def test_manifest_missing_accuracy_value(tmp_path):
    p = tmp_path / "m.tsv"
    _write_manifest(p, [("t0", "f", "y", "-", "", "2")])
    with pytest.raises(MissingFieldError):
        load_task_bundle(p)


def test_manifest_duplicate_ids(tmp_path):
    p = tmp_path / "m.tsv"
    _write_manifest(p, [("t0", "f", "y", "-", "0.5", "2"), ("t0", "g", "z", "-", "0.6", "2")])
    with pytest.raises(ValidationError, match="duplicate"):
        load_task_bundle(p)


def test_manifest_accuracy_range(tmp_path):
    p = tmp_path / "m.tsv"
    _write_manifest(p, [("t0", "f", "y", "-", "1.5", "2")])
    with pytest.raises(ValidationError):
        load_task_bundle(p)


def test_manifest_roundtrip(tmp_path):
    recs = [
        TaskRecord(id="a", features=tmp_path / "a.fmb", labels=tmp_path / "a.flb", accuracy=0.25, softpred=tmp_path / "a.s.fmb", num_classes=4),
        TaskRecord(id="b", features=tmp_path / "b.fmb", labels=tmp_path / "b.flb", accuracy=0.75, num_classes=None),
    ]
    write_task_bundle(tmp_path / "m.tsv", recs)
    assert load_task_bundle(tmp_path / "m.tsv") == recs
