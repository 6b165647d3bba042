import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sfuda.data import Dataset, ShiftSpec, apply_shift, gen_blobs, load_dataset, save_dataset, shifted_blobs
from sfuda.errors import InvalidInput, ParseError
from sfuda.model import predict_with_entropy, pretrain_source


def test_blob_balance_and_determinism():
    a = gen_blobs(4, 25, 3, 0.5, seed=1)
    b = gen_blobs(4, 25, 3, 0.5, seed=1)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.bincount(a.labels).tolist() == [25] * 4
    assert a.domain == "source"


def test_zero_spread_hits_centres():
    ds = gen_blobs(4, 3, 2, 0.0, seed=0)
    np.testing.assert_allclose(ds.inputs[ds.labels == 1], [[0, 4]] * 3, atol=1e-12)


@pytest.mark.parametrize("args", [(1, 5, 2, 0.1), (2, 0, 2, 0.1), (2, 5, 1, 0.1), (2, 5, 2, -1)])
def test_gen_blobs_invalid(args):
    with pytest.raises(InvalidInput):
        gen_blobs(*args, seed=0)


def test_identity_shift():
    src = gen_blobs(3, 5, 4, 0.5, seed=2)
    tgt = apply_shift(src, ShiftSpec(), seed=0)
    assert np.array_equal(tgt.inputs, src.inputs) and tgt.domain == "target"
    assert np.array_equal(tgt.labels, src.labels)


def test_pure_translation():
    src = gen_blobs(2, 5, 3, 0.5, seed=2)
    tgt = apply_shift(src, ShiftSpec(translation=(1.5, -2.0, 0.25)), seed=0)
    np.testing.assert_allclose(tgt.inputs - src.inputs, np.tile([1.5, -2.0, 0.25], (10, 1)), atol=1e-12)


def test_invalid_shift():
    with pytest.raises(InvalidInput):
        ShiftSpec(scale=0)
    with pytest.raises(InvalidInput):
        ShiftSpec(noise=-0.1)


def test_half_turn_breaks_direct_transfer():
    src = gen_blobs(2, 100, 2, 0.3, seed=0)
    model = pretrain_source(src.inputs, src.labels, 2, epochs=50, seed=0)
    tgt = apply_shift(gen_blobs(2, 100, 2, 0.3, seed=1), ShiftSpec(rotation=math.pi), seed=2)
    pred, _ = predict_with_entropy(model, tgt.inputs)
    assert np.mean(pred == tgt.labels) < 0.5


def test_standard_task_shape():
    src, tgt = shifted_blobs(0)
    assert src.inputs.shape == (600, 6) and tgt.domain == "target" and tgt.n_classes == 4


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 5), st.integers(2, 4), st.booleans(), st.data())
def test_save_load_roundtrip(tmp_path_factory, m, d, n, labelled, data):
    x = data.draw(arrays(np.float64, (m, d), elements=st.floats(-1e6, 1e6, allow_subnormal=True)))
    y = data.draw(arrays(int, m, elements=st.integers(0, n - 1))) if labelled else None
    ds = Dataset(x, y, "target", n)
    path = tmp_path_factory.mktemp("ds") / "d.jsonl"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert np.array_equal(back.inputs, ds.inputs) and back.n_classes == n and back.domain == "target"
    assert (back.labels is None) if y is None else np.array_equal(back.labels, y)


@given(st.floats(-3, 3), st.floats(0.1, 3), st.floats(0, 1))
def test_shift_preserves_count_and_labels(rot, scale, noise):
    src = gen_blobs(3, 4, 3, 0.5, seed=0)
    tgt = apply_shift(src, ShiftSpec(rotation=rot, scale=scale, noise=noise), seed=1)
    assert len(tgt) == len(src) and sorted(tgt.labels) == sorted(src.labels)


def test_truncated_line_seven(tmp_path):
    path = tmp_path / "d.jsonl"
    save_dataset(gen_blobs(2, 5, 2, 0.1, seed=0), path)
    lines = path.read_text().splitlines()
    lines[6] = lines[6][:15]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match="line 7") as info:
        load_dataset(path)
    assert info.value.line == 7


@pytest.mark.parametrize("body,line", [
    ('{"N": 2, "d_in": 2}\n', 1),
    ('{"N": 2, "d_in": 2, "m": 1}\n{"x": [1.0], "y": 0, "domain": "source"}\n', 2),
    ('{"N": 2, "d_in": 1, "m": 1}\n{"x": [1.0], "y": 1.5, "domain": "source"}\n', 2),
    ('{"N": 2, "d_in": 1, "m": 2}\n{"x": [1.0], "y": 0, "domain": "source"}\n', 2),
])
def test_malformed_files(tmp_path, body, line):
    path = tmp_path / "bad.jsonl"
    path.write_text(body)
    with pytest.raises(ParseError) as info:
        load_dataset(path)
    assert info.value.line == line


def test_unlabelled_null_accepted(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"N": 2, "d_in": 1, "m": 1}\n{"x": [0.5], "y": null, "domain": "target"}\n')
    assert load_dataset(path).labels is None
