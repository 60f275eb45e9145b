import struct

import numpy as np
import pytest
from conftest import toy_dan, toy_lstm

from embcompress.modelfile import (ModelFileError, deserialize, embedding_payload_bytes,
                                   load_model, payload_bytes, reference_payload_bytes,
                                   save_model, serialize)
from embcompress.models import DanModel
from embcompress.quantize import QuantizedModel, quantize_model


def _params_equal(a, b):
    assert list(a.params) == list(b.params)
    for name in a.params:
        assert a.params[name].shape == b.params[name].shape
        assert a.params[name].tobytes() == b.params[name].tobytes()


@pytest.mark.parametrize("make", [toy_dan, toy_lstm])
@pytest.mark.parametrize("factorized", [False, True])
def test_full_precision_roundtrip(make, factorized, tmp_path):
    model = make(factorized)
    size = save_model(tmp_path / "m.emsq", model)
    assert size == (tmp_path / "m.emsq").stat().st_size
    back = load_model(tmp_path / "m.emsq")
    assert type(back) is type(model)
    _params_equal(model, back)
    assert serialize(back) == serialize(model)


@pytest.mark.parametrize("bits", [8, 16])
def test_quantized_roundtrip(bits):
    q = quantize_model(toy_lstm(True), bits)
    back = deserialize(serialize(q))
    assert isinstance(back, QuantizedModel) and back.bits == bits and back.kind == "lstm"
    for name, t in q.tensors.items():
        b = back.tensors[name]
        assert (b.rows, b.cols, b.scale) == (t.rows, t.cols, t.scale)
        assert np.array_equal(b.codes, t.codes) and b.codes.dtype == t.codes.dtype
    assert back.shapes == q.shapes
    assert serialize(back) == serialize(q)


def test_byte_layout_oracle():
    params = {"embedding": np.array([[1.0, 2.0]]), "fc1.w": np.zeros((2, 1)),
              "fc1.b": np.array([0.5]), "fc2.w": np.zeros((1, 1)), "fc2.b": np.zeros(1),
              "out.w": np.zeros((1, 2)), "out.b": np.array([-1.0, 1.0])}
    blob = serialize(DanModel(params))
    want = b"EMSQ" + struct.pack("<HBI", 1, 0, 7)
    for name, w in params.items():
        w2 = w.reshape(1, -1) if w.ndim == 1 else w
        want += struct.pack("<H", len(name)) + name.encode()
        want += struct.pack("<BII", 0, *w2.shape) + w2.astype("<f8").tobytes()
    assert blob == want

    q = quantize_model(DanModel(params), 8)
    qblob = serialize(q)
    head = b"EMSQ" + struct.pack("<HBI", 1, 0, 7) + struct.pack("<H", 9) + b"embedding"
    assert qblob.startswith(head + struct.pack("<BIId", 1, 1, 2, 2.0 / 127) + bytes([64, 127]))


def test_corrupt_files():
    blob = serialize(toy_dan())
    with pytest.raises(ModelFileError, match="magic"):
        deserialize(b"XXXX" + blob[4:])
    with pytest.raises(ModelFileError, match="truncated"):
        deserialize(blob[:-3])
    with pytest.raises(ModelFileError, match="trailing"):
        deserialize(blob + b"\0")
    with pytest.raises(ModelFileError, match="version"):
        deserialize(blob[:4] + struct.pack("<H", 9) + blob[6:])
    with pytest.raises(ModelFileError, match="kind"):
        deserialize(blob[:6] + bytes([7]) + blob[7:])


def test_payload_accounting():
    model = toy_dan(factorized=True)
    assert payload_bytes(model) == 8 * model.num_params()
    emb = model.params["embedding"].size + model.params["w_b"].size
    assert embedding_payload_bytes(model) == 8 * emb
    q8 = quantize_model(model, 8)
    assert payload_bytes(q8) == model.num_params()
    assert reference_payload_bytes(q8, 32) == 4 * model.num_params()
    assert reference_payload_bytes(model, 32) == 4 * model.num_params()
    assert payload_bytes(q8) * 4 == reference_payload_bytes(q8, 32)
