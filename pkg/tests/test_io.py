import numpy as np
import pytest

from stochattn import metrics as mt
from stochattn import params_io as pio
from stochattn.errors import ConfigError, DataValidationError, IntegrityError


# ---------------------------------------------------------------- metrics

def test_record_round_trip_all_fields():
    rec = mt.MetricsRecord(step=17, split="train", seed=3, nll=0.1, kl=1e-300,
                           l2=np.nextafter(2.0, 3.0), total=1.23456789012345678,
                           kl_weight=0.5, accuracy=0.875, pavpu=0.75, wall_ms=12.5)
    back = mt.MetricsRecord.from_json(rec.to_json())
    assert back == rec  # dataclass equality: every float bit-identical


def test_record_optional_fields_stay_absent():
    rec = mt.MetricsRecord(step=0, split="val", seed=0, total=2.0, accuracy=0.5)
    doc = rec.to_json()
    assert "pavpu" not in doc and "wall_ms" not in doc
    back = mt.MetricsRecord.from_json(doc)
    assert back.pavpu is None and back.nll is None
    assert back == rec


def test_record_rejects_unknown_field():
    with pytest.raises(ConfigError, match="loss"):
        mt.MetricsRecord.from_json('{"step": 0, "split": "val", "seed": 0, "loss": 1.0}')


def test_record_rejects_bad_split():
    with pytest.raises(ConfigError, match="split"):
        mt.MetricsRecord(step=0, split="holdout", seed=0)


def test_jsonl_write_read_append(tmp_path):
    path = tmp_path / "metrics.jsonl"
    records = [mt.MetricsRecord(step=i, split="train", seed=0, total=float(i) / 7)
               for i in range(5)]
    mt.write_records(path, records[:3])
    mt.append_record(path, records[3])
    mt.append_record(path, records[4])
    assert mt.read_records(path) == records


def test_jsonl_deterministic_bytes(tmp_path):
    records = [mt.MetricsRecord(step=i, split="val", seed=1, total=0.1 * i,
                                accuracy=1.0 - 0.01 * i) for i in range(4)]
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    mt.write_records(a, records)
    mt.write_records(b, records)
    assert a.read_bytes() == b.read_bytes()


# ----------------------------------------------------------------- params

def _arrays():
    rng = np.random.default_rng(0)
    return {
        "l1.h0.w": rng.normal(size=(5, 4)),
        "l1.h0.a_src": rng.normal(size=(4, 1)),
        "bias": np.array(0.1),
        "empty_axis": np.zeros((0, 3)),
    }


def test_params_round_trip_exact(tmp_path):
    path = tmp_path / "params.bin"
    arrays = _arrays()
    pio.save_params(path, arrays)
    back = pio.load_params(path)
    assert list(back) == list(arrays)  # order preserved
    for name in arrays:
        np.testing.assert_array_equal(back[name], arrays[name])
        assert back[name].shape == arrays[name].shape


def test_params_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    pio.save_params(a, _arrays())
    pio.save_params(b, _arrays())
    assert a.read_bytes() == b.read_bytes()


def test_params_checksum_tamper(tmp_path):
    path = tmp_path / "params.bin"
    pio.save_params(path, _arrays())
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError, match="checksum"):
        pio.load_params(path)


def test_params_truncated_blob(tmp_path):
    path = tmp_path / "params.bin"
    pio.save_params(path, _arrays())
    raw = path.read_bytes()
    header_end = raw.index(b"\n") + 1
    # keep the header but drop half the blob, then fix the digest to match
    import hashlib
    import json
    header = json.loads(raw[:header_end])
    blob = raw[header_end:len(raw) - 16]
    header["sha256"] = hashlib.sha256(blob).hexdigest()
    path.write_bytes(json.dumps(header, sort_keys=True).encode() + b"\n" + blob)
    with pytest.raises(DataValidationError, match="shorter"):
        pio.load_params(path)


def test_params_wrong_format(tmp_path):
    path = tmp_path / "params.bin"
    path.write_bytes(b'{"format": "other"}\n')
    with pytest.raises(DataValidationError, match="container"):
        pio.load_params(path)
    path.write_bytes(b"\x00\x01binary garbage")
    with pytest.raises(DataValidationError):
        pio.load_params(path)


def test_params_from_model_round_trip(tmp_path):
    from stochattn import models as md
    data = md.generate_synthetic(
        md.SyntheticTaskConfig(train_count=4, val_count=2, test_count=2), seed=0)
    model = md.SyntheticModel(data, md.SyntheticModelConfig(), seed=1)
    snap = {name: p.data for name, p in model.parameters().items()}
    path = tmp_path / "model.bin"
    pio.save_params(path, snap)
    model.load(pio.load_params(path))
    for name, p in model.parameters().items():
        np.testing.assert_array_equal(p.data, snap[name])
