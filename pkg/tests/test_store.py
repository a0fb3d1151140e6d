import json

import numpy as np
import pytest

from specal.core import IntegrityError, StateError
from specal.emulator import emulate_spectrum
from specal.store import SCHEMA_VERSION, ArtifactStore, load_bundle, save_bundle


def test_array_round_trip_is_bit_exact(tmp_path, rng):
    store = ArtifactStore(tmp_path)
    a = rng.standard_normal((7, 3))
    store.put_array("x/a", a)
    store.save_manifest()
    again = ArtifactStore(tmp_path).get_array("x/a")
    assert again.tobytes() == a.tobytes()
    entry = ArtifactStore(tmp_path).manifest["arrays"]["x/a"]
    assert entry["shape"] == [7, 3] and entry["nbytes"] == 7 * 3 * 8


def test_arrays_are_little_endian_row_major(tmp_path):
    store = ArtifactStore(tmp_path)
    store.put_array("m", np.array([[1.0, 2.0], [3.0, 4.0]]))
    raw = (tmp_path / "arrays" / "m.f8").read_bytes()
    assert np.array_equal(np.frombuffer(raw, dtype="<f8"), [1.0, 2.0, 3.0, 4.0])


def test_corrupt_byte_is_detected(tmp_path):
    store = ArtifactStore(tmp_path)
    store.put_array("v", np.arange(10.0))
    store.save_manifest()
    path = tmp_path / "arrays" / "v.f8"
    data = bytearray(path.read_bytes())
    data[13] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(IntegrityError):
        ArtifactStore(tmp_path).get_array("v")


def test_truncated_file_is_detected(tmp_path):
    store = ArtifactStore(tmp_path)
    store.put_array("v", np.arange(10.0))
    store.save_manifest()
    path = tmp_path / "arrays" / "v.f8"
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(IntegrityError):
        ArtifactStore(tmp_path).get_array("v")


def test_missing_file_and_missing_entry(tmp_path):
    store = ArtifactStore(tmp_path)
    store.put_array("v", np.arange(3.0))
    (tmp_path / "arrays" / "v.f8").unlink()
    with pytest.raises(IntegrityError):
        store.get_array("v")
    with pytest.raises(StateError):
        store.get_array("nothing")


def test_schema_version_mismatch(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"schema_version": SCHEMA_VERSION + 1}))
    with pytest.raises(IntegrityError):
        ArtifactStore(tmp_path)


def test_bundle_round_trip_predicts_identically(tmp_path, small_bundle, rng):
    store = ArtifactStore(tmp_path)
    save_bundle(small_bundle, store)
    loaded = load_bundle(ArtifactStore(tmp_path))
    thetas = rng.random((100, 3))
    m0, v0 = small_bundle.predict_weights(thetas)
    m1, v1 = loaded.predict_weights(thetas)
    assert m0.tobytes() == m1.tobytes() and v0.tobytes() == v1.tobytes()
    for theta in thetas[:10]:
        a, _ = emulate_spectrum(small_bundle, theta)
        b, _ = emulate_spectrum(loaded, theta)
        assert a.intensity.tobytes() == b.intensity.tobytes()
    entry = ArtifactStore(tmp_path).manifest["arrays"]["emulator/K"]
    assert entry["shape"] == list(small_bundle.basis.K.shape)


def test_load_without_bundle(tmp_path):
    with pytest.raises(StateError):
        load_bundle(ArtifactStore(tmp_path))
