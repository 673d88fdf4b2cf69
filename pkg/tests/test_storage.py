import json

import numpy as np
import pytest

from petkin import (
    DynamicImage,
    FengAif,
    KineticParams,
    ValidationError,
    forward_volume,
    make_schedule,
)
from petkin.kinetics import ParametricMaps
from petkin.storage import (
    VolumeHeader,
    read_dynamic,
    read_labels,
    read_maps,
    read_scalar,
    read_volume,
    write_dynamic,
    write_labels,
    write_maps,
    write_scalar,
    write_volume,
)

SCHEDULE = make_schedule([(2, 10)])


def small_image():
    values = np.arange(2 * 1 * 1 * 1, dtype=np.float64).reshape(2, 1, 1, 1)
    return DynamicImage(schedule=SCHEDULE, values=values)


def test_dynamic_round_trip_bit_exact(tmp_path):
    img = small_image()
    write_dynamic(tmp_path / "vol", img)
    back = read_dynamic(tmp_path / "vol")
    assert np.array_equal(back.values, img.values)
    assert np.array_equal(back.schedule.frame_start, img.schedule.frame_start)
    # writing the read-back volume reproduces the payload bytes
    write_dynamic(tmp_path / "vol2", back)
    assert (tmp_path / "vol" / "data.f32").read_bytes() == (tmp_path / "vol2" / "data.f32").read_bytes()


def test_payload_size_is_4_bytes_per_value(tmp_path):
    img = small_image()
    write_dynamic(tmp_path / "vol", img)
    n = int(np.prod((2, 1, 1, 1)))
    assert (tmp_path / "vol" / "data.f32").stat().st_size == 4 * n


def test_reordered_channels_rejected(tmp_path):
    maps = ParametricMaps(data=np.zeros((4, 2, 2, 2)), mask=np.zeros((2, 2, 2), bool))
    write_maps(tmp_path / "maps", maps)
    meta = json.loads((tmp_path / "maps" / "meta.json").read_text())
    meta["channels"] = ["K1", "k2", "Vb", "k3"]
    (tmp_path / "maps" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ValidationError, match="channel"):
        read_volume(tmp_path / "maps")


def test_truncated_payload_names_byte_counts(tmp_path):
    img = small_image()
    write_dynamic(tmp_path / "vol", img)
    raw = tmp_path / "vol" / "data.f32"
    raw.write_bytes(raw.read_bytes()[:-2])
    with pytest.raises(ValidationError, match=r"expected 8 bytes, got 6"):
        read_volume(tmp_path / "vol")


def test_frame_count_mismatch_rejected(tmp_path):
    img = small_image()
    write_dynamic(tmp_path / "vol", img)
    meta = json.loads((tmp_path / "vol" / "meta.json").read_text())
    meta["dims"][0] = 3
    (tmp_path / "vol" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ValidationError):
        read_volume(tmp_path / "vol")


def test_nonfinite_payload_rejected(tmp_path):
    img = small_image()
    write_dynamic(tmp_path / "vol", img)
    bad = np.array([1.0, np.inf], dtype="<f4")
    (tmp_path / "vol" / "data.f32").write_bytes(bad.tobytes())
    with pytest.raises(ValidationError, match="non-finite"):
        read_volume(tmp_path / "vol")


def test_magic_mismatch_rejected(tmp_path):
    img = small_image()
    write_dynamic(tmp_path / "vol", img)
    meta = json.loads((tmp_path / "vol" / "meta.json").read_text())
    meta["magic"] = "NOTPET"
    (tmp_path / "vol" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ValidationError, match="magic"):
        read_volume(tmp_path / "vol")


def test_length_mismatch_on_write(tmp_path):
    header = VolumeHeader(kind="labels", dims=(1, 2, 2, 2))
    with pytest.raises(ValidationError, match="length"):
        write_volume(tmp_path / "bad", header, np.zeros(5))


def test_phantom_round_trip(tmp_path):
    from petkin import build_phantom, default_mouse_spec

    s = make_schedule([(1, 30), (4, 5)])
    ph = build_phantom(default_mouse_spec(dims=(10, 10, 10)), s)
    img = forward_volume(ph.maps, FengAif(), s, dt=0.5)
    write_dynamic(tmp_path / "img", img)
    back = read_dynamic(tmp_path / "img")
    assert np.array_equal(back.values, img.values.astype(np.float32).astype(np.float64))
    write_maps(tmp_path / "maps", ph.maps)
    maps_back = read_maps(tmp_path / "maps")
    assert np.array_equal(maps_back.data, ph.maps.data.astype(np.float32).astype(np.float64))
    write_labels(tmp_path / "labels", ph.labels)
    assert np.array_equal(read_labels(tmp_path / "labels"), ph.labels)


def test_scalar_round_trip(tmp_path):
    vol = np.linspace(0, 1, 8).reshape(2, 2, 2)
    write_scalar(tmp_path / "ki", "Ki", vol, units="1/min")
    name, back = read_scalar(tmp_path / "ki")
    assert name == "Ki"
    assert back == pytest.approx(vol, abs=1e-7)


def test_missing_directory(tmp_path):
    with pytest.raises(ValidationError):
        read_volume(tmp_path / "nope")
