import json

import numpy as np
import pytest

from telextile.dataset import (
    ChecksumMismatchError,
    DatasetFormatError,
    DatasetManifest,
    MANIFEST_NAME,
    MissingFrameError,
    SampleEntry,
    SessionEntry,
    ShapeMismatchError,
    TENSOR_NAME,
    desk_manifest,
    load_dataset,
    save_dataset,
    session_seed,
    split_session,
    synthesize_dataset,
    synthetic_manifest,
)


# ---------------------------------------------------------------------------
# manifests


def test_synthetic_manifest_shape_and_determinism(tiny_manifest):
    assert len(tiny_manifest.samples) == 3
    assert len(tiny_manifest.sessions) == 3
    again = synthetic_manifest(n_samples=3, seed=7)
    assert again.samples == tiny_manifest.samples


def test_every_fourth_sample_is_a_close_variant():
    m = synthetic_manifest(n_samples=8, seed=0)
    assert m.samples[3].display_name.startswith("variant-")
    assert m.samples[7].display_name.startswith("variant-")
    base, var = m.samples[2].spec, m.samples[3].spec
    assert 0.9 < var.weave_period_u / base.weave_period_u < 1.1
    assert var.stiffness_relief == base.stiffness_relief


def test_desk_manifest_is_twelve_samples():
    m = desk_manifest()
    assert len(m.samples) == 12
    assert all(s.jig for s in m.sessions)
    assert not any(s.jig for s in desk_manifest(jig=False).sessions)


def test_manifest_rejects_duplicates_and_orphans():
    s = SampleEntry(sample_id="a", spec=desk_manifest().samples[0].spec,
                    display_name="a")
    with pytest.raises(ValueError):
        DatasetManifest(samples=(s, s), sessions=())
    with pytest.raises(ValueError):
        DatasetManifest(samples=(s,),
                        sessions=(SessionEntry("missing", "p00", True),))
    sess = SessionEntry("a", "p00", True)
    with pytest.raises(ValueError):
        DatasetManifest(samples=(s,), sessions=(sess, sess))


def test_session_seed_is_stable_and_distinct():
    assert session_seed(0, 1) == session_seed(0, 1)
    assert session_seed(0, 1) != session_seed(0, 2)
    assert session_seed(0, 1) != session_seed(1, 1)


# ---------------------------------------------------------------------------
# synthesis and splitting


def test_synthesize_dataset_aligns_with_sessions(tiny_manifest, tiny_frames):
    assert len(tiny_frames) == len(tiny_manifest.sessions)
    for sess, frames in zip(tiny_manifest.sessions, tiny_frames):
        assert all(f.sample_id == sess.sample_id for f in frames)
        assert len(frames) == 12
        assert frames[0].pixels.shape == (24, 24, 3)


def test_synthesize_dataset_deterministic(tiny_manifest, tiny_frames):
    again = synthesize_dataset(tiny_manifest, seed=7, frames_per_sample=12,
                               frame_size=24)
    for a, b in zip(tiny_frames, again):
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.pixels, fb.pixels)


def test_split_session_is_chronological(tiny_frames):
    frames = tiny_frames[0]
    train, test = split_session(frames, 9)
    assert len(train) == 9 and len(test) == 3
    assert [f.frame_index for f in train] == list(range(9))
    assert [f.frame_index for f in test] == [9, 10, 11]
    with pytest.raises(ValueError):
        split_session(frames, len(frames))
    with pytest.raises(ValueError):
        split_session(frames, -1)


# ---------------------------------------------------------------------------
# persistence


def _roundtrip(tmp_path, manifest, frames, storage):
    root = tmp_path / storage
    save_dataset(manifest, frames, root, storage=storage)
    loaded_manifest, loaded_frames = load_dataset(root)
    assert loaded_manifest.samples == manifest.samples
    for orig_sess, new_sess in zip(manifest.sessions, loaded_manifest.sessions):
        assert (orig_sess.sample_id, orig_sess.participant_id, orig_sess.jig) == (
            new_sess.sample_id, new_sess.participant_id, new_sess.jig)
    for orig, new in zip(frames, loaded_frames):
        for fo, fn in zip(orig, new):
            assert fn.pixels.dtype == np.float32
            assert np.array_equal(fo.pixels, fn.pixels)
    return root


def test_png_roundtrip_bit_exact(tmp_path, tiny_manifest, tiny_frames):
    # frames are already quantized to the 8-bit grid, so png storage is lossless
    _roundtrip(tmp_path, tiny_manifest, tiny_frames, "png")


def test_bin_roundtrip_bit_exact(tmp_path, tiny_manifest, tiny_frames):
    _roundtrip(tmp_path, tiny_manifest, tiny_frames, "bin")


def test_load_missing_manifest(tmp_path):
    with pytest.raises(MissingFrameError):
        load_dataset(tmp_path / "nowhere")


def test_load_rejects_invalid_json(tmp_path, tiny_manifest, tiny_frames):
    root = _roundtrip(tmp_path, tiny_manifest, tiny_frames, "png")
    (root / MANIFEST_NAME).write_text("{not json", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        load_dataset(root)


def test_load_rejects_wrong_format_and_version(tmp_path, tiny_manifest, tiny_frames):
    root = _roundtrip(tmp_path, tiny_manifest, tiny_frames, "png")
    doc = json.loads((root / MANIFEST_NAME).read_text())
    for patch in ({"format": "something-else"}, {"version": 99}, {"storage": "tar"}):
        bad = {**doc, **patch}
        (root / MANIFEST_NAME).write_text(json.dumps(bad), encoding="utf-8")
        with pytest.raises(DatasetFormatError):
            load_dataset(root)


def test_load_reports_missing_frame_file(tmp_path, tiny_manifest, tiny_frames):
    root = _roundtrip(tmp_path, tiny_manifest, tiny_frames, "png")
    victim = next((root / "frames").rglob("*.png"))
    victim.unlink()
    with pytest.raises(MissingFrameError) as err:
        load_dataset(root)
    assert "missing frame file" in str(err.value)


def test_load_detects_truncated_tensor(tmp_path, tiny_manifest, tiny_frames):
    root = _roundtrip(tmp_path, tiny_manifest, tiny_frames, "bin")
    blob = (root / TENSOR_NAME).read_bytes()
    (root / TENSOR_NAME).write_bytes(blob[:-8])
    with pytest.raises(ShapeMismatchError):
        load_dataset(root)


def test_load_detects_corrupted_payload(tmp_path, tiny_manifest, tiny_frames):
    root = _roundtrip(tmp_path, tiny_manifest, tiny_frames, "bin")
    blob = bytearray((root / TENSOR_NAME).read_bytes())
    blob[40] ^= 0xFF  # flip a payload byte without changing the length
    (root / TENSOR_NAME).write_bytes(bytes(blob))
    with pytest.raises(ChecksumMismatchError):
        load_dataset(root)


def test_load_detects_bad_magic(tmp_path, tiny_manifest, tiny_frames):
    root = _roundtrip(tmp_path, tiny_manifest, tiny_frames, "bin")
    blob = bytearray((root / TENSOR_NAME).read_bytes())
    blob[:4] = b"XXXX"
    (root / TENSOR_NAME).write_bytes(bytes(blob))
    with pytest.raises(DatasetFormatError):
        load_dataset(root)


def test_load_detects_missing_tensor(tmp_path, tiny_manifest, tiny_frames):
    root = _roundtrip(tmp_path, tiny_manifest, tiny_frames, "bin")
    (root / TENSOR_NAME).unlink()
    with pytest.raises(MissingFrameError):
        load_dataset(root)


def test_load_detects_out_of_range_session(tmp_path, tiny_manifest, tiny_frames):
    root = _roundtrip(tmp_path, tiny_manifest, tiny_frames, "bin")
    doc = json.loads((root / MANIFEST_NAME).read_text())
    doc["sessions"][0]["frame_count"] = 10_000
    (root / MANIFEST_NAME).write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(ShapeMismatchError):
        load_dataset(root)


def test_save_rejects_misaligned_frames(tmp_path, tiny_manifest, tiny_frames):
    with pytest.raises(ValueError):
        save_dataset(tiny_manifest, tiny_frames[:-1], tmp_path / "x")
    with pytest.raises(ValueError):
        save_dataset(tiny_manifest, tiny_frames, tmp_path / "y", storage="zip")
