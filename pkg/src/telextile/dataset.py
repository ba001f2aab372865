"""Dataset manifest and on-disk persistence for tactile capture sessions.

Layout under a dataset root:

    <root>/manifest.json
    <root>/frames/<sample>/<participant>/<index>.png    (storage "png")
    <root>/frames.bin                                   (storage "bin")

``frames.bin`` is raw little-endian float32 with an 16-byte header:
magic ``TXF1``, u32 frame count, u32 height, u32 width.  Both storages
round-trip pixels bit-exactly because frames live on the sensor's 8-bit
intensity grid.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .textures import (
    AcquisitionConfig,
    TactileFrame,
    TextureSpec,
    simulate_acquisition,
    unit_from_u8,
)

MANIFEST_NAME = "manifest.json"
TENSOR_NAME = "frames.bin"
TENSOR_MAGIC = b"TXF1"
_MANIFEST_FORMAT = "telextile-dataset"
_MANIFEST_VERSION = 1


class DatasetError(Exception):
    """Base class for dataset persistence failures."""


class DatasetFormatError(DatasetError):
    """Manifest or tensor file is structurally invalid."""


class MissingFrameError(DatasetError):
    """A referenced frame file (or the tensor file) does not exist."""


class ShapeMismatchError(DatasetError):
    """Tensor payload does not match the frame count/shape in its header."""


class ChecksumMismatchError(DatasetError):
    """Tensor payload does not hash to the checksum recorded at save time."""


@dataclass(frozen=True)
class SampleEntry:
    sample_id: str
    spec: TextureSpec
    display_name: str


@dataclass(frozen=True)
class SessionEntry:
    sample_id: str
    participant_id: str
    jig: bool
    # Filled in by save/load; ignored when comparing manifests.
    frame_files: tuple[str, ...] | None = field(default=None, compare=False)


@dataclass(frozen=True)
class DatasetManifest:
    samples: tuple[SampleEntry, ...]
    sessions: tuple[SessionEntry, ...]

    def __post_init__(self):
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("sample_ids must be unique")
        known = set(ids)
        keys = set()
        for sess in self.sessions:
            if sess.sample_id not in known:
                raise ValueError(f"session references unknown sample {sess.sample_id!r}")
            key = (sess.sample_id, sess.participant_id)
            if key in keys:
                raise ValueError(f"duplicate session {key}")
            keys.add(key)

    def sample(self, sample_id: str) -> SampleEntry:
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise KeyError(sample_id)


def synthetic_manifest(
    n_samples: int = 119,
    seed: int = 0,
    jig: bool = True,
    participants: tuple[str, ...] = ("p00",),
) -> DatasetManifest:
    """Build a manifest of procedurally varied textile recipes.

    Every fourth sample is a close variant of its predecessor so the set
    contains genuinely confusable neighbors, not just well-separated
    textures.
    """
    rng = np.random.default_rng(seed)
    samples = []
    prev: TextureSpec | None = None
    for i in range(n_samples):
        if prev is not None and i % 4 == 3:
            spec = TextureSpec(
                weave_period_u=prev.weave_period_u * float(rng.uniform(0.92, 1.08)),
                weave_period_v=prev.weave_period_v * float(rng.uniform(0.92, 1.08)),
                yarn_thickness=float(np.clip(prev.yarn_thickness + rng.uniform(-0.05, 0.05), 0.2, 0.8)),
                fuzz_amplitude=float(np.clip(prev.fuzz_amplitude + rng.uniform(-0.05, 0.05), 0.0, 1.0)),
                stiffness_relief=prev.stiffness_relief,
                rng_seed=1000 + i,
            )
            name = f"variant-weave-{i:03d}"
        else:
            spec = TextureSpec(
                weave_period_u=float(np.exp(rng.uniform(np.log(3.0), np.log(14.0)))),
                weave_period_v=float(np.exp(rng.uniform(np.log(3.0), np.log(14.0)))),
                yarn_thickness=float(rng.uniform(0.3, 0.75)),
                fuzz_amplitude=float(rng.uniform(0.0, 0.6)),
                stiffness_relief=float(rng.uniform(0.1, 0.9)),
                rng_seed=1000 + i,
            )
            name = f"weave-{i:03d}"
        prev = spec
        samples.append(SampleEntry(sample_id=f"s{i:03d}", spec=spec, display_name=name))

    sessions = tuple(
        SessionEntry(sample_id=s.sample_id, participant_id=p, jig=jig)
        for s in samples
        for p in participants
    )
    return DatasetManifest(samples=tuple(samples), sessions=sessions)


def desk_manifest(seed: int = 0, jig: bool = True) -> DatasetManifest:
    """The 12-sample desk-scale manifest used throughout the test bench."""
    return synthetic_manifest(n_samples=12, seed=seed, jig=jig)


def session_seed(base_seed: int, session_index: int) -> int:
    """Stable per-session seed derived from a dataset-level seed."""
    return int(np.random.SeedSequence([base_seed, session_index]).generate_state(1)[0])


def synthesize_dataset(
    manifest: DatasetManifest,
    seed: int = 0,
    frames_per_sample: int = 150,
    frame_size: int = 64,
) -> list[list[TactileFrame]]:
    """Render every session in the manifest; returns one frame list per
    session, aligned with ``manifest.sessions``."""
    frames = []
    for i, sess in enumerate(manifest.sessions):
        if sess.jig:
            cfg = AcquisitionConfig.jig_default(
                frames_per_sample=frames_per_sample,
                duration=frames_per_sample / 60.0,
                frame_height=frame_size,
                frame_width=frame_size,
            )
        else:
            cfg = AcquisitionConfig.handheld_default(
                frames_per_sample=frames_per_sample,
                duration=frames_per_sample / 60.0,
                frame_height=frame_size,
                frame_width=frame_size,
            )
        spec = manifest.sample(sess.sample_id).spec
        frames.append(
            simulate_acquisition(spec, cfg, session_seed(seed, i), sample_id=sess.sample_id)
        )
    return frames


def split_session(
    frames: list[TactileFrame], train_count: int
) -> tuple[list[TactileFrame], list[TactileFrame]]:
    """Chronological split: the first ``train_count`` frames train, the rest
    test.  No shuffling."""
    if not 0 <= train_count < len(frames):
        raise ValueError(
            f"train_count must be in [0, {len(frames)}), got {train_count}"
        )
    return frames[:train_count], frames[train_count:]


def _frames_to_u8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(pixels, dtype=np.float64) * 255.0).astype(np.uint8)


def save_dataset(
    manifest: DatasetManifest,
    frames: list[list[TactileFrame]],
    root_path: str | Path,
    storage: str = "png",
) -> None:
    """Write manifest + frames under ``root_path``.

    ``storage`` is "png" (one image per frame) or "bin" (one raw float32
    tensor for the whole dataset; requires uniform frame dimensions).
    """
    if storage not in ("png", "bin"):
        raise ValueError(f"storage must be 'png' or 'bin', got {storage!r}")
    if len(frames) != len(manifest.sessions):
        raise ValueError(
            f"{len(frames)} frame lists for {len(manifest.sessions)} sessions"
        )
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)

    doc = {
        "format": _MANIFEST_FORMAT,
        "version": _MANIFEST_VERSION,
        "storage": storage,
        "samples": [
            {
                "sample_id": s.sample_id,
                "display_name": s.display_name,
                "spec": s.spec.to_dict(),
            }
            for s in manifest.samples
        ],
        "sessions": [],
    }

    if storage == "png":
        for sess, sess_frames in zip(manifest.sessions, frames):
            refs = []
            sess_dir = root / "frames" / sess.sample_id / sess.participant_id
            sess_dir.mkdir(parents=True, exist_ok=True)
            for fr in sess_frames:
                rel = f"frames/{sess.sample_id}/{sess.participant_id}/{fr.frame_index:03d}.png"
                Image.fromarray(_frames_to_u8(fr.pixels), mode="RGB").save(root / rel)
                refs.append(rel)
            doc["sessions"].append(
                {
                    "sample_id": sess.sample_id,
                    "participant_id": sess.participant_id,
                    "jig": sess.jig,
                    "frames": refs,
                }
            )
    else:
        all_frames = [fr for sess_frames in frames for fr in sess_frames]
        if not all_frames:
            raise ValueError("cannot save an empty dataset as a tensor file")
        h, w, _ = all_frames[0].pixels.shape
        for fr in all_frames:
            if fr.pixels.shape != (h, w, 3):
                raise ValueError("tensor storage requires uniform frame dimensions")
        stack = np.stack([fr.pixels for fr in all_frames]).astype("<f4")
        payload = stack.tobytes()
        with open(root / TENSOR_NAME, "wb") as fh:
            fh.write(TENSOR_MAGIC)
            fh.write(struct.pack("<III", len(all_frames), h, w))
            fh.write(payload)
        offset = 0
        for sess, sess_frames in zip(manifest.sessions, frames):
            doc["sessions"].append(
                {
                    "sample_id": sess.sample_id,
                    "participant_id": sess.participant_id,
                    "jig": sess.jig,
                    "frame_offset": offset,
                    "frame_count": len(sess_frames),
                }
            )
            offset += len(sess_frames)
        doc["checksum_adler32"] = zlib.adler32(payload)

    with open(root / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def load_dataset(
    root_path: str | Path,
) -> tuple[DatasetManifest, list[list[TactileFrame]]]:
    """Load a dataset saved by :func:`save_dataset`; frame lists are aligned
    with ``manifest.sessions``."""
    root = Path(root_path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise MissingFrameError(f"no {MANIFEST_NAME} under {root}")
    with open(manifest_path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"manifest is not valid JSON: {exc}") from exc

    if doc.get("format") != _MANIFEST_FORMAT:
        raise DatasetFormatError(f"unrecognized manifest format {doc.get('format')!r}")
    if doc.get("version") != _MANIFEST_VERSION:
        raise DatasetFormatError(f"unsupported manifest version {doc.get('version')!r}")
    storage = doc.get("storage")
    if storage not in ("png", "bin"):
        raise DatasetFormatError(f"unknown storage {storage!r}")

    samples = tuple(
        SampleEntry(
            sample_id=s["sample_id"],
            spec=TextureSpec.from_dict(s["spec"]),
            display_name=s["display_name"],
        )
        for s in doc["samples"]
    )

    frames: list[list[TactileFrame]] = []
    sessions = []

    if storage == "png":
        for s in doc["sessions"]:
            refs = tuple(s["frames"])
            sess = SessionEntry(
                sample_id=s["sample_id"],
                participant_id=s["participant_id"],
                jig=s["jig"],
                frame_files=refs,
            )
            sess_frames = []
            for idx, rel in enumerate(refs):
                path = root / rel
                if not path.exists():
                    raise MissingFrameError(
                        f"session {sess.sample_id}/{sess.participant_id}: "
                        f"missing frame file {rel}"
                    )
                raw = np.asarray(Image.open(path).convert("RGB"))
                sess_frames.append(
                    TactileFrame(
                        sample_id=sess.sample_id,
                        frame_index=idx,
                        pixels=unit_from_u8(raw),
                    )
                )
            sessions.append(sess)
            frames.append(sess_frames)
    else:
        tensor_path = root / TENSOR_NAME
        if not tensor_path.exists():
            raise MissingFrameError(f"missing tensor file {TENSOR_NAME}")
        blob = tensor_path.read_bytes()
        if len(blob) < 16 or blob[:4] != TENSOR_MAGIC:
            raise DatasetFormatError(f"bad tensor magic in {TENSOR_NAME}")
        n, h, w = struct.unpack("<III", blob[4:16])
        payload = blob[16:]
        expected = n * h * w * 3 * 4
        if len(payload) != expected:
            raise ShapeMismatchError(
                f"tensor payload holds {len(payload)} bytes, header implies {expected} "
                f"({n} frames of {h}x{w}x3 float32)"
            )
        recorded = doc.get("checksum_adler32")
        if recorded is not None and zlib.adler32(payload) != recorded:
            raise ChecksumMismatchError("tensor payload fails its recorded checksum")
        stack = np.frombuffer(payload, dtype="<f4").reshape(n, h, w, 3)

        for s in doc["sessions"]:
            off, count = s["frame_offset"], s["frame_count"]
            if off < 0 or off + count > n:
                raise ShapeMismatchError(
                    f"session {s['sample_id']}/{s['participant_id']} frame range "
                    f"[{off}, {off + count}) exceeds tensor of {n} frames"
                )
            sess = SessionEntry(
                sample_id=s["sample_id"],
                participant_id=s["participant_id"],
                jig=s["jig"],
            )
            sessions.append(sess)
            frames.append(
                [
                    TactileFrame(
                        sample_id=sess.sample_id,
                        frame_index=i,
                        pixels=stack[off + i].copy(),
                    )
                    for i in range(count)
                ]
            )

    return DatasetManifest(samples=samples, sessions=tuple(sessions)), frames
