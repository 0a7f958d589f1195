"""Session data model and the corpus-on-disk adapter format.

A corpus is a directory with one sub-directory per session::

    <session>/meta.json              participant_id, duration, fps, label_range
    <session>/frames/000000.png      8-bit grayscale frames, zero-padded index
    <session>/features_<mod>.csv     header ``t,f0,f1,...``
    <session>/annotations.csv        header ``t,<annotator_id>,...``

Timestamps are written with 3-decimal precision; values with round-trip
precision so that ``write_session`` followed by ``read_session`` is lossless.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CorpusFormatError

# Declared feature dimensions per corpus profile.
MODALITY_TABLE = {
    "recola": {"audio": 131, "visual": 41, "ecg": 54, "eda": 63},
    "sewa": {"audio": 65},
}
KNOWN_MODALITIES = ("audio", "visual", "ecg", "eda")

EFFECTIVE_FPS = 5
_TS_TOL = 1e-6


@dataclass(frozen=True)
class AnnotationTrace:
    annotator_id: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if ts.ndim != 1 or ts.shape != vals.shape:
            raise ValueError(f"annotator {self.annotator_id}: timestamps/values shape mismatch")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError(f"annotator {self.annotator_id}: timestamps not strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class FrameStream:
    """Grayscale frames, ``frames`` is (n, H, W) uint8."""

    frames: np.ndarray
    native_fps: float
    skip: int = 1

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3:
            raise ValueError("frames must be (n, H, W)")
        if self.skip < 1:
            raise ValueError("skip must be >= 1")
        object.__setattr__(self, "frames", frames)

    @property
    def resolution(self):
        return self.frames.shape[1], self.frames.shape[2]

    @property
    def effective_fps(self):
        return self.native_fps / self.skip

    def timestamps(self):
        return np.arange(len(self.frames)) / self.native_fps


@dataclass(frozen=True)
class FeatureStream:
    modality: str
    timestamps: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        vecs = np.asarray(self.vectors, dtype=float)
        if vecs.ndim != 2 or vecs.shape[0] != ts.shape[0]:
            raise ValueError(f"{self.modality}: vectors must be (n, dim) aligned with timestamps")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError(f"{self.modality}: timestamps not increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "vectors", vecs)

    @property
    def dim(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class Session:
    participant_id: str
    duration: float
    frame_stream: FrameStream
    feature_streams: dict[str, FeatureStream]
    annotation_traces: tuple[AnnotationTrace, ...]
    label_range: tuple[float, float] = (-1.0, 1.0)
    extra_meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "annotation_traces", tuple(self.annotation_traces))
        if not self.annotation_traces:
            raise ValueError(f"session {self.participant_id}: at least one annotation trace required")
        grid = self.annotation_traces[0].timestamps
        lo, hi = self.label_range
        for tr in self.annotation_traces:
            if tr.timestamps.shape != grid.shape or not np.allclose(tr.timestamps, grid, atol=_TS_TOL):
                raise ValueError(f"session {self.participant_id}: annotation traces do not share a grid")
            if tr.values.size and (tr.values.min() < lo - 1e-9 or tr.values.max() > hi + 1e-9):
                raise ValueError(
                    f"session {self.participant_id}: annotator {tr.annotator_id} outside {self.label_range}"
                )

    @property
    def modalities(self):
        return sorted(self.feature_streams)


# --------------------------------------------------------------------- writing


def _fmt_rows(ts, values):
    # repr-precision keeps the round trip lossless
    lines = []
    for t, row in zip(ts, values):
        lines.append(f"{t:.3f}," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def write_session(session: Session, directory, profile=None):
    """Write one session in the adapter format under ``directory``."""
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    meta = {
        "participant_id": session.participant_id,
        "duration": session.duration,
        "fps": session.frame_stream.native_fps,
        "label_range": list(session.label_range),
        "modalities": {m: s.dim for m, s in sorted(session.feature_streams.items())},
    }
    if profile:
        meta["profile"] = profile
    meta.update(session.extra_meta)
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    for i, frame in enumerate(session.frame_stream.frames):
        Image.fromarray(np.asarray(frame, dtype=np.uint8), mode="L").save(
            d / "frames" / f"{i:06d}.png", optimize=False
        )
    for name, stream in sorted(session.feature_streams.items()):
        header = "t," + ",".join(f"f{j}" for j in range(stream.dim)) + "\n"
        (d / f"features_{name}.csv").write_text(header + _fmt_rows(stream.timestamps, stream.vectors))
    traces = session.annotation_traces
    header = "t," + ",".join(tr.annotator_id for tr in traces) + "\n"
    values = np.stack([tr.values for tr in traces], axis=1)
    (d / "annotations.csv").write_text(header + _fmt_rows(traces[0].timestamps, values))


# --------------------------------------------------------------------- reading


def _read_csv(path, diagnostics, expected_cols=None):
    text = path.read_text().splitlines()
    if not text:
        diagnostics.append(f"{path}: empty file")
        return None, None
    header = text[0].split(",")
    if header[0] != "t" or len(header) < 2:
        diagnostics.append(f"{path}: header must start with 't' followed by at least one column")
        return None, None
    ncols = len(header)
    if expected_cols is not None and ncols - 1 != expected_cols:
        diagnostics.append(f"{path}: header declares {ncols - 1} columns, expected {expected_cols}")
        return None, None
    rows = []
    ok = True
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != ncols:
            diagnostics.append(f"{path}: row {lineno} has {len(parts)} columns, expected {ncols}")
            ok = False
            continue
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            diagnostics.append(f"{path}: row {lineno} has a non-numeric value")
            ok = False
    if not ok:
        return None, None
    if not rows:
        diagnostics.append(f"{path}: no data rows")
        return None, None
    arr = np.asarray(rows, dtype=float)
    return header, arr


def annotation_path(directory, dimension=None):
    """``annotations_<dimension>.csv`` when present, else ``annotations.csv``."""
    d = Path(directory)
    if dimension is not None and (d / f"annotations_{dimension}.csv").is_file():
        return d / f"annotations_{dimension}.csv"
    return d / "annotations.csv"


def read_session(directory, load_frames=True, frame_step=1, dimension=None) -> Session:
    """Read and validate one session directory.

    Raises :class:`CorpusFormatError` listing every problem found. With
    ``frame_step > 1`` only every ``frame_step``-th frame is decoded; the
    others are left as zeros (window stacking never reads them). ``dimension``
    selects a per-dimension annotation file if the session has one.
    """
    d = Path(directory)
    diags: list[str] = []
    meta_path = d / "meta.json"
    if not meta_path.is_file():
        raise CorpusFormatError([f"{meta_path}: missing"])
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorpusFormatError([f"{meta_path}: invalid JSON ({exc})"]) from None
    for key in ("participant_id", "duration", "fps", "label_range"):
        if key not in meta:
            diags.append(f"{meta_path}: missing field '{key}'")
    if diags:
        raise CorpusFormatError(diags)

    declared = dict(meta.get("modalities", {}))
    profile = meta.get("profile")
    if profile is not None:
        table = MODALITY_TABLE.get(profile)
        if table is None:
            diags.append(f"{meta_path}: unknown profile '{profile}'")
        else:
            for mod, dim in declared.items():
                if table.get(mod) not in (None, dim):
                    diags.append(f"{meta_path}: modality {mod} declared dim {dim}, profile {profile} says {table[mod]}")
            for mod, dim in table.items():
                declared.setdefault(mod, dim)

    feature_streams = {}
    for path in sorted(d.glob("features_*.csv")):
        mod = path.stem[len("features_"):]
        header, arr = _read_csv(path, diags, declared.get(mod))
        if arr is None:
            continue
        ts = arr[:, 0]
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            diags.append(f"{path}: timestamps not increasing")
            continue
        feature_streams[mod] = FeatureStream(mod, ts, arr[:, 1:])
    for mod in meta.get("modalities", {}):
        if not (d / f"features_{mod}.csv").exists():
            diags.append(f"{d}/features_{mod}.csv: declared modality missing")

    ann_path = annotation_path(d, dimension)
    traces = ()
    if not ann_path.is_file():
        diags.append(f"{ann_path}: missing")
    else:
        header, arr = _read_csv(ann_path, diags)
        if arr is not None:
            ts = arr[:, 0]
            if ts.size > 1 and not np.all(np.diff(ts) > 0):
                diags.append(f"{ann_path}: timestamps not strictly increasing")
            else:
                lo, hi = meta["label_range"]
                if arr[:, 1:].min() < lo - 1e-9 or arr[:, 1:].max() > hi + 1e-9:
                    diags.append(f"{ann_path}: values outside label_range {meta['label_range']}")
                traces = tuple(AnnotationTrace(a, ts, arr[:, j + 1]) for j, a in enumerate(header[1:]))

    frame_dir = d / "frames"
    frame_files = sorted(frame_dir.glob("*.png")) if frame_dir.is_dir() else []
    if not frame_files:
        diags.append(f"{frame_dir}: no frames")
    frames = None
    if frame_files:
        names = [p.stem for p in frame_files]
        if names != [f"{i:06d}" for i in range(len(names))]:
            diags.append(f"{frame_dir}: frame files must be contiguous zero-padded indices from 000000")
        else:
            first = np.asarray(Image.open(frame_files[0]))
            if first.ndim != 2 or first.dtype != np.uint8:
                diags.append(f"{frame_files[0]}: frames must be 8-bit grayscale")
            else:
                frames = np.zeros((len(frame_files),) + first.shape, dtype=np.uint8)
                if load_frames:
                    for i in range(0, len(frame_files), max(1, frame_step)):
                        img = np.asarray(Image.open(frame_files[i]))
                        if img.shape != first.shape:
                            diags.append(f"{frame_files[i]}: resolution {img.shape} differs from {first.shape}")
                            break
                        frames[i] = img

    duration = float(meta["duration"])
    for mod, stream in feature_streams.items():
        if stream.timestamps[0] > _TS_TOL or stream.timestamps[-1] < duration - 1.0:
            diags.append(f"{d}/features_{mod}.csv: does not cover [0, {duration}]")
    if traces and (traces[0].timestamps[0] > _TS_TOL or traces[0].timestamps[-1] < duration - 1.0):
        diags.append(f"{ann_path}: does not cover [0, {duration}]")
    if frames is not None and len(frames) / float(meta["fps"]) < duration - 1.0 / float(meta["fps"]) - _TS_TOL:
        diags.append(f"{frame_dir}: {len(frames)} frames do not cover {duration} s at {meta['fps']} fps")

    if diags:
        raise CorpusFormatError(diags)
    fps = float(meta["fps"])
    skip = max(1, int(round(fps / EFFECTIVE_FPS)))
    extra = {k: v for k, v in meta.items() if k not in ("participant_id", "duration", "fps", "label_range", "modalities", "profile")}
    return Session(
        participant_id=str(meta["participant_id"]),
        duration=duration,
        frame_stream=FrameStream(frames, fps, skip),
        feature_streams=feature_streams,
        annotation_traces=traces,
        label_range=tuple(meta["label_range"]),
        extra_meta=extra,
    )


def session_dirs(corpus_dir):
    root = Path(corpus_dir)
    if not root.is_dir():
        raise CorpusFormatError([f"{root}: not a directory"])
    return sorted(p for p in root.iterdir() if p.is_dir())


def read_corpus(corpus_dir, load_frames=True, dimension=None):
    """Read every session; diagnostics from all sessions are pooled."""
    sessions, diags = [], []
    dirs = session_dirs(corpus_dir)
    if not dirs:
        raise CorpusFormatError([f"{corpus_dir}: no session directories"])
    for d in dirs:
        try:
            meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").is_file() else {}
            step = max(1, int(round(float(meta.get("fps", EFFECTIVE_FPS)) / EFFECTIVE_FPS)))
            sessions.append(read_session(d, load_frames=load_frames, frame_step=step, dimension=dimension))
        except CorpusFormatError as exc:
            diags.extend(exc.diagnostics)
    ids = [s.participant_id for s in sessions]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        diags.append(f"{corpus_dir}: duplicate participant ids {dup}")
    if diags:
        raise CorpusFormatError(diags)
    return sessions


def validate_corpus(corpus_dir, dimension=None):
    """Validation report used by ``ingest``; raises on malformed corpora."""
    sessions = read_corpus(corpus_dir, dimension=dimension)
    report = {"corpus": str(corpus_dir), "hash": corpus_hash(corpus_dir), "sessions": []}
    for s in sessions:
        report["sessions"].append(
            {
                "participant_id": s.participant_id,
                "duration": s.duration,
                "frames": int(len(s.frame_stream.frames)),
                "resolution": list(s.frame_stream.resolution),
                "fps": s.frame_stream.native_fps,
                "annotators": [t.annotator_id for t in s.annotation_traces],
                "modalities": {m: st.dim for m, st in sorted(s.feature_streams.items())},
                "coverage": {
                    "annotations": [float(s.annotation_traces[0].timestamps[0]), float(s.annotation_traces[0].timestamps[-1])],
                    **{m: [float(st.timestamps[0]), float(st.timestamps[-1])] for m, st in sorted(s.feature_streams.items())},
                },
            }
        )
    return report


def corpus_hash(corpus_dir, exclude=("manifest.json",)):
    """sha256 over relative paths and bytes of every file, in sorted order.

    Root-level files named in ``exclude`` are skipped (the manifest records
    the hash and so cannot be part of it).
    """
    root = Path(corpus_dir)
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            p = Path(dirpath) / name
            if p.parent == root and name in exclude:
                continue
            h.update(str(p.relative_to(root)).encode())
            h.update(b"\0")
            h.update(p.read_bytes())
    return h.hexdigest()
