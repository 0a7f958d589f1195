"""Sliding-window slicing, label aggregation and class binarization.

A window covers the half-open interval ``[start, start + length)``; every
sample whose timestamp falls in it contributes to the window.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .corpus import EFFECTIVE_FPS, AnnotationTrace, FeatureStream, FrameStream, Session
from .errors import ConfigurationError, EmptyDatasetError, ModalityAccessError, WindowRejectedError

log = logging.getLogger(__name__)

LOW, HIGH, DISCARDED = 0, 1, -1
# slack for float window edges (timestamps carry 3 decimals)
_EDGE = 1e-6


class Interval(NamedTuple):
    start: float
    length: float


@dataclass
class Window:
    start: float
    length: float
    participant_id: str
    pixel_tensor: np.ndarray  # H x W x (5 * length)
    features: dict[str, np.ndarray]
    continuous_label: float


@dataclass(frozen=True)
class LabelingConfig:
    task: str = "classification"
    split_t: float | None = None  # None -> median of the training labels
    epsilon: float = 0.1

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ConfigurationError(f"unknown task {self.task!r}")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0")

    def check_range(self, label_range, t):
        lo, hi = label_range
        if self.task == "classification" and not (lo <= t - self.epsilon and t + self.epsilon <= hi):
            raise ConfigurationError(f"band [{t - self.epsilon}, {t + self.epsilon}] outside label range {label_range}")


def window_count(duration, length, step):
    return int(math.floor((duration - length) / step + 1e-9)) + 1 if duration >= length - 1e-9 else 0


def window_starts(duration, length, step):
    if not 0 < step <= length:
        raise ConfigurationError(f"need 0 < step <= length, got step={step}, length={length}")
    n = window_count(duration, length, step)
    return [round(k * step, 9) for k in range(n)]


def _in_window(ts, window):
    return (ts >= window.start - _EDGE) & (ts < window.start + window.length - _EDGE)


def aggregate_label(traces, window) -> float:
    """Mean over the window of the per-timestamp median across annotators."""
    traces = list(traces)
    if not traces:
        raise WindowRejectedError("no annotation traces")
    ts = traces[0].timestamps
    mask = _in_window(ts, window)
    if not mask.any():
        raise WindowRejectedError(f"no annotation timestamps in window starting at {window.start:.3f}s")
    values = np.stack([tr.values[mask] for tr in traces])
    return float(np.median(values, axis=0).mean())


def aggregate_features(stream: FeatureStream, window) -> np.ndarray:
    mask = _in_window(stream.timestamps, window)
    if not mask.any():
        raise WindowRejectedError(f"{stream.modality}: no feature vectors in window starting at {window.start:.3f}s")
    return stream.vectors[mask].mean(axis=0)


def stack_frames(stream: FrameStream, window) -> np.ndarray:
    """Frames at the effective rate inside ``window``, stacked as H x W x C in [0, 1]."""
    if abs(stream.effective_fps - EFFECTIVE_FPS) > 1e-9:
        raise ConfigurationError(
            f"native_fps/skip must give {EFFECTIVE_FPS} frames/s, got {stream.native_fps}/{stream.skip}"
        )
    n_expected = int(round(EFFECTIVE_FPS * window.length))
    first = int(math.ceil((window.start - _EDGE) * stream.native_fps))
    first += (-first) % stream.skip
    idx = np.arange(first, len(stream.frames), stream.skip)
    idx = idx[_in_window(idx / stream.native_fps, window)]
    if len(idx) < n_expected:
        raise WindowRejectedError(
            f"window starting at {window.start:.3f}s has {len(idx)} frames, needs {n_expected}"
        )
    frames = stream.frames[idx[:n_expected]].astype(np.float32) / 255.0
    return np.ascontiguousarray(np.moveaxis(frames, 0, -1))


def slice_windows(session: Session, length, step) -> list[Window]:
    if session.duration < length - 1e-9:
        raise EmptyDatasetError(
            f"session {session.participant_id} lasts {session.duration}s, shorter than one {length}s window"
        )
    windows = []
    for start in window_starts(session.duration, length, step):
        iv = Interval(start, length)
        try:
            label = aggregate_label(session.annotation_traces, iv)
            feats = {m: aggregate_features(s, iv) for m, s in sorted(session.feature_streams.items())}
            pixels = stack_frames(session.frame_stream, iv)
        except WindowRejectedError as exc:
            log.warning("session %s: window rejected: %s", session.participant_id, exc)
            continue
        windows.append(Window(start, length, session.participant_id, pixels, feats, label))
    return windows


def binarize(labels, cfg: LabelingConfig, t=None) -> np.ndarray:
    """Map labels to HIGH/LOW, or DISCARDED inside ``[t - eps, t + eps]``."""
    if cfg.task != "classification":
        raise ConfigurationError("binarize applies to classification only")
    t = cfg.split_t if t is None else t
    if t is None:
        raise ConfigurationError("split threshold t not set")
    labels = np.asarray(labels, dtype=float)
    out = np.full(labels.shape, DISCARDED, dtype=np.int64)
    out[labels > t + cfg.epsilon] = HIGH
    out[labels < t - cfg.epsilon] = LOW
    if labels.size and not (out != DISCARDED).any():
        raise EmptyDatasetError(f"all {labels.size} labels fall inside the band {t}±{cfg.epsilon}")
    return out


# ---------------------------------------------------------------- array form


class WindowDataset:
    """Windows of many sessions in array form.

    ``pixels`` is (N, C, H, W) float32 and ``privileged`` (N, D) float64,
    the concatenation of per-modality window means in ``modalities`` order.
    Views created by :meth:`view` refuse access to withheld modalities.
    """

    def __init__(self, pixels, privileged, labels, participants, starts, window_length,
                 modalities=(), classes=None, allowed=frozenset({"pixels", "privileged"})):
        self._pixels = pixels
        self._privileged = privileged
        self.labels = labels
        self.participants = participants
        self.starts = starts
        self.window_length = window_length
        self.modalities = tuple(modalities)
        self.classes = classes
        self.allowed = frozenset(allowed)

    def __repr__(self):
        return (f"WindowDataset(n={len(self)}, pixels={self.pixel_shape}, privileged={self.privileged_dim}, "
                f"participants={len(self.participant_ids())}, allowed={sorted(self.allowed)})")

    @property
    def pixels(self):
        if "pixels" not in self.allowed:
            raise ModalityAccessError("pixel tensors are withheld from this view")
        return self._pixels

    @property
    def privileged(self):
        if "privileged" not in self.allowed:
            raise ModalityAccessError("privileged features are withheld from this view")
        return self._privileged

    def __len__(self):
        return len(self.labels)

    @property
    def pixel_shape(self):
        return tuple(self._pixels.shape[1:])

    @property
    def privileged_dim(self):
        return int(self._privileged.shape[1])

    def participant_ids(self):
        return sorted(set(self.participants.tolist()))

    def _copy(self, **changes):
        fields = dict(
            pixels=self._pixels,
            privileged=self._privileged,
            labels=self.labels,
            participants=self.participants,
            starts=self.starts,
            window_length=self.window_length,
            modalities=self.modalities,
            classes=self.classes,
            allowed=self.allowed,
        )
        fields.update(changes)
        return WindowDataset(**fields)

    def subset(self, index):
        index = np.asarray(index)
        return self._copy(
            pixels=self._pixels[index],
            privileged=self._privileged[index],
            labels=self.labels[index],
            participants=self.participants[index],
            starts=self.starts[index],
            classes=None if self.classes is None else self.classes[index],
        )

    def for_participants(self, ids):
        return self.subset(np.flatnonzero(np.isin(self.participants, list(ids))))

    def view(self, *allowed):
        bad = set(allowed) - {"pixels", "privileged"}
        if bad:
            raise ConfigurationError(f"unknown modality view {sorted(bad)}")
        return self._copy(allowed=frozenset(allowed) & self.allowed)

    def with_privileged(self, privileged):
        return self._copy(privileged=privileged)

    def targets(self, task):
        if task == "classification":
            if self.classes is None:
                raise ConfigurationError("dataset not binarized")
            return self.classes
        return self.labels


def build_dataset(sessions, length, step) -> WindowDataset:
    pixels, privileged, labels, parts, starts = [], [], [], [], []
    modalities = None
    for session in sessions:
        mods = tuple((m, s.dim) for m, s in sorted(session.feature_streams.items()))
        if modalities is None:
            modalities = mods
        elif mods != modalities:
            raise ConfigurationError(f"session {session.participant_id}: modalities {mods} differ from {modalities}")
        for w in slice_windows(session, length, step):
            pixels.append(np.moveaxis(w.pixel_tensor, -1, 0))
            privileged.append(np.concatenate([w.features[m] for m, _ in mods]) if mods else np.zeros(0))
            labels.append(w.continuous_label)
            parts.append(w.participant_id)
            starts.append(w.start)
    if not labels:
        raise EmptyDatasetError(f"no windows of length {length}s in {len(sessions)} sessions")
    return WindowDataset(
        pixels=np.ascontiguousarray(np.stack(pixels)),
        privileged=np.stack(privileged).astype(np.float64),
        labels=np.asarray(labels, dtype=np.float64),
        participants=np.asarray(parts, dtype=object),
        starts=np.asarray(starts, dtype=np.float64),
        window_length=float(length),
        modalities=modalities or (),
    )


def label_split(train: WindowDataset, others, cfg: LabelingConfig, label_range=None):
    """Binarize a training set and companions with a threshold from the training set.

    Returns ``(threshold, [train, *others])`` with band windows dropped. For
    regression the datasets are returned unchanged and the threshold is None.
    """
    if cfg.task == "regression":
        return None, [train, *others]
    t = cfg.split_t if cfg.split_t is not None else float(np.median(train.labels))
    if label_range is not None:
        cfg.check_range(label_range, t)
    out = []
    for ds in (train, *others):
        classes = binarize(ds.labels, cfg, t)
        keep = np.flatnonzero(classes != DISCARDED)
        sub = ds.subset(keep)
        sub.classes = classes[keep]
        out.append(sub)
    return t, out


# ------------------------------------------------------------- normalization


@dataclass(frozen=True)
class FeatureNormalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values):
        values = np.asarray(values, dtype=np.float64)
        safe = np.where(self.std > 0, self.std, 1.0)
        out = (values - self.mean) / safe
        out[..., self.std <= 0] = 0.0
        return out


def fit_feature_normalizer(train) -> FeatureNormalizer:
    """Per-feature z-score statistics (population std) of the training windows."""
    values = train.privileged if isinstance(train, WindowDataset) else np.asarray(train, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ConfigurationError("need at least 2 training windows to fit a normalizer")
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 0.0)
    return FeatureNormalizer(mean, std)


def apply_normalizer(normalizer: FeatureNormalizer, windows):
    if isinstance(windows, WindowDataset):
        return windows.with_privileged(normalizer.apply(windows._privileged))
    return normalizer.apply(windows)

