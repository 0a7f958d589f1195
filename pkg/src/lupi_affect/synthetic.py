"""Seeded multimodal sessions with a known latent affect trace.

Every random stream is drawn from its own generator keyed by
``SeedSequence([seed, session_index, stream_id])`` (see :func:`stream_rng`),
so sessions can be generated in any order or in parallel and still come out
identical. Stream ids: 0 latent, 1 privileged noise, 2 frames, 3 annotations.
The privileged readout matrix is shared by all sessions of a corpus and keyed
by ``[seed, READOUT_KEY]``.
"""

from __future__ import annotations

import dataclasses
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import AnnotationTrace, FeatureStream, FrameStream, Session, corpus_hash, write_session
from .errors import ConfigurationError, SchemaError

ANNOTATION_HZ = 25
READOUT_KEY = 2**31 - 1
STREAM_LATENT, STREAM_PRIVILEGED, STREAM_FRAMES, STREAM_ANNOTATIONS = 0, 1, 2, 3


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int
    n_participants: int = 20
    session_duration: float = 60.0
    latent_smoothness: float = 0.95
    latent_step_std: float = 0.15
    privileged_noise_std: float = 0.1
    pixel_noise_std: float = 0.6
    privileged_dim: int = 32
    privileged_modality: str = "audio"
    frame_resolution: tuple = (32, 18)
    fps: float = 25.0
    blob_sigma: float = 3.0
    n_annotators: int = 6
    annotator_noise_std: float = 0.3
    annotator_bias_std: float = 1.2
    label_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "frame_resolution", tuple(int(v) for v in self.frame_resolution))
        object.__setattr__(self, "label_range", tuple(float(v) for v in self.label_range))
        for name in ("privileged_noise_std", "pixel_noise_std", "annotator_noise_std", "annotator_bias_std",
                     "latent_step_std"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if not 0 < self.latent_smoothness <= 1:
            raise ConfigurationError("latent_smoothness must lie in (0, 1]")
        if self.n_annotators < 1 or self.n_participants < 1 or self.privileged_dim < 1:
            raise ConfigurationError("n_annotators, n_participants and privileged_dim must be >= 1")
        if min(self.frame_resolution) < 8:
            raise ConfigurationError("frame_resolution must be at least 8x8")
        if self.session_duration <= 0:
            raise ConfigurationError("session_duration must be > 0")
        if self.label_range[0] >= self.label_range[1]:
            raise ConfigurationError("label_range must be increasing")
        skip = self.fps / 5.0
        if abs(skip - round(skip)) > 1e-9 or skip < 1:
            raise ConfigurationError("fps must be a positive multiple of 5")

    @classmethod
    def from_dict(cls, data):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(fields))
        if unknown:
            raise SchemaError(unknown[0], "unknown field")
        for name, f in fields.items():
            if f.default is dataclasses.MISSING and name not in data:
                raise SchemaError(name, "required field missing")
        for name, value in data.items():
            expected = fields[name].type
            if expected in ("int",) and not (isinstance(value, int) and not isinstance(value, bool)):
                raise SchemaError(name, f"expected an integer, got {value!r}")
            if expected == "float" and not (isinstance(value, (int, float)) and not isinstance(value, bool)):
                raise SchemaError(name, f"expected a number, got {value!r}")
            if expected == "tuple" and not (isinstance(value, (list, tuple)) and len(value) == 2):
                raise SchemaError(name, f"expected a pair, got {value!r}")
        return cls(**data)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["frame_resolution"] = list(self.frame_resolution)
        d["label_range"] = list(self.label_range)
        return d


def stream_rng(seed, *counters):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, counters)]))


@dataclass(frozen=True)
class LatentTrace:
    timestamps: np.ndarray
    values: np.ndarray


def _reflect(v, lo, hi):
    span = hi - lo
    v = np.mod(v - lo, 2 * span)
    return lo + np.where(v > span, 2 * span - v, v)


def generate_latent(seed, duration, smoothness, label_range=(-1.0, 1.0), step_std=0.15, rng=None) -> LatentTrace:
    """Bounded smoothed random walk sampled at 25 Hz.

    Gaussian increments pass through a one-pole low-pass filter with
    coefficient ``smoothness`` and are accumulated; excursions are reflected
    back into ``label_range``. ``smoothness == 1`` freezes the trace.
    """
    rng = stream_rng(seed, 0, STREAM_LATENT) if rng is None else rng
    lo, hi = label_range
    n = int(round(duration * ANNOTATION_HZ))
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    x = np.empty(n)
    x[0] = rng.uniform(mid - 0.8 * half, mid + 0.8 * half)
    g = rng.normal(0.0, step_std * half, size=n)
    v = 0.0
    for i in range(1, n):
        v = smoothness * v + (1 - smoothness) * g[i]
        nxt = x[i - 1] + v
        if nxt > hi or nxt < lo:
            nxt = float(_reflect(nxt, lo, hi))
            v = -v
        x[i] = nxt
    ts = np.round(np.arange(n) / ANNOTATION_HZ, 3)
    return LatentTrace(ts, x)


def readout_matrix(seed, dim):
    return stream_rng(seed, READOUT_KEY, 0).normal(0.0, 1.0 / np.sqrt(3), size=(dim, 3))


def latent_basis(x):
    x = np.asarray(x, dtype=float)
    return np.stack([x, x**2, np.sin(np.pi * x)], axis=-1)


def emit_privileged(latent: LatentTrace, dim, noise_std, seed, weights=None, modality="audio", rng=None) -> FeatureStream:
    """``v(t) = W [x, x^2, sin(pi x)] + noise`` for each latent sample."""
    if dim < 1:
        raise ConfigurationError("privileged dim must be >= 1")
    w = readout_matrix(seed, dim) if weights is None else np.asarray(weights, dtype=float).reshape(dim, 3)
    rng = stream_rng(seed, 0, STREAM_PRIVILEGED) if rng is None else rng
    v = latent_basis(latent.values) @ w.T
    if noise_std > 0:
        v = v + rng.normal(0.0, noise_std, size=v.shape)
    return FeatureStream(modality, latent.timestamps.copy(), v)


def render_frame(x, resolution, label_range=(-1.0, 1.0), sigma=3.0):
    """Noise-free frame in [0, 1]: mid-gray background and one Gaussian blob.

    Vertical blob position and blob amplitude are both affine in ``x``.
    """
    h, w = resolution
    lo, hi = label_range
    xn = (2 * x - lo - hi) / (hi - lo)  # -> [-1, 1]
    cy = (h - 1) / 2 + xn * 0.3 * h
    amp = 0.25 + 0.1 * xn
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    blob = np.exp(-((rows - cy) ** 2 + (cols - (w - 1) / 2) ** 2) / (2 * sigma**2))
    return 0.4 + amp * blob


def blob_amplitude(x, label_range=(-1.0, 1.0)):
    lo, hi = label_range
    return 0.25 + 0.1 * (2 * x - lo - hi) / (hi - lo)


def emit_frames(latent: LatentTrace, resolution, pixel_noise_std, seed, fps=25.0, label_range=(-1.0, 1.0),
                sigma=3.0, rng=None) -> FrameStream:
    """Render 8-bit frames at ``fps``; the skip factor yields 5 effective frames/s."""
    h, w = resolution
    if min(h, w) < 8:
        raise ConfigurationError("resolution must be at least 8x8")
    rng = stream_rng(seed, 0, STREAM_FRAMES) if rng is None else rng
    n = int(round(len(latent.timestamps) * fps / ANNOTATION_HZ))
    t = np.arange(n) / fps
    x = np.interp(t, latent.timestamps, latent.values)
    frames = np.empty((n, h, w), dtype=np.uint8)
    for i in range(n):
        img = render_frame(x[i], resolution, label_range, sigma)
        if pixel_noise_std > 0:
            img = img + rng.normal(0.0, pixel_noise_std, size=img.shape)
        frames[i] = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return FrameStream(frames, float(fps), int(round(fps / 5)))


def emit_annotations(latent: LatentTrace, n_annotators, bias_std, noise_std, seed, label_range=(-1.0, 1.0),
                     rng=None) -> list[AnnotationTrace]:
    """``trace_i(t) = clip(x(t) + b_i + e_i(t))`` with a fixed bias per annotator."""
    if n_annotators < 1:
        raise ConfigurationError("n_annotators must be >= 1")
    rng = stream_rng(seed, 0, STREAM_ANNOTATIONS) if rng is None else rng
    lo, hi = label_range
    bias = rng.normal(0.0, bias_std, size=n_annotators) if bias_std > 0 else np.zeros(n_annotators)
    traces = []
    for i in range(n_annotators):
        vals = latent.values + bias[i]
        if noise_std > 0:
            vals = vals + rng.normal(0.0, noise_std, size=vals.shape)
        traces.append(AnnotationTrace(f"a{i + 1}", latent.timestamps.copy(), np.clip(vals, lo, hi)))
    return traces


def participant_id(index):
    return f"P{index + 1:03d}"


def generate_session(cfg: GeneratorConfig, index) -> tuple[Session, LatentTrace]:
    latent = generate_latent(cfg.seed, cfg.session_duration, cfg.latent_smoothness, cfg.label_range,
                             cfg.latent_step_std, rng=stream_rng(cfg.seed, index, STREAM_LATENT))
    priv = emit_privileged(latent, cfg.privileged_dim, cfg.privileged_noise_std, cfg.seed,
                           modality=cfg.privileged_modality, rng=stream_rng(cfg.seed, index, STREAM_PRIVILEGED))
    frames = emit_frames(latent, cfg.frame_resolution, cfg.pixel_noise_std, cfg.seed, cfg.fps, cfg.label_range,
                         cfg.blob_sigma, rng=stream_rng(cfg.seed, index, STREAM_FRAMES))
    ann = emit_annotations(latent, cfg.n_annotators, cfg.annotator_bias_std, cfg.annotator_noise_std, cfg.seed,
                           cfg.label_range, rng=stream_rng(cfg.seed, index, STREAM_ANNOTATIONS))
    session = Session(
        participant_id=participant_id(index),
        duration=float(cfg.session_duration),
        frame_stream=frames,
        feature_streams={priv.modality: priv},
        annotation_traces=ann,
        label_range=cfg.label_range,
    )
    return session, latent


def generate_corpus(cfg: GeneratorConfig, out_dir=None, overwrite=False) -> list[Session]:
    """Generate ``cfg.n_participants`` sessions, optionally writing them to ``out_dir``.

    Writing also emits ``manifest.json`` (config + corpus hash) at the root.
    """
    if out_dir is not None:
        out = Path(out_dir)
        if out.exists() and any(out.iterdir()):
            if not overwrite:
                raise FileExistsError(f"{out} exists and is not empty; pass overwrite to replace it")
            shutil.rmtree(out)
        out.mkdir(parents=True, exist_ok=True)
    sessions = []
    for i in range(cfg.n_participants):
        session, _ = generate_session(cfg, i)
        sessions.append(session)
        if out_dir is not None:
            write_session(session, Path(out_dir) / session.participant_id)
    if out_dir is not None:
        manifest = {"generator": cfg.to_dict(), "sessions": [s.participant_id for s in sessions]}
        manifest["corpus_hash"] = corpus_hash(out_dir)
        (Path(out_dir) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return sessions

