"""PixelNet / StudentNet, PrivNet and FusionNet.

Every model returns a :class:`ForwardOutput` carrying the output layer, the
96-unit penultimate activation and (for classification) the softmax.
Pixel inputs are (N, C, H, W) with C = 5 frames per window second.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ShapeError

KINDS = ("pixelnet", "studentnet", "privnet", "fusionnet")
PIXEL_KINDS = ("pixelnet", "studentnet")
CHECKPOINT_VERSION = 1

# (name, out_channels, kernel, stride); a 2x2 max-pool follows each conv
CONV_STACK = (
    ("conv1", 32, 5, 2),
    ("conv2", 48, 5, 2),
    ("conv3", 64, 3, 1),
    ("conv4", 96, 3, 1),
)


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    task: str
    pixel_shape: tuple | None = None  # (C, H, W)
    privileged_dim: int | None = None
    penultimate_dim: int = 96
    dropout_rate: float = 0.10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.task not in ("classification", "regression"):
            raise ConfigurationError(f"unknown task {self.task!r}")
        if self.pixel_shape is not None:
            object.__setattr__(self, "pixel_shape", tuple(int(v) for v in self.pixel_shape))
        needs_pixels = self.kind in PIXEL_KINDS or self.kind == "fusionnet"
        needs_priv = self.kind in ("privnet", "fusionnet")
        if needs_pixels and self.pixel_shape is None:
            raise ConfigurationError(f"{self.kind} needs a pixel input shape")
        if needs_priv and not self.privileged_dim:
            raise ConfigurationError(f"{self.kind} needs a privileged input dimension >= 1")

    @property
    def n_outputs(self):
        return 2 if self.task == "classification" else 1

    @property
    def inputs(self):
        return {
            "pixelnet": ("pixels",),
            "studentnet": ("pixels",),
            "privnet": ("privileged",),
            "fusionnet": ("pixels", "privileged"),
        }[self.kind]

    def to_dict(self):
        d = asdict(self)
        d["pixel_shape"] = list(self.pixel_shape) if self.pixel_shape else None
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ForwardOutput(NamedTuple):
    output: torch.Tensor
    penultimate: torch.Tensor
    probabilities: torch.Tensor | None


def same_padding(size, kernel, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_cascade_shapes(height, width):
    """Spatial size after every conv/pool of the pixel trunk ("same" conv, ceil pool)."""
    shapes = []
    h, w = height, width
    for name, _, _, stride in CONV_STACK:
        h, w = -(-h // stride), -(-w // stride)
        shapes.append((name, h, w))
        h, w = -(-h // 2), -(-w // 2)
        shapes.append((name.replace("conv", "pool"), h, w))
    return shapes


class Conv2dSame(nn.Conv2d):
    """Conv with TensorFlow-style "same" padding, valid for any stride."""

    def __init__(self, in_channels, out_channels, kernel_size, stride):
        super().__init__(in_channels, out_channels, kernel_size, stride)
        self._k = kernel_size
        self._s = stride

    def forward(self, x):
        ph = same_padding(x.shape[-2], self._k, self._s)
        pw = same_padding(x.shape[-1], self._k, self._s)
        if any(ph) or any(pw):
            x = F.pad(x, (pw[0], pw[1], ph[0], ph[1]))
        return super().forward(x)


class PixelTrunk(nn.Module):
    """Four conv/pool stages, flatten, dense(96) with ReLU."""

    def __init__(self, pixel_shape, hidden=96):
        super().__init__()
        c, h, w = pixel_shape
        if c < 1 or h < 1 or w < 1:
            raise ShapeError(f"pixel input {pixel_shape} has an empty dimension")
        layers = []
        in_ch = c
        for name, hh, ww in conv_cascade_shapes(h, w):
            if hh < 1 or ww < 1:
                raise ShapeError(f"input {h}x{w} collapses to zero size at layer {name}")
        for name, out_ch, kernel, stride in CONV_STACK:
            layers += [Conv2dSame(in_ch, out_ch, kernel, stride), nn.ReLU(), nn.MaxPool2d(2, ceil_mode=True)]
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        _, fh, fw = conv_cascade_shapes(h, w)[-1]
        self.flat_dim = in_ch * fh * fw
        self.dense = nn.Linear(self.flat_dim, hidden)

    def forward(self, x):
        return F.relu(self.dense(torch.flatten(self.features(x), 1)))


def _head(logits, task):
    probs = F.softmax(logits, dim=1) if task == "classification" else None
    out = logits if task == "classification" else logits[:, 0]
    return out, probs


class PixelNet(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.trunk = PixelTrunk(spec.pixel_shape, spec.penultimate_dim)
        self.dropout = nn.Dropout(spec.dropout_rate)
        self.out = nn.Linear(spec.penultimate_dim, spec.n_outputs)

    def forward(self, pixels=None, privileged=None):
        _check_pixels(self.spec, pixels)
        penult = self.dropout(self.trunk(pixels))
        out, probs = _head(self.out(penult), self.spec.task)
        return ForwardOutput(out, penult, probs)


class PrivNet(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.hidden = nn.Linear(spec.privileged_dim, spec.penultimate_dim)
        self.out = nn.Linear(spec.penultimate_dim, spec.n_outputs)

    def forward(self, pixels=None, privileged=None):
        _check_privileged(self.spec, privileged)
        penult = F.relu(self.hidden(privileged))
        out, probs = _head(self.out(penult), self.spec.task)
        return ForwardOutput(out, penult, probs)


class FusionNet(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        d = spec.penultimate_dim
        self.pixel_stream = PixelTrunk(spec.pixel_shape, d)
        self.privileged_stream = nn.Linear(spec.privileged_dim, d)
        self.fusion = nn.Linear(2 * d, d)
        self.out = nn.Linear(d, spec.n_outputs)

    def forward(self, pixels=None, privileged=None):
        _check_pixels(self.spec, pixels)
        _check_privileged(self.spec, privileged)
        a = self.pixel_stream(pixels)
        b = F.relu(self.privileged_stream(privileged))
        penult = F.relu(self.fusion(torch.cat([a, b], dim=1)))
        out, probs = _head(self.out(penult), self.spec.task)
        return ForwardOutput(out, penult, probs)


def _check_pixels(spec, pixels):
    if pixels is None:
        raise ShapeError(f"{spec.kind} needs pixel input")
    if tuple(pixels.shape[1:]) != spec.pixel_shape:
        raise ShapeError(f"{spec.kind}: pixel batch {tuple(pixels.shape[1:])} does not match {spec.pixel_shape}")


def _check_privileged(spec, privileged):
    if privileged is None:
        raise ShapeError(f"{spec.kind} needs privileged input")
    if privileged.ndim != 2 or privileged.shape[1] != spec.privileged_dim:
        raise ShapeError(f"{spec.kind}: privileged batch {tuple(privileged.shape)} does not match dim {spec.privileged_dim}")


def init_parameters(model: nn.Module, seed):
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), seeded."""
    g = torch.Generator().manual_seed(int(seed))
    for module in model.modules():
        if isinstance(module, (nn.Linear, nn.Conv2d)):
            fan_in = module.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                module.weight.copy_(torch.rand(module.weight.shape, generator=g) * 2 * bound - bound)
                if module.bias is not None:
                    module.bias.copy_(torch.rand(module.bias.shape, generator=g) * 2 * bound - bound)
    return model


def build_pixelnet(spec: ModelSpec, seed=0):
    if spec.kind not in PIXEL_KINDS:
        raise ConfigurationError(f"build_pixelnet got kind {spec.kind}")
    return init_parameters(PixelNet(spec), seed)


def build_privnet(spec: ModelSpec, seed=0):
    if spec.kind != "privnet":
        raise ConfigurationError(f"build_privnet got kind {spec.kind}")
    return init_parameters(PrivNet(spec), seed)


def build_fusionnet(spec: ModelSpec, seed=0):
    if spec.kind != "fusionnet":
        raise ConfigurationError(f"build_fusionnet got kind {spec.kind}")
    return init_parameters(FusionNet(spec), seed)


def build_model(spec: ModelSpec, seed=0):
    if spec.kind in PIXEL_KINDS:
        return build_pixelnet(spec, seed)
    if spec.kind == "privnet":
        return build_privnet(spec, seed)
    return build_fusionnet(spec, seed)


def forward(model, pixels=None, privileged=None, mode="eval"):
    """Run ``model`` in train or eval mode; eval mode disables dropout and autograd."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    model.train(mode == "train")
    if mode == "eval":
        with torch.no_grad():
            return model(pixels=pixels, privileged=privileged)
    return model(pixels=pixels, privileged=privileged)


def parameter_count(model):
    return sum(p.numel() for p in model.parameters())


def parameter_hash(model):
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(path, model, metadata=None):
    """Versioned checkpoint: spec, parameters and a hash of the run metadata."""
    metadata = dict(metadata or {})
    meta_hash = hashlib.sha256(repr(sorted(metadata.items())).encode()).hexdigest()
    payload = {
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "state_dict": model.state_dict(),
        "metadata": metadata,
        "metadata_hash": meta_hash,
        "parameter_hash": parameter_hash(model),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path, expected_spec: ModelSpec | None = None):
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: checkpoint version {payload.get('version')} unsupported")
    spec = ModelSpec.from_dict(payload["spec"])
    if expected_spec is not None and spec != expected_spec:
        raise ConfigurationError(f"{path}: checkpoint spec {spec} incompatible with {expected_spec}")
    model = build_model(spec)
    model.load_state_dict(payload["state_dict"])
    if parameter_hash(model) != payload["parameter_hash"]:
        raise ConfigurationError(f"{path}: parameter hash mismatch")
    model.eval()
    return model, payload["metadata"]
