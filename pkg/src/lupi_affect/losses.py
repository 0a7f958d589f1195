"""Student objectives: a task loss blended with a teacher-matching distance.

``L_st = (1 - alpha) * task + alpha * distance(S_l(x), T_k(x_priv))``

Classification uses cross-entropy and KL(teacher || student) on the output
distributions; regression uses squared error and ``1 - cos`` between the
penultimate representations. All functions work on batched tensors (leading
batch axis) and return per-sample values unless they are ``student_loss_*``,
which average over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn.functional as F

from .errors import ConfigurationError

PROB_FLOOR = 1e-12
NORM_FLOOR = 1e-12
LAYERS = ("output", "penultimate")


def _t(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def cross_entropy(probabilities, label):
    """``-log p[label]`` with probabilities floored at 1e-12."""
    p = _t(probabilities)
    label = torch.as_tensor(label, dtype=torch.long, device=p.device)
    picked = torch.gather(p, -1, label.unsqueeze(-1)).squeeze(-1)
    return -torch.log(picked.clamp_min(PROB_FLOOR))


def kl_divergence(p, q):
    """``sum_i p_i ln(p_i / q_i)`` over the last axis, flooring both at 1e-12."""
    p, q = _t(p), _t(q)
    return (p * (torch.log(p.clamp_min(PROB_FLOOR)) - torch.log(q.clamp_min(PROB_FLOOR)))).sum(-1)


def cosine_distance(u, v):
    """``1 - cos(u, v)``; defined as 1 when either norm is below 1e-12."""
    u, v = _t(u), _t(v)
    if u.shape[-1] != v.shape[-1]:
        raise ConfigurationError(f"cosine distance needs equal dimensions, got {u.shape[-1]} and {v.shape[-1]}")
    nu = torch.linalg.vector_norm(u, dim=-1)
    nv = torch.linalg.vector_norm(v, dim=-1)
    degenerate = (nu <= NORM_FLOOR) | (nv <= NORM_FLOOR)
    denom = torch.where(degenerate, torch.ones_like(nu), nu * nv)
    cos = (u * v).sum(-1) / denom
    dist = (1.0 - cos).clamp(0.0, 2.0)
    return torch.where(degenerate, torch.ones_like(dist), dist)


def squared_error(output, target):
    return (_t(output) - _t(target)) ** 2


def blend(task_loss, distance, alpha):
    """``(1 - alpha) * task_loss + alpha * distance``."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    return (1.0 - alpha) * task_loss + alpha * distance


def _probs(student):
    return student.probabilities if hasattr(student, "probabilities") else _t(student)


def student_loss_classification(student, teacher_probs, label, alpha):
    """Blend of CE against the labels and KL(teacher || student), batch-averaged.

    ``student`` is a :class:`~lupi_affect.models.ForwardOutput` or a tensor of
    class probabilities. ``teacher_probs`` must come from a frozen teacher.
    """
    p = _probs(student)
    ce = cross_entropy(p, label).mean()
    kl = kl_divergence(_t(teacher_probs).detach(), p).mean()
    return blend(ce, kl, alpha)


def student_loss_regression(student, teacher_penult, target, alpha):
    output, penult = student.output, student.penultimate
    teacher_penult = _t(teacher_penult).detach()
    if penult.shape[-1] != teacher_penult.shape[-1]:
        raise ConfigurationError(
            f"student penultimate dim {penult.shape[-1]} != teacher penultimate dim {teacher_penult.shape[-1]}"
        )
    mse = squared_error(output, target).mean()
    cs = cosine_distance(penult, teacher_penult).mean()
    return blend(mse, cs, alpha)


def student_loss_general(task_loss, distance, alpha):
    return blend(task_loss, distance, alpha)


@dataclass(frozen=True)
class LupiLossConfig:
    task: str
    alpha: float
    distance: str | None = None  # kl | cosine | custom
    student_layer: str | None = None
    teacher_layer: str | None = None
    temperature: float = 1.0
    custom_distance: Callable | None = None

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ConfigurationError(f"unknown task {self.task!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        default_layer = "output" if self.task == "classification" else "penultimate"
        object.__setattr__(self, "distance", self.distance or ("kl" if self.task == "classification" else "cosine"))
        object.__setattr__(self, "student_layer", self.student_layer or default_layer)
        object.__setattr__(self, "teacher_layer", self.teacher_layer or default_layer)
        if self.distance not in ("kl", "cosine", "custom"):
            raise ConfigurationError(f"unknown distance {self.distance!r}")
        if self.distance == "custom" and self.custom_distance is None:
            raise ConfigurationError("distance 'custom' needs custom_distance")
        if self.distance == "kl" and (self.task != "classification" or self.student_layer != "output"
                                      or self.teacher_layer != "output"):
            raise ConfigurationError("KL distance applies to classification output layers only")
        for layer in (self.student_layer, self.teacher_layer):
            if layer not in LAYERS:
                raise ConfigurationError(f"unknown layer {layer!r}")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be > 0")


def _layer(out, name):
    return out.output if name == "output" else out.penultimate


def student_loss(cfg: LupiLossConfig, student, teacher, target):
    """Loss and its components for one batch.

    ``teacher`` is the frozen teacher's ForwardOutput for the same windows.
    Returns ``(loss, {"task": ..., "distance": ...})``.
    """
    if cfg.task == "classification":
        p = F.softmax(student.output / cfg.temperature, dim=1) if cfg.temperature != 1.0 else student.probabilities
        task_term = cross_entropy(student.probabilities, target).mean()
    else:
        task_term = squared_error(student.output, target).mean()

    if cfg.distance == "kl":
        q = F.softmax(teacher.output.detach() / cfg.temperature, dim=1)
        dist = kl_divergence(q, p).mean()
    else:
        s = _layer(student, cfg.student_layer)
        t = _layer(teacher, cfg.teacher_layer).detach()
        if s.ndim == 1:
            s, t = s.unsqueeze(-1), t.unsqueeze(-1)
        if s.shape[-1] != t.shape[-1]:
            raise ConfigurationError(
                f"layer {cfg.student_layer} (dim {s.shape[-1]}) and teacher layer {cfg.teacher_layer} "
                f"(dim {t.shape[-1]}) differ"
            )
        fn = cosine_distance if cfg.distance == "cosine" else cfg.custom_distance
        dist = fn(s, t).mean()
    return blend(task_term, dist, cfg.alpha), {"task": task_term.detach(), "distance": dist.detach()}
