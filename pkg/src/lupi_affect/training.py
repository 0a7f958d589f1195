"""Adam training with validation early stopping, and the teacher -> student procedure."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses
from .errors import ConfigurationError, EmptyDatasetError, LupiError, NonFiniteLossError
from .models import ModelSpec, build_model, parameter_hash
from .windowing import WindowDataset

log = logging.getLogger(__name__)

EVAL_BATCH = 1024


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.10
    seed: int = 0
    monitor: str = "blended"  # students only: "blended" or "task"

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be >= 1")
        if self.monitor not in ("blended", "task"):
            raise ConfigurationError(f"monitor must be 'blended' or 'task', got {self.monitor!r}")

    def with_seed(self, seed):
        return TrainConfig(**{**asdict(self), "seed": int(seed)})


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    components: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1

    @property
    def best_val_loss(self):
        return self.val_loss[self.best_epoch]

    def write_csv(self, path):
        keys = sorted({k for c in self.components for k in c})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", *keys])
            for e, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
                comp = self.components[e] if e < len(self.components) else {}
                w.writerow([e, repr(tr), repr(va), *(repr(comp.get(k, float("nan"))) for k in keys)])


class EarlyStopping:
    """Tracks the best validation loss; signals a stop after ``patience`` stale epochs."""

    def __init__(self, patience):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1

    def update(self, epoch, val_loss):
        """Record one epoch. Returns ``(improved, stop)``."""
        improved = val_loss < self.best
        if improved:
            self.best, self.best_epoch = val_loss, epoch
        return improved, epoch - self.best_epoch >= self.patience


# ------------------------------------------------------------------ splitting


def split_train_val(dataset: WindowDataset, val_fraction, seed):
    """Participant-grouped split whose validation share is closest to ``val_fraction``.

    Participants are shuffled with ``seed`` and taken in that order; the
    prefix whose window count is nearest the target goes to validation.
    """
    ids = dataset.participant_ids()
    if len(ids) < 2:
        raise ConfigurationError("a grouped train/val split needs at least 2 participants")
    order = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
    counts = {p: int(c) for p, c in zip(*np.unique(dataset.participants.astype(str), return_counts=True))}
    target = val_fraction * len(dataset)
    best_k, best_gap, running = 1, math.inf, 0
    for k in range(1, len(order)):
        running += counts[order[k - 1]]
        gap = abs(running - target)
        if gap < best_gap:
            best_k, best_gap = k, gap
    val_ids = set(order[:best_k])
    val_mask = np.isin(dataset.participants, list(val_ids))
    return dataset.subset(np.flatnonzero(~val_mask)), dataset.subset(np.flatnonzero(val_mask))


# ------------------------------------------------------------------- tensors


def model_inputs(dataset: WindowDataset, inputs):
    """Torch tensors for the modalities a model consumes, read through a guarded view."""
    view = dataset.view(*inputs)
    out = {}
    if "pixels" in inputs:
        out["pixels"] = torch.from_numpy(np.ascontiguousarray(view.pixels, dtype=np.float32)).contiguous(
            memory_format=torch.channels_last
        )
    if "privileged" in inputs:
        out["privileged"] = torch.from_numpy(np.asarray(view.privileged, dtype=np.float32))
    return out


def target_tensor(dataset: WindowDataset, task):
    y = dataset.targets(task)
    return torch.as_tensor(y, dtype=torch.long if task == "classification" else torch.float32)


def _take(inputs, idx):
    return {k: v[idx] for k, v in inputs.items()}


def _run_eval(model, inputs, n):
    model.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, n, EVAL_BATCH):
            sl = slice(i, min(i + EVAL_BATCH, n))
            outs.append(model(**{k: v[sl] for k, v in inputs.items()}))
    output = torch.cat([o.output for o in outs])
    penult = torch.cat([o.penultimate for o in outs])
    probs = torch.cat([o.probabilities for o in outs]) if outs[0].probabilities is not None else None
    return type(outs[0])(output, penult, probs)


def predict(model, dataset: WindowDataset):
    """Eval-mode forward over a dataset, reading only the model's modalities."""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot predict on an empty dataset")
    return _run_eval(model, model_inputs(dataset, model.spec.inputs), len(dataset))


def predictions(model, dataset):
    """Class indices (classification) or real outputs (regression) as numpy."""
    out = predict(model, dataset)
    if model.spec.task == "classification":
        return out.output.argmax(dim=1).numpy()
    return out.output.numpy().astype(np.float64)


# ------------------------------------------------------------------- training


class _Objective:
    """Per-batch loss. ``split`` picks the precomputed train/val targets."""

    def __init__(self, task, targets, teacher_out=None, loss_cfg=None):
        self.task = task
        self.targets = targets
        self.teacher_out = teacher_out
        self.loss_cfg = loss_cfg

    def __call__(self, out, idx, split, monitor="blended"):
        y = self.targets[split] if idx is None else self.targets[split][idx]
        if self.teacher_out is None:
            if self.task == "classification":
                task_term = losses.cross_entropy(out.probabilities, y).mean()
            else:
                task_term = losses.squared_error(out.output, y).mean()
            return task_term, {"task": task_term.detach()}
        t = self.teacher_out[split]
        if idx is not None:
            t = type(t)(*(None if v is None else v[idx] for v in t))
        loss, comps = losses.student_loss(self.loss_cfg, out, t, y)
        if monitor == "task" and split == "val":
            return comps["task"], comps
        return loss, comps


def _fit(model, train_inputs, val_inputs, objective, n_train, n_val, cfg: TrainConfig):
    if n_train == 0 or n_val == 0:
        raise EmptyDatasetError(f"training needs non-empty train and validation sets (got {n_train}, {n_val})")
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    model.to(memory_format=torch.channels_last)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    best_state = copy.deepcopy(model.state_dict())
    for epoch in range(cfg.max_epochs):
        model.train()
        perm = torch.randperm(n_train, generator=gen)
        total, comp_sums = 0.0, {}
        for b, start in enumerate(range(0, n_train, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            out = model(**_take(train_inputs, idx))
            loss, comps = objective(out, idx, "train")
            if not torch.isfinite(loss):
                raise NonFiniteLossError(epoch, b, {"loss": loss.item(), **{k: v.item() for k, v in comps.items()}})
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            for k, v in comps.items():
                comp_sums[k] = comp_sums.get(k, 0.0) + v.item() * len(idx)
        val_out = _run_eval(model, val_inputs, n_val)
        with torch.no_grad():
            val_loss, val_comps = objective(val_out, None, "val", cfg.monitor)
        val_loss = val_loss.item()
        if not math.isfinite(val_loss):
            raise NonFiniteLossError(epoch, "validation", {k: v.item() for k, v in val_comps.items()})
        history.train_loss.append(total / n_train)
        history.val_loss.append(val_loss)
        history.components.append(
            {**{f"train_{k}": v / n_train for k, v in comp_sums.items()},
             **{f"val_{k}": v.item() for k, v in val_comps.items()}}
        )
        improved, stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = copy.deepcopy(model.state_dict())
        history.stopped_epoch = epoch
        if stop:
            break
    history.best_epoch = stopper.best_epoch
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def train_model(model, dataset: WindowDataset, task, cfg: TrainConfig, val: WindowDataset | None = None):
    """Supervised training on the model's own modalities; returns (model, history)."""
    if val is None:
        dataset, val = split_train_val(dataset, cfg.val_fraction, cfg.seed)
    if model.spec.task != task:
        raise ConfigurationError(f"model built for {model.spec.task}, asked to train {task}")
    inputs = model.spec.inputs
    obj = _Objective(task, {"train": target_tensor(dataset, task), "val": target_tensor(val, task)})
    return _fit(model, model_inputs(dataset, inputs), model_inputs(val, inputs), obj, len(dataset), len(val), cfg)


def spec_for(kind, dataset: WindowDataset, task):
    pixel_shape = dataset.pixel_shape if kind in ("pixelnet", "studentnet", "fusionnet") else None
    priv = dataset.privileged_dim if kind in ("privnet", "fusionnet") else None
    return ModelSpec(kind=kind, task=task, pixel_shape=pixel_shape, privileged_dim=priv)


def train_teacher(kind, dataset: WindowDataset, task, cfg: TrainConfig, val=None, seed=None):
    if kind not in ("privnet", "fusionnet"):
        raise ConfigurationError(f"teacher must be privnet or fusionnet, got {kind!r}")
    model = build_model(spec_for(kind, dataset, task), cfg.seed if seed is None else seed)
    return train_model(model, dataset, task, cfg, val)


def train_student(student, teacher, dataset: WindowDataset, task, alpha, cfg: TrainConfig, val=None,
                  loss_config: losses.LupiLossConfig | None = None):
    """Train ``student`` on pixels against labels and the frozen ``teacher``.

    The teacher runs in eval mode on the full (privileged) view once per
    split; the student only ever receives the pixel view. The teacher's
    parameter hash is checked before and after.
    """
    if val is None:
        dataset, val = split_train_val(dataset, cfg.val_fraction, cfg.seed)
    if student.spec.inputs != ("pixels",):
        raise ConfigurationError("the student must be a pixel-only model")
    loss_cfg = loss_config or losses.LupiLossConfig(task=task, alpha=alpha)
    if loss_cfg.alpha != alpha or loss_cfg.task != task:
        raise ConfigurationError("loss_config disagrees with task/alpha")
    if "penultimate" in (loss_cfg.student_layer, loss_cfg.teacher_layer) and loss_cfg.distance != "kl":
        if student.spec.penultimate_dim != teacher.spec.penultimate_dim:
            raise ConfigurationError(
                f"penultimate dims differ: student {student.spec.penultimate_dim}, teacher {teacher.spec.penultimate_dim}"
            )
    for p in teacher.parameters():
        p.requires_grad_(False)
    before = parameter_hash(teacher)
    teacher_out = {
        "train": predict(teacher, dataset),
        "val": predict(teacher, val),
    }
    obj = _Objective(task, {"train": target_tensor(dataset, task), "val": target_tensor(val, task)},
                     teacher_out, loss_cfg)
    pix = ("pixels",)
    student, history = _fit(student, model_inputs(dataset, pix), model_inputs(val, pix), obj,
                            len(dataset), len(val), cfg)
    if parameter_hash(teacher) != before:
        raise LupiError("teacher parameters changed during student training")
    return student, history
