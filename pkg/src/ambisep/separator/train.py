"""Supervised training loop, plateau schedule and gradient checking."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..encode import AmbisonicsBuffer
from ..sh import Direction
from .model import AssembledInput, DirectionalDemucs, _to_batch, assemble_input


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


def perturb_target(direction: Direction, window_deg: float = 2.5,
                   rng: np.random.Generator | None = None) -> Direction:
    """Area-uniform draw from the spherical cap of radius ``window_deg``."""
    if window_deg < 0:
        raise ValueError("window must be >= 0")
    if window_deg == 0:
        return direction
    rng = np.random.default_rng() if rng is None else rng
    u, v = rng.random(2)
    cos_gamma = 1.0 - u * (1.0 - math.cos(math.radians(window_deg)))
    gamma = math.acos(cos_gamma)
    psi = 2.0 * math.pi * v
    d = direction.unit_vector
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    vec = math.cos(gamma) * d + math.sin(gamma) * (math.cos(psi) * e1 + math.sin(psi) * e2)
    return Direction.from_vector(vec)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement.

    An epoch improves when its loss is strictly below the best so far. The
    first epoch always sets the reference, so a stream that never improves
    drops the rate at epoch ``patience + 1``.
    """

    def __init__(self, optimizer: torch.optim.Optimizer, factor: float = 0.1, patience: int = 10):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def step(self, loss: float) -> bool:
        """Record one epoch's loss; returns True when the rate was reduced."""
        if loss < self.best:
            self.best = loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            for group in self.optimizer.param_groups:
                group["lr"] *= self.factor
            self.bad_epochs = 0
            return True
        return False


@dataclass
class TrainHyper:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 200
    steps_per_epoch: int | None = None
    max_steps: int | None = None
    patience: int = 10
    factor: float = 0.1
    perturb_deg: float = 2.5
    segment_samples: int | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHyper":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class TrainHistory:
    step_loss: list[float] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid: float = math.inf

    def to_dict(self) -> dict:
        return asdict(self)


def _crop(mix: AmbisonicsBuffer, truth: np.ndarray, length: int | None, rng: np.random.Generator):
    n = mix.n_samples
    if length is None or length >= n:
        return mix, truth
    i0 = int(rng.integers(n - length + 1))
    return AmbisonicsBuffer(mix.data[:, i0:i0 + length], mix.order, mix.sample_rate), truth[i0:i0 + length]


def _sample_item(model, scenes, rng, hyper) -> tuple[AssembledInput, np.ndarray]:
    scene = scenes[int(rng.integers(len(scenes)))]
    k = int(rng.integers(len(scene.truths)))
    target = perturb_target(scene.directions[k], hyper.perturb_deg, rng)
    mix, truth = _crop(scene.mixture, scene.truths[k].samples, hyper.segment_samples, rng)
    inp = assemble_input(model.config.mode, mix, target)
    return inp, truth / inp.scale


def _batch_loss(model: DirectionalDemucs, items: Sequence[tuple[AssembledInput, np.ndarray]]) -> torch.Tensor:
    x, cond = _to_batch(model, [a for a, _ in items])
    dtype = next(model.parameters()).dtype
    y = torch.as_tensor(np.stack([t for _, t in items]), dtype=dtype)
    est = model(x, cond)[:, 0]
    return torch.mean(torch.abs(est - y))


def dataset_loss(model: DirectionalDemucs, scenes, batch_size: int = 16) -> float:
    """Mean l1 over every (scene, source) pair at the exact source directions."""
    items = []
    for scene in scenes:
        for d, truth in zip(scene.directions, scene.truths):
            inp = assemble_input(model.config.mode, scene.mixture, d)
            items.append((inp, truth.samples / inp.scale))
    if not items:
        raise ValueError("no scenes to evaluate")
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(items), batch_size):
            chunk = items[i:i + batch_size]
            total += float(_batch_loss(model, chunk)) * len(chunk)
    return total / len(items)


def train(model: DirectionalDemucs, train_scenes, valid_scenes=(), hyper: TrainHyper | None = None,
          log=None) -> tuple[DirectionalDemucs, TrainHistory]:
    """Fit ``model`` with Adam on randomly drawn (scene, source) pairs.

    Each step draws ``batch_size`` pairs, perturbs the target direction
    within the window, and minimizes the l1 distance to the source signal
    divided by the input standardization scale. Returns a copy carrying the
    parameters with the lowest validation loss (the epoch's mean training
    loss is used when ``valid_scenes`` is empty) and the loss history. The
    input model is left at its final state.
    """
    hyper = TrainHyper() if hyper is None else hyper
    if not train_scenes:
        raise ValueError("no training scenes")
    rng = np.random.default_rng(hyper.seed)
    torch.manual_seed(hyper.seed)
    n_pairs = sum(len(s.truths) for s in train_scenes)
    steps_per_epoch = hyper.steps_per_epoch or max(1, math.ceil(n_pairs / hyper.batch_size))
    total_steps = hyper.epochs * steps_per_epoch
    if hyper.max_steps is not None:
        total_steps = min(total_steps, hyper.max_steps)
    opt = torch.optim.Adam(model.parameters(), lr=hyper.lr, betas=hyper.betas, eps=hyper.eps)
    sched = PlateauScheduler(opt, hyper.factor, hyper.patience)
    history = TrainHistory()
    best_state = copy.deepcopy(model.state_dict())
    step = 0
    epoch = 0
    model.train()
    while step < total_steps:
        epoch += 1
        losses = []
        for _ in range(min(steps_per_epoch, total_steps - step)):
            items = [_sample_item(model, train_scenes, rng, hyper) for _ in range(hyper.batch_size)]
            loss = _batch_loss(model, items)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at step {step + 1} (lr {sched.lr:g})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            losses.append(value)
            history.step_loss.append(value)
        train_loss = float(np.mean(losses))
        valid = dataset_loss(model, valid_scenes, hyper.batch_size) if valid_scenes else train_loss
        record = {"epoch": epoch, "step": step, "train_loss": train_loss, "valid_loss": valid, "lr": sched.lr}
        if valid < history.best_valid:
            history.best_valid = valid
            history.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        record["lr_dropped"] = sched.step(valid)
        history.epochs.append(record)
        if log is not None:
            log(record)
    model.eval()
    best = copy.deepcopy(model)
    best.load_state_dict(best_state)
    return best, history


def gradient_check(model: DirectionalDemucs, tracks: np.ndarray, condition, target: np.ndarray,
                   epsilon: float = 1e-5, entries_per_tensor: int = 8, seed: int = 0,
                   floor: float = 1e-6) -> float:
    """Largest relative error between autograd and central-difference gradients.

    Runs on a float64 copy of ``model``. Up to ``entries_per_tensor``
    randomly chosen entries of every parameter tensor are checked; the
    relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    net = copy.deepcopy(model).double()
    net.eval()
    rng = np.random.default_rng(seed)
    inp = AssembledInput(np.asarray(tracks, dtype=float), condition, 1.0)
    x, cond = _to_batch(net, [inp])
    y = torch.as_tensor(np.asarray(target, dtype=float))[None, None, :]

    def loss_fn():
        return torch.mean(torch.abs(net(x, cond) - y))

    net.zero_grad()
    loss_fn().backward()
    worst = 0.0
    with torch.no_grad():
        for _, p in net.named_parameters():
            flat = p.view(-1)
            grad = p.grad.view(-1).clone()
            count = min(entries_per_tensor, flat.numel())
            for i in rng.choice(flat.numel(), size=count, replace=False):
                old = float(flat[i])
                flat[i] = old + epsilon
                up = float(loss_fn())
                flat[i] = old - epsilon
                down = float(loss_fn())
                flat[i] = old
                numeric = (up - down) / (2 * epsilon)
                analytic = float(grad[i])
                err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
                worst = max(worst, err)
    return worst
