"""Dataset-level meta-training of the shared INR and hypernetwork.

Each outer step resets the latent of every signal in the minibatch to
zero, runs the inner SGD loop on the latents alone, and then takes one
AdamW step on the shared parameters using the loss at the adapted
latents.  The latents are held constant for that outer gradient
(first-order meta-gradient).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffcore as dc
from . import metrics as M
from .diffcore import DTYPE, Tensor
from .inr import (ModulatedSiren, SignalSample, SirenConfig, fit_latent, latent_loss,
                  reconstruction_loss, render_grid)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}; "
                         "lower the outer learning rate")
        self.epoch, self.batch, self.loss = epoch, batch, loss


@dataclass(frozen=True)
class MetaConfig:
    inner_steps: int = 5
    test_inner_steps: int = 10
    inner_lr: float = 1e-2
    outer_lr: float = 5e-6
    weight_decay: float = 0.0
    batch_size: int = 1
    points_per_iter: int = 2048
    max_epochs: int = 1000
    patience: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.inner_steps < 1 or self.test_inner_steps < 0:
            raise ValueError("inner_steps must be >= 1 and test_inner_steps >= 0")
        if self.inner_lr <= 0 or self.outer_lr < 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.points_per_iter < 1:
            raise ValueError("batch_size and points_per_iter must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("need 0 <= patience <= max_epochs")


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""
    initial_val_loss: float = float("nan")

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]

    def record(self, train: float, val: float) -> bool:
        """Append one epoch; True if it is the new best."""
        self.train_loss.append(train)
        self.val_loss.append(val)
        if self.best_epoch < 0 or val < self.val_loss[self.best_epoch]:
            self.best_epoch = len(self.val_loss) - 1
            return True
        return False

    def epochs_since_best(self) -> int:
        return len(self.val_loss) - 1 - self.best_epoch

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (t, v) in enumerate(zip(self.train_loss, self.val_loss)):
                w.writerow([i, repr(float(t)), repr(float(v))])


def outer_gradients(model: ModulatedSiren, z: np.ndarray, coords, target):
    """Loss and gradients wrt every shared array, at a fixed latent."""
    loss, shared, hyper = latent_loss(model, Tensor(z), coords, target, requires_grad_params=True)
    return loss.item(), dc.backward(loss, shared + hyper)


def validation_loss(model: ModulatedSiren, signals: Sequence[SignalSample], cfg: MetaConfig) -> float:
    """Mean full-grid task loss after test-time fitting (seeded per signal)."""
    losses = []
    for j, s in enumerate(signals):
        z = fit_latent(s, model, cfg.test_inner_steps, cfg.inner_lr, cfg.points_per_iter, seed=j)
        losses.append(reconstruction_loss(s, model, z))
    return float(np.mean(losses))


def train_meta(dataset: Sequence[SignalSample], val_set: Sequence[SignalSample], cfg: MetaConfig,
               siren_cfg: SirenConfig, model: ModulatedSiren | None = None):
    """Meta-train (theta, psi); returns the best-validation model and its log."""
    if not dataset:
        raise ValueError("training set is empty")
    if model is None:
        model = ModulatedSiren.create(siren_cfg, seed=cfg.seed)
    params = model.arrays()
    opt = dc.AdamW(params, lr=cfg.outer_lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    inner_lr = DTYPE(cfg.inner_lr)
    tlog = TrainLog()
    tlog.initial_val_loss = validation_loss(model, val_set, cfg) if val_set else float("nan")
    best = model.copy()
    n = len(dataset)

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        batch_losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            grads = None
            batch_loss = 0.0
            for i in order[start:start + cfg.batch_size]:
                try:
                    loss, g = _inner_outer(model, dataset[i], cfg, inner_lr, rng)
                except FloatingPointError:
                    raise TrainingDiverged(epoch, b, float("nan")) from None
                batch_loss += loss
                grads = g if grads is None else [a + c for a, c in zip(grads, g)]
            m = len(order[start:start + cfg.batch_size])
            opt.step(params, [g / DTYPE(m) for g in grads] if m > 1 else grads)
            batch_losses.append(batch_loss / m)
        train = float(np.mean(batch_losses))
        try:
            val = validation_loss(model, val_set, cfg) if val_set else train
        except FloatingPointError:
            val = float("nan")
        if not np.isfinite(val):
            raise TrainingDiverged(epoch, -1, val)
        if tlog.record(train, val):
            best = model.copy()
        log.info("epoch %d train %.6g val %.6g", epoch, train, val)
        if tlog.epochs_since_best() > cfg.patience:
            tlog.stop_reason = "early_stop"
            break
    else:
        tlog.stop_reason = "max_epochs"
    return best, tlog


def _inner_outer(model: ModulatedSiren, sig: SignalSample, cfg: MetaConfig, inner_lr, rng):
    """K inner SGD steps on a fresh latent, then outer gradients at that latent."""
    z = np.zeros(model.cfg.latent_dim, dtype=DTYPE)
    pick = np.random.default_rng(rng.integers(2**63))
    for _ in range(cfg.inner_steps):
        coords, target = _subset(sig, cfg.points_per_iter, pick)
        zt = Tensor(z, requires_grad=True)
        loss, _, _ = latent_loss(model, zt, coords, target)
        (gz,) = dc.backward(loss, [zt])
        z = z - inner_lr * gz
    coords, target = _subset(sig, cfg.points_per_iter, pick)
    return outer_gradients(model, z, coords, target)


def _subset(sig: SignalSample, n_points: int, rng: np.random.Generator):
    if n_points >= len(sig):
        return sig.coords, sig.values
    idx = rng.choice(len(sig), size=n_points, replace=False)
    return sig.coords[idx], sig.values[idx]


def signal_metrics(pred: np.ndarray, target: np.ndarray, categorical: bool,
                   wanted: Sequence[str] | None = None) -> dict[str, float]:
    """Metrics between a rendered image and the target, both (H, W, c)."""
    if categorical:
        k = target.shape[-1]
        a, b = pred.argmax(axis=-1), target.argmax(axis=-1)
        out = {"dsc": M.mean_foreground(M.dsc, a, b, k), "iou": M.mean_foreground(M.iou, a, b, k)}
    else:
        p, t = pred[..., 0], target[..., 0]
        out = {"psnr": M.psnr(p, t), "ssim": M.ssim(p, t)}
    if wanted:
        out = {k: v for k, v in out.items() if k in wanted}
    return out


def evaluate_reconstruction(model: ModulatedSiren, signals: Sequence[SignalSample], steps: int = 10,
                            lr: float = 1e-2, n_points: int = 2048, metrics: Sequence[str] | None = None,
                            seed: int = 0) -> list[dict]:
    """Fit, render at native resolution and score every signal."""
    rows = []
    for j, s in enumerate(signals):
        z = fit_latent(s, model, steps, lr, n_points, seed=seed + j)
        pred = render_grid(model, z, s.native_resolution)
        row = {"index": j}
        row.update(signal_metrics(pred, s.image(), model.cfg.categorical, metrics))
        rows.append(row)
    return rows
