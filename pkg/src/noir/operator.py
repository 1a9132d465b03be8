"""Discrete operators between latent spaces.

``MLPOperator`` is a residual MLP trained on paired latents with AdamW;
``LinearOperator`` is the closed-form ridge baseline.  Both are callables
mapping a latent (or a batch of latents) to a predicted output latent,
which is what :func:`predict_pipeline` needs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import DTYPE, ShapeError, Tensor
from .errors import ConfigError, DimensionMismatch
from .inr import ModulatedSiren, SignalSample, fit_latent, render_grid
from .meta import TrainLog, TrainingDiverged


class RidgeSingularError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class OperatorConfig:
    in_dim: int = 64
    out_dim: int = 64
    n_hidden_layers: int = 1
    hidden_dim: int = 128
    activation: str = "silu"
    residual: bool = True
    dropout: float = 0.0
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 50
    seed: int = 0

    def __post_init__(self):
        if min(self.in_dim, self.out_dim, self.hidden_dim) < 1 or self.n_hidden_layers < 0:
            raise ValueError("operator dimensions must be positive")
        if self.activation not in ("silu", "relu"):
            raise ValueError(f"activation must be silu or relu, got {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("need 0 <= patience <= max_epochs")


# ---------------------------------------------------------------------------
# latent pair sets


@dataclass
class LatentPairSet:
    z_in: np.ndarray
    z_out: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        self.z_in = np.asarray(self.z_in, dtype=DTYPE)
        self.z_out = np.asarray(self.z_out, dtype=DTYPE)
        self.split = np.asarray(self.split, dtype=str)
        if not (len(self.z_in) == len(self.z_out) == len(self.split)):
            raise ShapeError("z_in, z_out and split must have the same number of rows")
        if self.z_in.ndim != 2 or self.z_out.ndim != 2:
            raise ShapeError("latents must be 2-D (rows, dim)")

    def __len__(self):
        return len(self.z_in)

    def part(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        m = self.split == split
        return self.z_in[m], self.z_out[m]

    def to_csv(self, path) -> None:
        p, q = self.z_in.shape[1], self.z_out.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "split"] + [f"in_{i}" for i in range(p)] + [f"out_{j}" for j in range(q)])
            for i in range(len(self)):
                w.writerow([i, self.split[i]] + [repr(float(v)) for v in self.z_in[i]]
                           + [repr(float(v)) for v in self.z_out[i]])

    @classmethod
    def from_csv(cls, path) -> "LatentPairSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n_in = sum(h.startswith("in_") for h in header)
        split = [r[1] for r in body]
        values = np.array([[float(v) for v in r[2:]] for r in body], dtype=DTYPE).reshape(len(body), -1)
        return cls(values[:, :n_in], values[:, n_in:], split)


# ---------------------------------------------------------------------------
# residual MLP


@dataclass
class OperatorParams:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "OperatorParams":
        return OperatorParams({k: v.copy() for k, v in self.arrays.items()})


def _torch_default(rng, fan_out, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return (rng.uniform(-bound, bound, (fan_out, fan_in)).astype(DTYPE),
            rng.uniform(-bound, bound, fan_out).astype(DTYPE))


def init_operator(cfg: OperatorConfig, seed: int | None = None) -> OperatorParams:
    """Residual branches end in zero layers, so a fresh block is the identity."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    a = {}
    hd = cfg.hidden_dim
    if cfg.in_dim != hd:
        a["in.weight"], a["in.bias"] = _torch_default(rng, hd, cfg.in_dim)
    for i in range(cfg.n_hidden_layers):
        a[f"block.{i}.fc1.weight"], a[f"block.{i}.fc1.bias"] = _torch_default(rng, hd, hd)
        if cfg.residual:
            a[f"block.{i}.fc2.weight"] = np.zeros((hd, hd), dtype=DTYPE)
            a[f"block.{i}.fc2.bias"] = np.zeros(hd, dtype=DTYPE)
    if cfg.out_dim != hd:
        a["out.weight"], a["out.bias"] = _torch_default(rng, cfg.out_dim, hd)
    return OperatorParams(a)


def _dropout(h: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate == 0.0 or rng is None:
        return h
    keep = (rng.random(h.shape) >= rate).astype(DTYPE) / DTYPE(1.0 - rate)
    return dc.mul(h, Tensor(keep))


def operator_graph(z: Tensor, params: dict[str, Tensor], cfg: OperatorConfig,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Forward pass on the autodiff graph; ``rng`` enables dropout."""
    act = cfg.activation
    h = z
    if "in.weight" in params:
        h = dc.linear(h, params["in.weight"], params["in.bias"])
    for i in range(cfg.n_hidden_layers):
        u = dc.activation(dc.linear(h, params[f"block.{i}.fc1.weight"], params[f"block.{i}.fc1.bias"]), act)
        if cfg.residual:
            u = dc.activation(dc.linear(u, params[f"block.{i}.fc2.weight"], params[f"block.{i}.fc2.bias"]), act)
            h = dc.add(h, _dropout(u, cfg.dropout, rng))
        else:
            h = _dropout(u, cfg.dropout, rng)
    if "out.weight" in params:
        h = dc.linear(h, params["out.weight"], params["out.bias"])
    return h


def op_forward(z_in: np.ndarray, params: OperatorParams, cfg: OperatorConfig, mode: str = "eval",
               rng: np.random.Generator | None = None) -> np.ndarray:
    z_in = np.asarray(z_in, dtype=DTYPE)
    if z_in.shape[-1] != cfg.in_dim or z_in.ndim not in (1, 2):
        raise ShapeError(f"operator expects latents of length {cfg.in_dim}, got {z_in.shape}")
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    if mode == "train" and cfg.dropout > 0 and rng is None:
        raise ValueError("train mode with dropout needs a seeded rng")
    tensors = {k: Tensor(v) for k, v in params.arrays.items()}
    return operator_graph(Tensor(z_in), tensors, cfg, rng if mode == "train" else None).data


def latent_mse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((np.asarray(pred, np.float64) - target) ** 2))


@dataclass
class MLPOperator:
    cfg: OperatorConfig
    params: OperatorParams

    @property
    def in_dim(self):
        return self.cfg.in_dim

    @property
    def out_dim(self):
        return self.cfg.out_dim

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return op_forward(z, self.params, self.cfg, "eval")


def train_operator(pairs: LatentPairSet, cfg: OperatorConfig) -> tuple[MLPOperator, TrainLog]:
    """Minimise latent MSE with AdamW; early stop on validation latent MSE."""
    x, y = pairs.part("train")
    if len(x) == 0:
        raise ValueError("no training pairs")
    if x.shape[1] != cfg.in_dim or y.shape[1] != cfg.out_dim:
        raise DimensionMismatch(f"pairs are {x.shape[1]}->{y.shape[1]} but operator is {cfg.in_dim}->{cfg.out_dim}")
    xv, yv = pairs.part("val")
    params = init_operator(cfg)
    names = list(params.arrays)
    arrays = [params.arrays[k] for k in names]
    opt = dc.AdamW(arrays, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    tlog = TrainLog()

    def val_loss():
        if len(xv) == 0:
            return latent_mse(op_forward(x, params, cfg), y)
        return latent_mse(op_forward(xv, params, cfg), yv)

    tlog.initial_val_loss = val_loss()
    best = params.copy()
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(x))
        losses, weights = [], []
        for b, start in enumerate(range(0, len(x), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            tensors = {k: Tensor(a, requires_grad=True) for k, a in zip(names, arrays)}
            pred = operator_graph(Tensor(x[idx]), tensors, cfg, rng if cfg.dropout > 0 else None)
            loss = dc.mse(pred, y[idx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch, b, loss.item())
            grads = dc.backward(loss, [tensors[k] for k in names])
            opt.step(arrays, grads)
            losses.append(loss.item())
            weights.append(len(idx))
        val = val_loss()
        if tlog.record(float(np.average(losses, weights=weights)), val):
            best = params.copy()
        if tlog.epochs_since_best() > cfg.patience:
            tlog.stop_reason = "early_stop"
            break
    else:
        tlog.stop_reason = "max_epochs"
    return MLPOperator(cfg, best), tlog


# ---------------------------------------------------------------------------
# ridge baseline


@dataclass
class LinearOperator:
    """``z_out ~= A @ z_in + c``."""

    A: np.ndarray
    c: np.ndarray

    @property
    def in_dim(self):
        return self.A.shape[1]

    @property
    def out_dim(self):
        return self.A.shape[0]

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=DTYPE)
        if z.shape[-1] != self.in_dim:
            raise ShapeError(f"linear operator expects length {self.in_dim}, got {z.shape}")
        return (z @ self.A.T + self.c).astype(DTYPE)


def fit_linear_operator(pairs: LatentPairSet, lam: float = 1e-3) -> LinearOperator:
    """Ridge regression on centred training pairs via a Cholesky solve.

    Rows are put in a canonical order first so the result does not depend
    on the order the pairs arrive in.
    """
    x, y = pairs.part("train")
    if len(x) < 2:
        raise ValueError("ridge fit needs at least two training pairs")
    if lam < 0:
        raise ValueError("ridge lambda must be >= 0")
    xy = np.concatenate([x, y], axis=1)
    order = np.lexsort(xy.T[::-1])
    x = x[order].astype(np.float64)
    y = y[order].astype(np.float64)
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    gram = xc.T @ xc + lam * np.eye(x.shape[1])
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise RidgeSingularError("normal matrix is singular; use a ridge lambda > 0") from None
    # gram @ A.T = xc.T @ yc
    rhs = xc.T @ yc
    at = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    if not np.all(np.isfinite(at)):
        raise RidgeSingularError("normal matrix is numerically singular; use a ridge lambda > 0")
    a = at.T
    return LinearOperator(a.astype(DTYPE), (my - a @ mx).astype(DTYPE))


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class Pipeline:
    """Input INR, latent operator and output INR plus the fitting protocol."""

    input_model: ModulatedSiren
    operator: object
    output_model: ModulatedSiren
    steps: int = 10
    lr: float = 1e-2
    n_points: int = 2048

    def __post_init__(self):
        p_in, p_out = self.input_model.cfg.latent_dim, self.output_model.cfg.latent_dim
        if self.operator.in_dim != p_in or self.operator.out_dim != p_out:
            raise DimensionMismatch(
                f"operator maps {self.operator.in_dim}->{self.operator.out_dim} but the INRs "
                f"have latent sizes {p_in} (input) and {p_out} (output)")

    def encode(self, signal: SignalSample, seed: int = 0) -> np.ndarray:
        return fit_latent(signal, self.input_model, self.steps, self.lr, self.n_points, seed)

    def map(self, z_in: np.ndarray) -> np.ndarray:
        return np.asarray(self.operator(z_in), dtype=DTYPE)

    def decode(self, z_out: np.ndarray, resolution) -> np.ndarray:
        return render_grid(self.output_model, z_out, resolution)


def predict_pipeline(signal: SignalSample, pipeline: Pipeline, resolution=None, seed: int = 0) -> np.ndarray:
    """Fit the input latent, map it, and render the output INR."""
    resolution = resolution or signal.native_resolution
    return pipeline.decode(pipeline.map(pipeline.encode(signal, seed)), resolution)
