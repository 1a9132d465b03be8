"""Shift-modulated sine networks with a latent-to-modulation hypernetwork.

A signal is represented as ``phi(x; theta, M_psi(z))``: ``theta`` are the
trunk weights shared by a whole dataset, ``M_psi`` maps a short latent
``z`` to one additive pre-activation shift per hidden unit, and only ``z``
is optimised for a new signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import DTYPE, ShapeError, Tensor

FINAL_ACTIVATIONS = ("sigmoid", "softmax", "none")


@dataclass(frozen=True)
class SirenConfig:
    in_dim: int = 2
    out_dim: int = 1
    n_hidden_layers: int = 6
    hidden_size: int = 256
    omega0: float = 30.0
    final_activation: str = "sigmoid"
    latent_dim: int = 64
    hyper_hidden_layers: int = 1
    hyper_hidden_size: int = 64
    hyper_activation: str = "sine"

    def __post_init__(self):
        for name in ("in_dim", "out_dim", "n_hidden_layers", "hidden_size", "latent_dim",
                     "hyper_hidden_layers", "hyper_hidden_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"SirenConfig.{name} must be >= 1")
        if self.final_activation not in FINAL_ACTIVATIONS:
            raise ValueError(f"final_activation must be one of {FINAL_ACTIVATIONS}")
        if self.final_activation == "softmax" and self.out_dim < 2:
            raise ValueError("softmax output needs out_dim >= 2")

    @property
    def n_shifts(self) -> int:
        return self.n_hidden_layers * self.hidden_size

    @property
    def categorical(self) -> bool:
        return self.final_activation == "softmax"


@dataclass
class SharedParams:
    """Trunk weights: one (W, b) per sine layer, then the linear output layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]


@dataclass
class Hypernet:
    """MLP from latent to shifts; the last layer starts at zero."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


def init_shared(cfg: SirenConfig, rng: np.random.Generator) -> SharedParams:
    weights, biases = [], []
    fan_in = cfg.in_dim
    for layer in range(cfg.n_hidden_layers):
        if layer == 0:
            bound = 1.0 / fan_in
        else:
            bound = np.sqrt(6.0 / fan_in) / cfg.omega0
        weights.append(_uniform(rng, bound, (cfg.hidden_size, fan_in)))
        biases.append(_uniform(rng, 1.0 / np.sqrt(fan_in), (cfg.hidden_size,)))
        fan_in = cfg.hidden_size
    bound = np.sqrt(6.0 / fan_in) / cfg.omega0
    weights.append(_uniform(rng, bound, (cfg.out_dim, fan_in)))
    biases.append(np.zeros(cfg.out_dim, dtype=DTYPE))
    return SharedParams(weights, biases)


def init_hypernet(cfg: SirenConfig, rng: np.random.Generator) -> Hypernet:
    weights, biases = [], []
    fan_in = cfg.latent_dim
    for layer in range(cfg.hyper_hidden_layers):
        if layer == 0 or cfg.hyper_activation != "sine":
            bound = 1.0 / fan_in
        else:
            bound = np.sqrt(6.0 / fan_in) / cfg.omega0
        weights.append(_uniform(rng, bound, (cfg.hyper_hidden_size, fan_in)))
        biases.append(_uniform(rng, 1.0 / np.sqrt(fan_in), (cfg.hyper_hidden_size,)))
        fan_in = cfg.hyper_hidden_size
    weights.append(np.zeros((cfg.n_shifts, fan_in), dtype=DTYPE))
    biases.append(np.zeros(cfg.n_shifts, dtype=DTYPE))
    return Hypernet(weights, biases)


@dataclass
class ModulatedSiren:
    """Config plus trunk and hypernetwork parameters of one INR."""

    cfg: SirenConfig
    shared: SharedParams
    hyper: Hypernet

    @classmethod
    def create(cls, cfg: SirenConfig, seed: int = 0) -> "ModulatedSiren":
        rng = np.random.default_rng(seed)
        return cls(cfg, init_shared(cfg, rng), init_hypernet(cfg, rng))

    def arrays(self) -> list[np.ndarray]:
        """All trainable arrays, trunk first (these are the live buffers)."""
        return self.shared.arrays() + self.hyper.arrays()

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.shared.weights, self.shared.biases)):
            out[f"trunk.{i}.weight"] = w
            out[f"trunk.{i}.bias"] = b
        for i, (w, b) in enumerate(zip(self.hyper.weights, self.hyper.biases)):
            out[f"hyper.{i}.weight"] = w
            out[f"hyper.{i}.bias"] = b
        return out

    @classmethod
    def from_named_arrays(cls, cfg: SirenConfig, arrays: dict[str, np.ndarray]) -> "ModulatedSiren":
        n_trunk = cfg.n_hidden_layers + 1
        n_hyper = cfg.hyper_hidden_layers + 1
        try:
            shared = SharedParams([arrays[f"trunk.{i}.weight"] for i in range(n_trunk)],
                                  [arrays[f"trunk.{i}.bias"] for i in range(n_trunk)])
            hyper = Hypernet([arrays[f"hyper.{i}.weight"] for i in range(n_hyper)],
                             [arrays[f"hyper.{i}.bias"] for i in range(n_hyper)])
        except KeyError as exc:
            raise ShapeError(f"missing parameter {exc.args[0]} for this config") from None
        model = cls(cfg, shared, hyper)
        ref = cls.create(cfg)
        for (name, a), b in zip(model.named_arrays().items(), ref.arrays()):
            if a.shape != b.shape:
                raise ShapeError(f"{name}: shape {a.shape} does not match config {b.shape}")
        return model

    def copy(self) -> "ModulatedSiren":
        return ModulatedSiren(
            self.cfg,
            SharedParams([w.copy() for w in self.shared.weights], [b.copy() for b in self.shared.biases]),
            Hypernet([w.copy() for w in self.hyper.weights], [b.copy() for b in self.hyper.biases]),
        )

    def tensors(self, requires_grad: bool = False) -> tuple[list[Tensor], list[Tensor]]:
        shared = [Tensor(a, requires_grad) for a in self.shared.arrays()]
        hyper = [Tensor(a, requires_grad) for a in self.hyper.arrays()]
        return shared, hyper


@dataclass
class SignalSample:
    """A discrete signal: points in [-1, 1]^d and their channel values."""

    coords: np.ndarray
    values: np.ndarray
    native_resolution: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=DTYPE)
        self.values = np.asarray(self.values, dtype=DTYPE)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.coords.ndim != 2 or self.coords.shape[0] != self.values.shape[0]:
            raise ShapeError(f"coords {self.coords.shape} and values {self.values.shape} disagree")
        if self.native_resolution and int(np.prod(self.native_resolution)) != len(self.coords):
            raise ShapeError(f"{len(self.coords)} points but resolution {self.native_resolution}")

    def __len__(self):
        return len(self.coords)

    @classmethod
    def from_grid(cls, values: np.ndarray, channels: int | None = None) -> "SignalSample":
        """Wrap an image of shape ``resolution`` or ``resolution + (c,)``."""
        values = np.asarray(values, dtype=DTYPE)
        if channels is None:
            resolution = values.shape
            flat = values.reshape(-1, 1)
        else:
            resolution = values.shape[:-1]
            flat = values.reshape(-1, channels)
        return cls(grid_coords(resolution), flat, tuple(resolution))

    def image(self) -> np.ndarray:
        """Values reshaped back onto the native grid (channel axis last)."""
        return self.values.reshape(*self.native_resolution, self.values.shape[1])


def grid_coords(resolution) -> np.ndarray:
    """Cell-centred points of [-1, 1]^d, row-major, axis i in column i."""
    axes = [(2 * np.arange(n, dtype=np.float64) + 1) / n - 1 for n in resolution]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1).astype(DTYPE)


# ---------------------------------------------------------------------------
# forward passes on the autodiff graph


def hypernet_graph(z: Tensor, hyper: list[Tensor], cfg: SirenConfig) -> Tensor:
    h = z
    n = len(hyper) // 2
    for i in range(n - 1):
        h = dc.activation(dc.linear(h, hyper[2 * i], hyper[2 * i + 1]), cfg.hyper_activation, cfg.omega0)
    return dc.linear(h, hyper[-2], hyper[-1])


def trunk_graph(coords: Tensor, shared: list[Tensor], gamma: Tensor, cfg: SirenConfig) -> Tensor:
    """Pre-activation output of the trunk (logits for softmax outputs)."""
    h = coords
    hs = cfg.hidden_size
    for layer in range(cfg.n_hidden_layers):
        u = dc.linear(h, shared[2 * layer], shared[2 * layer + 1])
        u = dc.add(u, dc.take(gamma, slice(layer * hs, (layer + 1) * hs)))
        h = dc.sine(u, cfg.omega0)
    return dc.linear(h, shared[-2], shared[-1])


def task_loss(out: Tensor, target: np.ndarray, cfg: SirenConfig) -> Tensor:
    """MSE for continuous outputs, cross-entropy for softmax outputs."""
    if cfg.final_activation == "softmax":
        return dc.cross_entropy(out, target)
    if cfg.final_activation == "sigmoid":
        out = dc.sigmoid(out)
    return dc.mse(out, target)


def latent_loss(model: ModulatedSiren, z: Tensor, coords: np.ndarray, target: np.ndarray,
                requires_grad_params: bool = False):
    shared, hyper = model.tensors(requires_grad_params)
    gamma = hypernet_graph(z, hyper, model.cfg)
    out = trunk_graph(Tensor(coords), shared, gamma, model.cfg)
    return task_loss(out, target, model.cfg), shared, hyper


# ---------------------------------------------------------------------------
# plain evaluation


def hypernet_forward(z: np.ndarray, model: ModulatedSiren) -> np.ndarray:
    z = np.asarray(z, dtype=DTYPE)
    if z.shape != (model.cfg.latent_dim,):
        raise ShapeError(f"latent has shape {z.shape}, expected ({model.cfg.latent_dim},)")
    _, hyper = model.tensors()
    return hypernet_graph(Tensor(z), hyper, model.cfg).data


def inr_forward(coords: np.ndarray, model: ModulatedSiren, gamma: np.ndarray) -> np.ndarray:
    """Evaluate the modulated network at ``coords`` (N x d) -> N x c."""
    cfg = model.cfg
    coords = np.asarray(coords, dtype=DTYPE)
    if coords.ndim != 2 or coords.shape[1] != cfg.in_dim:
        raise ShapeError(f"coords {coords.shape} do not match in_dim {cfg.in_dim}")
    gamma = np.asarray(gamma, dtype=DTYPE)
    if gamma.shape != (cfg.n_shifts,):
        raise ShapeError(f"modulations {gamma.shape}, expected ({cfg.n_shifts},)")
    shared, _ = model.tensors()
    out = trunk_graph(Tensor(coords), shared, Tensor(gamma), cfg)
    if cfg.final_activation == "none":
        return out.data
    return dc.activation(out, cfg.final_activation).data


def evaluate(coords: np.ndarray, model: ModulatedSiren, z: np.ndarray, chunk: int = 16384) -> np.ndarray:
    """Values of the signal encoded by latent ``z`` at ``coords``."""
    gamma = hypernet_forward(z, model)
    parts = [inr_forward(coords[i:i + chunk], model, gamma) for i in range(0, max(len(coords), 1), chunk)]
    return np.concatenate(parts, axis=0)


def render_grid(model: ModulatedSiren, z: np.ndarray, resolution) -> np.ndarray:
    """Image of shape ``resolution + (c,)`` sampled at the cell centres."""
    resolution = tuple(int(n) for n in resolution)
    if len(resolution) != model.cfg.in_dim or min(resolution) < 1:
        raise ShapeError(f"resolution {resolution} invalid for in_dim {model.cfg.in_dim}")
    values = evaluate(grid_coords(resolution), model, z)
    return values.reshape(*resolution, model.cfg.out_dim)


# ---------------------------------------------------------------------------
# test-time latent fitting


def sample_points(n_total: int, n_points: int, rng: np.random.Generator) -> np.ndarray | None:
    """Indices of one inner-step minibatch, or None for "use every point"."""
    if n_points >= n_total:
        return None
    return rng.choice(n_total, size=n_points, replace=False)


def latent_step_grad(model: ModulatedSiren, z: np.ndarray, coords, target) -> tuple[float, np.ndarray]:
    zt = Tensor(z, requires_grad=True)
    loss, _, _ = latent_loss(model, zt, coords, target)
    (gz,) = dc.backward(loss, [zt])
    return loss.item(), gz


def fit_latent(signal: SignalSample, model: ModulatedSiren, steps: int = 10, lr: float = 1e-2,
               n_points: int = 2048, seed: int = 0, return_losses: bool = False):
    """Fit a latent to ``signal`` by ``steps`` SGD updates starting at zero.

    Shared parameters are read only.  Each step draws a fresh point subset.
    """
    if len(signal) == 0:
        raise ValueError("cannot fit an empty signal")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    rng = np.random.default_rng(seed)
    z = np.zeros(model.cfg.latent_dim, dtype=DTYPE)
    lr = DTYPE(lr)
    losses = []
    for _ in range(steps):
        idx = sample_points(len(signal), n_points, rng)
        if idx is None:
            coords, target = signal.coords, signal.values
        else:
            coords, target = signal.coords[idx], signal.values[idx]
        loss, gz = latent_step_grad(model, z, coords, target)
        losses.append(loss)
        z = z - lr * gz
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("latent diverged during fitting")
    return (z, losses) if return_losses else z


def reconstruction_loss(signal: SignalSample, model: ModulatedSiren, z: np.ndarray) -> float:
    shared, hyper = model.tensors()
    gamma = hypernet_graph(Tensor(z), hyper, model.cfg)
    out = trunk_graph(Tensor(signal.coords), shared, gamma, model.cfg)
    return task_loss(out, signal.values, model.cfg).item()
