"""File-level steps of the pipeline, shared by the CLI and the tests.

Every step reads and writes plain files under one run directory::

    data/            inputs.npy, targets.npy, manifest.csv, dataset.json, pgm/
    input_inr.ckpt   output_inr.ckpt   operator.ckpt
    latents_input.ckpt   latents_output.ckpt   pairs.csv
    *_log.csv, eval_*.csv, reno_*, ablation.csv, figures/*.png
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from . import plotting
from .checkpoint import Checkpoint
from .config import RunConfig
from .inr import ModulatedSiren, SirenConfig, fit_latent, render_grid
from .meta import TrainLog, evaluate_reconstruction, signal_metrics, train_meta
from .errors import ConfigError, DimensionMismatch
from .operator import (LatentPairSet, LinearOperator, MLPOperator, OperatorConfig,
                       OperatorParams, Pipeline, fit_linear_operator, predict_pipeline, train_operator)
from .pgm import write_gray, write_pgm
from .reno import ResolutionSet, dice_by_resolution, epsilon_estimate, write_rows
from .tasks import PairedDataset, TaskSpec, generate

log = logging.getLogger(__name__)

SIDES = ("input", "output")


# ---------------------------------------------------------------------------
# dataset files


def save_dataset(ds: PairedDataset, data_dir) -> Path:
    d = Path(data_dir)
    (d / "pgm").mkdir(parents=True, exist_ok=True)
    np.save(d / "inputs.npy", ds.inputs)
    np.save(d / "targets.npy", ds.targets)
    spec = ds.spec
    meta = {"kind": spec.kind, "resolution": spec.resolution, "n_samples": spec.n_samples, "noise": spec.noise,
            "shape_count": list(spec.shape_count), "seed": spec.seed, "splits": list(spec.splits)}
    (d / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(d / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "split", "input", "target"])
        for i in range(len(ds)):
            paths = []
            for side, img, cat in (("input", ds.inputs[i], spec.input_categorical),
                                   ("target", ds.targets[i], spec.target_categorical)):
                rel = f"pgm/{i:04d}_{side}.pgm"
                write_image(d / rel, img, cat)
                paths.append(rel)
            w.writerow([i, ds.split[i], *paths])
    return d


def load_dataset(data_dir) -> PairedDataset:
    d = Path(data_dir)
    for name in ("inputs.npy", "targets.npy", "manifest.csv", "dataset.json"):
        if not (d / name).is_file():
            raise FileNotFoundError(f"{d / name} is missing; run `noir gen` first")
    meta = json.loads((d / "dataset.json").read_text())
    spec = TaskSpec(kind=meta["kind"], resolution=meta["resolution"], n_samples=meta["n_samples"],
                    noise=meta["noise"], shape_count=tuple(meta["shape_count"]), seed=meta["seed"],
                    splits=tuple(meta["splits"]))
    with open(d / "manifest.csv", newline="") as fh:
        split = np.array([row["split"] for row in csv.DictReader(fh)])
    return PairedDataset(spec, np.load(d / "inputs.npy"), np.load(d / "targets.npy"), split)


def write_image(path, img: np.ndarray, categorical: bool) -> Path:
    """PGM of class indices (categorical) or quantised channel 0."""
    if categorical:
        return write_pgm(path, img.argmax(axis=-1).astype(np.uint8))
    return write_gray(path, img[..., 0])


# ---------------------------------------------------------------------------
# checkpoints of components


def save_inr(model: ModulatedSiren, side: str, path) -> Path:
    cfg = {k: getattr(model.cfg, k) for k in model.cfg.__dataclass_fields__}
    return Checkpoint(f"{side}_inr", {"siren": cfg}, model.named_arrays()).save(path)


def load_inr(path, side: str | None = None) -> ModulatedSiren:
    tags = (f"{side}_inr",) if side else ("input_inr", "output_inr")
    ckpt = Checkpoint.load(path, tags)
    return ModulatedSiren.from_named_arrays(SirenConfig(**ckpt.config["siren"]), ckpt.tensors)


def save_operator(op, path) -> Path:
    if isinstance(op, LinearOperator):
        return Checkpoint("operator", {"kind": "linear"}, {"A": op.A, "c": op.c}).save(path)
    cfg = {k: getattr(op.cfg, k) for k in op.cfg.__dataclass_fields__}
    return Checkpoint("operator", {"kind": "mlp", "operator": cfg}, op.params.arrays).save(path)


def load_operator(path):
    ckpt = Checkpoint.load(path, "operator")
    if ckpt.config.get("kind") == "linear":
        return LinearOperator(ckpt.tensors["A"], ckpt.tensors["c"])
    return MLPOperator(OperatorConfig(**ckpt.config["operator"]), OperatorParams(dict(ckpt.tensors)))


def save_latents(z: np.ndarray, split, side: str, info: dict, path) -> Path:
    config = {"side": side, "split": [str(s) for s in split], **info}
    return Checkpoint("latents", config, {"z": z}).save(path)


def load_latents(path) -> tuple[np.ndarray, Checkpoint]:
    ckpt = Checkpoint.load(path, "latents")
    return ckpt.tensors["z"], ckpt


# ---------------------------------------------------------------------------
# steps


class Run:
    """One run directory plus its configuration."""

    def __init__(self, cfg: RunConfig, out_dir, data_dir=None, inner_steps: int | None = None):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.data_dir = Path(data_dir) if data_dir else self.out / "data"
        self.inner_steps = cfg["meta"]["test_inner_steps"] if inner_steps is None else inner_steps
        self._dataset = None

    @property
    def figures(self) -> Path:
        return self.out / "figures"

    def dataset(self) -> PairedDataset:
        if self._dataset is None:
            self._dataset = load_dataset(self.data_dir)
        return self._dataset

    def path(self, name: str) -> Path:
        return self.out / name

    # -- gen --
    def gen(self) -> Path:
        ds = generate(self.cfg.task_spec())
        self._dataset = ds
        return save_dataset(ds, self.data_dir)

    def _check_channels(self, side: str, scfg: SirenConfig):
        ds = self.dataset()
        arr = ds.inputs if side == "input" else ds.targets
        if arr.shape[-1] != scfg.out_dim:
            raise DimensionMismatch(f"{side}_inr.Out is {scfg.out_dim} but the {ds.spec.kind} {side} images have "
                              f"{arr.shape[-1]} channels; set {side}_inr.Out={arr.shape[-1]}")

    # -- train-inr --
    def train_inr(self, side: str) -> tuple[ModulatedSiren, TrainLog]:
        scfg, mcfg = self.cfg.siren_config(side), self.cfg.meta_config(side)
        self._check_channels(side, scfg)
        ds = self.dataset()
        key = "input" if side == "input" else "target"
        model, tlog = train_meta(ds.signals(key, "train"), ds.signals(key, "val"), mcfg, scfg)
        save_inr(model, side, self.path(f"{side}_inr.ckpt"))
        tlog.to_csv(self.path(f"{side}_inr_log.csv"))
        plotting.plot_train_log(tlog, self.figures / f"{side}_inr_log.png", f"{side} INR")
        return model, tlog

    def model(self, side: str, path=None) -> ModulatedSiren:
        return load_inr(path or self.path(f"{side}_inr.ckpt"), side)

    # -- fit --
    def fit(self, side: str, model_path=None) -> Path:
        model_path = Path(model_path or self.path(f"{side}_inr.ckpt"))
        model = load_inr(model_path, side)
        self._check_channels(side, model.cfg)
        ds = self.dataset()
        lr = self.cfg[f"{side}_inr"]["LRL"]
        n_points = self.cfg["meta"]["points_per_iter"]
        get = ds.input_signal if side == "input" else ds.target_signal
        z = np.stack([fit_latent(get(i), model, self.inner_steps, lr, n_points, seed=self.cfg.seed + i)
                      for i in range(len(ds))])
        info = {"model": model_path.name, "steps": self.inner_steps, "lr": lr, "n_points": n_points,
                "seed": self.cfg.seed}
        return save_latents(z, ds.split, side, info, self.path(f"latents_{side}.ckpt"))

    def pairs(self, in_path=None, out_path=None) -> LatentPairSet:
        z_in, ck_in = load_latents(in_path or self.path("latents_input.ckpt"))
        z_out, ck_out = load_latents(out_path or self.path("latents_output.ckpt"))
        if ck_in.config["split"] != ck_out.config["split"]:
            raise ConfigError("input and output latents come from different datasets (split tags differ)")
        return LatentPairSet(z_in, z_out, ck_in.config["split"])

    # -- train-op --
    def train_op(self, in_path=None, out_path=None) -> tuple[MLPOperator, TrainLog]:
        pairs = self.pairs(in_path, out_path)
        ocfg = self.cfg.operator_config()
        op, tlog = train_operator(pairs, ocfg)
        save_operator(op, self.path("operator.ckpt"))
        tlog.to_csv(self.path("operator_log.csv"))
        pairs.to_csv(self.path("pairs.csv"))
        plotting.plot_train_log(tlog, self.figures / "operator_log.png", "latent operator")
        return op, tlog

    def pipeline(self, operator=None) -> Pipeline:
        op = operator if operator is not None else load_operator(self.path("operator.ckpt"))
        return Pipeline(self.model("input"), op, self.model("output"), steps=self.inner_steps,
                        lr=self.cfg["input_inr"]["LRL"], n_points=self.cfg["meta"]["points_per_iter"])

    # -- eval --
    def test_items(self):
        ds = self.dataset()
        idx = ds.indices("test")
        if len(idx) == 0:
            raise ConfigError("the dataset has no test split")
        return ds, idx

    def predict_rows(self, pipe: Pipeline) -> list[dict]:
        ds, idx = self.test_items()
        rows = []
        for i in idx:
            pred = predict_pipeline(ds.input_signal(i), pipe, seed=self.cfg.seed + int(i))
            rows.append({"sample": int(i), **signal_metrics(pred, ds.targets[i], ds.spec.target_categorical)})
        return rows

    def eval(self) -> dict[str, Path]:
        rows = self.predict_rows(self.pipeline())
        summary = [{"metric": k, "mean": float(np.mean([r[k] for r in rows]))} for k in rows[0] if k != "sample"]
        paths = {"per_sample": self.path("eval_per_sample.csv"), "summary": self.path("eval_summary.csv")}
        write_rows(paths["per_sample"], rows)
        write_rows(paths["summary"], summary)
        ds, idx = self.test_items()
        for side, key in (("input", "input"), ("output", "target")):
            model = self.model(side)
            recon = evaluate_reconstruction(model, ds.signals(key, "test"), self.inner_steps,
                                            self.cfg[f"{side}_inr"]["LRL"], self.cfg["meta"]["points_per_iter"],
                                            seed=self.cfg.seed)
            for r, i in zip(recon, idx):
                r["index"] = int(i)
            paths[f"recon_{side}"] = self.path(f"eval_recon_{side}.csv")
            write_rows(paths[f"recon_{side}"], recon)
        return paths

    # -- reno --
    def reno(self, resolutions: ResolutionSet | None = None, render_pgm: bool | None = None):
        resolutions = resolutions or ResolutionSet.parse(self.cfg["reno"]["resolutions"])
        ds, idx = self.test_items()
        if max(resolutions.sizes[-1]) > ds.spec.resolution:
            raise ConfigError(f"highest audit resolution {resolutions.labels()[-1]} exceeds the data "
                              f"resolution {ds.spec.resolution}")
        pipe = self.pipeline()
        report = epsilon_estimate(ds.inputs[idx], ds.targets[idx], pipe, resolutions, seed=self.cfg.seed)
        paths = report.write(self.out)
        plotting.plot_latent_matrices(report, self.figures / "reno_latent_mse.png")
        metric = "dsc" if ds.spec.target_categorical else "psnr"
        if ds.spec.target_categorical:
            rows, summary = dice_by_resolution(None, None, pipe, resolutions, report=report)
            paths["dice"] = self.path("reno_dice.csv")
            paths["dice_summary"] = self.path("reno_dice_summary.csv")
            write_rows(paths["dice"], rows)
            write_rows(paths["dice_summary"], summary)
        plotting.plot_metric_by_resolution(report.metric_table(), metric, resolutions.labels(),
                                           self.figures / f"reno_{metric}.png")
        if render_pgm if render_pgm is not None else self.cfg["reno"]["render_pgm"]:
            for j, s in enumerate(report.samples):
                for r, res in enumerate(resolutions):
                    img = pipe.decode(s.z_out[r], res)
                    write_image(self.out / "reno_pgm" / f"{int(idx[j]):04d}_{resolutions.labels()[r]}.pgm",
                                img, ds.spec.target_categorical)
        return report, paths

    # -- render --
    def render(self, latents_path, index: int, resolution, model_path=None, out_path=None) -> Path:
        z, ckpt = load_latents(latents_path)
        side = ckpt.config["side"]
        model_path = model_path or Path(latents_path).parent / ckpt.config["model"]
        model = load_inr(model_path, side)
        if z.shape[1] != model.cfg.latent_dim:
            raise DimensionMismatch(f"latents have size {z.shape[1]} but {model_path} expects {model.cfg.latent_dim}")
        if not 0 <= index < len(z):
            raise ConfigError(f"index {index} out of range for {len(z)} latents")
        img = render_grid(model, z[index], resolution)
        out_path = out_path or self.path(f"render_{side}_{index:04d}_{resolution[1]}x{resolution[0]}.pgm")
        return write_image(out_path, img, model.cfg.categorical)

    # -- ablate-op --
    def ablate_op(self) -> tuple[list[dict], Path]:
        pairs = self.pairs()
        ridge = fit_linear_operator(pairs, self.cfg["ablation"]["ridge_lambda"])
        save_operator(ridge, self.path("operator_linear.ckpt"))
        mlp = load_operator(self.path("operator.ckpt"))
        rows = []
        for name, op in (("Linear Regression", ridge), ("MLP", mlp)):
            preds = self.predict_rows(self.pipeline(op))
            for metric in [k for k in preds[0] if k != "sample"]:
                rows.append({"operator": name, "metric": metric,
                             "value": float(np.mean([r[metric] for r in preds]))})
        path = self.path("ablation.csv")
        write_rows(path, rows)
        plotting.plot_ablation(rows, self.figures / "ablation.png")
        return rows, path

    def all(self) -> None:
        self.gen()
        for side in SIDES:
            self.train_inr(side)
        for side in SIDES:
            self.fit(side)
        self.train_op()
        self.eval()
        self.reno()
        self.ablate_op()
