"""Resolution-consistency audit of a trained pipeline.

For each test sample the input is box-filtered down to every resolution
of a :class:`ResolutionSet`, the input latent is refit at each one and
mapped through the operator.  Pairwise mean squared differences between
the latents, and task errors of the rendered outputs against the target
at the same resolution, give per-sample and dataset-level bounds.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError
from .inr import SignalSample
from .meta import signal_metrics
from .operator import Pipeline
from .tasks import resample


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("NOIR_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ResolutionSet:
    sizes: tuple[tuple[int, int], ...]

    def __post_init__(self):
        sizes = tuple(tuple(int(n) for n in s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not sizes:
            raise ValueError("resolution set is empty")
        areas = [int(np.prod(s)) for s in sizes]
        if any(b <= a for a, b in zip(areas, areas[1:])):
            raise ValueError(f"resolutions must strictly increase by area: {sizes}")
        if any(min(s) < 2 for s in sizes):
            raise ValueError("every resolution needs at least 2 cells per axis")

    @classmethod
    def parse(cls, text: str) -> "ResolutionSet":
        """``"16,24,32"`` (square) or ``"16x16,32x24"`` (W x H)."""
        sizes = []
        for tok in text.replace(" ", "").split(","):
            if "x" in tok:
                w, h = tok.split("x")
                sizes.append((int(h), int(w)))
            else:
                sizes.append((int(tok), int(tok)))
        return cls(tuple(sizes))

    def labels(self) -> list[str]:
        return [f"{s[1]}x{s[0]}" for s in self.sizes]

    def __len__(self):
        return len(self.sizes)

    def __iter__(self):
        return iter(self.sizes)


def pairwise_mse(z: np.ndarray) -> np.ndarray:
    """Symmetric matrix of mean squared differences between rows."""
    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = np.mean((z[i] - z[j]) ** 2)
    return out


@dataclass
class SampleAudit:
    z_in: np.ndarray        # (R, p_in)
    z_out: np.ndarray       # (R, p_out)
    mse_in: np.ndarray      # (R, R)
    mse_out: np.ndarray     # (R, R)
    task_mse: np.ndarray    # (R,)
    metrics: list[dict]     # one dict per resolution

    @property
    def max_in(self) -> float:
        return float(self.mse_in.max())

    @property
    def max_out(self) -> float:
        return float(self.mse_out.max())


def latent_consistency(input_image: np.ndarray, pipeline: Pipeline, resolutions: ResolutionSet,
                       seed: int = 0, categorical: bool = False,
                       inject_in: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Latents at every resolution and their pairwise MSE matrices.

    ``input_image`` is (H, W, c) at the highest resolution.  With
    ``inject_in`` the given input latent is used at every resolution
    instead of fitting (harness self-test).
    """
    zs_in, zs_out = [], []
    for res in resolutions:
        if inject_in is not None:
            z = np.asarray(inject_in, dtype=np.float32)
        else:
            img = resample(input_image, res, categorical)
            z = pipeline.encode(SignalSample.from_grid(img, channels=img.shape[-1]), seed)
        zs_in.append(z)
        zs_out.append(pipeline.map(z))
    z_in, z_out = np.stack(zs_in), np.stack(zs_out)
    return z_in, z_out, pairwise_mse(z_in), pairwise_mse(z_out)


def audit_sample(input_image: np.ndarray, target_image: np.ndarray, pipeline: Pipeline,
                 resolutions: ResolutionSet, seed: int = 0, inject_in=None, inject_out=None) -> SampleAudit:
    in_cat = pipeline.input_model.cfg.categorical
    out_cat = pipeline.output_model.cfg.categorical
    z_in, z_out, m_in, m_out = latent_consistency(input_image, pipeline, resolutions, seed, in_cat, inject_in)
    if inject_out is not None:
        z_out = np.stack([np.asarray(inject_out, dtype=np.float32)] * len(resolutions))
        m_out = pairwise_mse(z_out)
    task_mse, metrics = [], []
    for r, res in enumerate(resolutions):
        pred = pipeline.decode(z_out[r], res)
        truth = resample(target_image, res, out_cat)
        task_mse.append(float(np.mean((pred.astype(np.float64) - truth) ** 2)))
        metrics.append(signal_metrics(pred, truth, out_cat))
    return SampleAudit(z_in, z_out, m_in, m_out, np.array(task_mse), metrics)


@dataclass
class RenoReport:
    resolutions: ResolutionSet
    samples: list[SampleAudit] = field(default_factory=list)

    @property
    def eps_in(self) -> float:
        return max(s.max_in for s in self.samples)

    @property
    def eps_out(self) -> float:
        return max(s.max_out for s in self.samples)

    @property
    def eps_task(self) -> float:
        return max(float(s.task_mse.max()) for s in self.samples)

    def metric_table(self) -> list[dict]:
        rows = []
        labels = self.resolutions.labels()
        for i, s in enumerate(self.samples):
            for r, label in enumerate(labels):
                rows.append({"sample": i, "resolution": label, "task_mse": float(s.task_mse[r]), **s.metrics[r]})
        return rows

    def metric_summary(self) -> list[dict]:
        """Mean and std of every metric per resolution."""
        rows = self.metric_table()
        keys = [k for k in rows[0] if k not in ("sample", "resolution")]
        out = []
        for label in self.resolutions.labels():
            sel = [r for r in rows if r["resolution"] == label]
            row = {"resolution": label}
            for k in keys:
                vals = np.array([r[k] for r in sel])
                row[f"{k}_mean"] = float(vals.mean())
                row[f"{k}_std"] = float(vals.std())
            out.append(row)
        return out

    def summary(self) -> dict:
        return {
            "resolutions": self.resolutions.labels(),
            "n_samples": len(self.samples),
            "eps_in": self.eps_in,
            "eps_out": self.eps_out,
            "eps_task": self.eps_task,
            "per_sample_max_in": [s.max_in for s in self.samples],
            "per_sample_max_out": [s.max_out for s in self.samples],
            "per_resolution": self.metric_summary(),
        }

    def matrix_rows(self) -> list[list]:
        labels = self.resolutions.labels()
        rows = []
        for i, s in enumerate(self.samples):
            for kind, m in (("z_in", s.mse_in), ("z_out", s.mse_out)):
                for a, la in enumerate(labels):
                    for b, lb in enumerate(labels):
                        rows.append([i, kind, la, lb, repr(float(m[a, b]))])
        return rows

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"matrices": out / "reno_matrices.csv", "metrics": out / "reno_metrics.csv",
                 "summary": out / "reno_summary.json"}
        with open(paths["matrices"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "latent", "res_i", "res_j", "mse"])
            w.writerows(self.matrix_rows())
        write_rows(paths["metrics"], self.metric_table())
        with open(paths["summary"], "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return paths


def write_rows(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.values()])


def epsilon_estimate(inputs, targets, pipeline: Pipeline, resolutions: ResolutionSet, seed: int = 0,
                     inject_in=None, inject_out=None) -> RenoReport:
    """Audit every (input, target) image pair; sample j is fit with seed ``seed + j``."""
    if len(inputs) == 0:
        raise ContractError("test set is empty")
    if len(inputs) != len(targets):
        raise ContractError("inputs and targets differ in length")

    def one(j):
        zi = None if inject_in is None else inject_in[j]
        zo = None if inject_out is None else inject_out[j]
        return audit_sample(inputs[j], targets[j], pipeline, resolutions, seed + j, zi, zo)

    n = worker_count()
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            samples = list(pool.map(one, range(len(inputs))))
    else:
        samples = [one(j) for j in range(len(inputs))]
    return RenoReport(resolutions, samples)


def dice_by_resolution(inputs, targets, pipeline: Pipeline, resolutions: ResolutionSet, seed: int = 0,
                       inject_in=None, inject_out=None, report: RenoReport | None = None):
    """Per-sample DSC at each resolution plus mean/std per resolution."""
    if not pipeline.output_model.cfg.categorical:
        raise ContractError("DSC needs a categorical output task; use the PSNR columns of the report")
    if report is None:
        report = epsilon_estimate(inputs, targets, pipeline, resolutions, seed, inject_in, inject_out)
    rows = [{"sample": r["sample"], "resolution": r["resolution"], "dsc": r["dsc"]} for r in report.metric_table()]
    summary = []
    for label in resolutions.labels():
        vals = np.array([r["dsc"] for r in rows if r["resolution"] == label])
        summary.append({"resolution": label, "dsc_mean": float(vals.mean()), "dsc_std": float(vals.std())})
    return rows, summary
