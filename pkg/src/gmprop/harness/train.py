"""The classification training loop.

One epoch: shuffle, mini-batches of B, forward + inference update, decay the
observation noise, evaluate. Each epoch appends one tab-separated metrics
line: epoch, train_err, test_err, nll, ece, auroc, sigma_v, clamp_count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import NumericError
from ..inference import ObservationModel, decay_noise, infer_minibatch
from ..network import NetworkConfig, build, encode_target
from .checkpoint import save_checkpoint
from .data import Dataset
from .metrics import MetricsReport, evaluate

METRICS_HEADER = "# epoch\ttrain_err\ttest_err\tnll\tece\tauroc\tsigma_v\tclamp_count"


@dataclass
class TrainConfig:
    """Hyperparameters of one classification run."""

    config: NetworkConfig
    epochs: int = 1
    batch: int = 16
    sigma_v0: float = 1.0
    eta: float = 0.975
    seed: int = 0
    dtype: str = "float32"
    out_dir: str | Path | None = None
    eval_train: bool = True


@dataclass
class EpochRecord:
    epoch: int
    train_err: float
    test_err: float
    nll: float
    ece: float
    auroc: float
    sigma_v: float
    clamp_count: int

    def line(self) -> str:
        return (f"{self.epoch}\t{self.train_err:.6f}\t{self.test_err:.6f}\t"
                f"{self.nll:.6f}\t{self.ece:.6f}\t{self.auroc:.6f}\t"
                f"{self.sigma_v:.6f}\t{self.clamp_count}")


@dataclass
class TrainResult:
    report: MetricsReport
    history: list[EpochRecord]
    net: object
    params: object
    checkpoint_path: Path | None = None


def _batch_starts(n: int, batch: int, uses_batch_norm: bool):
    """Mini-batch boundaries; a trailing singleton joins the previous batch
    when batch statistics are in play."""
    bounds = list(range(0, n, batch)) + [n]
    if uses_batch_norm and len(bounds) >= 3 and bounds[-1] - bounds[-2] < 2:
        bounds.pop(-2)
    return list(zip(bounds[:-1], bounds[1:]))


def train(cfg: TrainConfig, train_ds: Dataset, test_ds: Dataset,
          log=None) -> TrainResult:
    """Train a classification network; returns the final report and history."""
    dtype = np.dtype(cfg.dtype)
    net, params = build(cfg.config, seed=cfg.seed, dtype=dtype)
    rng = np.random.default_rng(cfg.seed)
    obs = ObservationModel(cfg.sigma_v0, cfg.eta)
    num_classes = cfg.config.num_classes
    uses_bn = any(getattr(s, "input_norm", None) == "batch" for s in net.stages)

    x_all = train_ds.x.reshape(len(train_ds), -1).astype(dtype, copy=False)
    y_all = train_ds.y
    if log:
        log(METRICS_HEADER)
    history: list[EpochRecord] = []
    report = None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_ds))
        clamp_total = 0
        for s, e in _batch_starts(len(order), cfg.batch, uses_bn):
            idx = order[s:e]
            targets = encode_target(y_all[idx], num_classes).astype(dtype)
            stats = infer_minibatch(net, params, x_all[idx], targets, obs)
            clamp_total += stats.clamp_count
        obs = decay_noise(obs)
        report = evaluate(net, params, test_ds, batch=cfg.batch)
        if cfg.eval_train:
            train_report = evaluate(net, params, train_ds, batch=cfg.batch)
            train_err = train_report.error_rate
        else:
            train_err = float("nan")
        if not np.isfinite(report.nll):
            raise NumericError(f"non-finite metrics at epoch {epoch}")
        rec = EpochRecord(epoch, train_err, report.error_rate, report.nll,
                          report.ece, report.auroc, obs.sigma_v, clamp_total)
        history.append(rec)
        if log:
            log(rec.line())
    if report is None:  # zero epochs: evaluate the freshly initialized net
        report = evaluate(net, params, test_ds, batch=cfg.batch)
    report.history = history
    checkpoint_path = None
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out / "checkpoint.gmp"
        save_checkpoint(checkpoint_path,
                        {"net": (cfg.config.config_hash(), params)})
        with open(out / "metrics.tsv", "w") as f:
            f.write(METRICS_HEADER + "\n")
            for rec in history:
                f.write(rec.line() + "\n")
    return TrainResult(report, history, net, params, checkpoint_path)
