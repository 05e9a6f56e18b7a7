"""Error metrics and the integrated-vs-individual experiments.

The per-sample error is the Frobenius norm of the amplitude-difference
matrix averaged over the sample's subcarriers, measured on de-normalized
amplitudes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import SimConfig
from .dataset import DatasetFile, blocks_for, dataset_from_csi, divisors
from .estimator import ModelSpec, ModelWeights, predict
from .trainer import TrainConfig, TrainRecord, train

# Mean Frobenius errors reported for the three reference configurations.
PUBLISHED_REFERENCE = {
    ("cnn_convlstm", "integrated"): 0.434,
    ("cnn", "integrated"): 0.448,
    ("cnn", "individual"): 0.539,
}
DEFAULT_SWEEP = (1, 2, 11, 22, 121, 242)


def frobenius_error(pred, true) -> float:
    """Mean over subcarriers of ``||pred[k] - true[k]||_F`` for ``(K, n_rx, n_tx)`` stacks."""
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if pred.shape != true.shape or pred.ndim != 3:
        raise ValueError(f"shape mismatch: {pred.shape} vs {true.shape}")
    return float(_fro(pred - true, axis=(1, 2)).mean())


def _fro(d: np.ndarray, axis) -> np.ndarray:
    """Frobenius norm over ``axis``, rescaled so tiny differences do not underflow."""
    big = np.abs(d).max(axis=axis, keepdims=True)
    safe = np.where(big > 0, big, 1.0)
    return np.sqrt(((d / safe) ** 2).sum(axis=axis)) * np.squeeze(safe, axis=axis)


def sample_errors(pred, label, mask, scale: float) -> np.ndarray:
    """Frobenius error of every sample from network-layout tensors ``(N, F, A, 1)``."""
    m = np.asarray(mask, dtype=bool)
    diff = (np.asarray(pred, dtype=float) - np.asarray(label, dtype=float))[..., 0] * scale
    per_bin = _fro(diff, axis=2)
    return (per_bin * m).sum(axis=1) / m.sum(axis=1)


def ecdf(errors) -> list[tuple[float, float]]:
    """Right-continuous empirical CDF evaluated at each distinct value."""
    e = np.sort(np.asarray(errors, dtype=float))
    if e.size == 0:
        raise ValueError("ecdf of an empty list")
    values, counts = np.unique(e, return_counts=True)
    return [(float(v), float(c) / e.size) for v, c in zip(values, np.cumsum(counts))]


def ecdf_at(points: list[tuple[float, float]], x: float) -> float:
    values = np.array([p[0] for p in points])
    idx = np.searchsorted(values, x, side="right")
    return 0.0 if idx == 0 else points[idx - 1][1]


@dataclass
class EvalReport:
    errors: np.ndarray
    metadata: dict = field(default_factory=dict)
    trace_true: np.ndarray | None = None
    trace_pred: np.ndarray | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def ecdf(self) -> list[tuple[float, float]]:
        return ecdf(self.errors)

    @property
    def realization_errors(self) -> np.ndarray:
        """Errors averaged over the groups cut from each channel realization.

        Every realization contributes the same number of groups, so this is
        the full-band error of each realization and has the same mean as
        :attr:`errors`.  Distributions for different group sizes are only
        comparable at this level.
        """
        per = int(self.metadata.get("groups_per_realization", 1))
        if per < 1 or len(self.errors) % per:
            raise ValueError("errors do not tile into whole realizations")
        return np.asarray(self.errors, dtype=float).reshape(-1, per).mean(axis=1)

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.errors, q))

    @property
    def variant(self) -> str:
        return self.metadata.get("variant", "unknown")

    @property
    def group_size(self) -> int:
        return int(self.metadata.get("group_size", 0))

    def to_json(self) -> str:
        d = {"metadata": self.metadata, "errors": [repr(float(e)) for e in self.errors],
             "mean": repr(self.mean)}
        if self.trace_true is not None:
            d["trace_true"] = [repr(float(v)) for v in self.trace_true]
            d["trace_pred"] = [repr(float(v)) for v in self.trace_pred]
        return json.dumps(d, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        tt = d.get("trace_true")
        return cls(np.array([float(e) for e in d["errors"]]), d["metadata"],
                   None if tt is None else np.array([float(v) for v in tt]),
                   None if tt is None else np.array([float(v) for v in d["trace_pred"]]))


def evaluate(weights: ModelWeights, spec: ModelSpec, dataset: DatasetFile, split: str = "test",
             **metadata) -> EvalReport:
    """Per-sample errors on one split, plus the |h11| trace of its first realization."""
    x, y, m = dataset.split(split)
    if len(x) == 0:
        raise ValueError(f"split {split!r} is empty")
    pred = predict(weights, spec, x.astype(weights.dtype))
    errors = sample_errors(pred, y, m, dataset.scale)
    per = int(dataset.manifest["groups_per_realization"])
    g = dataset.group_size
    s = dataset.scale
    trace_true = (y[:per, :g, 0, 0].astype(float) * s).reshape(-1)
    trace_pred = (pred[:per, :g, 0, 0].astype(float) * s).reshape(-1)
    meta = {"variant": spec.variant, "group_size": g, "split": split, "groups_per_realization": per,
            "dataset_sha256": dataset.digest(), "scale": s, "n_samples": int(len(errors)),
            "error_definition": "mean over subcarriers of Frobenius norm of amplitude difference"}
    meta.update(metadata)
    return EvalReport(errors, meta, trace_true, trace_pred)


def estimation_kind(group_size: int) -> str:
    return "individual" if group_size == 1 else "integrated"


@dataclass
class RunResult:
    report: EvalReport
    weights: ModelWeights
    spec: ModelSpec
    record: TrainRecord


class Experiment:
    """Train/evaluate runs that share one CSI stack, memoized per (variant, group size)."""

    def __init__(self, h: np.ndarray, sim: SimConfig, profile_name: str, train_config: TrainConfig,
                 **model_kw):
        self.h = h
        self.sim = sim
        self.profile_name = profile_name
        self.train_config = train_config
        self.model_kw = model_kw
        self.results: dict[tuple[str, int], RunResult] = {}
        self._datasets: dict[int, DatasetFile] = {}

    def dataset(self, group_size: int) -> DatasetFile:
        if group_size not in self._datasets:
            self._datasets[group_size] = dataset_from_csi(self.h, self.sim, self.profile_name, group_size)
        return self._datasets[group_size]

    def spec(self, variant: str, group_size: int) -> ModelSpec:
        ds = self.dataset(group_size)
        kw = dict(self.model_kw)
        kw.setdefault("n_blocks", blocks_for(ds.freq_bins))
        return ModelSpec.for_group(variant, group_size, ds.freq_bins, n_pairs=int(ds.inputs.shape[2]), **kw)

    def run(self, variant: str, group_size: int) -> RunResult:
        key = (variant, group_size)
        if key not in self.results:
            ds = self.dataset(group_size)
            spec = self.spec(variant, group_size)
            weights, record = train(ds, spec, self.train_config)
            report = evaluate(weights, spec, ds, "test", seed=self.train_config.seed,
                              estimation=estimation_kind(group_size), epochs=record.epochs)
            self.results[key] = RunResult(report, weights, spec, record)
        return self.results[key]


@dataclass
class ComparisonRow:
    estimation: str
    variant: str
    group_size: int
    mean_error: float
    reference: float | None
    report: EvalReport


def run_comparison(exp: Experiment, configs=(("cnn_convlstm", None), ("cnn", None), ("cnn", 1))
                   ) -> list[ComparisonRow]:
    """Mean test error per configuration; ``None`` group size means all subcarriers."""
    K = exp.h.shape[1]
    rows = []
    for variant, g in configs:
        g = K if g is None else g
        res = exp.run(variant, g)
        kind = estimation_kind(g)
        rows.append(ComparisonRow(kind, variant, g, res.report.mean,
                                  PUBLISHED_REFERENCE.get((variant, kind)), res.report))
    return rows


@dataclass
class SweepRow:
    group_size: int
    mean_error: float
    n_items: int
    label_entries: int
    report: EvalReport


def subcarrier_sweep(exp: Experiment, group_sizes=None, variant: str = "cnn") -> list[SweepRow]:
    K = exp.h.shape[1]
    group_sizes = tuple(group_sizes) if group_sizes is not None else tuple(divisors(K))
    bad = [g for g in group_sizes if K % g]
    if bad:
        raise ValueError(f"group sizes {bad} do not divide {K}")
    rows = []
    for g in group_sizes:
        ds = exp.dataset(g)
        res = exp.run(variant, g)
        entries = int(ds.masks.sum()) * int(ds.labels.shape[2])
        rows.append(SweepRow(g, res.report.mean, len(ds), entries, res.report))
    return rows
