"""Classification quality, throughput, and the composite efficiency metrics.

The three composite metrics summarize a completed run:

* speed index        SI  = flops_throughput / (q_bits * total_time_s)
* performance index  MPI = (accuracy_avg + fscore_avg) / power_tot_kw
* efficiency ratio   RER = energy_tot_j / (cpu_pct_avg * mem_pct_avg)

Utilization percentages enter RER as raw numbers in (0, 100]; power enters
MPI in kilowatts (the accumulated per-inference sum, see the power module).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .dataset import Dataset


class MetricsError(Exception):
    pass


class IdMismatchError(MetricsError):
    pass


class EmptyRecordsError(MetricsError):
    pass


class ZeroPowerError(MetricsError):
    pass


class ZeroUtilizationError(MetricsError):
    pass


class TooFewRowsError(MetricsError):
    pass


@dataclass(frozen=True)
class MetricInputs:
    """Everything the composite metrics consume, for one benchmark row.

    Power and utilization fields are None when the corresponding capture was
    not configured; the dependent metrics are then unavailable.
    """

    flops_throughput: float
    q_bits: int
    total_time_s: float
    accuracy_avg: float
    fscore_avg: float
    power_tot_kw: float | None = None
    energy_tot_j: float | None = None
    cpu_pct_avg: float | None = None
    mem_pct_avg: float | None = None

    def __post_init__(self):
        if self.q_bits not in (8, 16, 32):
            raise ValueError(f"q_bits must be 8, 16, or 32, got {self.q_bits}")
        if self.total_time_s <= 0:
            raise ValueError("total_time_s must be positive")
        if self.flops_throughput <= 0:
            raise ValueError("flops_throughput must be positive")
        for name in ("accuracy_avg", "fscore_avg"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.power_tot_kw is not None and self.power_tot_kw <= 0:
            raise ValueError("power_tot_kw must be positive when configured")
        for name in ("cpu_pct_avg", "mem_pct_avg"):
            v = getattr(self, name)
            if v is not None and not 0.0 < v <= 100.0:
                raise ValueError(f"{name} must be in (0, 100], got {v}")


@dataclass(frozen=True)
class QualityScores:
    accuracy: float
    f_score_macro: float
    per_class_precision: dict[str, float]
    per_class_recall: dict[str, float]
    per_class_f1: dict[str, float]
    n_correct: int
    n_total: int


def score_pairs(pairs: Sequence[tuple[str, str]], label_set: Sequence[str]) -> QualityScores:
    """Score (true_label, predicted_label) pairs.

    Classes absent from both truth and predictions are excluded from the
    macro-F1 mean.
    """
    if not pairs:
        raise EmptyRecordsError("no prediction pairs")
    tp: dict[str, int] = {}
    fp: dict[str, int] = {}
    fn: dict[str, int] = {}
    n_correct = 0
    for true_label, pred in pairs:
        if pred == true_label:
            n_correct += 1
            tp[true_label] = tp.get(true_label, 0) + 1
        else:
            fp[pred] = fp.get(pred, 0) + 1
            fn[true_label] = fn.get(true_label, 0) + 1

    precision: dict[str, float] = {}
    recall: dict[str, float] = {}
    f1: dict[str, float] = {}
    for label in label_set:
        t, p, n = tp.get(label, 0), fp.get(label, 0), fn.get(label, 0)
        if t + p + n == 0:
            continue
        prec = t / (t + p) if t + p else 0.0
        rec_ = t / (t + n) if t + n else 0.0
        precision[label] = prec
        recall[label] = rec_
        f1[label] = 2 * prec * rec_ / (prec + rec_) if prec + rec_ else 0.0

    return QualityScores(
        accuracy=n_correct / len(pairs),
        f_score_macro=sum(f1.values()) / len(f1),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        n_correct=n_correct,
        n_total=len(pairs),
    )


def quality(records: Sequence, truth: Dataset) -> QualityScores:
    """Exact-match accuracy and macro-averaged F1 against the dataset labels.

    Records need ``sample_id`` and ``predicted_label`` attributes; every id
    must exist in the dataset and appear at most once.
    """
    if not records:
        raise EmptyRecordsError("no inference records")
    truth_by_id = truth.by_id()
    seen: set[str] = set()
    pairs: list[tuple[str, str]] = []
    for rec in records:
        if rec.sample_id in seen:
            raise IdMismatchError(f"duplicate record for sample {rec.sample_id!r}")
        seen.add(rec.sample_id)
        sample = truth_by_id.get(rec.sample_id)
        if sample is None:
            raise IdMismatchError(f"record for unknown sample {rec.sample_id!r}")
        pairs.append((sample.label, rec.predicted_label))
    return score_pairs(pairs, truth.label_set)


def flops_throughput(flops_per_inference: float, n_inferences: int, total_time_s: float) -> float:
    """Floating-point operations per second over the measured window."""
    if flops_per_inference <= 0 or n_inferences <= 0 or total_time_s <= 0:
        raise ValueError("flops_per_inference, n_inferences, and total_time_s must be positive")
    return flops_per_inference * n_inferences / total_time_s


def speed_index(inputs: MetricInputs) -> float:
    return inputs.flops_throughput / (inputs.q_bits * inputs.total_time_s)


def model_performance_index(inputs: MetricInputs) -> float:
    if not inputs.power_tot_kw:
        raise ZeroPowerError("MPI requires accumulated power > 0")
    return (inputs.accuracy_avg + inputs.fscore_avg) / inputs.power_tot_kw


def resource_efficiency_ratio(inputs: MetricInputs) -> float:
    if not inputs.cpu_pct_avg or not inputs.mem_pct_avg:
        raise ZeroUtilizationError("RER requires CPU and memory utilization > 0")
    if inputs.energy_tot_j is None:
        raise MetricsError("RER requires total energy")
    return inputs.energy_tot_j / (inputs.cpu_pct_avg * inputs.mem_pct_avg)


def normalize_attributes(rows: Sequence[Mapping[str, float]]) -> list[dict[str, float]]:
    """Min-max scale each attribute to [0, 1] across rows.

    Constant attributes map to 1.0 for every row. All rows must carry the
    same attribute names with finite values.
    """
    if len(rows) < 2:
        raise TooFewRowsError("normalization needs at least 2 rows")
    keys = list(rows[0].keys())
    for row in rows[1:]:
        if list(row.keys()) != keys:
            raise ValueError("rows carry differing attribute sets")
    for row in rows:
        for k in keys:
            if not math.isfinite(row[k]):
                raise ValueError(f"attribute {k!r} has a non-finite value")
    out: list[dict[str, float]] = [{} for _ in rows]
    for k in keys:
        values = [row[k] for row in rows]
        lo, hi = min(values), max(values)
        for i, v in enumerate(values):
            out[i][k] = 1.0 if hi == lo else (v - lo) / (hi - lo)
    return out


def seed_mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation across seed repetitions."""
    if not values:
        raise ValueError("no values")
    mean = sum(values) / len(values)
    if len(values) == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)
