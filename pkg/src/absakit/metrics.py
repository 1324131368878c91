"""Evaluation: span-level F1 for tagging, accuracy and macro-F1 for
classification, and multi-seed aggregation."""

import math
from dataclasses import dataclass, field

from .errors import ContractError

NUM_CLASSES = 3


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0)
    recall = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def ae_span_f1(predicted_spans, gold_spans):
    """Exact-match span (precision, recall, f1).

    Spans are hashable (sentence_id, start, end) triples compared as sets:
    a prediction counts only when it matches a gold span exactly. With no
    predictions and non-empty gold, all three scores are 0.
    """
    predicted = set(predicted_spans)
    gold = set(gold_spans)
    tp = len(predicted & gold)
    return _prf(tp, len(predicted) - tp, len(gold) - tp)


def asc_scores(predictions, gold):
    """(accuracy, macro_f1) over the three sentiment classes.

    Macro-F1 averages per-class F1 with equal weight; a class absent from
    both predictions and gold contributes 0.
    """
    if len(predictions) != len(gold):
        raise ContractError(f"{len(predictions)} predictions for {len(gold)} gold labels")
    if not gold:
        raise ContractError("no examples to score")
    correct = sum(p == g for p, g in zip(predictions, gold))
    f1s = []
    for cls in range(NUM_CLASSES):
        tp = sum(p == cls and g == cls for p, g in zip(predictions, gold))
        fp = sum(p == cls and g != cls for p, g in zip(predictions, gold))
        fn = sum(p != cls and g == cls for p, g in zip(predictions, gold))
        if tp + fp + fn == 0:
            f1s.append(0.0)
        else:
            f1s.append(_prf(tp, fp, fn)[2])
    return correct / len(gold), sum(f1s) / NUM_CLASSES


def aggregate_seeds(values):
    """(mean, sample standard deviation); sd is 0.0 for a single value."""
    if not values:
        raise ContractError("nothing to aggregate")
    n = len(values)
    mean = sum(values) / n
    if n == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


@dataclass
class SeedRun:
    """Per-epoch losses and final metrics for one seed."""

    seed: int
    train_losses: list
    val_losses: list
    metrics: dict


@dataclass
class RunReport:
    """Everything a run produced: per-seed curves, metrics, and aggregates."""

    task: str
    dataset: str
    runs: list = field(default_factory=list)

    @property
    def seeds(self):
        return [run.seed for run in self.runs]

    def aggregates(self):
        """metric -> (mean, sd) across seeds."""
        if not self.runs:
            return {}
        names = self.runs[0].metrics.keys()
        return {m: aggregate_seeds([run.metrics[m] for run in self.runs]) for m in names}
