"""Accuracy and per-class / macro F1."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import ContractError
from .market import CLASS_NAMES


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    macro_f1: float
    # (class, quantity) pairs whose denominator was zero and were set to 0
    undefined: tuple[tuple[str, str], ...] = field(default=())

    def as_dict(self) -> dict:
        out = {"accuracy": self.accuracy, "macro_f1": self.macro_f1}
        for k, name in enumerate(CLASS_NAMES[:len(self.f1)]):
            out[f"precision_{name}"] = self.precision[k]
            out[f"recall_{name}"] = self.recall[k]
            out[f"f1_{name}"] = self.f1[k]
        return out


def _ratio(num: int, den: int) -> tuple[float, bool]:
    return (num / den, True) if den else (0.0, False)


def evaluate(predictions, labels, n_classes: int = 3) -> Metrics:
    pred = np.asarray(predictions).ravel()
    lab = np.asarray(labels).ravel()
    if pred.size != lab.size:
        raise ContractError(f"{pred.size} predictions for {lab.size} labels")
    if pred.size == 0:
        raise ContractError("cannot evaluate zero predictions")
    precision, recall, f1, undefined = [], [], [], []
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (lab == c)))
        fp = int(np.sum((pred == c) & (lab != c)))
        fn = int(np.sum((pred != c) & (lab == c)))
        p, ok_p = _ratio(tp, tp + fp)
        r, ok_r = _ratio(tp, tp + fn)
        name = CLASS_NAMES[c] if c < len(CLASS_NAMES) else str(c)
        if not ok_p:
            undefined.append((name, "precision"))
        if not ok_r:
            undefined.append((name, "recall"))
        if p + r > 0:
            f = 2 * p * r / (p + r)
        else:
            f = 0.0
            undefined.append((name, "f1"))
        precision.append(p)
        recall.append(r)
        f1.append(f)
    accuracy = float(np.mean(pred == lab))
    return Metrics(accuracy, tuple(precision), tuple(recall), tuple(f1),
                   float(np.mean(f1)), tuple(undefined))
