"""Named channel/metric pairs and the JSON instance format.

Instance JSON (``//`` and ``#`` line comments allowed)::

    {
      "W": [[0.9, 0.1], [0.1, 0.9]],      # channel, rows = inputs
      "q": [[0, 1], [1, 0]],              # decoding metric
      "rho": "matched" | [[...]],         # optional auxiliary metric
      "P_X": [0.5, 0.5],                  # optional input distribution
      "pre_processor": [1, 0] | [[...]],  # optional map or kernel
      "budget_B": 0.5,                    # optional I(Y;Z) budget in nats
      "labels": {"x": ["a", "b"], "y": ["a", "b"]}
    }
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .core import ValidationError, as_channel, as_distribution, as_metric, check_shapes, log_metric
from .preprocessing import PreProcessor

_DIAG_PAIRS = [(0, 0), (1, 1), (2, 2), (3, 2)]


def _indicator(pairs, size=4):
    a = np.zeros((size, size))
    for x, y in pairs:
        a[x, y] = 1.0
    return a


def bsc(p):
    return np.array([[1.0 - p, p], [p, 1.0 - p]])


def binary_example(p=0.1):
    """BSC(p) with a metric that rewards disagreement: the flip map fixes it."""
    return bsc(p), np.array([[0.0, 1.0], [1.0, 0.0]])


def quadratic_channel_1():
    """Noiseless 4-ary channel; the metric cannot tell inputs 2 and 3 apart."""
    return np.eye(4), _indicator(_DIAG_PAIRS)


def quadratic_channel_2():
    """``y = x + 2 (mod 4)`` with the metric of quadratic channel 1."""
    return np.roll(np.eye(4), 2, axis=1), _indicator(_DIAG_PAIRS)


SHIFT_BY_2 = PreProcessor(mapping=(2, 3, 0, 1))


def worst_metric(w):
    """Negated (clamped) log-likelihood: the decoder prefers the least likely input."""
    return -log_metric(as_channel(w))


NAMED = {
    "binary": binary_example,
    "quadratic1": quadratic_channel_1,
    "quadratic2": quadratic_channel_2,
}


@dataclass
class Instance:
    w: np.ndarray
    q: np.ndarray
    rho: object = None
    p_x: np.ndarray | None = None
    pre_processor: PreProcessor | None = None
    budget: float | None = None
    labels: dict | None = None

    def to_json(self):
        out = {"W": self.w.tolist(), "q": self.q.tolist()}
        if self.rho is not None:
            out["rho"] = self.rho if isinstance(self.rho, str) else np.asarray(self.rho).tolist()
        if self.p_x is not None:
            out["P_X"] = np.asarray(self.p_x).tolist()
        if self.pre_processor is not None:
            out["pre_processor"] = self.pre_processor.to_json()
        if self.budget is not None:
            out["budget_B"] = self.budget
        if self.labels:
            out["labels"] = self.labels
        return out


_COMMENT = re.compile(r"""("(?:\\.|[^"\\])*")|(?://|#)[^\n]*""")


def strip_comments(text):
    return _COMMENT.sub(lambda m: m.group(1) or "", text)


def _field(obj, key, conv, *args):
    try:
        return conv(obj[key], *args)
    except ValidationError as exc:
        raise ValidationError(f"field {key!r}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"field {key!r}: {exc}") from None


def parse_instance(text) -> Instance:
    """Parse and validate an instance document."""
    try:
        obj = json.loads(strip_comments(text))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ValidationError("instance must be a JSON object")
    for key in ("W", "q"):
        if key not in obj:
            raise ValidationError(f"missing field {key!r}")
    w = _field(obj, "W", as_channel)
    q = _field(obj, "q", as_metric)
    try:
        check_shapes(w, q)
    except ValidationError as exc:
        raise ValidationError(f"field 'q': {exc}") from None
    inst = Instance(w, q)
    if "rho" in obj:
        if obj["rho"] == "matched":
            inst.rho = "matched"
        else:
            inst.rho = _field(obj, "rho", as_metric, "rho")
            if inst.rho.shape != q.shape:
                raise ValidationError("field 'rho': shape differs from q")
    if "P_X" in obj:
        inst.p_x = _field(obj, "P_X", as_distribution, "P_X")
        if len(inst.p_x) != w.shape[0]:
            raise ValidationError("field 'P_X': length differs from |X|")
    if "pre_processor" in obj:
        inst.pre_processor = _field(obj, "pre_processor", PreProcessor.from_any)
        if inst.pre_processor.size != w.shape[1]:
            raise ValidationError("field 'pre_processor': size differs from |Y|")
    if "budget_B" in obj:
        b = obj["budget_B"]
        if not isinstance(b, (int, float)) or b < 0:
            raise ValidationError("field 'budget_B': must be a non-negative number")
        inst.budget = float(b)
    if "labels" in obj:
        inst.labels = obj["labels"]
    return inst


def load_instance(path) -> Instance:
    with open(path) as fh:
        return parse_instance(fh.read())
