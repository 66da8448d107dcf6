"""Checkpoint selection and layer-wise parameter smoothing.

A smoothed model is a per-layer convex combination of M checkpoints.
The weights for each layer live on the probability simplex and are
tuned to minimise a held-out loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

LossEvaluator = Callable[["ParamBundle"], float]


class ParamBundle:
    """Ordered named layers of flat float64 parameter vectors."""

    def __init__(self, layers):
        items = list(layers.items()) if isinstance(layers, dict) else list(layers)
        self.layers: dict[str, np.ndarray] = {}
        for name, values in items:
            if not name or any(c.isspace() for c in name):
                raise ValueError(f"invalid layer name {name!r}")
            if name in self.layers:
                raise ValueError(f"duplicate layer name {name!r}")
            arr = np.array(values, dtype=np.float64).reshape(-1)
            if arr.size == 0:
                raise ValueError(f"layer {name!r} has zero dimension")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"layer {name!r} has non-finite values")
            self.layers[name] = arr

    @property
    def schema(self) -> list[tuple[str, int]]:
        return [(name, v.size) for name, v in self.layers.items()]

    def __getitem__(self, name):
        return self.layers[name]

    def __eq__(self, other):
        if not isinstance(other, ParamBundle) or self.schema != other.schema:
            return False
        return all(np.array_equal(v, other.layers[k]) for k, v in self.layers.items())

    def __repr__(self):
        return f"ParamBundle({self.schema})"


@dataclass
class SmoothingWeights:
    """Per-layer simplex weights, ``weights[layer]`` has one entry per model."""

    weights: dict[str, np.ndarray]

    def __post_init__(self):
        for name, w in self.weights.items():
            w = np.asarray(w, dtype=np.float64)
            if w.ndim != 1 or w.size == 0:
                raise ValueError(f"weights for layer {name!r} must be a non-empty vector")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError(f"weights for layer {name!r} must be finite and >= 0")
            if abs(math.fsum(w) - 1.0) > 1e-9:
                raise ValueError(f"weights for layer {name!r} sum to {math.fsum(w)!r}, not 1")
            self.weights[name] = w

    @property
    def num_models(self) -> int:
        return len(next(iter(self.weights.values())))

    @classmethod
    def uniform(cls, names, num_models):
        return cls({n: np.full(num_models, 1.0 / num_models) for n in names})

    @classmethod
    def vertex(cls, names, num_models, index):
        w = np.zeros(num_models)
        w[index] = 1.0
        return cls({n: w.copy() for n in names})


def select_checkpoints(available: Sequence[int], count: int, interval: int) -> list[int]:
    """Pick ``count`` iterations spaced ``interval`` apart, ending at the last one.

    Returned newest first.
    """
    if not available:
        raise ValueError("no checkpoints available")
    if count < 1 or interval < 1:
        raise ValueError("count and interval must be >= 1")
    have = set(available)
    last, first = max(have), min(have)
    picked = []
    it = last
    while it >= first and len(picked) < count:
        if it in have:
            picked.append(it)
        it -= interval
    if len(picked) < count:
        raise DataError(
            f"only {len(picked)} checkpoints found at interval {interval} from iteration {last}, "
            f"{count} requested"
        )
    return picked


def check_schema(models: Sequence[ParamBundle]):
    ref = models[0].schema
    for k, m in enumerate(models[1:], 2):
        sch = m.schema
        if sch == ref:
            continue
        for i in range(max(len(ref), len(sch))):
            a = ref[i] if i < len(ref) else None
            b = sch[i] if i < len(sch) else None
            if a != b:
                raise DataError(f"model {k} layer schema differs at position {i + 1}: {a} vs {b}")
    return ref


def interpolate(models: Sequence[ParamBundle], weights: SmoothingWeights) -> ParamBundle:
    if not models:
        raise ValueError("no models to interpolate")
    schema = check_schema(models)
    names = [n for n, _ in schema]
    if list(weights.weights) != names:
        raise DataError(f"weights cover layers {list(weights.weights)}, models have {names}")
    if weights.num_models != len(models):
        raise DataError(f"weights are for {weights.num_models} models, got {len(models)}")
    out = {}
    for name in names:
        w = weights.weights[name]
        acc = w[0] * models[0].layers[name]
        for m in range(1, len(models)):
            acc = acc + w[m] * models[m].layers[name]
        out[name] = acc
    return ParamBundle(out)


def _softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _normalise_rows(p):
    # clean up rounding so that every row passes the 1e-9 simplex check
    return p / p.sum(axis=1, keepdims=True)


def estimate_weights(
    models: Sequence[ParamBundle],
    evaluator: LossEvaluator,
    max_iters: int = 200,
    tol: float = 1e-8,
    fd_step: float = 1e-4,
    learning_rate: float = 4.0,
) -> tuple[SmoothingWeights, float]:
    """Tune per-layer weights by gradient descent on ``evaluator``.

    Weights are a softmax of free per-layer logits, started at uniform.
    Gradients are central finite differences in the logits.  Each logit's
    gradient is divided by its current weight before stepping, which
    turns the update into an exponentiated-gradient step on the weights
    and keeps progress from stalling when a weight heads towards zero.
    A step that does not lower the loss is rejected and halves the
    learning rate;
    iteration stops after ``max_iters`` steps or once an accepted step
    gains less than ``tol``.  Since the softmax cannot reach a vertex of
    the simplex, each single checkpoint is evaluated at the end as well
    and wins if it is better.
    """
    if not models:
        raise ValueError("at least one model is required")
    names = [n for n, _ in check_schema(models)]
    M, L = len(models), len(names)

    def loss_of(probs):
        w = SmoothingWeights({n: probs[i] for i, n in enumerate(names)})
        val = float(evaluator(interpolate(models, w)))
        if not math.isfinite(val):
            raise DataError(f"evaluator returned non-finite loss {val!r}")
        return val

    logits = np.zeros((L, M))
    best = loss_of(_normalise_rows(_softmax_rows(logits)))
    if M == 1:
        return SmoothingWeights({n: np.ones(1) for n in names}), best

    lr = learning_rate
    for it in range(max_iters):
        grad = np.zeros_like(logits)
        for i in range(L):
            for m in range(M):
                up = logits.copy()
                up[i, m] += fd_step
                down = logits.copy()
                down[i, m] -= fd_step
                grad[i, m] = (
                    loss_of(_normalise_rows(_softmax_rows(up)))
                    - loss_of(_normalise_rows(_softmax_rows(down)))
                ) / (2 * fd_step)
        if not np.any(grad):
            break
        trial = logits - lr * grad / _softmax_rows(logits)
        loss = loss_of(_normalise_rows(_softmax_rows(trial)))
        if loss < best:
            gain = best - loss
            logits, best = trial, loss
            if gain < tol:
                break
        else:
            lr /= 2
            if lr < 1e-12:
                break
    log.debug("weight estimation stopped after %d steps, loss %r", it + 1, best)

    probs = _normalise_rows(_softmax_rows(logits))
    weights = SmoothingWeights({n: probs[i] for i, n in enumerate(names)})
    for m, model in enumerate(models):
        single = float(evaluator(model))
        if single < best:
            weights, best = SmoothingWeights.vertex(names, M, m), single
    return weights, best


def builtin_evaluator(features, labels) -> LossEvaluator:
    """Mean cross-entropy of the linear softmax classifier ``W x + b``.

    Bundles must hold a layer ``W`` (classes x features, row-major) and a
    layer ``b`` (classes).
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("dataset must be a non-empty 2-D feature matrix")
    if y.shape != (len(X),) or not np.issubdtype(y.dtype, np.integer):
        raise DataError("labels must be one integer per example")
    if np.any(y < 0):
        raise DataError("labels must be non-negative")
    n, dim = X.shape

    def evaluate(bundle: ParamBundle) -> float:
        names = [name for name, _ in bundle.schema]
        if names != ["W", "b"]:
            raise DataError(f"builtin evaluator expects layers ['W', 'b'], got {names}")
        b = bundle["b"]
        C = b.size
        if bundle["W"].size != C * dim:
            raise DataError(f"layer W has {bundle['W'].size} values, expected {C}x{dim}")
        if y.max() >= C:
            raise DataError(f"label {int(y.max())} out of range for {C} classes")
        logits = X @ bundle["W"].reshape(C, dim).T + b
        top = logits.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
        return float(np.mean(lse - logits[np.arange(n), y]))

    return evaluate


# --- file formats --------------------------------------------------------


def render_bundle(bundle: ParamBundle) -> str:
    lines = ["PBUNDLE 1"]
    for name, values in bundle.layers.items():
        lines.append(f"layer {name} {values.size}")
        lines.append(" ".join(repr(float(v)) for v in values))
    return "\n".join(lines) + "\n"


def parse_bundle(text: str, path=None) -> ParamBundle:
    tokens = []
    for lineno, line in enumerate(text.splitlines(), 1):
        tokens.extend((tok, lineno) for tok in line.split())
    if [t for t, _ in tokens[:2]] != ["PBUNDLE", "1"]:
        raise DataError("missing 'PBUNDLE 1' header", path, 1)
    layers = []
    pos = 2
    while pos < len(tokens):
        tok, lineno = tokens[pos]
        if tok != "layer" or pos + 2 >= len(tokens):
            raise DataError(f"expected 'layer <name> <dim>', found {tok!r}", path, lineno)
        name = tokens[pos + 1][0]
        try:
            dim = int(tokens[pos + 2][0])
        except ValueError:
            raise DataError(f"bad dimension {tokens[pos + 2][0]!r}", path, lineno) from None
        if dim < 1:
            raise DataError(f"layer {name!r} dimension must be positive", path, lineno)
        pos += 3
        chunk = tokens[pos:pos + dim]
        if len(chunk) < dim:
            raise DataError(f"layer {name!r} declares {dim} values, found {len(chunk)}", path, lineno)
        try:
            values = [float(t) for t, _ in chunk]
        except ValueError as exc:
            bad = next(ln for t, ln in chunk if not _is_float(t))
            raise DataError(str(exc), path, bad) from None
        layers.append((name, values))
        pos += dim
    try:
        return ParamBundle(layers)
    except ValueError as exc:
        raise DataError(str(exc), path) from None


def _is_float(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def render_weights(weights: SmoothingWeights) -> str:
    lines = ["SMOOTHW 1"]
    for name, w in weights.weights.items():
        lines.append(f"layer {name} " + " ".join(repr(float(v)) for v in w))
    return "\n".join(lines) + "\n"


def parse_weights(text: str, path=None) -> SmoothingWeights:
    lines = [(i, ln.split()) for i, ln in enumerate(text.splitlines(), 1) if ln.strip()]
    if not lines or lines[0][1] != ["SMOOTHW", "1"]:
        raise DataError("missing 'SMOOTHW 1' header", path, 1)
    weights = {}
    for lineno, parts in lines[1:]:
        if len(parts) < 3 or parts[0] != "layer":
            raise DataError("expected 'layer <name> w1 ... wM'", path, lineno)
        try:
            weights[parts[1]] = np.array([float(v) for v in parts[2:]])
        except ValueError as exc:
            raise DataError(str(exc), path, lineno) from None
    try:
        return SmoothingWeights(weights)
    except ValueError as exc:
        raise DataError(str(exc), path) from None


def parse_dataset(text: str, path=None) -> tuple[np.ndarray, np.ndarray]:
    """Parse ``label<TAB>f1 f2 ... fD`` lines."""
    feats, labels = [], []
    dim = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        label, sep, rest = line.partition("\t")
        if not sep:
            raise DataError("expected 'label<TAB>features'", path, lineno)
        try:
            lab = int(label)
            row = [float(v) for v in rest.split()]
        except ValueError as exc:
            raise DataError(str(exc), path, lineno) from None
        if dim is None:
            dim = len(row)
        if len(row) != dim or dim == 0:
            raise DataError(f"expected {dim} features, found {len(row)}", path, lineno)
        feats.append(row)
        labels.append(lab)
    if not feats:
        raise DataError("empty dataset", path)
    return np.array(feats), np.array(labels, dtype=np.int64)
