"""Small numpy learners shared by the segment scorer and the ensemble.

Three model kinds, all producing a scalar logit per row:

* ``logistic``: linear logit, binary cross-entropy
* ``mlp``: one tanh hidden layer, binary cross-entropy
* ``svm``: linear logit, squared hinge loss on +-1 labels plus ``alpha/2 * ||w||^2``

Parameters are plain dicts of float64 arrays so they serialize trivially.
"""

from __future__ import annotations

import numpy as np

KINDS = ("logistic", "mlp", "svm")
INIT_SCALE = 0.05


class TrainingDivergedError(RuntimeError):
    pass


def check_kind(kind: str) -> str:
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    return kind


def init_params(kind: str, n_features: int, rng: np.random.Generator,
                hidden_units: int = 16) -> dict:
    check_kind(kind)
    u = lambda *shape: rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)  # noqa: E731
    if kind == "mlp":
        return {"W1": u(n_features, hidden_units), "b1": u(hidden_units),
                "w2": u(hidden_units), "b2": u(1)}
    return {"w": u(n_features), "b": u(1)}


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logits(kind: str, params: dict, X: np.ndarray) -> np.ndarray:
    if kind == "mlp":
        h = np.tanh(X @ params["W1"] + params["b1"])
        return h @ params["w2"] + params["b2"][0]
    return X @ params["w"] + params["b"][0]


def _weight_keys(kind):
    return ("W1", "w2") if kind == "mlp" else ("w",)


def loss_and_grad(kind: str, params: dict, X: np.ndarray, y: np.ndarray,
                  alpha: float = 0.0) -> tuple:
    """Mean loss over rows and its gradient with respect to every parameter."""
    n = X.shape[0]
    if kind == "mlp":
        pre = X @ params["W1"] + params["b1"]
        h = np.tanh(pre)
        z = h @ params["w2"] + params["b2"][0]
    else:
        z = X @ params["w"] + params["b"][0]

    if kind == "svm":
        s = 2.0 * y - 1.0
        margin = s * z
        slack = np.maximum(0.0, 1.0 - margin)
        loss = float(np.mean(slack * slack))
        dz = -2.0 * s * slack / n
    else:
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        dz = (sigmoid(z) - y) / n

    if kind == "mlp":
        dpre = np.outer(dz, params["w2"]) * (1.0 - h * h)
        grads = {"W1": X.T @ dpre, "b1": dpre.sum(axis=0),
                 "w2": h.T @ dz, "b2": np.array([dz.sum()])}
    else:
        grads = {"w": X.T @ dz, "b": np.array([dz.sum()])}

    if alpha:
        for k in _weight_keys(kind):
            loss += 0.5 * alpha * float(np.sum(params[k] ** 2))
            grads[k] = grads[k] + alpha * params[k]
    return loss, grads


def fit_gd(kind: str, params: dict, X: np.ndarray, y: np.ndarray, *, learning_rate: float,
           epochs: int, batch_size: int | None, rng: np.random.Generator,
           alpha: float = 0.0) -> tuple:
    """Minibatch gradient descent.

    Returns ``(params, loss_curve)`` where ``loss_curve[0]`` is the full-data loss
    before the first update and ``loss_curve[e]`` the loss after epoch ``e``.
    """
    params = {k: np.array(v, dtype=float, copy=True) for k, v in params.items()}
    n = X.shape[0]
    bs = n if not batch_size or batch_size >= n else int(batch_size)
    curve = [loss_and_grad(kind, params, X, y, alpha)[0]]
    for epoch in range(epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            rows = order[start:start + bs]
            _, grads = loss_and_grad(kind, params, X[rows], y[rows], alpha)
            for k in params:
                params[k] -= learning_rate * grads[k]
        loss = loss_and_grad(kind, params, X, y, alpha)[0]
        if not np.isfinite(loss) or not all(np.isfinite(v).all() for v in params.values()):
            raise TrainingDivergedError(
                f"{kind} training diverged at epoch {epoch + 1}: loss={loss!r}, "
                f"previous loss={curve[-1]!r}, learning_rate={learning_rate}")
        curve.append(loss)
    return params, np.asarray(curve)


def params_to_document(params: dict) -> dict:
    return {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
            for k, v in sorted(params.items())}


def params_from_document(doc: dict) -> dict:
    out = {}
    for k, v in doc.items():
        arr = np.asarray(v["values"], dtype=float).reshape(v["shape"])
        if not np.isfinite(arr).all():
            raise ValueError(f"parameter {k!r} contains non-finite values")
        out[k] = arr
    return out
