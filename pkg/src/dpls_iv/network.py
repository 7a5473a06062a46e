"""Deep PLS treatment network: frozen PLS first layer, ReLU layers after.

The first layer maps the augmented instruments to q PLS score features and
is never touched by SGD; consistency of the instrument directions rests on
the PLS estimator alone. Hidden layers (widths from config) and a width-1
output layer are initialized by per-layer least squares on the previous
layer's activated features, then refined jointly by mini-batch SGD on
squared loss. With zero hidden layers the model degenerates to the plain
PLS prediction passed through the activation.

Serialization is a versioned JSON text format; floats round-trip bit-exactly
through their shortest decimal representation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .data import SeededRng
from .errors import DataError, NumericalError
from .linear import fit_ols
from .pls import PlsFit, fit_pls_closed_form, fit_pls_deflation, select_q_cv

__all__ = [
    "ActivationKind",
    "SgdParams",
    "DplsConfig",
    "DplsModel",
    "activation_apply",
    "dpls_fit",
    "dpls_predict",
    "sgd_refine",
    "network_loss_and_grads",
    "save_model",
    "load_model",
    "model_to_dict",
    "model_from_dict",
]

_AUTO_Q_CAP = 30


@dataclass(frozen=True)
class ActivationKind:
    """relu or leaky_relu(slope); slope must lie in (0, 1)."""

    tag: str = "relu"
    slope: float = 0.0

    def __post_init__(self):
        if self.tag not in ("relu", "leaky_relu"):
            raise DataError(f"unknown activation tag: {self.tag!r}")
        if self.tag == "leaky_relu" and not (0.0 < self.slope < 1.0):
            raise DataError("leaky_relu slope must lie in (0, 1)")
        if self.tag == "relu" and self.slope != 0.0:
            raise DataError("relu takes no slope")

    @staticmethod
    def relu() -> "ActivationKind":
        return ActivationKind("relu", 0.0)

    @staticmethod
    def leaky(slope: float = 0.01) -> "ActivationKind":
        return ActivationKind("leaky_relu", slope)


def activation_apply(kind: ActivationKind, t):
    t = np.asarray(t, dtype=np.float64)
    if kind.tag == "relu":
        out = np.maximum(t, 0.0)
    else:
        out = np.where(t > 0.0, t, kind.slope * t)
    return float(out) if out.ndim == 0 else out


def _activation_grad(kind: ActivationKind, pre):
    """Derivative wrt pre-activation; the subgradient at 0 is 0 for relu."""
    if kind.tag == "relu":
        return (pre > 0.0).astype(np.float64)
    return np.where(pre > 0.0, 1.0, kind.slope)


@dataclass(frozen=True)
class SgdParams:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise DataError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise DataError("batch_size must be >= 1 and epochs >= 0")


@dataclass(frozen=True)
class DplsConfig:
    """Architecture and training knobs for the treatment network.

    layer_widths names hidden widths only; a width-1 output layer is always
    appended after the last hidden layer (or directly after the PLS layer
    when layer_widths is empty, in which case no trainable layers exist).
    linear_output=False applies the activation to the final output as well.
    """

    layer_widths: tuple[int, ...] = (30,)
    activation: ActivationKind = field(default_factory=ActivationKind.relu)
    first_layer_q: int | str = "auto"
    sgd: SgdParams = field(default_factory=SgdParams)
    second_layer_method: str = "ols"
    use_bias: bool = True
    linear_output: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if any(w < 1 for w in widths):
            raise DataError("layer widths must be positive")
        object.__setattr__(self, "layer_widths", widths)
        if self.second_layer_method not in ("ols", "pls"):
            raise DataError("second_layer_method must be 'ols' or 'pls'")
        if self.first_layer_q != "auto":
            if int(self.first_layer_q) < 1:
                raise DataError("first_layer_q must be >= 1 or 'auto'")
            object.__setattr__(self, "first_layer_q", int(self.first_layer_q))


@dataclass(frozen=True)
class DplsModel:
    """Fitted network; immutable. Centering lives in first_layer."""

    first_layer: PlsFit
    hidden: tuple[tuple[np.ndarray, np.ndarray], ...]
    activation: ActivationKind
    linear_output: bool
    use_bias: bool
    history: tuple[float, ...] = ()
    best_epoch: int | None = None

    def features(self, zbar) -> np.ndarray:
        zbar = np.asarray(zbar, dtype=np.float64)
        if zbar.ndim != 2 or zbar.shape[1] != len(self.first_layer.means):
            raise DataError(
                f"expected {len(self.first_layer.means)} input columns, "
                f"got shape {zbar.shape}"
            )
        return (zbar - self.first_layer.means) @ self.first_layer.weights

    def predict(self, zbar) -> np.ndarray:
        if not self.hidden:
            pre = self.first_layer.predict(zbar)
            if self.linear_output:
                return pre
            return activation_apply(self.activation, pre)
        h = self.features(zbar)
        last = len(self.hidden) - 1
        for i, (w, b) in enumerate(self.hidden):
            pre = h @ w + b
            if i == last and self.linear_output:
                h = pre
            else:
                h = activation_apply(self.activation, pre)
        return h.ravel()


def dpls_predict(model: DplsModel, zbar) -> np.ndarray:
    return model.predict(zbar)


def network_loss_and_grads(hidden, kind: ActivationKind, feats, target, linear_output=False):
    """Mean-squared loss and reverse-mode gradients for the trainable stack.

    hidden is the ordered list of (weight, bias) pairs applied to feats; the
    activation follows every layer except, when linear_output, the last.
    Returns (loss, [(dW, db), ...]) aligned with hidden.
    """
    feats = np.asarray(feats, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n_layers = len(hidden)
    acts = [feats]
    pres = []
    h = feats
    for i, (w, b) in enumerate(hidden):
        pre = h @ w + b
        pres.append(pre)
        if i == n_layers - 1 and linear_output:
            h = pre
        else:
            h = activation_apply(kind, pre)
        acts.append(h)
    resid = acts[-1].ravel() - target
    n = len(target)
    loss = float(resid @ resid) / n
    dh = (2.0 / n) * resid.reshape(-1, 1)
    grads = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if i == n_layers - 1 and linear_output:
            dpre = dh
        else:
            dpre = dh * _activation_grad(kind, pres[i])
        grads[i] = (acts[i].T @ dpre, dpre.sum(axis=0))
        if i:
            dh = dpre @ hidden[i][0].T
    return loss, grads


def _train_loss(model: DplsModel, feats, p) -> float:
    if not model.hidden:
        pred = model.first_layer.p_mean + feats @ model.first_layer.y_loadings
        if not model.linear_output:
            pred = activation_apply(model.activation, pred)
        return float(np.mean((pred - p) ** 2))
    h = feats
    last = len(model.hidden) - 1
    for i, (w, b) in enumerate(model.hidden):
        pre = h @ w + b
        h = pre if (i == last and model.linear_output) else activation_apply(model.activation, pre)
    return float(np.mean((h.ravel() - p) ** 2))


def _layer_solve(features, target, method, q_cap=10):
    """Least-squares direction + intercept for layer initialization.

    lstsq (not the pivoted-QR fit) because activated features routinely
    contain dead all-zero columns mid-training and a minimum-norm solution
    is the right degenerate behavior here.
    """
    n = features.shape[0]
    if method == "pls":
        try:
            fit = fit_pls_deflation(features, target, min(features.shape[1], q_cap))
            return fit.coef, float(fit.p_mean - fit.means @ fit.coef)
        except DataError:
            pass  # no covariance left; fall through to lstsq
    design = np.hstack([features, np.ones((n, 1))])
    sol, *_ = np.linalg.lstsq(design, target, rcond=None)
    return sol[:-1], float(sol[-1])


def _init_hidden(feats, p, cfg: DplsConfig, rng: SeededRng):
    """Stack layers: least-squares direction per layer, kinks spread over
    pre-activation quantiles (bias on) or positive rescalings (bias off)."""
    layers = []
    h = feats
    for width in cfg.layer_widths:
        beta, b0 = _layer_solve(h, p, cfg.second_layer_method)
        w = np.tile(beta.reshape(-1, 1), (1, width))
        if cfg.use_bias:
            scores = h @ beta + b0
            qs = np.quantile(scores, (np.arange(width) + 0.5) / width)
            # one unit keeps the plain least-squares offset so the layer can
            # always reproduce its own linear initialization
            b = b0 - qs
            b[0] = b0
        else:
            scales = rng.uniform(0.5, 1.5, size=width)
            w = w * scales
            b = np.zeros(width)
        layers.append((w, b))
        h = activation_apply(cfg.activation, h @ w + b)
    beta, b0 = _layer_solve(h, p, cfg.second_layer_method)
    b_out = np.array([b0 if cfg.use_bias else 0.0])
    layers.append((beta.reshape(-1, 1), b_out))
    return layers


def dpls_fit(zbar, p, cfg: DplsConfig) -> DplsModel:
    """Fit the network: PLS first layer, initialized layers, SGD refinement."""
    zbar = np.asarray(zbar, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if zbar.ndim != 2 or p.shape != (zbar.shape[0],):
        raise DataError("zbar must be a matrix and p a matching vector")
    rng = SeededRng(cfg.sgd.seed)
    q = cfg.first_layer_q
    if q == "auto":
        q_max = min(zbar.shape[1], _AUTO_Q_CAP)
        q = select_q_cv(zbar, p, q_max, folds=5, rng=rng.child(0))
    first = fit_pls_closed_form(zbar, p, q)
    feats = (zbar - first.means) @ first.weights
    if cfg.layer_widths:
        hidden = _init_hidden(feats, p, cfg, rng.child(1))
    else:
        hidden = []
    model = DplsModel(
        first_layer=first,
        hidden=tuple((w.copy(), b.copy()) for w, b in hidden),
        activation=cfg.activation,
        linear_output=cfg.linear_output,
        use_bias=cfg.use_bias,
    )
    if model.hidden and cfg.sgd.epochs > 0:
        model = sgd_refine(model, zbar, p, cfg.sgd)
    else:
        loss0 = _train_loss(model, feats, p)
        model = replace(model, history=(loss0,), best_epoch=0)
    return model


def sgd_refine(model: DplsModel, zbar, p, params: SgdParams) -> DplsModel:
    """Mini-batch SGD over the trainable layers; first layer frozen.

    The returned model carries the parameters from the best epoch measured
    on the full training loss (epoch 0 is the pre-SGD state, so refinement
    can never end worse than it started) and the full loss history.
    """
    p = np.asarray(p, dtype=np.float64)
    feats = model.features(zbar)
    if not model.hidden:
        raise DataError("model has no trainable layers to refine")
    hidden = [(w.copy(), b.copy()) for w, b in model.hidden]
    rng = SeededRng(params.seed).child(2)
    n = len(p)
    history = list(model.history)
    loss0 = _train_loss(model, feats, p)
    history.append(loss0)
    best_loss = loss0
    best_state = [(w.copy(), b.copy()) for w, b in hidden]
    best_epoch = 0
    lr = params.learning_rate
    for epoch in range(1, params.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, params.batch_size):
            rows = order[start : start + params.batch_size]
            _, grads = network_loss_and_grads(
                hidden, model.activation, feats[rows], p[rows], model.linear_output
            )
            for (w, b), (gw, gb) in zip(hidden, grads):
                w -= lr * gw
                if model.use_bias:
                    b -= lr * gb
        state = DplsModel(
            first_layer=model.first_layer,
            hidden=tuple(hidden),
            activation=model.activation,
            linear_output=model.linear_output,
            use_bias=model.use_bias,
        )
        loss = _train_loss(state, feats, p)
        if not np.isfinite(loss):
            raise NumericalError(
                f"SGD diverged at epoch {epoch}; reduce learning_rate"
            )
        history.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_state = [(w.copy(), b.copy()) for w, b in hidden]
            best_epoch = epoch
    return DplsModel(
        first_layer=model.first_layer,
        hidden=tuple((w, b) for w, b in best_state),
        activation=model.activation,
        linear_output=model.linear_output,
        use_bias=model.use_bias,
        history=tuple(history),
        best_epoch=best_epoch,
    )


# ---------------------------------------------------------------------------
# Serialization: versioned JSON, floats in shortest round-trip decimal form.

_FORMAT = "dpls-model"
_VERSION = 1


def model_to_dict(model: DplsModel) -> dict:
    fl = model.first_layer
    return {
        "format": _FORMAT,
        "version": _VERSION,
        "activation": {"tag": model.activation.tag, "slope": model.activation.slope},
        "linear_output": model.linear_output,
        "use_bias": model.use_bias,
        "first_layer": {
            # scores and x_loadings are training artifacts and are not
            # serialized; prediction needs only the fields below
            "method": fl.method,
            "q": int(fl.q),
            "coef": fl.coef.tolist(),
            "weights": fl.weights.tolist(),
            "y_loadings": fl.y_loadings.tolist(),
            "means": fl.means.tolist(),
            "p_mean": float(fl.p_mean),
        },
        "hidden": [
            {"w": w.tolist(), "b": b.tolist()} for w, b in model.hidden
        ],
        "history": list(model.history),
        "best_epoch": model.best_epoch,
    }


def model_from_dict(doc: dict) -> DplsModel:
    if doc.get("format") != _FORMAT:
        raise DataError("not a dpls-model document")
    if doc.get("version") != _VERSION:
        raise DataError(f"unsupported model version: {doc.get('version')!r}")
    fl = doc["first_layer"]
    weights = np.asarray(fl["weights"], dtype=np.float64)
    d, q = weights.shape
    first = PlsFit(
        coef=np.asarray(fl["coef"], dtype=np.float64),
        q=int(fl["q"]),
        scores=np.zeros((0, q)),
        x_loadings=np.zeros((d, 0)),
        y_loadings=np.asarray(fl["y_loadings"], dtype=np.float64),
        weights=weights,
        means=np.asarray(fl["means"], dtype=np.float64),
        p_mean=float(fl["p_mean"]),
        method=str(fl["method"]),
    )
    act = ActivationKind(doc["activation"]["tag"], float(doc["activation"]["slope"]))
    hidden = tuple(
        (np.asarray(h["w"], dtype=np.float64), np.asarray(h["b"], dtype=np.float64))
        for h in doc["hidden"]
    )
    return DplsModel(
        first_layer=first,
        hidden=hidden,
        activation=act,
        linear_output=bool(doc["linear_output"]),
        use_bias=bool(doc["use_bias"]),
        history=tuple(float(v) for v in doc["history"]),
        best_epoch=doc["best_epoch"],
    )


def save_model(model: DplsModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> DplsModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
