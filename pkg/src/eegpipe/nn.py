"""GRU sequence classifier with exact manual gradients.

Architecture: input -> GRU over T steps -> flatten of the full hidden
sequence -> dense softmax head. Forward, backward (BPTT), optimizers,
the training loop, and a finite-difference gradient checker all live
here. Core routines accept a single example (vectors) or a batch
(leading batch axis); everything is float64 and deterministic per seed.

Gating convention: h_t = z ⊙ h_prev + (1 − z) ⊙ h̃, i.e. z → 1 preserves
the previous hidden state.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError

CHECKPOINT_VERSION = 1


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GruParams:
    """All trainable weights of one GRU layer."""

    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1]

    def items(self):
        for name in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h"):
            yield name, getattr(self, name)

    @classmethod
    def zeros_like(cls, other: "GruParams") -> "GruParams":
        return cls(**{name: np.zeros_like(arr) for name, arr in other.items()})


@dataclass
class DenseParams:
    """Dense softmax head over the flattened hidden sequence."""

    W: np.ndarray  # [classes, flat_dim]
    b: np.ndarray  # [classes]

    def items(self):
        yield "W", self.W
        yield "b", self.b

    @classmethod
    def zeros_like(cls, other: "DenseParams") -> "DenseParams":
        return cls(W=np.zeros_like(other.W), b=np.zeros_like(other.b))


@dataclass
class ModelConfig:
    input_dim: int
    hidden_dim: int
    sequence_length: int
    n_classes: int
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "sequence_length", "n_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 150
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("beta1/beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)


@dataclass
class Model:
    config: ModelConfig
    gru: GruParams
    dense: DenseParams

    def param_items(self):
        for name, arr in self.gru.items():
            yield f"gru.{name}", arr
        for name, arr in self.dense.items():
            yield f"dense.{name}", arr


def init_model(cfg: ModelConfig) -> Model:
    """Seeded uniform(-k, k) initialization with k = 1/sqrt(fan_in); zero biases."""
    rng = np.random.default_rng(cfg.seed)
    d, h = cfg.input_dim, cfg.hidden_dim
    kw, ku = 1.0 / np.sqrt(d), 1.0 / np.sqrt(h)
    gru = GruParams(
        W_z=rng.uniform(-kw, kw, (h, d)),
        W_r=rng.uniform(-kw, kw, (h, d)),
        W_h=rng.uniform(-kw, kw, (h, d)),
        U_z=rng.uniform(-ku, ku, (h, h)),
        U_r=rng.uniform(-ku, ku, (h, h)),
        U_h=rng.uniform(-ku, ku, (h, h)),
        b_z=np.zeros(h),
        b_r=np.zeros(h),
        b_h=np.zeros(h),
    )
    flat = h * cfg.sequence_length
    kd = 1.0 / np.sqrt(flat)
    dense = DenseParams(
        W=rng.uniform(-kd, kd, (cfg.n_classes, flat)), b=np.zeros(cfg.n_classes)
    )
    return Model(cfg, gru, dense)


def _promote(a, ndim):
    """Add a batch axis to a single-example array; report whether we did."""
    a = np.asarray(a, dtype=float)
    if a.ndim == ndim - 1:
        return a[None, ...], True
    if a.ndim == ndim:
        return a, False
    raise DataError(f"expected {ndim - 1}- or {ndim}-D array, got {a.ndim}-D")


def gru_cell_forward(p: GruParams, x_t, h_prev):
    """One GRU step. Accepts vectors or [batch, ...] arrays.

    Returns (h_t, cache); the cache holds (x_t, h_prev, z, r, h_cand)
    for the backward pass.
    """
    x_t, squeeze = _promote(x_t, 2)
    h_prev, _ = _promote(h_prev, 2)
    if x_t.shape[1] != p.input_dim or h_prev.shape[1] != p.hidden_dim:
        raise DataError(
            f"shape mismatch: x {x_t.shape}, h {h_prev.shape} for params "
            f"({p.hidden_dim} hidden, {p.input_dim} input)"
        )
    z = sigmoid(x_t @ p.W_z.T + h_prev @ p.U_z.T + p.b_z)
    r = sigmoid(x_t @ p.W_r.T + h_prev @ p.U_r.T + p.b_r)
    h_cand = np.tanh(x_t @ p.W_h.T + (r * h_prev) @ p.U_h.T + p.b_h)
    h_t = z * h_prev + (1.0 - z) * h_cand
    cache = (x_t, h_prev, z, r, h_cand)
    return (h_t[0] if squeeze else h_t), cache


def gru_forward(p: GruParams, xs, h0=None):
    """Run the recurrence over a sequence; time is the leading axis.

    xs: [T, input_dim] or [T, batch, input_dim]. Returns (hs, caches)
    with hs[t] the hidden state after step t; h0 defaults to zeros.
    """
    xs = np.asarray(xs, dtype=float)
    squeeze = xs.ndim == 2
    if squeeze:
        xs = xs[:, None, :]  # [T, 1, d]
    if xs.ndim != 3:
        raise DataError(f"gru_forward expects [T, d] or [T, batch, d], got {xs.ndim}-D")
    T = xs.shape[0]
    if T < 1:
        raise DataError("empty input sequence")
    B = xs.shape[1]
    h = np.zeros((B, p.hidden_dim)) if h0 is None else np.broadcast_to(
        np.asarray(h0, dtype=float), (B, p.hidden_dim)
    ).copy()
    hs = np.empty((T, B, p.hidden_dim))
    caches = []
    for t in range(T):
        h, cache = gru_cell_forward(p, xs[t], h)
        hs[t] = h
        caches.append(cache)
    return (hs[:, 0, :] if squeeze else hs), caches


def gru_backward(p: GruParams, caches, grad_hs):
    """Exact BPTT through the recurrence.

    grad_hs[t] is the loss gradient flowing into hs[t] from above.
    Returns (parameter gradients, gradients w.r.t. each input frame),
    both accumulated over all time steps (and summed over any batch).
    """
    grad_hs = np.asarray(grad_hs, dtype=float)
    squeeze = grad_hs.ndim == 2  # [T, H] single example
    if squeeze:
        grad_hs = grad_hs[:, None, :]
    T = len(caches)
    if grad_hs.shape[0] != T:
        raise DataError(f"grad_hs length {grad_hs.shape[0]} != cache length {T}")
    grads = GruParams.zeros_like(p)
    grad_xs = np.empty((T, grad_hs.shape[1], p.input_dim))
    carry = np.zeros_like(grad_hs[0])
    for t in range(T - 1, -1, -1):
        x_t, h_prev, z, r, h_cand = caches[t]
        dh = grad_hs[t] + carry
        dz = dh * (h_prev - h_cand)
        dhc = dh * (1.0 - z)
        dh_prev = dh * z
        # pre-activation gradients
        da_c = dhc * (1.0 - h_cand * h_cand)
        ds = da_c @ p.U_h  # gradient into r * h_prev
        dr = ds * h_prev
        dh_prev = dh_prev + ds * r
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        grads.W_h += da_c.T @ x_t
        grads.U_h += da_c.T @ (r * h_prev)
        grads.b_h += da_c.sum(axis=0)
        grads.W_z += da_z.T @ x_t
        grads.U_z += da_z.T @ h_prev
        grads.b_z += da_z.sum(axis=0)
        grads.W_r += da_r.T @ x_t
        grads.U_r += da_r.T @ h_prev
        grads.b_r += da_r.sum(axis=0)
        dh_prev = dh_prev + da_z @ p.U_z + da_r @ p.U_r
        grad_xs[t] = da_z @ p.W_z + da_r @ p.W_r + da_c @ p.W_h
        carry = dh_prev
    return grads, (grad_xs[:, 0, :] if squeeze else grad_xs)


def flatten(hs):
    """Concatenate the hidden sequence in time order.

    [T, H] -> [T*H]; [T, B, H] -> [B, T*H]. Reshaping the output back
    recovers the input exactly.
    """
    hs = np.asarray(hs, dtype=float)
    if hs.ndim == 2:
        return hs.reshape(-1)
    if hs.ndim == 3:
        return hs.swapaxes(0, 1).reshape(hs.shape[1], -1)
    raise DataError(f"flatten expects 2- or 3-D input, got {hs.ndim}-D")


def unflatten(v, T: int, hidden: int):
    """Inverse of flatten."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return v.reshape(T, hidden)
    return v.reshape(v.shape[0], T, hidden).swapaxes(0, 1)


def dense_forward(p: DenseParams, v):
    v, squeeze = _promote(v, 2)
    if v.shape[1] != p.W.shape[1]:
        raise DataError(f"dense input dim {v.shape[1]} != weight dim {p.W.shape[1]}")
    logits = v @ p.W.T + p.b
    return logits[0] if squeeze else logits


def dense_backward(p: DenseParams, v, grad_logits):
    """Gradients of the affine map: returns (dW, db, dv)."""
    v, squeeze = _promote(v, 2)
    g, _ = _promote(grad_logits, 2)
    dW = g.T @ v
    db = g.sum(axis=0)
    dv = g @ p.W
    return dW, db, (dv[0] if squeeze else dv)


def softmax(logits):
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Numerically stable loss and gradient for one example.

    grad = softmax(logits) - one_hot(label); its components sum to 0.
    """
    logits = np.asarray(logits, dtype=float)
    if not 0 <= label < len(logits):
        raise DataError(f"label {label} out of range for {len(logits)} classes")
    shifted = logits - logits.max()
    log_z = np.log(np.sum(np.exp(shifted)))
    loss = float(log_z - shifted[label])
    grad = np.exp(shifted - log_z)
    grad[label] -= 1.0
    return loss, grad


def softmax_cross_entropy_batch(logits, labels):
    """Per-example losses and gradients for a [batch, classes] array."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    losses = (log_z[:, 0] - shifted[np.arange(len(labels)), labels])
    grads = np.exp(shifted - log_z)
    grads[np.arange(len(labels)), labels] -= 1.0
    return losses, grads


def model_forward(model: Model, xs_batch):
    """Full forward pass for a [batch, T, input_dim] array.

    Returns (logits [batch, classes], cache for model_backward).
    """
    x = np.asarray(xs_batch, dtype=float)
    if x.ndim != 3:
        raise DataError("model_forward expects [batch, T, input_dim]")
    hs, caches = gru_forward(model.gru, x.swapaxes(0, 1))  # [T, B, H]
    v = flatten(hs)
    logits = dense_forward(model.dense, v)
    return logits, (caches, v, hs.shape)


def model_backward(model: Model, cache, grad_logits):
    """Full backward pass; returns (gru grads, dense grads) summed over the batch."""
    caches, v, hs_shape = cache
    dW, db, dv = dense_backward(model.dense, v, grad_logits)
    grad_hs = unflatten(dv, hs_shape[0], hs_shape[2])
    gru_grads, _ = gru_backward(model.gru, caches, grad_hs)
    return gru_grads, DenseParams(W=dW, b=db)


def predict(model: Model, xs):
    """Classify one sequence [T, input_dim]; ties go to the lowest class id."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2:
        raise DataError("predict expects a [T, input_dim] sequence")
    logits, _ = model_forward(model, xs[None])
    probs = softmax(logits[0])
    return int(np.argmax(probs)), probs


def predict_batch(model: Model, X):
    logits, _ = model_forward(model, X)
    probs = softmax(logits)
    return np.argmax(probs, axis=1), probs


# ---------------------------------------------------------------------------
# optimizers


def _grad_tree(gru_grads: GruParams, dense_grads: DenseParams) -> dict[str, np.ndarray]:
    tree = {f"gru.{n}": a for n, a in gru_grads.items()}
    tree.update({f"dense.{n}": a for n, a in dense_grads.items()})
    return tree


def adam_step(params: dict, grads: dict, state: dict, t: int, cfg: TrainConfig) -> None:
    """One Adam update with bias correction; mutates params and state in place."""
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if name not in state:
            state[name] = (np.zeros_like(p), np.zeros_like(p))
        m, v = state[name]
        m[...] = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v[...] = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def sgd_step(params: dict, grads: dict, state: dict, t: int, cfg: TrainConfig) -> None:
    """Plain gradient descent step; state and t kept for API symmetry."""
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        p -= cfg.learning_rate * g


# ---------------------------------------------------------------------------
# training


def evaluate_model(model: Model, X, y) -> tuple[float, float]:
    """Mean loss and accuracy over a [n, T, d] set, fixed summation order."""
    logits, _ = model_forward(model, X)
    losses, _ = softmax_cross_entropy_batch(logits, y)
    preds = np.argmax(softmax(logits), axis=1)
    return float(np.mean(losses)), float(np.mean(preds == np.asarray(y)))


def train(
    model_cfg: ModelConfig,
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
) -> tuple[Model, TrainHistory]:
    """Mini-batch training with seeded shuffling and early stopping.

    Stops once validation loss has not improved for `patience` epochs
    and restores the parameters of the best validation epoch.
    """
    X_tr, y_tr = np.asarray(train_data[0], dtype=float), np.asarray(train_data[1], dtype=int)
    X_va, y_va = np.asarray(val_data[0], dtype=float), np.asarray(val_data[1], dtype=int)
    for X, y in ((X_tr, y_tr), (X_va, y_va)):
        if X.ndim != 3 or X.shape[1] != model_cfg.sequence_length or X.shape[2] != model_cfg.input_dim:
            raise DataError(
                f"data shape {X.shape} does not match model (T={model_cfg.sequence_length}, "
                f"d={model_cfg.input_dim})"
            )
        if len(y) and (y.min() < 0 or y.max() >= model_cfg.n_classes):
            raise DataError("label out of range for model n_classes")

    model = init_model(model_cfg)
    params = dict(model.param_items())
    opt_state: dict = {}
    step_fn = adam_step if cfg.optimizer == "adam" else sgd_step
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best_loss = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    wait = 0
    t = 0
    n = len(y_tr)
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            xb, yb = X_tr[sel], y_tr[sel]
            logits, cache = model_forward(model, xb)
            losses, grad_logits = softmax_cross_entropy_batch(logits, yb)
            batch_loss = float(np.mean(losses))
            if not np.isfinite(batch_loss):
                raise NumericError(
                    f"training diverged: non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            loss_sum += float(np.sum(losses))
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
            gru_g, dense_g = model_backward(model, cache, grad_logits / len(sel))
            t += 1
            step_fn(params, _grad_tree(gru_g, dense_g), opt_state, t, cfg)
        val_loss, val_acc = evaluate_model(model, X_va, y_va)
        history.train_loss.append(loss_sum / n)
        history.train_acc.append(correct / n)
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    for k, v in params.items():
        v[...] = best_params[k]
    return model, history


def gradient_check(model: Model, xs, label: int, eps: float = 1e-5):
    """Central-difference check of the full pipeline gradient.

    Returns (max relative error, path of the worst scalar parameter).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError("eps must lie in [1e-7, 1e-3]")
    xs = np.asarray(xs, dtype=float)

    def loss_fn():
        logits, cache = model_forward(model, xs[None])
        loss, grad = softmax_cross_entropy(logits[0], label)
        return loss, cache, grad

    loss, cache, grad_logits = loss_fn()
    gru_g, dense_g = model_backward(model, cache, grad_logits[None])
    analytic = _grad_tree(gru_g, dense_g)
    worst = 0.0
    worst_path = ""
    for name, arr in model.param_items():
        flat = arr.reshape(-1)
        g_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _, _ = loss_fn()
            flat[i] = orig - eps
            lm, _, _ = loss_fn()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * eps)
            denom = max(abs(numeric), abs(g_flat[i]), 1e-8)
            rel = abs(numeric - g_flat[i]) / denom
            if rel > worst:
                worst = rel
                worst_path = f"{name}[{i}]"
    return worst, worst_path


# ---------------------------------------------------------------------------
# persistence


def dataset_to_sequences(features: np.ndarray, seq_len: int) -> np.ndarray:
    """Reshape a [n, n_features] matrix into [n, seq_len, n_features/seq_len]."""
    X = np.asarray(features, dtype=float)
    n, f = X.shape
    if f % seq_len:
        raise ConfigError(f"{f} features not divisible by sequence length {seq_len}")
    return X.reshape(n, seq_len, f // seq_len)


def save_checkpoint(path: str, model: Model, class_names: list[str], normalization=None) -> None:
    """Versioned JSON checkpoint; float repr keeps the roundtrip bit-exact."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": {
            "input_dim": model.config.input_dim,
            "hidden_dim": model.config.hidden_dim,
            "sequence_length": model.config.sequence_length,
            "n_classes": model.config.n_classes,
            "seed": model.config.seed,
        },
        "class_names": list(class_names),
        "normalization": normalization.to_dict() if normalization is not None else None,
        "gru": {n: a.tolist() for n, a in model.gru.items()},
        "dense": {n: a.tolist() for n, a in model.dense.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path: str):
    """Returns (model, class_names, normalization or None)."""
    from .dsp import NormalizationParams

    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('format_version')}")
    cfg = ModelConfig(**doc["model_config"])
    gru = GruParams(**{n: np.asarray(a, dtype=float) for n, a in doc["gru"].items()})
    dense = DenseParams(**{n: np.asarray(a, dtype=float) for n, a in doc["dense"].items()})
    norm = (
        NormalizationParams.from_dict(doc["normalization"])
        if doc.get("normalization")
        else None
    )
    return Model(cfg, gru, dense), doc["class_names"], norm


def save_history(history: TrainHistory, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for i in range(len(history)):
            writer.writerow(
                [
                    i + 1,
                    repr(history.train_loss[i]),
                    repr(history.train_acc[i]),
                    repr(history.val_loss[i]),
                    repr(history.val_acc[i]),
                ]
            )


def load_history(path: str) -> TrainHistory:
    hist = TrainHistory()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            hist.train_loss.append(float(row["train_loss"]))
            hist.train_acc.append(float(row["train_acc"]))
            hist.val_loss.append(float(row["val_loss"]))
            hist.val_acc.append(float(row["val_acc"]))
    return hist
