"""Step/cfg controller: two small MLPs over the feature vector.

Each MLP maps the z-scored feature vector to a scalar in (0,1) through
three 16-unit rectifier layers and a logistic output. The scalar scales
linearly to the sampling budget: cfg = 10*y, steps = round(2 + 78*y).

Training minimizes mean((y - yhat)^2) + lambda * mean(yhat^2). The
lambda term penalizes the prediction itself, pushing the steps model
toward smaller budgets (lambda = 0.64); the cfg model trains with
lambda = 0. Plain seeded minibatch gradient descent, early stopping on a
held-out split.

Targets come from a grid sweep: decode each training image at every
(steps, cfg) grid point, score against the original, take the argmin.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DatasetTooSmall,
    EmptyBatch,
    InputOutOfRange,
    IoError,
    LengthMismatch,
    MalformedPayload,
    NonFiniteLoss,
    SchemaMismatch,
    Truncated,
)
from .features import FeatureSchema

HIDDEN = (16, 16, 16)
STEPS_MIN = 2
STEPS_MAX = 80
CFG_MAX = 10.0
LAMBDA_STEPS = 0.64
LAMBDA_CFG = 0.0

ORACLE_STEPS = (2, 5, 10, 20, 40, 80)
ORACLE_CFGS = (0.5, 1.0, 2.0, 4.0, 7.0, 9.5)

_MODEL_MAGIC = b"SGMC"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class DiffusionPlan:
    steps: int
    cfg: float

    def __post_init__(self):
        if not isinstance(self.steps, int) or not STEPS_MIN <= self.steps <= STEPS_MAX:
            raise InputOutOfRange(f"plan steps {self.steps} outside [{STEPS_MIN}, {STEPS_MAX}]")
        if not 0.0 < self.cfg < CFG_MAX:
            raise InputOutOfRange(f"plan cfg {self.cfg} outside (0, {CFG_MAX})")


@dataclass
class Mlp:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]  # per layer, shape (out, in)
    biases: list[np.ndarray]
    schema: FeatureSchema

    def __post_init__(self):
        if tuple(self.sizes[1:]) != HIDDEN + (1,):
            raise SchemaMismatch(f"architecture must be [F, 16, 16, 16, 1], got {self.sizes}")
        if self.sizes[0] != self.schema.dim:
            raise SchemaMismatch(f"input width {self.sizes[0]} != schema dim {self.schema.dim}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i + 1], self.sizes[i]) or b.shape != (self.sizes[i + 1],):
                raise SchemaMismatch(f"layer {i} shape {w.shape}/{b.shape} vs sizes {self.sizes}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NonFiniteLoss(f"layer {i} has non-finite parameters")

    @property
    def schema_hash(self) -> bytes:
        return self.schema.schema_hash()

    def copy(self) -> "Mlp":
        return Mlp(
            sizes=self.sizes,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            schema=self.schema,
        )


def init_mlp(schema: FeatureSchema, seed: int = 0) -> Mlp:
    rng = np.random.default_rng(seed)
    sizes = (schema.dim,) + HIDDEN + (1,)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes=sizes, weights=weights, biases=biases, schema=schema)


def _logistic(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_batch(m: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns (predictions (n,), per-layer activations incl. input)."""
    acts = [x]
    a = x
    for w, b in zip(m.weights[:-1], m.biases[:-1]):
        a = np.maximum(a @ w.T + b, 0.0)
        acts.append(a)
    z = a @ m.weights[-1].T + m.biases[-1]
    y = _logistic(z)[:, 0]
    acts.append(y)
    return y, acts


def forward(m: Mlp, f: np.ndarray, schema_hash: bytes | None = None) -> float:
    if schema_hash is not None and schema_hash != m.schema_hash:
        raise SchemaMismatch("feature schema hash does not match the model")
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (m.sizes[0],):
        raise SchemaMismatch(f"feature vector shape {f.shape}, model expects ({m.sizes[0]},)")
    y, _ = _forward_batch(m, f[None, :])
    return float(y[0])


def to_plan(y_steps: float, y_cfg: float) -> DiffusionPlan:
    if not 0.0 < y_steps < 1.0 or not 0.0 < y_cfg < 1.0:
        raise InputOutOfRange(f"normalized outputs ({y_steps}, {y_cfg}) outside (0,1)")
    steps = int(round(STEPS_MIN + (STEPS_MAX - STEPS_MIN) * y_steps))
    steps = min(max(steps, STEPS_MIN), STEPS_MAX)
    return DiffusionPlan(steps=steps, cfg=CFG_MAX * y_cfg)


def loss(y_hat: np.ndarray, y: np.ndarray, lam: float) -> float:
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.size == 0:
        raise EmptyBatch("loss needs at least one sample")
    if y_hat.shape != y.shape:
        raise LengthMismatch(f"batch shapes {y_hat.shape} vs {y.shape}")
    return float(np.mean((y - y_hat) ** 2) + lam * np.mean(y_hat**2))


def _gradients(m: Mlp, x: np.ndarray, y: np.ndarray, lam: float):
    """Analytic gradients of the training loss over one batch."""
    n = len(x)
    y_hat, acts = _forward_batch(m, x)
    # d loss / d y_hat, then through the logistic
    dy = (2.0 / n) * ((y_hat - y) + lam * y_hat)
    delta = (dy * y_hat * (1.0 - y_hat))[:, None]  # (n, 1)
    grads_w = [None] * len(m.weights)
    grads_b = [None] * len(m.biases)
    for layer in range(len(m.weights) - 1, -1, -1):
        a_prev = acts[layer]
        grads_w[layer] = delta.T @ a_prev
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ m.weights[layer]) * (acts[layer] > 0.0)
    return grads_w, grads_b, y_hat


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-3
    epochs: int = 200
    val_frac: float = 0.2
    patience: int = 20
    seed: int = 0


def train(
    m: Mlp,
    features: np.ndarray,
    targets: np.ndarray,
    lam: float,
    config: TrainConfig = TrainConfig(),
) -> tuple[Mlp, dict]:
    """Minibatch gradient descent with early stopping on a held-out split.

    Returns the weights from the best validation epoch and the loss history.
    With val_frac = 0 nothing is held out: every sample trains, the stopping
    metric is the training loss, and the refit interpolates as far as the
    shrinkage penalty allows. That is the right mode when the model will only
    ever be asked about the corpus it was fit on.
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(features) != len(targets):
        raise LengthMismatch(f"{len(features)} feature rows vs {len(targets)} targets")
    if len(features) < 8:
        raise DatasetTooSmall(f"controller training needs >= 8 samples, got {len(features)}")

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(features))
    n_val = max(1, int(round(config.val_frac * len(features)))) if config.val_frac > 0 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_tr, y_tr = features[train_idx], targets[train_idx]
    x_val, y_val = features[val_idx], targets[val_idx]

    model = m.copy()
    best = model.copy()
    best_val = np.inf
    best_epoch = -1
    history = {"train": [], "val": []}
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_tr))
        for start in range(0, len(x_tr), config.batch_size):
            idx = order[start : start + config.batch_size]
            gw, gb, _ = _gradients(model, x_tr[idx], y_tr[idx], lam)
            for layer in range(len(model.weights)):
                model.weights[layer] -= config.lr * gw[layer]
                model.biases[layer] -= config.lr * gb[layer]
        tr_loss = loss(_forward_batch(model, x_tr)[0], y_tr, lam)
        val_loss = tr_loss if n_val == 0 else loss(_forward_batch(model, x_val)[0], y_val, lam)
        if not (np.isfinite(tr_loss) and np.isfinite(val_loss)):
            raise NonFiniteLoss(f"loss diverged at epoch {epoch}")
        history["train"].append(tr_loss)
        history["val"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = model.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    history["best_epoch"] = best_epoch
    history["best_val"] = best_val
    return best, history


def gradient_check(m: Mlp, f: np.ndarray, y: float = 0.25, lam: float = 0.64) -> float:
    """Max relative error between analytic and central-difference gradients
    over every parameter, h = 1e-5."""
    f = np.asarray(f, dtype=np.float64)
    x = f[None, :]
    target = np.array([y])
    gw, gb, _ = _gradients(m, x, target, lam)
    h = 1e-5
    worst = 0.0

    def probe(arr, grad):
        nonlocal worst
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            keep = arr[ix]
            arr[ix] = keep + h
            up = loss(_forward_batch(m, x)[0], target, lam)
            arr[ix] = keep - h
            down = loss(_forward_batch(m, x)[0], target, lam)
            arr[ix] = keep
            numeric = (up - down) / (2 * h)
            analytic = grad[ix]
            scale = max(1e-8, abs(numeric) + abs(analytic))
            worst = max(worst, abs(numeric - analytic) / scale)
            it.iternext()

    for layer in range(len(m.weights)):
        probe(m.weights[layer], gw[layer])
        probe(m.biases[layer], gb[layer])
    return worst


@dataclass(frozen=True)
class OracleLabel:
    image_id: str
    best_steps: int
    best_cfg: float
    y_steps: float
    y_cfg: float


def oracle_labels(
    originals: list[tuple[str, np.ndarray]],
    decode_fn,
    embedder,
    steps_grid: tuple[int, ...] = ORACLE_STEPS,
    cfg_grid: tuple[float, ...] = ORACLE_CFGS,
) -> tuple[list[OracleLabel], dict[str, str]]:
    """Grid sweep per image: decode at every (steps, cfg), score the
    perceptual distance against the original, keep the argmin. Ties resolve
    to fewer steps, then lower cfg (the iteration order). A failed grid
    point invalidates that image with a recorded reason."""
    from .metrics import perceptual_distance

    labels: list[OracleLabel] = []
    failures: dict[str, str] = {}
    for image_id, original in originals:
        best_score = np.inf
        best: tuple[int, float] | None = None
        try:
            for steps in steps_grid:
                for cfg in cfg_grid:
                    decoded = decode_fn(image_id, steps, cfg)
                    score = perceptual_distance(original, decoded, embedder)
                    if score < best_score:
                        best_score = score
                        best = (steps, cfg)
        except Exception as exc:
            failures[image_id] = f"{type(exc).__name__}: {exc}"
            continue
        labels.append(
            OracleLabel(
                image_id=image_id,
                best_steps=best[0],
                best_cfg=best[1],
                y_steps=(best[0] - STEPS_MIN) / (STEPS_MAX - STEPS_MIN),
                y_cfg=best[1] / CFG_MAX,
            )
        )
    return labels, failures


def save_mlp(m: Mlp, path, lam: float) -> None:
    """Versioned little-endian binary: schema stats, layer dims, row-major
    64-bit weights. The training lambda rides along as metadata."""
    parts = [_MODEL_MAGIC, struct.pack("<Bd", _MODEL_VERSION, lam)]
    parts.append(struct.pack("<H", m.schema.dim))
    for name in m.schema.names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(np.asarray(m.schema.mean, dtype="<f8").tobytes())
    parts.append(np.asarray(m.schema.std, dtype="<f8").tobytes())
    parts.append(struct.pack("<B", len(m.sizes)))
    parts.append(struct.pack(f"<{len(m.sizes)}H", *m.sizes))
    for w, b in zip(m.weights, m.biases):
        parts.append(np.asarray(w, dtype="<f8").tobytes())
        parts.append(np.asarray(b, dtype="<f8").tobytes())
    try:
        with open(path, "wb") as fp:
            fp.write(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write model file {path}: {exc}") from exc


def load_mlp(path) -> tuple[Mlp, float]:
    try:
        with open(path, "rb") as fp:
            data = fp.read()
    except OSError as exc:
        raise IoError(f"cannot read model file {path}: {exc}") from exc

    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise Truncated(f"model file ends at byte {len(data)}, needed {pos + n}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4) != _MODEL_MAGIC:
        raise MalformedPayload("bad model file magic")
    version, lam = struct.unpack("<Bd", take(9))
    if version != _MODEL_VERSION:
        raise MalformedPayload(f"unsupported model version {version}")
    (dim,) = struct.unpack("<H", take(2))
    names = []
    for _ in range(dim):
        (ln,) = struct.unpack("<H", take(2))
        names.append(take(ln).decode("utf-8"))
    mean = np.frombuffer(take(8 * dim), dtype="<f8").copy()
    std = np.frombuffer(take(8 * dim), dtype="<f8").copy()
    schema = FeatureSchema(names=tuple(names), mean=mean, std=std)
    (n_sizes,) = struct.unpack("<B", take(1))
    sizes = struct.unpack(f"<{n_sizes}H", take(2 * n_sizes))
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(take(8 * fan_out * fan_in), dtype="<f8").reshape(fan_out, fan_in).copy()
        b = np.frombuffer(take(8 * fan_out), dtype="<f8").copy()
        weights.append(w)
        biases.append(b)
    if pos != len(data):
        raise MalformedPayload(f"{len(data) - pos} trailing bytes in model file")
    return Mlp(sizes=tuple(sizes), weights=weights, biases=biases, schema=schema), lam
