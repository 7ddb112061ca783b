"""Channel-attention fusion of per-view app vectors and the MLP classifier.

The three view vectors form channels of a c x d input. Average- and
max-pooling per channel feed a two-layer projection whose softmax output
reweights the channels before they are summed into one d-vector; a large
negative bias removes absent (all-zero) channels from the softmax. The
fused vector goes through a 128-256-128-64-32-16-1 ReLU stack with a
sigmoid output. Attention and MLP train jointly with Adam on cross-entropy.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricReport, binary_metrics

MASK_BIAS = -1e30
ATTENTION_HIDDEN = 6
MLP_HIDDEN = (256, 128, 64, 32, 16)
MLP_DROPOUT = (True, False, True, False, True)  # hidden layers 1..5
N_CHANNELS = 3


class FusionError(Exception):
    pass


class NoViewError(FusionError):
    """Raised for an app whose channels are all absent."""


@dataclass
class ChannelInput:
    """c x d view-vector matrix; masked channels are exactly the all-zero rows."""

    V: np.ndarray
    zero_mask: np.ndarray = field(init=False)

    def __post_init__(self):
        self.V = np.asarray(self.V)
        if self.V.ndim != 2:
            raise FusionError("channel input must be a c x d matrix")
        self.zero_mask = ~self.V.any(axis=1)

    @classmethod
    def from_views(cls, vectors: list[np.ndarray | None], d: int,
                   dtype=np.float32) -> "ChannelInput":
        rows = []
        for v in vectors:
            if v is None:
                rows.append(np.zeros(d, dtype=dtype))
            else:
                v = np.asarray(v, dtype=dtype)
                if v.shape != (d,):
                    raise FusionError(f"view vector has shape {v.shape}, want ({d},)")
                rows.append(v)
        return cls(V=np.stack(rows))


@dataclass
class AttentionParams:
    w0: np.ndarray  # c x 6
    w1: np.ndarray  # 6 x c

    def __post_init__(self):
        self.w0 = np.asarray(self.w0)
        self.w1 = np.asarray(self.w1)
        c = self.w0.shape[0] if self.w0.ndim == 2 else -1
        if c < 1 or self.w0.shape != (c, ATTENTION_HIDDEN) or self.w1.shape != (ATTENTION_HIDDEN, c):
            raise FusionError(
                f"attention shapes must be (c,{ATTENTION_HIDDEN}) and ({ATTENTION_HIDDEN},c), "
                f"got {self.w0.shape} and {self.w1.shape}"
            )


@dataclass
class MlpParams:
    weights: list[np.ndarray]        # one (fan_in, fan_out) matrix per dense layer
    biases: list[np.ndarray]
    dropout_flags: tuple[bool, ...]  # per hidden layer
    dropout_rate: float = 0.5

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise FusionError("weights and biases must align")
        if len(self.dropout_flags) != max(len(self.weights) - 1, 0):
            raise FusionError("need one dropout flag per hidden layer")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise FusionError("layer shapes do not chain")
        if self.weights and self.weights[-1].shape[1] != 1:
            raise FusionError("output layer must have one unit")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    def shape_audit(self) -> dict:
        """Layer widths and which hidden layers carry dropout (1-based)."""
        return {
            "dims": list(self.dims),
            "dropout_hidden_layers": [i + 1 for i, f in enumerate(self.dropout_flags) if f],
            "dropout_rate": self.dropout_rate,
        }


@dataclass
class FusionModel:
    attention: AttentionParams
    mlp: MlpParams
    d: int
    c: int = N_CHANNELS
    seed: int = 0
    epochs: int = 0
    fusion: str = "attn"  # "attn" or "add"


def init_model(d: int = 128, c: int = N_CHANNELS, hidden: tuple[int, ...] = MLP_HIDDEN,
               dropout_flags: tuple[bool, ...] = MLP_DROPOUT, dropout_rate: float = 0.5,
               seed: int = 0, fusion: str = "attn", dtype=np.float32) -> FusionModel:
    """Kaiming-uniform init for the ReLU stack, Xavier-uniform elsewhere; zero biases."""
    if fusion not in ("attn", "add"):
        raise FusionError(f"fusion must be attn or add, got {fusion!r}")
    if len(dropout_flags) != len(hidden):
        raise FusionError("need one dropout flag per hidden layer")
    dims = (d,) + tuple(hidden) + (1,)
    rng = np.random.Generator(np.random.PCG64(seed))

    def xavier(shape):
        bound = np.sqrt(6.0 / (shape[0] + shape[1]))
        return ((rng.random(shape) * 2 - 1) * bound).astype(dtype)

    def kaiming(shape):
        bound = np.sqrt(6.0 / shape[0])
        return ((rng.random(shape) * 2 - 1) * bound).astype(dtype)

    attention = AttentionParams(w0=xavier((c, ATTENTION_HIDDEN)),
                                w1=xavier((ATTENTION_HIDDEN, c)))
    weights, biases = [], []
    for i in range(len(dims) - 1):
        shape = (dims[i], dims[i + 1])
        last = i == len(dims) - 2
        weights.append(xavier(shape) if last else kaiming(shape))
        biases.append(np.zeros(dims[i + 1], dtype=dtype))
    mlp = MlpParams(weights=weights, biases=biases, dropout_flags=tuple(dropout_flags),
                    dropout_rate=dropout_rate)
    return FusionModel(attention=attention, mlp=mlp, d=d, c=c, seed=seed, fusion=fusion)


def _attention_forward(att: AttentionParams, V: np.ndarray, mask: np.ndarray) -> dict:
    """Batch attention: V is (B, c, d), mask is (B, c) booleans."""
    s = V.mean(axis=2) + V.max(axis=2)                      # (B, c)
    hpre = s @ att.w0                                       # (B, 6)
    h = np.maximum(hpre, 0)
    logits = h @ att.w1                                     # (B, c)
    shifted = logits + mask.astype(logits.dtype) * logits.dtype.type(MASK_BIAS)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    M = e / e.sum(axis=1, keepdims=True)                    # (B, c)
    y0 = np.einsum("bc,bcd->bd", M, V)                      # (B, d)
    return {"s": s, "hpre": hpre, "h": h, "M": M, "y0": y0}


def channel_attention(x: ChannelInput, a: AttentionParams) -> tuple[np.ndarray, np.ndarray]:
    """Attention map and fused vector for one app.

    The map is a softmax over the unmasked channels of the projected pooled
    statistics; the fused vector is the map-weighted channel sum.
    """
    if bool(x.zero_mask.all()):
        raise NoViewError("no-view app: every channel is all-zero")
    cache = _attention_forward(a, x.V[None, :, :], x.zero_mask[None, :])
    return cache["M"][0], cache["y0"][0]


def _dropout_masks(mlp: MlpParams, batch: int, rng: np.random.Generator,
                   dtype) -> list[np.ndarray | None]:
    keep = 1.0 - mlp.dropout_rate
    masks: list[np.ndarray | None] = []
    for i, flag in enumerate(mlp.dropout_flags):
        if flag:
            width = mlp.weights[i].shape[1]
            masks.append((rng.random((batch, width)) < keep).astype(dtype) / dtype(keep))
        else:
            masks.append(None)
    return masks


def _mlp_forward(mlp: MlpParams, y0: np.ndarray,
                 dropout_masks: list[np.ndarray | None] | None) -> dict:
    """Batch MLP: y0 is (B, d); dropout_masks None means eval mode."""
    acts = [y0]
    zs = []
    x = y0
    n_layers = len(mlp.weights)
    for i in range(n_layers):
        z = x @ mlp.weights[i] + mlp.biases[i]
        zs.append(z)
        if i < n_layers - 1:
            x = np.maximum(z, 0)
            if dropout_masks is not None and dropout_masks[i] is not None:
                x = x * dropout_masks[i]
            acts.append(x)
    p = 1.0 / (1.0 + np.exp(-zs[-1][:, 0]))
    return {"acts": acts, "zs": zs, "p": p}


def mlp_forward(y0: np.ndarray, m: MlpParams, mode: str = "eval",
                dropout_seed: int = 0) -> float:
    """Probability for one fused vector. Train mode applies inverted dropout
    drawn from dropout_seed; eval mode is deterministic and unscaled."""
    y0 = np.asarray(y0)
    if y0.shape != (m.dims[0],):
        raise FusionError(f"fused vector has shape {y0.shape}, want ({m.dims[0]},)")
    if mode == "train":
        rng = np.random.Generator(np.random.PCG64(dropout_seed))
        masks = _dropout_masks(m, 1, rng, y0.dtype.type)
    elif mode == "eval":
        masks = None
    else:
        raise FusionError(f"mode must be train or eval, got {mode!r}")
    return float(_mlp_forward(m, y0[None, :], masks)["p"][0])


def _forward(model: FusionModel, V: np.ndarray, mask: np.ndarray,
             dropout_masks: list[np.ndarray | None] | None) -> dict:
    if model.fusion == "attn":
        att_cache = _attention_forward(model.attention, V, mask)
        y0 = att_cache["y0"]
    else:
        att_cache = None
        y0 = V.sum(axis=1)
    mlp_cache = _mlp_forward(model.mlp, y0, dropout_masks)
    return {"att": att_cache, "mlp": mlp_cache, "V": V, "mask": mask}


def loss_and_grads(model: FusionModel, V: np.ndarray, mask: np.ndarray, y: np.ndarray,
                   dropout_masks: list[np.ndarray | None] | None = None) -> tuple[float, dict]:
    """Mean cross-entropy over the batch and gradients for every parameter.

    Keys: "w0", "w1", "W{i}", "b{i}". Pass dropout_masks for train mode;
    None runs the eval path (used by the finite-difference checks).
    """
    B = V.shape[0]
    cache = _forward(model, V, mask, dropout_masks)
    p = cache["mlp"]["p"]
    eps = 1e-12
    pc = np.clip(p, eps, 1 - eps)
    loss = float(np.mean(-(y * np.log(pc) + (1 - y) * np.log(1 - pc))))

    grads: dict[str, np.ndarray] = {}
    delta = ((p - y) / B)[:, None].astype(V.dtype)  # d(mean BCE)/d(final preactivation)
    mlp = model.mlp
    acts, zs = cache["mlp"]["acts"], cache["mlp"]["zs"]
    dy0 = None
    for i in reversed(range(len(mlp.weights))):
        grads[f"W{i}"] = acts[i].T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        dprev = delta @ mlp.weights[i].T
        if i > 0:
            if dropout_masks is not None and dropout_masks[i - 1] is not None:
                dprev = dprev * dropout_masks[i - 1]
            delta = dprev * (zs[i - 1] > 0)
        else:
            dy0 = dprev

    if model.fusion == "attn":
        att = cache["att"]
        M, h, hpre, s = att["M"], att["h"], att["hpre"], att["s"]
        dM = np.einsum("bd,bcd->bc", dy0, V)
        dlogits = M * (dM - (M * dM).sum(axis=1, keepdims=True))
        grads["w1"] = h.T @ dlogits
        dh = dlogits @ model.attention.w1.T
        dhpre = dh * (hpre > 0)
        grads["w0"] = s.T @ dhpre
    else:
        grads["w1"] = np.zeros_like(model.attention.w1)
        grads["w0"] = np.zeros_like(model.attention.w0)
    return loss, grads


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    dropout: float = 0.5
    fusion: str = "attn"
    hidden: tuple[int, ...] = MLP_HIDDEN
    dropout_flags: tuple[bool, ...] = MLP_DROPOUT
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


def _stack_dataset(dataset: list[tuple[ChannelInput, int]]):
    if not dataset:
        raise FusionError("empty dataset")
    for i, (x, y) in enumerate(dataset):
        if y is None:
            raise FusionError(f"sample {i} has no label; training needs labeled apps")
        if y not in (0, 1):
            raise FusionError(f"sample {i} has label {y!r}, want 0 or 1")
        if bool(x.zero_mask.all()):
            raise NoViewError(f"sample {i} is a no-view app: every channel is all-zero")
    c, d = dataset[0][0].V.shape
    V = np.stack([x.V for x, _ in dataset]).astype(np.float32)
    mask = np.stack([x.zero_mask for x, _ in dataset])
    y = np.array([lab for _, lab in dataset], dtype=np.float32)
    if V.shape[1:] != (c, d):
        raise FusionError("inconsistent channel shapes in dataset")
    return V, mask, y, c, d


def train_classifier(dataset: list[tuple[ChannelInput, int]], hp: TrainParams = TrainParams(),
                     seed: int = 0) -> tuple[FusionModel, list[float]]:
    """Joint mini-batch Adam training of attention and MLP; returns the model
    and the per-epoch mean loss curve. Deterministic for a given seed."""
    V, mask, y, c, d = _stack_dataset(dataset)
    model = init_model(d=d, c=c, hidden=hp.hidden, dropout_flags=hp.dropout_flags,
                       dropout_rate=hp.dropout, seed=seed, fusion=hp.fusion)
    if hp.epochs == 0:
        return model, []
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(1,))))

    params: dict[str, np.ndarray] = {"w0": model.attention.w0, "w1": model.attention.w1}
    for i in range(len(model.mlp.weights)):
        params[f"W{i}"] = model.mlp.weights[i]
        params[f"b{i}"] = model.mlp.biases[i]
    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    t = 0

    n = len(y)
    curve = []
    for _epoch in range(hp.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, hp.batch_size):
            idx = perm[lo:lo + hp.batch_size]
            masks = _dropout_masks(model.mlp, len(idx), rng, np.float32)
            loss, grads = loss_and_grads(model, V[idx], mask[idx], y[idx], dropout_masks=masks)
            epoch_loss += loss * len(idx)
            t += 1
            b1c = 1.0 - hp.beta1 ** t
            b2c = 1.0 - hp.beta2 ** t
            for k, g in grads.items():
                adam_m[k] = hp.beta1 * adam_m[k] + (1 - hp.beta1) * g
                adam_v[k] = hp.beta2 * adam_v[k] + (1 - hp.beta2) * g * g
                step = hp.lr * (adam_m[k] / b1c) / (np.sqrt(adam_v[k] / b2c) + hp.adam_eps)
                params[k] -= step.astype(params[k].dtype)
        curve.append(epoch_loss / n)
    model.epochs = hp.epochs
    model.seed = seed
    return model, curve


def predict_scores(model: FusionModel, inputs: list[ChannelInput]) -> np.ndarray:
    """Eval-mode probabilities; raises NoViewError on an all-masked sample."""
    if not inputs:
        return np.zeros(0, dtype=np.float64)
    for i, x in enumerate(inputs):
        if bool(x.zero_mask.all()):
            raise NoViewError(f"input {i} is a no-view app: every channel is all-zero")
    V = np.stack([x.V for x in inputs]).astype(np.float32)
    mask = np.stack([x.zero_mask for x in inputs])
    cache = _forward(model, V, mask, None)
    return cache["mlp"]["p"].astype(np.float64)


def evaluate(model: FusionModel, dataset: list[tuple[ChannelInput, int]],
             threshold: float = 0.5) -> MetricReport:
    V, mask, y, _, _ = _stack_dataset(dataset)
    cache = _forward(model, V, mask, None)
    return binary_metrics(y.astype(np.int64), cache["mlp"]["p"], threshold)


def save_model(model: FusionModel, path) -> None:
    doc = {
        "attention": {
            "w0": model.attention.w0.tolist(),
            "w1": model.attention.w1.tolist(),
        },
        "mlp": {
            "layers": [
                {"w": w.tolist(), "b": b.tolist()}
                for w, b in zip(model.mlp.weights, model.mlp.biases)
            ],
            "dropout": list(model.mlp.dropout_flags),
            "dropout_rate": model.mlp.dropout_rate,
        },
        "meta": {
            "d": model.d,
            "c": model.c,
            "seed": model.seed,
            "epochs": model.epochs,
            "fusion": model.fusion,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> FusionModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    att = AttentionParams(
        w0=np.array(doc["attention"]["w0"], dtype=np.float32),
        w1=np.array(doc["attention"]["w1"], dtype=np.float32),
    )
    mlp = MlpParams(
        weights=[np.array(layer["w"], dtype=np.float32) for layer in doc["mlp"]["layers"]],
        biases=[np.array(layer["b"], dtype=np.float32) for layer in doc["mlp"]["layers"]],
        dropout_flags=tuple(bool(f) for f in doc["mlp"]["dropout"]),
        dropout_rate=float(doc["mlp"].get("dropout_rate", 0.5)),
    )
    meta = doc["meta"]
    return FusionModel(attention=att, mlp=mlp, d=int(meta["d"]), c=int(meta["c"]),
                       seed=int(meta["seed"]), epochs=int(meta["epochs"]),
                       fusion=meta.get("fusion", "attn"))
