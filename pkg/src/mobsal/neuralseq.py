"""Embedding + single-layer LSTM + linear head, trained with hand-written BPTT.

Sequences in a batch are left-padded; padded steps are masked so the hidden
and cell state stay at their zero initial value until the first real token.
That makes batched results identical to running each sequence alone.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

PARAM_NAMES = ("embedding", "W", "b", "W_out", "b_out")


@dataclass(frozen=True)
class SequencePreprocessConfig:
    truncate_len: int = 100

    def __post_init__(self):
        if self.truncate_len < 1:
            raise ValueError("truncate_len must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 50
    early_stop_patience: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")


def preprocess_sequence(history, cfg: SequencePreprocessConfig = SequencePreprocessConfig()) -> list[int]:
    """Merge consecutive repeats, then keep the last ``truncate_len`` tokens."""
    if len(history) == 0:
        raise ValueError("history must be non-empty")
    out: list[int] = []
    for x in history:
        x = int(x)
        if not out or out[-1] != x:
            out.append(x)
    return out[-cfg.truncate_len:]


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


@dataclass
class LstmClassifier:
    m: int
    embed_dim: int = 32
    hidden_dim: int = 64
    params: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def init(cls, m, embed_dim=32, hidden_dim=64, rng=None, seed=0):
        rng = rng if rng is not None else np.random.default_rng(seed)
        s = 1.0 / np.sqrt(hidden_dim)
        shapes = {
            "embedding": (m, embed_dim),
            "W": (embed_dim + hidden_dim, 4 * hidden_dim),  # gates i, f, g, o
            "b": (4 * hidden_dim,),
            "W_out": (hidden_dim, m),
            "b_out": (m,),
        }
        params = {k: rng.uniform(-s, s, size=v) for k, v in shapes.items()}
        return cls(m, embed_dim, hidden_dim, params, seed)

    @classmethod
    def zeros(cls, m, embed_dim=32, hidden_dim=64):
        model = cls.init(m, embed_dim, hidden_dim)
        for v in model.params.values():
            v[...] = 0.0
        return model

    def copy(self) -> "LstmClassifier":
        return LstmClassifier(self.m, self.embed_dim, self.hidden_dim,
                              {k: v.copy() for k, v in self.params.items()}, self.seed)


def pad_batch(seqs, m: int):
    """Left-pad token lists into (B, T) ids and a boolean mask."""
    if any(len(s) == 0 for s in seqs):
        raise ValueError("token sequences must be non-empty")
    T = max(len(s) for s in seqs)
    tokens = np.zeros((len(seqs), T), dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        arr = np.asarray(s, dtype=np.int64)
        if arr.min() < 0 or arr.max() >= m:
            raise ValueError(f"token outside vocabulary [0, {m})")
        tokens[i, T - len(arr):] = arr
        mask[i, T - len(arr):] = True
    return tokens, mask


def encode(params, tokens, mask):
    """Run the LSTM; returns the final hidden state (B, H) and a cache for ``encode_backward``."""
    E, W, b = params["embedding"], params["W"], params["b"]
    B, T = tokens.shape
    H = W.shape[1] // 4
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        x = E[tokens[:, t]]
        xh = np.concatenate([x, h], axis=1)
        z = xh @ W + b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        mk = mask[:, t:t + 1]
        cache.append((xh, i, f, g, o, c, tc))
        c = np.where(mk, c_new, c)
        h = np.where(mk, h_new, h)
    return h, (tokens, mask, cache)


def encode_backward(params, enc_cache, dh):
    E, W = params["embedding"], params["W"]
    tokens, mask, cache = enc_cache
    D = E.shape[1]
    H = W.shape[1] // 4
    dE = np.zeros_like(E)
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[1])
    dc = np.zeros_like(dh)
    for t in range(len(cache) - 1, -1, -1):
        xh, i, f, g, o, c_prev, tc = cache[t]
        mk = mask[:, t:t + 1]
        dh_new = np.where(mk, dh, 0.0)
        dc_new = np.where(mk, dc, 0.0)
        do = dh_new * tc
        dcn = dc_new + dh_new * o * (1.0 - tc ** 2)
        di = dcn * g
        dg = dcn * i
        df = dcn * c_prev
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g ** 2),
            do * o * (1.0 - o),
        ], axis=1)
        dW += xh.T @ dz
        db += dz.sum(0)
        dxh = dz @ W.T
        dx = dxh[:, :D]
        # masked steps pass state gradients straight through
        dh = np.where(mk, dxh[:, D:], dh)
        dc = np.where(mk, dcn * f, dc)
        rows = mask[:, t]
        np.add.at(dE, tokens[rows, t], dx[rows])
    return {"embedding": dE, "W": dW, "b": db}


def forward_batch(model: LstmClassifier, seqs):
    tokens, mask = pad_batch(seqs, model.m)
    h, enc = encode(model.params, tokens, mask)
    logits = h @ model.params["W_out"] + model.params["b_out"]
    return logits, (h, enc)


def forward(model: LstmClassifier, tokens):
    """Logits (length M) for one token sequence, plus the activation cache."""
    logits, cache = forward_batch(model, [list(tokens)])
    return logits[0], cache


def cross_entropy(logits, targets):
    lp = log_softmax(logits)
    return float(-lp[np.arange(len(targets)), targets].mean())


def loss_and_grads(model: LstmClassifier, batch):
    """Mean cross-entropy over ``batch`` of (tokens, target) and its exact gradients."""
    seqs = [list(s) for s, _ in batch]
    targets = np.array([t for _, t in batch], dtype=np.int64)
    if targets.min() < 0 or targets.max() >= model.m:
        raise ValueError(f"target outside [0, {model.m})")
    logits, (h, enc) = forward_batch(model, seqs)
    B = len(batch)
    loss = cross_entropy(logits, targets)
    dlogits = softmax(logits)
    dlogits[np.arange(B), targets] -= 1.0
    dlogits /= B
    grads = {"W_out": h.T @ dlogits, "b_out": dlogits.sum(0)}
    grads.update(encode_backward(model.params, enc, dlogits @ model.params["W_out"].T))
    return loss, grads


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            params[k] -= c.learning_rate * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.epsilon)


def predict_logits(model: LstmClassifier, seqs, batch_size: int = 256) -> np.ndarray:
    out = np.zeros((len(seqs), model.m))
    for a in range(0, len(seqs), batch_size):
        out[a:a + batch_size] = forward_batch(model, seqs[a:a + batch_size])[0]
    return out


def argmax_smallest(logits) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the smallest ID on ties
    return np.argmax(np.atleast_2d(logits), axis=1)


def predict(model: LstmClassifier, tokens):
    logits, _ = forward(model, tokens)
    return int(np.argmax(logits)), logits


def accuracy(model: LstmClassifier, data) -> float:
    if not data:
        return 0.0
    logits = predict_logits(model, [s for s, _ in data])
    targets = np.array([t for _, t in data])
    return float((argmax_smallest(logits) == targets).mean())


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = -1


def adam_train(params: dict, n_train: int, batch_step, val_accuracy, cfg: TrainConfig):
    """Shared mini-batch Adam loop with early stopping on validation accuracy.

    ``batch_step(indices)`` returns ``(loss, grads)`` for the training rows
    ``indices``; ``val_accuracy()`` scores the current ``params`` or returns
    ``None`` when there is no validation data (the last epoch is then kept).
    ``params`` is updated in place; the best snapshot is returned.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    opt = Adam(params, cfg)
    hist = TrainHistory()
    best = {k: v.copy() for k, v in params.items()}
    best_acc, stale = -1.0, 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_train)
        total = 0.0
        for a in range(0, n_train, cfg.batch_size):
            idx = order[a:a + cfg.batch_size]
            loss, grads = batch_step(idx)
            total += loss * len(idx)
            opt.step(params, grads)
        hist.train_loss.append(total / max(n_train, 1))
        acc = val_accuracy()
        if acc is None:
            best, hist.best_epoch = {k: v.copy() for k, v in params.items()}, epoch
            continue
        hist.val_accuracy.append(acc)
        if acc > best_acc:
            best, best_acc, stale, hist.best_epoch = {k: v.copy() for k, v in params.items()}, acc, 0, epoch
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    return best, hist


def train(model: LstmClassifier, train_set, validation_set, cfg: TrainConfig = TrainConfig()):
    """Adam on mini-batches with early stopping on validation Accuracy@1.

    ``train_set`` and ``validation_set`` are lists of (tokens, target).
    Returns the best-validation checkpoint (a copy) and the training history.
    """
    work = model.copy()

    def step(idx):
        return loss_and_grads(work, [train_set[i] for i in idx])

    def val():
        return accuracy(work, validation_set) if validation_set else None

    best, hist = adam_train(work.params, len(train_set), step, val, cfg)
    out = work.copy()
    out.params = best
    return out, hist


_MAGIC = b"MOBSALT1"


def save_tensors(path, tensors: dict, meta: dict | None = None):
    """Write named float64 tensors as a JSON header followed by raw little-endian data."""
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path):
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path} is not a tensor container")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen])
    base = 16 + hlen
    out = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        out[e["name"]] = np.frombuffer(data, "<f8", count, start).reshape(e["shape"]).copy()
    return out, header["meta"]


def save_checkpoint(model: LstmClassifier, path, train_cfg: TrainConfig | None = None):
    meta = {"m": model.m, "embed_dim": model.embed_dim, "hidden_dim": model.hidden_dim,
            "seed": model.seed, "train_config": asdict(train_cfg) if train_cfg else None}
    save_tensors(path, model.params, meta)


def load_checkpoint(path) -> LstmClassifier:
    tensors, meta = load_tensors(path)
    return LstmClassifier(meta["m"], meta["embed_dim"], meta["hidden_dim"],
                          {k: tensors[k] for k in PARAM_NAMES}, meta.get("seed", 0))
