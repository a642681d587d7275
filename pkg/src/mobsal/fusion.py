"""Combining the trajectory LSTM with behavioural feature groups.

Three architectures:

* ``dnn_concat`` - the LSTM encoder's final hidden state is concatenated with
  the feature groups and fed to a feed-forward net; encoder and net train
  jointly (``freeze_encoder`` turns the joint update off).
* ``dnn_logit_feature`` - a pretrained, frozen LSTM contributes its logits as
  one more feature group for a feed-forward net.
* ``forest_over_logits`` - same inputs, random forest head (the default).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neuralseq as ns
from .features import GROUPS, FeatureTable
from .forest import ForestConfig, ForestModel, forest_fit

VARIANTS = ("dnn_concat", "dnn_logit_feature", "forest_over_logits")
DEFAULT_VARIANT = "forest_over_logits"
TIME_ONEHOT_WIDTH = 2 * (24 + 7)


@dataclass(frozen=True)
class DnnConfig:
    hidden: tuple = (128, 64)
    freeze_encoder: bool = False  # only used by dnn_concat

    def __post_init__(self):
        if any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must be >= 1")


def time_onehot(time: np.ndarray) -> np.ndarray:
    """(n, 4) [begin_hour, begin_dow, end_hour, end_dow] -> (n, 62) one-hot."""
    time = np.asarray(time, dtype=np.int64)
    out = np.zeros((len(time), TIME_ONEHOT_WIDTH))
    rows = np.arange(len(time))
    out[rows, time[:, 0]] = 1
    out[rows, 24 + time[:, 1]] = 1
    out[rows, 31 + time[:, 2]] = 1
    out[rows, 55 + time[:, 3]] = 1
    return out


def feature_block(features: FeatureTable, groups, one_hot_time: bool):
    """Selected feature groups side by side, plus a name -> column slice layout."""
    blocks, layout, col = [], {}, 0
    for g in groups:
        if g not in GROUPS:
            raise ValueError(f"unknown feature group {g!r}")
        arr = features.group(g)
        arr = time_onehot(arr) if (g == "time" and one_hot_time) else np.asarray(arr, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != len(features.query_ids):
            raise ValueError(f"feature group {g!r} has inconsistent shape {arr.shape}")
        blocks.append(arr)
        layout[g] = slice(col, col + arr.shape[1])
        col += arr.shape[1]
    n = len(features.query_ids)
    return (np.hstack(blocks) if blocks else np.zeros((n, 0))), layout


def build_fusion_inputs(logits: np.ndarray, features: FeatureTable, groups=(),
                        variant: str = DEFAULT_VARIANT):
    """Design matrix ``[logits | group_1 | group_2 | ...]`` and its column layout.

    Time is one-hot encoded for the DNN variants and kept ordinal for the
    forest.  ``logits`` must be row-aligned with ``features``.
    """
    logits = np.asarray(logits, dtype=float)
    if logits.shape[0] != len(features.query_ids):
        raise ValueError("logits: row count differs from feature table")
    block, layout = feature_block(features, groups, one_hot_time=variant != "forest_over_logits")
    m = logits.shape[1]
    layout = {"logits": slice(0, m), **{g: slice(s.start + m, s.stop + m) for g, s in layout.items()}}
    return np.hstack([logits, block]), layout


# -- feed-forward head ---------------------------------------------------------

def mlp_init(sizes, rng) -> dict:
    params = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        s = 1.0 / np.sqrt(a)
        params[f"mlp_W{i}"] = rng.uniform(-s, s, size=(a, b))
        params[f"mlp_b{i}"] = rng.uniform(-s, s, size=b)
    return params


def mlp_forward(params, x):
    n_layers = sum(1 for k in params if k.startswith("mlp_W"))
    acts = [x]
    for i in range(n_layers):
        z = acts[-1] @ params[f"mlp_W{i}"] + params[f"mlp_b{i}"]
        acts.append(np.maximum(z, 0.0) if i < n_layers - 1 else z)
    return acts[-1], acts


def mlp_backward(params, acts, dout):
    n_layers = len(acts) - 1
    grads = {}
    d = dout
    for i in range(n_layers - 1, -1, -1):
        grads[f"mlp_W{i}"] = acts[i].T @ d
        grads[f"mlp_b{i}"] = d.sum(0)
        d = d @ params[f"mlp_W{i}"].T
        if i > 0:
            d = d * (acts[i] > 0)
    return grads, d


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x):
        mean = x.mean(0) if len(x) else np.zeros(x.shape[1])
        std = x.std(0) if len(x) else np.ones(x.shape[1])
        return cls(mean, np.where(std > 0, std, 1.0))

    def __call__(self, x):
        return (x - self.mean) / self.scale


def _ce_grad(logits, targets):
    B = len(targets)
    loss = ns.cross_entropy(logits, targets)
    d = ns.softmax(logits)
    d[np.arange(B), targets] -= 1.0
    return loss, d / B


@dataclass
class FusedModel:
    variant: str
    m: int
    groups: tuple
    lstm: ns.LstmClassifier | None = None
    params: dict = field(default_factory=dict)  # MLP (+ encoder for dnn_concat)
    scaler: Standardizer | None = None
    forest: ForestModel | None = None
    seeds: dict = field(default_factory=dict)

    def predict_logits(self, seqs, features: FeatureTable) -> np.ndarray:
        """Scores over the M locations (probabilities for the forest)."""
        if self.variant == "dnn_concat":
            out = np.zeros((len(seqs), self.m))
            block, _ = feature_block(features, self.groups, one_hot_time=True)
            for a in range(0, len(seqs), 256):
                out[a:a + 256] = joint_forward(self.params, seqs[a:a + 256],
                                               self.scaler(block[a:a + 256]), self.m)[0]
            return out
        logits = ns.predict_logits(self.lstm, seqs)
        x, _ = build_fusion_inputs(logits, features, self.groups, self.variant)
        if self.variant == "forest_over_logits":
            return self.forest.predict_proba(x)
        return mlp_forward(self.params, self.scaler(x))[0]

    def predict(self, seqs, features: FeatureTable) -> np.ndarray:
        return ns.argmax_smallest(self.predict_logits(seqs, features))


# -- joint encoder + DNN (dnn_concat) ----------------------------------------

ENCODER_KEYS = ("embedding", "W", "b")


def joint_forward(params, seqs, feats, m):
    tokens, mask = ns.pad_batch(seqs, m)
    h, enc = ns.encode(params, tokens, mask)
    x = np.hstack([h, feats])
    out, acts = mlp_forward(params, x)
    return out, (enc, acts, h.shape[1])


def joint_loss_and_grads(params, seqs, feats, targets, m, train_encoder=True):
    """Cross-entropy of the joint model and gradients for every trainable tensor."""
    targets = np.asarray(targets, dtype=np.int64)
    logits, (enc, acts, H) = joint_forward(params, seqs, feats, m)
    loss, d = _ce_grad(logits, targets)
    grads, dx = mlp_backward(params, acts, d)
    if train_encoder:
        grads.update(ns.encode_backward(params, enc, dx[:, :H]))
    return loss, grads


def fusion_fit(variant: str, train_seqs, train_features: FeatureTable, train_labels, m: int, *,
               groups=(), pretrained: ns.LstmClassifier | None = None,
               val_seqs=None, val_features: FeatureTable | None = None, val_labels=None,
               train_cfg: ns.TrainConfig = ns.TrainConfig(), dnn_cfg: DnnConfig = DnnConfig(),
               forest_cfg: ForestConfig = ForestConfig(), embed_dim: int = 32, hidden_dim: int = 64,
               audit=None) -> FusedModel:
    """Train one fusion architecture on the training partition.

    ``pretrained`` must have been trained on the same training partition
    only; it is required for the logit-based variants and optionally warm
    starts the dnn_concat encoder.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown fusion variant {variant!r}")
    groups = tuple(groups)
    y = np.asarray(train_labels, dtype=np.int64)
    has_val = val_seqs is not None and len(val_seqs) > 0
    if audit is not None:
        audit.record(f"fusion:{variant}", train_features.query_ids)
    seeds = {"train": train_cfg.rng_seed, "forest": forest_cfg.rng_seed}

    if variant == "forest_over_logits":
        logits = ns.predict_logits(pretrained, train_seqs)
        x, _ = build_fusion_inputs(logits, train_features, groups, variant)
        forest = forest_fit(x, y, forest_cfg, n_classes=m)
        return FusedModel(variant, m, groups, lstm=pretrained, forest=forest, seeds=seeds)

    rng = np.random.default_rng(train_cfg.rng_seed)
    if variant == "dnn_logit_feature":
        if pretrained is None:
            raise ValueError("dnn_logit_feature needs a pretrained LSTM")
        x, _ = build_fusion_inputs(ns.predict_logits(pretrained, train_seqs), train_features, groups, variant)
        scaler = Standardizer.fit(x)
        xs = scaler(x)
        params = mlp_init((x.shape[1], *dnn_cfg.hidden, m), rng)
        model = FusedModel(variant, m, groups, lstm=pretrained, params=params, scaler=scaler, seeds=seeds)

        def step(idx):
            logits, acts = mlp_forward(params, xs[idx])
            loss, d = _ce_grad(logits, y[idx])
            return loss, mlp_backward(params, acts, d)[0]
    else:
        block, _ = feature_block(train_features, groups, one_hot_time=True)
        scaler = Standardizer.fit(block)
        fs = scaler(block)
        if pretrained is not None:
            enc = {k: pretrained.params[k].copy() for k in ENCODER_KEYS}
        else:
            enc = {k: v for k, v in ns.LstmClassifier.init(m, embed_dim, hidden_dim, rng=rng).params.items()
                   if k in ENCODER_KEYS}
        H = enc["W"].shape[1] // 4
        params = {**enc, **mlp_init((H + fs.shape[1], *dnn_cfg.hidden, m), rng)}
        model = FusedModel(variant, m, groups, params=params, scaler=scaler, seeds=seeds)
        train_enc = not dnn_cfg.freeze_encoder

        def step(idx):
            loss, grads = joint_loss_and_grads(params, [train_seqs[i] for i in idx], fs[idx], y[idx], m,
                                               train_encoder=train_enc)
            return loss, grads

    def val():
        if not has_val:
            return None
        pred = model.predict(val_seqs, val_features)
        return float((pred == np.asarray(val_labels)).mean())

    best, _ = ns.adam_train(params, len(y), step, val, train_cfg)
    model.params = best
    return model


def relative_performance(fused_acc: float, lstm_acc: float):
    """Fused Accuracy@1 over pure-LSTM Accuracy@1; ``None`` when the LSTM scored 0."""
    if lstm_acc <= 0:
        return None
    return fused_acc / lstm_acc


def id_hash(query_id) -> str:
    return hashlib.sha256(str(int(query_id)).encode()).hexdigest()[:16]


def partition_hash(query_ids) -> str:
    h = hashlib.sha256()
    for q in sorted(int(q) for q in query_ids):
        h.update(f"{q}\n".encode())
    return h.hexdigest()


class LeakageError(AssertionError):
    pass


@dataclass
class TrainingAudit:
    """Records hashed query IDs fed to every training call."""

    entries: list = field(default_factory=list)  # (call name, set of id hashes)

    def record(self, name: str, query_ids):
        self.entries.append((name, {id_hash(q) for q in query_ids}))

    def assert_no_leakage(self, held_out_ids):
        held = {id_hash(q) for q in held_out_ids}
        for name, seen in self.entries:
            overlap = seen & held
            if overlap:
                raise LeakageError(f"{name}: {len(overlap)} held-out queries used for training")


def save_fused(model: FusedModel, directory, manifest_extra: dict | None = None):
    """Bundle a fused model: tensor checkpoint and/or forest JSON plus manifest.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    if model.lstm is not None:
        ns.save_checkpoint(model.lstm, d / "lstm.ckpt")
        files.append("lstm.ckpt")
    if model.params:
        tensors = dict(model.params)
        if model.scaler is not None:
            tensors["scaler_mean"], tensors["scaler_scale"] = model.scaler.mean, model.scaler.scale
        ns.save_tensors(d / "head.ckpt", tensors, {"variant": model.variant})
        files.append("head.ckpt")
    if model.forest is not None:
        model.forest.save(d / "forest.json")
        files.append("forest.json")
    manifest = {"variant": model.variant, "m": model.m, "groups": list(model.groups),
                "seeds": model.seeds, "files": files, **(manifest_extra or {})}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_fused(directory) -> FusedModel:
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    model = FusedModel(man["variant"], man["m"], tuple(man["groups"]), seeds=man.get("seeds", {}))
    if "lstm.ckpt" in man["files"]:
        model.lstm = ns.load_checkpoint(d / "lstm.ckpt")
    if "head.ckpt" in man["files"]:
        tensors, _ = ns.load_tensors(d / "head.ckpt")
        model.scaler = Standardizer(tensors.pop("scaler_mean"), tensors.pop("scaler_scale"))
        model.params = tensors
    if "forest.json" in man["files"]:
        model.forest = ForestModel.load(d / "forest.json")
    return model
