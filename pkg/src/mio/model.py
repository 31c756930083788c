"""Toy-scale mmWave-inertial fusion network.

Radar CNN (3 stride-2 convs) and IMU recurrent encoder feed a cross-modal
gating block; a recurrent cell carries motion state across frame pairs and
three dense layers regress the relative 6-DoF motion. All passes, the loss
and training are plain numpy in float64.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .errors import (
    CheckpointMismatch,
    DivergedLoss,
    EmptyDataset,
    EmptyWindow,
    GraphNotRecorded,
    ShapeMismatch,
)
from .nn import Tensor
from .se3 import SixDof, wrap_angle
from .world import GRAVITY, ImuSample

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MIOM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    height: int = 16
    width: int = 64
    conv_channels: tuple = (8, 16, 32)
    imu_hidden: int = 32
    temporal_hidden: int = 64
    head_hidden: tuple = (64, 32)
    # fixed per-channel input scaling of (gyro, accel)
    imu_scale: tuple = (1.0, 1.0, 1.0, 1.0 / GRAVITY, 1.0 / GRAVITY, 1.0 / GRAVITY)

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "head_hidden", tuple(int(c) for c in self.head_hidden))
        object.__setattr__(self, "imu_scale", tuple(float(c) for c in self.imu_scale))

    @property
    def feature_grid(self) -> tuple:
        h, w = self.height, self.width
        for _ in self.conv_channels:
            h, w = nn.conv_out_size(h), nn.conv_out_size(w)
        return h, w

    @property
    def radar_features(self) -> int:
        h, w = self.feature_grid
        return self.conv_channels[-1] * h * w

    @property
    def fused_features(self) -> int:
        return self.radar_features + self.imu_hidden

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _param_shapes(cfg: ModelConfig) -> dict:
    """Name -> (shape, fan_in), in checkpoint order."""
    shapes = {}
    c_in = 2
    for i, c in enumerate(cfg.conv_channels, 1):
        shapes[f"conv{i}.W"] = ((c, c_in, 3, 3), c_in * 9)
        shapes[f"conv{i}.b"] = ((c,), c_in * 9)
        c_in = c
    F, Hi, Ht = cfg.radar_features, cfg.imu_hidden, cfg.temporal_hidden
    shapes["imu.Wx"] = ((Hi, 6), 6 + Hi)
    shapes["imu.Wh"] = ((Hi, Hi), 6 + Hi)
    shapes["imu.b"] = ((Hi,), 6 + Hi)
    shapes["att.Wa"] = ((F, Hi), Hi)
    shapes["att.ca"] = ((F,), Hi)
    shapes["att.Wb"] = ((Hi, F), F)
    shapes["att.cb"] = ((Hi,), F)
    shapes["temporal.Wx"] = ((Ht, F + Hi), F + Hi + Ht)
    shapes["temporal.Wh"] = ((Ht, Ht), F + Hi + Ht)
    shapes["temporal.b"] = ((Ht,), F + Hi + Ht)
    dims = [Ht, *cfg.head_hidden, 6]
    for i, (a, b) in enumerate(zip(dims, dims[1:]), 1):
        shapes[f"fc{i}.W"] = ((b, a), a)
        shapes[f"fc{i}.b"] = ((b,), a)
    return shapes


class ModelParams:
    """Named parameter tensors of the fusion network."""

    def __init__(self, config: ModelConfig, tensors: dict):
        self.config = config
        expected = _param_shapes(config)
        if list(tensors) != list(expected):
            raise CheckpointMismatch(f"parameter names {list(tensors)} do not match the architecture")
        for name, (shape, _) in expected.items():
            if tensors[name].shape != shape:
                raise CheckpointMismatch(f"{name}: shape {tensors[name].shape}, expected {shape}")
        self.tensors = tensors

    @classmethod
    def init(cls, config: ModelConfig = ModelConfig(), seed: int = 0, scale: float = 1.0) -> ModelParams:
        """Uniform(-s, s) with s = scale / sqrt(fan_in)."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, (shape, fan_in) in _param_shapes(config).items():
            s = scale / math.sqrt(fan_in)
            tensors[name] = Tensor(rng.uniform(-s, s, size=shape), name)
        return cls(config, tensors)

    @classmethod
    def zeros(cls, config: ModelConfig = ModelConfig()) -> ModelParams:
        return cls(config, {n: Tensor(np.zeros(s), n) for n, (s, _) in _param_shapes(config).items()})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def names(self) -> list:
        return list(self.tensors)

    def count(self) -> int:
        return sum(t.size for t in self)

    def zero_grad(self) -> None:
        for t in self:
            t.zero_grad()

    def copy(self) -> ModelParams:
        return ModelParams(self.config, {n: t.copy() for n, t in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self)


@dataclass
class Batch:
    """B sequences x T frame pairs; padded frames carry zero ``weights``."""

    pairs: np.ndarray      # (B, T, 2, H, W)
    imu: np.ndarray        # (B, T, L, 6)
    imu_len: np.ndarray    # (B, T)
    targets: np.ndarray | None = None  # (B, T, 6)
    weights: np.ndarray | None = None  # (B, T)

    @property
    def shape(self):
        return self.pairs.shape[:2]


@dataclass
class Forward:
    """Recorded forward pass; ``backward`` consumes it."""

    pred: np.ndarray
    hidden: np.ndarray
    hiddens: np.ndarray
    relu_masks: list
    cache: dict | None = None
    dpred: np.ndarray | None = None
    loss: float | None = None
    per_sample: np.ndarray | None = None

    def record_loss(self, targets, rot_weight: float, weights=None) -> float:
        self.loss, self.dpred, self.per_sample = batch_loss(self.pred, targets, rot_weight, weights)
        return self.loss

    def activation_signature(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.relu_masks])


# --- forward pieces ---------------------------------------------------------

def _radar_fwd(params: ModelParams, x: np.ndarray):
    cfg = params.config
    if x.shape[1:] != (2, cfg.height, cfg.width):
        raise ShapeMismatch(f"radar input {x.shape[1:]} != {(2, cfg.height, cfg.width)}")
    caches, masks = [], []
    for i in range(1, len(cfg.conv_channels) + 1):
        x, c = nn.conv2d_forward(x, params[f"conv{i}.W"], params[f"conv{i}.b"])
        x, m = nn.relu_forward(x)
        caches.append((c, m))
        masks.append(m)
    return x.reshape(len(x), -1), (caches, x.shape), masks


def _radar_bwd(da: np.ndarray, cache):
    caches, shape = cache
    d = da.reshape(shape)
    for c, m in reversed(caches):
        d = nn.conv2d_backward(nn.relu_backward(d, m), c)
    return d


def _imu_fwd(params: ModelParams, xs: np.ndarray, lengths: np.ndarray):
    scale = np.asarray(params.config.imu_scale)
    mask = (np.arange(xs.shape[1])[None, :] < lengths[:, None]).astype(float)
    h0 = np.zeros((len(xs), params.config.imu_hidden))
    return nn.rnn_forward(xs * scale, h0, params["imu.Wx"], params["imu.Wh"], params["imu.b"], mask)


def _fuse_fwd(params: ModelParams, a: np.ndarray, b: np.ndarray):
    mask_a = nn.sigmoid(b @ params["att.Wa"].data.T + params["att.ca"].data)
    mask_b = nn.sigmoid(a @ params["att.Wb"].data.T + params["att.cb"].data)
    return np.concatenate([a * mask_a, b * mask_b], axis=1), (a, b, mask_a, mask_b)


def _fuse_bwd(params: ModelParams, dout: np.ndarray, cache):
    a, b, mask_a, mask_b = cache
    F = a.shape[1]
    dya, dyb = dout[:, :F], dout[:, F:]
    da = dya * mask_a
    db = dyb * mask_b
    dza = dya * a * mask_a * (1.0 - mask_a)
    dzb = dyb * b * mask_b * (1.0 - mask_b)
    params["att.Wa"].grad += dza.T @ b
    params["att.ca"].grad += dza.sum(axis=0)
    params["att.Wb"].grad += dzb.T @ a
    params["att.cb"].grad += dzb.sum(axis=0)
    db += dza @ params["att.Wa"].data
    da += dzb @ params["att.Wb"].data
    return da, db


def _head_fwd(params: ModelParams, h: np.ndarray):
    n_fc = len(params.config.head_hidden) + 1
    caches, masks = [], []
    x = h
    for i in range(1, n_fc + 1):
        x, c = nn.linear_forward(x, params[f"fc{i}.W"], params[f"fc{i}.b"])
        m = None
        if i < n_fc:
            x, m = nn.relu_forward(x)
            masks.append(m)
        caches.append((c, m))
    return x, caches, masks


def _head_bwd(dout: np.ndarray, caches):
    d = dout
    for c, m in reversed(caches):
        if m is not None:
            d = nn.relu_backward(d, m)
        d = nn.linear_backward(d, c)
    return d


def forward(params: ModelParams, batch: Batch, h0: np.ndarray | None = None, record: bool = True) -> Forward:
    """Run the network over a (B, T) block of frame pairs."""
    cfg = params.config
    B, T = batch.shape
    L = batch.imu.shape[2]
    if h0 is None:
        h0 = np.zeros((B, cfg.temporal_hidden))
    if h0.shape != (B, cfg.temporal_hidden):
        raise ShapeMismatch(f"hidden state {h0.shape} != {(B, cfg.temporal_hidden)}")
    if batch.imu.shape[:2] != (B, T) or batch.imu.shape[3] != 6:
        raise ShapeMismatch(f"imu block {batch.imu.shape} does not match {(B, T)} x L x 6")

    a, rcache, rmasks = _radar_fwd(params, batch.pairs.reshape(B * T, *batch.pairs.shape[2:]))
    b, icache = _imu_fwd(params, batch.imu.reshape(B * T, L, 6), batch.imu_len.reshape(B * T))
    fused, fcache = _fuse_fwd(params, a, b)
    h_last, tcache = nn.rnn_forward(fused.reshape(B, T, -1), h0, params["temporal.Wx"],
                                    params["temporal.Wh"], params["temporal.b"])
    hiddens = np.stack(tcache[1][1:], axis=1)
    pred, hcache, hmasks = _head_fwd(params, hiddens.reshape(B * T, -1))
    out = Forward(pred.reshape(B, T, 6), h_last, hiddens, rmasks + hmasks)
    if record:
        out.cache = {"params": params, "radar": rcache, "imu": icache, "fuse": fcache,
                     "temporal": tcache, "head": hcache, "shape": (B, T, L)}
    return out


def backward(rec: Forward, dpred: np.ndarray | None = None) -> dict:
    """Reverse-mode pass; fills parameter ``grad`` buffers (zeroed first).

    Returns gradients w.r.t. the inputs: ``pairs``, ``imu`` (raw units) and ``h0``.
    """
    if rec.cache is None:
        raise GraphNotRecorded("no recorded forward pass (already consumed or record=False)")
    if dpred is None:
        dpred = rec.dpred
    if dpred is None:
        raise GraphNotRecorded("no loss recorded on this forward pass")
    c = rec.cache
    params = c["params"]
    B, T, L = c["shape"]
    params.zero_grad()
    dh = _head_bwd(dpred.reshape(B * T, 6), c["head"]).reshape(B, T, -1)
    dfused, dh0 = nn.rnn_backward(np.zeros_like(rec.hidden), c["temporal"], dhs_extra=dh)
    da, db = _fuse_bwd(params, dfused.reshape(B * T, -1), c["fuse"])
    dimu, _ = nn.rnn_backward(db, c["imu"])
    dimu = dimu * np.asarray(params.config.imu_scale)
    dpairs = _radar_bwd(da, c["radar"])
    rec.cache = None
    return {"pairs": dpairs.reshape(B, T, *dpairs.shape[1:]), "imu": dimu.reshape(B, T, L, 6), "h0": dh0}


# --- loss -------------------------------------------------------------------

def batch_loss(pred: np.ndarray, target: np.ndarray, rot_weight: float, weights=None):
    """Weighted mean of ``|dt|^2 + rot_weight * |wrap(de)|^2``; returns (loss, dloss/dpred, per-sample)."""
    diff = pred - target
    diff = np.concatenate([diff[..., :3], wrap_angle(diff[..., 3:])], axis=-1)
    coef = np.array([1.0, 1.0, 1.0, rot_weight, rot_weight, rot_weight])
    per = (coef * diff * diff).sum(axis=-1)
    if weights is None:
        weights = np.ones(per.shape)
    total = float(weights.sum())
    if total == 0:
        return 0.0, np.zeros_like(pred), per
    loss = float((weights * per).sum() / total)
    dpred = 2.0 * coef * diff * (weights / total)[..., None]
    return loss, dpred, per


def loss(pred: SixDof, target: SixDof, rot_weight: float = 100.0) -> float:
    """Translation squared error plus weighted, wrapped euler squared error."""
    value, _, _ = batch_loss(pred.as_vector()[None], target.as_vector()[None], rot_weight)
    return value


# --- single-sample operations -----------------------------------------------

def imu_window_array(window) -> np.ndarray:
    """(L, 6) array of (gyro, accel) rows from ImuSamples or an array."""
    if len(window) and isinstance(window[0], ImuSample):
        return np.array([s.vector() for s in window])
    return np.asarray(window, dtype=float).reshape(-1, 6)


def radar_encoder(pair: np.ndarray, params: ModelParams) -> np.ndarray:
    pair = np.asarray(pair, dtype=float)
    if pair.ndim != 3:
        raise ShapeMismatch(f"expected a (2, H, W) pair, got {pair.shape}")
    a, _, _ = _radar_fwd(params, pair[None])
    return a[0]


def imu_encoder(window, params: ModelParams) -> np.ndarray:
    x = imu_window_array(window)
    if len(x) == 0:
        raise EmptyWindow("IMU window is empty")
    b, _ = _imu_fwd(params, x[None], np.array([len(x)]))
    return b[0]


def mixed_attention_fuse(a: np.ndarray, b: np.ndarray, params: ModelParams) -> np.ndarray:
    cfg = params.config
    if np.shape(a) != (cfg.radar_features,) or np.shape(b) != (cfg.imu_hidden,):
        raise ShapeMismatch(f"feature lengths {np.shape(a)}, {np.shape(b)} do not match the model")
    out, _ = _fuse_fwd(params, np.asarray(a, float)[None], np.asarray(b, float)[None])
    return out[0]


def attention_masks(a: np.ndarray, b: np.ndarray, params: ModelParams):
    _, (_, _, mask_a, mask_b) = _fuse_fwd(params, np.asarray(a, float)[None], np.asarray(b, float)[None])
    return mask_a[0], mask_b[0]


def temporal_step(fused: np.ndarray, hidden: np.ndarray, params: ModelParams):
    cfg = params.config
    if np.shape(fused) != (cfg.fused_features,) or np.shape(hidden) != (cfg.temporal_hidden,):
        raise ShapeMismatch(f"temporal_step got {np.shape(fused)}, {np.shape(hidden)}")
    h, _ = nn.rnn_forward(np.asarray(fused, float)[None, None], np.asarray(hidden, float)[None],
                          params["temporal.Wx"], params["temporal.Wh"], params["temporal.b"])
    return h[0], h[0]


def regress(hidden: np.ndarray, params: ModelParams) -> SixDof:
    if np.shape(hidden) != (params.config.temporal_hidden,):
        raise ShapeMismatch(f"hidden length {np.shape(hidden)} != {params.config.temporal_hidden}")
    out, _, _ = _head_fwd(params, np.asarray(hidden, float)[None])
    return SixDof.from_vector(out[0])


def infer_pair(prev_img, curr_img, imu_window, hidden, params: ModelParams):
    """One odometry step: (relative motion, new hidden state)."""
    from .imaging import image_pair

    pair = image_pair(prev_img, curr_img)
    x = imu_window_array(imu_window)
    if hidden is None:
        hidden = np.zeros(params.config.temporal_hidden)
    batch = Batch(pair[None, None], x.reshape(1, 1, -1, 6) if len(x) else np.zeros((1, 1, 1, 6)),
                  np.array([[len(x)]]))
    rec = forward(params, batch, np.asarray(hidden, float)[None], record=False)
    return SixDof.from_vector(rec.pred[0, 0]), rec.hidden[0]


# --- data -------------------------------------------------------------------

@dataclass
class SequenceData:
    """Stacked training frames of one recording."""

    pairs: np.ndarray    # (N, 2, H, W)
    imu: np.ndarray      # (N, L, 6), zero padded
    imu_len: np.ndarray  # (N,)
    targets: np.ndarray  # (N, 6)

    def __len__(self) -> int:
        return len(self.pairs)

    @classmethod
    def from_samples(cls, samples: Sequence) -> SequenceData:
        """From ``(pair, imu_window, target)`` tuples."""
        if not samples:
            raise EmptyDataset("sequence has no samples")
        windows = [imu_window_array(w) for _, w, _ in samples]
        L = max(1, max(len(w) for w in windows))
        imu = np.zeros((len(samples), L, 6))
        for i, w in enumerate(windows):
            imu[i, :len(w)] = w
        targets = np.array([t.as_vector() if isinstance(t, SixDof) else np.asarray(t, float)
                            for _, _, t in samples])
        return cls(np.array([p for p, _, _ in samples], dtype=float), imu,
                   np.array([len(w) for w in windows]), targets)

    def slice(self, start: int, stop: int) -> SequenceData:
        return SequenceData(self.pairs[start:stop], self.imu[start:stop], self.imu_len[start:stop],
                            self.targets[start:stop])


def make_batch(seqs: Sequence[SequenceData], start: int, length: int) -> Batch:
    """Frames ``[start, start+length)`` of each sequence, zero padded past the end."""
    B = len(seqs)
    H, W = seqs[0].pairs.shape[2:]
    L = max(s.imu.shape[1] for s in seqs)
    pairs = np.zeros((B, length, 2, H, W))
    imu = np.zeros((B, length, L, 6))
    imu_len = np.zeros((B, length), dtype=int)
    targets = np.zeros((B, length, 6))
    weights = np.zeros((B, length))
    for i, s in enumerate(seqs):
        n = max(0, min(length, len(s) - start))
        if n == 0:
            continue
        pairs[i, :n] = s.pairs[start:start + n]
        imu[i, :n, :s.imu.shape[1]] = s.imu[start:start + n]
        imu_len[i, :n] = s.imu_len[start:start + n]
        targets[i, :n] = s.targets[start:start + n]
        weights[i, :n] = 1.0
    return Batch(pairs, imu, imu_len, targets, weights)


# --- training ---------------------------------------------------------------

@dataclass
class TrainingConfig:
    learning_rate: float = 0.002
    epochs: int = 40
    batch_size: int = 8
    rot_weight: float = 100.0
    rng_seed: int = 0
    init_scale: float = 1.0
    momentum: float = 0.9
    bptt_window: int = 4

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.rot_weight <= 0:
            raise ValueError("rot_weight must be > 0")
        if self.epochs < 1 or self.batch_size < 1 or self.bptt_window < 1:
            raise ValueError("epochs, batch_size and bptt_window must be >= 1")


@dataclass
class TrainResult:
    params: ModelParams
    losses: list = field(default_factory=list)


def train(dataset, cfg: TrainingConfig, params: ModelParams | None = None,
          model_config: ModelConfig | None = None, progress=None) -> TrainResult:
    """Mini-batch SGD with momentum and truncated BPTT.

    ``dataset`` is a list of sequences (``SequenceData`` or lists of
    ``(pair, imu_window, target)``). Each mini-batch advances ``batch_size``
    sequences in lockstep, ``bptt_window`` frame pairs per update, carrying
    the temporal hidden state from one window to the next.
    """
    seqs = [s if isinstance(s, SequenceData) else SequenceData.from_samples(s) for s in dataset]
    seqs = [s for s in seqs if len(s)]
    if not seqs:
        raise EmptyDataset("training needs at least one non-empty sequence")
    if params is None:
        H, W = seqs[0].pairs.shape[2:]
        mc = model_config or ModelConfig(height=H, width=W)
        params = ModelParams.init(mc, cfg.rng_seed, cfg.init_scale)
    rng = np.random.default_rng([cfg.rng_seed, 11])
    velocity = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
    losses = []
    for epoch in range(cfg.epochs):
        per_seq = [np.zeros(len(s)) for s in seqs]
        order = rng.permutation(len(seqs))
        for i0 in range(0, len(order), cfg.batch_size):
            idx = order[i0:i0 + cfg.batch_size]
            group = [seqs[i] for i in idx]
            h = np.zeros((len(group), params.config.temporal_hidden))
            for start in range(0, max(len(s) for s in group), cfg.bptt_window):
                batch = make_batch(group, start, cfg.bptt_window)
                rec = forward(params, batch, h)
                value = rec.record_loss(batch.targets, cfg.rot_weight, batch.weights)
                if not math.isfinite(value):
                    raise DivergedLoss(f"non-finite loss at epoch {epoch + 1}")
                backward(rec)
                for n, t in params.tensors.items():
                    v = velocity[n]
                    v *= cfg.momentum
                    v -= cfg.learning_rate * t.grad
                    t.data += v
                h = rec.hidden
                for j, si in enumerate(idx):
                    n = max(0, min(cfg.bptt_window, len(seqs[si]) - start))
                    per_seq[si][start:start + n] = rec.per_sample[j, :n]
        epoch_loss = float(np.concatenate(per_seq).mean())
        if not math.isfinite(epoch_loss) or not params.all_finite():
            raise DivergedLoss(f"training diverged at epoch {epoch + 1}")
        losses.append(epoch_loss)
        if progress is not None:
            progress(epoch + 1, epoch_loss)
        log.debug("epoch %d loss %.6g", epoch + 1, epoch_loss)
    return TrainResult(params, losses)


def predict_sequence(params: ModelParams, seq: SequenceData) -> np.ndarray:
    """Run the network over a whole sequence with threaded hidden state; (N, 6)."""
    batch = make_batch([seq], 0, len(seq))
    return forward(params, batch, record=False).pred[0]


# --- gradient check ---------------------------------------------------------

def check_gradients(params: ModelParams, batch: Batch, h0: np.ndarray, rot_weight: float = 100.0,
                    seed: int = 0, step: float = 1e-5, entries: int = 6) -> dict:
    """Relative error between backprop and central differences, per tensor.

    For each parameter tensor (and the ``pairs``, ``imu``, ``h0`` inputs) a
    seeded sample of entries is perturbed by ``+-step``. An entry whose
    perturbation flips any ReLU is resampled, since the loss is not
    differentiable across the kink. The error reported is
    ``|g - g_fd| / (|g| + 1e-8)`` over the sampled entries as vectors.
    """
    rng = np.random.default_rng(seed)
    rec = forward(params, batch, h0)
    rec.record_loss(batch.targets, rot_weight, batch.weights)
    base_sig = rec.activation_signature()
    input_grads = backward(rec)
    analytic = {n: t.grad.copy() for n, t in params.tensors.items()}

    def evaluate():
        r = forward(params, batch, h0, record=False)
        value, _, _ = batch_loss(r.pred, batch.targets, rot_weight, batch.weights)
        return value, r.activation_signature()

    targets = [(n, t.data, analytic[n]) for n, t in params.tensors.items()]
    targets += [("input.pairs", batch.pairs, input_grads["pairs"]),
                ("input.imu", batch.imu, input_grads["imu"]),
                ("input.h0", h0, input_grads["h0"])]
    report = {}
    for name, arr, grad in targets:
        if name == "input.imu":
            # padded IMU slots are not read by the network
            valid = np.argwhere(np.arange(arr.shape[2])[None, None, :] < batch.imu_len[..., None])
            candidates = [tuple(v) + (c,) for v in valid for c in range(6)]
        else:
            candidates = None
        got, want = [], []
        attempts = 0
        while len(got) < min(entries, arr.size) and attempts < 20 * entries:
            attempts += 1
            if candidates is not None:
                idx = candidates[rng.integers(len(candidates))]
            else:
                idx = tuple(int(rng.integers(d)) for d in arr.shape)
            orig = arr[idx]
            arr[idx] = orig + step
            fp, sp = evaluate()
            arr[idx] = orig - step
            fm, sm = evaluate()
            arr[idx] = orig
            if not (np.array_equal(sp, base_sig) and np.array_equal(sm, base_sig)):
                continue
            got.append(grad[idx])
            want.append((fp - fm) / (2 * step))
        got, want = np.array(got), np.array(want)
        report[name] = float(np.linalg.norm(got - want) / (np.linalg.norm(got) + 1e-8))
    return report


# --- checkpoint -------------------------------------------------------------

def save_checkpoint(params: ModelParams, path, extra: dict | None = None) -> None:
    header = {
        "config": params.config.to_dict(),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in params.tensors.items()],
    }
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(t.data.astype("<f8").tobytes() for t in params)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointMismatch(f"{path}: bad magic {raw[:4]!r}")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    config = ModelConfig(**header["config"])
    offset = 12 + hlen
    tensors = {}
    for spec in header["tensors"]:
        n = int(np.prod(spec["shape"]))
        if offset + 8 * n > len(raw):
            raise CheckpointMismatch(f"{path}: payload truncated at {spec['name']}")
        data = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(spec["shape"])
        tensors[spec["name"]] = Tensor(data.astype(np.float64), spec["name"])
        offset += 8 * n
    if offset != len(raw):
        raise CheckpointMismatch(f"{path}: {len(raw) - offset} trailing bytes")
    return ModelParams(config, tensors)


def checkpoint_header(path) -> dict:
    raw = Path(path).read_bytes()
    _, hlen = struct.unpack_from("<II", raw, 4)
    return json.loads(raw[12:12 + hlen].decode("utf-8"))
