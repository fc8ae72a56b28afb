"""Optimization: AdamW with linear warmup + exponential decay, gradient
accumulation to a fixed effective batch, early stopping on validation loss,
and bit-exact checkpointing.

The loop is single-threaded and fully deterministic given its seed: one RNG
stream (carried in TrainState and serialized into checkpoints) drives
shuffling, masking, inversion, and dropout in a fixed order.
"""

import json
import math
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from . import ops
from .config import (MaskingConfig, ModelConfig, TrainConfig, to_jsonable)
from .errors import (CheckpointChecksumError, CheckpointError,
                     CheckpointVersionError, DataError, NumericalError)
from .masking import ModalityMask, augment_invert, collate, sample_mask
from .model import Params, init_params
from .signals import ALL_KINDS

CKPT_MAGIC = b"SSCK"
CHECKPOINT_VERSION = 1


def lr_at(step, config):
    """Linear warmup to max_lr, then half-life decay toward zero."""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if step <= config.warmup_steps:
        return config.max_lr * step / config.warmup_steps
    exponent = (step - config.warmup_steps) / config.decay_half_life_steps
    return config.max_lr * 0.5 ** exponent


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    best_val_loss: float = math.inf
    patience: int = 0
    rng: np.random.Generator = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(0)


def adamw_step(params, state, lr, config):
    """One decoupled-weight-decay Adam update from accumulated gradients.

    Gradients are read from each parameter's grad slot; a missing slot
    counts as zero. Non-finite gradients abort the step."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NumericalError(
                f"non-finite gradient for {name!r} at step {t}; step aborted")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= lr * config.weight_decay * p.data + \
            lr * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return state


def batch_loss(batch, params, model_config, training=False, rng=None):
    """(summed cross entropy over kept epochs, number of kept epochs)."""
    logits = model_mod.forward_batch(batch.signals, batch.allowed, params,
                                     model_config, training=training, rng=rng)
    keep = batch.labels >= 0
    classes = model_config.classes
    safe = np.clip(batch.labels, 0, classes - 1)
    onehot = np.eye(classes, dtype=np.float32)[safe] * \
        keep[..., None].astype(np.float32)
    loss = ops.softmax_cross_entropy(logits, onehot, keep)
    return loss, int(keep.sum())


@dataclass
class TrainResult:
    params: Params          # weights from the best validation epoch
    final_params: Params    # weights at the moment training stopped
    state: TrainState
    log: list
    best_epoch: int


def _validation_loss(recordings, params, model_config, micro_batch):
    total, count = 0.0, 0
    for start in range(0, len(recordings), micro_batch):
        chunk = recordings[start:start + micro_batch]
        masks = [ModalityMask(frozenset(r.series), frozenset(r.series))
                 for r in chunk]
        batch = collate(chunk, masks)
        loss, kept = batch_loss(batch, params, model_config, training=False)
        total += loss.item()
        count += kept
    if count == 0:
        raise DataError("validation set has no scored epochs")
    value = total / count
    if not math.isfinite(value):
        raise NumericalError(f"validation loss is {value}; aborting")
    return value


def train_loop(train_recordings, val_recordings, model_config, train_config,
               masking_config=None, seed=0, init=None, resume_state=None,
               max_steps=None, log_writer=None, progress=None):
    """Run optimization until early stopping (or max_epochs/max_steps).

    Per optimizer step: draw micro-batches, invert each signal with 50%
    probability, sample a modality mask per recording, accumulate gradients
    up to the effective batch, then one AdamW update. Per epoch: validation
    loss with dropout off and every available modality unmasked; stop after
    `patience_epochs` epochs without improvement and restore the best
    weights.
    """
    if not train_recordings or not val_recordings:
        raise DataError("training needs non-empty train and validation sets")
    masking_config = masking_config or MaskingConfig()
    params = init if init is not None else init_params(model_config, seed)
    state = resume_state if resume_state is not None else \
        TrainState(rng=np.random.default_rng(seed))
    rng = state.rng

    log = []

    def emit(record):
        log.append(record)
        if log_writer is not None:
            log_writer(record)

    best_params = params.copy()
    best_epoch = state.epoch
    effective = train_config.effective_batch
    micro = train_config.micro_batch
    n_train = len(train_recordings)
    stop = False

    for epoch in range(state.epoch + 1, train_config.max_epochs + 1):
        order = rng.permutation(n_train)
        n_batches = max(n_train // effective, 1)
        for b in range(n_batches):
            chosen = order[b * effective:(b + 1) * effective]
            if len(chosen) == 0:
                continue
            params.zero_grad()
            batch_total = 0.0
            for mstart in range(0, len(chosen), micro):
                rows = chosen[mstart:mstart + micro]
                recs, masks = [], []
                for ridx in rows:
                    rec = train_recordings[ridx]
                    available = frozenset(rec.series)
                    flipped = {
                        kind: augment_invert(
                            rec.series[kind], rng,
                            masking_config.invert_probability)
                        for kind in ALL_KINDS if kind in rec.series}
                    masks.append(sample_mask(
                        available, masking_config.drop_probabilities, rng,
                        masking_config.max_retries))
                    recs.append(_ViewRecording(rec, flipped))
                batch = collate(recs, masks)
                loss, _ = batch_loss(batch, params, model_config,
                                     training=True, rng=rng)
                scaled = loss * (1.0 / len(chosen))
                scaled.backward()
                batch_total += scaled.item()
            lr = lr_at(state.step + 1, train_config)
            adamw_step(params, state, lr, train_config)
            emit({"step": state.step, "epoch": epoch, "lr": lr,
                  "train_loss": batch_total, "val_loss": None})
            if max_steps is not None and state.step >= max_steps:
                stop = True
                break

        val_loss = _validation_loss(val_recordings, params, model_config,
                                    micro)
        state.epoch = epoch
        emit({"step": state.step, "epoch": epoch,
              "lr": lr_at(state.step, train_config),
              "train_loss": None, "val_loss": val_loss})
        if progress is not None:
            progress(epoch, state.step, val_loss)
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.patience = 0
            best_params = params.copy()
            best_epoch = epoch
        else:
            state.patience += 1
            if state.patience >= train_config.patience_epochs:
                stop = True
        if stop:
            break

    return TrainResult(params=best_params, final_params=params, state=state,
                       log=log, best_epoch=best_epoch)


class _ViewRecording:
    """A recording with some series replaced (e.g. augmented) without
    copying the original."""

    def __init__(self, rec, series):
        self.id = rec.id
        self.labels = rec.labels
        self.group_keys = rec.group_keys
        self.samples_per_epoch = rec.samples_per_epoch
        self.series = series


# ---- checkpoint I/O --------------------------------------------------------

def save_checkpoint(path, params, state, model_config, train_config,
                    masking_config, seed):
    """Header JSON (configs, RNG state, tensor directory) + raw float32
    payload. Byte-identical for identical inputs."""
    names = params.names()
    tensors = []
    payload = bytearray()

    def put(name, arr):
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(np.shape(arr)),
                        "offset": len(payload)})
        payload.extend(blob)

    for n in names:
        put(n, params[n].data)
    for n in names:
        put(f"adam_m.{n}", state.m.get(n, np.zeros_like(params[n].data)))
    for n in names:
        put(f"adam_v.{n}", state.v.get(n, np.zeros_like(params[n].data)))

    header = {
        "format": "sleepset-checkpoint",
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "step": state.step,
        "epoch": state.epoch,
        "best_val_loss": None if math.isinf(state.best_val_loss)
        else state.best_val_loss,
        "patience": state.patience,
        "rng_state": state.rng.bit_generator.state,
        "model_config": to_jsonable(model_config),
        "train_config": to_jsonable(train_config),
        "masking_config": to_jsonable(masking_config),
        "tensors": tensors,
        "checksum": zlib.crc32(bytes(payload)),
    }
    blob = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(np.array(len(blob), dtype="<u4").tobytes())
        fh.write(blob)
        fh.write(bytes(payload))
    return path


def load_checkpoint(path):
    """Returns (params, state, model_config, train_config, masking_config,
    seed)."""
    if not os.path.exists(path):
        raise DataError(f"checkpoint file not found: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a sleepset checkpoint")
    header_len = int(np.frombuffer(data[4:8], dtype="<u4")[0])
    try:
        header = json.loads(data[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted header ({exc})")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {header.get('version')} "
            f"!= supported {CHECKPOINT_VERSION}")
    payload = data[8 + header_len:]
    if zlib.crc32(payload) != header["checksum"]:
        raise CheckpointChecksumError(f"{path}: payload checksum mismatch")

    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["name"]] = np.frombuffer(
            payload, dtype="<f4", count=n, offset=start).reshape(shape).copy()

    from .tensor import Tensor
    params = Params({name: Tensor(arr, requires_grad=True)
                     for name, arr in arrays.items()
                     if not name.startswith(("adam_m.", "adam_v."))})
    rng = np.random.default_rng(0)
    rng.bit_generator.state = header["rng_state"]
    state = TrainState(
        step=header["step"], epoch=header["epoch"],
        m={n[len("adam_m."):]: a for n, a in arrays.items()
           if n.startswith("adam_m.")},
        v={n[len("adam_v."):]: a for n, a in arrays.items()
           if n.startswith("adam_v.")},
        best_val_loss=math.inf if header["best_val_loss"] is None
        else header["best_val_loss"],
        patience=header["patience"],
        rng=rng,
    )
    model_config = ModelConfig.from_dict(header["model_config"])
    train_config = TrainConfig.from_dict(header["train_config"])
    masking_config = MaskingConfig.from_dict(header["masking_config"])
    return (params, state, model_config, train_config, masking_config,
            header["seed"])
