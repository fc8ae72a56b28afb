"""The three-stage network: per-modality signal encoders, a CLS-token
attention mixer that fuses whichever modalities are present at each sleep
epoch, and a dilated-convolution sequence mixer producing per-epoch stage
logits.

All forward paths accept a leading batch dimension. The epoch mixer runs
over all epochs at once (epochs are independent at that stage), with the
per-recording attention mask excluding padded or dropped modalities.
"""

import numpy as np

from . import ops
from .errors import DataError, ShapeError
from .signals import ALL_KINDS, SignalKind
from .tensor import Tensor, no_grad, stack


class Params:
    """Named parameter tensors with a deterministic enumeration order."""

    def __init__(self, tensors):
        self._tensors = dict(tensors)

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self):
        return list(self._tensors)

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def total_size(self):
        return sum(t.size for t in self._tensors.values())

    def copy(self):
        return Params({name: Tensor(t.data.copy(), requires_grad=t.requires_grad)
                       for name, t in self.items()})

    def astype(self, dtype):
        return Params({name: Tensor(t.data.astype(dtype),
                                    requires_grad=t.requires_grad)
                       for name, t in self.items()})

    def arrays(self):
        return {name: t.data for name, t in self.items()}


def init_params(config, seed):
    """Fan-in-scaled uniform initialization, deterministic in (config, seed)."""
    rng = np.random.default_rng(seed)
    out = {}

    def param(name, shape, fan_in=None):
        if fan_in is None:
            data = np.zeros(shape, dtype=np.float32)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        out[name] = Tensor(data, requires_grad=True)

    def norm_param(prefix, channels):
        out[f"{prefix}.gain"] = Tensor(np.ones(channels, dtype=np.float32),
                                       requires_grad=True)
        out[f"{prefix}.bias"] = Tensor(np.zeros(channels, dtype=np.float32),
                                       requires_grad=True)

    kernel = config.encoder_kernel
    for kind in ALL_KINDS:
        channels = config.encoder_channels[config.k_of(kind)]
        c_prev = 1
        for i, c in enumerate(channels, start=1):
            base = f"encoder.{kind.value}.block{i}"
            widths = (c_prev, c, c)
            for j, c_in in enumerate(widths, start=1):
                param(f"{base}.conv{j}.weight", (c, c_in, kernel),
                      fan_in=c_in * kernel)
                param(f"{base}.conv{j}.bias", (c,))
                norm_param(f"{base}.norm{j}", c)
            if c_prev != c:
                param(f"{base}.shortcut.weight", (c, c_prev, 1), fan_in=c_prev)
                param(f"{base}.shortcut.bias", (c,))
            c_prev = c
        width = 4 * channels[-1]
        param(f"encoder.{kind.value}.dense.weight",
              (width, config.feature_dim), fan_in=width)
        param(f"encoder.{kind.value}.dense.bias", (config.feature_dim,))

    d = config.feature_dim
    param("mixer.cls", (d,), fan_in=d)
    for kind in ALL_KINDS:
        param(f"mixer.embed.{kind.value}", (d,), fan_in=d)
    for i in range(1, config.mixer_layers + 1):
        base = f"mixer.layer{i}"
        norm_param(f"{base}.norm1", d)
        for proj in ("wq", "wk", "wv", "wo"):
            param(f"{base}.attn.{proj}", (d, d), fan_in=d)
            param(f"{base}.attn.{proj[1]}b", (d,))
        norm_param(f"{base}.norm2", d)
        param(f"{base}.ff.lin1.weight", (d, config.mixer_hidden), fan_in=d)
        param(f"{base}.ff.lin1.bias", (config.mixer_hidden,))
        param(f"{base}.ff.lin2.weight", (config.mixer_hidden, d),
              fan_in=config.mixer_hidden)
        param(f"{base}.ff.lin2.bias", (d,))
    norm_param("mixer.final_norm", d)

    for i in range(1, config.seq_blocks + 1):
        for j in range(1, len(config.seq_dilations) + 1):
            base = f"seq.block{i}.layer{j}"
            param(f"{base}.conv.weight", (d, d, config.seq_kernel),
                  fan_in=d * config.seq_kernel)
            param(f"{base}.conv.bias", (d,))
            norm_param(f"{base}.norm", d)

    param("head.weight", (d, config.classes), fan_in=d)
    param("head.bias", (config.classes,))
    return Params(out)


def _attn_params(params, base):
    return {"wq": params[f"{base}.attn.wq"], "bq": params[f"{base}.attn.qb"],
            "wk": params[f"{base}.attn.wk"], "bk": params[f"{base}.attn.kb"],
            "wv": params[f"{base}.attn.wv"], "bv": params[f"{base}.attn.vb"],
            "wo": params[f"{base}.attn.wo"], "bo": params[f"{base}.attn.ob"]}


def encode_signal(x, kind, params, config, training=False, rng=None):
    """Encode one modality: (B, k*T) samples -> (B, T, feature_dim).

    A 1-D input is treated as a single unbatched recording and returns
    (T, feature_dim).
    """
    k = config.k_of(kind)
    t_epochs = config.epochs_t
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float32))
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, x.shape[0])
    if x.ndim != 2 or x.shape[1] != k * t_epochs:
        raise ShapeError(f"{kind.value} input must have length k*T = "
                         f"{k}*{t_epochs} = {k * t_epochs}, got {x.shape}")
    batch = x.shape[0]
    h = x.reshape(batch, 1, k * t_epochs)

    channels = config.encoder_channels[k]
    drop = config.dropout
    for i, c in enumerate(channels, start=1):
        base = f"encoder.{kind.value}.block{i}"
        inner = h
        for j in range(1, 4):
            inner = ops.conv1d(inner, params[f"{base}.conv{j}.weight"],
                               params[f"{base}.conv{j}.bias"])
            inner = ops.instance_norm(inner, params[f"{base}.norm{j}.gain"],
                                      params[f"{base}.norm{j}.bias"])
            inner = ops.gelu(inner)
            inner = ops.dropout(inner, drop, rng, training)
        if f"{base}.shortcut.weight" in params:
            shortcut = ops.conv1d(h, params[f"{base}.shortcut.weight"],
                                  params[f"{base}.shortcut.bias"])
        else:
            shortcut = h
        h = ops.maxpool1d(inner + shortcut)

    # (B, C, 4T) -> one row of 4 timesteps x C channels per epoch
    c_last = channels[-1]
    h = h.transpose(0, 2, 1).reshape(batch, t_epochs, 4 * c_last)
    feats = ops.affine(h, params[f"encoder.{kind.value}.dense.weight"],
                       params[f"encoder.{kind.value}.dense.bias"])
    return feats.reshape(t_epochs, config.feature_dim) if squeeze else feats


def _mix_tokens(tokens, allowed, params, config, training=False, rng=None):
    """Run the transformer stack over (..., n_tokens, d) token sets and
    return the CLS (index 0) output row."""
    drop = config.dropout
    x = tokens
    for i in range(1, config.mixer_layers + 1):
        base = f"mixer.layer{i}"
        normed = ops.layer_norm(x, params[f"{base}.norm1.gain"],
                                params[f"{base}.norm1.bias"])
        attended = ops.masked_multi_head_attention(
            normed, normed, normed, config.mixer_heads, allowed,
            _attn_params(params, base))
        x = x + ops.dropout(attended, drop, rng, training)
        normed = ops.layer_norm(x, params[f"{base}.norm2.gain"],
                                params[f"{base}.norm2.bias"])
        hidden = ops.gelu(ops.affine(normed, params[f"{base}.ff.lin1.weight"],
                                     params[f"{base}.ff.lin1.bias"]))
        hidden = ops.dropout(hidden, drop, rng, training)
        ff = ops.affine(hidden, params[f"{base}.ff.lin2.weight"],
                        params[f"{base}.ff.lin2.bias"])
        x = x + ops.dropout(ff, drop, rng, training)
    x = ops.layer_norm(x, params["mixer.final_norm.gain"],
                       params["mixer.final_norm.bias"])
    return x[..., 0, :]


def _token_stack(features, kinds, params):
    """Stack CLS + per-kind (feature + modality embedding) tokens along a new
    axis before the trailing feature axis. `features` maps kind -> Tensor of
    shape (..., d)."""
    any_feat = features[kinds[0]]
    cls = Tensor(np.zeros(any_feat.shape, dtype=any_feat.dtype)) + \
        params["mixer.cls"]
    rows = [cls]
    for kind in kinds:
        rows.append(features[kind] + params[f"mixer.embed.{kind.value}"])
    return stack(rows, axis=any_feat.ndim - 1)


def mix_epoch(features, params, config, order=None):
    """Fuse one epoch's per-modality feature vectors into a single vector.

    `features` maps SignalKind -> length-d vector; `order` optionally fixes
    the token order (the output must not depend on it). Returns a numpy
    vector of length feature_dim.
    """
    if not features:
        raise ShapeError("mix_epoch needs at least one modality feature")
    kinds = list(order) if order is not None else \
        [k for k in ALL_KINDS if k in features]
    feats = {k: Tensor(np.asarray(features[k], dtype=np.float32))
             for k in kinds}
    with no_grad():
        tokens = _token_stack(feats, kinds, params)
        fused = _mix_tokens(tokens, None, params, config)
    return fused.numpy()


def mix_sequence(z, params, config, training=False, rng=None):
    """Temporal mixing: (..., T, d) epoch features -> (..., T, classes) logits."""
    if z.shape[-1] != config.feature_dim:
        raise ShapeError(f"sequence mixer expects feature dim "
                         f"{config.feature_dim}, got {z.shape[-1]}")
    if not isinstance(z, Tensor):
        z = Tensor(np.asarray(z, dtype=np.float32))
    squeeze = z.ndim == 2
    if squeeze:
        z = z.reshape(1, *z.shape)
    drop = config.dropout
    x = z
    for i in range(1, config.seq_blocks + 1):
        h = x
        for j, dilation in enumerate(config.seq_dilations, start=1):
            base = f"seq.block{i}.layer{j}"
            h = ops.conv1d(h.transpose(0, 2, 1),
                           params[f"{base}.conv.weight"],
                           params[f"{base}.conv.bias"],
                           dilation=dilation).transpose(0, 2, 1)
            h = ops.layer_norm(h, params[f"{base}.norm.gain"],
                               params[f"{base}.norm.bias"])
            h = ops.gelu(h)
            h = ops.dropout(h, drop, rng, training)
        x = x + h
    logits = ops.affine(x, params["head.weight"], params["head.bias"])
    return logits.reshape(*logits.shape[1:]) if squeeze else logits


def forward_batch(signals, allowed_kinds, params, config, training=False,
                  rng=None):
    """Full network over a collated batch.

    signals: kind -> (B, k*T) float arrays (padded channels may hold
    anything; they are excluded via the attention mask). allowed_kinds:
    boolean (B, n_kinds) aligned with ALL_KINDS, or None to attend to every
    kind. Returns logits Tensor (B, T, classes).
    """
    kinds = [k for k in ALL_KINDS if k in signals]
    features = {k: encode_signal(signals[k], k, params, config,
                                 training=training, rng=rng)
                for k in kinds}
    tokens = _token_stack(features, kinds, params)  # (B, T, 1+n, d)
    if allowed_kinds is None:
        mask = None
    else:
        allowed_kinds = np.asarray(allowed_kinds, dtype=bool)
        batch = tokens.shape[0]
        n_tok = 1 + len(kinds)
        key_ok = np.ones((batch, n_tok), dtype=bool)
        for col, kind in enumerate(kinds, start=1):
            key_ok[:, col] = allowed_kinds[:, ALL_KINDS.index(kind)]
        # same key set for every query and epoch: (B, 1, 1, n_tok)
        mask = key_ok[:, None, None, :]
    fused = _mix_tokens(tokens, mask, params, config, training=training,
                        rng=rng)
    return mix_sequence(fused, params, config, training=training, rng=rng)


def predict(recording, subset, params, config):
    """Classify one preprocessed recording from a subset of its modalities.

    Returns (hypnogram, probabilities): int8 (T,) stage codes with ties going
    to the lowest class index, and float (T, classes) softmax rows. Dropout
    is always off here.
    """
    subset = sorted(set(subset), key=ALL_KINDS.index)
    if not subset:
        raise DataError("prediction needs a non-empty modality subset")
    available = [k for k in ALL_KINDS if k in recording.series]
    missing = [k.value for k in subset if k not in recording.series]
    if missing:
        raise DataError(
            f"recording {recording.id!r} lacks requested modalities "
            f"{missing}; available: {[k.value for k in available]}")
    with no_grad():
        signals = {k: recording.series[k][None, :] for k in subset}
        logits = forward_batch(signals, None, params, config).numpy()[0]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=-1, keepdims=True)
    hypnogram = np.argmax(probs, axis=-1).astype(np.int8)
    return hypnogram, probs
