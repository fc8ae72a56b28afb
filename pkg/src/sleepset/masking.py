"""Stochastic modality masking, inversion augmentation, and batch collation.

Masking lets one batch hold recordings with different modality sets: absent
or dropped channels are zero-padded to keep a fixed batch shape and excluded
from the epoch mixer's attention, so their contents cannot influence the
loss.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import MaskingConfig
from .errors import DataError
from .signals import ALL_KINDS


@dataclass(frozen=True)
class ModalityMask:
    """Which modalities a recording has, and which survived masking."""
    available: frozenset
    kept: frozenset

    def __post_init__(self):
        object.__setattr__(self, "available", frozenset(self.available))
        object.__setattr__(self, "kept", frozenset(self.kept))
        if not self.kept:
            raise DataError("mask kept set must be non-empty")
        if not self.kept <= self.available:
            raise DataError("mask keeps modalities that are not available")


def sample_mask(available, drop_probabilities=None, rng=None, max_retries=8):
    """Drop each available modality independently with its configured
    probability; resample on an empty result up to `max_retries` times, then
    fall back to keeping everything."""
    available = frozenset(available)
    if not available:
        raise DataError("cannot sample a mask over zero modalities")
    if drop_probabilities is None:
        drop_probabilities = MaskingConfig().drop_probabilities
    if rng is None:
        rng = np.random.default_rng()
    ordered = [k for k in ALL_KINDS if k in available]
    for _ in range(1 + max_retries):
        kept = frozenset(k for k in ordered
                         if rng.random() >= drop_probabilities.get(k, 0.0))
        if kept:
            return ModalityMask(available, kept)
    return ModalityMask(available, available)


def expected_keep_rate(kind, available, drop_probabilities=None,
                       max_retries=8):
    """Analytic P(kind is kept) under sample_mask, including the retry and
    keep-all fallback. With everything-dropped probability q and R total
    attempts: P = p_keep * (1-q^R)/(1-q) + q^R."""
    available = frozenset(available)
    if drop_probabilities is None:
        drop_probabilities = MaskingConfig().drop_probabilities
    p_keep = 1.0 - drop_probabilities.get(kind, 0.0)
    q = 1.0
    for k in available:
        q *= drop_probabilities.get(k, 0.0)
    attempts = 1 + max_retries
    if q == 0.0:
        return p_keep
    return p_keep * (1.0 - q ** attempts) / (1.0 - q) + q ** attempts


def augment_invert(x, rng, probability=0.5):
    """Flip the whole signal's sign with the given probability (one coin per
    call; apply per signal)."""
    if rng.random() < probability:
        return -x
    return x


@dataclass
class Batch:
    """Fixed-shape training batch. `signals` holds one (B, k*T) array per
    kind kept by at least one member; rows whose recording did not keep the
    kind are all-zero and excluded via `allowed`."""
    signals: dict
    allowed: np.ndarray          # (B, len(ALL_KINDS)) bool, ALL_KINDS order
    labels: np.ndarray           # (B, T) int8, -1 = ignore
    ids: list = field(default_factory=list)
    masks: list = field(default_factory=list)

    @property
    def batch_size(self):
        return self.labels.shape[0]


def collate(recordings, masks):
    """Assemble recordings (with their sampled masks) into one Batch."""
    if len(recordings) != len(masks):
        raise DataError("collate needs one mask per recording")
    if not recordings:
        raise DataError("cannot collate an empty batch")
    t_epochs = len(recordings[0].labels)
    for rec, mask in zip(recordings, masks):
        if len(rec.labels) != t_epochs:
            raise DataError(f"recording {rec.id!r} has {len(rec.labels)} "
                            f"epochs, expected {t_epochs}")
        missing = mask.kept - set(rec.series)
        if missing:
            raise DataError(
                f"mask for recording {rec.id!r} references modalities not "
                f"present: {sorted(k.value for k in missing)}")

    batch = len(recordings)
    kinds = [k for k in ALL_KINDS
             if any(k in m.kept for m in masks)]
    signals = {}
    for kind in kinds:
        length = next(len(r.series[kind]) for r, m in zip(recordings, masks)
                      if kind in m.kept)
        arr = np.zeros((batch, length), dtype=np.float32)
        for row, (rec, mask) in enumerate(zip(recordings, masks)):
            if kind in mask.kept:
                if len(rec.series[kind]) != length:
                    raise DataError(
                        f"recording {rec.id!r} has {kind.value} length "
                        f"{len(rec.series[kind])}, expected {length}")
                arr[row] = rec.series[kind]
        signals[kind] = arr

    allowed = np.zeros((batch, len(ALL_KINDS)), dtype=bool)
    for row, mask in enumerate(masks):
        for kind in mask.kept:
            allowed[row, ALL_KINDS.index(kind)] = True

    labels = np.stack([np.asarray(r.labels, dtype=np.int8)
                       for r in recordings])
    return Batch(signals=signals, allowed=allowed, labels=labels,
                 ids=[r.id for r in recordings], masks=list(masks))
