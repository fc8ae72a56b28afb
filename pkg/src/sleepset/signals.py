"""Signal and sleep-stage vocabularies shared across the package."""

import enum

import numpy as np


class SignalKind(enum.Enum):
    """The four supported input modalities."""
    ECG = "ECG"
    PPG = "PPG"
    ABD = "ABD"
    THX = "THX"

    @property
    def default_samples_per_epoch(self):
        # cardiac waveforms keep more detail than respiratory effort
        return 1024 if self in (SignalKind.ECG, SignalKind.PPG) else 256

    def __str__(self):
        return self.value


ALL_KINDS = tuple(SignalKind)


def parse_kind(name):
    try:
        return SignalKind(name.upper())
    except ValueError:
        valid = ", ".join(k.value for k in ALL_KINDS)
        raise ValueError(f"unknown signal kind {name!r}; valid kinds: {valid}")


class SleepStage(enum.IntEnum):
    """Four-class staging; Ignore marks epochs excluded from loss/metrics."""
    WAKE = 0
    LIGHT = 1
    DEEP = 2
    REM = 3
    IGNORE = -1


STAGE_NAMES = {SleepStage.WAKE: "Wake", SleepStage.LIGHT: "Light",
               SleepStage.DEEP: "Deep", SleepStage.REM: "REM",
               SleepStage.IGNORE: "Ignore"}


class AasmStage(enum.IntEnum):
    """Expert annotation vocabulary before N1/N2 merging."""
    WAKE = 0
    N1 = 1
    N2 = 2
    N3 = 3
    REM = 4


_MERGE = {AasmStage.WAKE: SleepStage.WAKE,
          AasmStage.N1: SleepStage.LIGHT,
          AasmStage.N2: SleepStage.LIGHT,
          AasmStage.N3: SleepStage.DEEP,
          AasmStage.REM: SleepStage.REM}


def merge_stage(code):
    """Map one AASM stage code to the four-class vocabulary."""
    try:
        return _MERGE[AasmStage(int(code))]
    except ValueError:
        raise ValueError(f"unknown AASM stage code {code!r}")


def merge_stages(labels):
    """Vectorised N1+N2 -> Light merge over an integer label array."""
    labels = np.asarray(labels)
    lut = np.full(len(AasmStage), SleepStage.IGNORE, dtype=np.int8)
    for aasm, merged in _MERGE.items():
        lut[aasm] = merged
    if labels.size and (labels.min() < 0 or labels.max() >= len(lut)):
        bad = labels[(labels < 0) | (labels >= len(lut))][0]
        raise ValueError(f"unknown AASM stage code {bad!r}")
    return lut[labels]
