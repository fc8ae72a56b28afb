"""Recording containers, manifests, and the preprocessing pipeline.

Container layout: 4-byte magic, little-endian uint32 header length, UTF-8
JSON header, then the per-kind float32 payloads concatenated in header
order. Labels and metadata live in the header; payload integrity is covered
by per-kind CRC32 checksums. Round-trips are bit-exact.

Preprocessing order is fixed: resample -> normalize -> pad/truncate, with
normalization before padding so the padded zeros do not bias the statistics.
"""

import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (ContainerChecksumError, ContainerHeaderError,
                     ContainerTruncatedError, DataError)
from .signals import ALL_KINDS, SignalKind, SleepStage, merge_stages

MAGIC = b"SSET"
CONTAINER_VERSION = 1
EPOCH_SECONDS = 30.0


@dataclass
class RawRecording:
    """Native-rate signals plus per-epoch AASM labels."""
    id: str
    series: dict                  # SignalKind -> float32 array
    rates: dict                   # SignalKind -> Hz
    labels_aasm: np.ndarray       # (n_epochs,) int8 AASM codes
    group_keys: dict = field(default_factory=dict)


@dataclass
class PreprocessedRecording:
    """Signals on the fixed k-per-epoch grid with merged 4-class labels."""
    id: str
    series: dict                  # SignalKind -> float32 array of length k*T
    samples_per_epoch: dict       # SignalKind -> k
    labels: np.ndarray            # (T,) int8, SleepStage codes, -1 = ignore
    group_keys: dict = field(default_factory=dict)


def resample(series, native_rate_hz, target_samples_per_epoch, epochs=None,
             epoch_seconds=EPOCH_SECONDS):
    """Endpoint-inclusive linear resampling onto k samples per epoch.

    Output position i maps to input position i*(N_in-1)/(N_out-1). The epoch
    count defaults to the series duration rounded to whole epochs.
    """
    series = np.asarray(series)
    n_in = len(series)
    if n_in == 0:
        raise DataError("cannot resample an empty series")
    if native_rate_hz <= 0:
        raise DataError(f"native rate must be positive, got {native_rate_hz}")
    if epochs is None:
        epochs = int(round(n_in / (native_rate_hz * epoch_seconds)))
    n_out = int(target_samples_per_epoch) * int(epochs)
    if n_out < 1:
        raise DataError("resample target has zero samples")
    if n_in == 1 and n_out > 1:
        raise DataError("cannot resample a single sample to multiple samples")
    if n_out == n_in:
        positions = np.arange(n_in, dtype=np.float64)
    else:
        positions = np.linspace(0.0, n_in - 1, n_out)
    return np.interp(positions, np.arange(n_in, dtype=np.float64),
                     series.astype(np.float64)).astype(np.float32)


def normalize(series):
    """Recording-wide z-score (population std); constant series become zero."""
    series = np.asarray(series)
    if len(series) == 0:
        raise DataError("cannot normalize an empty series")
    mean = series.mean(dtype=np.float64)
    std = series.std(dtype=np.float64)
    if std == 0.0:
        return np.zeros(len(series), dtype=np.float32)
    return ((series - mean) / std).astype(np.float32)


def pad_truncate(series_by_kind, labels, samples_per_epoch, target_epochs):
    """Fix every signal to k*T samples and labels to T epochs. Longer
    recordings are truncated at the end; shorter ones are zero-padded with
    Ignore labels on the padded epochs."""
    labels = np.asarray(labels, dtype=np.int8)
    n_epochs = len(labels)
    if n_epochs == 0:
        raise DataError("cannot pad a zero-length recording")
    out_labels = np.full(target_epochs, SleepStage.IGNORE, dtype=np.int8)
    keep = min(n_epochs, target_epochs)
    out_labels[:keep] = labels[:keep]
    out_series = {}
    for kind, series in series_by_kind.items():
        k = samples_per_epoch[kind]
        out = np.zeros(k * target_epochs, dtype=np.float32)
        span = min(len(series), k * target_epochs)
        out[:span] = series[:span]
        out_series[kind] = out
    return out_series, out_labels


def preprocess_recording(raw, samples_per_epoch=None,
                         target_epochs=1200, epoch_seconds=EPOCH_SECONDS):
    """resample -> normalize -> pad/truncate -> merge AASM labels."""
    if samples_per_epoch is None:
        samples_per_epoch = {k: k.default_samples_per_epoch
                             for k in ALL_KINDS}
    n_epochs = len(raw.labels_aasm)
    if n_epochs == 0:
        raise DataError(f"recording {raw.id!r} has no labelled epochs")
    series = {}
    for kind, data in raw.series.items():
        resampled = resample(data, raw.rates[kind], samples_per_epoch[kind],
                             epochs=n_epochs, epoch_seconds=epoch_seconds)
        series[kind] = normalize(resampled)
    merged = merge_stages(raw.labels_aasm)
    out_series, out_labels = pad_truncate(series, merged, samples_per_epoch,
                                          target_epochs)
    return PreprocessedRecording(
        id=raw.id, series=out_series,
        samples_per_epoch={k: samples_per_epoch[k] for k in out_series},
        labels=out_labels, group_keys=dict(raw.group_keys))


# ---- container I/O --------------------------------------------------------

def write_container(path, recording):
    """Serialize a Raw- or PreprocessedRecording; round-trip is bit-exact."""
    preprocessed = isinstance(recording, PreprocessedRecording)
    kinds = [k for k in ALL_KINDS if k in recording.series]
    payloads = {k.value: np.ascontiguousarray(
        recording.series[k], dtype="<f4").tobytes() for k in kinds}
    header = {
        "format": "sleepset-container",
        "version": CONTAINER_VERSION,
        "preprocessed": preprocessed,
        "id": recording.id,
        "kinds": [k.value for k in kinds],
        "lengths": {k.value: int(len(recording.series[k])) for k in kinds},
        "checksums": {name: zlib.crc32(blob) for name, blob in
                      payloads.items()},
        "group_keys": dict(recording.group_keys),
    }
    if preprocessed:
        header["samples_per_epoch"] = {
            k.value: int(recording.samples_per_epoch[k]) for k in kinds}
        header["label_scheme"] = "merged"
        header["labels"] = [int(v) for v in recording.labels]
    else:
        header["rates"] = {k.value: float(recording.rates[k]) for k in kinds}
        header["label_scheme"] = "aasm"
        header["labels"] = [int(v) for v in recording.labels_aasm]
    blob = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array(len(blob), dtype="<u4").tobytes())
        fh.write(blob)
        for k in kinds:
            fh.write(payloads[k.value])
    return path


def read_container(path):
    """Parse a container; returns RawRecording or PreprocessedRecording."""
    if not os.path.exists(path):
        raise DataError(f"container file not found: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != MAGIC:
        raise ContainerHeaderError(f"{path}: not a sleepset container")
    header_len = int(np.frombuffer(data[4:8], dtype="<u4")[0])
    if len(data) < 8 + header_len:
        raise ContainerHeaderError(f"{path}: header truncated")
    try:
        header = json.loads(data[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerHeaderError(f"{path}: corrupted header ({exc})")
    if header.get("format") != "sleepset-container":
        raise ContainerHeaderError(f"{path}: unknown container format")
    if header.get("version") != CONTAINER_VERSION:
        raise ContainerHeaderError(
            f"{path}: unsupported container version {header.get('version')}")

    kinds = []
    for name in header.get("kinds", []):
        try:
            kinds.append(SignalKind(name))
        except ValueError:
            raise ContainerHeaderError(f"{path}: unknown signal kind "
                                       f"{name!r} in header")
    offset = 8 + header_len
    series = {}
    for kind in kinds:
        length = int(header["lengths"][kind.value])
        nbytes = 4 * length
        if offset + nbytes > len(data):
            raise ContainerTruncatedError(
                f"{path}: payload for {kind.value} truncated "
                f"(need {nbytes} bytes at offset {offset})")
        blob = data[offset:offset + nbytes]
        if zlib.crc32(blob) != header["checksums"][kind.value]:
            raise ContainerChecksumError(
                f"{path}: checksum mismatch for {kind.value}")
        series[kind] = np.frombuffer(blob, dtype="<f4").copy()
        offset += nbytes

    labels = np.asarray(header["labels"], dtype=np.int8)
    if header["preprocessed"]:
        spe = {SignalKind(name): int(v)
               for name, v in header["samples_per_epoch"].items()}
        return PreprocessedRecording(
            id=header["id"], series=series, samples_per_epoch=spe,
            labels=labels, group_keys=dict(header.get("group_keys", {})))
    rates = {SignalKind(name): float(v)
             for name, v in header["rates"].items()}
    return RawRecording(id=header["id"], series=series, rates=rates,
                        labels_aasm=labels,
                        group_keys=dict(header.get("group_keys", {})))


def is_preprocessed_container(path):
    """Peek at the header flag without loading payloads."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8 or head[:4] != MAGIC:
            raise ContainerHeaderError(f"{path}: not a sleepset container")
        header_len = int(np.frombuffer(head[4:8], dtype="<u4")[0])
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerHeaderError(f"{path}: corrupted header ({exc})")
    return bool(header.get("preprocessed"))


# ---- manifests -------------------------------------------------------------

def write_manifest(path, entries):
    """entries: [{"path": ..., "split": train|val|test, "group_keys": {...}}]"""
    payload = {"recordings": [
        {"path": e["path"], "split": e["split"],
         "group_keys": dict(e.get("group_keys", {}))} for e in entries]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(path):
    if not os.path.exists(path):
        raise DataError(f"manifest file not found: {path}")
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}")
    entries = payload.get("recordings")
    if not isinstance(entries, list):
        raise DataError(f"manifest {path} lacks a 'recordings' list")
    for entry in entries:
        if "path" not in entry or "split" not in entry:
            raise DataError(f"manifest {path}: every entry needs "
                            "'path' and 'split'")
        if entry["split"] not in ("train", "val", "test"):
            raise DataError(f"manifest {path}: unknown split "
                            f"{entry['split']!r}")
    return entries


def manifest_paths(manifest_path, split=None):
    """Absolute container paths for a split (or all), manifest-relative."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for entry in load_manifest(manifest_path):
        if split is not None and entry["split"] != split:
            continue
        p = entry["path"]
        out.append(p if os.path.isabs(p) else os.path.join(base, p))
    return out


def load_split(manifest_path, split):
    """Read every container of a split into memory."""
    return [read_container(p) for p in manifest_paths(manifest_path, split)]


def recording_kinds(recording):
    return [k for k in ALL_KINDS if k in recording.series]
