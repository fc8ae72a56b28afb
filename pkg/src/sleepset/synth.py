"""Synthetic overnight recordings with known sleep stages.

The hypnogram is a semi-Markov walk over the five AASM stages (geometric
dwell per stage, then a jump drawn from the transition matrix). Waveforms
carry the stage information the way real physiology does: cardiac signals
are pulse trains whose rate and beat-to-beat variability depend on the
stage, respiratory signals are near-sinusoids with stage-dependent rate and
breath-to-breath variability. Everything is deterministic given the config
seed.
"""

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .config import SynthConfig
from .data import RawRecording
from .errors import ConfigError
from .signals import AasmStage, SignalKind


def synth_hypnogram(config, rng):
    """Semi-Markov stage sequence of length duration_epochs."""
    transition = np.asarray(config.transition, dtype=np.float64)
    stages = list(AasmStage)
    out = np.empty(config.duration_epochs, dtype=np.int8)
    pos = 0
    stage = AasmStage.WAKE
    while pos < config.duration_epochs:
        dwell = rng.geometric(1.0 / config.dwell_epochs[stage])
        take = min(dwell, config.duration_epochs - pos)
        out[pos:pos + take] = stage
        pos += take
        stage = stages[rng.choice(len(stages), p=transition[stage])]
    return out


def stationary_marginals(config):
    """Expected long-run fraction of epochs per stage: the embedded chain's
    stationary distribution weighted by mean dwell."""
    transition = np.asarray(config.transition, dtype=np.float64)
    values, vectors = np.linalg.eig(transition.T)
    pi = np.real(vectors[:, np.argmin(np.abs(values - 1.0))])
    pi = np.abs(pi) / np.abs(pi).sum()
    dwell = np.array([config.dwell_epochs[s] for s in AasmStage])
    weighted = pi * dwell
    return weighted / weighted.sum()


def _event_times(rng, total_seconds, rate_per_epoch, jitter_per_epoch,
                 epoch_seconds):
    """Event (beat/breath) times whose local rate and interval jitter follow
    the per-epoch profiles."""
    times = []
    t = rng.uniform(0.0, 0.3)
    n_epochs = len(rate_per_epoch)
    while t < total_seconds:
        epoch = min(int(t / epoch_seconds), n_epochs - 1)
        mean_interval = 1.0 / rate_per_epoch[epoch]
        interval = mean_interval * (1.0 + jitter_per_epoch[epoch] *
                                    rng.standard_normal())
        t += max(interval, 0.2 * mean_interval)
        times.append(t)
    return np.array(times[:-1]) if times else np.zeros(0)


def _pulse_train(times, amplitudes, fs, n_samples, width_seconds):
    impulses = np.zeros(n_samples, dtype=np.float64)
    idx = np.round(times * fs).astype(np.int64)
    good = (idx >= 0) & (idx < n_samples)
    np.add.at(impulses, idx[good], amplitudes[good])
    return gaussian_filter1d(impulses, sigma=max(width_seconds * fs, 0.5))


def synth_generate(config):
    """Generate one RawRecording (all four kinds, minus availability drops)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    hypnogram = synth_hypnogram(config, rng)
    n_epochs = len(hypnogram)
    epoch_s = config.epoch_seconds
    total_seconds = n_epochs * epoch_s

    # recording-level physiology offsets; also used for report grouping
    hr_base = rng.uniform(0.9, 1.1)
    rr_base = rng.uniform(0.9, 1.1)

    hr = hr_base * np.array([config.heart_rate_hz[AasmStage(s)]
                             for s in hypnogram])
    hr_jit = np.array([config.heart_rate_jitter[AasmStage(s)]
                       for s in hypnogram])
    rr = rr_base * np.array([config.resp_rate_hz[AasmStage(s)]
                             for s in hypnogram])
    rr_jit = np.array([config.resp_rate_jitter[AasmStage(s)]
                       for s in hypnogram])

    beat_times = _event_times(rng, total_seconds, hr, hr_jit, epoch_s)
    breath_times = _event_times(rng, total_seconds, rr, rr_jit, epoch_s)

    series = {}
    rates = dict(config.sample_rates_hz)

    fs = rates[SignalKind.ECG]
    n = int(round(total_seconds * fs))
    amps = 1.0 + 0.05 * rng.standard_normal(len(beat_times))
    ecg = _pulse_train(beat_times, amps, fs, n, width_seconds=0.04)
    ecg += config.noise[SignalKind.ECG] * ecg.std() * rng.standard_normal(n)
    series[SignalKind.ECG] = ecg.astype(np.float32)

    # PPG: the beat train through a strong low-pass, i.e. its fundamental --
    # one smooth pulse per beat, sharing the ECG beat times (0.25 s delayed)
    fs = rates[SignalKind.PPG]
    n = int(round(total_seconds * fs))
    grid = np.arange(n) / fs
    beat_index = np.interp(grid, beat_times + 0.25,
                           np.arange(len(beat_times), dtype=np.float64))
    ppg = np.sin(2.0 * np.pi * beat_index)
    ppg *= 1.0 + 0.10 * gaussian_filter1d(rng.standard_normal(n), 4.0)
    ppg += config.noise[SignalKind.PPG] * rng.standard_normal(n)
    series[SignalKind.PPG] = ppg.astype(np.float32)

    for kind, phase_shift, amp in ((SignalKind.ABD, 0.0, 1.0),
                                   (SignalKind.THX, 0.4, 0.9)):
        fs = rates[kind]
        n = int(round(total_seconds * fs))
        grid = np.arange(n) / fs
        # fractional breath index -> phase; sin gives one cycle per breath
        breath_index = np.interp(grid, breath_times,
                                 np.arange(len(breath_times), dtype=np.float64))
        resp = amp * np.sin(2.0 * np.pi * breath_index + phase_shift)
        resp += config.noise[kind] * rng.standard_normal(n)
        series[kind] = resp.astype(np.float32)

    for kind in list(series):
        if rng.random() >= config.availability.get(kind, 1.0):
            del series[kind]
    if not series:
        series[SignalKind.ECG] = ecg.astype(np.float32)

    return RawRecording(
        id=f"synth-{config.seed:08d}",
        series=series,
        rates={k: rates[k] for k in series},
        labels_aasm=hypnogram,
        group_keys={"hr_band": "low" if hr_base < 1.0 else "high"},
    )


def synth_dataset(config, n_recordings, base_seed):
    """Deterministic list of recordings with per-recording derived seeds."""
    import dataclasses
    if n_recordings < 1:
        raise ConfigError("n_recordings must be positive")
    out = []
    for i in range(n_recordings):
        cfg = dataclasses.replace(config, seed=base_seed + i)
        out.append(synth_generate(cfg))
    return out
