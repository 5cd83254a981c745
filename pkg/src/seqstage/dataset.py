"""Recording container format, synthetic corpus generator, and dataset splits.

Recordings live in a small binary format: a fixed header, float32 samples
ordered [epoch][channel][sample], and a one-byte-per-epoch label sidecar
(`.ssl` next to the `.ssr`). The synthetic generator stands in for real
polysomnography at desk scale: a Markov chain over the five stages drives
per-stage, per-channel band-limited sinusoid mixtures plus white noise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import tfr
from .model import NUM_STAGES, STAGES

RECORDING_MAGIC = b"SSR1"
RECORDING_VERSION = 1
SYNTH_FORMAT_VERSION = 1
_COMPONENTS_PER_PEAK = 3


@dataclass
class Recording:
    """One whole-night recording: samples[epoch][channel][sample] + stage labels."""

    samples: np.ndarray
    labels: np.ndarray
    sample_rate: int = 100
    name: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.samples.ndim != 3:
            raise ValueError(f"samples must be [epoch][channel][sample], got {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0],):
            raise ValueError("one label per epoch required")
        if self.labels.size and self.labels.max() >= NUM_STAGES:
            raise ValueError("label out of range")

    @property
    def n_epochs(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]


def _label_path(path: Path) -> Path:
    return path.with_suffix(".ssl")


def write_recording(recording: Recording, path) -> None:
    """Write `<path>` (.ssr payload) and its `.ssl` label sidecar."""
    path = Path(path)
    n_epochs, n_channels, n_samples = recording.samples.shape
    header = RECORDING_MAGIC + struct.pack(
        "<IIIII", RECORDING_VERSION, n_channels, recording.sample_rate, n_samples, n_epochs)
    payload = np.ascontiguousarray(recording.samples, dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    _label_path(path).write_bytes(bytes(recording.labels.tolist()))


def read_recording(path) -> Recording:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != RECORDING_MAGIC:
        raise ValueError(f"bad magic in {path}")
    if len(raw) < 24:
        raise ValueError(f"truncated payload in {path}")
    version, n_channels, sample_rate, n_samples, n_epochs = struct.unpack("<IIIII", raw[4:24])
    if version != RECORDING_VERSION:
        raise ValueError(f"unsupported recording version {version} in {path}")
    expected = n_epochs * n_channels * n_samples * 4
    body = raw[24:]
    if len(body) != expected:
        raise ValueError(f"truncated payload in {path}: {len(body)} bytes, expected {expected}")
    samples = np.frombuffer(body, dtype="<f4").reshape(n_epochs, n_channels, n_samples)
    label_bytes = _label_path(path).read_bytes()
    if len(label_bytes) != n_epochs:
        raise ValueError(f"label sidecar of {path} has {len(label_bytes)} entries, "
                         f"expected {n_epochs}")
    labels = np.frombuffer(label_bytes, dtype=np.uint8)
    if labels.size and labels.max() >= NUM_STAGES:
        raise ValueError(f"label out of range in sidecar of {path}")
    return Recording(samples=samples.astype(np.float64), labels=labels.copy(),
                     sample_rate=sample_rate, name=path.stem)


def load_directory(directory) -> list[Recording]:
    """All .ssr recordings under ``directory``, sorted by filename."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.ssr"))
    if not paths:
        raise ValueError(f"no .ssr recordings found in {directory}")
    return [read_recording(p) for p in paths]


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SpectralPeak:
    center_hz: float
    bandwidth_hz: float
    power: float


@dataclass
class SyntheticConfig:
    """Markov stage dynamics plus per-stage, per-channel spectral profiles.

    ``stage_profiles[stage][channel]`` is a list of peaks; each epoch's
    channel signal is the sum of 3 random-phase sinusoids per peak (frequency
    uniform in the band, amplitude jittered, expected total power =
    ``power``) plus white noise of variance ``noise_floor_power``.
    """

    transition_matrix: np.ndarray
    stage_profiles: dict
    num_recordings: int = 20
    epochs_per_recording: int = 120
    sample_rate: int = 100
    epoch_seconds: float = 30.0
    noise_floor_power: float = 0.01
    initial_stage: int | None = None
    seed: int = 2024
    amplitude_jitter: float = 0.3

    def __post_init__(self):
        self.transition_matrix = np.asarray(self.transition_matrix, dtype=np.float64)
        if self.transition_matrix.shape != (NUM_STAGES, NUM_STAGES):
            raise ValueError("transition matrix must be 5x5")
        if np.any(self.transition_matrix < 0):
            raise ValueError("transition probabilities must be non-negative")
        if np.any(np.abs(self.transition_matrix.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transition matrix rows must sum to 1 (tolerance 1e-9)")
        missing = [s for s in STAGES if s not in self.stage_profiles]
        if missing:
            raise ValueError(f"stage profiles missing for {missing}")
        channel_counts = {len(self.stage_profiles[s]) for s in STAGES}
        if len(channel_counts) != 1 or min(channel_counts) < 1:
            raise ValueError("every stage needs the same nonzero channel count")
        nyquist = self.sample_rate / 2.0
        for stage in STAGES:
            for chan in self.stage_profiles[stage]:
                for peak in chan:
                    if peak.center_hz + peak.bandwidth_hz / 2.0 >= nyquist:
                        raise ValueError(f"peak at {peak.center_hz} Hz exceeds Nyquist {nyquist}")

    @property
    def n_channels(self) -> int:
        return len(self.stage_profiles[STAGES[0]])

    @property
    def samples_per_epoch(self) -> int:
        return int(round(self.sample_rate * self.epoch_seconds))

    def to_dict(self) -> dict:
        return {
            "format_version": SYNTH_FORMAT_VERSION,
            "seed": self.seed,
            "num_recordings": self.num_recordings,
            "epochs_per_recording": self.epochs_per_recording,
            "sample_rate": self.sample_rate,
            "epoch_seconds": self.epoch_seconds,
            "noise_floor_power": self.noise_floor_power,
            "amplitude_jitter": self.amplitude_jitter,
            "initial_stage": self.initial_stage,
            "transition_matrix": self.transition_matrix.tolist(),
            "stage_profiles": {
                stage: [[{"center_hz": p.center_hz, "bandwidth_hz": p.bandwidth_hz,
                          "power": p.power} for p in chan]
                        for chan in self.stage_profiles[stage]]
                for stage in STAGES
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        if d.get("format_version") != SYNTH_FORMAT_VERSION:
            raise ValueError(f"unsupported synthetic config version {d.get('format_version')}")
        profiles = {
            stage: [[SpectralPeak(**peak) for peak in chan] for chan in chans]
            for stage, chans in d["stage_profiles"].items()
        }
        return cls(transition_matrix=np.asarray(d["transition_matrix"]),
                   stage_profiles=profiles,
                   num_recordings=d["num_recordings"],
                   epochs_per_recording=d["epochs_per_recording"],
                   sample_rate=d["sample_rate"],
                   epoch_seconds=d["epoch_seconds"],
                   noise_floor_power=d["noise_floor_power"],
                   amplitude_jitter=d.get("amplitude_jitter", 0.3),
                   initial_stage=d.get("initial_stage"),
                   seed=d["seed"])

    @classmethod
    def from_json(cls, path) -> "SyntheticConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_synthetic_config() -> SyntheticConfig:
    """The committed desk-scale corpus configuration."""
    text = resources.files("seqstage").joinpath("configs/default_synth.json").read_text()
    return SyntheticConfig.from_dict(json.loads(text))


def _sample_stage_sequence(config: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    stages = np.empty(config.epochs_per_recording, dtype=np.uint8)
    current = config.initial_stage if config.initial_stage is not None \
        else int(rng.integers(NUM_STAGES))
    stages[0] = current
    for e in range(1, config.epochs_per_recording):
        current = int(rng.choice(NUM_STAGES, p=config.transition_matrix[current]))
        stages[e] = current
    return stages


def generate_synthetic(config: SyntheticConfig, recording_index: int = 0) -> Recording:
    """One synthetic recording, deterministic in (config.seed, recording_index)."""
    seed_seq = np.random.SeedSequence(entropy=config.seed, spawn_key=(recording_index,))
    rng = np.random.Generator(np.random.Philox(seed_seq))
    stages = _sample_stage_sequence(config, rng)
    n = config.samples_per_epoch
    t = np.arange(n) / config.sample_rate
    noise_sigma = np.sqrt(config.noise_floor_power)
    lo_jit, hi_jit = 1.0 - config.amplitude_jitter, 1.0 + config.amplitude_jitter
    samples = np.empty((config.epochs_per_recording, config.n_channels, n))
    for e, stage in enumerate(stages):
        profile = config.stage_profiles[STAGES[stage]]
        for c in range(config.n_channels):
            x = rng.normal(0.0, noise_sigma, n)
            for peak in profile[c]:
                base_amp = np.sqrt(2.0 * peak.power / _COMPONENTS_PER_PEAK)
                for _ in range(_COMPONENTS_PER_PEAK):
                    freq = rng.uniform(peak.center_hz - peak.bandwidth_hz / 2.0,
                                       peak.center_hz + peak.bandwidth_hz / 2.0)
                    phase = rng.uniform(0.0, 2.0 * np.pi)
                    amp = base_amp * rng.uniform(lo_jit, hi_jit)
                    x += amp * np.sin(2.0 * np.pi * freq * t + phase)
            samples[e, c] = x
    # Quantize to the on-disk precision so write/read round-trips are exact.
    samples = samples.astype(np.float32).astype(np.float64)
    return Recording(samples=samples, labels=stages, sample_rate=config.sample_rate,
                     name=f"rec_{recording_index:03d}")


def generate_corpus(config: SyntheticConfig) -> list[Recording]:
    return [generate_synthetic(config, i) for i in range(config.num_recordings)]


def split_dataset(recordings: list, fractions, seed: int) -> tuple[list, list, list]:
    """Shuffle at recording granularity and partition by the given fractions."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negatives summing to 1, got {fractions}")
    n = len(recordings)
    perm = np.random.Generator(np.random.Philox(seed)).permutation(n)
    n_train = int(round(n * fractions[0]))
    n_valid = int(round(n * fractions[1]))
    n_train = min(n_train, n)
    n_valid = min(n_valid, n - n_train)
    train = [recordings[int(i)] for i in perm[:n_train]]
    valid = [recordings[int(i)] for i in perm[n_train:n_train + n_valid]]
    test = [recordings[int(i)] for i in perm[n_train + n_valid:]]
    return train, valid, test


def recording_images(recording: Recording, win_seconds: float = 2.0,
                     overlap_fraction: float = 0.5, nfft: int = 256) -> np.ndarray:
    """Log-power images for every epoch of a recording, [n_epochs][F][T][C]."""
    spectra = tfr.log_spectrogram_batch(recording.samples, recording.sample_rate,
                                        win_seconds, overlap_fraction, nfft)
    return spectra.transpose(0, 2, 3, 1)
