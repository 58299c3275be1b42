"""Audio frontend: WAV loading, log-mel features, and crop/noise augmentation.

All feature matrices are float32 with shape [frames, mel_bins]. Randomness is
always drawn from an explicitly passed numpy Generator so that parallel feature
extraction stays reproducible (spawn child generators per item if fanning out).
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import ContractError, DegenerateInputError, FormatError

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_LOG_FLOOR = 1e-6

# value a silent frame maps to; also used to pad short crops
LOG_SILENCE = float(np.log(DEFAULT_LOG_FLOOR))


@dataclass
class AudioClip:
    """Mono audio in [-1, 1] at a known sample rate."""

    id: str
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    label: int | None = None

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ContractError("AudioClip.samples must be a non-empty 1-D array")
        if self.sample_rate <= 0:
            raise ContractError("AudioClip.sample_rate must be positive")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0 + 1e-9:
            raise ContractError(f"AudioClip samples exceed [-1, 1] (peak {peak:.6f})")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    """STFT and mel filterbank geometry (sizes in samples)."""

    sample_rate: int = DEFAULT_SAMPLE_RATE
    window: int = 400
    hop: int = 160
    mel_bins: int = 64
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = DEFAULT_LOG_FLOOR

    def __post_init__(self) -> None:
        if self.window <= 0 or self.hop <= 0 or self.mel_bins <= 0:
            raise ContractError("window, hop and mel_bins must be positive")
        if self.log_floor <= 0:
            raise ContractError("log_floor must be positive")

    @property
    def effective_fmax(self) -> float:
        return self.sample_rate / 2.0 if self.fmax is None else self.fmax


@dataclass
class LogMelSpec:
    """Log-scaled mel energies, [frames x mel_bins] float32."""

    values: np.ndarray
    frame_hop: float
    mel_bins: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[1] != self.mel_bins:
            raise ContractError("LogMelSpec.values must be [frames x mel_bins]")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("LogMelSpec.values must be finite")

    @property
    def frames(self) -> int:
        return self.values.shape[0]


@dataclass
class AugmentationPolicy:
    """Random temporal crop plus optional Gaussian noise on log-mel values.

    ``rng`` is the policy's seed stream; it is consumed call by call, so a
    policy built from a fixed seed replays the same augmentation sequence.
    """

    crop_frames: int = 96
    noise_std: float = 0.0
    allow_time_shift: bool = True
    rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.crop_frames <= 0:
            raise ContractError("crop_frames must be positive")
        if not np.isfinite(self.noise_std) or self.noise_std < 0:
            raise ContractError("noise_std must be finite and >= 0")

    @classmethod
    def seeded(cls, seed, crop_frames: int = 96, noise_std: float = 0.0,
               allow_time_shift: bool = True) -> "AugmentationPolicy":
        return cls(crop_frames=crop_frames, noise_std=noise_std,
                   allow_time_shift=allow_time_shift, rng=np.random.default_rng(seed))


def load_audio(path: str | Path, target_rate: int = DEFAULT_SAMPLE_RATE) -> AudioClip:
    """Load a 16-bit PCM WAV file as a mono clip at ``target_rate``.

    Multi-channel input is down-mixed by averaging. Raises FormatError for
    non-PCM or non-16-bit encodings; I/O problems propagate as OSError.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wav:
            n_channels = wav.getnchannels()
            sampwidth = wav.getsampwidth()
            framerate = wav.getframerate()
            comptype = wav.getcomptype()
            raw = wav.readframes(wav.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if comptype != "NONE":
        raise FormatError(f"{path}: compressed WAV ({comptype}) is not supported")
    if sampwidth != 2:
        raise FormatError(f"{path}: only 16-bit PCM is supported (got {8 * sampwidth}-bit)")
    if not raw:
        raise FormatError(f"{path}: WAV file contains no samples")

    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if n_channels > 1:
        pcm = pcm.reshape(-1, n_channels).mean(axis=1)
    samples = pcm / 32768.0

    if framerate != target_rate:
        g = np.gcd(int(target_rate), int(framerate))
        samples = resample_poly(samples, target_rate // g, framerate // g)
        # polyphase filtering can overshoot full scale slightly
        samples = np.clip(samples, -1.0, 1.0)

    return AudioClip(id=path.stem, samples=samples, sample_rate=target_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular mel filterbank, [mel_bins x (window // 2 + 1)]."""
    n_freqs = cfg.window // 2 + 1
    freqs = np.linspace(0.0, cfg.sample_rate / 2.0, n_freqs)
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.effective_fmax), cfg.mel_bins + 2)
    hz_pts = mel_to_hz(mel_pts)

    fb = np.zeros((cfg.mel_bins, n_freqs))
    for m in range(cfg.mel_bins):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (freqs - lo) / max(ctr - lo, 1e-12)
        down = (hi - freqs) / max(hi - ctr, 1e-12)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def compute_logmel(clip: AudioClip, cfg: FeatureConfig | None = None) -> LogMelSpec:
    """Compute log(mel_energy + log_floor) frames for a clip.

    Frame count is floor((len - window) / hop) + 1; clips shorter than one
    window are zero-padded to a single frame.
    """
    cfg = cfg or FeatureConfig()
    if clip.sample_rate != cfg.sample_rate:
        raise ContractError(
            f"clip rate {clip.sample_rate} != feature config rate {cfg.sample_rate}")

    x = clip.samples
    if x.size < cfg.window:
        x = np.pad(x, (0, cfg.window - x.size))
    n_frames = (x.size - cfg.window) // cfg.hop + 1

    idx = np.arange(cfg.window)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(cfg.window)[None, :]
    power = np.abs(np.fft.rfft(frames, n=cfg.window, axis=1)) ** 2
    mel_energy = power @ mel_filterbank(cfg).T
    values = np.log(mel_energy + cfg.log_floor)

    return LogMelSpec(values=values.astype(np.float32),
                      frame_hop=cfg.hop / cfg.sample_rate,
                      mel_bins=cfg.mel_bins)


def sample_and_augment(spec: LogMelSpec, policy: AugmentationPolicy) -> LogMelSpec:
    """Crop (random start if time shift is allowed, else centered) and add noise.

    Output always has exactly ``policy.crop_frames`` frames; specs shorter than
    the crop are padded with the silence floor value.
    """
    values = spec.values
    if values.shape[0] < policy.crop_frames:
        pad = policy.crop_frames - values.shape[0]
        values = np.pad(values, ((0, pad), (0, 0)), constant_values=LOG_SILENCE)

    slack = values.shape[0] - policy.crop_frames
    randomized = policy.allow_time_shift or policy.noise_std > 0
    if randomized and policy.rng is None:
        raise ContractError("policy requires an rng for time shift or noise")

    if policy.allow_time_shift and slack > 0:
        start = int(policy.rng.integers(0, slack + 1))
    else:
        start = slack // 2
    out = values[start:start + policy.crop_frames].astype(np.float32, copy=True)

    if policy.noise_std > 0:
        noise = policy.rng.normal(0.0, policy.noise_std, size=out.shape)
        out = (out + noise).astype(np.float32)

    return LogMelSpec(values=out, frame_hop=spec.frame_hop, mel_bins=spec.mel_bins)


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Spawn n independent child streams (for deterministic parallel fan-out)."""
    if n <= 0:
        raise DegenerateInputError("cannot split an rng into zero streams")
    return list(rng.spawn(n))
