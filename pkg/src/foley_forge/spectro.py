"""Audio <-> spectrogram codec.

STFT/ISTFT with periodic Hann windows, 3-channel packing of log-magnitude
and phase into [-1, 1], the five encoding families (stft/cqt/ms/mfcc/lms),
and the FIR post-processing filter applied to reconstructed audio.

Two named profiles:
  desk  -- 720 Hz, frame 128, hop 32; a 3 s clip packs to 64x64x3.
  paper -- 44.1 kHz, frame 1024, hop 256; a 3 s clip packs to 512x512x3.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .nncore.errors import DataError, ShapeError

LOG_FLOOR = 1e-6


class EncodingKind(str, enum.Enum):
    STFT = "stft"
    CQT = "cqt"
    MS = "ms"
    MFCC = "mfcc"
    LMS = "lms"


@dataclass(frozen=True)
class StftConfig:
    frame_size: int = 1024
    hop: int = 256
    sample_rate: int = 44100
    window: str = "hann"

    def __post_init__(self):
        if self.hop > self.frame_size:
            raise ShapeError("hop must not exceed frame_size")
        if self.window != "hann":
            raise ShapeError("only Hann analysis windows are supported")

    @property
    def bins(self) -> int:
        return self.frame_size // 2 + 1

    @property
    def overlap(self) -> float:
        return 1.0 - self.hop / self.frame_size

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.frame_size) // self.hop + 1


@dataclass(frozen=True)
class CodecProfile:
    name: str
    stft: StftConfig
    size: int  # packed spectrograms are size x size x 3
    clip_seconds: float = 3.0


PROFILES = {
    "desk": CodecProfile("desk", StftConfig(128, 32, 720), 64),
    "paper": CodecProfile("paper", StftConfig(1024, 256, 44100), 512),
}


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError("AudioClip expects mono samples")
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be positive")
        peak = np.max(np.abs(self.samples)) if self.samples.size else 0.0
        if peak > 1.0 + 1e-9:
            raise DataError(f"samples exceed [-1, 1] (peak {peak:.3g})")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @classmethod
    def normalized(cls, samples, sample_rate, headroom=0.999):
        """Build a clip, rescaling into [-1, 1] only if it overflows."""
        samples = np.asarray(samples, dtype=np.float64)
        peak = np.max(np.abs(samples)) if samples.size else 0.0
        if peak > headroom:
            samples = samples * (headroom / peak)
        return cls(samples, sample_rate)


@dataclass
class ComplexSpectrogram:
    magnitude: np.ndarray  # frames x bins, >= 0
    phase: np.ndarray  # frames x bins, (-pi, pi]

    def __post_init__(self):
        self.magnitude = np.asarray(self.magnitude, dtype=np.float64)
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.magnitude.shape != self.phase.shape or self.magnitude.ndim != 2:
            raise ShapeError("magnitude/phase must be matching 2-D arrays")
        if np.any(self.magnitude < 0):
            raise DataError("negative magnitudes")

    @property
    def frames(self) -> int:
        return self.magnitude.shape[0]

    @property
    def bins(self) -> int:
        return self.magnitude.shape[1]

    def to_complex(self) -> np.ndarray:
        return self.magnitude * np.exp(1j * self.phase)


@dataclass
class PackedSpectrogram:
    """H x W x 3 tensor in [-1, 1]: scaled log-magnitude, phase/pi, zero pad."""

    values: np.ndarray
    logmag_min: float
    logmag_max: float
    valid_frames: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ShapeError("packed spectrogram must be H x W x 3")
        if self.valid_frames == 0:
            self.valid_frames = self.values.shape[1]
        lo, hi = self.values.min(), self.values.max()
        if lo < -1 - 1e-9 or hi > 1 + 1e-9:
            raise DataError(f"packed values outside [-1, 1]: [{lo:.3g}, {hi:.3g}]")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (zero only at index 0)."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def default_scale(frame_size: int):
    """Generation-time affine scale for log magnitudes: [log eps, log(N/2)]."""
    return float(np.log(LOG_FLOOR)), float(np.log(frame_size / 2.0))


def stft(clip: AudioClip, cfg: StftConfig) -> ComplexSpectrogram:
    x = clip.samples
    n = cfg.frame_size
    if x.size < n:
        raise DataError(f"clip of {x.size} samples shorter than frame size {n}")
    frames = cfg.n_frames(x.size)
    win = hann_window(n)
    idx = np.arange(n)[None, :] + cfg.hop * np.arange(frames)[:, None]
    spec = np.fft.rfft(x[idx] * win, axis=1)
    return ComplexSpectrogram(np.abs(spec), np.angle(spec))


def istft(spec: ComplexSpectrogram, cfg: StftConfig) -> AudioClip:
    """Weighted overlap-add with per-sample window-square normalization.

    Output length is frame + (frames-1)*hop.  The window-energy denominator
    is positive everywhere except sample 0, where the periodic Hann is zero;
    that lone sample is emitted as 0 (see istft_support).
    """
    n = cfg.frame_size
    if spec.bins != cfg.bins:
        raise ShapeError(f"spectrogram has {spec.bins} bins, config wants {cfg.bins}")
    frames = spec.frames
    win = hann_window(n)
    out_len = n + (frames - 1) * cfg.hop
    acc = np.zeros(out_len)
    wsum = np.zeros(out_len)
    segs = np.fft.irfft(spec.to_complex(), n=n, axis=1)
    for m in range(frames):
        start = m * cfg.hop
        acc[start : start + n] += segs[m] * win
        wsum[start : start + n] += win * win
    covered = wsum > 1e-12
    # interior coverage for Hann at >= 50% overlap is a positive constant
    assert covered[n : max(n, out_len - n)].all() if out_len > 2 * n else True
    out = np.zeros(out_len)
    out[covered] = acc[covered] / wsum[covered]
    return AudioClip.normalized(out, cfg.sample_rate, headroom=1.0)


def istft_support(cfg: StftConfig, frames: int) -> np.ndarray:
    """Boolean mask of samples the codec can reconstruct exactly."""
    n = cfg.frame_size
    win = hann_window(n)
    out_len = n + (frames - 1) * cfg.hop
    wsum = np.zeros(out_len)
    for m in range(frames):
        wsum[m * cfg.hop : m * cfg.hop + n] += win * win
    return wsum > 1e-12


def snr_db(reference: np.ndarray, estimate: np.ndarray, mask=None) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    m = min(reference.size, estimate.size)
    reference, estimate = reference[:m], estimate[:m]
    if mask is not None:
        reference, estimate = reference[mask[:m]], estimate[mask[:m]]
    err = np.sum((reference - estimate) ** 2)
    sig = np.sum(reference**2)
    if err == 0:
        return np.inf
    return 10 * np.log10(sig / err) if sig > 0 else -np.inf


def roundtrip_snr(clip: AudioClip, cfg: StftConfig) -> float:
    """SNR of istft(stft(x)) against x over the reconstructable support."""
    spec = stft(clip, cfg)
    back = istft(spec, cfg)
    mask = istft_support(cfg, spec.frames)
    return snr_db(clip.samples, back.samples, mask)


def pack(spec: ComplexSpectrogram, target: int | tuple, scale=None) -> PackedSpectrogram:
    """Pack magnitude/phase into an H x W x 3 tensor in [-1, 1].

    Frequency axis: bins may exceed the target height by exactly one (the
    Nyquist bin is dropped; zero-filled again by unpack).  Time axis: padded
    with floor values or cropped to the target width.
    """
    if isinstance(target, int):
        target = (target, target)
    height, width = target
    if spec.bins > height + 1:
        raise ShapeError(
            f"{spec.bins} frequency bins cannot pack into height {height}"
        )
    if scale is None:
        scale = default_scale(2 * (spec.bins - 1))
    lo, hi = float(scale[0]), float(scale[1])
    if not hi > lo:
        raise DataError("degenerate log-magnitude scale")

    mag = spec.magnitude[:, :height]
    phase = spec.phase[:, :height]
    logmag = np.log(mag + LOG_FLOOR)
    ch0 = np.clip(2 * (logmag - lo) / (hi - lo) - 1, -1.0, 1.0)
    ch1 = np.clip(phase / np.pi, -1.0, 1.0)

    frames = min(spec.frames, width)
    values = np.zeros((height, width, 3))
    values[:, :, 0] = -1.0
    values[:, :frames, 0] = ch0[:frames].T
    values[:, :frames, 1] = ch1[:frames].T
    return PackedSpectrogram(values, lo, hi, valid_frames=frames)


def unpack(packed: PackedSpectrogram) -> ComplexSpectrogram:
    """Inverse of pack on its image: depad, unscale, zero-fill Nyquist."""
    lo, hi = packed.logmag_min, packed.logmag_max
    frames = packed.valid_frames
    ch0 = packed.values[:, :frames, 0].T
    ch1 = packed.values[:, :frames, 1].T
    logmag = (ch0 + 1) * (hi - lo) / 2 + lo
    mag = np.maximum(np.exp(logmag) - LOG_FLOOR, 0.0)
    phase = ch1 * np.pi
    bins = packed.height + 1
    full_mag = np.zeros((frames, bins))
    full_phase = np.zeros((frames, bins))
    full_mag[:, : packed.height] = mag
    full_phase[:, : packed.height] = phase
    return ComplexSpectrogram(full_mag, full_phase)


def _mel_from_hz(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _hz_from_mel(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, bins: int, sample_rate: int, fmin=0.0, fmax=None):
    """Triangular filters on the mel scale, (n_mels, bins)."""
    if n_mels > bins:
        raise ShapeError(f"n_mels {n_mels} exceeds {bins} spectrum bins")
    fmax = fmax or sample_rate / 2
    mel_pts = np.linspace(_mel_from_hz(fmin), _mel_from_hz(fmax), n_mels + 2)
    hz_pts = _hz_from_mel(mel_pts)
    bin_freqs = np.linspace(0, sample_rate / 2, bins)
    fb = np.zeros((n_mels, bins))
    for i in range(n_mels):
        left, center, right = hz_pts[i : i + 3]
        up = (bin_freqs - left) / max(center - left, 1e-12)
        down = (right - bin_freqs) / max(right - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def cqt_filterbank(bins: int, sample_rate: int, fmin=32.7, bins_per_octave=12):
    """Log-spaced geometric triangular filterbank over the linear spectrum."""
    nyquist = sample_rate / 2
    n_oct = np.log2(nyquist / fmin)
    n_filt = int(np.floor(n_oct * bins_per_octave)) - 1
    if n_filt < 1:
        raise ShapeError("sample rate too low for the CQT range")
    centers = fmin * 2.0 ** (np.arange(n_filt + 2) / bins_per_octave)
    bin_freqs = np.linspace(0, nyquist, bins)
    fb = np.zeros((n_filt, bins))
    for i in range(n_filt):
        left, center, right = centers[i], centers[i + 1], centers[i + 2]
        up = (bin_freqs - left) / max(center - left, 1e-12)
        down = (right - bin_freqs) / max(right - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def _dct2_ortho(x, n_keep):
    n = x.shape[1]
    k = np.arange(n_keep)[:, None]
    basis = np.cos(np.pi * k * (2 * np.arange(n)[None, :] + 1) / (2 * n))
    basis *= np.sqrt(2.0 / n)
    basis[0] /= np.sqrt(2.0)
    return x @ basis.T


def encode(clip: AudioClip, kind, cfg: StftConfig, n_mels=None, n_mfcc=13):
    """Frame-level features for one of the five encoding families."""
    kind = EncodingKind(kind)
    spec = stft(clip, cfg)
    power = spec.magnitude**2
    if n_mels is None:
        n_mels = min(32, cfg.bins)
    if kind is EncodingKind.STFT:
        return np.log(spec.magnitude + LOG_FLOOR)
    if kind is EncodingKind.CQT:
        fb = cqt_filterbank(cfg.bins, cfg.sample_rate)
        return np.log(power @ fb.T + LOG_FLOOR)
    fb = mel_filterbank(n_mels, cfg.bins, cfg.sample_rate)
    ms = power @ fb.T
    if kind is EncodingKind.MS:
        return ms
    lms = np.log(ms + LOG_FLOOR)
    if kind is EncodingKind.LMS:
        return lms
    return _dct2_ortho(lms, min(n_mfcc, n_mels))


def sinc_lowpass_taps(n_taps=512, cutoff=0.45):
    """Hamming-windowed sinc low-pass, unit DC gain; cutoff in cycles/sample."""
    m = np.arange(n_taps) - (n_taps - 1) / 2
    h = np.sinc(2 * cutoff * m)
    h *= np.hamming(n_taps)
    return h / h.sum()


def postprocess_filter(clip: AudioClip, taps=None) -> AudioClip:
    """Same-length FIR filtering of reconstructed audio (default 512-tap
    low-pass at 0.9 Nyquist to suppress synthesis artifacts)."""
    h = sinc_lowpass_taps() if taps is None else np.asarray(taps, dtype=np.float64)
    if h.size > clip.samples.size:
        raise DataError("filter longer than the clip")
    y = np.convolve(clip.samples, h, mode="full")
    delay = (h.size - 1) // 2
    y = y[delay : delay + clip.samples.size]
    return AudioClip.normalized(y, clip.sample_rate, headroom=1.0)


def griffin_lim(magnitude, cfg: StftConfig, iterations=32, seed=0) -> AudioClip:
    """Optional phase reconstruction for magnitude-only encodings."""
    rng = np.random.default_rng(seed)
    phase = rng.uniform(-np.pi, np.pi, magnitude.shape)
    for _ in range(iterations):
        clip = istft(ComplexSpectrogram(magnitude, phase), cfg)
        est = stft(clip, cfg)
        frames = min(est.frames, magnitude.shape[0])
        phase[:frames] = est.phase[:frames]
    return istft(ComplexSpectrogram(magnitude, phase), cfg)
