"""Synthetic audio-visual corpus with known ground truth.

Each clip pairs audio from a class-specific kernel with per-frame visual
features derived from the same event envelope, so audio onsets and feature
activity are co-located by construction.  Three default classes cover the
periodic / continuous / impulsive sound regimes:

  ticks    -- periodic damped bursts with a random phase offset
  amnoise  -- noise amplitude-modulated by a slow random envelope
  impacts  -- a few decaying chirp bursts at random times
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from . import spectro, tensorio
from .nncore.errors import DataError
from .relnet import FrameFeatureSequence

FRAME_RATE = 30  # visual features per second


@dataclass(frozen=True)
class SyntheticClass:
    name: str
    kernel: str  # ticks | amnoise | impacts
    rate: float = 2.0  # events per second (ticks) / modulation rate cap
    burst_seconds: float = 0.05
    jitter: float = 0.05

    def __post_init__(self):
        if self.kernel not in ("ticks", "amnoise", "impacts"):
            raise DataError(f"unknown audio kernel '{self.kernel}'")


def default_classes():
    return [
        SyntheticClass("ticks", "ticks", rate=2.0),
        SyntheticClass("amnoise", "amnoise", rate=1.0, burst_seconds=0.4),
        SyntheticClass("impacts", "impacts", rate=1.0, burst_seconds=0.35),
    ]


@dataclass
class EventEnvelope:
    values: np.ndarray  # per-frame activity in [0, 1]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise DataError("envelope values must lie in [0, 1]")


def _envelope_from_spans(spans, n_frames, frame_rate):
    """Fractional per-frame overlap with the union of (start, end) spans."""
    env = np.zeros(n_frames)
    for start, end in spans:
        first = max(0, int(np.floor(start * frame_rate)))
        last = min(n_frames - 1, int(np.ceil(end * frame_rate)))
        for f in range(first, last + 1):
            lo, hi = f / frame_rate, (f + 1) / frame_rate
            env[f] += max(0.0, min(end, hi) - max(start, lo)) * frame_rate
    return np.clip(env, 0.0, 1.0)


def _tick_audio(cls, rng, n, sr):
    period = 1.0 / cls.rate
    duration = n / sr
    offset = rng.uniform(0.1, period)
    onsets, t = [], offset
    while t < duration - cls.burst_seconds:
        onsets.append(t)
        t += period * (1.0 + cls.jitter * rng.uniform(-1, 1))
    audio = np.zeros(n)
    blen = int(cls.burst_seconds * sr)
    tt = np.arange(blen) / sr
    for onset in onsets:
        tone = np.sin(2 * np.pi * rng.uniform(150, 250) * tt)
        noise = 0.4 * rng.standard_normal(blen)
        burst = np.exp(-tt / 0.012) * (tone + noise)
        i = int(onset * sr)
        audio[i : i + blen] += burst[: n - i]
    spans = [(o, o + cls.burst_seconds) for o in onsets]
    return audio, spans


def _amnoise_audio(cls, rng, n, sr):
    t = np.arange(n) / sr
    level = np.full(n, 0.4)
    for _ in range(4):
        f = rng.uniform(0.3, 1.5 * cls.rate)
        level += 0.2 * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    level = np.clip(level, 0.08, 1.0)
    audio = level * rng.standard_normal(n) * 0.5
    return audio, level  # continuous: level doubles as the span info


def _impact_audio(cls, rng, n, sr):
    duration = n / sr
    count = int(rng.integers(2, 5))
    onsets = np.sort(rng.uniform(0.1, duration - cls.burst_seconds, size=count))
    audio = np.zeros(n)
    blen = int(cls.burst_seconds * sr)
    tt = np.arange(blen) / sr
    for onset in onsets:
        f0 = rng.uniform(180, 300)
        f1 = rng.uniform(40, 80)
        phase = 2 * np.pi * (f1 * tt + (f0 - f1) * cls.burst_seconds / 2
                             * (1 - (1 - tt / cls.burst_seconds) ** 2))
        burst = np.exp(-tt / (cls.burst_seconds / 3)) * np.sin(phase)
        i = int(onset * sr)
        audio[i : i + blen] += burst[: n - i]
    spans = [(o, o + cls.burst_seconds) for o in onsets]
    return audio, spans


def synth_clip(cls: SyntheticClass, seed: int, duration=3.0, sr=720,
               frame_rate=FRAME_RATE, class_onehot=None):
    """Generate (AudioClip, FrameFeatureSequence, EventEnvelope) for a class."""
    name_key = int.from_bytes(hashlib.sha256(cls.name.encode()).digest()[:4], "little")
    rng = np.random.default_rng(np.random.SeedSequence([seed, name_key]))
    n = int(round(duration * sr))
    n_frames = int(round(duration * frame_rate))

    if cls.kernel == "ticks":
        audio, spans = _tick_audio(cls, rng, n, sr)
        env = _envelope_from_spans(spans, n_frames, frame_rate)
    elif cls.kernel == "impacts":
        audio, spans = _impact_audio(cls, rng, n, sr)
        env = _envelope_from_spans(spans, n_frames, frame_rate)
    else:
        audio, level = _amnoise_audio(cls, rng, n, sr)
        centers = (np.arange(n_frames) + 0.5) / frame_rate
        env = np.clip(level[np.minimum((centers * sr).astype(int), n - 1)], 0, 1)

    peak = np.max(np.abs(audio))
    if peak > 0:
        audio = audio * (0.7 / max(peak, 0.7 / 0.999))
    clip = spectro.AudioClip(audio, sr)

    if class_onehot is None:
        class_onehot = np.zeros(3)
    denv = np.diff(env, prepend=env[:1])
    noise = 0.05 * rng.standard_normal((n_frames, 3))
    feats = np.column_stack(
        [env, denv, np.tile(class_onehot, (n_frames, 1)), noise]
    )
    features = FrameFeatureSequence(feats, frame_rate=frame_rate, source="synthetic")
    return clip, features, EventEnvelope(env)


def energy_envelope(samples: np.ndarray, sr: int, frame_rate=FRAME_RATE):
    """Per-video-frame RMS of an audio signal."""
    hop = sr / frame_rate
    n_frames = int(np.floor(samples.size / hop))
    out = np.empty(n_frames)
    for f in range(n_frames):
        seg = samples[int(f * hop) : int((f + 1) * hop)]
        out[f] = np.sqrt(np.mean(seg**2)) if seg.size else 0.0
    return out


def write_wav(path, clip: spectro.AudioClip):
    pcm = np.clip(clip.samples, -1, 1)
    wavfile.write(path, clip.sample_rate, (pcm * 32767).astype(np.int16))


def read_wav(path) -> spectro.AudioClip:
    """Load PCM16/PCM32/float WAV; stereo is downmixed by averaging."""
    sr, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128) / 128.0
    return spectro.AudioClip.normalized(np.asarray(data, dtype=np.float64), sr)


@dataclass
class ManifestRecord:
    clip_id: str
    wav: str
    features: str
    envelope: str
    class_id: int
    split: str


@dataclass
class DatasetManifest:
    root: str
    profile: str
    sample_rate: int
    clip_seconds: float
    frame_rate: int
    classes: list
    logmag_min: float
    logmag_max: float
    records: list = field(default_factory=list)

    @property
    def scale(self):
        return (self.logmag_min, self.logmag_max)

    def split_records(self, split):
        return [r for r in self.records if r.split == split]

    def to_dict(self):
        return {
            "profile": self.profile,
            "sample_rate": self.sample_rate,
            "clip_seconds": self.clip_seconds,
            "frame_rate": self.frame_rate,
            "classes": self.classes,
            "logmag_min": self.logmag_min,
            "logmag_max": self.logmag_max,
            "records": [vars(r) for r in self.records],
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        records = [ManifestRecord(**r) for r in raw.pop("records")]
        m = cls(root=os.path.dirname(os.path.abspath(path)), records=records, **raw)
        seen = set()
        for r in m.records:
            if r.clip_id in seen:
                raise DataError(f"duplicate clip id {r.clip_id}")
            seen.add(r.clip_id)
            if r.split not in ("train", "test"):
                raise DataError(f"{r.clip_id}: bad split '{r.split}'")
        return m


def build_corpus(classes, n_per_class, seed, out_dir, profile="desk",
                 train_fraction=0.8):
    """Write WAV + feature/envelope tensors + manifest with an 80/20 split.

    n_per_class may be an int or a per-class list (imbalanced corpora).
    """
    prof = spectro.PROFILES[profile]
    sr = prof.stft.sample_rate
    os.makedirs(os.path.join(out_dir, "wav"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "feat"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "env"), exist_ok=True)
    counts = (
        [n_per_class] * len(classes) if isinstance(n_per_class, int) else list(n_per_class)
    )

    records = []
    lo, hi = np.inf, -np.inf
    for class_id, (cls, count) in enumerate(zip(classes, counts)):
        onehot = np.eye(len(classes))[class_id]
        n_train = int(round(count * train_fraction))
        for i in range(count):
            clip_id = f"{cls.name}_{i:04d}"
            clip, feats, env = synth_clip(
                cls, seed=seed * 100003 + class_id * 1009 + i,
                duration=prof.clip_seconds, sr=sr, class_onehot=onehot,
            )
            wav_rel = f"wav/{clip_id}.wav"
            feat_rel = f"feat/{clip_id}.fgt1"
            env_rel = f"env/{clip_id}.fgt1"
            write_wav(os.path.join(out_dir, wav_rel), clip)
            tensorio.write_tensor(os.path.join(out_dir, feat_rel), feats.features)
            tensorio.write_tensor(os.path.join(out_dir, env_rel), env.values)
            spec = spectro.stft(clip, prof.stft)
            logmag = np.log(spec.magnitude + spectro.LOG_FLOOR)
            lo = min(lo, float(logmag.min()))
            hi = max(hi, float(logmag.max()))
            records.append(
                ManifestRecord(
                    clip_id=clip_id, wav=wav_rel, features=feat_rel,
                    envelope=env_rel, class_id=class_id,
                    split="train" if i < n_train else "test",
                )
            )

    manifest = DatasetManifest(
        root=os.path.abspath(out_dir),
        profile=profile,
        sample_rate=sr,
        clip_seconds=prof.clip_seconds,
        frame_rate=FRAME_RATE,
        classes=[c.name for c in classes],
        logmag_min=lo - 1e-9,
        logmag_max=hi + 1e-9,
        records=records,
    )
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest


@dataclass
class IngestedClip:
    clip_id: str
    class_id: int
    split: str
    clip: spectro.AudioClip
    packed: spectro.PackedSpectrogram
    features: FrameFeatureSequence
    envelope: np.ndarray


def ingest(manifest, profile=None):
    """Lazily yield validated training examples from a manifest."""
    if isinstance(manifest, str):
        manifest = DatasetManifest.load(manifest)
    prof = spectro.PROFILES[profile or manifest.profile]
    for rec in manifest.records:
        try:
            clip = read_wav(os.path.join(manifest.root, rec.wav))
            feats = tensorio.read_tensor(os.path.join(manifest.root, rec.features))
            env = tensorio.read_tensor(os.path.join(manifest.root, rec.envelope))
        except (OSError, DataError) as exc:
            raise DataError(f"record '{rec.clip_id}': {exc}") from exc
        spec = spectro.stft(clip, prof.stft)
        packed = spectro.pack(spec, prof.size, scale=manifest.scale)
        yield IngestedClip(
            clip_id=rec.clip_id,
            class_id=rec.class_id,
            split=rec.split,
            clip=clip,
            packed=packed,
            features=FrameFeatureSequence(
                feats, frame_rate=manifest.frame_rate, source="fixture"
            ),
            envelope=env,
        )
