"""Quantitative evaluation: IS, FID, NDB, retrieval accuracy, rainbowgrams."""

import warnings
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from . import spectro
from .nncore.errors import DataError, ShapeError

EPS_PROB = 1e-12


# -- inception score ---------------------------------------------------------


def is_from_probs(probs, splits=1):
    """exp of the mean KL between per-sample conditionals and the marginal."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 2 * splits:
        raise DataError("need at least 2 samples per split")
    scores = []
    for chunk in np.array_split(probs, splits):
        p = np.clip(chunk, EPS_PROB, 1.0)
        marginal = np.clip(p.mean(axis=0), EPS_PROB, 1.0)
        kl = np.sum(p * (np.log(p) - np.log(marginal)), axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores))


def inception_score(samples, clf, splits=1, chunk=64):
    """IS of packed-spectrogram samples under the retrieval classifier."""
    probs = np.concatenate(
        [clf.predict(samples[i : i + chunk]) for i in range(0, len(samples), chunk)]
    )
    return is_from_probs(probs, splits)


# -- Frechet distance ---------------------------------------------------------


def _sym_sqrt(mat):
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid_from_moments(mu_r, sigma_r, mu_g, sigma_g, warn_tol=-1e-10):
    """||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}), clamped >= 0.

    The cross root is computed as sqrt(R S_g R) with R = S_r^{1/2} via
    symmetric eigendecompositions (trace-equivalent, numerically stable).
    """
    mu_r = np.asarray(mu_r, dtype=np.float64).reshape(-1)
    mu_g = np.asarray(mu_g, dtype=np.float64).reshape(-1)
    sigma_r = np.atleast_2d(np.asarray(sigma_r, dtype=np.float64))
    sigma_g = np.atleast_2d(np.asarray(sigma_g, dtype=np.float64))
    try:
        root_r = _sym_sqrt(sigma_r)
        inner = root_r @ sigma_g @ root_r
        vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    except np.linalg.LinAlgError as exc:
        raise ShapeError(
            f"covariance eigendecomposition failed (cond_r="
            f"{np.linalg.cond(sigma_r):.3g}, cond_g={np.linalg.cond(sigma_g):.3g})"
        ) from exc
    if vals.min() < warn_tol:
        warnings.warn(f"cross-covariance eigenvalue {vals.min():.3g} clamped to 0")
    vals = np.clip(vals, 0.0, None)
    trace_term = np.trace(sigma_r) + np.trace(sigma_g) - 2 * np.sum(np.sqrt(vals))
    diff = mu_r - mu_g
    return float(max(diff @ diff + trace_term, 0.0))


def fid(real_feats, gen_feats):
    """Frechet distance between Gaussian fits of two feature sets."""
    real_feats = np.asarray(real_feats, dtype=np.float64)
    gen_feats = np.asarray(gen_feats, dtype=np.float64)
    dim = real_feats.shape[1]
    for name, f in (("real", real_feats), ("generated", gen_feats)):
        if f.shape[0] < dim + 1:
            raise DataError(
                f"{name} set has {f.shape[0]} samples; need > {dim} for a "
                f"full-rank covariance"
            )
    return fid_from_moments(
        real_feats.mean(axis=0), np.cov(real_feats, rowvar=False),
        gen_feats.mean(axis=0), np.cov(gen_feats, rowvar=False),
    )


# -- number of statistically-different bins -----------------------------------


def kmeans(data, k, seed=0, iters=100):
    """Deterministic k-means++ (Lloyd) on row vectors."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6B6D]))
    n = data.shape[0]
    if k > n:
        raise DataError(f"k={k} exceeds {n} samples")
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i:] = data[rng.integers(n, size=k - i)]
            break
        centers[i] = data[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((data - centers[i]) ** 2, axis=1))
    assign = np.zeros(n, dtype=int)
    for _ in range(iters):
        dists = (
            np.sum(data**2, axis=1)[:, None]
            - 2 * data @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        new_assign = np.argmin(dists, axis=1)
        for c in range(k):
            mask = new_assign == c
            if mask.any():
                centers[c] = data[mask].mean(axis=0)
            else:  # re-seed empty cells on the farthest point
                far = np.argmax(np.min(dists, axis=1))
                centers[c] = data[far]
                new_assign[far] = c
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return centers, assign


def _assign_to_centers(data, centers):
    dists = (
        np.sum(data**2, axis=1)[:, None]
        - 2 * data @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )
    return np.argmin(dists, axis=1)


@dataclass
class NdbResult:
    count: int
    k: int
    alpha: float
    z_scores: list
    train_fractions: list
    gen_fractions: list

    @property
    def ratio(self):
        return self.count / self.k


def ndb(train_samples, gen_samples, k=10, alpha=0.05, seed=0):
    """Cells (k-means over train) whose occupancy differs significantly.

    Assigns generated samples to the train cells and runs a pooled
    two-proportion z-test per cell at level alpha.
    """
    train = np.asarray(train_samples, dtype=np.float64).reshape(len(train_samples), -1)
    gen = np.asarray(gen_samples, dtype=np.float64).reshape(len(gen_samples), -1)
    if gen.shape[0] == 0:
        raise DataError("empty generated set")
    if k > train.shape[0]:
        raise DataError("more cells than train samples")
    centers, train_assign = kmeans(train, k, seed=seed)
    gen_assign = _assign_to_centers(gen, centers)
    n_t, n_g = train.shape[0], gen.shape[0]
    z_crit = NormalDist().inv_cdf(1 - alpha / 2)
    z_scores, t_fracs, g_fracs = [], [], []
    count = 0
    for c in range(k):
        p_t = float(np.mean(train_assign == c))
        p_g = float(np.mean(gen_assign == c))
        pooled = (p_t * n_t + p_g * n_g) / (n_t + n_g)
        denom = pooled * (1 - pooled) * (1 / n_t + 1 / n_g)
        z = 0.0 if denom <= 0 else (p_t - p_g) / np.sqrt(denom)
        z_scores.append(float(z))
        t_fracs.append(p_t)
        g_fracs.append(p_g)
        if abs(z) > z_crit:
            count += 1
    return NdbResult(count, k, alpha, z_scores, t_fracs, g_fracs)


# -- retrieval accuracy --------------------------------------------------------


def retrieval_accuracy(samples, intended_classes, clf, chunk=64):
    """Macro-averaged percent of samples retrieved as their intended class."""
    intended = np.asarray(intended_classes)
    preds = np.concatenate(
        [
            np.argmax(clf.predict(samples[i : i + chunk]), axis=1)
            for i in range(0, len(samples), chunk)
        ]
    )
    per_class = []
    for c in np.unique(intended):
        mask = intended == c
        per_class.append(float(np.mean(preds[mask] == c)))
    return 100.0 * float(np.mean(per_class))


# -- rainbowgram ----------------------------------------------------------------


@dataclass
class Rainbowgram:
    brightness: np.ndarray  # frames x bins in [0, 1]
    hue: np.ndarray  # frames x bins in [0, 1], instantaneous frequency / Nyquist
    if_hz: np.ndarray


def instantaneous_frequency(phase, cfg: spectro.StftConfig):
    """Per-bin IF in Hz from frame-to-frame phase advances.

    The expected advance of each bin center is removed before taking the
    principal value, so IF is unbiased around the bin frequency.
    """
    frames, bins = phase.shape
    n = cfg.frame_size
    expected = 2 * np.pi * np.arange(bins) * cfg.hop / n
    diffs = np.diff(phase, axis=0) - expected[None, :]
    dev = np.angle(np.exp(1j * diffs))
    adv = dev + expected[None, :]
    if_hz = adv * cfg.sample_rate / (2 * np.pi * cfg.hop)
    return np.vstack([if_hz[:1], if_hz])


def rainbowgram(clip: spectro.AudioClip, cfg: spectro.StftConfig) -> Rainbowgram:
    spec = spectro.stft(clip, cfg)
    logmag = np.log(spec.magnitude + spectro.LOG_FLOOR)
    floor = np.log(spectro.LOG_FLOOR)
    top = logmag.max()
    if top <= floor + 1e-9:
        brightness = np.zeros_like(logmag)
    else:
        brightness = np.clip((logmag - floor) / (top - floor), 0.0, 1.0)
    if_hz = instantaneous_frequency(spec.phase, cfg)
    hue = np.clip(if_hz / (cfg.sample_rate / 2), 0.0, 1.0)
    return Rainbowgram(brightness, hue, if_hz)


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def rainbowgram_image(rb: Rainbowgram) -> np.ndarray:
    """(bins, frames, 3) uint8 pixels; low frequencies at the bottom row."""
    hue = rb.hue.T[::-1] * 0.8  # keep hue off the red wrap-around
    val = rb.brightness.T[::-1]
    rgb = _hsv_to_rgb(hue, np.ones_like(hue), val)
    return (np.clip(rgb, 0, 1) * 255).astype(np.uint8)


def write_ppm(path, pixels):
    """Binary PPM (P6) writer for (H, W, 3) uint8 arrays."""
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(pixels.tobytes())


def rainbowgram_panel(path, clips, cfg, gap=4):
    """Side-by-side rainbowgrams (e.g. real vs generated) into one PPM."""
    images = [rainbowgram_image(rainbowgram(c, cfg)) for c in clips]
    height = max(im.shape[0] for im in images)
    parts = []
    for im in images:
        if im.shape[0] < height:
            im = np.pad(im, ((0, height - im.shape[0]), (0, 0), (0, 0)))
        parts.append(im)
        parts.append(np.full((height, gap, 3), 255, dtype=np.uint8))
    panel = np.concatenate(parts[:-1], axis=1)
    write_ppm(path, panel)
    return panel


@dataclass
class MetricReport:
    is_score: float
    fid: float
    ndb_count: int
    ndb_k: int
    retrieval_accuracy: float
    n_real: int
    n_generated: int
    config: dict = field(default_factory=dict)
    encoding_ndb: dict = field(default_factory=dict)
    sync_rate: float = float("nan")

    def __post_init__(self):
        if self.is_score < 1.0 - 1e-9:
            raise DataError("inception score below 1")
        if self.fid < 0:
            raise DataError("negative FID")
        if not 0 <= self.ndb_count <= self.ndb_k:
            raise DataError("NDB count out of range")

    def to_dict(self):
        return {
            "is_score": self.is_score,
            "fid": self.fid,
            "ndb": {"count": self.ndb_count, "k": self.ndb_k,
                    "ratio": self.ndb_count / self.ndb_k},
            "retrieval_accuracy": self.retrieval_accuracy,
            "n_real": self.n_real,
            "n_generated": self.n_generated,
            "sync_rate": self.sync_rate,
            "encoding_ndb": self.encoding_ndb,
            "config": self.config,
        }
