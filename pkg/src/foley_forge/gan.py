"""Visually guided class-conditional adversarial spectrogram synthesis.

Generator: the latent vector is split into per-stage chunks (skip wiring);
every stage receives [z chunk, class embedding, pooled guidance encoding]
through a dense gain/bias modulation after its convolution.  The guidance
encoder sees the action spectrogram plus a fixed time-coordinate channel so
its pooled vector can carry event timing.  Discriminator: strided conv
stack, global pooling, and a class-projection score.  Hinge losses, Adam
with gradient accumulation, orthogonal init/regularization, truncation at
sampling time.
"""

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import spectro
from .nncore import (
    AdamConfig,
    Conv2d,
    ParamTree,
    adam_step,
    load_params,
    merge_grads,
    orthogonal_init,
    save_params,
    stream_rng,
)
from .nncore.errors import ConfigError, NumericsError, ShapeError
from .tensorio import write_tensor

GUIDANCE_LEAVES = (
    "genc.c1.w", "genc.c1.b", "genc.c2.w", "genc.c2.b", "genc.fc.w", "genc.fc.b",
)


@dataclass
class GanConfig:
    image_size: int = 64
    n_classes: int = 3
    z_dim: int = 32
    class_embed_dim: int = 8
    guidance_dim: int = 16
    base_channels: int = 16
    disc_channels: int = 8
    lr_d: float = 2e-4
    lr_g: float = 5e-5
    beta1: float = 0.0
    beta2: float = 0.999
    adam_eps: float = 1e-8
    minibatch: int = 16
    accumulation_steps: int = 2
    steps: int = 600
    checkpoint_every: int = 200
    truncation_threshold: float = 1.0
    ortho_penalty_weight: float = 1e-4
    guidance: bool = True
    seed: int = 0

    def __post_init__(self):
        positive = [
            self.image_size, self.z_dim, self.lr_d, self.lr_g, self.minibatch,
            self.accumulation_steps, self.steps,
        ]
        if any(v <= 0 for v in positive):
            raise ConfigError("GanConfig requires positive sizes, rates, and steps")
        if self.image_size < 16 or self.image_size & (self.image_size - 1):
            raise ConfigError("image_size must be a power of two >= 16")

    @property
    def effective_batch(self):
        return self.minibatch * self.accumulation_steps


# -- losses ---------------------------------------------------------------


def hinge_losses(real_scores, fake_scores):
    """(L_D, L_G): margin losses on discriminator scores."""
    real_scores = np.asarray(real_scores, dtype=np.float64)
    fake_scores = np.asarray(fake_scores, dtype=np.float64)
    if real_scores.size == 0 or fake_scores.size == 0:
        raise ShapeError("hinge loss needs non-empty score batches")
    l_d = np.mean(np.maximum(0.0, 1.0 - real_scores)) + np.mean(
        np.maximum(0.0, 1.0 + fake_scores)
    )
    l_g = -np.mean(fake_scores)
    return float(l_d), float(l_g)


def hinge_d_grads(real_scores, fake_scores):
    """d L_D / d scores for the real and fake batches."""
    d_real = -(real_scores < 1.0).astype(np.float64) / real_scores.size
    d_fake = (fake_scores > -1.0).astype(np.float64) / fake_scores.size
    return d_real, d_fake


def hinge_g_grad(fake_scores):
    return -np.ones_like(fake_scores) / fake_scores.size


# -- latent sampling -------------------------------------------------------


def truncate_latent(rng, dim, threshold=None):
    """Standard-normal z with per-coordinate resampling above the threshold."""
    z = rng.standard_normal(dim)
    if threshold is None or math.isinf(threshold):
        return z
    if threshold < 0.05:
        raise ConfigError("truncation threshold below 0.05 resamples unboundedly")
    bad = np.abs(z) > threshold
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > threshold
    return z


def sample_latents(rng, n, dim, threshold=None):
    return np.stack([truncate_latent(rng, dim, threshold) for _ in range(n)])


# -- orthogonal regularization ---------------------------------------------


def ortho_penalty(params: ParamTree, weight, prefixes=("g.", "d.", "genc.")):
    """BigGAN-style off-diagonal Gram suppression on weight matrices.

    penalty = weight * sum_W ||W^T W * (1-I)||_F^2 over dense/conv weight
    leaves; returns (penalty, grads).
    """
    penalty = 0.0
    grads = {}
    for name in params.names():
        if not name.endswith(".w") or not name.startswith(tuple(prefixes)):
            continue
        w = params[name]
        if w.ndim < 2:
            continue
        mat = w.reshape(-1, w.shape[-1])
        gram = mat.T @ mat
        np.fill_diagonal(gram, 0.0)
        penalty += weight * float(np.sum(gram**2))
        grads[name] = (4.0 * weight) * (mat @ gram).reshape(w.shape)
    return penalty, grads


def zero_guidance(params: ParamTree):
    """Ablation switch: a zeroed encoder makes outputs independent of S_act."""
    for name in GUIDANCE_LEAVES:
        if name in params:
            params.leaves[name][...] = 0.0


# -- generator --------------------------------------------------------------


def _coord_channel(n, h, w):
    ramp = np.linspace(-1.0, 1.0, w)
    return np.broadcast_to(ramp[None, None, :, None], (n, h, w, 1))


class GeneratorNet:
    def __init__(self, cfg: GanConfig):
        self.cfg = cfg
        self.n_up = int(math.log2(cfg.image_size / 8))
        self.chunks = [c.size for c in np.array_split(np.empty(cfg.z_dim), self.n_up + 1)]
        self.channels = [max(8, cfg.base_channels >> (i // 2)) for i in range(self.n_up + 1)]
        cond = cfg.class_embed_dim + cfg.guidance_dim
        self.cond_dims = [cond + c for c in self.chunks]
        self.enc_c1 = Conv2d("genc.c1", 4, 8, stride=2)
        self.enc_c2 = Conv2d("genc.c2", 8, 8, stride=2)
        self.convs = [
            Conv2d(f"g.conv{i}", self.channels[i - 1], self.channels[i])
            for i in range(1, self.n_up + 1)
        ]
        self.out_conv = Conv2d("g.out", self.channels[self.n_up], 3)

    def init(self, seed) -> ParamTree:
        cfg = self.cfg
        params = ParamTree()
        self.enc_c1.build(params, seed)
        self.enc_c2.build(params, seed)
        params.add("genc.fc.w", orthogonal_init(8, cfg.guidance_dim,
                                                stream_rng(seed, "genc.fc.w")))
        params.add("genc.fc.b", np.zeros(cfg.guidance_dim))
        params.add("g.embed", orthogonal_init(cfg.n_classes, cfg.class_embed_dim,
                                              stream_rng(seed, "g.embed")))
        params.add("g.fc0.w", orthogonal_init(self.cond_dims[0], 64 * self.channels[0],
                                              stream_rng(seed, "g.fc0.w")))
        params.add("g.fc0.b", np.zeros(64 * self.channels[0]))
        for i, conv in enumerate(self.convs, start=1):
            conv.build(params, seed)
            c = self.channels[i]
            params.add(f"g.film{i}.w", orthogonal_init(self.cond_dims[i], 2 * c,
                                                       stream_rng(seed, f"g.film{i}.w")))
            params.add(f"g.film{i}.b", np.zeros(2 * c))
        self.out_conv.build(params, seed)
        if not cfg.guidance:
            zero_guidance(params)
        return params

    def encode_guidance(self, params, s_act):
        n, h, w, _ = s_act.shape
        x = np.ascontiguousarray(np.concatenate([s_act, _coord_channel(n, h, w)], axis=3))
        h1, c1 = self.enc_c1.forward(params, x)
        a1 = np.where(h1 >= 0, h1, 0.2 * h1)
        h2, c2 = self.enc_c2.forward(params, a1)
        a2 = np.where(h2 >= 0, h2, 0.2 * h2)
        pooled = a2.mean(axis=(1, 2))
        gvec = pooled @ params["genc.fc.w"] + params["genc.fc.b"]
        return gvec, (c1, h1, c2, h2, a2.shape, pooled)

    def encode_guidance_backward(self, params, cache, dgvec):
        c1, h1, c2, h2, a2_shape, pooled = cache
        grads = {
            "genc.fc.w": pooled.T @ dgvec,
            "genc.fc.b": dgvec.sum(axis=0),
        }
        dpooled = dgvec @ params["genc.fc.w"].T
        n, hh, ww, cc = a2_shape
        da2 = np.broadcast_to(dpooled[:, None, None, :], a2_shape) / (hh * ww)
        dh2 = da2 * np.where(h2 >= 0, 1.0, 0.2)
        da1, g2 = self.enc_c2.backward(params, c2, dh2)
        merge_grads(grads, g2)
        dh1 = da1 * np.where(h1 >= 0, 1.0, 0.2)
        _, g1 = self.enc_c1.backward(params, c1, dh1)
        merge_grads(grads, g1)
        return grads

    def forward(self, params, z, y, s_act, want_cache=False):
        """(params, z, y, S_act) -> spectrogram batch in (-1, 1)."""
        cfg = self.cfg
        z = np.asarray(z, dtype=np.float64)
        y = np.asarray(y)
        if z.ndim != 2 or z.shape[1] != cfg.z_dim:
            raise ShapeError(f"latent batch must be (N, {cfg.z_dim})")
        if s_act.shape[1:] != (cfg.image_size, cfg.image_size, 3):
            raise ShapeError("guidance tensor shape mismatch")
        n = z.shape[0]
        gvec, enc_cache = self.encode_guidance(params, s_act)
        emb = params["g.embed"][y]
        zs = np.split(z, np.cumsum(self.chunks)[:-1], axis=1)
        conds = [np.concatenate([zi, emb, gvec], axis=1) for zi in zs]

        h = conds[0] @ params["g.fc0.w"] + params["g.fc0.b"]
        h = h.reshape(n, 8, 8, self.channels[0])
        stage_caches = []
        for i, conv in enumerate(self.convs, start=1):
            pre_shape = h.shape
            h = h.repeat(2, axis=1).repeat(2, axis=2)
            hc, conv_cache = conv.forward(params, h)
            film = conds[i] @ params[f"g.film{i}.w"] + params[f"g.film{i}.b"]
            c = self.channels[i]
            gamma, beta = film[:, :c], film[:, c:]
            hm = hc * (1 + gamma[:, None, None, :]) + beta[:, None, None, :]
            h = np.where(hm >= 0, hm, 0.2 * hm)
            stage_caches.append((pre_shape, conv_cache, hc, gamma, hm))
        pre_out, out_cache = self.out_conv.forward(params, h)
        out = np.tanh(pre_out)
        if not want_cache:
            return out
        return out, (y, conds, enc_cache, stage_caches, out_cache, out, n)

    def backward(self, params, cache, dout, train_guidance=True):
        """Gradient of a scalar loss through the generator."""
        y, conds, enc_cache, stage_caches, out_cache, out, n = cache
        grads = {}
        dpre = dout * (1 - out * out)
        dh, g_out = self.out_conv.backward(params, out_cache, dpre)
        merge_grads(grads, g_out)
        dconds = [None] * len(conds)
        for i in range(len(self.convs), 0, -1):
            pre_shape, conv_cache, hc, gamma, hm = stage_caches[i - 1]
            dhm = dh * np.where(hm >= 0, 1.0, 0.2)
            dhc = dhm * (1 + gamma[:, None, None, :])
            dgamma = (dhm * hc).sum(axis=(1, 2))
            dbeta = dhm.sum(axis=(1, 2))
            dfilm = np.concatenate([dgamma, dbeta], axis=1)
            merge_grads(grads, {
                f"g.film{i}.w": conds[i].T @ dfilm,
                f"g.film{i}.b": dfilm.sum(axis=0),
            })
            dconds[i] = dfilm @ params[f"g.film{i}.w"].T
            dup, g_conv = self.convs[i - 1].backward(params, conv_cache, dhc)
            merge_grads(grads, g_conv)
            nb, hh, ww, cc = pre_shape
            dh = dup.reshape(nb, hh, 2, ww, 2, cc).sum(axis=(2, 4))
        dflat = dh.reshape(n, -1)
        merge_grads(grads, {
            "g.fc0.w": conds[0].T @ dflat,
            "g.fc0.b": dflat.sum(axis=0),
        })
        dconds[0] = dflat @ params["g.fc0.w"].T

        ed = self.cfg.class_embed_dim
        demb_total = np.zeros_like(params["g.embed"])
        dgvec = np.zeros((n, self.cfg.guidance_dim))
        for dc, chunk in zip(dconds, self.chunks):
            np.add.at(demb_total, y, dc[:, chunk : chunk + ed])
            dgvec += dc[:, chunk + ed :]
        grads["g.embed"] = demb_total
        if train_guidance:
            merge_grads(grads, self.encode_guidance_backward(params, enc_cache, dgvec))
        else:
            for name in GUIDANCE_LEAVES:
                grads[name] = np.zeros_like(params[name])
        return grads


# -- discriminator -----------------------------------------------------------


class DiscriminatorNet:
    def __init__(self, cfg: GanConfig):
        self.cfg = cfg
        n_down = int(math.log2(cfg.image_size / 4))
        cd = cfg.disc_channels
        chans = [3] + [min(cd * (2 ** ((i + 1) // 2)), 8 * cd) for i in range(n_down)]
        self.convs = [
            Conv2d(f"d.conv{i}", chans[i], chans[i + 1], stride=2)
            for i in range(n_down)
        ]
        self.feat_dim = chans[-1]

    def init(self, seed) -> ParamTree:
        params = ParamTree()
        for conv in self.convs:
            conv.build(params, seed)
        params.add("d.lin.w", orthogonal_init(self.feat_dim, 1,
                                              stream_rng(seed, "d.lin.w")))
        params.add("d.lin.b", np.zeros(1))
        params.add("d.embed", orthogonal_init(self.cfg.n_classes, self.feat_dim,
                                              stream_rng(seed, "d.embed")))
        return params

    def forward(self, params, s, y, want_cache=False):
        """Scores (N,) = linear(feature) + <class embedding, feature>."""
        if s.shape[1:] != (self.cfg.image_size, self.cfg.image_size, 3):
            raise ShapeError("discriminator input shape mismatch")
        h = np.ascontiguousarray(s, dtype=np.float64)
        caches = []
        for conv in self.convs:
            hc, cache = conv.forward(params, h)
            h = np.where(hc >= 0, hc, 0.2 * hc)
            caches.append((cache, hc))
        feat = h.mean(axis=(1, 2))
        emb = params["d.embed"][y]
        score = (feat @ params["d.lin.w"])[:, 0] + params["d.lin.b"][0] + np.sum(
            emb * feat, axis=1
        )
        if not want_cache:
            return score
        return score, (y, caches, h.shape, feat)

    def backward(self, params, cache, dscore, want_input_grad=False):
        y, caches, h_shape, feat = cache
        grads = {
            "d.lin.w": feat.T @ dscore[:, None],
            "d.lin.b": np.array([dscore.sum()]),
            "d.embed": np.zeros_like(params["d.embed"]),
        }
        np.add.at(grads["d.embed"], y, dscore[:, None] * feat)
        dfeat = dscore[:, None] * (params["d.lin.w"][:, 0] + params["d.embed"][y])
        n, hh, ww, cc = h_shape
        dh = np.broadcast_to(dfeat[:, None, None, :], h_shape) / (hh * ww)
        for conv, (conv_cache, hc) in zip(reversed(self.convs), reversed(caches)):
            dhc = dh * np.where(hc >= 0, 1.0, 0.2)
            dh, g = conv.backward(params, conv_cache, dhc)
            merge_grads(grads, g)
        if want_input_grad:
            return grads, dh
        return grads


# -- training ----------------------------------------------------------------


@dataclass
class GanState:
    """Everything train() mutates: nets, params, RNG streams, step count."""

    cfg: GanConfig
    gen: GeneratorNet
    disc: DiscriminatorNet
    gparams: ParamTree
    dparams: ParamTree
    rng_z: np.random.Generator
    rng_data: np.random.Generator
    step: int = 0

    @classmethod
    def fresh(cls, cfg: GanConfig):
        gen = GeneratorNet(cfg)
        disc = DiscriminatorNet(cfg)
        return cls(
            cfg=cfg,
            gen=gen,
            disc=disc,
            gparams=gen.init(cfg.seed),
            dparams=disc.init(cfg.seed + 1),
            rng_z=stream_rng(cfg.seed, "gan.z"),
            rng_data=stream_rng(cfg.seed, "gan.data"),
        )

    def rng_states(self):
        return {
            "z": self.rng_z.bit_generator.state,
            "data": self.rng_data.bit_generator.state,
        }

    def restore_rng(self, states):
        self.rng_z.bit_generator.state = states["z"]
        self.rng_data.bit_generator.state = states["data"]


def _check_finite(value, label, out_dir, tensors):
    if np.isfinite(value):
        return
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for name, arr in tensors.items():
            write_tensor(os.path.join(out_dir, f"nan_dump_{name}.fgt1"), arr)
    raise NumericsError(f"non-finite {label}; offending micro-batch serialized")


def train_step(state: GanState, batch, out_dir=None):
    """One discriminator update then one generator update.

    batch: (s_real, y, s_act) arrays of effective-batch length; each update
    accumulates mean gradients over `accumulation_steps` micro-batches
    before its single Adam step.
    """
    cfg = state.cfg
    s_real, y_all, s_act = batch
    mb, k = cfg.minibatch, cfg.accumulation_steps
    if s_real.shape[0] != mb * k:
        raise ShapeError(f"batch must hold {mb * k} examples")
    adam_d = AdamConfig(cfg.lr_d, cfg.beta1, cfg.beta2, cfg.adam_eps)
    adam_g = AdamConfig(cfg.lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps)

    d_grads = {}
    loss_d_total = 0.0
    for j in range(k):
        sl = slice(j * mb, (j + 1) * mb)
        z = state.rng_z.standard_normal((mb, cfg.z_dim))
        fake = state.gen.forward(state.gparams, z, y_all[sl], s_act[sl])
        r_score, r_cache = state.disc.forward(state.dparams, s_real[sl], y_all[sl], True)
        f_score, f_cache = state.disc.forward(state.dparams, fake, y_all[sl], True)
        loss_d, _ = hinge_losses(r_score, f_score)
        _check_finite(loss_d, "discriminator loss", out_dir,
                      {"s_real": s_real[sl], "fake": fake})
        loss_d_total += loss_d / k
        d_real, d_fake = hinge_d_grads(r_score, f_score)
        merge_grads(d_grads, state.disc.backward(state.dparams, r_cache, d_real), 1 / k)
        merge_grads(d_grads, state.disc.backward(state.dparams, f_cache, d_fake), 1 / k)
    if cfg.ortho_penalty_weight > 0:
        _, og = ortho_penalty(state.dparams, cfg.ortho_penalty_weight, ("d.",))
        merge_grads(d_grads, og)
    adam_step(state.dparams, d_grads, adam_d)

    g_grads = {}
    loss_g_total = 0.0
    for j in range(k):
        sl = slice(j * mb, (j + 1) * mb)
        z = state.rng_z.standard_normal((mb, cfg.z_dim))
        fake, g_cache = state.gen.forward(
            state.gparams, z, y_all[sl], s_act[sl], want_cache=True)
        f_score, f_cache = state.disc.forward(state.dparams, fake, y_all[sl], True)
        _, loss_g = hinge_losses(np.ones(1), f_score)
        _check_finite(loss_g, "generator loss", out_dir, {"fake": fake})
        loss_g_total += loss_g / k
        _, dfake = state.disc.backward(
            state.dparams, f_cache, hinge_g_grad(f_score), want_input_grad=True)
        merge_grads(
            g_grads,
            state.gen.backward(state.gparams, g_cache, dfake,
                               train_guidance=cfg.guidance),
            1 / k,
        )
    if cfg.ortho_penalty_weight > 0:
        prefixes = ("g.", "genc.") if cfg.guidance else ("g.",)
        _, og = ortho_penalty(state.gparams, cfg.ortho_penalty_weight, prefixes)
        merge_grads(g_grads, og)
        for name in GUIDANCE_LEAVES:
            g_grads.setdefault(name, np.zeros_like(state.gparams[name]))
    adam_step(state.gparams, g_grads, adam_g)

    state.step += 1
    return {"step": state.step, "loss_d": loss_d_total, "loss_g": loss_g_total}


def _save_checkpoint(state: GanState, out_dir, history, scale):
    state.gparams.quantize_storage()
    state.dparams.quantize_storage()
    save_params(os.path.join(out_dir, "gen_latest.fgck"), state.gparams)
    save_params(os.path.join(out_dir, "disc_latest.fgck"), state.dparams)
    meta = {
        "step": state.step,
        "rng": state.rng_states(),
        "config": asdict(state.cfg),
        "logmag_scale": list(scale),
    }
    with open(os.path.join(out_dir, "meta_latest.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True)
    with open(os.path.join(out_dir, "history.json"), "w") as fh:
        json.dump(history, fh, sort_keys=True)


def load_gan(out_dir):
    """(cfg, GanState, history, scale) from the latest checkpoint."""
    with open(os.path.join(out_dir, "meta_latest.json")) as fh:
        meta = json.load(fh)
    cfg = GanConfig(**meta["config"])
    state = GanState.fresh(cfg)
    state.gparams = load_params(os.path.join(out_dir, "gen_latest.fgck"))
    state.dparams = load_params(os.path.join(out_dir, "disc_latest.fgck"))
    state.restore_rng(meta["rng"])
    state.step = meta["step"]
    history_path = os.path.join(out_dir, "history.json")
    history = []
    if os.path.exists(history_path):
        with open(history_path) as fh:
            history = json.load(fh)
    return state, history, tuple(meta["logmag_scale"])


def train(data, cfg: GanConfig, out_dir=None, resume=False, log=None):
    """Run the adversarial loop on (s_real, y, s_act) arrays.

    data: dict with "s_real" (n,H,W,3), "y" (n,), "s_act" (n,H,W,3), and
    "scale" = (logmag_min, logmag_max).  Checkpoints land in out_dir every
    checkpoint_every steps and at the end; resume=True continues from the
    latest checkpoint and reproduces the uninterrupted run exactly.
    """
    n = data["s_real"].shape[0]
    if n == 0:
        raise ConfigError("empty training dataset")
    history = []
    if resume:
        if not out_dir:
            raise ConfigError("resume requires out_dir")
        state, history, _ = load_gan(out_dir)
    else:
        state = GanState.fresh(cfg)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    while state.step < cfg.steps:
        idx = state.rng_data.integers(0, n, size=cfg.effective_batch)
        batch = (data["s_real"][idx], data["y"][idx], data["s_act"][idx])
        record = train_step(state, batch, out_dir)
        history.append(record)
        if log and state.step % 50 == 0:
            log(stage="gan", **record)
        if out_dir and (state.step % cfg.checkpoint_every == 0
                        or state.step == cfg.steps):
            _save_checkpoint(state, out_dir, history, data["scale"])
    if out_dir:
        _save_checkpoint(state, out_dir, history, data["scale"])
    return state, history


# -- sampling ----------------------------------------------------------------


def generate(gen: GeneratorNet, gparams, z, y, s_act, scale) -> spectro.PackedSpectrogram:
    """Deterministic single-sample synthesis -> PackedSpectrogram."""
    out = gen.forward(gparams, z[None, :], np.array([y]), s_act[None, :])
    return spectro.PackedSpectrogram(out[0], scale[0], scale[1])


def generated_audio(packed, stft_cfg, taps=None) -> spectro.AudioClip:
    """unpack -> istft -> post filter chain for one generated spectrogram."""
    spec = spectro.unpack(packed)
    clip = spectro.istft(spec, stft_cfg)
    return spectro.postprocess_filter(clip, taps)
