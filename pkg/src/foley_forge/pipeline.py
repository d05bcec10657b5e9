"""End-to-end orchestration: corpus -> relation nets -> GAN -> audio -> report.

Stage order mirrors the generation recipe: per-frame features feed the
class and trace heads, traces become guidance spectrograms, the GAN trains
on (real spectrogram, class, guidance) triples, generated spectrograms are
inverted to audio, and the metric suite scores real against generated.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf_mod
from . import datasynth, gan, metrics, relnet, spectro
from .config import RunConfig
from .nncore import stream_rng
from .nncore.errors import DataError
from .tensorio import write_tensor


def _noop_log(**kw):
    pass


@dataclass
class CorpusData:
    manifest: datasynth.DatasetManifest
    profile: spectro.CodecProfile
    clip_ids: list
    clips: list
    packed: np.ndarray  # n x H x W x 3
    labels: np.ndarray
    features: list
    envelopes: list
    splits: np.ndarray  # bool: True = train

    def subset(self, train: bool):
        mask = self.splits == train
        return mask


def load_corpus(manifest_path, profile=None) -> CorpusData:
    manifest = datasynth.DatasetManifest.load(manifest_path)
    prof = spectro.PROFILES[profile or manifest.profile]
    clip_ids, clips, packed, labels, feats, envs, splits = [], [], [], [], [], [], []
    for item in datasynth.ingest(manifest, prof.name):
        clip_ids.append(item.clip_id)
        clips.append(item.clip)
        packed.append(item.packed.values)
        labels.append(item.class_id)
        feats.append(item.features)
        envs.append(item.envelope)
        splits.append(item.split == "train")
    if not clips:
        raise DataError("manifest holds no records")
    return CorpusData(
        manifest=manifest,
        profile=prof,
        clip_ids=clip_ids,
        clips=clips,
        packed=np.stack(packed),
        labels=np.asarray(labels),
        features=feats,
        envelopes=envs,
        splits=np.asarray(splits),
    )


def ensure_corpus(cfg: RunConfig, log=_noop_log) -> CorpusData:
    manifest_path = os.path.join(cfg.corpus.path, "manifest.json")
    if not os.path.exists(manifest_path):
        log(stage="corpus", event="build", path=cfg.corpus.path)
        classes = datasynth.default_classes()[: cfg.corpus.classes]
        datasynth.build_corpus(
            classes, cfg.corpus.per_class, cfg.seed, cfg.corpus.path,
            profile=cfg.profile,
        )
    return load_corpus(manifest_path, cfg.profile)


@dataclass
class RelnetStage:
    result: relnet.RelnetTrainResult
    traces: list
    s_act: np.ndarray
    predicted: np.ndarray
    train_accuracy: float
    test_accuracy: float


def run_relnet_stage(corpus: CorpusData, cfg: RunConfig, log=_noop_log) -> RelnetStage:
    train_mask = corpus.splits
    examples = [
        (corpus.features[i], int(corpus.labels[i]), corpus.envelopes[i])
        for i in range(len(corpus.clips))
        if train_mask[i]
    ]
    rcfg = dataclasses.replace(cfg.relnet, seed=cfg.seed)
    result = relnet.train_relnet(examples, len(corpus.manifest.classes), rcfg)
    size = corpus.profile.size
    traces, s_act, predicted = [], [], []
    for i in range(len(corpus.clips)):
        trace = result.net.action_trace(result.params, corpus.features[i])
        traces.append(trace)
        s_act.append(relnet.action_spectrogram(trace, (size, size)))
        scores = result.net.classify(result.params, corpus.features[i],
                                     tuple_seed=cfg.seed)
        predicted.append(scores.prediction)
    predicted = np.asarray(predicted)
    hits_train = np.mean(predicted[train_mask] == corpus.labels[train_mask])
    hits_test = np.mean(predicted[~train_mask] == corpus.labels[~train_mask])
    log(stage="relnet", train_accuracy=float(hits_train),
        test_accuracy=float(hits_test))
    return RelnetStage(
        result=result,
        traces=traces,
        s_act=np.stack(s_act),
        predicted=predicted,
        train_accuracy=float(hits_train),
        test_accuracy=float(hits_test),
    )


def run_classifier_stage(corpus: CorpusData, cfg: RunConfig, log=_noop_log):
    mask = corpus.splits
    ccfg = clf_mod.ClassifierConfig(
        image_size=corpus.profile.size,
        n_classes=len(corpus.manifest.classes),
        feature_dim=cfg.classifier.feature_dim,
        steps=cfg.classifier.steps,
        batch=cfg.classifier.batch,
        learning_rate=cfg.classifier.learning_rate,
        seed=cfg.seed,
    )
    trained = clf_mod.train_classifier(
        corpus.packed[mask], corpus.labels[mask], ccfg,
        test_images=corpus.packed[~mask], test_labels=corpus.labels[~mask],
        log=log,
    )
    log(stage="classifier", test_accuracy=trained.test_accuracy)
    return trained


def run_gan_stage(corpus: CorpusData, s_act, cfg: RunConfig, out_dir,
                  guidance=None, log=_noop_log):
    mask = corpus.splits
    gcfg_kwargs = {**cfg.gan.__dict__}
    gcfg_kwargs.update(
        image_size=corpus.profile.size,
        n_classes=len(corpus.manifest.classes),
        seed=cfg.seed,
        guidance=cfg.guidance if guidance is None else guidance,
    )
    gcfg = gan.GanConfig(**gcfg_kwargs)
    data = {
        "s_real": corpus.packed[mask],
        "y": corpus.labels[mask],
        "s_act": s_act[mask],
        "scale": corpus.manifest.scale,
    }
    state, history = gan.train(data, gcfg, out_dir=out_dir, log=log)
    return state, history


@dataclass
class GenerationResult:
    packed: np.ndarray
    audio: list
    intended: np.ndarray
    clip_ids: list
    sync_lags: dict = field(default_factory=dict)


def run_generation(corpus: CorpusData, stage: RelnetStage, state: gan.GanState,
                   cfg: RunConfig, out_dir=None, log=_noop_log) -> GenerationResult:
    """Synthesize one clip per test record, conditioned on the predicted
    class and the clip's guidance spectrogram."""
    test_idx = np.flatnonzero(~corpus.splits)
    rng = stream_rng(cfg.seed, "gan.eval.z")
    scale = corpus.manifest.scale
    stft_cfg = corpus.profile.stft
    packed_all, audio_all, intended, ids = [], [], [], []
    sync_lags = {name: [] for name in corpus.manifest.classes}
    wav_dir = os.path.join(out_dir, "gen") if out_dir else None
    if wav_dir:
        os.makedirs(wav_dir, exist_ok=True)
    for i in test_idx:
        z = gan.truncate_latent(rng, state.cfg.z_dim, state.cfg.truncation_threshold)
        y_cond = int(stage.predicted[i])
        packed = gan.generate(state.gen, state.gparams, z, y_cond,
                              stage.s_act[i], scale)
        clip = gan.generated_audio(packed, stft_cfg)
        packed_all.append(packed.values)
        audio_all.append(clip)
        intended.append(y_cond)
        ids.append(corpus.clip_ids[i])
        lag = sync_lag_frames(clip, stage.traces[i], corpus.manifest.frame_rate)
        sync_lags[corpus.manifest.classes[corpus.labels[i]]].append(lag)
        if wav_dir:
            datasynth.write_wav(
                os.path.join(wav_dir, f"{corpus.clip_ids[i]}.wav"), clip)
            write_tensor(
                os.path.join(wav_dir, f"{corpus.clip_ids[i]}.fgt1"), packed.values)
    log(stage="generate", count=len(ids))
    return GenerationResult(
        packed=np.stack(packed_all),
        audio=audio_all,
        intended=np.asarray(intended),
        clip_ids=ids,
        sync_lags=sync_lags,
    )


def sync_lag_frames(clip: spectro.AudioClip, trace: relnet.ActionTrace,
                    frame_rate) -> int:
    """Cross-correlation peak lag (video frames) between the generated
    audio's energy envelope and the conditioning trace."""
    env = datasynth.energy_envelope(clip.samples, clip.sample_rate, frame_rate)
    tr = trace.values[: len(env)]
    env = env[: len(tr)]
    a = env - env.mean()
    b = tr - tr.mean()
    if np.allclose(a, 0) or np.allclose(b, 0):
        return 10**6  # degenerate: no structure to align
    xc = np.correlate(a, b, mode="full")
    return int(np.argmax(xc) - (len(b) - 1))


def encoding_ndb_table(corpus: CorpusData, gen: GenerationResult,
                       cfg: RunConfig, log=_noop_log):
    """NDB per encoding family and class, train audio vs generated audio."""
    stft_cfg = corpus.profile.stft
    table = {}
    train_idx = np.flatnonzero(corpus.splits)
    feats_cache = {}

    def feat(clip, kind):
        key = (id(clip), kind)
        if key not in feats_cache:
            feats_cache[key] = metrics_flatten(clip, kind, stft_cfg)
        return feats_cache[key]

    for kind in ("stft", "cqt", "ms", "mfcc", "lms"):
        per_class = {}
        for class_id, name in enumerate(corpus.manifest.classes):
            tr = [
                feat(corpus.clips[i], kind)
                for i in train_idx
                if corpus.labels[i] == class_id
            ]
            ge = [
                feat(c, kind)
                for c, y in zip(gen.audio, gen.intended)
                if y == class_id
            ]
            if len(ge) < 2 or len(tr) <= cfg.metrics.ndb_k:
                per_class[name] = None
                continue
            res = metrics.ndb(np.stack(tr), np.stack(ge), k=cfg.metrics.ndb_k,
                              alpha=cfg.metrics.ndb_alpha, seed=cfg.seed)
            per_class[name] = res.count
        counted = [v for v in per_class.values() if v is not None]
        per_class["average"] = float(np.mean(counted)) if counted else None
        table[kind] = per_class
        log(stage="encoding_ndb", encoding=kind, **{
            k: v for k, v in per_class.items()})
    return table


def metrics_flatten(clip, kind, stft_cfg):
    return spectro.encode(clip, kind, stft_cfg).reshape(-1)


def run_metrics(corpus: CorpusData, gen: GenerationResult, trained_clf,
                cfg: RunConfig, log=_noop_log) -> metrics.MetricReport:
    mask = corpus.splits
    test_packed = corpus.packed[~mask]
    is_score = metrics.inception_score(gen.packed, trained_clf,
                                       splits=cfg.metrics.is_splits)
    real_feats = trained_clf.features(test_packed)
    gen_feats = trained_clf.features(gen.packed)
    fid_value = metrics.fid(real_feats, gen_feats)
    train_logspecs = corpus.packed[mask][:, :, :, 0]
    gen_logspecs = gen.packed[:, :, :, 0]
    ndb_res = metrics.ndb(train_logspecs, gen_logspecs, k=cfg.metrics.ndb_k,
                          alpha=cfg.metrics.ndb_alpha, seed=cfg.seed)
    retrieval = metrics.retrieval_accuracy(gen.packed, gen.intended, trained_clf)
    tol = cfg.metrics.sync_tolerance_frames
    tick_lags = gen.sync_lags.get("ticks", [])
    sync_rate = (
        float(np.mean([abs(l) <= tol for l in tick_lags])) if tick_lags else float("nan")
    )
    encoding_table = (
        encoding_ndb_table(corpus, gen, cfg, log) if cfg.metrics.encoding_table else {}
    )
    report = metrics.MetricReport(
        is_score=is_score,
        fid=fid_value,
        ndb_count=ndb_res.count,
        ndb_k=ndb_res.k,
        retrieval_accuracy=retrieval,
        n_real=int(len(test_packed)),
        n_generated=int(len(gen.packed)),
        config=cfg.to_dict(),
        encoding_ndb=encoding_table,
        sync_rate=sync_rate,
    )
    log(stage="metrics", is_score=is_score, fid=fid_value, ndb=ndb_res.count,
        retrieval=retrieval, sync_rate=sync_rate)
    return report


def cmd_pipeline(cfg: RunConfig, out_dir, log=_noop_log):
    """Full run; returns the report dict written to <out_dir>/report.json."""
    os.makedirs(out_dir, exist_ok=True)
    corpus = ensure_corpus(cfg, log)
    stage = run_relnet_stage(corpus, cfg, log)
    trained_clf = run_classifier_stage(corpus, cfg, log)

    variants = [("guided" if cfg.guidance else "unguided", cfg.guidance)]
    if cfg.compare_unguided and cfg.guidance:
        variants.append(("unguided", False))

    report = {
        "profile": cfg.profile,
        "seed": cfg.seed,
        "classes": corpus.manifest.classes,
        "relnet_test_accuracy": stage.test_accuracy,
        "classifier_test_accuracy": trained_clf.test_accuracy,
        "variants": {},
    }
    for name, guided in variants:
        run_dir = os.path.join(out_dir, name)
        state, history = run_gan_stage(corpus, stage.s_act, cfg, run_dir,
                                       guidance=guided, log=log)
        gen = run_generation(corpus, stage, state, cfg, out_dir=run_dir, log=log)
        variant_report = run_metrics(corpus, gen, trained_clf, cfg, log)
        report["variants"][name] = variant_report.to_dict()
        report["variants"][name]["sync_lags"] = {
            k: v for k, v in gen.sync_lags.items()
        }
        report["variants"][name]["final_loss_d"] = history[-1]["loss_d"]
        report["variants"][name]["final_loss_g"] = history[-1]["loss_g"]
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
    return report
