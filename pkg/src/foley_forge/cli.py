"""Command-line surface: synth, codec, train, generate, evaluate, pipeline, report.

All configuration comes from a JSON file plus flag overrides; logs are
line-delimited JSON on stderr.  Exit codes: 0 ok, 2 config error, 3 data
error, 4 numeric failure.
"""

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__, datasynth, gan, metrics, pipeline, relnet, spectro
from .config import RunConfig, load_run_config
from .nncore import stream_rng
from .nncore.errors import ConfigError, DataError, NumericsError
from .tensorio import read_tensor, write_tensor


def jlog(**kw):
    record = {"ts": round(time.time(), 3)}
    record.update(kw)
    print(json.dumps(record, sort_keys=True, default=str), file=sys.stderr)


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "no_guidance", False):
        overrides["guidance"] = False
    if getattr(args, "profile", None):
        overrides["profile"] = args.profile
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


# -- subcommands ---------------------------------------------------------


def cmd_synth(args):
    classes = datasynth.default_classes()[: args.classes]
    manifest = datasynth.build_corpus(
        classes, args.per_class, args.seed, args.out, profile=args.profile)
    jlog(stage="synth", records=len(manifest.records), out=args.out)
    print(os.path.join(args.out, "manifest.json"))
    return 0


def cmd_codec(args):
    prof = spectro.PROFILES[args.profile]
    clip = datasynth.read_wav(getattr(args, "in"))
    if clip.sample_rate != prof.stft.sample_rate:
        jlog(stage="codec", warning="sample rate differs from profile",
             clip_rate=clip.sample_rate, profile_rate=prof.stft.sample_rate)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.splitext(os.path.basename(getattr(args, "in")))[0]
    feats = spectro.encode(clip, args.encoding, prof.stft)
    feat_path = os.path.join(out_dir, f"{base}.{args.encoding}.fgt1")
    write_tensor(feat_path, feats)
    result = {"encoding": args.encoding, "shape": list(feats.shape),
              "features": feat_path}
    if args.roundtrip:
        snr = spectro.roundtrip_snr(clip, prof.stft)
        spec = spectro.stft(clip, prof.stft)
        back = spectro.istft(spec, prof.stft)
        wav_path = os.path.join(out_dir, f"{base}.roundtrip.wav")
        datasynth.write_wav(wav_path, back)
        result.update({"roundtrip_snr_db": round(snr, 2), "roundtrip_wav": wav_path})
    jlog(stage="codec", **result)
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    corpus = pipeline.ensure_corpus(cfg, jlog)
    stage = pipeline.run_relnet_stage(corpus, cfg, jlog)
    state, history = pipeline.run_gan_stage(
        corpus, stage.s_act, cfg, args.out, log=jlog)
    jlog(stage="train", steps=state.step, out=args.out)
    print(args.out)
    return 0


def cmd_generate(args):
    state, _, scale = gan.load_gan(args.ckpt)
    trace_values = read_tensor(args.guidance).reshape(-1)
    trace = relnet.ActionTrace(np.clip(trace_values, 0.0, 1.0))
    size = state.cfg.image_size
    s_act = relnet.action_spectrogram(trace, (size, size))
    rng = stream_rng(args.seed, "generate.z")
    z = gan.truncate_latent(rng, state.cfg.z_dim, state.cfg.truncation_threshold)
    packed = gan.generate(state.gen, state.gparams, z, args.class_id, s_act, scale)
    profile = next(
        (p for p in spectro.PROFILES.values() if p.size == size), None)
    if profile is None:
        raise ConfigError(f"no codec profile renders {size}x{size} spectrograms")
    clip = gan.generated_audio(packed, profile.stft)
    datasynth.write_wav(args.wav, clip)
    jlog(stage="generate", wav=args.wav, class_id=args.class_id)
    print(args.wav)
    return 0


def cmd_evaluate(args):
    cfg = _load_config(args)
    state, _, _ = gan.load_gan(args.ckpt)
    corpus = pipeline.load_corpus(args.dataset, cfg.profile)
    stage = pipeline.run_relnet_stage(corpus, cfg, jlog)
    trained_clf = pipeline.run_classifier_stage(corpus, cfg, jlog)
    gen = pipeline.run_generation(corpus, stage, state, cfg,
                                  out_dir=os.path.dirname(args.report) or ".",
                                  log=jlog)
    report = pipeline.run_metrics(corpus, gen, trained_clf, cfg, jlog)
    with open(args.report, "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
    print(args.report)
    return 0


def cmd_pipeline(args):
    cfg = _load_config(args)
    if args.compare_unguided:
        cfg = dataclasses.replace(cfg, compare_unguided=True)
    report = pipeline.cmd_pipeline(cfg, args.out, log=jlog)
    jlog(stage="pipeline", out=args.out,
         variants=sorted(report["variants"]))
    print(os.path.join(args.out, "report.json"))
    return 0


def _format_table(headers, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(headers)]
    def fmt(cells):
        return " | ".join(str(c).ljust(w) for c, w in zip(cells, widths))
    lines = [fmt(headers), "-+-".join("-" * w for w in widths)]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines)


def cmd_report(args):
    report_path = os.path.join(args.run, "report.json")
    if not os.path.exists(report_path):
        raise DataError(f"no report.json in {args.run}; incomplete run")
    with open(report_path) as fh:
        report = json.load(fh)
    out = []
    variants = report.get("variants", {})
    rows = []
    for name, v in sorted(variants.items()):
        rows.append([
            name, round(v["is_score"], 3), round(v["fid"], 2),
            v["ndb"]["count"], round(v["retrieval_accuracy"], 2),
        ])
    out.append("Generated-sample comparison")
    out.append(_format_table(
        ["variant", "IS", "FID", "NDB", "accuracy %"], rows))
    for name, v in sorted(variants.items()):
        table = v.get("encoding_ndb") or {}
        if not table:
            continue
        encodings = sorted(table)
        classes = [c for c in report.get("classes", []) if any(
            c in table[e] for e in encodings)]
        rows = []
        for cls in classes + ["average"]:
            rows.append([cls] + [table[e].get(cls) for e in encodings])
        out.append(f"\nPer-encoding NDB (k per config) -- {name}")
        out.append(_format_table(["class"] + encodings, rows))
    text = "\n".join(out)
    print(text)
    if args.rainbowgrams:
        _emit_rainbowgrams(args.run, report)
    return 0


def _emit_rainbowgrams(run_dir, report):
    corpus_path = (
        report.get("variants", {})
        .get(next(iter(report.get("variants", {})), ""), {})
        .get("config", {})
        .get("corpus", {})
        .get("path")
    )
    if not corpus_path or not os.path.exists(
            os.path.join(corpus_path, "manifest.json")):
        jlog(stage="report", warning="corpus not found; skipping rainbowgrams")
        return
    manifest = datasynth.DatasetManifest.load(
        os.path.join(corpus_path, "manifest.json"))
    prof = spectro.PROFILES[manifest.profile]
    img_dir = os.path.join(run_dir, "rainbowgrams")
    os.makedirs(img_dir, exist_ok=True)
    for variant in report.get("variants", {}):
        gen_dir = os.path.join(run_dir, variant, "gen")
        if not os.path.isdir(gen_dir):
            continue
        for class_id, cls in enumerate(manifest.classes):
            real_rec = next((r for r in manifest.records
                             if r.class_id == class_id and r.split == "test"), None)
            gen_wav = next(
                (os.path.join(gen_dir, f) for f in sorted(os.listdir(gen_dir))
                 if f.startswith(cls) and f.endswith(".wav")), None)
            if not real_rec or not gen_wav:
                continue
            real = datasynth.read_wav(os.path.join(manifest.root, real_rec.wav))
            generated = datasynth.read_wav(gen_wav)
            path = os.path.join(img_dir, f"{variant}_{cls}.ppm")
            metrics.rainbowgram_panel(path, [real, generated], prof.stft)
            jlog(stage="report", rainbowgram=path)


def build_parser():
    p = argparse.ArgumentParser(
        prog="foley-forge",
        description="Visually guided adversarial sound synthesis (desk scale)",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="build a synthetic corpus")
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", required=True)
    s.add_argument("--profile", default="desk", choices=sorted(spectro.PROFILES))
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("codec", help="encode a WAV and optionally round-trip it")
    s.add_argument("--in", required=True)
    s.add_argument("--profile", default="desk", choices=sorted(spectro.PROFILES))
    s.add_argument("--encoding", default="stft",
                   choices=[k.value for k in spectro.EncodingKind])
    s.add_argument("--roundtrip", action="store_true")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_codec)

    s = sub.add_parser("train", help="train the adversarial generator")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--no-guidance", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="synthesize audio from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--class", dest="class_id", type=int, required=True)
    s.add_argument("--guidance", required=True, help="action trace .fgt1 file")
    s.add_argument("--wav", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="score a checkpoint against a dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--dataset", required=True, help="manifest.json path")
    s.add_argument("--report", required=True)
    s.add_argument("--profile", choices=sorted(spectro.PROFILES))
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("pipeline", help="corpus -> training -> audio -> report")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--no-guidance", action="store_true")
    s.add_argument("--compare-unguided", action="store_true")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("report", help="render tables and rainbowgrams for a run")
    s.add_argument("--run", required=True)
    s.add_argument("--rainbowgrams", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        jlog(stage="error", kind="config", message=str(exc))
        return 2
    except DataError as exc:
        jlog(stage="error", kind="data", message=str(exc))
        return 3
    except NumericsError as exc:
        jlog(stage="error", kind="numeric", message=str(exc))
        return 4


if __name__ == "__main__":
    sys.exit(main())
