"""Command-line entry point: data generation, two-stage training,
sampling, metric evaluation, and gradient verification.

Every command is a pure function of its flags, config, seed, and input
files; outputs are written atomically. Exit codes: 0 success,
2 validation, 3 I/O, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import fileio
from .bridge import build_mcm, set_stage
from .config import load_config, model_config, train_config
from .errors import IoError, McmError, NumericError, ValidationError
from .metrics import (
    BeatTrack,
    beat_align_score,
    diversity,
    frechet_distance,
    gaussian_stats,
    kinematic_beats,
    kinetic_features,
    multimodal_distance,
    multimodality,
    r_precision,
)
from .motion import joints_world
from .schedule import PredictionTarget, linear_beta_schedule
from .training import (
    ToySample,
    build_model,
    grad_check,
    load_model,
    make_toy_dataset,
    sample_motion,
    save_model,
    train_stage1,
    train_stage2,
)


def _worker_count() -> int:
    return max(1, int(os.environ.get("MCM_THREADS", "1")))


def cmd_gen_data(args) -> int:
    out = args.out
    if os.path.exists(out) and os.listdir(out) and not args.force:
        raise ValidationError(f"{out} exists and is not empty (use --force to overwrite)")
    os.makedirs(out, exist_ok=True)
    data = make_toy_dataset(args.n, args.frames, args.seed, with_control=args.with_control, fps=args.fps)
    manifest = {"n": args.n, "frames": args.frames, "fps": args.fps, "seed": args.seed, "with_control": args.with_control, "samples": []}
    for i, sample in enumerate(data):
        stem = f"{i:04d}"
        fileio.write_motion(os.path.join(out, stem + ".mcmv"), sample.motion)
        fileio.atomic_write(os.path.join(out, stem + ".txt"), (" ".join(sample.tokens) + "\n").encode())
        entry = {"motion": stem + ".mcmv", "caption": " ".join(sample.tokens), "beats": None, "meta": sample.meta}
        if sample.beats is not None:
            fileio.write_beats(os.path.join(out, stem + ".beats.json"), sample.beats.times)
            entry["beats"] = stem + ".beats.json"
        manifest["samples"].append(entry)
    fileio.write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"wrote {len(data)} samples to {out}")
    return 0


def load_dataset(dirpath) -> list[ToySample]:
    manifest_path = os.path.join(dirpath, "manifest.json")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except OSError as exc:
        raise IoError(f"cannot read dataset manifest {manifest_path}: {exc}") from exc
    samples = []
    for entry in manifest["samples"]:
        seq = fileio.read_motion(os.path.join(dirpath, entry["motion"]))
        seq.label = entry["caption"]
        beats = None
        if entry.get("beats"):
            beats = BeatTrack(times=fileio.read_beats(os.path.join(dirpath, entry["beats"])))
        samples.append(ToySample(motion=seq, tokens=entry["caption"].split(), beats=beats, meta=entry.get("meta", {})))
    return samples


def _dataset_from_config(cfg, stage: int) -> list[ToySample]:
    data_cfg = cfg["data"]
    if data_cfg["dir"]:
        return load_dataset(data_cfg["dir"])
    with_control = data_cfg["with_control"] or stage == 2
    return make_toy_dataset(data_cfg["n"], data_cfg["frames"], data_cfg["seed"], with_control=with_control, fps=data_cfg["fps"])


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    stage = args.stage if args.stage is not None else cfg["train"]["stage"]
    tcfg = train_config(cfg, stage=stage)
    data = _dataset_from_config(cfg, stage)
    out_dir = args.out_dir or f"mcm-run-stage{stage}"
    os.makedirs(out_dir, exist_ok=True)
    if stage == 1:
        if args.resume:
            model, meta = load_model(args.resume)
            if meta["kind"] != "mwnet":
                raise ValidationError("stage 1 resume expects a main-branch checkpoint")
        else:
            model = build_model(model_config(cfg))
        log = train_stage1(model, data, tcfg)
        to_save = model
    else:
        if not args.resume:
            raise ValidationError("stage 2 needs --resume with a stage-1 checkpoint")
        loaded, meta = load_model(args.resume)
        if meta["kind"] == "mwnet":
            mcm = build_mcm(loaded, d_c=loaded.cfg.d_c)
        else:
            mcm = loaded
        set_stage(mcm, 2)
        log = train_stage2(mcm, data, tcfg)
        to_save = mcm
    ckpt = os.path.join(out_dir, "checkpoint.mcmw")
    save_model(ckpt, to_save, stage, extra_meta={"schedule": cfg["schedule"]})
    fileio.write_jsonl(os.path.join(out_dir, "train_log.jsonl"), log)
    print(f"stage {stage}: {len(log)} epochs, final loss {log[-1]['loss']:.6f}, checkpoint {ckpt}")
    return 0


def cmd_sample(args) -> int:
    model, meta = load_model(args.ckpt)
    sched_cfg = meta.get("schedule", {"t_diff": 1000, "beta_start": 1e-4, "beta_end": 0.02, "target": "x0"})
    sched = linear_beta_schedule(sched_cfg["t_diff"], sched_cfg["beta_start"], sched_cfg["beta_end"])
    mode = PredictionTarget.parse(sched_cfg["target"])
    if args.frames < 1:
        raise ValidationError("frames must be >= 1")
    beats = None
    control_features = None
    if args.beats or args.audio_features:
        if meta["kind"] != "mcm":
            print("warning: --beats/--audio-features ignored, checkpoint has no control branch", file=sys.stderr)
        elif args.audio_features:
            control_features, _ = fileio.read_features(args.audio_features)
        else:
            beats = fileio.read_beats(args.beats)
    text_features = None
    if args.text_features:
        text_features, _ = fileio.read_features(args.text_features)
    if meta["kind"] == "mcm" and beats is None and control_features is None:
        model = model.main  # no control signal: sample the frozen main branch
    elif meta["kind"] == "mcm":
        bridge_mag = max(float(np.abs(b.weight.data).max()) for b in model.bridges)
        print(f"control path active: max |bridge weight| {bridge_mag:.3e}")
    tokens = args.caption.split()
    rng = np.random.default_rng(args.seed)
    seq = sample_motion(
        model, tokens, args.frames, sched, rng, mode,
        control_beats=beats, control_features=control_features,
        text_features=text_features, fps=args.fps,
    )
    fileio.write_motion(args.out, seq)
    track = kinematic_beats(joints_world(seq), seq.fps)
    print(f"wrote {args.out}: {seq.num_frames} frames @ {seq.fps:g} fps, {len(track)} kinematic beats")
    return 0


def _motion_files(dirpath) -> list[str]:
    if not os.path.isdir(dirpath):
        raise IoError(f"{dirpath} is not a directory")
    return sorted(f for f in os.listdir(dirpath) if f.endswith(".mcmv"))


def _kinetic_rows(dirpath) -> np.ndarray:
    files = _motion_files(dirpath)
    if not files:
        raise ValidationError(f"no motion files in {dirpath}")

    def one(name):
        seq = fileio.read_motion(os.path.join(dirpath, name))
        return kinetic_features(joints_world(seq), seq.fps).values

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        rows = list(pool.map(one, files))  # input order preserved
    return np.stack(rows)


def cmd_eval(args) -> int:
    requested = [m.strip() for m in args.metrics.split(",") if m.strip()]
    known = {"fid", "div", "bas", "rprec", "mmdist", "mmod"}
    unknown = [m for m in requested if m not in known]
    if unknown:
        raise ValidationError(f"unknown metrics: {unknown} (known: {sorted(known)})")
    report = {"metrics": {}, "seed": args.seed, "config": {"pred": args.pred, "ref": args.ref, "k_top": args.k_top, "num_pairs": args.num_pairs, "sigma": args.sigma, "smooth_window": args.smooth_window}}
    rng = np.random.default_rng(args.seed)
    pred_feats = None
    for name in requested:
        try:
            if name == "fid":
                if not args.pred or not args.ref:
                    raise ValidationError("fid needs --pred and --ref")
                pred_feats = _kinetic_rows(args.pred) if pred_feats is None else pred_feats
                value = frechet_distance(gaussian_stats(pred_feats), gaussian_stats(_kinetic_rows(args.ref)))
            elif name == "div":
                if not args.pred:
                    raise ValidationError("div needs --pred")
                pred_feats = _kinetic_rows(args.pred) if pred_feats is None else pred_feats
                value = diversity(pred_feats, args.num_pairs, rng)
            elif name == "bas":
                if not args.pred or not args.beats:
                    raise ValidationError("bas needs --pred and --beats")
                scores = []
                for fname in _motion_files(args.pred):
                    stem = fname[: -len(".mcmv")]
                    beat_path = os.path.join(args.beats, stem + ".beats.json")
                    if not os.path.exists(beat_path):
                        raise ValidationError(f"no beat file for {fname} (expected {beat_path})")
                    seq = fileio.read_motion(os.path.join(args.pred, fname))
                    dance = kinematic_beats(joints_world(seq), seq.fps, smooth_window=args.smooth_window)
                    music = BeatTrack(times=fileio.read_beats(beat_path))
                    scores.append(beat_align_score(music, dance, sigma=args.sigma))
                value = float(np.mean(scores))
            elif name in ("rprec", "mmdist"):
                if not args.motion_features or not args.text_features:
                    raise ValidationError(f"{name} needs --motion-features and --text-features")
                m, _ = fileio.read_features(args.motion_features)
                t, _ = fileio.read_features(args.text_features)
                if name == "rprec":
                    value = r_precision(m, t, args.k_top, rng=rng)
                    if len(m) < 32:
                        report["metrics"][name] = {"value": value, "small_batch": True}
                        continue
                else:
                    value = multimodal_distance(m, t)
            else:  # mmod
                if not args.group_features:
                    raise ValidationError("mmod needs --group-features (one file per caption group)")
                groups = [fileio.read_features(p)[0] for p in args.group_features]
                value = multimodality(groups, None)
            report["metrics"][name] = {"value": float(value)}
        except McmError as exc:
            report["metrics"][name] = {"error": str(exc)}
    if args.report:
        fileio.write_json(args.report, report)
    print(json.dumps(report, indent=2, sort_keys=True))
    failures = [m for m in requested if "error" in report["metrics"][m]]
    return 2 if requested and len(failures) == len(requested) else 0


def cmd_gradcheck(args) -> int:
    """Verify tape gradients on a reduced double-precision model."""
    cfg = load_config(args.config)
    from .mwnet import ModelConfig

    small = ModelConfig(
        d=8, d_t=8, blocks=1, heads=2, groups=2, ffn_mult=4,
        layout=cfg["model"]["layout"], max_len=64, d_c=cfg["model"]["d_c"],
        dtype="float64", init_seed=cfg["model"]["init_seed"],
    )
    model = build_model(small)
    rng = np.random.default_rng(0)
    for p in model.parameters():  # keep every entry away from zero so FD sees curvature
        p.data = p.data + 0.01 * rng.standard_normal(p.data.shape)
    x = 0.5 * rng.standard_normal((4, 263))  # moderate probe, see tests/test_acceptance.py
    names = None
    if args.block:
        names = [n for n in model.named_parameters() if args.block in n]
        if not names:
            raise ValidationError(f"no parameters match --block {args.block!r}")
    report = grad_check(model, x, 3, ["slow"], h=args.h, param_names=names)
    for name in sorted(report.per_param):
        print(f"{report.per_param[name]:.3e}  {name}")
    print(f"max relative error: {report.max_rel_error:.3e} ({'PASS' if report.passed else 'FAIL'})")
    if not report.passed:
        raise NumericError(f"gradient check failed: {report.max_rel_error:.3e} >= 1e-4")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcmotion", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic captioned dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=256)
    g.add_argument("--frames", type=int, default=48)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--fps", type=float, default=20.0)
    g.add_argument("--with-control", action="store_true")
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train stage 1 (text-to-motion) or stage 2 (control)")
    t.add_argument("--config", default=None)
    t.add_argument("--stage", type=int, choices=(1, 2), default=None)
    t.add_argument("--resume", default=None)
    t.add_argument("--out-dir", default=None)
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="generate a motion from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--caption", default="")
    s.add_argument("--beats", default=None)
    s.add_argument("--text-features", default=None, help="MCMF file bypassing the toy text encoder")
    s.add_argument("--audio-features", default=None, help="MCMF file bypassing the beat/audio pipeline")
    s.add_argument("--frames", type=int, default=48)
    s.add_argument("--fps", type=float, default=20.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sample)

    e = sub.add_parser("eval", help="compute metrics over motion directories or feature files")
    e.add_argument("--pred", default=None)
    e.add_argument("--ref", default=None)
    e.add_argument("--beats", default=None, help="directory of *.beats.json matching --pred stems")
    e.add_argument("--metrics", default="fid,div")
    e.add_argument("--motion-features", default=None)
    e.add_argument("--text-features", default=None)
    e.add_argument("--group-features", nargs="*", default=None)
    e.add_argument("--k-top", type=int, default=1)
    e.add_argument("--num-pairs", type=int, default=300)
    e.add_argument("--sigma", type=float, default=3.0)
    e.add_argument("--smooth-window", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--report", default=None)
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--config", default=None)
    c.add_argument("--block", default=None, help="restrict to parameters whose name contains this substring")
    c.add_argument("--h", type=float, default=1e-5)
    c.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except McmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
