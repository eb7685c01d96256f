"""Command-line entry point: ``mlrm audit|prep|pipeline|gen``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core_metrics import EPSILON
from .errors import MlrmError
from .feature_redundancy import BACKWARD, FORWARD, pair_redundancy, select_features
from .io import read_wav, write_pgm
from .model_kit import ADDED, REMOVED, load_params, l1_prune_search, overparam_redundancy
from .pipeline import PipelineConfig, emit_report, load_manifest, run_pipeline, with_overrides
from .sample_redundancy import COVERAGE, DIVERSITY, ENTROPY, group_stats, holistic_redundancy
from .sensor_redundancy import cross_sensor_performance_redundancy, recommend_sensor_removal
from .signal_prep import AudioClip, downscale_sweep, register_streams, stft_spectrogram, to_uint8_image
from .synthetic import generate_corpus

EXIT_OK, EXIT_INVALID, EXIT_STAGE = 0, 2, 3


def _load_matrix(path):
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _load_vector(path):
    return _load_matrix(path).ravel()


def _flat(obj, prefix=""):
    rows = []
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            rows.extend(_flat(v, key + "."))
        else:
            rows.append((key, json.dumps(v) if isinstance(v, list) else v))
    return rows


def _emit(obj, args):
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("key", "value"))
        w.writerows(_flat(obj))
        text = buf.getvalue()
    else:
        text = json.dumps(obj, indent=2) + "\n"
    out = getattr(args, "out", None)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _eps(args):
    return EPSILON if args.epsilon is None else args.epsilon


def _seed(args):
    return 0 if args.seed is None else args.seed


# --- audit --------------------------------------------------------------------------


def cmd_audit_sample(args):
    if args.groups:
        _emit(group_stats(_load_vector(args.groups).astype(np.int64)).to_dict(), args)
        return EXIT_OK
    if not (args.base and args.batch):
        raise ValueError("audit sample needs --base and --batch (or --groups)")
    score = holistic_redundancy(_load_matrix(args.base), _load_matrix(args.batch), args.measure, args.dims,
                                args.bins, seed=_seed(args), epsilon=_eps(args))
    _emit({"measure": args.measure, **score.to_dict()}, args)
    return EXIT_OK


def cmd_audit_feature(args):
    x = _load_matrix(args.data)
    if args.pair:
        i, j = args.pair
        _emit({"pair": [i, j], "nmi": pair_redundancy(x[:, i], x[:, j], args.bins or 16)}, args)
        return EXIT_OK
    if not args.labels:
        raise ValueError("audit feature needs --labels for selection")
    y = _load_vector(args.labels).astype(np.int64)
    res = select_features(x, y, args.mode, args.max_features, args.min_gain, bins=args.bins or 16, seed=_seed(args))
    _emit(res.to_dict(), args)
    return EXIT_OK


def cmd_audit_sensor(args):
    if args.acc_with is not None or args.acc_without is not None:
        if args.acc_with is None or args.acc_without is None:
            raise ValueError("give both --with and --without")
        score = cross_sensor_performance_redundancy(args.acc_with, args.acc_without, _eps(args))
        _emit(score.to_dict(), args)
        return EXIT_OK
    if not (args.visual and args.audio and args.labels):
        raise ValueError("audit sensor needs --with/--without or --visual, --audio and --labels")
    res = recommend_sensor_removal(_load_matrix(args.visual), _load_matrix(args.audio),
                                   _load_vector(args.labels).astype(np.int64), seed=_seed(args))
    _emit(res.to_dict(), args)
    return EXIT_OK


def cmd_audit_model(args):
    if args.params:
        if not (args.data and args.labels):
            raise ValueError("pruning audit needs --data and --labels")
        params, spec = load_params(args.params)
        res = l1_prune_search(params, spec, _load_matrix(args.data), _load_vector(args.labels).astype(np.int64),
                              args.step, args.tol)
        _emit({"sparsity": res.sparsity, "baseline": res.baseline.value, "pruned": res.pruned.value,
               **res.score.to_dict()}, args)
        return EXIT_OK
    if args.base_acc is None or args.modified_acc is None:
        raise ValueError("audit model needs --base-acc and --modified-acc (or --params)")
    _emit(overparam_redundancy(args.base_acc, args.modified_acc, args.mode, _eps(args)).to_dict(), args)
    return EXIT_OK


# --- prep -------------------------------------------------------------------------------


def cmd_prep_register(args):
    ds = load_manifest(args.manifest)
    reg = register_streams(ds.video, ds.audio)
    _emit({"pairs": len(reg.pairs), "dropped": reg.dropped,
           "snippet_samples": sorted({p.snippet.samples.size for p in reg.pairs})}, args)
    return EXIT_OK


def cmd_prep_downscale(args):
    ds = load_manifest(args.manifest)
    reg = register_streams(ds.video, ds.audio)
    specs = [stft_spectrogram(p.snippet, args.window, args.hop, out_size=2) for p in reg.pairs]
    sizes = [int(s) for s in args.sizes.split(",")]
    _emit(downscale_sweep([p.frame for p in reg.pairs], specs, sizes, args.drift_tol).to_dict(), args)
    return EXIT_OK


def cmd_prep_spectrogram(args):
    samples, rate = read_wav(args.wav)
    spec = stft_spectrogram(AudioClip(samples, rate), args.window, args.hop, args.size)
    write_pgm(args.out, to_uint8_image(spec.values).pixels)
    sys.stdout.write(json.dumps({"out": str(args.out), "size": args.size,
                                 "frequency_bins": spec.log_magnitude.shape[0],
                                 "frames": spec.log_magnitude.shape[1]}) + "\n")
    return EXIT_OK


# --- pipeline and generator ---------------------------------------------------------------


def cmd_pipeline_run(args):
    cfg = with_overrides(PipelineConfig.load(args.config), args.seed, args.epsilon, args.bins)
    report = run_pipeline(cfg, load_manifest(args.manifest))
    text = emit_report(report, args.format, args.out)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK if report.status == "ok" else EXIT_STAGE


def cmd_gen_synthetic(args):
    manifest, config = generate_corpus(args.out, _seed(args), args.frames, args.size)
    sys.stdout.write(json.dumps({"manifest": str(manifest), "config": str(config)}) + "\n")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--bins", type=int, default=None, help="histogram bins for entropy/MI measures")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--epsilon", type=float, default=None, help="division guard for R (default 1e-12)")

    p = argparse.ArgumentParser(prog="mlrm", description="Multi-level redundancy measurement and mitigation.")
    p.add_argument("--version", action="version", version=f"mlrm {__version__}")
    top = p.add_subparsers(dest="command", required=True)

    audit = top.add_parser("audit", help="single-measure redundancy audits").add_subparsers(dest="what", required=True)
    a = audit.add_parser("sample", parents=[common], help="holistic or group-relative sample redundancy")
    a.add_argument("--base")
    a.add_argument("--batch")
    a.add_argument("--groups", help="vector of subgroup ids; prints representation rates")
    a.add_argument("--measure", choices=(ENTROPY, DIVERSITY, COVERAGE), default=ENTROPY)
    a.add_argument("--dims", type=int, default=2)
    a.add_argument("--out")
    a.set_defaults(func=cmd_audit_sample)

    a = audit.add_parser("feature", parents=[common], help="feature selection or pairwise NMI")
    a.add_argument("--data", required=True)
    a.add_argument("--labels")
    a.add_argument("--mode", choices=(FORWARD, BACKWARD), default=FORWARD)
    a.add_argument("--min-gain", type=float, default=0.0)
    a.add_argument("--max-features", type=int, default=None)
    a.add_argument("--pair", type=int, nargs=2, metavar=("I", "J"))
    a.add_argument("--out")
    a.set_defaults(func=cmd_audit_feature)

    a = audit.add_parser("sensor", parents=[common], help="cross-sensor redundancy")
    a.add_argument("--with", dest="acc_with", type=float, help="fused accuracy")
    a.add_argument("--without", dest="acc_without", type=float, help="accuracy without the sensor")
    a.add_argument("--visual")
    a.add_argument("--audio")
    a.add_argument("--labels")
    a.add_argument("--out")
    a.set_defaults(func=cmd_audit_sensor)

    a = audit.add_parser("model", parents=[common], help="overparameterization redundancy")
    a.add_argument("--base-acc", type=float)
    a.add_argument("--modified-acc", type=float)
    a.add_argument("--mode", choices=(ADDED, REMOVED), default=REMOVED)
    a.add_argument("--params", help=".mlpk model for a pruning search")
    a.add_argument("--data")
    a.add_argument("--labels")
    a.add_argument("--step", type=float, default=0.01)
    a.add_argument("--tol", type=float, default=0.01)
    a.add_argument("--out")
    a.set_defaults(func=cmd_audit_model)

    prep = top.add_parser("prep", help="registration and signal preparation").add_subparsers(dest="what",
                                                                                           required=True)
    a = prep.add_parser("register", parents=[common])
    a.add_argument("--manifest", required=True)
    a.add_argument("--out")
    a.set_defaults(func=cmd_prep_register)

    a = prep.add_parser("downscale", parents=[common], help="entropy sweep over downscaled sizes")
    a.add_argument("--manifest", required=True)
    a.add_argument("--sizes", default="20,40,80,160,320")
    a.add_argument("--drift-tol", type=float, default=0.2)
    a.add_argument("--window", type=int, default=256)
    a.add_argument("--hop", type=int, default=64)
    a.add_argument("--out")
    a.set_defaults(func=cmd_prep_downscale)

    a = prep.add_parser("spectrogram", parents=[common], help="WAV to spectrogram PGM")
    a.add_argument("--wav", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--window", type=int, default=1024)
    a.add_argument("--hop", type=int, default=512)
    a.add_argument("--size", type=int, default=80)
    a.set_defaults(func=cmd_prep_spectrogram)

    pipe = top.add_parser("pipeline", help="run the staged pipeline").add_subparsers(dest="what", required=True)
    a = pipe.add_parser("run", parents=[common])
    a.add_argument("--config", required=True)
    a.add_argument("--manifest", required=True)
    a.add_argument("--out")
    a.set_defaults(func=cmd_pipeline_run)

    gen = top.add_parser("gen", help="fixture generators").add_subparsers(dest="what", required=True)
    a = gen.add_parser("synthetic", parents=[common], help="synthetic audio-visual corpus")
    a.add_argument("--out", required=True)
    a.add_argument("--frames", type=int, default=240)
    a.add_argument("--size", type=int, default=320)
    a.set_defaults(func=cmd_gen_synthetic)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MlrmError, ValueError, OSError, KeyError) as exc:
        sys.stderr.write(f"mlrm: error: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
