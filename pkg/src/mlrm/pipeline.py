"""Staged redundancy-mitigation pipeline: configuration, dataset manifests,
stage execution and report emission."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .core_metrics import EPSILON, Direction, MetricValue, redundancy_index, removal_redundancy
from .errors import ConfigError, ManifestError, MlrmError
from .feature_redundancy import FORWARD, pca_fit, select_features
from .io import read_pgm, read_wav
from .model_kit import (
    ModelConfig,
    PruneMask,
    Standardizer,
    capacity_search,
    encode_params,
    evaluate_model,
    fit_and_score,
    l1_prune_search,
    stratified_split,
    train_mlp,
)
from .sample_redundancy import avg_pairwise_distance, greedy_diverse_subset, group_stats, smote_oversample
from .sensor_redundancy import AUDIO, VISUAL, sensor_verdicts
from .signal_prep import (
    AudioClip,
    ImageFrame,
    SensorStream,
    downscale_sweep,
    image_entropy,
    register_streams,
    resize_image,
    stft_spectrogram,
    to_uint8_image,
)

SCHEMA = "mlrm.report/v1"
STAGES = (
    "Register",
    "FeatureExtract",
    "Downsample",
    "Synthesize",
    "SensorEnhance",
    "Reprocess",
    "FeatureSelect",
    "CapacitySearch",
    "Prune",
)
DEFAULT_PARAMS = {
    "Register": {},
    "FeatureExtract": {
        "sizes": [20, 40, 80, 160, 320],
        "size": "auto",
        "drift_tol": 0.2,
        "pca_k": 32,
        "audio_window": 256,
        "audio_hop": 64,
    },
    "Downsample": {"fraction": 0.8, "metric": "euclidean"},
    "Synthesize": {"target_ratio": 1.0, "k": 5},
    "SensorEnhance": {"tau_model": 0.02},
    "Reprocess": {},
    "FeatureSelect": {"bins": 4, "min_gain": 0.01, "max_features": None},
    "CapacitySearch": {"widths": [2, 4, 8, 16, 32, 64], "tol": 0.01},
    "Prune": {"step": 0.01, "tol": 0.01},
}
OMITTED = [{"stage": "ActiveLearning", "reason": "needs an external data-acquisition oracle"}]
ADDITION = "addition"
REMOVAL = "removal"
CSV_COLUMNS = ("stage", "enabled", "P_before", "P_after", "R", "ms", "bytes_in", "bytes_out")


# --- configuration ------------------------------------------------------------------


@dataclass
class StageConfig:
    stage: str
    enabled: bool = False
    params: dict = field(default_factory=dict)


@dataclass
class PipelineConfig:
    stages: list
    seed: int = 0
    split_ratios: tuple = (0.8, 0.1, 0.1)
    model: ModelConfig = field(default_factory=ModelConfig)
    epsilon: float = EPSILON

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"stages", "seed", "split_ratios", "model", "epsilon"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        given = {}
        for entry in d.get("stages", []):
            name = entry.get("stage")
            if name not in STAGES:
                raise ConfigError(f"unknown stage {name!r}; expected one of {list(STAGES)}")
            if name in given:
                raise ConfigError(f"stage {name} listed twice")
            params = dict(entry.get("params") or {})
            bad = set(params) - set(DEFAULT_PARAMS[name])
            if bad:
                raise ConfigError(f"unknown params for {name}: {sorted(bad)}")
            given[name] = StageConfig(name, bool(entry.get("enabled", True)), {**DEFAULT_PARAMS[name], **params})
        stages = [given.get(s, StageConfig(s, False, dict(DEFAULT_PARAMS[s]))) for s in STAGES]
        ratios = tuple(float(r) for r in d.get("split_ratios", (0.8, 0.1, 0.1)))
        if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratios must be three positive numbers summing to 1, got {list(ratios)}")
        try:
            model = ModelConfig.from_dict(d.get("model", {}))
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from exc
        eps = float(d.get("epsilon", EPSILON))
        if not eps > 0:
            raise ConfigError("epsilon must be positive")
        return cls(stages, int(d.get("seed", 0)), ratios, model, eps)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON ({path}: {exc})") from None

    def to_dict(self):
        return {
            "stages": [{"stage": s.stage, "enabled": s.enabled, "params": s.params} for s in self.stages],
            "seed": self.seed,
            "split_ratios": list(self.split_ratios),
            "model": self.model.to_dict(),
            "epsilon": self.epsilon,
        }

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def stage(self, name):
        return self.stages[STAGES.index(name)]


# --- manifests ------------------------------------------------------------------------


@dataclass
class DatasetManifest:
    root: Path
    video_dir: Path
    nominal_rate: float
    timestamps: list | None
    audio_path: Path
    audio_start: float
    labels_path: Path
    subgroups_path: Path | None


@dataclass
class Dataset:
    manifest: DatasetManifest
    video: SensorStream
    audio: SensorStream
    labels: dict
    subgroups: dict | None

    @property
    def source_bytes(self):
        pixels = sum(f.nbytes for f in self.video.frames)
        return pixels + 2 * self.audio.clip.samples.size


def _require(path, what):
    if not path.is_file():
        raise ManifestError(f"{what} not found", str(path))
    return path


def _read_index_csv(path, column):
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["frame_index"] or len(rows[0]) < 2:
        raise ManifestError(f"expected header 'frame_index,{column}'", str(path))
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            out[int(row[0])] = int(row[1])
        except (ValueError, IndexError):
            raise ManifestError(f"bad row {line}", str(path)) from None
    return out


def load_manifest(path):
    """Read a dataset manifest and load the streams it references.

    Relative paths resolve against the manifest's directory.  Without
    explicit timestamps frame i is placed at i / nominal_rate.
    """
    path = Path(path)
    _require(path, "manifest")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON ({exc})", str(path)) from None
    root = path.parent
    try:
        video, audio = d["video"], d["audio"]
        labels = d["labels"]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"manifest lacks field {exc}", str(path)) from None
    labels = labels["path"] if isinstance(labels, dict) else labels
    subgroups = d.get("subgroups")
    subgroups = subgroups["path"] if isinstance(subgroups, dict) else subgroups
    m = DatasetManifest(
        root=root,
        video_dir=root / video["dir"],
        nominal_rate=float(video.get("nominal_rate", 30.0)),
        timestamps=video.get("timestamps"),
        audio_path=root / audio["path"],
        audio_start=float(audio.get("start_time", 0.0)),
        labels_path=root / labels,
        subgroups_path=None if subgroups is None else root / subgroups,
    )
    if not m.video_dir.is_dir():
        raise ManifestError("video directory not found", str(m.video_dir))
    frame_files = sorted(m.video_dir.glob("*.pgm"))
    if not frame_files:
        raise ManifestError("no .pgm frames in video directory", str(m.video_dir))
    if m.timestamps is not None:
        if len(m.timestamps) != len(frame_files):
            raise ManifestError(f"{len(m.timestamps)} timestamps for {len(frame_files)} frames", str(path))
        stamps = [float(t) for t in m.timestamps]
    else:
        stamps = [i / m.nominal_rate for i in range(len(frame_files))]
    frames = [ImageFrame(read_pgm(f), t) for f, t in zip(frame_files, stamps)]
    samples, rate = read_wav(_require(m.audio_path, "audio file"))
    labels_map = _read_index_csv(_require(m.labels_path, "labels file"), "label")
    groups = None
    if m.subgroups_path is not None:
        groups = _read_index_csv(_require(m.subgroups_path, "subgroups file"), "group")
    return Dataset(
        m,
        SensorStream.video(frames, m.nominal_rate),
        SensorStream.audio(AudioClip(samples, rate, m.audio_start)),
        labels_map,
        groups,
    )


# --- reports ---------------------------------------------------------------------------


def _plain(x):
    """Convert numpy scalars/arrays (recursively) to JSON-native values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else None
    return x


@dataclass
class RedundancyReport:
    tool_version: str
    config_hash: str
    seed: int
    status: str = "ok"
    dataset: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    omitted_stages: list = field(default_factory=lambda: list(OMITTED))
    schema: str = SCHEMA

    def to_dict(self):
        return _plain({
            "schema": self.schema,
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "status": self.status,
            "dataset": self.dataset,
            "stages": self.stages,
            "final": self.final,
            "omitted_stages": self.omitted_stages,
        })

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        return cls(d["tool_version"], d["config_hash"], d["seed"], d["status"], d["dataset"], d["stages"],
                   d["final"], d["omitted_stages"], d["schema"])


def recompute_r(record, epsilon=EPSILON):
    """Recompute a stage record's R from its P values, direction and form."""
    direction = Direction(record["direction"])
    before = MetricValue(record["P_before"], direction)
    after = MetricValue(record["P_after"], direction)
    fn = removal_redundancy if record["form"] == REMOVAL else redundancy_index
    return fn(before, after, epsilon).r


def report_json(report):
    return json.dumps(report.to_dict(), indent=2) + "\n"


def report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in report.to_dict()["stages"]:
        w.writerow(["" if rec.get(c) is None else rec.get(c) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_report(report, fmt="json", path=None):
    """Serialize as JSON or a one-row-per-stage CSV; write to `path` if given."""
    if fmt == "json":
        text = report_json(report)
    elif fmt == "csv":
        text = report_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc
    return text


def strip_wall_clock(d):
    """Copy of a report dict without the timing fields."""
    out = json.loads(json.dumps(d))
    for rec in out.get("stages", []):
        rec.pop("ms", None)
    return out


# --- stage machinery -----------------------------------------------------------------------


def _pixels(frame):
    return frame.pixels.reshape(-1).astype(np.float64) / 255.0


@dataclass
class _State:
    frames: list
    snippets: list
    y: np.ndarray
    groups: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    size: int | None = None
    snippet_len: int = 0
    feats: dict = field(default_factory=dict)
    sensors: list = field(default_factory=lambda: [VISUAL, AUDIO])
    synth_x: np.ndarray | None = None
    synth_y: np.ndarray | None = None
    cols: np.ndarray | None = None
    model: tuple | None = None
    mask: PruneMask | None = None

    def matrix(self):
        x = np.hstack([self.feats[s] for s in self.sensors])
        return x if self.cols is None else x[:, self.cols]

    def use_synthetic(self):
        return self.synth_x is not None and self.sensors == [VISUAL]

    def train_set(self):
        x, y = self.matrix()[self.train], self.y[self.train]
        if self.use_synthetic():
            sx = self.synth_x if self.cols is None else self.synth_x[:, self.cols]
            x, y = np.vstack([x, sx]), np.concatenate([y, self.synth_y])
        return x, y

    def sample_bytes(self):
        """Stored bytes of one registered sample under the current sensors."""
        px = (self.size * self.size) if self.size else self.frames[0].nbytes
        b = px if VISUAL in self.sensors else 0
        return b + (2 * self.snippet_len if AUDIO in self.sensors else 0)

    def data_bytes(self):
        b = self.train.size * self.sample_bytes()
        if self.use_synthetic():
            b += self.synth_x.size * 8
        return int(b)


def _record(stage):
    return {
        "stage": stage,
        "enabled": True,
        "status": "ok",
        "P_before": None,
        "P_after": None,
        "R": None,
        "direction": None,
        "form": None,
        "verdicts": [],
        "details": {},
        "ms": 0.0,
        "bytes_in": None,
        "bytes_out": None,
    }


def _score(rec, before, after, form, eps, direction=Direction.HIGHER_IS_BETTER):
    b, a = MetricValue(before, direction), MetricValue(after, direction)
    score = (removal_redundancy if form == REMOVAL else redundancy_index)(b, a, eps)
    rec.update(P_before=float(before), P_after=float(after), R=score.r, direction=direction.value, form=form)
    rec["details"]["interpretation"] = score.interpretation.value
    return score


def _fit(state, cfg, x, y, x_eval, y_eval, hidden=None):
    """Train on (x, y), score on (x_eval, y_eval); returns (acc, params, spec, scaler)."""
    n_classes = int(state.y.max()) + 1
    if x.shape[1] == 0:
        acc, _ = fit_and_score(np.vstack([x, x_eval]), np.concatenate([y, y_eval]), np.arange(len(y)),
                               np.arange(len(y), len(y) + len(y_eval)), cfg.model, cfg.seed, n_classes)
        return acc, None, None, None
    scaler = Standardizer.fit(x)
    spec = cfg.model.spec_for(x.shape[1], n_classes, seed=cfg.seed, hidden=hidden)
    params, _ = train_mlp(spec, scaler(x), y)
    return evaluate_model(params, spec, scaler(x_eval), y_eval), params, spec, scaler


def _eval_rows(state, rows):
    return state.matrix()[rows], state.y[rows]


def _raw_features(state):
    state.feats[VISUAL] = np.stack([_pixels(f) for f in state.frames])
    state.feats[AUDIO] = np.stack([s.samples[:state.snippet_len] for s in state.snippets])


def _stage_register(state, cfg, params, rec, ctx):
    rec["details"] = {"pairs": len(state.frames), "dropped": ctx["dropped"],
                      "snippet_samples": state.snippet_len}
    rec["bytes_in"] = ctx["source_bytes"]
    rec["bytes_out"] = int(len(state.frames) * (state.frames[0].nbytes + 2 * state.snippet_len))


def _stage_feature_extract(state, cfg, params, rec, ctx):
    window, hop = int(params["audio_window"]), int(params["audio_hop"])
    specs = [stft_spectrogram(s, window, hop, out_size=2) for s in state.snippets]
    sweep = downscale_sweep(state.frames, specs, params["sizes"], params["drift_tol"])
    src = min(min(f.height, f.width) for f in state.frames)
    size = params["size"]
    size = sweep.recommended.get("visual") if size == "auto" else int(size)
    if size is None or not 1 <= size <= src:
        raise ConfigError(f"cannot downscale {src}x{src} frames to {size}")
    table = {s: v for s, v in sweep.visual.items() if v is not None}
    largest = max(table)
    h_sel = table[size].min if size in table else None
    if h_sel is None:
        h_sel = min(image_entropy(resize_image(f, size)) for f in state.frames)
    _score(rec, h_sel, table[largest].min, ADDITION, cfg.epsilon, Direction.LOWER_IS_BETTER)
    n_freq = specs[0].log_magnitude.shape[0]
    a_size = sweep.recommended.get("audio") or min(size, n_freq)
    small = [resize_image(f, size) for f in state.frames]
    x_v = np.stack([_pixels(f) for f in small])
    x_a = np.stack([to_uint8_image(sp.at_size(a_size)).pixels.reshape(-1) / 255.0 for sp in specs])
    k = int(params["pca_k"])
    for name, x in ((VISUAL, x_v), (AUDIO, x_a)):
        kk = max(1, min(k, state.train.size - 1, x.shape[1]))
        model = pca_fit(x[state.train], kk)
        state.feats[name] = model.transform(x)
    bytes_in = sum(f.nbytes for f in state.frames)
    state.size = size
    bytes_out = sum(f.nbytes for f in small)
    rec["bytes_in"], rec["bytes_out"] = int(bytes_in), int(bytes_out)
    rec["details"].update({
        "source_size": src,
        "selected_size": size,
        "recommended": sweep.recommended,
        "sweep": sweep.to_dict(),
        "audio_size": int(a_size),
        "pixel_reduction_factor": bytes_in / bytes_out,
        "features": {s: int(state.feats[s].shape[1]) for s in (VISUAL, AUDIO)},
    })


def _standardized(x):
    return Standardizer.fit(x)(x)


def _stage_downsample(state, cfg, params, rec, ctx):
    frac = float(params["fraction"])
    if not 0 < frac <= 1:
        raise ConfigError("Downsample fraction must lie in (0, 1]")
    x = _standardized(state.matrix()[state.train])
    y = state.y[state.train]
    keep = []
    for c in np.unique(y):
        rows = np.flatnonzero(y == c)
        target = min(rows.size, max(2, int(round(frac * rows.size))))
        keep.extend(rows[greedy_diverse_subset(x[rows], target, params["metric"], cfg.seed)])
    keep = np.sort(np.asarray(keep, dtype=np.int64))
    full = avg_pairwise_distance(x, params["metric"], seed=cfg.seed)
    sub = avg_pairwise_distance(x[keep], params["metric"], seed=cfg.seed)
    _score(rec, full, sub, REMOVAL, cfg.epsilon)
    rec["bytes_in"] = state.data_bytes()
    state.train = state.train[keep]
    rec["bytes_out"] = state.data_bytes()
    rec["details"].update({"kept": int(keep.size), "from": int(y.size), "measure": "avg_pairwise_distance"})


def _stage_synthesize(state, cfg, params, rec, ctx):
    x = state.feats[VISUAL][state.train]
    y = state.y[state.train]
    before = group_stats(y)
    xs, ys = smote_oversample(x, y, float(params["target_ratio"]), int(params["k"]), cfg.seed)
    after = group_stats(ys)
    minority = int(np.argmin(before.counts))
    _score(rec, before.rates[minority], after.rates[minority], ADDITION, cfg.epsilon)
    rec["bytes_in"] = state.data_bytes()
    state.synth_x, state.synth_y = xs[y.size:], ys[y.size:]
    rec["bytes_out"] = int(rec["bytes_in"] + state.synth_x.size * 8)
    details = {"synthetic": int(state.synth_y.size), "groups_before": before.to_dict(),
               "groups_after": after.to_dict(), "measure": "minority_rate", "modality": VISUAL}
    if ctx.get("subgroups") is not None:
        details["subgroups"] = group_stats(ctx["subgroups"][state.train]).to_dict()
    rec["details"].update(details)


def _stage_sensor_enhance(state, cfg, params, rec, ctx):
    tau = float(params["tau_model"])
    res = sensor_verdicts(state.feats[VISUAL], state.feats[AUDIO], state.y, state.train, state.val,
                          cfg.model, cfg.seed, tau)
    rec["verdicts"] = [v.to_dict() for v in res]
    # consider the sensor whose removal costs least; ties prefer dropping audio
    cand = res.audio if res.audio.r.r >= res.visual.r.r else res.visual
    other = VISUAL if cand.sensor_id == AUDIO else AUDIO
    _score(rec, res.accuracies[other], res.accuracies["fusion"], ADDITION, cfg.epsilon)
    rec["bytes_in"] = state.data_bytes()
    removed = None
    if rec["R"] >= 1.0 - tau:
        removed = cand.sensor_id
        state.sensors = [other]
        state.cols = None
    ctx["fusion_acc"] = res.accuracies["fusion"]
    ctx["removed"] = removed
    rec["bytes_out"] = state.data_bytes()
    rec["details"].update({"candidate": cand.sensor_id, "removed": removed, "accuracies": res.accuracies,
                           "mapping_mse": res.mapping_mse})


def _stage_reprocess(state, cfg, params, rec, ctx):
    removed = ctx.get("removed")
    rec["details"]["removed"] = removed
    rec["bytes_in"] = rec["bytes_out"] = state.data_bytes()
    if removed is None:
        rec["details"]["note"] = "no sensor removed"
        return
    # the surviving sensor keeps its fitted preprocessing; synthetic rows join its training set
    x, y = state.train_set()
    x_val, y_val = _eval_rows(state, state.val)
    acc = _fit(state, cfg, x, y, x_val, y_val)[0]
    fusion = ctx.get("fusion_acc")
    _score(rec, fusion, acc.value, REMOVAL, cfg.epsilon)
    rec["details"].update({"surviving": list(state.sensors), "train_rows": int(len(y)),
                           "synthetic_used": bool(state.use_synthetic())})


def _stage_feature_select(state, cfg, params, rec, ctx):
    x, y = state.train_set()
    res = select_features(x, y, FORWARD, params["max_features"], float(params["min_gain"]), bins=int(params["bins"]),
                          seed=cfg.seed)
    cols = list(res.indices)
    if not cols:
        first = res.trail[0]
        cols = [int(first["feature"])]
    x_val, y_val = _eval_rows(state, state.val)
    full = _fit(state, cfg, x, y, x_val, y_val)[0]
    sub = _fit(state, cfg, x[:, cols], y, x_val[:, cols], y_val)[0]
    _score(rec, full.value, sub.value, REMOVAL, cfg.epsilon)
    rec["bytes_in"] = int(x.size * 8)
    rec["bytes_out"] = int(len(y) * len(cols) * 8)
    base = np.arange(x.shape[1]) if state.cols is None else state.cols
    state.cols = np.asarray(base)[cols]
    rec["details"].update({"selected": [int(c) for c in cols], "from": int(x.shape[1]),
                           "trail": res.trail, "bins": int(params["bins"])})


def _stage_capacity(state, cfg, params, rec, ctx):
    x, y = state.train_set()
    x_val, y_val = _eval_rows(state, state.val)
    xx, yy = np.vstack([x, x_val]), np.concatenate([y, y_val])
    split = (np.arange(len(y)), np.arange(len(y), len(yy)))
    res = capacity_search(xx, yy, params["widths"], cfg.model, float(params["tol"]), cfg.seed, split=split)
    widest = max(res.accuracies)
    _score(rec, res.accuracies[res.chosen], res.accuracies[widest], ADDITION, cfg.epsilon)
    hidden = (res.chosen,) * max(len(cfg.model.hidden), 1)
    _, p, spec, scaler = _fit(state, cfg, x, y, x_val, y_val, hidden=hidden)
    wide_spec = cfg.model.spec_for(x.shape[1], spec.layer_sizes[-1], hidden=(widest,) * len(hidden))
    state.model = (p, spec, scaler)
    rec["bytes_in"] = int(8 * wide_spec.n_params)
    rec["bytes_out"] = int(8 * spec.n_params)
    rec["details"].update({"chosen": res.chosen, "accuracies": res.accuracies, "widths": list(params["widths"])})


def _ensure_model(state, cfg):
    if state.model is None:
        x, y = state.train_set()
        x_val, y_val = _eval_rows(state, state.val)
        _, p, spec, scaler = _fit(state, cfg, x, y, x_val, y_val)
        state.model = (p, spec, scaler)
    return state.model


def _stage_prune(state, cfg, params, rec, ctx):
    p, spec, scaler = _ensure_model(state, cfg)
    if p is None:
        raise ConfigError("nothing to prune: the feature set is empty")
    x_val, y_val = _eval_rows(state, state.val)
    res = l1_prune_search(p, spec, scaler(x_val), y_val, float(params["step"]), float(params["tol"]))
    _score(rec, res.baseline.value, res.pruned.value, REMOVAL, cfg.epsilon)
    state.mask = res.mask
    rec["bytes_in"] = int(8 * p.n_params)
    rec["bytes_out"] = _masked_bytes(p.n_params, res.mask)
    rec["details"].update({"sparsity": res.mask.sparsity, "pruned": res.mask.n_pruned,
                           "curve_points": len(res.curve)})


def _masked_bytes(n_params, mask):
    """Values of the kept parameters plus a one-bit-per-parameter keep map."""
    kept = n_params if mask is None else int(mask.keep.sum())
    return int(8 * kept + (n_params + 7) // 8)


_RUNNERS = {
    "Register": _stage_register,
    "FeatureExtract": _stage_feature_extract,
    "Downsample": _stage_downsample,
    "Synthesize": _stage_synthesize,
    "SensorEnhance": _stage_sensor_enhance,
    "Reprocess": _stage_reprocess,
    "FeatureSelect": _stage_feature_select,
    "CapacitySearch": _stage_capacity,
    "Prune": _stage_prune,
}


def _register(dataset, cfg):
    reg = register_streams(dataset.video, dataset.audio)
    if not reg.pairs:
        raise ManifestError("registration produced no frame/audio pairs", str(dataset.manifest.audio_path))
    missing = [p.frame_index for p in reg.pairs if p.frame_index not in dataset.labels]
    if missing:
        raise ManifestError(f"{len(missing)} registered frames lack labels (first: {missing[0]})",
                            str(dataset.manifest.labels_path))
    y = np.array([dataset.labels[p.frame_index] for p in reg.pairs], dtype=np.int64)
    if np.any(y < 0):
        raise ManifestError("labels must be nonnegative integers", str(dataset.manifest.labels_path))
    groups = None
    if dataset.subgroups is not None:
        groups = np.array([dataset.subgroups.get(p.frame_index, -1) for p in reg.pairs], dtype=np.int64)
        if np.any(groups < 0):
            raise ManifestError("subgroups do not cover every registered frame",
                                str(dataset.manifest.subgroups_path))
    train, val, test = stratified_split(y, cfg.split_ratios, cfg.seed)
    state = _State([p.frame for p in reg.pairs], [p.snippet for p in reg.pairs], y, groups, train, val, test)
    state.snippet_len = min(s.samples.size for s in state.snippets)
    return state, reg.dropped


def run_pipeline(cfg, dataset):
    """Run the enabled stages in their fixed order and build the report.

    Registration always runs.  A failing stage is recorded with its error,
    later enabled stages are marked skipped and the report status becomes
    ``"failed"``.
    """
    report = RedundancyReport(__version__, cfg.hash(), cfg.seed)
    state, dropped = _register(dataset, cfg)
    _raw_features(state)
    ctx = {"dropped": dropped, "source_bytes": dataset.source_bytes, "subgroups": state.groups}
    report.dataset = {
        "frames": len(dataset.video.frames),
        "registered": len(state.frames),
        "dropped": dropped,
        "class_counts": np.bincount(state.y).tolist(),
        "split": {"train": int(state.train.size), "val": int(state.val.size), "test": int(state.test.size)},
    }
    failed = False
    for sc in cfg.stages:
        if not sc.enabled:
            continue
        rec = _record(sc.stage)
        if failed:
            rec["status"] = "skipped"
            report.stages.append(rec)
            continue
        t0 = time.perf_counter()
        try:
            _RUNNERS[sc.stage](state, cfg, sc.params, rec, ctx)
        except (MlrmError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            rec["status"] = "failed"
            rec["error"] = f"{type(exc).__name__}: {exc}"
            failed = True
        rec["ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
        report.stages.append(rec)
    if failed:
        report.status = "failed"
        return report
    report.final = _final_metrics(state, cfg)
    return report


def _final_metrics(state, cfg):
    p, spec, scaler = _ensure_model(state, cfg)
    x_test, y_test = _eval_rows(state, state.test)
    if p is None:
        x, y = state.train_set()
        acc = _fit(state, cfg, x, y, x_test, y_test)[0]
        return {"balanced_accuracy": acc.value, "param_count": 0, "nonzero_params": 0, "sparsity": 0.0,
                "model_bytes": 0, "data_bytes": state.data_bytes(), "stored_bytes": state.data_bytes(),
                "sensors": list(state.sensors)}
    acc = evaluate_model(p, spec, scaler(x_test), y_test, state.mask)
    n_p = p.n_params
    kept = n_p if state.mask is None else int(state.mask.keep.sum())
    model_bytes = len(encode_params(p, spec)) if state.mask is None else _masked_bytes(n_p, state.mask)
    return {
        "balanced_accuracy": acc.value,
        "param_count": n_p,
        "nonzero_params": kept,
        "sparsity": 0.0 if state.mask is None else state.mask.sparsity,
        "architecture": list(spec.layer_sizes),
        "model_bytes": int(model_bytes),
        "data_bytes": state.data_bytes(),
        "stored_bytes": int(model_bytes + state.data_bytes()),
        "sensors": list(state.sensors),
        "features": int(state.matrix().shape[1]),
    }


def with_overrides(cfg, seed=None, epsilon=None, bins=None):
    """Copy of `cfg` with command-line overrides applied."""
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if epsilon is not None:
        cfg = replace(cfg, epsilon=float(epsilon))
    if bins is not None:
        stages = [replace(s, params={**s.params, "bins": int(bins)}) if s.stage == "FeatureSelect" else s
                  for s in cfg.stages]
        cfg = replace(cfg, stages=stages)
    return cfg
