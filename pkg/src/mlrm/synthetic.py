"""Synthetic audio-visual monitoring corpus used by `mlrm gen synthetic`.

Each camera frame shows a bright Gaussian spot on a smooth background;
its size and brightness depend on the frame's class.  The microphone track
carries a class-dependent tone over broadband noise, so the audio holds the
same class information as the images.  Class 0 makes up about two thirds of
the frames.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .io import write_pgm, write_wav
from .signal_prep import AUDIO_RATE, CAMERA_RATE

MAJORITY_RATE = 3260 / (3260 + 1585)
TONES_HZ = (1800.0, 3100.0)


def make_frame(label, size, rng):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    background = 40.0 + 40.0 * yy
    cy, cx = 0.5 + rng.uniform(-0.06, 0.06, 2)
    radius = (0.10, 0.125)[label] * rng.uniform(0.85, 1.15)
    peak = (190.0, 160.0)[label] * rng.uniform(0.9, 1.1)
    spot = peak * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2))
    img = background + spot + rng.normal(0.0, 6.0, (size, size))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def make_audio(labels, rate=AUDIO_RATE, camera_rate=CAMERA_RATE, rng=None):
    rng = rng or np.random.default_rng(0)
    n = int(round(len(labels) * rate / camera_rate))
    t = np.arange(n) / rate
    frame_of = np.minimum((t * camera_rate).astype(np.int64), len(labels) - 1)
    freq = np.asarray(TONES_HZ)[np.asarray(labels)[frame_of]]
    x = 0.25 * np.sin(2 * np.pi * freq * t) + rng.normal(0.0, 0.3, n)
    return np.clip(x, -1.0, 32767 / 32768)


def default_config(seed=0):
    return {
        "seed": seed,
        "split_ratios": [0.8, 0.1, 0.1],
        "stages": [
            {"stage": "Register", "enabled": True},
            {"stage": "FeatureExtract", "enabled": True, "params": {"size": 80}},
            {"stage": "Downsample", "enabled": True},
            {"stage": "Synthesize", "enabled": True},
            {"stage": "SensorEnhance", "enabled": True},
            {"stage": "Reprocess", "enabled": True},
            {"stage": "FeatureSelect", "enabled": True},
            {"stage": "CapacitySearch", "enabled": True},
            {"stage": "Prune", "enabled": True},
        ],
    }


def generate_corpus(out_dir, seed=0, n_frames=240, size=320):
    """Write frames/*.pgm, audio.wav, labels.csv, manifest.json and config.json."""
    out = Path(out_dir)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    labels = (rng.uniform(size=n_frames) >= MAJORITY_RATE).astype(np.int64)
    # both classes must be present for a stratified split
    labels[:3] = 0
    labels[3:6] = 1
    labels = rng.permutation(labels)
    for i, lab in enumerate(labels):
        write_pgm(frames_dir / f"frame_{i:05d}.pgm", make_frame(int(lab), size, rng))
    write_wav(out / "audio.wav", make_audio(labels, rng=rng), AUDIO_RATE)
    with open(out / "labels.csv", "w", encoding="ascii") as fh:
        fh.write("frame_index,label\n")
        for i, lab in enumerate(labels):
            fh.write(f"{i},{int(lab)}\n")
    manifest = {
        "video": {"dir": "frames", "nominal_rate": CAMERA_RATE},
        "audio": {"path": "audio.wav"},
        "labels": "labels.csv",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "config.json").write_text(json.dumps(default_config(seed), indent=2) + "\n")
    return out / "manifest.json", out / "config.json"
