"""Multisensor registration, block-average downscaling, spectrograms and the
entropy sweep used to pick a downscaled size."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_metrics import EPSILON, MetricValue, redundancy_index, shannon_entropy
from .errors import ClipTooShort, EmptyInput, InvalidKernel, InvalidSize, NoOverlap

IMAGE = "image"
AUDIO = "audio"
CAMERA_RATE = 30.0
AUDIO_RATE = 44_100


@dataclass
class ImageFrame:
    pixels: np.ndarray  # (height, width) uint8
    timestamp: float = 0.0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise EmptyInput(f"image must be a nonempty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise ValueError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px
        if not (math.isfinite(self.timestamp) and self.timestamp >= 0):
            raise ValueError(f"timestamp must be finite and nonnegative, got {self.timestamp}")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def nbytes(self):
        return int(self.pixels.size)


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: float
    start_time: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.samples.size == 0:
            raise EmptyInput("audio clip has no samples")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    @property
    def end_time(self):
        return self.start_time + self.duration


@dataclass
class SensorStream:
    modality: str
    nominal_rate: float
    frames: list = field(default_factory=list)
    clip: AudioClip | None = None

    def __post_init__(self):
        if not self.nominal_rate > 0:
            raise ValueError("nominal_rate must be positive")
        if self.modality == IMAGE:
            ts = [f.timestamp for f in self.frames]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("image timestamps must be strictly increasing")
        elif self.modality == AUDIO:
            if self.clip is None:
                raise ValueError("audio stream needs a clip")
        else:
            raise ValueError(f"unknown modality {self.modality!r}")

    @classmethod
    def video(cls, frames, rate=CAMERA_RATE):
        return cls(IMAGE, rate, frames=list(frames))

    @classmethod
    def audio(cls, clip):
        return cls(AUDIO, clip.sample_rate, clip=clip)


@dataclass
class AlignedPair:
    frame: ImageFrame
    snippet: AudioClip
    label: int | None = None
    frame_index: int = 0


@dataclass
class Registration:
    pairs: list
    dropped: int


def register_streams(video, audio):
    """Pair every frame at time t with the audio window [t, t + 1/camera_rate).

    Window bounds are ``round((t - audio_start) * rate)`` sample indices.
    Frames whose window falls outside the recording are dropped and counted.
    """
    clip = audio.clip
    period = 1.0 / video.nominal_rate
    frames = video.frames
    if not frames:
        raise NoOverlap("video stream has no frames")
    v_start, v_end = frames[0].timestamp, frames[-1].timestamp + period
    if min(v_end, clip.end_time) <= max(v_start, clip.start_time):
        raise NoOverlap(
            f"video [{v_start:.4f}, {v_end:.4f}) s and audio [{clip.start_time:.4f}, {clip.end_time:.4f}) s do not overlap"
        )
    rate = clip.sample_rate
    pairs, dropped = [], 0
    for i, fr in enumerate(frames):
        rel = fr.timestamp - clip.start_time
        lo = int(round(rel * rate))
        hi = int(round((rel + period) * rate))
        if lo < 0 or hi > clip.samples.size or hi <= lo:
            dropped += 1
            continue
        snippet = AudioClip(clip.samples[lo:hi], rate, fr.timestamp)
        pairs.append(AlignedPair(fr, snippet, frame_index=i))
    return Registration(pairs, dropped)


# --- block averaging ----------------------------------------------------------------


def _partition(n, parts):
    """Start index and length of `parts` near-equal blocks covering range(n).

    With parts > n blocks repeat source cells (nearest replication).
    """
    starts = (np.arange(parts) * n) // parts
    ends = np.append(starts[1:], n)
    lengths = np.where(ends > starts, ends - starts, 1)
    return starts, lengths


def _block_sums(a, row_starts, col_starts):
    s = np.add.reduceat(a, row_starts, axis=0)
    return np.add.reduceat(s, col_starts, axis=1)


def _round_half_up(sums, counts):
    sums = sums.astype(np.int64)
    return ((2 * sums + counts) // (2 * counts)).astype(np.uint8)


def avg_pool_downscale(img, k):
    """Average each k x k block (partial edge blocks over their actual extent).

    Output pixels are the block mean rounded half up.
    """
    if int(k) != k or k < 1:
        raise InvalidKernel(f"kernel must be a positive integer, got {k}")
    k = int(k)
    px = img.pixels.astype(np.int64)
    h, w = px.shape
    rs, cs = np.arange(0, h, k), np.arange(0, w, k)
    rl = np.minimum(rs + k, h) - rs
    cl = np.minimum(cs + k, w) - cs
    out = _round_half_up(_block_sums(px, rs, cs), rl[:, None] * cl[None, :])
    return ImageFrame(out, img.timestamp)


def block_resize(a, out_h, out_w):
    """Resize a float matrix by averaging near-equal blocks."""
    a = np.asarray(a, dtype=np.float64)
    rs, rl = _partition(a.shape[0], out_h)
    cs, cl = _partition(a.shape[1], out_w)
    return _block_sums(a, rs, cs) / (rl[:, None] * cl[None, :])


def resize_image(img, size):
    """Block-average an image down to size x size (no upsampling)."""
    if size < 1 or size > min(img.height, img.width):
        raise InvalidSize(f"cannot produce {size}x{size} from {img.height}x{img.width}")
    px = img.pixels.astype(np.int64)
    rs, rl = _partition(img.height, size)
    cs, cl = _partition(img.width, size)
    return ImageFrame(_round_half_up(_block_sums(px, rs, cs), rl[:, None] * cl[None, :]), img.timestamp)


def image_entropy(img):
    """Entropy (bits) of the 256-bin intensity histogram."""
    px = img.pixels if isinstance(img, ImageFrame) else np.asarray(img, dtype=np.uint8)
    if px.size == 0:
        raise EmptyInput("empty image")
    return shannon_entropy(np.bincount(px.ravel(), minlength=256))


# --- spectrograms ---------------------------------------------------------------------


def periodic_hann(n):
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft_magnitude(samples, window=1024, hop=512):
    """|STFT| with a periodic Hann window, shape (window // 2 + 1, n_frames)."""
    x = np.asarray(samples, dtype=np.float64)
    if window < 16 or window & (window - 1):
        raise InvalidSize(f"window must be a power of two >= 16, got {window}")
    if not 1 <= hop <= window:
        raise InvalidSize(f"hop must be in [1, window], got {hop}")
    if x.size < window:
        raise ClipTooShort(f"clip has {x.size} samples, window needs {window}")
    n_frames = 1 + (x.size - window) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:n_frames]
    return np.abs(np.fft.rfft(frames * periodic_hann(window), axis=1)).T


@dataclass
class Spectrogram:
    values: np.ndarray  # (S, S) log-magnitude after resizing
    log_magnitude: np.ndarray  # (F, T) before resizing

    def at_size(self, size):
        return block_resize(self.log_magnitude, size, size)


def stft_spectrogram(clip, window=1024, hop=512, out_size=80):
    """log(1 + |STFT|) resized to out_size x out_size by block averaging."""
    if out_size < 2:
        raise InvalidSize("out_size must be >= 2")
    samples = clip.samples if isinstance(clip, AudioClip) else clip
    logmag = np.log1p(stft_magnitude(samples, window, hop))
    return Spectrogram(block_resize(logmag, out_size, out_size), logmag)


def to_uint8_image(values, timestamp=0.0):
    """Min-max scale a real matrix to 8-bit intensities (constant -> all zero)."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return ImageFrame(np.zeros(v.shape, dtype=np.uint8), timestamp)
    return ImageFrame(np.floor((v - lo) / (hi - lo) * 255 + 0.5).astype(np.uint8), timestamp)


# --- entropy sweep -----------------------------------------------------------------------


@dataclass(frozen=True)
class EntropyStats:
    mean: float
    min: float
    max: float

    @classmethod
    def of(cls, values):
        v = np.asarray(values, dtype=np.float64)
        return cls(float(v.mean()), float(v.min()), float(v.max()))

    def to_dict(self):
        return {"mean": self.mean, "min": self.min, "max": self.max}


def size_increase_redundancy(min_entropy_small, min_entropy_large, epsilon=EPSILON):
    """Redundancy of growing from a small to a larger size, judged on the
    shift of minimum entropy (the lower minimum at the larger size counts as
    no gain): ``1 - (H_small - H_large) / |H_small|``."""
    return redundancy_index(MetricValue.lower(min_entropy_small), MetricValue.lower(min_entropy_large), epsilon)


def recommend_size(min_entropies, drift_tol=0.20):
    """Smallest size whose minimum entropy drifts at most `drift_tol` from the
    largest size's, with drift = |1 - R(size -> largest)|.

    `min_entropies` maps size -> minimum entropy (None for unproducible).
    """
    avail = sorted(s for s, v in min_entropies.items() if v is not None)
    if not avail:
        return None
    largest = avail[-1]
    for s in avail:
        r = size_increase_redundancy(min_entropies[s], min_entropies[largest]).r
        if abs(1.0 - r) <= drift_tol:
            return s
    return largest


@dataclass
class SweepResult:
    sizes: list
    visual: dict
    audio: dict
    recommended: dict
    steps: list

    @property
    def recommended_size(self):
        picks = [v for v in self.recommended.values() if v is not None]
        return max(picks) if picks else None

    def to_dict(self):
        def table(d):
            return {str(s): (None if v is None else v.to_dict()) for s, v in d.items()}

        return {
            "sizes": list(self.sizes),
            "visual": table(self.visual),
            "audio": table(self.audio),
            "recommended": dict(self.recommended),
            "recommended_size": self.recommended_size,
            "steps": list(self.steps),
        }


def downscale_sweep(images, audio_specs=(), sizes=(20, 40, 80, 160, 320), drift_tol=0.20):
    """Entropy statistics of the corpus at every candidate size.

    Images are block-averaged to each size (sizes above the smallest source
    side are NA).  Spectrograms are resized from their log-magnitude and
    rendered to 8-bit; sizes above the frequency-bin count are NA.
    """
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
        raise InvalidSize("sizes must be strictly ascending")
    images = list(images)
    audio_specs = list(audio_specs)
    visual, audio = {}, {}
    if images:
        side = min(min(im.height, im.width) for im in images)
        for s in sizes:
            visual[s] = EntropyStats.of([image_entropy(resize_image(im, s)) for im in images]) if s <= side else None
    if audio_specs:
        n_freq = min(sp.log_magnitude.shape[0] for sp in audio_specs)
        for s in sizes:
            if s <= n_freq:
                visual_like = [image_entropy(to_uint8_image(sp.at_size(s))) for sp in audio_specs]
                audio[s] = EntropyStats.of(visual_like)
            else:
                audio[s] = None
    recommended, steps = {}, []
    for name, table in (("visual", visual), ("audio", audio)):
        if not table:
            continue
        mins = {s: (v.min if v is not None else None) for s, v in table.items()}
        recommended[name] = recommend_size(mins, drift_tol)
        avail = [s for s in sizes if mins[s] is not None]
        for a, b in zip(avail, avail[1:]):
            score = size_increase_redundancy(mins[a], mins[b])
            steps.append({"modality": name, "from": a, "to": b, "p_before": mins[a], "p_after": mins[b],
                          "r": score.r})
    return SweepResult(sizes, visual, audio, recommended, steps)
