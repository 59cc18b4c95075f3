"""Feature-sequence ingestion, temporal alignment and the synthetic data generator.

File formats (all little-endian):

* feature matrix: ``b"FWF1"``, uint32 rows, uint32 cols, rows*cols float32 row-major
* labels: ``b"FWL1"``, uint32 T, T int8 labels in {-1, 0..7}
* manifest: UTF-8 JSON array of entries with keys ``video_id``, ``visual_path``,
  ``audio_path``, ``labels_path``, ``raw_audio_len`` and ``split``; paths are
  relative to the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

N_CLASSES = 8
CLASS_NAMES = ("neutral", "anger", "disgust", "fear", "happiness", "sadness", "surprise", "other")

MATRIX_MAGIC = b"FWF1"
LABELS_MAGIC = b"FWL1"
_HEADER = struct.Struct("<4sII")
_LABEL_HEADER = struct.Struct("<4sI")


class LoadError(ValueError):
    def __init__(self, path, offset: int, message: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path} @ {offset}: {message}")


class SynthSpecError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class FeatureSequence:
    video_id: str
    visual: np.ndarray  # (T, d_v) float32
    audio: np.ndarray  # (T, d_a) float32
    labels: np.ndarray  # (T,) int64 in {-1, 0..7}
    frame_rate: float = 30.0

    def __post_init__(self):
        T = len(self.labels)
        if T < 1:
            raise ValueError(f"{self.video_id}: empty sequence")
        if self.visual.shape[0] != T or self.audio.shape[0] != T:
            raise ValueError(
                f"{self.video_id}: rows visual={self.visual.shape[0]} audio={self.audio.shape[0]} labels={T}"
            )
        if np.any((self.labels < -1) | (self.labels >= N_CLASSES)):
            raise ValueError(f"{self.video_id}: label outside {{-1, 0..7}}")

    @property
    def T(self) -> int:
        return len(self.labels)


# --------------------------------------------------------------------------- binary io


def write_matrix(path, m: np.ndarray) -> None:
    m = np.ascontiguousarray(m, dtype="<f4")
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes(), path)


def encode_matrix(m: np.ndarray) -> bytes:
    m = np.ascontiguousarray(m, dtype="<f4")
    return _HEADER.pack(MATRIX_MAGIC, m.shape[0], m.shape[1]) + m.tobytes()


def decode_matrix(buf: bytes, path="<bytes>", offset: int = 0) -> np.ndarray:
    if len(buf) - offset < _HEADER.size:
        raise LoadError(path, offset, "truncated header")
    magic, rows, cols = _HEADER.unpack_from(buf, offset)
    if magic != MATRIX_MAGIC:
        raise LoadError(path, offset, f"bad magic {magic!r}")
    start = offset + _HEADER.size
    need = rows * cols * 4
    if len(buf) - start < need:
        raise LoadError(path, len(buf), f"truncated data: need {need} bytes for {rows}x{cols}")
    data = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=start)
    return data.reshape(rows, cols).astype(np.float32)


def write_labels(path, labels: Sequence[int]) -> None:
    lab = np.asarray(labels, dtype=np.int64)
    if np.any((lab < -1) | (lab >= N_CLASSES)):
        raise ValueError("labels must lie in {-1, 0..7}")
    with open(path, "wb") as fh:
        fh.write(_LABEL_HEADER.pack(LABELS_MAGIC, len(lab)))
        fh.write(lab.astype("i1").tobytes())


def read_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _LABEL_HEADER.size:
        raise LoadError(path, 0, "truncated header")
    magic, T = _LABEL_HEADER.unpack_from(buf, 0)
    if magic != LABELS_MAGIC:
        raise LoadError(path, 0, f"bad magic {magic!r}")
    if len(buf) - _LABEL_HEADER.size < T:
        raise LoadError(path, len(buf), f"truncated data: need {T} labels")
    lab = np.frombuffer(buf, dtype="i1", count=T, offset=_LABEL_HEADER.size).astype(np.int64)
    bad = np.nonzero((lab < -1) | (lab >= N_CLASSES))[0]
    if len(bad):
        i = int(bad[0])
        raise LoadError(path, _LABEL_HEADER.size + i, f"label {lab[i]} at frame {i} outside {{-1, 0..7}}")
    return lab


# --------------------------------------------------------------------------- manifests


def read_manifest(path) -> list[dict]:
    path = Path(path)
    entries = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(entries, list):
        raise LoadError(path, 0, "manifest must be a JSON array")
    required = {"video_id", "visual_path", "audio_path", "labels_path", "raw_audio_len"}
    seen = set()
    for i, e in enumerate(entries):
        missing = required - set(e)
        if missing:
            raise LoadError(path, i, f"entry {i} missing {sorted(missing)}")
        if e["video_id"] in seen:
            raise LoadError(path, i, f"duplicate video_id {e['video_id']!r}")
        seen.add(e["video_id"])
        e["_root"] = str(path.parent)
    return entries


def write_manifest(path, entries: list[dict]) -> None:
    clean = [{k: v for k, v in e.items() if not k.startswith("_")} for e in entries]
    Path(path).write_text(json.dumps(clean, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _resolve(entry: dict, key: str) -> Path:
    p = Path(entry[key])
    if not p.is_absolute() and "_root" in entry:
        p = Path(entry["_root"]) / p
    return p


def load_sequence(entry: dict, d_v: int, d_a: int) -> FeatureSequence:
    """Read one manifest entry and return it with audio aligned to the video frames."""
    vpath, apath, lpath = (_resolve(entry, k) for k in ("visual_path", "audio_path", "labels_path"))
    visual = read_matrix(vpath)
    audio = read_matrix(apath)
    labels = read_labels(lpath)
    if visual.shape[1] != d_v:
        raise LoadError(vpath, 8, f"cols {visual.shape[1]} != declared d_v {d_v}")
    if audio.shape[1] != d_a:
        raise LoadError(apath, 8, f"cols {audio.shape[1]} != declared d_a {d_a}")
    if visual.shape[0] != len(labels):
        raise LoadError(vpath, 4, f"rows {visual.shape[0]} != label count {len(labels)}")
    if int(entry["raw_audio_len"]) != audio.shape[0]:
        raise LoadError(apath, 4, f"rows {audio.shape[0]} != raw_audio_len {entry['raw_audio_len']}")
    if len(labels) < 1:
        raise LoadError(lpath, 4, "empty sequence")
    audio = align_audio(audio, len(labels))
    return FeatureSequence(
        str(entry["video_id"]), visual, audio, labels, float(entry.get("frame_rate", 30.0))
    )


def load_manifest(path, d_v: int, d_a: int) -> list[FeatureSequence]:
    return [load_sequence(e, d_v, d_a) for e in read_manifest(path)]


# --------------------------------------------------------------------------- alignment


def align_audio(audio: np.ndarray, target_len: int) -> np.ndarray:
    """Linearly resample ``audio`` rows to ``target_len`` with endpoints mapped to endpoints."""
    audio = np.asarray(audio, dtype=np.float32)
    Ta = audio.shape[0]
    if Ta < 1 or target_len < 1:
        raise ValueError("align_audio needs at least one source and one target row")
    if Ta == target_len:
        return audio.copy()
    if Ta == 1 or target_len == 1:
        return np.repeat(audio[:1], target_len, axis=0)
    pos = np.arange(target_len, dtype=np.float64) * (Ta - 1) / (target_len - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), Ta - 1)
    hi = np.minimum(lo + 1, Ta - 1)
    frac = (pos - lo)[:, None]
    src = audio.astype(np.float64)
    out = (1.0 - frac) * src[lo] + frac * src[hi]
    return out.astype(np.float32)


def context_pool(audio: np.ndarray, frame: int, radius: int = 18) -> np.ndarray:
    """Mean of the rows within ``radius`` frames of ``frame``, clipped at the edges."""
    T = audio.shape[0]
    if not 0 <= frame < T:
        raise IndexError(f"frame {frame} outside [0, {T})")
    lo, hi = max(0, frame - radius), min(T - 1, frame + radius)
    return audio[lo : hi + 1].astype(np.float64).mean(axis=0).astype(np.float32)


def context_pool_all(audio: np.ndarray, radius: int = 18) -> np.ndarray:
    """:func:`context_pool` for every frame at once (prefix sums)."""
    T = audio.shape[0]
    csum = np.zeros((T + 1, audio.shape[1]), dtype=np.float64)
    np.cumsum(audio.astype(np.float64), axis=0, out=csum[1:])
    t = np.arange(T)
    lo = np.maximum(0, t - radius)
    hi = np.minimum(T - 1, t + radius) + 1
    return ((csum[hi] - csum[lo]) / (hi - lo)[:, None]).astype(np.float32)


# --------------------------------------------------------------------------- synthetic data


@dataclass
class SynthSpec:
    """Generator settings. Visual features identify every class; audio means of
    ``confusable_pair`` coincide, so audio alone cannot separate that pair."""

    n_videos: int = 24
    n_val_videos: int = 8
    T_range: tuple[int, int] = (200, 400)
    d_v: int = 16
    d_a: int = 8
    class_priors: tuple[float, ...] = (0.4, 0.3, 0.1, 0.06, 0.05, 0.04, 0.03, 0.02)
    missing_rate: float = 0.05
    label_rule: str = "segments"  # "segments" | "iid"
    segment_range: tuple[int, int] = (30, 120)
    noise_v: float = 1.0
    noise_a: float = 1.0
    mean_scale_v: float = 1.0
    mean_scale_a: float = 1.0
    confusable_pair: tuple[int, int] = (0, 1)
    audio_rate_ratio: float = 50.0 / 30.0
    blackout_rate: float = 0.0
    blackout_len: int = 64
    frame_rate: float = 30.0

    def validate(self) -> None:
        pri = np.asarray(self.class_priors, dtype=np.float64)
        if pri.shape != (N_CLASSES,):
            raise SynthSpecError("class_priors", f"need {N_CLASSES} entries, got {pri.size}")
        if np.any(pri < 0) or abs(pri.sum() - 1.0) > 1e-6:
            raise SynthSpecError("class_priors", f"must be non-negative and sum to 1 (sum={pri.sum():.6f})")
        if self.n_videos < 1 or self.n_val_videos < 0:
            raise SynthSpecError("n_videos", "need at least one training video")
        lo, hi = self.T_range
        if not 1 <= lo <= hi:
            raise SynthSpecError("T_range", f"need 1 <= min <= max, got {self.T_range}")
        if self.d_v < 2:
            raise SynthSpecError("d_v", "must be >= 2")
        if self.d_a < 2:
            raise SynthSpecError("d_a", "must be >= 2")
        if not 0.0 <= self.missing_rate < 1.0:
            raise SynthSpecError("missing_rate", "must lie in [0, 1)")
        if self.label_rule not in ("segments", "iid"):
            raise SynthSpecError("label_rule", f"unknown rule {self.label_rule!r}")
        s0, s1 = self.segment_range
        if not 1 <= s0 <= s1:
            raise SynthSpecError("segment_range", f"need 1 <= min <= max, got {self.segment_range}")
        for name in ("noise_v", "noise_a", "mean_scale_v", "mean_scale_a"):
            if getattr(self, name) < 0:
                raise SynthSpecError(name, "must be non-negative")
        a, b = self.confusable_pair
        if a == b or not (0 <= a < N_CLASSES and 0 <= b < N_CLASSES):
            raise SynthSpecError("confusable_pair", f"need two distinct classes, got {self.confusable_pair}")
        if self.audio_rate_ratio <= 0:
            raise SynthSpecError("audio_rate_ratio", "must be positive")
        if not 0.0 <= self.blackout_rate <= 1.0:
            raise SynthSpecError("blackout_rate", "must lie in [0, 1]")
        if self.blackout_len < 1:
            raise SynthSpecError("blackout_len", "must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SynthSpecError(sorted(unknown)[0], "unknown field")
        kw = dict(d)
        for k in ("T_range", "segment_range", "confusable_pair", "class_priors"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthWorld:
    """Class-conditional means shared by every video of one generated dataset."""

    visual_means: np.ndarray  # (8, d_v)
    audio_means: np.ndarray  # (8, d_a)
    priors: np.ndarray


def synthetic_world(spec: SynthSpec, seed: int) -> SynthWorld:
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    mv = rng.standard_normal((N_CLASSES, spec.d_v)) * spec.mean_scale_v
    ma = rng.standard_normal((N_CLASSES, spec.d_a)) * spec.mean_scale_a
    a, b = spec.confusable_pair
    ma[b] = ma[a]
    return SynthWorld(mv, ma, np.asarray(spec.class_priors, dtype=np.float64))


def _draw_labels(spec: SynthSpec, rng: np.random.Generator, T: int) -> np.ndarray:
    pri = np.asarray(spec.class_priors, dtype=np.float64)
    if spec.label_rule == "iid":
        return rng.choice(N_CLASSES, size=T, p=pri)
    out = np.empty(T, dtype=np.int64)
    t = 0
    while t < T:
        n = int(rng.integers(spec.segment_range[0], spec.segment_range[1] + 1))
        out[t : t + n] = rng.choice(N_CLASSES, p=pri)
        t += n
    return out


def synth_video(spec: SynthSpec, world: SynthWorld, rng: np.random.Generator):
    """One video's (visual, raw audio, labels) under ``world``."""
    T = int(rng.integers(spec.T_range[0], spec.T_range[1] + 1))
    truth = _draw_labels(spec, rng, T)
    visual = world.visual_means[truth] + spec.noise_v * rng.standard_normal((T, spec.d_v))
    Ta = max(1, int(round(T * spec.audio_rate_ratio)))
    # audio row j sits at video position j*(T-1)/(Ta-1)
    if Ta == 1 or T == 1:
        src = np.zeros(Ta, dtype=np.int64)
    else:
        src = np.rint(np.arange(Ta) * (T - 1) / (Ta - 1)).astype(np.int64)
    audio = world.audio_means[truth[src]] + spec.noise_a * rng.standard_normal((Ta, spec.d_a))
    if spec.blackout_rate > 0:
        for start in range(0, T, spec.blackout_len):
            if rng.random() < spec.blackout_rate:
                visual[start : start + spec.blackout_len] = 0.0
    labels = truth.copy()
    if spec.missing_rate > 0:
        labels[rng.random(T) < spec.missing_rate] = -1
    return visual.astype(np.float32), audio.astype(np.float32), labels


def generate_synthetic(spec: SynthSpec, seed: int, out_dir) -> dict[str, Path]:
    """Write a train/val dataset under ``out_dir``; returns manifest paths per split.

    Output is byte-identical for equal ``(spec, seed)``.
    """
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = synthetic_world(spec, seed)
    n_total = spec.n_videos + spec.n_val_videos
    video_seeds = np.random.SeedSequence(seed).spawn(1 + n_total)[1:]
    manifests = {}
    k = 0
    for split, count in (("train", spec.n_videos), ("val", spec.n_val_videos)):
        (out / split).mkdir(exist_ok=True)
        entries = []
        for i in range(count):
            rng = np.random.default_rng(video_seeds[k])
            k += 1
            vid = f"{split}_{i:04d}"
            visual, audio, labels = synth_video(spec, world, rng)
            rel = {
                "visual_path": f"{split}/{vid}.visual.fwf",
                "audio_path": f"{split}/{vid}.audio.fwf",
                "labels_path": f"{split}/{vid}.labels.fwl",
            }
            write_matrix(out / rel["visual_path"], visual)
            write_matrix(out / rel["audio_path"], audio)
            write_labels(out / rel["labels_path"], labels)
            entries.append(
                {
                    "video_id": vid,
                    **rel,
                    "raw_audio_len": int(audio.shape[0]),
                    "split": split,
                    "frame_rate": spec.frame_rate,
                }
            )
        manifests[split] = out / f"{split}.json"
        write_manifest(manifests[split], entries)
    meta = {"seed": seed, "spec": spec.to_dict()}
    (out / "synth_spec.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifests


def bayes_predict(world: SynthWorld, spec: SynthSpec, visual=None, audio=None) -> np.ndarray:
    """Closed-form MAP class per frame under the generator's isotropic Gaussian model.

    Pass either or both modalities. Audio is scored against the class means
    with the generator's noise level (alignment smoothing is ignored).
    """
    score = np.log(np.maximum(world.priors, 1e-300))[None, :]
    if visual is not None:
        d = ((visual[:, None, :] - world.visual_means[None]) ** 2).sum(-1)
        score = score - d / (2 * max(spec.noise_v, 1e-12) ** 2)
    if audio is not None:
        d = ((audio[:, None, :] - world.audio_means[None]) ** 2).sum(-1)
        score = score - d / (2 * max(spec.noise_a, 1e-12) ** 2)
    return np.argmax(score, axis=1)
