"""Dataset and prediction serialization.

Directory layout written by `write_dataset`:

    <dir>/manifest.json
    <dir>/samples/<id>/anno.json       query tokens, segments, boxes, metadata
    <dir>/samples/<id>/masks.rle       per-frame run-length encoded masks
    <dir>/samples/<id>/frames/frame_NNNN.bin  (or .png)

Raw blobs carry a little-endian header {magic, dims, dtype} followed by
C-order data bytes.  Frames are stored as uint8, so both the blob and PNG
paths round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IoError, SchemaError
from .losses import GroundTruth
from .synth import VOCABULARY, VideoSample

FORMAT_VERSION = "1"
BLOB_MAGIC = b"SVTB"
_DTYPES = {"uint8": np.uint8, "float32": np.float32, "float64": np.float64,
           "int64": np.int64}


# ---------------------------------------------------------------- raw blobs


def write_blob(path, array):
    arr = np.ascontiguousarray(array)
    name = arr.dtype.name
    if name not in _DTYPES:
        raise IoError(f"unsupported blob dtype {name}")
    header = BLOB_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    header += struct.pack("<16s", name.encode("ascii"))
    data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    try:
        Path(path).write_bytes(header + data)
    except OSError as e:
        raise IoError(f"cannot write blob {path}: {e}") from e


def read_blob(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read blob {path}: {e}") from e
    if raw[:4] != BLOB_MAGIC:
        raise SchemaError(f"bad blob magic in {path}")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    (dtype_raw,) = struct.unpack_from("<16s", raw, 8 + 4 * ndim)
    dtype_name = dtype_raw.rstrip(b"\x00").decode("ascii")
    if dtype_name not in _DTYPES:
        raise SchemaError(f"unknown blob dtype {dtype_name!r} in {path}")
    offset = 8 + 4 * ndim + 16
    dtype = np.dtype(_DTYPES[dtype_name]).newbyteorder("<")
    arr = np.frombuffer(raw, dtype=dtype, offset=offset)
    expected = int(np.prod(shape)) if ndim else 1
    if arr.size != expected:
        raise SchemaError(f"blob size mismatch in {path}")
    return arr.reshape(shape).astype(_DTYPES[dtype_name], copy=True)


# ---------------------------------------------------------------- RLE masks


def rle_encode(mask):
    """Row-major run lengths of a binary mask, starting with a zero-run."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return []
    changes = np.flatnonzero(np.diff(flat.astype(np.int8)))
    runs = np.diff(np.concatenate([[0], changes + 1, [flat.size]]))
    counts = runs.tolist()
    if flat[0]:
        counts = [0] + counts
    return [int(c) for c in counts]


def rle_decode(counts, height, width):
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        if value:
            flat[pos:pos + c] = True
        pos += c
        value = not value
    if pos != height * width:
        raise SchemaError(f"RLE length {pos} does not cover {height}x{width}")
    return flat.reshape(height, width)


def masks_to_rle(masks):
    masks = np.asarray(masks)
    return {"height": int(masks.shape[1]), "width": int(masks.shape[2]),
            "frames": [rle_encode(m) for m in masks]}


def rle_to_masks(payload):
    try:
        h, w = int(payload["height"]), int(payload["width"])
        frames = payload["frames"]
    except (KeyError, TypeError) as e:
        raise SchemaError(f"malformed RLE payload: {e}") from e
    return np.stack([rle_decode(c, h, w) for c in frames]) if frames else \
        np.zeros((0, h, w), dtype=bool)


# ---------------------------------------------------------------- dataset


@dataclass
class DatasetManifest:
    version: str
    vocabulary: list
    fps: float
    frames_format: str
    records: list = field(default_factory=list)

    def to_dict(self):
        return {"version": self.version, "vocabulary": list(self.vocabulary),
                "fps": self.fps, "frames_format": self.frames_format,
                "samples": self.records}


def _frame_paths(sample_dir, num_frames, fmt):
    return [sample_dir / "frames" / f"frame_{i:04d}.{fmt}" for i in range(num_frames)]


def write_dataset(samples, out_dir, frames_format="bin"):
    """Serialize samples; returns the manifest that was written."""
    if frames_format not in ("bin", "png"):
        raise IoError(f"frames_format must be 'bin' or 'png', got {frames_format!r}")
    out = Path(out_dir)
    records = []
    for sample in samples:
        sdir = out / "samples" / sample.sample_id
        (sdir / "frames").mkdir(parents=True, exist_ok=True)
        for i, path in enumerate(_frame_paths(sdir, sample.gt.num_frames, frames_format)):
            frame = sample.frames_u8[i]
            if frames_format == "bin":
                write_blob(path, frame)
            else:
                Image.fromarray(frame.transpose(1, 2, 0)).save(path)
        (sdir / "masks.rle").write_text(json.dumps(masks_to_rle(sample.gt.masks)))
        anno = {
            "query_tokens": list(sample.query_tokens),
            "segments": [[int(s), int(e)] for s, e in sample.gt.segments],
            "boxes": [[float(v) for v in row] for row in sample.gt.boxes],
            "scene_cuts": [int(c) for c in sample.scene_cuts],
            "seed": int(sample.seed),
            "ti": sample.ti,
            "num_frames": int(sample.gt.num_frames),
            "height": int(sample.gt.masks.shape[1]),
            "width": int(sample.gt.masks.shape[2]),
            "fps": float(sample.fps),
        }
        (sdir / "anno.json").write_text(json.dumps(anno, indent=1))
        records.append({"id": sample.sample_id,
                        "dir": str(Path("samples") / sample.sample_id),
                        "query_tokens": list(sample.query_tokens),
                        "segments": anno["segments"],
                        "ti": anno["ti"],
                        "num_frames": anno["num_frames"],
                        "seed": anno["seed"]})
    manifest = DatasetManifest(version=FORMAT_VERSION, vocabulary=list(VOCABULARY),
                               fps=float(samples[0].fps) if samples else 6.0,
                               frames_format=frames_format, records=records)
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=1))
    return manifest


def read_manifest(dataset_dir):
    path = Path(dataset_dir) / "manifest.json"
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise IoError(f"cannot read manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"manifest {path} is not valid JSON: {e}") from e
    if data.get("version") != FORMAT_VERSION:
        raise SchemaError(f"dataset version {data.get('version')!r} != {FORMAT_VERSION!r}")
    for key in ("vocabulary", "fps", "frames_format", "samples"):
        if key not in data:
            raise SchemaError(f"manifest missing key {key!r}")
    return DatasetManifest(version=data["version"], vocabulary=data["vocabulary"],
                           fps=data["fps"], frames_format=data["frames_format"],
                           records=data["samples"])


def read_dataset(dataset_dir):
    """Load (samples, manifest); raises SchemaError on any missing file."""
    root = Path(dataset_dir)
    manifest = read_manifest(root)
    fmt = manifest.frames_format
    samples = []
    for rec in manifest.records:
        sdir = root / rec["dir"]
        anno_path = sdir / "anno.json"
        if not anno_path.exists():
            raise SchemaError(f"missing annotation file {anno_path}")
        anno = json.loads(anno_path.read_text())
        t = int(anno["num_frames"])
        frames = np.zeros((t, 3, anno["height"], anno["width"]), dtype=np.uint8)
        for i, path in enumerate(_frame_paths(sdir, t, fmt)):
            if not path.exists():
                raise SchemaError(f"missing frame file {path}")
            if fmt == "bin":
                frames[i] = read_blob(path)
            else:
                with Image.open(path) as img:
                    frames[i] = np.asarray(img).transpose(2, 0, 1)
        rle_path = sdir / "masks.rle"
        if not rle_path.exists():
            raise SchemaError(f"missing mask file {rle_path}")
        masks = rle_to_masks(json.loads(rle_path.read_text())).astype(np.uint8)
        gt = GroundTruth(masks=masks, boxes=np.array(anno["boxes"], dtype=np.float64),
                         segments=[tuple(s) for s in anno["segments"]])
        samples.append(VideoSample(
            sample_id=rec["id"], frames_u8=frames,
            query_tokens=list(anno["query_tokens"]), gt=gt,
            scene_cuts=[int(c) for c in anno["scene_cuts"]],
            seed=int(anno["seed"]), fps=float(anno["fps"])))
    return samples, manifest


# ---------------------------------------------------------------- predictions


@dataclass
class PredictionRecord:
    """Serialized model output for one expression, ready for scoring."""

    sample_id: str
    query_index: int
    span: tuple            # inclusive (start, end) or None
    score: float
    masks: np.ndarray      # (T, H, W) bool, already span-gated
    relevance: list = field(default_factory=list)


def write_predictions(path, records, checkpoint=""):
    payload = {
        "version": FORMAT_VERSION,
        "checkpoint": str(checkpoint),
        "predictions": [
            {
                "id": r.sample_id,
                "query_index": int(r.query_index),
                "span": None if r.span is None else [int(r.span[0]), int(r.span[1])],
                "score": float(r.score),
                "masks": masks_to_rle(r.masks),
                "relevance": [float(v) for v in r.relevance],
            }
            for r in records
        ],
    }
    try:
        Path(path).write_text(json.dumps(payload))
    except OSError as e:
        raise IoError(f"cannot write predictions {path}: {e}") from e


def read_predictions(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as e:
        raise IoError(f"cannot read predictions {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"predictions {path} is not valid JSON: {e}") from e
    if data.get("version") != FORMAT_VERSION:
        raise SchemaError(f"predictions version {data.get('version')!r} != {FORMAT_VERSION!r}")
    records = []
    for entry in data.get("predictions", []):
        try:
            span = entry["span"]
            records.append(PredictionRecord(
                sample_id=entry["id"], query_index=int(entry["query_index"]),
                span=None if span is None else (int(span[0]), int(span[1])),
                score=float(entry["score"]), masks=rle_to_masks(entry["masks"]),
                relevance=[float(v) for v in entry.get("relevance", [])]))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed prediction entry: {e}") from e
    return records, data.get("checkpoint", "")
