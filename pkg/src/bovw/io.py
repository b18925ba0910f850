"""Binary descriptor/model/representation files, CSV manifests and metrics output.

All binary payloads are little-endian float32. Writes go through a temporary
file and an atomic rename, so an interrupted run never leaves a partial file.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregate import VideoRepresentation
from .classifier import LinearOvrModel, Metrics
from .codebook import Codebook, GmmModel
from .encoders import LtcProjections
from .errors import FormatError, ManifestError
from .preprocess import WhitenTransform

FORMAT_VERSION = 1
F32 = np.dtype("<f4")

DESCRIPTOR_MAGIC = b"BVWD"
_DESC_HEADER = struct.Struct("<4sIIQI")

MODEL_MAGICS = {
    b"BVWW": "whiten",
    b"BVWC": "kmeans",
    b"BVWG": "gmm",
    b"BVWL": "ltc",
    b"BVWS": "classifier",
}
_MODEL_HEADER = struct.Struct("<4sIIII")

REPRESENTATION_MAGIC = b"BVWR"
_REP_HEADER = struct.Struct("<4sIII")

MANIFEST_COLUMNS = ("video_id", "label", "split", "channel", "path")
METRICS_COLUMNS = ("class", "correct", "total", "accuracy")


def write_atomic(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype=F32).tobytes()


def _read_f32(buf: bytes, offset: int, count: int, what: str) -> tuple[np.ndarray, int]:
    end = offset + 4 * count
    if end > len(buf):
        raise FormatError(f"{what}: payload truncated ({len(buf)} bytes, need {end})")
    return np.frombuffer(buf, dtype=F32, count=count, offset=offset).astype(np.float64), end


# descriptor files


def descriptor_bytes(descriptors: np.ndarray, channel: str) -> bytes:
    d = np.asarray(descriptors)
    if d.ndim != 2:
        raise FormatError(f"descriptors must be 2-D, got shape {d.shape}")
    name = channel.encode("utf-8")
    header = _DESC_HEADER.pack(DESCRIPTOR_MAGIC, FORMAT_VERSION, d.shape[1], d.shape[0], len(name))
    return header + name + _f32(d)


def write_descriptors(path, descriptors: np.ndarray, channel: str) -> None:
    write_atomic(path, descriptor_bytes(descriptors, channel))


def parse_descriptors(buf: bytes) -> tuple[np.ndarray, str]:
    if len(buf) < _DESC_HEADER.size:
        raise FormatError("descriptor file shorter than its header")
    magic, version, dim, count, name_len = _DESC_HEADER.unpack_from(buf)
    if magic != DESCRIPTOR_MAGIC:
        raise FormatError(f"bad descriptor magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported descriptor format version {version}")
    start = _DESC_HEADER.size + name_len
    if len(buf) != start + 4 * dim * count:
        raise FormatError(f"descriptor payload is {len(buf) - start} bytes, expected {4 * dim * count}")
    try:
        channel = buf[_DESC_HEADER.size:start].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("channel name is not valid UTF-8") from exc
    data = np.frombuffer(buf, dtype=F32, offset=start).reshape(count, dim).copy()
    return data, channel


def read_descriptors(path) -> tuple[np.ndarray, str]:
    """Return ``(float32 array count x dim, channel name)``."""
    return parse_descriptors(Path(path).read_bytes())


# model files


def _model_bytes(magic: bytes, K: int, D: int, extra: int, arrays, tail: bytes = b"") -> bytes:
    header = _MODEL_HEADER.pack(magic, FORMAT_VERSION, K, D, extra)
    return header + b"".join(_f32(a) for a in arrays) + tail


def model_bytes(model) -> bytes:
    if isinstance(model, WhitenTransform):
        return _model_bytes(
            b"BVWW", model.output_dim, model.input_dim, 0,
            [model.mean, model.eigenvalues, model.projection, [model.eigenvalue_floor]],
        )
    if isinstance(model, Codebook):
        return _model_bytes(b"BVWC", model.size, model.dim, 0, [model.centroids, model.priors])
    if isinstance(model, GmmModel):
        return _model_bytes(
            b"BVWG", model.size, model.dim, 0,
            [model.weights, model.means, model.variances, [model.variance_floor]],
        )
    if isinstance(model, LtcProjections):
        K, D, C = model.bases.shape
        return _model_bytes(b"BVWL", K, D, C, [model.bases, model.padded.astype(np.float64)])
    if isinstance(model, LinearOvrModel):
        table = json.dumps([str(c) for c in model.class_labels]).encode("utf-8")
        n, d = model.weights.shape
        return _model_bytes(b"BVWS", n, d, len(table), [model.weights, model.biases, [model.reg_c]], table)
    raise TypeError(f"cannot serialise {type(model).__name__}")


def write_model(path, model) -> None:
    write_atomic(path, model_bytes(model))


def parse_model(buf: bytes):
    if len(buf) < _MODEL_HEADER.size:
        raise FormatError("model file shorter than its header")
    magic, version, K, D, extra = _MODEL_HEADER.unpack_from(buf)
    kind = MODEL_MAGICS.get(magic)
    if kind is None:
        raise FormatError(f"unknown model magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version}")
    off = _MODEL_HEADER.size

    def take(count):
        nonlocal off
        arr, off = _read_f32(buf, off, count, kind)
        return arr

    if kind == "whiten":
        mean, eig, proj, floor = take(D), take(K), take(D * K).reshape(D, K), take(1)
        model = WhitenTransform(projection=proj, eigenvalues=eig, mean=mean, eigenvalue_floor=float(floor[0]))
    elif kind == "kmeans":
        model = Codebook(centroids=take(K * D).reshape(K, D), priors=take(K))
    elif kind == "gmm":
        w, mu, var, floor = take(K), take(K * D).reshape(K, D), take(K * D).reshape(K, D), take(1)
        if np.any(var <= 0) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-4:
            raise FormatError("GMM parameters out of range")
        model = GmmModel(weights=w, means=mu, variances=var, variance_floor=float(floor[0]))
    elif kind == "ltc":
        bases, padded = take(K * D * extra).reshape(K, D, extra), take(K)
        model = LtcProjections(bases=bases, padded=padded.astype(bool))
    else:
        W, b, c = take(K * D).reshape(K, D), take(K), take(1)
        table = buf[off:off + extra]
        off += extra
        try:
            labels = tuple(json.loads(table.decode("utf-8")))
        except (UnicodeDecodeError, ValueError) as exc:
            raise FormatError("classifier label table is corrupt") from exc
        if len(labels) != K:
            raise FormatError(f"label table has {len(labels)} entries for {K} classes")
        model = LinearOvrModel(weights=W, biases=b, reg_c=float(c[0]), class_labels=labels)
    if off != len(buf):
        raise FormatError(f"{kind} model file has {len(buf) - off} trailing or missing bytes")
    if kind != "classifier" and not all(
        np.all(np.isfinite(v)) for v in vars(model).values() if isinstance(v, np.ndarray)
    ):
        raise FormatError(f"{kind} model contains non-finite values")
    return model


def read_model(path, expect: str | None = None):
    """Load any model file; ``expect`` names the required kind (e.g. ``"gmm"``)."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read model file {path}: {exc}") from exc
    model = parse_model(buf)
    if expect is not None and MODEL_MAGICS[buf[:4]] != expect:
        raise FormatError(f"{path}: expected a {expect} model, found {MODEL_MAGICS[buf[:4]]}")
    return model


# representation files


def representation_bytes(rep: VideoRepresentation) -> bytes:
    meta = json.dumps(rep.provenance(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _REP_HEADER.pack(REPRESENTATION_MAGIC, FORMAT_VERSION, rep.dim, len(meta)) + meta + _f32(rep.vector)


def write_representation(path, rep: VideoRepresentation) -> None:
    write_atomic(path, representation_bytes(rep))


def parse_representation(buf: bytes) -> VideoRepresentation:
    if len(buf) < _REP_HEADER.size:
        raise FormatError("representation file shorter than its header")
    magic, version, dim, meta_len = _REP_HEADER.unpack_from(buf)
    if magic != REPRESENTATION_MAGIC or version != FORMAT_VERSION:
        raise FormatError(f"bad representation header {magic!r} v{version}")
    start = _REP_HEADER.size + meta_len
    if len(buf) != start + 4 * dim:
        raise FormatError("representation payload length mismatch")
    try:
        meta = json.loads(buf[_REP_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError("representation metadata is corrupt") from exc
    vec = np.frombuffer(buf, dtype=F32, offset=start).astype(np.float64)
    return VideoRepresentation(
        vector=vec,
        video_id=meta["video_id"],
        encoder_tag=meta["encoder"],
        channel=meta["channel"],
        pooling=meta["pooling"],
        normalization=tuple(meta["normalization"]),
        block_dim=meta["block_dim"],
        parts=tuple(tuple(p) for p in meta["parts"]),
    )


def read_representation(path) -> VideoRepresentation:
    return parse_representation(Path(path).read_bytes())


# manifests


@dataclass(frozen=True)
class ManifestRow:
    video_id: str
    label: str
    split: str
    channel: str
    path: str


def write_manifest(path, rows) -> None:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(MANIFEST_COLUMNS)
    for r in rows:
        w.writerow([r.video_id, r.label, r.split, r.channel, r.path])
    write_atomic(path, out.getvalue().encode("utf-8"))


def read_manifest(path) -> list[ManifestRow]:
    """Rows of a manifest CSV; relative paths resolve against the manifest's directory."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"manifest {path} lacks columns {sorted(missing)}")
        rows = []
        for i, rec in enumerate(reader, start=2):
            if any(not rec[c] for c in MANIFEST_COLUMNS):
                raise ManifestError(f"{path}:{i}: empty field")
            p = Path(rec["path"])
            if not p.is_absolute():
                p = path.parent / p
            rows.append(ManifestRow(rec["video_id"], rec["label"], rec["split"], rec["channel"], str(p)))
    keys = [(r.video_id, r.channel) for r in rows]
    if len(set(keys)) != len(keys):
        raise ManifestError(f"manifest {path} repeats a (video_id, channel) pair")
    return rows


# metrics


def metrics_csv(m: Metrics) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for label, k, t in zip(m.labels, m.correct, m.total):
        w.writerow([label, int(k), int(t), f"{(k / t if t else 0.0):.6f}"])
    w.writerow(["overall", int(m.correct.sum()), int(m.total.sum()), f"{m.accuracy:.6f}"])
    return out.getvalue()


def confusion_csv(m: Metrics) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["true\\predicted", *m.labels])
    for label, row in zip(m.labels, m.confusion):
        w.writerow([label, *(int(v) for v in row)])
    return out.getvalue()


def write_metrics(directory, name: str, m: Metrics) -> None:
    directory = Path(directory)
    write_atomic(directory / f"metrics_{name}.csv", metrics_csv(m).encode("utf-8"))
    write_atomic(directory / f"confusion_{name}.csv", confusion_csv(m).encode("utf-8"))


def write_json(path, obj) -> None:
    write_atomic(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))
