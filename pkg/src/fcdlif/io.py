"""Bit-exact file formats: raw binary volumes, weight bundles, CSV curves.

Binary layouts are little-endian regardless of host.  Both binary formats
start with a 4-byte magic, a uint32 version, a uint32 header length, and a
canonical JSON header that fully determines the payload; weight bundles also
carry a SHA-256 of the payload.  All writes go through a temp file and an
atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .data import DynamicPetImage, FrameSchedule, InputFunction
from .errors import FileFormatError
from .phantom import ContinuousDetectorTrace

IMAGE_MAGIC = b"FDLF"
WEIGHTS_MAGIC = b"FDLW"
FORMAT_VERSION = 1

IMAGE_UNITS = ("SUV_g_per_ml", "MBq_per_ml", "detector")


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _atomic_write(path, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-fdlf-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_header(blob: bytes, magic: bytes, path):
    if blob[:4] != magic:
        raise FileFormatError(f"{path}: bad magic {blob[:4]!r}, expected {magic!r}")
    version = int.from_bytes(blob[4:8], "little")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported format version {version}")
    header_len = int.from_bytes(blob[8:12], "little")
    if len(blob) < 12 + header_len:
        raise FileFormatError(f"{path}: truncated header")
    header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    return header, blob[12 + header_len:]


def _pack(magic: bytes, header: dict, payload: bytes) -> bytes:
    head = _canonical_json(header)
    return b"".join([
        magic,
        FORMAT_VERSION.to_bytes(4, "little"),
        len(head).to_bytes(4, "little"),
        head,
        payload,
    ])


# ---------------------------------------------------------------------------
# dynamic images
# ---------------------------------------------------------------------------

def save_image(path, image: DynamicPetImage):
    if image.units not in IMAGE_UNITS:
        raise FileFormatError(f"unknown units tag {image.units!r}")
    header = {
        "dims": list(image.data.shape),
        "voxel_size_mm": list(image.voxel_size_mm),
        "schedule": {
            "starts": image.schedule.starts.tolist(),
            "durations": image.schedule.durations.tolist(),
        },
        "units": image.units,
        "meta": image.meta,
    }
    payload = np.ascontiguousarray(image.data, dtype="<f4").tobytes()
    _atomic_write(path, _pack(IMAGE_MAGIC, header, payload))


def load_image(path) -> DynamicPetImage:
    with open(path, "rb") as fh:
        blob = fh.read()
    header, payload = _read_header(blob, IMAGE_MAGIC, path)
    dims = tuple(int(d) for d in header["dims"])
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise FileFormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(dims)
    schedule = FrameSchedule(header["schedule"]["starts"],
                             header["schedule"]["durations"])
    return DynamicPetImage(data.copy(), schedule,
                           tuple(header["voxel_size_mm"]), header["units"],
                           dict(header.get("meta", {})))


# ---------------------------------------------------------------------------
# model weights
# ---------------------------------------------------------------------------

def save_weights(path, model):
    names, blocks = [], []
    for p in model.parameters():
        if p.name is None:
            raise FileFormatError("every parameter needs a name to be saved")
        names.append({"name": p.name, "shape": list(p.shape)})
        blocks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    payload = b"".join(blocks)
    header = {
        "config": model.config_dict(),
        "params": names,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    _atomic_write(path, _pack(WEIGHTS_MAGIC, header, payload))


def load_weights(path):
    """Read a weight bundle; returns (config_dict, {name: float32 array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, payload = _read_header(blob, WEIGHTS_MAGIC, path)
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise FileFormatError(f"{path}: payload checksum mismatch")
    params = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        chunk = payload[offset: offset + nbytes]
        if len(chunk) != nbytes:
            raise FileFormatError(f"{path}: truncated parameter block {entry['name']}")
        params[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise FileFormatError(f"{path}: {len(payload) - offset} trailing payload bytes")
    return header["config"], params


def _architecture_only(config: dict) -> dict:
    return {k: v for k, v in config.items() if k != "seed"}


def load_weights_into(model, path):
    """Load a bundle into an existing model; the architecture echo must match.

    The stored init seed is provenance, not architecture, so it does not
    participate in the comparison.
    """
    config, params = load_weights(path)
    if _architecture_only(config) != _architecture_only(model.config_dict()):
        raise FileFormatError(
            f"{path}: stored architecture does not match the loading model")
    for p in model.parameters():
        if p.name not in params:
            raise FileFormatError(f"{path}: missing parameter {p.name}")
        stored = params[p.name]
        if stored.shape != p.shape:
            raise FileFormatError(
                f"{path}: parameter {p.name} has shape {stored.shape}, "
                f"model expects {p.shape}")
        p.data = stored.astype(np.float32)
    return model


def build_from_weights(path):
    """Reconstruct the saved model (predictor or baseline) from its bundle."""
    from .model import BaselineModel, FcDlifModel, SfeConfig, TfeConfig

    config, _ = load_weights(path)
    sfe = SfeConfig(spatial_shape=tuple(config["sfe"]["spatial_shape"]),
                    channels=tuple(config["sfe"]["channels"]),
                    blocks_per_stage=config["sfe"]["blocks_per_stage"],
                    final_kernel=tuple(config["sfe"]["final_kernel"]),
                    embedding_dim=config["sfe"]["embedding_dim"])
    if config["kind"] == "fcdlif":
        tfe = TfeConfig(in_channels=config["tfe"]["in_channels"],
                        channels=tuple(config["tfe"]["channels"]),
                        kernel_sizes=tuple(config["tfe"]["kernel_sizes"]))
        model = FcDlifModel(sfe, tfe, seed=config["seed"])
    elif config["kind"] == "baseline":
        model = BaselineModel(sfe, fixed_frames=config["fixed_frames"],
                              seed=config["seed"])
    else:
        raise FileFormatError(f"{path}: unknown model kind {config['kind']!r}")
    return load_weights_into(model, path)


# ---------------------------------------------------------------------------
# CSV curves, traces, samples
# ---------------------------------------------------------------------------

def save_curve(path, curve: InputFunction):
    lines = ["frame_index,mid_time_s,value"]
    for i, (t, v) in enumerate(zip(curve.mid_times, curve.values)):
        lines.append(f"{i},{float(t)!r},{float(v)!r}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_curve(path) -> InputFunction:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "frame_index,mid_time_s,value":
        raise FileFormatError(f"{path}: missing curve CSV header")
    mids, values = [], []
    for expected, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != 3:
            raise FileFormatError(f"{path}: malformed row {line!r}")
        idx = int(parts[0])
        if idx != expected:
            raise FileFormatError(
                f"{path}: frame_index must increase from 0, got {idx} at row {expected}")
        mids.append(float(parts[1]))
        values.append(float(parts[2]))
    if not values:
        raise FileFormatError(f"{path}: curve has no rows")
    return InputFunction(np.array(values), np.array(mids))


def save_trace(path, trace: ContinuousDetectorTrace):
    lines = ["time_s,value"]
    for t, v in zip(trace.times, trace.samples):
        lines.append(f"{t:g},{float(v)!r}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_trace(path) -> ContinuousDetectorTrace:
    times, values = _load_two_column(path, "time_s,value")
    if not np.array_equal(times, np.arange(times.size)):
        raise FileFormatError(f"{path}: trace must be sampled at 1 Hz from t=0")
    return ContinuousDetectorTrace(values)


def save_samples(path, samples):
    lines = ["time_s,value"]
    for t, v in samples:
        lines.append(f"{t:g},{float(v)!r}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_samples(path):
    times, values = _load_two_column(path, "time_s,value")
    return list(zip(times.tolist(), values.tolist()))


def _load_two_column(path, expected_header):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != expected_header:
        raise FileFormatError(f"{path}: missing header {expected_header!r}")
    first, second = [], []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 2:
            raise FileFormatError(f"{path}: malformed row {line!r}")
        first.append(float(parts[0]))
        second.append(float(parts[1]))
    return np.array(first), np.array(second)


# ---------------------------------------------------------------------------
# run manifests
# ---------------------------------------------------------------------------

def write_manifest(out_dir, command: str, args: dict, outputs):
    """Record the exact configuration of a CLI run.

    Deterministic on purpose: no timestamps, and the output directory itself
    is stored as '.' so reruns into different directories stay byte-identical.
    """
    from . import __version__

    scrubbed = {}
    for key, value in sorted(args.items()):
        if key in ("out_dir", "out"):
            scrubbed[key] = "."
        else:
            scrubbed[key] = value
    manifest = {
        "command": command,
        "args": scrubbed,
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "version": __version__,
    }
    path = os.path.join(out_dir, "manifest.json")
    _atomic_write(path, _canonical_json(manifest) + b"\n")
    return path
