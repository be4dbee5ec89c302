"""Readers and writers for every on-disk format the CLI touches.

* PGM (P5) 8- and 16-bit; 16-bit samples are big-endian as Netpbm requires.
* PFM single channel (``Pf``), written little-endian with bottom-up rows.
* MOGD per-pixel mixture maps and MOGC calibration sets (little-endian).
* Matches text: ``x0 y0 x1 y1`` per line, ``#`` comments.
* ``key=value`` text for configs, manifests and recalibration maps.
"""
from __future__ import annotations

import csv
import math
import struct
from pathlib import Path

import numpy as np

from .depthprob import CalibSet, DepthDistMap, RecalibMap
from .errors import FormatError

MOGD_MAGIC = b"MOGD"
MOGC_MAGIC = b"MOGC"
FORMAT_VERSION = 1
WEIGHT_REJECT_TOL = 1e-3


def _read_bytes(path) -> bytes:
    # OSError propagates; the CLI maps it to the I/O exit code
    return Path(path).read_bytes()


# --- PGM ---------------------------------------------------------------------


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    data = _read_bytes(path)
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    (magic, w, h, maxval), offset = _pgm_tokens(data, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    n = w * h * dtype.itemsize
    if len(data) - offset < n:
        raise FormatError(f"{path}: truncated PGM payload")
    img = np.frombuffer(data, dtype=dtype, count=w * h, offset=offset).reshape(h, w)
    return img.astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm(path, img) -> None:
    img = np.asarray(img)
    h, w = img.shape
    if img.dtype == np.uint8:
        header, payload = f"P5\n{w} {h}\n255\n".encode(), img.tobytes()
    else:
        if img.min() < 0 or img.max() > 65535:
            raise ValueError("16-bit PGM values must lie in [0, 65535]")
        header, payload = f"P5\n{w} {h}\n65535\n".encode(), img.astype(">u2").tobytes()
    Path(path).write_bytes(header + payload)


# --- PFM ---------------------------------------------------------------------


def read_pfm(path) -> np.ndarray:
    data = _read_bytes(path)
    lines, pos = [], 0
    for _ in range(3):
        end = data.index(b"\n", pos)
        lines.append(data[pos:end].strip())
        pos = end + 1
    if lines[0] != b"Pf":
        raise FormatError(f"{path}: only single-channel PFM (Pf) is supported")
    try:
        w, h = (int(x) for x in lines[1].split())
        scale = float(lines[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PFM header") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    if len(data) - pos < 4 * w * h:
        raise FormatError(f"{path}: truncated PFM payload")
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return np.flipud(arr).astype(np.float32)


def write_pfm(path, arr) -> None:
    arr = np.asarray(arr, dtype="<f4")
    h, w = arr.shape
    Path(path).write_bytes(f"Pf\n{w} {h}\n-1.0\n".encode() + np.ascontiguousarray(np.flipud(arr)).tobytes())


# --- MOGD / MOGC ----------------------------------------------------------------


def _check_weights(weights, path):
    sums = weights.sum(axis=-1)
    if np.any(weights < 0) or np.any(np.abs(sums - 1.0) > WEIGHT_REJECT_TOL):
        raise FormatError(f"{path}: mixture weights deviate from 1 by more than {WEIGHT_REJECT_TOL}")
    return weights / sums[..., None]


def write_mogd(path, dmap: DepthDistMap) -> None:
    h, w, k = dmap.weights.shape
    triples = np.stack([dmap.weights, dmap.means, dmap.log_stds], axis=-1).astype("<f4")
    Path(path).write_bytes(MOGD_MAGIC + struct.pack("<4I", FORMAT_VERSION, w, h, k) + triples.tobytes())


def read_mogd(path) -> DepthDistMap:
    data = _read_bytes(path)
    if data[:4] != MOGD_MAGIC or len(data) < 20:
        raise FormatError(f"{path}: missing MOGD magic")
    version, w, h, k = struct.unpack_from("<4I", data, 4)
    if version != FORMAT_VERSION or k < 1:
        raise FormatError(f"{path}: unsupported MOGD version {version} / K={k}")
    if len(data) != 20 + 12 * w * h * k:
        raise FormatError(f"{path}: MOGD payload size does not match header")
    arr = np.frombuffer(data, dtype="<f4", offset=20).reshape(h, w, k, 3).astype(np.float64)
    weights = _check_weights(arr[..., 0], path)
    return DepthDistMap(weights, arr[..., 1], arr[..., 2])


def write_mogc(path, cs: CalibSet) -> None:
    n, k = cs.weights.shape
    triples = np.stack([cs.weights, cs.means, cs.log_stds], axis=-1).reshape(n, 3 * k)
    records = np.concatenate([triples, cs.d_gt[:, None]], axis=1).astype("<f4")
    Path(path).write_bytes(MOGC_MAGIC + struct.pack("<3I", FORMAT_VERSION, n, k) + records.tobytes())


def read_mogc(path) -> CalibSet:
    data = _read_bytes(path)
    if data[:4] != MOGC_MAGIC or len(data) < 16:
        raise FormatError(f"{path}: missing MOGC magic")
    version, n, k = struct.unpack_from("<3I", data, 4)
    if version != FORMAT_VERSION or k < 1:
        raise FormatError(f"{path}: unsupported MOGC version {version} / K={k}")
    if len(data) != 16 + 4 * n * (3 * k + 1):
        raise FormatError(f"{path}: MOGC payload size does not match header")
    rec = np.frombuffer(data, dtype="<f4", offset=16).reshape(n, 3 * k + 1).astype(np.float64)
    triples = rec[:, : 3 * k].reshape(n, k, 3)
    weights = _check_weights(triples[..., 0], path)
    d_gt = rec[:, -1]
    if np.any(d_gt <= 0):
        raise FormatError(f"{path}: calibration truths must be positive")
    return CalibSet(weights, triples[..., 1].copy(), triples[..., 2].copy(), d_gt)


# --- matches ---------------------------------------------------------------------


def read_matches(path) -> np.ndarray:
    """``(N, 4)`` float array of ``x0 y0 x1 y1`` rows."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 numbers, got {len(parts)}")
        try:
            rows.append([float(x) for x in parts])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def write_matches(path, matches) -> None:
    lines = ["# x0 y0 x1 y1"]
    lines += [" ".join(f"{x:.6f}" for x in row) for row in np.asarray(matches)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- key=value ------------------------------------------------------------------------


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"), str(path))


def format_kv(items: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in items.items())


def write_kv(path, items: dict) -> None:
    Path(path).write_text(format_kv(items), encoding="utf-8")


def write_recalib(path, r: RecalibMap) -> None:
    write_kv(path, {"a": repr(r.a), "b": repr(r.b), "tau_w": repr(r.tau_w)})


def read_recalib(path) -> RecalibMap:
    kv = read_kv(path)
    try:
        a, b, tau = float(kv["a"]), float(kv["b"]), float(kv["tau_w"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: recalibration map needs numeric a, b, tau_w") from exc
    if set(kv) != {"a", "b", "tau_w"} or not (a > 0 and tau > 0 and math.isfinite(b)):
        raise FormatError(f"{path}: invalid recalibration map")
    return RecalibMap(a, b, tau)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
