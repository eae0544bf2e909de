"""Bit-exact persistence of rasters, samples, kernel fields and splits.

Float rasters travel as PFM: a text header (``Pf`` for 1 channel, ``PF`` for
3), a ``width height`` line, a scale line whose sign encodes endianness
(negative = little-endian; this writer always emits little-endian), then
32-bit floats in bottom-to-top row order.  Two-channel flow fields ride in a
``PF`` file with a zeroed third channel.  Masks are 1-channel PFMs with
exact 0/1 values.  Kernel fields pack the k*k weight planes plus the bias
plane vertically into one 1-channel PFM next to a JSON sidecar (the PFM
header has no channel count beyond 1/3).

A sample directory holds one PFM per raster plus ``meta.json``; see
``docs/formats.md`` for the byte-level layout and schemas.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError, ManifestError, PfmError
from .geometry import DataSample, WeakCalibParams
from .imaging import ensure_image, ensure_mask
from .kpn import KernelField

META_FORMAT = 1

_RASTER_FILES = {
    "rgb": "rgb.pfm",
    "amplitude": "amplitude.pfm",
    "tof_depth": "tof_depth.pfm",
    "gt_depth": "gt_depth.pfm",
    "mask": "mask.pfm",
}
_FLOW_FILE = "gt_flow.pfm"
_META_FILE = "meta.json"


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def write_pfm(path, data):
    """Write a (h, w), (h, w, 1), (h, w, 2) or (h, w, 3) raster as PFM.

    Two-channel data is padded with a zero third channel.  Values must be
    finite; everything is stored as little-endian float32.
    """
    arr = ensure_image(data, name="pfm data")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] == 2:
        arr = np.concatenate([arr, np.zeros(arr.shape[:2] + (1,))], axis=2)
    if arr.shape[2] not in (1, 3):
        raise ContractError(f"PFM stores 1, 2 or 3 channels, got {arr.shape[2]}")
    h, w, c = arr.shape
    header = b"Pf\n" if c == 1 else b"PF\n"
    payload = arr[::-1].astype("<f4").tobytes()  # bottom-to-top rows
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(payload)


def _read_token(buf, offset):
    # skip whitespace, then take the run of non-whitespace bytes
    n = len(buf)
    while offset < n and buf[offset : offset + 1].isspace():
        offset += 1
    start = offset
    while offset < n and not buf[offset : offset + 1].isspace():
        offset += 1
    if start == offset:
        raise PfmError("unexpected end of header", offset=start)
    return buf[start:offset], offset


def read_pfm(path):
    """Read a PFM file into a float64 array of shape (h, w) or (h, w, 3).

    Both endiannesses are accepted on read (scale sign).  Malformed headers,
    truncated payloads and non-finite payloads raise :class:`PfmError` with
    the byte offset of the defect.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, offset = _read_token(buf, 0)
    if magic not in (b"Pf", b"PF"):
        raise PfmError(f"bad magic {magic!r}", offset=0)
    channels = 1 if magic == b"Pf" else 3
    tok_w, offset = _read_token(buf, offset)
    tok_h, offset = _read_token(buf, offset)
    try:
        w, h = int(tok_w), int(tok_h)
    except ValueError as exc:
        raise PfmError(f"bad dimensions {tok_w!r} x {tok_h!r}", offset=offset) from exc
    if w <= 0 or h <= 0:
        raise PfmError(f"non-positive dimensions {w} x {h}", offset=offset)
    tok_scale, offset = _read_token(buf, offset)
    try:
        scale = float(tok_scale)
    except ValueError as exc:
        raise PfmError(f"bad scale {tok_scale!r}", offset=offset) from exc
    if scale == 0.0:
        raise PfmError("scale must be nonzero", offset=offset)
    offset += 1  # single whitespace byte terminates the header
    expected = w * h * channels * 4
    if len(buf) - offset < expected:
        raise PfmError(
            f"truncated payload: need {expected} bytes, have {len(buf) - offset}",
            offset=len(buf),
        )
    dtype = "<f4" if scale < 0.0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=w * h * channels, offset=offset)
    data = data.astype(np.float64).reshape(h, w, channels)[::-1]
    bad = ~np.isfinite(data)
    if np.any(bad):
        first = int(np.argmax(bad.ravel()))
        raise PfmError("payload contains NaN or Inf", offset=offset + 4 * first)
    if channels == 1:
        return np.ascontiguousarray(data[:, :, 0])
    return np.ascontiguousarray(data)


def write_flow(path, flow):
    """Store an (h, w, 2) flow field (zero-padded third channel)."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ContractError(f"flow must be (h, w, 2), got {flow.shape}")
    write_pfm(path, flow)


def read_flow(path):
    """Read back a flow field stored by :func:`write_flow`."""
    data = read_pfm(path)
    if data.ndim != 3 or data.shape[2] != 3:
        raise PfmError(f"{path} does not hold a padded flow field")
    return np.ascontiguousarray(data[:, :, :2])


def write_mask(path, mask):
    write_pfm(path, ensure_mask(mask).astype(np.float64))


def read_mask(path):
    data = read_pfm(path)
    return ensure_mask(data, name=str(path))


# ---------------------------------------------------------------------------
# kernel fields
# ---------------------------------------------------------------------------


def write_kernels(path, kf: KernelField):
    """Store a kernel field as stacked planes plus a JSON sidecar.

    The PFM at ``path`` holds k*k weight planes then the bias plane stacked
    vertically ((k*k + 1) * h rows); ``path + '.json'`` records k and the
    raster size.
    """
    h, w = kf.shape
    k2 = kf.k * kf.k
    planes = np.concatenate(
        [kf.weights[:, :, i] for i in range(k2)] + [kf.bias], axis=0)
    write_pfm(path, planes)
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump({"format": META_FORMAT, "k": kf.k, "width": w, "height": h}, fh)


def read_kernels(path) -> KernelField:
    with open(str(path) + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    k, w, h = int(meta["k"]), int(meta["width"]), int(meta["height"])
    planes = read_pfm(path)
    k2 = k * k
    if planes.shape != ((k2 + 1) * h, w):
        raise ManifestError(
            f"kernel raster is {planes.shape}, expected {((k2 + 1) * h, w)}",
            field="kernels",
        )
    weights = np.stack([planes[i * h:(i + 1) * h] for i in range(k2)], axis=-1)
    bias = planes[k2 * h:]
    return KernelField(weights=weights, bias=bias)


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


@dataclass
class SampleManifest:
    """Resolved file locations and metadata of one stored sample."""

    sample_id: str
    directory: str
    files: dict
    calib: WeakCalibParams
    seed: int | None
    aligned: bool


def write_sample(directory, sample: DataSample):
    """Persist a sample as one PFM per raster plus ``meta.json``."""
    sample.validate()
    os.makedirs(directory, exist_ok=True)
    write_pfm(os.path.join(directory, _RASTER_FILES["rgb"]), sample.rgb)
    write_pfm(os.path.join(directory, _RASTER_FILES["amplitude"]), sample.amplitude)
    write_pfm(os.path.join(directory, _RASTER_FILES["tof_depth"]), sample.tof_depth)
    write_pfm(os.path.join(directory, _RASTER_FILES["gt_depth"]), sample.gt_depth)
    write_mask(os.path.join(directory, _RASTER_FILES["mask"]), sample.mask)
    if sample.gt_flow is not None:
        write_flow(os.path.join(directory, _FLOW_FILE), sample.gt_flow)
    h, w = sample.shape
    meta = {
        "format": META_FORMAT,
        "f_x": sample.calib.f_x,
        "f_y": sample.calib.f_y,
        "t_x": sample.calib.t_x,
        "t_y": sample.calib.t_y,
        "c_x": sample.calib.c_x,
        "c_y": sample.calib.c_y,
        "width": int(w),
        "height": int(h),
        "seed": sample.seed,
        "aligned": bool(sample.aligned),
    }
    with open(os.path.join(directory, _META_FILE), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)


def read_manifest(directory) -> SampleManifest:
    """Check a sample directory for completeness and parse its metadata."""
    meta_path = os.path.join(directory, _META_FILE)
    if not os.path.exists(meta_path):
        raise ManifestError(f"missing {_META_FILE} in {directory}", field="meta")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    for key in ("f_x", "f_y", "t_x", "t_y", "c_x", "c_y", "width", "height", "aligned"):
        if key not in meta:
            raise ManifestError(f"meta.json lacks {key!r}", field=key)
    files = {}
    for name, filename in _RASTER_FILES.items():
        path = os.path.join(directory, filename)
        if not os.path.exists(path):
            raise ManifestError(f"missing {filename} in {directory}", field=name)
        files[name] = path
    flow_path = os.path.join(directory, _FLOW_FILE)
    if os.path.exists(flow_path):
        files["gt_flow"] = flow_path
    calib = WeakCalibParams(
        f_x=float(meta["f_x"]), f_y=float(meta["f_y"]),
        t_x=float(meta["t_x"]), t_y=float(meta["t_y"]),
        c_x=float(meta["c_x"]), c_y=float(meta["c_y"]),
    )
    return SampleManifest(
        sample_id=os.path.basename(os.path.normpath(directory)),
        directory=str(directory),
        files=files,
        calib=calib,
        seed=meta.get("seed"),
        aligned=bool(meta["aligned"]),
    )


def read_sample(directory) -> DataSample:
    """Load a sample directory back into memory, validating sizes."""
    manifest = read_manifest(directory)
    rasters = {}
    for name, path in manifest.files.items():
        if name == "mask":
            rasters[name] = read_mask(path)
        elif name == "gt_flow":
            rasters[name] = read_flow(path)
        else:
            rasters[name] = read_pfm(path)
    shape = rasters["rgb"].shape[:2]
    for name, arr in rasters.items():
        if arr.shape[:2] != shape:
            raise ManifestError(
                f"{name} size {arr.shape[:2]} disagrees with rgb size {shape}",
                field=name,
            )
    sample = DataSample(
        rgb=rasters["rgb"],
        amplitude=rasters["amplitude"],
        tof_depth=rasters["tof_depth"],
        gt_depth=rasters["gt_depth"],
        mask=rasters["mask"],
        calib=manifest.calib,
        aligned=manifest.aligned,
        gt_flow=rasters.get("gt_flow"),
        seed=manifest.seed,
    )
    return sample.validate()


def split_dataset(manifests, test_fraction, seed):
    """Deterministic seeded shuffle into disjoint, exhaustive train/test lists.

    ``len(test) == round(test_fraction * len(manifests))``.
    """
    items = list(manifests)
    if not items:
        raise DegenerateInputError("cannot split an empty dataset")
    if not 0.0 < test_fraction < 1.0:
        raise ContractError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(items))
    n_test = int(round(test_fraction * len(items)))
    test_idx = set(order[:n_test].tolist())
    train = [items[i] for i in range(len(items)) if i not in test_idx]
    test = [items[i] for i in range(len(items)) if i in test_idx]
    return train, test
