"""File formats: EGRID binary grids and JSON-lines sensor logs.

EGRID (little-endian):

    magic   4 bytes  "EGRD"
    version u32      1 = float32 channel planes, 2 = uint8 class plane
    scheme  u8       0 = polar (dims A, R; bins deg, m)
                     1 = cartesian (dims W, H; bins m, m)
    dim0    u32
    dim1    u32
    bin0    f64
    bin1    f64
    nch     u32
    planes  row-major, dim0 x dim1 each

Channel conventions by plane count (version 1):

    1  raw image (e.g. a binary detection raster)
    5  measurement grid: b_F, b_O, b_FO, vr, vr_valid
    8  DGM snapshot: m_F, m_D, m_S, m_FD, m_DS, m_FDS, vx_mean, vy_mean

Version 2 always carries a single class plane with values 0 = free,
1 = occupied, 2 = unknown.

Mass planes are stored at float32 precision, so the loader renormalises
each cell's masses to restore the exact unit-sum invariant.

Cartesian EGRID headers do not carry the grid origin pose; it is
supplied by whoever interprets the file (the pipeline keeps grids
vehicle-centered unless noted otherwise).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EgridFormatError
from .grids import (
    CartesianGrid,
    CartesianGridSpec,
    Detection,
    PolarGrid,
    PolarGridSpec,
)
from .labels import LabelImage, LidarScan

_MAGIC = b"EGRD"
_HEADER = struct.Struct("<4sIBIIddI")

SCHEME_POLAR = 0
SCHEME_CARTESIAN = 1


def _spec_for(scheme: int, dim0: int, dim1: int, bin0: float, bin1: float):
    if scheme == SCHEME_POLAR:
        return PolarGridSpec(dim0, dim1, bin0, bin1)
    if scheme == SCHEME_CARTESIAN:
        return CartesianGridSpec(dim0, dim1, bin0, bin1)
    raise EgridFormatError(f"unknown scheme byte {scheme}")


def _header_for(spec) -> tuple[int, int, int, float, float]:
    if isinstance(spec, PolarGridSpec):
        return SCHEME_POLAR, spec.a_bins, spec.r_bins, spec.alpha_a_deg, spec.alpha_r_m
    return SCHEME_CARTESIAN, spec.w_cells, spec.h_cells, spec.alpha_x_m, spec.alpha_y_m


def _write(path: Path, version: int, spec, planes: np.ndarray) -> None:
    scheme, dim0, dim1, bin0, bin1 = _header_for(spec)
    nch = planes.shape[0]
    header = _HEADER.pack(_MAGIC, version, scheme, dim0, dim1, bin0, bin1, nch)
    dtype = "<f4" if version == 1 else np.uint8
    body = np.ascontiguousarray(planes).astype(dtype).tobytes()
    Path(path).write_bytes(header + body)


def _read(path: Path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise EgridFormatError(f"{path}: truncated header")
    magic, version, scheme, dim0, dim1, bin0, bin1, nch = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise EgridFormatError(f"{path}: bad magic {magic!r}")
    if version not in (1, 2):
        raise EgridFormatError(f"{path}: unsupported version {version}")
    spec = _spec_for(scheme, dim0, dim1, bin0, bin1)
    itemsize = 4 if version == 1 else 1
    expect = _HEADER.size + nch * dim0 * dim1 * itemsize
    if len(raw) != expect:
        raise EgridFormatError(f"{path}: expected {expect} bytes, got {len(raw)}")
    dtype = "<f4" if version == 1 else np.uint8
    planes = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size)
    return version, spec, planes.reshape(nch, dim0, dim1)


def _renormalised_masses(planes: np.ndarray) -> np.ndarray:
    masses = np.clip(planes.astype(np.float64), 0.0, 1.0)
    masses = np.moveaxis(masses, 0, -1)
    total = masses.sum(axis=-1, keepdims=True)
    vacant = total[..., 0] <= 0
    masses[vacant] = 0.0
    masses[vacant, -1] = 1.0
    total[total <= 0] = 1.0
    return masses / total


def write_polar_grid(path, grid: PolarGrid) -> None:
    planes = np.concatenate(
        [
            np.moveaxis(grid.masses, -1, 0),
            grid.vr[None],
            grid.vr_valid.astype(float)[None],
        ]
    )
    _write(path, 1, grid.spec, planes)


def write_cartesian_grid(path, grid: CartesianGrid) -> None:
    planes = np.concatenate(
        [
            np.moveaxis(grid.masses, -1, 0),
            grid.vr[None],
            grid.vr_valid.astype(float)[None],
        ]
    )
    _write(path, 1, grid.spec, planes)


def write_image(path, spec, image: np.ndarray) -> None:
    """Write a single-channel raster (e.g. a binary detection image)."""
    _write(path, 1, spec, np.asarray(image, dtype=float)[None])


def write_label(path, label: LabelImage) -> None:
    _write(path, 2, label.spec, label.classes[None])


def write_dgm_snapshot(path, cspec, masses: np.ndarray, v_mean: np.ndarray) -> None:
    """Masses is (W, H, 6) in hypothesis order, v_mean (W, H, 2)."""
    planes = np.concatenate([np.moveaxis(masses, -1, 0), np.moveaxis(v_mean, -1, 0)])
    _write(path, 1, cspec, planes)


def read_egrid(path):
    """Load any EGRID file into its natural in-memory object.

    Returns a :class:`PolarGrid` or :class:`CartesianGrid` for 5-channel
    files, a :class:`LabelImage` for version-2 files, a
    ``(spec, image)`` tuple for single-channel rasters and a
    ``(spec, masses, v_mean)`` tuple for 8-channel DGM snapshots.
    """
    version, spec, planes = _read(path)
    if version == 2:
        if planes.shape[0] != 1:
            raise EgridFormatError(f"{path}: class files carry exactly one plane")
        return LabelImage(spec, planes[0].copy())
    nch = planes.shape[0]
    if nch == 1:
        return spec, planes[0].astype(np.float64)
    if nch == 5:
        masses = _renormalised_masses(planes[:3])
        vr = planes[3].astype(np.float64)
        vr_valid = planes[4] > 0.5
        if isinstance(spec, PolarGridSpec):
            return PolarGrid(spec, masses, vr, vr_valid)
        return CartesianGrid(spec, masses, vr, vr_valid)
    if nch == 8:
        masses = _renormalised_masses(planes[:6])
        v_mean = np.moveaxis(planes[6:8].astype(np.float64), 0, -1)
        return spec, masses, v_mean
    raise EgridFormatError(f"{path}: unexpected channel count {nch}")


# --- JSON-lines sensor logs -------------------------------------------------


def write_detections_jsonl(path, detections: Sequence[Detection]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in detections:
            f.write(
                json.dumps(
                    {
                        "range_m": d.range_m,
                        "azimuth_deg": d.azimuth_deg,
                        "doppler_mps": d.doppler_mps,
                        "rcs_dbsm": d.rcs_dbsm,
                        "t_s": d.t_s,
                        "sensor_id": d.sensor_id,
                    }
                )
                + "\n"
            )


def read_detections_jsonl(path) -> list[Detection]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            out.append(
                Detection(
                    row["range_m"],
                    row["azimuth_deg"],
                    row["doppler_mps"],
                    row["rcs_dbsm"],
                    row["t_s"],
                    row["sensor_id"],
                )
            )
    return out


def write_lidar_jsonl(path, scans: Sequence[LidarScan]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for scan in scans:
            for x, y, z in np.asarray(scan.points, dtype=float).reshape(-1, 3):
                f.write(
                    json.dumps({"x_m": x, "y_m": y, "z_m": z, "t_s": scan.t_s}) + "\n"
                )


def read_lidar_jsonl(path) -> list[LidarScan]:
    """Group points by timestamp back into scans (time-ordered)."""
    by_t: dict[float, list[list[float]]] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            by_t.setdefault(row["t_s"], []).append([row["x_m"], row["y_m"], row["z_m"]])
    return [
        LidarScan(np.array(pts, dtype=float), t) for t, pts in sorted(by_t.items())
    ]
