"""Heatmap export as 8-bit binary PGM (P5) images with raw CSV and JSON sidecars.

Two normalizations are used and recorded in every sidecar:

* ``minmax``: ``pixel = round(255 * (x - lo) / (hi - lo))``; a constant image
  maps to 0.
* ``symmetric``: ``pixel = round(127.5 * (x / s + 1))`` with ``s = max|x|``, so
  zero sits at mid-grey. ``s = 0`` maps everything to 128.

Raw values are recoverable from the pixel value and the stored constants up
to quantization, and exactly from the CSV dumps.
"""

from __future__ import annotations

import io
import json
import math
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write
from .errors import InputError
from .solver import offdiag_fraction
from .spectral import RealizedOperator, operator_matrix


def minmax_pixels(x: np.ndarray) -> tuple[np.ndarray, dict]:
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi > lo:
        pix = np.rint(255.0 * (x - lo) / (hi - lo))
    else:
        pix = np.zeros_like(x)
    return pix.astype(np.uint8), {"normalization": "minmax", "lo": lo, "hi": hi}


def symmetric_pixels(x: np.ndarray) -> tuple[np.ndarray, dict]:
    s = float(np.max(np.abs(x))) if x.size else 0.0
    if s > 0:
        pix = np.rint(127.5 * (x / s + 1.0))
    else:
        pix = np.full(x.shape, 128.0)
    return pix.astype(np.uint8), {"normalization": "symmetric", "scale": s}


def encode_pgm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {pixels.shape}")
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes()


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos].decode())
    if tokens[0] != "P5" or tokens[3] != "255":
        raise InputError(f"{path}: not an 8-bit P5 image", [Path(path)])
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(blob[pos + 1 : pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


def _csv(x: np.ndarray) -> str:
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(x), delimiter=",", fmt="%.17g")
    return buf.getvalue()


def write_heatmap(out_dir, stem: str, values: np.ndarray, pixels: np.ndarray, sidecar: dict) -> dict[str, str]:
    out_dir = Path(out_dir)
    paths = {"image": str(out_dir / f"{stem}.pgm"), "csv": str(out_dir / f"{stem}.csv"), "json": str(out_dir / f"{stem}.json")}
    atomic_write(paths["image"], encode_pgm(pixels))
    atomic_write(paths["csv"], _csv(values))
    atomic_write(paths["json"], json.dumps({**sidecar, "shape": list(values.shape)}, indent=2, sort_keys=True))
    return paths


def eigen_atlas(op: RealizedOperator, height: int, width: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[float]]:
    """Eigenfunctions sorted by ascending eigenvalue, tiled row-major.

    Returns (atlas pixels, sorted eigenvalues, sorted basis, per-tile scales).
    Unused grid cells are black.
    """
    eig = op.eigvals.data
    order = np.argsort(eig, kind="stable")
    basis = op.basis.data[:, order]
    k = basis.shape[1]
    cols = math.ceil(math.sqrt(k))
    rows = math.ceil(k / cols)
    atlas = np.zeros((rows * height, cols * width), dtype=np.uint8)
    scales = []
    for t in range(k):
        tile, meta = symmetric_pixels(basis[:, t].reshape(height, width))
        r, c = divmod(t, cols)
        atlas[r * height : (r + 1) * height, c * width : (c + 1) * width] = tile
        scales.append(meta["scale"])
    return atlas, eig[order], basis, scales


def export_all(op: RealizedOperator, tau_basis: np.ndarray, height: int, width: int, out_dir) -> dict:
    """Operator heatmap, eigenfunction atlas, tau heatmap and mass deviation map."""
    out_dir = Path(out_dir)
    written = {}

    omega = operator_matrix(op)
    pix, meta = minmax_pixels(omega)
    written["operator"] = write_heatmap(out_dir, "operator", omega, pix, meta)

    atlas, eig, basis, scales = eigen_atlas(op, height, width)
    k = len(eig)
    cols = math.ceil(math.sqrt(k))
    meta = {
        "normalization": "symmetric",
        "per_tile": True,
        "tile_scales": scales,
        "eigenvalues": eig.tolist(),
        "tiles": k,
        "tile_shape": [height, width],
        "grid": [math.ceil(k / cols), cols],
        "order": "ascending eigenvalue, row-major",
    }
    written["eigenfunctions"] = write_heatmap(out_dir, "eigenfunctions", basis, atlas, meta)

    tau = np.asarray(tau_basis, dtype=np.float64)
    pix, meta = symmetric_pixels(tau)
    meta["offdiag_fraction"] = offdiag_fraction(tau)
    written["tau"] = write_heatmap(out_dir, "tau", tau, pix, meta)

    mass = op.mass.data
    dev = (mass - mass.mean()).reshape(height, width)
    pix, meta = symmetric_pixels(dev)
    meta["mass_mean"] = float(mass.mean())
    written["mass_deviation"] = write_heatmap(out_dir, "mass_deviation", dev, pix, meta)
    return written
