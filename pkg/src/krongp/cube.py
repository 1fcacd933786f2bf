"""Hyperspectral cube I/O, vegetation masking, and raster map output.

Cubes live on disk as raw little-endian float32, band-sequential (band,
row, col), next to a JSON sidecar carrying the dimensions, the wavelength
list, and an optional scale factor applied on load.  Prediction and mask
rasters are written twice: a flat float CSV (empty cell = masked) and an
8-bit grayscale image with a JSON legend recording the linear scaling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, ShapeError


@dataclass(frozen=True)
class HyperCube:
    """A (bands, height, width) reflectance stack on a wavelength grid."""

    wavelengths: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float).ravel()
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise ShapeError(f"cube data must be (bands, height, width), got {data.shape}")
        if data.shape[0] != wl.shape[0]:
            raise ShapeError(f"{data.shape[0]} bands but {wl.shape[0]} wavelengths")
        if wl.size > 1 and np.any(np.diff(wl) <= 0):
            raise DataError("cube wavelengths must be strictly increasing")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "data", data)

    @property
    def num_bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def select_bands(self, mask) -> "HyperCube":
        mask = np.asarray(mask)
        return HyperCube(self.wavelengths[mask], self.data[mask])

    def pixel_spectra(self) -> np.ndarray:
        """All pixels as rows, row-major, shape (height*width, bands)."""
        return self.data.reshape(self.num_bands, -1).T


def _sidecar_path(raw_path) -> str:
    return str(raw_path) + ".json"


def load_cube(raw_path, sidecar_path=None) -> HyperCube:
    """Read a raw cube and its sidecar; validates the byte count."""
    sidecar_path = sidecar_path or _sidecar_path(raw_path)
    with open(sidecar_path, "r") as fh:
        meta = json.load(fh)
    for key in ("width", "height", "bands", "wavelengths"):
        if key not in meta:
            raise DataError(f"{sidecar_path}: missing key {key!r}")
    width, height, bands = int(meta["width"]), int(meta["height"]), int(meta["bands"])
    wl = np.asarray(meta["wavelengths"], dtype=float)
    if wl.shape[0] != bands:
        raise DataError(f"{sidecar_path}: {wl.shape[0]} wavelengths for {bands} bands")
    raw = np.fromfile(raw_path, dtype="<f4")
    expected = width * height * bands
    if raw.size != expected:
        raise DataError(f"{raw_path}: expected {expected} float32 values "
                        f"({bands}x{height}x{width}), found {raw.size}")
    data = raw.astype(float).reshape(bands, height, width)
    scale = float(meta.get("scale", 1.0))
    if scale != 1.0:
        data = data * scale
    return HyperCube(wl, data)


def save_cube(cube: HyperCube, raw_path, sidecar_path=None):
    """Write raw float32 plus sidecar; load_cube reads it back bit-exactly."""
    sidecar_path = sidecar_path or _sidecar_path(raw_path)
    cube.data.astype("<f4").tofile(raw_path)
    meta = {"width": cube.width, "height": cube.height, "bands": cube.num_bands,
            "wavelengths": [float(w) for w in cube.wavelengths], "scale": 1.0}
    with open(sidecar_path, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def nearest_band(wavelengths, target_nm: float, tolerance: float = 5.0) -> int:
    """Index of the band closest to target_nm, within the tolerance."""
    wl = np.asarray(wavelengths, dtype=float)
    idx = int(np.argmin(np.abs(wl - target_nm)))
    if abs(wl[idx] - target_nm) > tolerance:
        raise ConfigError(f"no band within {tolerance:g} nm of {target_nm:g} nm "
                          f"(closest is {wl[idx]:g} nm)")
    return idx


def ndvi_mask(cube: HyperCube, red_nm: float = 670.0, nir_nm: float = 800.0,
              threshold: float = 0.3) -> np.ndarray:
    """True where (NIR-RED)/(NIR+RED) >= threshold.

    Pixels with NIR + RED <= 1e-12 are masked out regardless (bare or
    dead pixels have no meaningful index).
    """
    red = cube.data[nearest_band(cube.wavelengths, red_nm)]
    nir = cube.data[nearest_band(cube.wavelengths, nir_nm)]
    total = nir + red
    valid = total > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        ndvi = np.where(valid, (nir - red) / np.where(valid, total, 1.0), -np.inf)
    return (ndvi >= threshold) & valid


def write_float_map(values: np.ndarray, path):
    """Flat CSV raster, one line per row; NaN cells are written empty."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ShapeError(f"map must be 2-d, got shape {values.shape}")
    with open(path, "w") as fh:
        for row in values:
            fh.write(",".join("" if not np.isfinite(v) else repr(float(v))
                              for v in row))
            fh.write("\n")


def read_float_map(path) -> np.ndarray:
    """Inverse of write_float_map; empty cells come back as NaN."""
    rows = []
    with open(path, "r") as fh:
        for line in fh:
            line = line.rstrip("\n")
            rows.append([np.nan if not cell else float(cell)
                         for cell in line.split(",")])
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise DataError(f"{path}: ragged or empty map")
    return np.asarray(rows, dtype=float)


def write_gray_map(values: np.ndarray, image_path, legend_path=None):
    """8-bit grayscale render: valid pixels scale linearly onto 1..255,
    masked (NaN) pixels are black.  The legend sidecar records the data
    min/max that map to 1 and 255; a constant map renders at 255.

    Returns (vmin, vmax) of the unmasked values.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ShapeError(f"map must be 2-d, got shape {values.shape}")
    legend_path = legend_path or str(image_path) + ".legend.json"
    valid = np.isfinite(values)
    if not valid.any():
        raise DataError("map has no unmasked pixels")
    vmin = float(values[valid].min())
    vmax = float(values[valid].max())
    span = vmax - vmin
    gray = np.zeros(values.shape, dtype=np.uint8)
    if span > 0:
        scaled = (values[valid] - vmin) / span
        gray[valid] = np.round(1.0 + 254.0 * scaled).astype(np.uint8)
    else:
        gray[valid] = 255
    Image.fromarray(gray, mode="L").save(image_path)
    legend = {"min": vmin, "max": vmax, "masked_value": 0,
              "encoding": "gray = round(1 + 254*(value - min)/(max - min)); "
                          "masked pixels are 0"}
    with open(legend_path, "w") as fh:
        json.dump(legend, fh, indent=2)
        fh.write("\n")
    return vmin, vmax
