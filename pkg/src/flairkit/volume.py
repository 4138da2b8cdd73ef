"""Volume types with physical geometry, NIfTI-1 I/O and volume arithmetic.

Arrays are indexed ``[x, y, z]`` exactly as the voxels appear in a NIfTI file
(x varies fastest on disk). Spacing and origin are in millimetres. The 3x3
orientation of the source affine is carried along untouched so files written
back out keep their orientation; nothing here interprets it.
"""
from __future__ import annotations

import gzip
import io
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import nibabel as nib
import numpy as np

__all__ = [
    "ScalarVolume",
    "BinaryMask",
    "ProbabilityMap",
    "VolumeFileError",
    "MissingFileError",
    "HeaderError",
    "UnsupportedDatatypeError",
    "GeometryMismatchError",
    "load_volume",
    "load_mask",
    "load_probability",
    "save_volume",
    "voxel_volume_ml",
    "mask_volume_ml",
    "check_same_geometry",
    "round_ml",
]

Triple = tuple[float, float, float]

_GZIP_MAGIC = b"\x1f\x8b"
# NIfTI-1 datatype codes we know how to turn into real scalars.
_SUPPORTED_DTYPES = {2, 4, 8, 16, 64, 256, 512, 768, 1024, 1280}


class VolumeFileError(Exception):
    """Base class for problems reading a volume file."""


class MissingFileError(VolumeFileError, FileNotFoundError):
    pass


class HeaderError(VolumeFileError):
    pass


class UnsupportedDatatypeError(VolumeFileError):
    pass


class GeometryMismatchError(ValueError):
    pass


def _triple(values, name: str) -> Triple:
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(out)}")
    return out  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class _Grid:
    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    _dtype = np.float32

    def __post_init__(self) -> None:
        data = self._coerce(np.asarray(self.data))
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"every axis needs at least one voxel, got {data.shape}")
        spacing = _triple(self.spacing, "spacing")
        if min(spacing) <= 0 or not np.all(np.isfinite(spacing)):
            raise ValueError(f"spacing must be positive, got {spacing}")
        direction = np.asarray(self.direction, dtype=np.float64).reshape(3, 3)
        view = data.view()
        view.flags.writeable = False
        object.__setattr__(self, "data", view)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", _triple(self.origin, "origin"))
        object.__setattr__(self, "direction", direction)

    def _coerce(self, data: np.ndarray) -> np.ndarray:
        return np.asarray(data, dtype=self._dtype)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)  # type: ignore[return-value]

    @property
    def voxel_volume_ml(self) -> float:
        return voxel_volume_ml(self.spacing)

    def with_data(self, data: np.ndarray, cls: type | None = None):
        """Same geometry, new voxel values (optionally as another grid type)."""
        cls = cls or type(self)
        return cls(data, self.spacing, self.origin, self.direction)

    def index_to_world(self, index) -> np.ndarray:
        """Physical position (mm) of voxel centres given as an (..., 3) index array."""
        index = np.asarray(index, dtype=np.float64)
        return (index * np.asarray(self.spacing)) @ self.direction.T + np.asarray(self.origin)

    def world_to_index(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64) - np.asarray(self.origin)
        return (points @ np.linalg.inv(self.direction).T) / np.asarray(self.spacing)

    def affine(self) -> np.ndarray:
        aff = np.eye(4)
        aff[:3, :3] = self.direction * np.asarray(self.spacing)[None, :]
        aff[:3, 3] = self.origin
        return aff


class ScalarVolume(_Grid):
    """Intensity grid stored as 32-bit reals; every value must be finite."""

    def _coerce(self, data):
        data = np.asarray(data, dtype=np.float32)
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        return data


class BinaryMask(_Grid):
    """Label grid with values in {0, 1}, stored as booleans."""

    def _coerce(self, data):
        data = np.asarray(data)
        if data.dtype != np.bool_:
            if not np.all((data == 0) | (data == 1)):
                raise ValueError("mask values must be 0 or 1")
            data = data.astype(bool)
        return data

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))


class ProbabilityMap(_Grid):
    """Per-voxel probabilities in [0, 1], stored as 32-bit reals."""

    def _coerce(self, data):
        data = np.asarray(data, dtype=np.float32)
        if not np.all((data >= 0) & (data <= 1)):
            raise ValueError("probabilities must lie in [0, 1]")
        return data


AnyGrid = Union[ScalarVolume, BinaryMask, ProbabilityMap]


def check_same_geometry(a: _Grid, b: _Grid) -> None:
    if a.dims != b.dims:
        raise GeometryMismatchError(f"dims differ: {a.dims} vs {b.dims}")
    if not np.allclose(a.spacing, b.spacing, rtol=1e-6, atol=1e-6):
        raise GeometryMismatchError(f"spacing differs: {a.spacing} vs {b.spacing}")
    if not np.allclose(a.origin, b.origin, rtol=0, atol=1e-4):
        raise GeometryMismatchError(f"origin differs: {a.origin} vs {b.origin}")


def voxel_volume_ml(spacing) -> float:
    sx, sy, sz = _triple(spacing, "spacing")
    return sx * sy * sz / 1000.0


def round_ml(value: float) -> float:
    """Round a volume in mL to 1e-9 so threshold tests are immune to float noise.

    ``100 * 0.001`` style products must compare equal to 0.1 when checked
    against the protocol thresholds.
    """
    return round(float(value), 9)


def mask_volume_ml(mask: BinaryMask) -> float:
    return mask.count * mask.voxel_volume_ml


# --------------------------------------------------------------------------
# NIfTI I/O
# --------------------------------------------------------------------------


def _float32_exact(value: float) -> float:
    # Header fields are float32; take the shortest decimal that maps onto the
    # stored float32 so 0.7 comes back as 0.7 rather than 0.699999988.
    return float(str(np.float32(value)))


def _read_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise MissingFileError(f"no such file: {path}") from None
    except IsADirectoryError:
        raise MissingFileError(f"not a file: {path}") from None
    if raw[:2] == _GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (EOFError, OSError, zlib.error) as exc:
            raise HeaderError(f"{path}: corrupt gzip stream ({exc})") from None
    return raw


def _parse(path: Path) -> tuple[nib.Nifti1Image, nib.Nifti1Header]:
    raw = _read_bytes(path)
    if len(raw) < 348:
        raise HeaderError(f"{path}: file too short for a NIfTI-1 header ({len(raw)} bytes)")
    if 348 not in (int.from_bytes(raw[:4], "little"), int.from_bytes(raw[:4], "big")):
        raise HeaderError(f"{path}: sizeof_hdr is not 348; not a NIfTI-1 file")
    try:
        header = nib.Nifti1Header.from_fileobj(io.BytesIO(raw), check=True)
    except Exception as exc:  # nibabel raises several header error types
        raise HeaderError(f"{path}: malformed NIfTI-1 header ({exc})") from None
    if bytes(header["magic"]) not in (b"n+1", b"n+1\x00"):
        raise HeaderError(f"{path}: only single-file NIfTI-1 (.nii) is supported")
    code = int(header["datatype"])
    if code not in _SUPPORTED_DTYPES:
        raise UnsupportedDatatypeError(f"{path}: NIfTI datatype code {code} is not a real scalar type")
    shape = header.get_data_shape()
    if len(shape) < 3 or any(n != 1 for n in shape[3:]):
        raise HeaderError(f"{path}: expected a 3D image, header declares shape {shape}")
    needed = int(header.get_data_offset()) + int(np.prod(shape)) * header.get_data_dtype().itemsize
    if len(raw) < needed:
        raise HeaderError(f"{path}: truncated data block ({len(raw)} of {needed} bytes)")
    image = nib.Nifti1Image.from_bytes(raw)
    return image, header


def _geometry(image: nib.Nifti1Image, header: nib.Nifti1Header):
    zooms = header.get_zooms()[:3]
    spacing = tuple(_float32_exact(z) for z in zooms)
    affine = image.affine
    origin = tuple(_float32_exact(v) for v in affine[:3, 3])
    linear = affine[:3, :3]
    norms = np.linalg.norm(linear, axis=0)
    norms[norms == 0] = 1.0
    direction = linear / norms[None, :]
    return spacing, origin, direction


def load_volume(path) -> ScalarVolume:
    """Read a NIfTI-1 file (gzip detected from the magic bytes) as a ScalarVolume."""
    path = Path(path)
    image, header = _parse(path)
    data = np.asarray(image.get_fdata(dtype=np.float32)).reshape(image.shape[:3])
    spacing, origin, direction = _geometry(image, header)
    return ScalarVolume(data, spacing, origin, direction)


def load_mask(path) -> BinaryMask:
    """Read a label file; voxels above 0.5 are set."""
    path = Path(path)
    image, header = _parse(path)
    slope, inter = header.get_slope_inter()
    if slope in (None, 1.0) and inter in (None, 0.0):
        # unscaled storage: threshold the raw integers without a float copy
        raw = np.asanyarray(image.dataobj.get_unscaled()).reshape(image.shape[:3])
        if raw.dtype.kind == "f" and not np.all(np.isfinite(raw)):
            raise ValueError("volume contains non-finite values")
        data = raw > 0.5
    else:
        data = np.asarray(image.get_fdata(dtype=np.float32)).reshape(image.shape[:3]) > 0.5
    spacing, origin, direction = _geometry(image, header)
    return BinaryMask(data, spacing, origin, direction)


def load_probability(path) -> ProbabilityMap:
    vol = load_volume(path)
    # float32 storage of values produced in float64 can overshoot [0, 1] by an ulp
    return vol.with_data(np.clip(vol.data, 0.0, 1.0), ProbabilityMap)


def save_volume(vol: AnyGrid, path) -> None:
    """Write a volume as NIfTI-1; a ``.gz`` suffix selects gzip compression.

    Masks are stored as uint8, everything else as float32.
    """
    path = Path(path)
    if isinstance(vol, BinaryMask):
        data = vol.data.astype(np.uint8)
    else:
        data = np.asarray(vol.data, dtype=np.float32)
    image = nib.Nifti1Image(data, vol.affine())
    image.header.set_zooms(vol.spacing)
    image.header.set_xyzt_units("mm")
    image.set_sform(vol.affine(), code=1)
    image.set_qform(vol.affine(), code=1)
    payload = image.to_bytes()
    if path.name.endswith(".gz"):
        payload = gzip.compress(payload, compresslevel=1, mtime=0)
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc
