"""Volumetric containers and file IO.

Arrays are stored with shape (nx, ny, nz) in Fortran order so that the
linear voxel index i = x + nx*(y + ny*z) (x fastest) matches the on-disk
payload order of both supported formats.

Formats:

* raw-rvol (bit-exact, ``.rvol``): little-endian header
  ``magic "RVOL" | version u16 | dtype u8 (0=f32, 1=u8) | dims 3*u32 |
  spacing 3*f32`` followed by the payload, x fastest.
* NIfTI-1 (``.nii``, uncompressed single-file only): standard 348-byte
  header; gzipped variants are rejected.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np


class DataError(Exception):
    """Malformed input data: bad files, empty annotations, geometry mismatch."""


RVOL_MAGIC = b"RVOL"
RVOL_VERSION = 1
_RVOL_HEADER = struct.Struct("<4sHB3I3f")
_NIFTI_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}


@dataclass(frozen=True)
class VolumeGeometry:
    """Grid dimensions (nx, ny, nz) and voxel spacing (sx, sy, sz) in mm."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be three counts >= 1, got {self.dims}")
        if len(spacing) != 3 or any(not (s > 0) for s in spacing):
            raise ValueError(f"spacing must be three positive lengths, got {self.spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def to_linear(self, coords: np.ndarray) -> np.ndarray:
        """(n, 3) voxel coords -> linear indices, x fastest."""
        c = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        nx, ny, _ = self.dims
        return c[:, 0] + nx * (c[:, 1] + ny * c[:, 2])

    def from_linear(self, linear: np.ndarray) -> np.ndarray:
        """Linear indices -> (n, 3) voxel coords."""
        i = np.asarray(linear, dtype=np.int64)
        nx, ny, _ = self.dims
        x = i % nx
        t = i // nx
        return np.stack([x, t % ny, t // ny], axis=-1)

    def linear_index_volume(self) -> np.ndarray:
        """(nx, ny, nz) volume whose value at each voxel is its linear index."""
        return np.arange(self.n_voxels, dtype=np.int64).reshape(self.dims, order="F")

    def in_bounds(self, coords: np.ndarray) -> np.ndarray:
        c = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        d = np.asarray(self.dims)
        return np.all((c >= 0) & (c < d), axis=1)


def _as_volume_array(data, dtype) -> np.ndarray:
    return np.asfortranarray(np.asarray(data, dtype=dtype))


@dataclass
class ScalarVolume:
    """Real-valued volume; intensities held as float32."""

    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        self.data = _as_volume_array(self.data, np.float32)
        if self.data.shape != self.geometry.shape:
            raise ValueError(f"data shape {self.data.shape} != geometry {self.geometry.shape}")
        if not np.isfinite(self.data).all():
            bad = ~np.isfinite(self.data.ravel(order="F"))
            raise DataError(
                f"volume contains {int(bad.sum())} non-finite voxels, "
                f"first at linear index {int(np.argmax(bad))}"
            )
        self.data.flags.writeable = False


@dataclass
class BinaryMask:
    """One bit per voxel: 0 background, 1 foreground."""

    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        self.data = _as_volume_array(self.data, bool)
        if self.data.shape != self.geometry.shape:
            raise ValueError(f"data shape {self.data.shape} != geometry {self.geometry.shape}")
        self.data.flags.writeable = False

    @property
    def n_foreground(self) -> int:
        return int(self.data.sum())


@dataclass
class SkeletonAnnotation:
    """Sparse annotated voxel set, stored as sorted unique linear indices."""

    geometry: VolumeGeometry
    linear: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def __post_init__(self):
        lin = np.unique(np.asarray(self.linear, dtype=np.int64))
        if lin.size and (lin[0] < 0 or lin[-1] >= self.geometry.n_voxels):
            raise ValueError("annotation index out of bounds")
        self.linear = lin
        self.linear.flags.writeable = False

    @classmethod
    def from_coords(cls, geometry: VolumeGeometry, coords) -> "SkeletonAnnotation":
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        if coords.size and not geometry.in_bounds(coords).all():
            raise ValueError("annotation coordinate out of bounds")
        return cls(geometry, geometry.to_linear(coords))

    @classmethod
    def from_mask(cls, mask: BinaryMask) -> "SkeletonAnnotation":
        lin = np.flatnonzero(mask.data.ravel(order="F"))
        return cls(mask.geometry, lin)

    def __len__(self) -> int:
        return int(self.linear.size)

    @property
    def coords(self) -> np.ndarray:
        return self.geometry.from_linear(self.linear)

    def to_mask(self) -> BinaryMask:
        flat = np.zeros(self.geometry.n_voxels, dtype=bool)
        flat[self.linear] = True
        return BinaryMask(self.geometry, flat.reshape(self.geometry.shape, order="F"))


# ---------------------------------------------------------------------------
# IO
# ---------------------------------------------------------------------------

def _infer_format(path: str, format: str | None) -> str:
    if format is not None:
        if format not in ("raw-rvol", "nifti1"):
            raise ValueError(f"unknown format {format!r}")
        return format
    p = str(path).lower()
    if p.endswith(".rvol"):
        return "raw-rvol"
    if p.endswith(".nii"):
        return "nifti1"
    if p.endswith(".nii.gz") or p.endswith(".gz"):
        raise DataError(f"compressed NIfTI is not supported: {path}")
    raise DataError(f"cannot infer format from extension of {path}")


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".skelprop-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _payload_array(v) -> tuple[np.ndarray, int]:
    """Map a container onto (flat payload, rvol dtype code)."""
    data = v.data
    if data.dtype == bool:
        return data.ravel(order="F").astype(np.uint8), 1
    if data.dtype == np.uint8:
        return data.ravel(order="F"), 1
    if np.issubdtype(data.dtype, np.floating):
        return data.ravel(order="F").astype(np.float32), 0
    raise DataError(f"unsupported dtype for saving: {data.dtype}")


def save_volume(v, path: str, format: str | None = None) -> None:
    """Save a ScalarVolume / BinaryMask / MaskProposal / DistanceMap.

    Float data is written as float32, masks and tri-state proposals as
    uint8 (proposal codes: 0 background, 1 foreground, 2 unknown).
    The file is written atomically (temp file + rename).
    """
    fmt = _infer_format(path, format)
    flat, dtype_code = _payload_array(v)
    geom = v.geometry
    if fmt == "raw-rvol":
        header = _RVOL_HEADER.pack(
            RVOL_MAGIC, RVOL_VERSION, dtype_code, *geom.dims,
            *[np.float32(s) for s in geom.spacing],
        )
        _atomic_write(path, header + flat.tobytes())
    else:
        _atomic_write(path, _nifti_bytes(flat, dtype_code, geom))


def load_volume(path: str, format: str | None = None) -> ScalarVolume:
    """Load a volume; intensities are converted to float32 after any
    header scale/intercept is applied."""
    fmt = _infer_format(path, format)
    if fmt == "raw-rvol":
        geom, arr = _load_rvol(path)
    else:
        geom, arr = _load_nifti(path)
    return ScalarVolume(geom, arr)


def load_mask(path: str, format: str | None = None) -> BinaryMask:
    v = load_volume(path, format)
    return BinaryMask(v.geometry, v.data != 0)


def skeleton_from_mask_file(path: str, format: str | None = None) -> SkeletonAnnotation:
    """Load a skeleton annotation stored as a binary volume (nonzero voxels)."""
    ann = SkeletonAnnotation.from_mask(load_mask(path, format))
    if len(ann) == 0:
        raise DataError(f"annotation volume {path} has no nonzero voxel")
    return ann


def _load_rvol(path: str) -> tuple[VolumeGeometry, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _RVOL_HEADER.size:
        raise DataError(f"{path}: truncated rvol header")
    magic, version, dtype_code, nx, ny, nz, sx, sy, sz = _RVOL_HEADER.unpack_from(raw)
    if magic != RVOL_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != RVOL_VERSION:
        raise DataError(f"{path}: unsupported rvol version {version}")
    if dtype_code == 0:
        dtype, itemsize = np.dtype("<f4"), 4
    elif dtype_code == 1:
        dtype, itemsize = np.dtype("u1"), 1
    else:
        raise DataError(f"{path}: unknown dtype code {dtype_code}")
    n = nx * ny * nz
    expected = _RVOL_HEADER.size + n * itemsize
    if len(raw) != expected:
        raise DataError(f"{path}: payload size {len(raw) - _RVOL_HEADER.size} "
                        f"does not match header dims {nx}x{ny}x{nz}")
    geom = VolumeGeometry((nx, ny, nz), (sx, sy, sz))
    flat = np.frombuffer(raw, dtype=dtype, offset=_RVOL_HEADER.size)
    return geom, flat.reshape(geom.shape, order="F")


def _nifti_bytes(flat: np.ndarray, dtype_code: int, geom: VolumeGeometry) -> bytes:
    datatype, bitpix = (16, 32) if dtype_code == 0 else (2, 8)
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *geom.dims, 1, 1, 1, 1)
    struct.pack_into("<hh", hdr, 70, datatype, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, *geom.spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, 352.0)   # vox_offset
    struct.pack_into("<ff", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    descrip = b"skelprop"
    hdr[148:148 + len(descrip)] = descrip
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr) + b"\x00\x00\x00\x00" + flat.tobytes()


def _load_nifti(path: str) -> tuple[VolumeGeometry, np.ndarray]:
    if str(path).lower().endswith(".gz"):
        raise DataError(f"compressed NIfTI is not supported: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raise DataError(f"{path} is gzip-compressed; only uncompressed .nii is supported")
    if len(raw) < 352:
        raise DataError(f"{path}: file too small for a NIfTI-1 header")
    for bo in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(bo + "i", raw, 0)
        if sizeof_hdr == 348:
            break
    else:
        raise DataError(f"{path}: not a NIfTI-1 file (sizeof_hdr != 348)")
    magic = raw[344:348]
    if magic not in (b"n+1\x00",):
        raise DataError(f"{path}: unsupported NIfTI magic {magic!r} "
                        "(only single-file n+1 is supported)")
    dim = struct.unpack_from(bo + "8h", raw, 40)
    ndim = dim[0]
    if ndim < 1 or ndim > 7:
        raise DataError(f"{path}: invalid dim[0]={ndim}")
    shape = [max(1, d) for d in dim[1:1 + max(ndim, 3)]]
    if any(s != 1 for s in shape[3:]):
        raise DataError(f"{path}: only 3-D volumes are supported, got dims {shape}")
    nx, ny, nz = (shape + [1, 1])[:3]
    datatype, _bitpix = struct.unpack_from(bo + "hh", raw, 70)
    if datatype not in _NIFTI_DTYPES:
        raise DataError(f"{path}: unsupported NIfTI datatype {datatype}")
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(bo)
    pixdim = struct.unpack_from(bo + "8f", raw, 76)
    spacing = tuple(abs(p) if p != 0 else 1.0 for p in pixdim[1:4])
    (vox_offset,) = struct.unpack_from(bo + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(bo + "ff", raw, 112)
    offset = int(vox_offset) if vox_offset >= 348 else 352
    n = nx * ny * nz
    end = offset + n * dtype.itemsize
    if len(raw) < end:
        raise DataError(f"{path}: payload shorter than header dims {nx}x{ny}x{nz}")
    flat = np.frombuffer(raw, dtype=dtype, count=n, offset=offset).astype(np.float64)
    if scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0):
        flat = flat * scl_slope + scl_inter
    geom = VolumeGeometry((nx, ny, nz), spacing)
    return geom, flat.astype(np.float32).reshape(geom.shape, order="F")
