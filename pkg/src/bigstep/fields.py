"""Grid geometry, field containers, sampling, warping and differential operators.

Fields live on a collocated (cell-centred) grid with unit cell size. Cell
``(i, j[, l])`` has its centre at coordinate ``(i, j[, l])``; positions are
expressed in these grid units everywhere. Scalar values are stored as float32
tensors with the x index fastest, i.e. tensor shape ``(H, W)`` in 2D and
``(D, H, W)`` in 3D; vector fields carry one leading component plane per axis
in x, y, z order.

Field containers are treated as immutable: operations return new fields and
never write into their inputs. The tensor-level helpers (``grid_interp``,
``warp_tensor``, ...) are shared with the networks and losses, where they run
batched and under autograd.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

AXES = ("x", "y", "z")


class GridMismatchError(ValueError):
    """Two fields that must share a grid do not."""


class FieldFileError(OSError):
    """A field file is missing or its byte length does not match the grid."""


@dataclass(frozen=True)
class GridSpec:
    """Cell extents per axis, ordered (x, y) in 2D or (x, y, z) in 3D."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got dims={dims}")
        if any(n < 2 for n in dims):
            raise ValueError(f"every grid extent must be >= 2, got dims={dims}")

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def shape(self) -> tuple[int, ...]:
        """Tensor layout: reversed axis order, x fastest."""
        return tuple(reversed(self.dims))

    @property
    def num_cells(self) -> int:
        n = 1
        for e in self.dims:
            n *= e
        return n

    def tensor_dim(self, axis: int) -> int:
        """Tensor dimension holding the given spatial axis (0 = x)."""
        return self.d - 1 - axis


def _check_values(spec: GridSpec, values: Tensor, expect_shape: tuple[int, ...]):
    if not isinstance(values, Tensor):
        raise TypeError("field values must be a torch.Tensor")
    if tuple(values.shape) != expect_shape:
        raise ValueError(
            f"values shape {tuple(values.shape)} does not match grid {spec.dims} "
            f"(expected {expect_shape})"
        )
    if values.dtype != torch.float32:
        raise ValueError(f"field values must be float32, got {values.dtype}")
    if not bool(torch.isfinite(values).all()):
        raise ValueError("field values must be finite")


@dataclass(frozen=True)
class ScalarField:
    """One real value per cell."""

    spec: GridSpec
    values: Tensor

    def __post_init__(self):
        _check_values(self.spec, self.values, self.spec.shape)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "ScalarField":
        return cls(spec, torch.zeros(spec.shape))

    @classmethod
    def full(cls, spec: GridSpec, value: float) -> "ScalarField":
        return cls(spec, torch.full(spec.shape, float(value)))

    @classmethod
    def from_numpy(cls, spec: GridSpec, array: np.ndarray) -> "ScalarField":
        return cls(spec, torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32)))

    def with_values(self, values: Tensor) -> "ScalarField":
        return ScalarField(self.spec, values)


@dataclass(frozen=True)
class VectorField:
    """d real components per cell, stored as contiguous component planes."""

    spec: GridSpec
    values: Tensor

    def __post_init__(self):
        _check_values(self.spec, self.values, (self.spec.d,) + self.spec.shape)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "VectorField":
        return cls(spec, torch.zeros((spec.d,) + spec.shape))

    @classmethod
    def constant(cls, spec: GridSpec, components) -> "VectorField":
        comps = [torch.full(spec.shape, float(c)) for c in components]
        return cls(spec, torch.stack(comps))

    @classmethod
    def from_numpy(cls, spec: GridSpec, array: np.ndarray) -> "VectorField":
        return cls(spec, torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32)))

    def with_values(self, values: Tensor) -> "VectorField":
        return VectorField(self.spec, values)

    def component(self, axis: int) -> Tensor:
        return self.values[axis]


# A flow field is a vector field read as a per-cell displacement in cell units.
FlowField = VectorField


def _same_spec(a, b):
    if a.spec != b.spec:
        raise GridMismatchError(f"incompatible grids: {a.spec.dims} vs {b.spec.dims}")


# ---------------------------------------------------------------------------
# sampling / warping
# ---------------------------------------------------------------------------


def grid_interp(values: Tensor, coords: Tensor) -> Tensor:
    """Multilinear clamp-to-edge interpolation of cell-centred values.

    values: ``(N, C, *spatial)`` with spatial layout (z, y, x).
    coords: ``(N, P, d)`` positions in cell units, component order (x, y[, z]).
    Returns ``(N, C, P)``. Differentiable in both arguments; zero fractional
    offsets reproduce stored values exactly.
    """
    n, c = values.shape[0], values.shape[1]
    spatial = values.shape[2:]
    d = coords.shape[-1]
    if len(spatial) != d:
        raise ValueError(f"coords have {d} components for {len(spatial)}D values")
    sizes = [spatial[len(spatial) - 1 - a] for a in range(d)]
    strides = [1] * d
    for a in range(1, d):
        strides[a] = strides[a - 1] * sizes[a - 1]

    flat = values.reshape(n, c, -1)
    i0s, i1s, fracs = [], [], []
    for a in range(d):
        x = coords[..., a].clamp(0.0, float(sizes[a] - 1))
        i0 = x.floor()
        frac = x - i0
        i0 = i0.long()
        i1 = (i0 + 1).clamp(max=sizes[a] - 1)
        i0s.append(i0)
        i1s.append(i1)
        fracs.append(frac)

    out = None
    for corner in range(1 << d):
        idx = torch.zeros_like(i0s[0])
        weight = None
        for a in range(d):
            if corner >> a & 1:
                idx = idx + i1s[a] * strides[a]
                w = fracs[a]
            else:
                idx = idx + i0s[a] * strides[a]
                w = 1.0 - fracs[a]
            weight = w if weight is None else weight * w
        gathered = flat.gather(2, idx.unsqueeze(1).expand(n, c, idx.shape[-1]))
        term = weight.unsqueeze(1) * gathered
        out = term if out is None else out + term
    return out


def cell_center_coords(spec: GridSpec, dtype=torch.float32, device=None) -> Tensor:
    """Per-cell centre positions, shape ``(*spec.shape, d)``, order (x, y[, z])."""
    grids = torch.meshgrid(
        *[torch.arange(s, dtype=dtype, device=device) for s in spec.shape],
        indexing="ij",
    )
    return torch.stack(tuple(reversed(grids)), dim=-1)


def warp_tensor(values: Tensor, flow: Tensor) -> Tensor:
    """Backward warp of batched values ``(N, C, *spatial)`` by per-cell
    displacements ``(N, d, *spatial)``: ``out(x) = values(x - flow(x))``."""
    n, c = values.shape[0], values.shape[1]
    spatial = values.shape[2:]
    d = flow.shape[1]
    grids = torch.meshgrid(
        *[torch.arange(s, dtype=flow.dtype, device=flow.device) for s in spatial],
        indexing="ij",
    )
    base = torch.stack(tuple(reversed(grids)), dim=-1)  # (*spatial, d)
    coords = base.unsqueeze(0) - flow.movedim(1, -1)
    sampled = grid_interp(values, coords.reshape(n, -1, d))
    return sampled.reshape(n, c, *spatial)


def sample(field: ScalarField, position) -> float:
    """Interpolated value at one position (clamp-to-edge outside the grid)."""
    pos = torch.as_tensor(list(position), dtype=torch.float32)
    if pos.numel() != field.spec.d:
        raise ValueError(f"position needs {field.spec.d} coordinates")
    out = grid_interp(field.values[None, None], pos.reshape(1, 1, -1))
    return float(out[0, 0, 0])


def warp(rho: ScalarField, flow: FlowField) -> ScalarField:
    """Backward-warped copy of ``rho``: ``out(x) = rho(x - flow(x))``."""
    _same_spec(rho, flow)
    out = warp_tensor(rho.values[None, None], flow.values[None])
    return rho.with_values(out[0, 0])


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------


def diff_tensor(t: Tensor, dim: int) -> Tensor:
    """Derivative along ``dim`` at unit spacing: central differences in the
    interior, one-sided full-slope differences at the first and last cell."""
    n = t.shape[dim]
    lead = t.narrow(dim, 1, 1) - t.narrow(dim, 0, 1)
    tail = t.narrow(dim, n - 1, 1) - t.narrow(dim, n - 2, 1)
    mid = (t.narrow(dim, 2, n - 2) - t.narrow(dim, 0, n - 2)) / 2.0
    return torch.cat([lead, mid, tail], dim)


def jacobian_tensor(vel: Tensor) -> Tensor:
    """Per-cell Jacobian of batched velocities ``(N, d, *spatial)``.

    Returns ``(N, d, d, *spatial)`` with entry ``[i, j] = d v_i / d x_j``.
    """
    d = vel.shape[1]
    nsp = vel.dim() - 2
    rows = []
    for j in range(d):
        dim = 2 + (nsp - 1 - j)
        rows.append(diff_tensor(vel, dim))
    return torch.stack(rows, dim=2)  # (N, d, d_axis_j, *spatial)


def jacobian(field: VectorField) -> Tensor:
    """Per-cell Jacobian, shape ``(d, d, *spec.shape)``; ``[i, j] = dv_i/dx_j``."""
    return jacobian_tensor(field.values[None])[0]


def gradient(field: VectorField) -> Tensor:
    """Alias of :func:`jacobian`; the velocity-gradient operator."""
    return jacobian(field)


def divergence_tensor(vel: Tensor) -> Tensor:
    """Divergence of batched velocities ``(N, d, *spatial)`` -> ``(N, *spatial)``,
    same stencils as :func:`diff_tensor`."""
    d = vel.shape[1]
    out = None
    for a in range(d):
        comp = vel[:, a]
        term = diff_tensor(comp, comp.dim() - 1 - a)
        out = term if out is None else out + term
    return out


def divergence(vel: VectorField) -> ScalarField:
    """Divergence with central differences (one-sided at the boundary)."""
    out = None
    for a in range(vel.spec.d):
        term = diff_tensor(vel.values[a], vel.spec.tensor_dim(a))
        out = term if out is None else out + term
    return ScalarField(vel.spec, out)


# ---------------------------------------------------------------------------
# projection and frame differences
# ---------------------------------------------------------------------------


def project_mean_tensor(t: Tensor, axis: int, d: int = 3) -> Tensor:
    """Mean along one spatial axis of ``(..., D, H, W)`` values (axis 0 = x)."""
    return t.mean(dim=t.dim() - 1 - axis)


def project_mean(field: ScalarField, axis) -> ScalarField:
    """Mean-projection of a 3D field onto the plane orthogonal to ``axis``.

    The output grid keeps the two remaining extents in x, y, z order (so a
    y-projection yields a grid whose axes are the original x and z).
    """
    if field.spec.d != 3:
        raise ValueError("project_mean needs a 3D field")
    a = AXES.index(axis) if isinstance(axis, str) else int(axis)
    if a not in (0, 1, 2):
        raise ValueError(f"axis must be one of {AXES}")
    values = field.values.mean(dim=field.spec.tensor_dim(a))
    dims = tuple(e for i, e in enumerate(field.spec.dims) if i != a)
    return ScalarField(GridSpec(dims), values)


def time_concat_diff(a, b):
    """Discrete time derivative of the two-frame concatenation: ``b - a``."""
    _same_spec(a, b)
    if type(a) is not type(b):
        raise GridMismatchError("fields must be of the same kind")
    return a.with_values(b.values - a.values)


# ---------------------------------------------------------------------------
# binary field files
# ---------------------------------------------------------------------------


def save_field(path, field) -> None:
    """Write raw little-endian float32 values, x fastest, component planes in
    x, y, z order for vector fields."""
    array = field.values.detach().numpy().astype("<f4", copy=False)
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(array).tobytes())


def _load_raw(path, count: int) -> np.ndarray:
    if not os.path.exists(path):
        raise FieldFileError(f"field file not found: {path}")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != count:
        raise FieldFileError(
            f"field file {path} holds {raw.size} values, expected {count}"
        )
    return raw


def load_scalar(path, spec: GridSpec) -> ScalarField:
    raw = _load_raw(path, spec.num_cells)
    return ScalarField(spec, torch.from_numpy(raw.reshape(spec.shape).copy()))


def load_vector(path, spec: GridSpec) -> VectorField:
    raw = _load_raw(path, spec.d * spec.num_cells)
    return VectorField(spec, torch.from_numpy(raw.reshape((spec.d,) + spec.shape).copy()))
