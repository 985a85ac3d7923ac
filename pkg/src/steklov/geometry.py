"""Box partitions, global node numbering, and parameter maps.

The domain is split into an axis-aligned grid of equal leaf boxes.  Faces
between boxes are identified combinatorially from box index tuples (never by
coordinate matching), and every retained node gets exactly one global id in
one of three classes: leaf interior, interior interface, or Dirichlet
boundary.  Corner and edge nodes are dropped entirely in ``drop`` mode; in
``legendre`` mode face DOFs live on Gauss–Legendre grids instead.

Curved geometry never changes the partition: it enters only through a
:class:`ParameterMap` that rewrites the operator coefficients on the
rectangular reference domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .local_ops import (CORNER_MODES, DROP_CORNERS, LEGENDRE_FACES,
                        CoefficientField, cheb_nodes, legendre_nodes)

DIRICHLET = "dirichlet"
INTERFACE = "interface"


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned box [lo_1, hi_1] x ... x [lo_d, hi_d], d in {2, 3}."""

    lo: Tuple[float, ...]
    hi: Tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ConfigError("lo and hi must have the same length")
        if len(self.lo) not in (2, 3):
            raise ConfigError(f"domain dimension must be 2 or 3, got {len(self.lo)}")
        for a, b in zip(self.lo, self.hi):
            if not a < b:
                raise ConfigError(f"degenerate extent [{a}, {b}]")

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> Tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))


@dataclass(frozen=True)
class MeshConfig:
    """Uniform partition: boxes_per_dim leaves per axis, order p on each."""

    boxes_per_dim: Tuple[int, ...]
    p: int
    corner_mode: str = DROP_CORNERS

    def __post_init__(self):
        if any(n < 1 for n in self.boxes_per_dim):
            raise ConfigError("boxes_per_dim entries must be >= 1")
        if self.p < 4:
            raise ConfigError(f"interior grid degenerates for p < 4 (got p={self.p})")
        if self.corner_mode not in CORNER_MODES:
            raise ConfigError(f"unknown corner mode {self.corner_mode!r}")


@dataclass
class Face:
    """One box face, identified by (axis, layer, cross-index tuple)."""

    axis: int
    layer: int
    cross: Tuple[int, ...]
    kind: str
    node_ids: np.ndarray
    leaf_ids: Tuple[Optional[int], Optional[int]]  # (low side, high side)


@dataclass
class Leaf:
    index: Tuple[int, ...]
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    interior_ids: np.ndarray
    face_keys: Tuple[Tuple[int, int, Tuple[int, ...]], ...]
    boundary_ids: np.ndarray = field(default=None)


@dataclass
class Discretization:
    """Immutable global numbering of one meshed domain.

    Node ids are laid out as [leaf interiors | interface faces | Dirichlet
    faces]; ``nodes`` holds the coordinates of every retained node.
    """

    domain: DomainBox
    mesh: MeshConfig
    leaves: List[Leaf]
    faces: dict
    nodes: np.ndarray
    index_interior: List[np.ndarray]
    index_interface: np.ndarray
    index_dirichlet: np.ndarray
    interface_offset: int
    dirichlet_offset: int
    nodes1d: List[List[np.ndarray]]
    face_nodes1d: Optional[List[List[np.ndarray]]]

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def p(self) -> int:
        return self.mesh.p

    @property
    def corner_mode(self) -> str:
        return self.mesh.corner_mode

    @property
    def n_total(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_interface(self) -> int:
        return self.index_interface.size

    @property
    def n_dirichlet(self) -> int:
        return self.index_dirichlet.size

    @property
    def leaf_widths(self) -> Tuple[float, ...]:
        return tuple(w / n for w, n in zip(self.domain.widths, self.mesh.boxes_per_dim))

    def leaf_grid1d(self, leaf: Leaf) -> List[np.ndarray]:
        return [self.nodes1d[axis][leaf.index[axis]] for axis in range(self.d)]


def build_discretization(domain: DomainBox, mesh: MeshConfig) -> Discretization:
    """Partition the domain and assign global ids to all retained nodes.

    Shared faces are deduplicated combinatorially: each face exists once,
    keyed by (axis, layer, cross indices), and both adjacent leaves reference
    the same node ids and coordinates.
    """
    d = domain.d
    if len(mesh.boxes_per_dim) != d:
        raise ConfigError("boxes_per_dim length must match the domain dimension")
    p = mesh.p
    nb = mesh.boxes_per_dim

    # Grid planes and per-box 1D node tables; endpoints pinned so both leaves
    # adjacent to a plane see bitwise identical coordinates.
    planes = [np.linspace(domain.lo[k], domain.hi[k], nb[k] + 1) for k in range(d)]
    ref = 0.5 * (cheb_nodes(p) + 1.0)
    ref[0], ref[-1] = 0.0, 1.0
    nodes1d = []
    for k in range(d):
        per_box = []
        for i in range(nb[k]):
            a, b = planes[k][i], planes[k][i + 1]
            x = a + (b - a) * ref
            x[0], x[-1] = a, b
            per_box.append(x)
        nodes1d.append(per_box)

    face_nodes1d = None
    if mesh.corner_mode == LEGENDRE_FACES:
        gref = 0.5 * (legendre_nodes(p - 1) + 1.0)
        face_nodes1d = []
        for k in range(d):
            face_nodes1d.append([planes[k][i] + (planes[k][i + 1] - planes[k][i]) * gref
                                 for i in range(nb[k])])

    def face_tangential_1d(axis: int, cross: Sequence[int]) -> List[np.ndarray]:
        out = []
        for dim in range(d):
            if dim == axis:
                continue
            box = cross[sum(1 for t in range(dim) if t != axis)]
            if mesh.corner_mode == DROP_CORNERS:
                out.append(nodes1d[dim][box][1:-1])
            else:
                out.append(face_nodes1d[dim][box])
        return out

    coords: List[np.ndarray] = []
    next_id = 0

    def tensor_coords(axes_1d: List[np.ndarray]) -> np.ndarray:
        grids = np.meshgrid(*axes_1d, indexing="ij")
        return np.column_stack([g.reshape(-1) for g in grids])

    # Pass 1: leaf interiors.
    leaves: List[Leaf] = []
    leaf_lookup = {}
    for flat, index in enumerate(np.ndindex(*nb)):
        inner = [nodes1d[k][index[k]][1:-1] for k in range(d)]
        pts = tensor_coords(inner)
        ids = np.arange(next_id, next_id + pts.shape[0])
        next_id += pts.shape[0]
        coords.append(pts)
        lo = tuple(planes[k][index[k]] for k in range(d))
        hi = tuple(planes[k][index[k] + 1] for k in range(d))
        keys = []
        for axis in range(d):
            cross = tuple(index[t] for t in range(d) if t != axis)
            keys.append((axis, index[axis], cross))
            keys.append((axis, index[axis] + 1, cross))
        leaves.append(Leaf(index=index, lo=lo, hi=hi, interior_ids=ids,
                           face_keys=tuple(keys)))
        leaf_lookup[index] = flat
    interface_offset = next_id

    def leaf_of(axis: int, layer: int, cross: Sequence[int]) -> Optional[int]:
        idx = list(cross)
        idx.insert(axis, layer)
        return leaf_lookup.get(tuple(idx))

    # Pass 2: faces, interface first then Dirichlet, fixed enumeration order.
    def face_iter(kind: str):
        for axis in range(d):
            layers = (range(1, nb[axis]) if kind == INTERFACE else (0, nb[axis]))
            cross_shape = tuple(nb[t] for t in range(d) if t != axis)
            for layer in layers:
                for cross in np.ndindex(*cross_shape):
                    yield axis, layer, cross

    faces = {}
    for kind in (INTERFACE, DIRICHLET):
        for axis, layer, cross in face_iter(kind):
            tang = face_tangential_1d(axis, cross)
            pts_t = tensor_coords(tang) if d > 2 else tang[0][:, None]
            pts = np.insert(pts_t, axis, planes[axis][layer], axis=1)
            ids = np.arange(next_id, next_id + pts.shape[0])
            next_id += pts.shape[0]
            coords.append(pts)
            faces[(axis, layer, cross)] = Face(
                axis=axis, layer=layer, cross=cross, kind=kind, node_ids=ids,
                leaf_ids=(leaf_of(axis, layer - 1, cross), leaf_of(axis, layer, cross)))
        if kind == INTERFACE:
            dirichlet_offset = next_id

    for leaf in leaves:
        leaf.boundary_ids = np.concatenate(
            [faces[key].node_ids for key in leaf.face_keys])

    return Discretization(
        domain=domain, mesh=mesh, leaves=leaves, faces=faces,
        nodes=np.vstack(coords),
        index_interior=[leaf.interior_ids for leaf in leaves],
        index_interface=np.arange(interface_offset, dirichlet_offset),
        index_dirichlet=np.arange(dirichlet_offset, next_id),
        interface_offset=interface_offset, dirichlet_offset=dirichlet_offset,
        nodes1d=nodes1d, face_nodes1d=face_nodes1d)


def leaf_neighbors(disc: Discretization, leaf_id: int):
    """(face key, neighbor leaf id or None) per face, in -x,+x,-y,+y[,-z,+z] order.

    None marks a face on the domain boundary.
    """
    if not 0 <= leaf_id < len(disc.leaves):
        raise ConfigError(f"leaf id {leaf_id} out of range")
    leaf = disc.leaves[leaf_id]
    out = []
    for key in leaf.face_keys:
        face = disc.faces[key]
        low, high = face.leaf_ids
        other = high if low == leaf_id else low
        out.append((key, other))
    return out


# ---------------------------------------------------------------------------
# Parameter maps for curved domains
# ---------------------------------------------------------------------------

@dataclass
class ParameterMap:
    """Analytic map from the reference box to a curved physical domain.

    ``forward`` sends reference points to physical points;
    ``coefficient_transform`` rewrites a coefficient field given on the
    physical domain as the equivalent field on the reference box.
    """

    forward: Callable[[np.ndarray], np.ndarray]
    coefficient_transform: Callable[[CoefficientField], CoefficientField]


def sinusoidal_map(amplitude: float, frequency: float) -> ParameterMap:
    """Map whose physical domain scales the second axis by 1/psi(x1).

    psi(z) = 1 - amplitude*sin(frequency*z); the physical point is
    (x1, x2/psi(x1), x3).  The transformed operator picks up a variable
    diagonal coefficient, a mixed x1-x2 second derivative, and a first-order
    term in x2; identity amplitude=0 leaves coefficients unchanged.
    """
    if not abs(amplitude) < 1.0:
        raise ConfigError("|amplitude| must be < 1 so the profile stays positive")
    A, F = float(amplitude), float(frequency)

    def psi(z):
        return 1.0 - A * np.sin(F * z)

    def dpsi(z):
        return -A * F * np.cos(F * z)

    def d2psi(z):
        return A * F * F * np.sin(F * z)

    def forward(x: np.ndarray) -> np.ndarray:
        y = np.array(x, dtype=float, copy=True)
        y[:, 1] = x[:, 1] / psi(x[:, 0])
        return y

    def transform(base: CoefficientField) -> CoefficientField:
        if base.has_cross_terms:
            raise ConfigError("base operator for the sinusoidal map must have "
                              "isotropic second order coefficients")

        def check_isotropic(x):
            a2 = np.asarray(base.second_order(x))
            if not np.allclose(a2, np.eye(x.shape[1])[None], atol=1e-12):
                raise ConfigError("sinusoidal map supports unit-diffusion "
                                  "second order coefficients only")

        def second_order(x):
            check_isotropic(x[:1])
            n, d = x.shape
            ps, dp = psi(x[:, 0]), dpsi(x[:, 0])
            g = dp * x[:, 1] / ps
            a2 = np.zeros((n, d, d))
            for k in range(d):
                a2[:, k, k] = 1.0
            a2[:, 1, 1] = g * g + ps * ps
            a2[:, 0, 1] = g
            a2[:, 1, 0] = g
            return a2

        def first_order(x):
            n, d = x.shape
            ps = psi(x[:, 0])
            a1 = np.zeros((n, d))
            a1[:, 1] = -d2psi(x[:, 0]) * x[:, 1] / ps
            if base.first_order is not None:
                b = np.asarray(base.first_order(forward(x)), dtype=float)
                g = dpsi(x[:, 0]) * x[:, 1] / ps
                a1[:, 0] += b[:, 0]
                a1[:, 1] += b[:, 0] * g + b[:, 1] * ps
                if d == 3:
                    a1[:, 2] += b[:, 2]
            return a1

        zeroth = None
        if base.zeroth_order is not None:
            def zeroth(x):
                return np.asarray(base.zeroth_order(forward(x)), dtype=float)

        return CoefficientField(second_order=second_order, first_order=first_order,
                                zeroth_order=zeroth, has_cross_terms=(A != 0.0))

    return ParameterMap(forward=forward, coefficient_transform=transform)
