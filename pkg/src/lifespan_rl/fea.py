"""Linear plane-stress finite elements with constant-strain triangles.

The tool is treated as an extruded planar body of uniform thickness. Each
environment step is analysed as an independent static problem; the
per-element von Mises values of consecutive steps form a
:class:`~lifespan_rl.fatigue.StressHistory`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConfigError, DataError, MeshError, SolverError

MESH_HEADER = "toolmesh v1"
MIN_AREA = 1e-12
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray
    elements: np.ndarray
    fixed_nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        elements = np.asarray(self.elements, dtype=np.int64)
        fixed = np.unique(np.asarray(self.fixed_nodes, dtype=np.int64))
        if nodes.ndim != 2 or nodes.shape[1] != 2 or len(nodes) < 3:
            raise MeshError(f"nodes must be an (N>=3, 2) array, got {nodes.shape}")
        if not np.all(np.isfinite(nodes)):
            raise MeshError("node coordinates must be finite")
        if elements.ndim != 2 or elements.shape[1] != 3 or len(elements) < 1:
            raise MeshError(f"elements must be an (M>=1, 3) array, got {elements.shape}")
        if elements.min() < 0 or elements.max() >= len(nodes):
            raise MeshError("element node index out of range")
        if fixed.size and (fixed.min() < 0 or fixed.max() >= len(nodes)):
            raise MeshError("fixed node index out of range")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "fixed_nodes", fixed)
        bad = np.flatnonzero(np.abs(self.signed_areas()) <= MIN_AREA)
        if bad.size:
            raise MeshError(f"degenerate triangle(s): {bad[:10].tolist()}")
        if 2 * fixed.size < 3:
            raise ConfigError(
                "at least 3 constrained degrees of freedom are needed to remove rigid-body modes"
            )

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def boundary_edges(self) -> np.ndarray:
        """Edges that belong to exactly one triangle, as sorted node pairs."""
        e = self.elements
        edges = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return uniq[counts == 1]

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges())

    def transformed(self, rotation: np.ndarray, shift=(0.0, 0.0)) -> "Mesh":
        return Mesh(self.nodes @ np.asarray(rotation).T + np.asarray(shift), self.elements, self.fixed_nodes)


@dataclass(frozen=True)
class Material:
    youngs_modulus: float
    poisson_ratio: float
    thickness: float

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ConfigError("Young's modulus must be positive")
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ConfigError("Poisson ratio must lie in (0, 0.5)")
        if not self.thickness > 0:
            raise ConfigError("thickness must be positive")

    def elasticity(self) -> np.ndarray:
        E, nu = self.youngs_modulus, self.poisson_ratio
        f = E / (1.0 - nu**2)
        return f * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]])


@dataclass(frozen=True)
class LoadCase:
    point_loads: tuple[tuple[int, float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "point_loads", tuple((int(n), float(fx), float(fy)) for n, fx, fy in self.point_loads)
        )

    def force_vector(self, mesh: Mesh) -> np.ndarray:
        f = np.zeros(2 * mesh.n_nodes)
        fixed = set(mesh.fixed_nodes.tolist())
        for node, fx, fy in self.point_loads:
            if not 0 <= node < mesh.n_nodes:
                raise DataError(f"load on unknown node {node}")
            if node in fixed:
                raise DataError(f"load applied to fully constrained node {node}")
            if not (np.isfinite(fx) and np.isfinite(fy)):
                raise DataError("load components must be finite")
            f[2 * node] += fx
            f[2 * node + 1] += fy
        return f


def strain_displacement(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """CST B-matrices, shape (M, 3, 6), and element areas (always positive)."""
    p = mesh.nodes[mesh.elements]
    x, y = p[..., 0], p[..., 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / area2[:, None]
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / area2[:, None]
    B = np.zeros((mesh.n_elements, 3, 6))
    B[:, 0, 0::2] = b
    B[:, 1, 1::2] = c
    B[:, 2, 0::2] = c
    B[:, 2, 1::2] = b
    return B, 0.5 * np.abs(area2)


def _element_dofs(mesh: Mesh) -> np.ndarray:
    e = mesh.elements
    return np.stack([2 * e[:, 0], 2 * e[:, 0] + 1, 2 * e[:, 1], 2 * e[:, 1] + 1, 2 * e[:, 2], 2 * e[:, 2] + 1], axis=1)


@dataclass
class StiffnessSystem:
    """Global stiffness with constrained DOFs eliminated, factorized once.

    The factorization is never mutated after construction, so one instance
    can be shared between concurrent solves.
    """

    mesh: Mesh
    material: Material
    K: sp.csr_matrix
    free_dofs: np.ndarray
    K_free: sp.csc_matrix = field(repr=False)
    _lu: object = field(repr=False)
    pivot_ratio: float = 0.0

    def solve(self, f: np.ndarray) -> np.ndarray:
        u = np.zeros(2 * self.mesh.n_nodes)
        rhs = f[self.free_dofs]
        if not np.any(rhs):
            return u
        uf = self._lu.solve(rhs)
        residual = np.linalg.norm(self.K_free @ uf - rhs) / np.linalg.norm(rhs)
        if not residual <= RESIDUAL_TOL:
            raise SolverError(
                f"relative residual {residual:.3e} exceeds {RESIDUAL_TOL:g} "
                f"(pivot ratio {self.pivot_ratio:.3e})"
            )
        u[self.free_dofs] = uf
        return u


def assemble_stiffness(mesh: Mesh, material: Material) -> StiffnessSystem:
    B, area = strain_displacement(mesh)
    D = material.elasticity()
    ke = material.thickness * area[:, None, None] * np.einsum("mki,kl,mlj->mij", B, D, B)
    dofs = _element_dofs(mesh)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = 2 * mesh.n_nodes
    K = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))
    K = 0.5 * (K + K.T)

    fixed = np.concatenate([2 * mesh.fixed_nodes, 2 * mesh.fixed_nodes + 1])
    free = np.setdiff1d(np.arange(n), fixed)
    K_free = K[free][:, free].tocsc()
    try:
        lu = splu(
            K_free,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:
        raise ConfigError(f"stiffness matrix is singular ({exc}); check fixed nodes") from exc
    pivots = lu.U.diagonal()
    if np.any(pivots <= 0.0):
        raise ConfigError("reduced stiffness is not positive definite; the tool is under-constrained")
    ratio = float(pivots.max() / pivots.min())
    if ratio > 1e14:
        raise SolverError(f"stiffness is ill-conditioned (pivot ratio {ratio:.3e})")
    return StiffnessSystem(mesh, material, K.tocsr(), free, K_free, lu, ratio)


def solve_static(mesh: Mesh, material: Material, loads: LoadCase, system: StiffnessSystem | None = None) -> np.ndarray:
    """Nodal displacements ``u`` (length 2N, interleaved x/y) for a load case."""
    if system is None:
        system = assemble_stiffness(mesh, material)
    return system.solve(loads.force_vector(mesh))


def element_stresses(mesh: Mesh, material: Material, displacements: np.ndarray) -> np.ndarray:
    """(M, 3) array of ``[sigma_x, sigma_y, tau_xy]`` per triangle."""
    u = np.asarray(displacements, dtype=float)
    if u.shape != (2 * mesh.n_nodes,):
        raise DataError(f"displacement vector must have length {2 * mesh.n_nodes}")
    B, _ = strain_displacement(mesh)
    strain = np.einsum("mij,mj->mi", B, u[_element_dofs(mesh)])
    return strain @ material.elasticity().T


def von_mises_plane(stress: np.ndarray) -> np.ndarray:
    sx, sy, txy = stress[..., 0], stress[..., 1], stress[..., 2]
    return np.sqrt(np.maximum(sx * sx + sy * sy - sx * sy + 3.0 * txy * txy, 0.0))


def von_mises(mesh: Mesh, material: Material, displacements: np.ndarray) -> np.ndarray:
    return von_mises_plane(element_stresses(mesh, material, displacements))


def stress_sample(mesh: Mesh, material: Material, loads: LoadCase, system: StiffnessSystem | None = None) -> np.ndarray:
    return von_mises(mesh, material, solve_static(mesh, material, loads, system))


class StressSampler:
    """Fast per-step stress evaluation for single point loads.

    Unit-load stress responses are precomputed for every loadable boundary
    node, so a sample costs one small linear combination instead of a solve.
    """

    def __init__(self, mesh: Mesh, material: Material):
        self.mesh = mesh
        self.material = material
        self.system = assemble_stiffness(mesh, material)
        fixed = set(mesh.fixed_nodes.tolist())
        self.load_nodes = np.array([n for n in mesh.boundary_nodes() if n not in fixed], dtype=np.int64)
        if self.load_nodes.size == 0:
            raise MeshError("mesh has no loadable boundary nodes")
        self._unit = np.empty((self.load_nodes.size, 2, mesh.n_elements, 3))
        for k, node in enumerate(self.load_nodes):
            for axis in (0, 1):
                f = np.zeros(2 * mesh.n_nodes)
                f[2 * node + axis] = 1.0
                self._unit[k, axis] = element_stresses(mesh, material, self.system.solve(f))
        self._index = {int(n): k for k, n in enumerate(self.load_nodes)}
        self._unit.setflags(write=False)

    @property
    def n_elements(self) -> int:
        return self.mesh.n_elements

    def nearest_load_node(self, point: Sequence[float]) -> int:
        """Closest loadable boundary node; ties go to the lowest node id."""
        d2 = np.sum((self.mesh.nodes[self.load_nodes] - np.asarray(point, dtype=float)) ** 2, axis=1)
        # load_nodes is sorted, so argmin already returns the lowest id on ties
        return int(self.load_nodes[int(np.argmin(d2))])

    def components(self, node: int, fx: float, fy: float) -> np.ndarray:
        k = self._index[int(node)]
        return fx * self._unit[k, 0] + fy * self._unit[k, 1]

    def sample(self, node: int, fx: float, fy: float) -> np.ndarray:
        return von_mises_plane(self.components(node, fx, fy))

    def sample_at(self, point: Sequence[float], force: Sequence[float]) -> np.ndarray:
        return self.sample(self.nearest_load_node(point), force[0], force[1])

    def zero(self) -> np.ndarray:
        return np.zeros(self.mesh.n_elements)


def rectangle_mesh(length: float, depth: float, nx: int, ny: int, clamp_left: bool = True) -> Mesh:
    """Structured strip meshed with two triangles per cell (alternating diagonals)."""
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, depth, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    elements = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            if (i + j) % 2 == 0:
                elements += [(a, b, c), (a, c, d)]
            else:
                elements += [(a, b, d), (b, c, d)]
    fixed = [nid(0, j) for j in range(ny + 1)] if clamp_left else []
    return Mesh(nodes, np.array(elements), np.array(fixed, dtype=np.int64))


def cell_mesh(rows: Sequence[str], cell: float, origin_cell: tuple[float, float] | None = None) -> Mesh:
    """Mesh a tool drawn as a character grid.

    ``rows`` are listed top to bottom. ``#`` marks material, ``M`` marks
    material whose nodes are clamped to the robot flange. Every cell becomes
    two triangles. Coordinates are shifted so the centroid of the ``M``
    cells sits at the origin (the end-effector).
    """
    grid = [r.rstrip() for r in rows]
    height = len(grid)
    cells = []
    mount = []
    for r, line in enumerate(grid):
        for c, ch in enumerate(line):
            if ch in "#M":
                cells.append((c, height - 1 - r))
                if ch == "M":
                    mount.append((c, height - 1 - r))
    if not cells:
        raise MeshError("tool drawing contains no material")
    if not mount:
        raise MeshError("tool drawing has no mount cells")
    ids: dict[tuple[int, int], int] = {}
    coords = []

    def node(i, j):
        if (i, j) not in ids:
            ids[(i, j)] = len(coords)
            coords.append((i, j))
        return ids[(i, j)]

    elements = []
    fixed = set()
    mount_set = set(mount)
    for i, j in sorted(cells, key=lambda ij: (ij[1], ij[0])):
        a, b, c, d = node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)
        if (i + j) % 2 == 0:
            elements += [(a, b, c), (a, c, d)]
        else:
            elements += [(a, b, d), (b, c, d)]
        if (i, j) in mount_set:
            fixed.update((a, b, c, d))
    if origin_cell is None:
        origin_cell = tuple(np.mean(np.array(mount, dtype=float) + 0.5, axis=0))
    nodes = (np.array(coords, dtype=float) - np.asarray(origin_cell)) * cell
    return Mesh(nodes, np.array(elements), np.array(sorted(fixed)))


def write_mesh(mesh: Mesh, path: str | Path) -> None:
    lines = [MESH_HEADER]
    lines += [f"n {i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.nodes.tolist())]
    lines += [f"e {i} {a} {b} {c}" for i, (a, b, c) in enumerate(mesh.elements.tolist())]
    lines += [f"f {n}" for n in mesh.fixed_nodes.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def parse_mesh(lines: Iterable[str]) -> Mesh:
    it = iter(lines)
    header = next(it, "").strip()
    if header != MESH_HEADER:
        raise MeshError(f"expected header '{MESH_HEADER}', found '{header}'")
    nodes: list[tuple[float, float]] = []
    elements: list[tuple[int, int, int]] = []
    fixed: list[int] = []
    for lineno, raw in enumerate(it, start=2):
        parts = raw.split()
        if not parts:
            continue
        try:
            kind = parts[0]
            ident = int(parts[1])
            if kind == "n" and len(parts) == 4:
                if ident != len(nodes):
                    raise MeshError(f"line {lineno}: node ids must be consecutive from 0")
                nodes.append((float(parts[2]), float(parts[3])))
            elif kind == "e" and len(parts) == 5:
                if ident != len(elements):
                    raise MeshError(f"line {lineno}: element ids must be consecutive from 0")
                elements.append((int(parts[2]), int(parts[3]), int(parts[4])))
            elif kind == "f" and len(parts) == 2:
                fixed.append(ident)
            else:
                raise MeshError(f"line {lineno}: cannot parse '{raw.strip()}'")
        except (ValueError, IndexError) as exc:
            raise MeshError(f"line {lineno}: cannot parse '{raw.strip()}'") from exc
    return Mesh(np.array(nodes, dtype=float).reshape(-1, 2), np.array(elements, dtype=np.int64).reshape(-1, 3), np.array(fixed, dtype=np.int64))


def read_mesh(path: str | Path) -> Mesh:
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise ConfigError(f"cannot read mesh file {path}: {exc}") from exc
    return parse_mesh(text.splitlines())
