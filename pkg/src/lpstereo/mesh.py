"""Triangle meshes, the per-edge difference operator, and geometric quality metrics.

The mesh is an indexed vertex/face surface. Connectivity may be non-manifold;
only the undirected edge graph matters for the differential operator. All types
are frozen after construction, so every function here is pure and safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse


class MeshError(Exception):
    """Invalid mesh data, or an operation applied to incompatible meshes."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface with a derived undirected edge list.

    ``edges`` stores each undirected edge exactly once, lower vertex index
    first, sorted lexicographically; ``edge_face_count`` records how many
    faces share each edge (1 on the boundary, 2 on interior manifold edges,
    more on non-manifold fans).
    """

    vertices: np.ndarray
    faces: np.ndarray
    edges: np.ndarray = field(init=False)
    edge_face_count: np.ndarray = field(init=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        faces = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {verts.shape}")
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshError(f"faces must be (n_f, 3), got {faces.shape}")
        n = len(verts)
        if faces.size:
            if faces.min() < 0 or faces.max() >= n:
                raise MeshError("face index out of range")
            degenerate = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 2] == faces[:, 0])
            )
            if degenerate.any():
                raise MeshError(f"degenerate face(s): {np.flatnonzero(degenerate)[:8]}")
        pairs = np.concatenate(
            [faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=0
        )
        pairs.sort(axis=1)
        if pairs.size:
            edges, counts = np.unique(pairs, axis=0, return_counts=True)
        else:
            edges = np.empty((0, 2), dtype=np.int64)
            counts = np.empty((0,), dtype=np.int64)
        object.__setattr__(self, "vertices", _freeze(verts))
        object.__setattr__(self, "faces", _freeze(faces))
        object.__setattr__(self, "edges", _freeze(edges))
        object.__setattr__(self, "edge_face_count", _freeze(counts))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.linalg.norm(d, axis=1)

    def mean_edge_length(self) -> float:
        if self.n_edges == 0:
            raise MeshError("mesh has no edges")
        return float(self.edge_lengths().mean())

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        """Same connectivity, new vertex positions."""
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise MeshError(
                f"position field shape {vertices.shape} != {self.vertices.shape}"
            )
        return TriangleMesh(vertices, self.faces)

    def same_connectivity(self, other: "TriangleMesh") -> bool:
        return (
            self.faces.shape == other.faces.shape
            and bool(np.array_equal(self.faces, other.faces))
            and self.n_vertices == other.n_vertices
        )


@dataclass(frozen=True)
class EdgeDifferentialOperator:
    """Sparse m x n operator mapping vertex positions to per-edge differences.

    Row i corresponds to edge i = (a, b) with a < b and yields x_b - x_a,
    so every row has exactly two nonzeros (+1 and -1) and annihilates
    constant fields.
    """

    rows: int
    cols: int
    matrix: sparse.csr_matrix

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        coo = self.matrix.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def gram(self) -> sparse.csr_matrix:
        """D^T D, the graph Laplacian of the edge graph."""
        return (self.matrix.T @ self.matrix).tocsr()


def edge_difference_matrix(edges: np.ndarray, n_vertices: int) -> sparse.csr_matrix:
    """Signed incidence matrix for an undirected edge list (lower index negative)."""
    edges = np.asarray(edges, dtype=np.int64)
    m = len(edges)
    if m == 0:
        raise MeshError("empty operator")
    rows = np.repeat(np.arange(m), 2)
    cols = edges[:, ::-1].reshape(-1)  # (b, a) per edge
    data = np.tile(np.array([1.0, -1.0]), m)
    return sparse.csr_matrix((data, (rows, cols)), shape=(m, n_vertices))


def build_edge_operator(mesh: TriangleMesh) -> EdgeDifferentialOperator:
    """Assemble the per-edge difference operator for a mesh.

    Raises MeshError("empty operator") for meshes without edges.
    """
    matrix = edge_difference_matrix(mesh.edges, mesh.n_vertices)
    return EdgeDifferentialOperator(rows=mesh.n_edges, cols=mesh.n_vertices, matrix=matrix)


def apply_operator(op: EdgeDifferentialOperator, positions: np.ndarray) -> np.ndarray:
    """Per-edge signed differences of a vertex field (n x k -> m x k)."""
    positions = np.asarray(positions, dtype=np.float64)
    squeeze = positions.ndim == 1
    if squeeze:
        positions = positions[:, None]
    if positions.shape[0] != op.cols:
        raise MeshError(
            f"position field has {positions.shape[0]} rows, operator expects {op.cols}"
        )
    out = op.matrix @ positions
    return out[:, 0] if squeeze else out


def add_gaussian_noise(mesh: TriangleMesh, sigma: float, seed: int) -> TriangleMesh:
    """Perturb every vertex coordinate by an independent N(0, sigma^2) draw.

    Deterministic for a fixed seed; sigma = 0 returns an identical mesh.
    """
    if sigma < 0:
        raise MeshError("sigma must be >= 0")
    if sigma == 0:
        return mesh.with_vertices(mesh.vertices)
    rng = np.random.default_rng(seed)
    noise = sigma * rng.standard_normal(mesh.vertices.shape)
    return mesh.with_vertices(mesh.vertices + noise)


def edge_adjacent_faces(mesh: TriangleMesh) -> list[np.ndarray]:
    """Face indices adjacent to each edge, in edge-list order."""
    faces = mesh.faces
    pairs = np.concatenate(
        [faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=0
    )
    pairs.sort(axis=1)
    face_ids = np.tile(np.arange(len(faces)), 3)
    # locate each half-edge's undirected edge id in the sorted unique edge list
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    sorted_pairs = pairs[order]
    sorted_faces = face_ids[order]
    edge_ids = np.searchsorted(
        mesh.edges[:, 0] * (mesh.n_vertices + 1) + mesh.edges[:, 1],
        sorted_pairs[:, 0] * (mesh.n_vertices + 1) + sorted_pairs[:, 1],
    )
    out: list[list[int]] = [[] for _ in range(mesh.n_edges)]
    for eid, fid in zip(edge_ids, sorted_faces):
        out[eid].append(fid)
    return [np.asarray(lst, dtype=np.int64) for lst in out]


def face_normals(mesh: TriangleMesh) -> np.ndarray:
    """Unit face normals; zero vector for degenerate (zero-area) faces."""
    v = mesh.vertices
    f = mesh.faces
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norms = np.linalg.norm(n, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return n / safe[:, None]


def dihedral_angles_deg(mesh: TriangleMesh, edge_indices=None) -> np.ndarray:
    """Angle in degrees between adjacent face normals (0 = flat).

    Only defined for edges with exactly two adjacent faces; others get NaN.
    """
    adj = edge_adjacent_faces(mesh)
    normals = face_normals(mesh)
    if edge_indices is None:
        edge_indices = np.arange(mesh.n_edges)
    edge_indices = np.asarray(edge_indices, dtype=np.int64)
    out = np.full(len(edge_indices), np.nan)
    for k, e in enumerate(edge_indices):
        fs = adj[e]
        if len(fs) == 2:
            c = float(np.clip(np.dot(normals[fs[0]], normals[fs[1]]), -1.0, 1.0))
            out[k] = np.degrees(np.arccos(c))
    return out


def crease_edges_by_threshold(mesh: TriangleMesh, threshold_deg: float = 30.0) -> np.ndarray:
    """Edge indices whose dihedral angle exceeds the threshold (ground-truth creases)."""
    ang = dihedral_angles_deg(mesh)
    return np.flatnonzero(np.nan_to_num(ang, nan=0.0) > threshold_deg)


@dataclass(frozen=True)
class MeshQualityReport:
    vertex_rmse: float
    mean_dihedral_error_deg: float
    max_deviation: float


def quality_report(
    candidate: TriangleMesh,
    reference: TriangleMesh,
    crease_edges=None,
) -> MeshQualityReport:
    """Positional and crease-angle deviation of a candidate from a reference.

    Both meshes must share identical connectivity. The dihedral error is the
    mean absolute difference of dihedral angles over the supplied crease-edge
    index set (empty set contributes 0).
    """
    if not candidate.same_connectivity(reference):
        raise MeshError("connectivity mismatch between candidate and reference")
    d = np.linalg.norm(candidate.vertices - reference.vertices, axis=1)
    rmse = float(np.sqrt(np.mean(d**2)))
    max_dev = float(d.max()) if len(d) else 0.0
    if crease_edges is None or len(np.atleast_1d(crease_edges)) == 0:
        dihedral_err = 0.0
    else:
        crease_edges = np.asarray(crease_edges, dtype=np.int64)
        a_c = dihedral_angles_deg(candidate, crease_edges)
        a_r = dihedral_angles_deg(reference, crease_edges)
        if np.isnan(a_r).any() or np.isnan(a_c).any():
            raise MeshError("crease edge without exactly two adjacent faces")
        dihedral_err = float(np.mean(np.abs(a_c - a_r)))
    return MeshQualityReport(
        vertex_rmse=rmse,
        mean_dihedral_error_deg=dihedral_err,
        max_deviation=max_dev,
    )
