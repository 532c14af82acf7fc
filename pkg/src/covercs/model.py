"""Discrete signal model: dictionary, cone projection, product-space projection.

A signal pixel lives on the cone over a finite dictionary: the projection of
a vector z picks the nearest normalized atom and rescales it by the clamped
real inner product.  Across J pixels the projection decouples column-wise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from covercs import covertree
from covercs.covertree import CoverTree, PointSet

__all__ = [
    "Dictionary",
    "ConeProjection",
    "ProductProjectionResult",
    "cone_project_exact",
    "cone_project_approx",
    "cone_project_additive",
    "product_project",
    "save_dictionary",
    "load_dictionary",
]

_DICT_MAGIC = b"CSDICT01"


class Dictionary:
    """d complex atoms of length n_chan with per-atom (T1, T2) parameters.

    `atoms` keeps the raw rows, `normalized_atoms` the unit-norm rows used by
    nearest-atom searches.  `params` is a (d, 2) float array; all-zero when no
    parameters apply.
    """

    def __init__(self, atoms, params=None):
        atoms = np.asarray(atoms, dtype=np.complex128)
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise ValueError("atoms must be a non-empty (d, n_chan) array")
        norms = np.linalg.norm(atoms, axis=1)
        if np.any(norms == 0):
            raise ValueError(f"atom {int(np.argmin(norms))} has zero norm")
        self.atoms = atoms
        self.norms = norms
        self.normalized_atoms = atoms / norms[:, None]
        if params is None:
            params = np.zeros((atoms.shape[0], 2))
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (atoms.shape[0], 2):
            raise ValueError("params must have shape (d, 2)")
        self.params = params

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_chan(self) -> int:
        return self.atoms.shape[1]

    def build_tree(self) -> CoverTree:
        """Cover tree over the normalized atoms."""
        return covertree.build(PointSet(self.normalized_atoms))


@dataclass
class ConeProjection:
    atom_id: int
    gamma: float
    projected: np.ndarray
    distances_evaluated: int = 0
    clamped: bool = False  # real inner product was <= 0 and got clamped


def _rescale(dictionary: Dictionary, atom_id: int, z: np.ndarray) -> ConeProjection:
    psi = dictionary.atoms[atom_id]
    raw = float(np.vdot(psi, z).real) / float(dictionary.norms[atom_id]) ** 2
    gamma = max(raw, 0.0)
    projected = gamma * psi if gamma > 0 else np.zeros_like(psi)
    return ConeProjection(atom_id, gamma, projected, clamped=raw <= 0.0)


def cone_project_exact(dictionary: Dictionary, z) -> ConeProjection:
    """Nearest normalized atom by exhaustive search, then nonnegative rescale."""
    z = np.asarray(z, dtype=np.complex128)
    if z.shape != (dictionary.n_chan,):
        raise ValueError(f"z has shape {z.shape}, expected ({dictionary.n_chan},)")
    res = covertree.nn_exact_brute(PointSet(dictionary.normalized_atoms), z)
    out = _rescale(dictionary, res.point_id, z)
    out.distances_evaluated = res.distances_evaluated
    return out


def cone_project_approx(dictionary: Dictionary, tree: CoverTree, z, prev_atom_id: int,
                        epsilon: float) -> ConeProjection:
    """(1+epsilon)-approximate cone projection via tree search.

    The tree is queried with z normalized to unit length, warm-started at the
    previously selected atom; the rescaling step is identical to the exact
    projection.  A zero z skips the search and returns the zero projection.
    """
    z = np.asarray(z, dtype=np.complex128)
    if z.shape != (dictionary.n_chan,):
        raise ValueError(f"z has shape {z.shape}, expected ({dictionary.n_chan},)")
    if not (0 <= prev_atom_id < dictionary.size):
        raise ValueError(f"invalid previous atom id {prev_atom_id}")
    zn = float(np.linalg.norm(z))
    if zn == 0.0:
        return ConeProjection(prev_atom_id, 0.0, np.zeros_like(z))
    res = covertree.ann_search(tree, z / zn, prev_atom_id, epsilon)
    out = _rescale(dictionary, res.point_id, z)
    out.distances_evaluated = res.distances_evaluated
    return out


def cone_project_additive(dictionary: Dictionary, tree: CoverTree, z, prev_atom_id: int,
                          eps_add: float) -> ConeProjection:
    """Cone projection within additive slack eps_add on the squared distance.

    The normalized-sphere search budget is eps_add / ||z||^2: a slack of e on
    the unit-sphere squared distance loosens the cone squared distance by at
    most ||z||^2 * e.
    """
    z = np.asarray(z, dtype=np.complex128)
    if z.shape != (dictionary.n_chan,):
        raise ValueError(f"z has shape {z.shape}, expected ({dictionary.n_chan},)")
    if eps_add < 0:
        raise ValueError("eps_add must be >= 0")
    zn = float(np.linalg.norm(z))
    if zn == 0.0:
        return ConeProjection(prev_atom_id, 0.0, np.zeros_like(z))
    res = covertree.ann_search_additive(tree, z / zn, prev_atom_id, eps_add / zn**2)
    out = _rescale(dictionary, res.point_id, z)
    out.distances_evaluated = res.distances_evaluated
    return out


@dataclass
class ProductProjectionResult:
    image: np.ndarray          # (n_chan, J) projected columns
    atom_ids: np.ndarray       # (J,) int
    gammas: np.ndarray         # (J,) float
    distances: int             # total distance evaluations
    clamp_count: int           # pixels whose inner product was clamped at 0


def product_project(dictionary: Dictionary, tree: CoverTree | None, Z,
                    prev_atoms, epsilon: float = 0.0,
                    mode: str = "exact") -> ProductProjectionResult:
    """Column-wise cone projection of an (n_chan, J) image.

    mode: "exact" (brute per pixel), "multiplicative" ((1+epsilon)-tree search)
    or "additive" (total squared-distance slack epsilon split evenly across
    pixels).  Tree modes require `tree` built on the normalized atoms.

    Pixels are independent and the dictionary/tree are read-only, so callers
    may shard columns across threads and sum the returned distance counts.
    """
    Z = np.asarray(Z, dtype=np.complex128)
    if Z.ndim != 2 or Z.shape[0] != dictionary.n_chan:
        raise ValueError(f"Z has shape {Z.shape}, expected ({dictionary.n_chan}, J)")
    J = Z.shape[1]
    prev_atoms = np.asarray(prev_atoms, dtype=int)
    if prev_atoms.shape != (J,):
        raise ValueError(f"prev_atoms has shape {prev_atoms.shape}, expected ({J},)")
    if mode not in ("exact", "multiplicative", "additive"):
        raise ValueError(f"unknown projection mode {mode!r}")
    if mode != "exact" and tree is None:
        raise ValueError(f"mode {mode!r} requires a cover tree")

    out = np.empty_like(Z)
    ids = np.empty(J, dtype=int)
    gammas = np.empty(J)
    total = 0
    clamped = 0

    if mode == "exact":
        # One matrix product gives all real coherences; argmin distance to the
        # unit atoms is argmax coherence.  Counts d evaluations per pixel.
        coh = (dictionary.normalized_atoms.conj() @ Z).real
        ids[:] = np.argmax(coh, axis=0)
        total = dictionary.size * J
        for j in range(J):
            proj = _rescale(dictionary, int(ids[j]), Z[:, j])
            out[:, j] = proj.projected
            gammas[j] = proj.gamma
            clamped += proj.clamped
        return ProductProjectionResult(out, ids, gammas, total, clamped)

    per_pixel_eps = epsilon / J if mode == "additive" else epsilon
    for j in range(J):
        try:
            if mode == "multiplicative":
                proj = cone_project_approx(dictionary, tree, Z[:, j], int(prev_atoms[j]),
                                           per_pixel_eps)
            else:
                proj = cone_project_additive(dictionary, tree, Z[:, j], int(prev_atoms[j]),
                                             per_pixel_eps)
        except ValueError as exc:
            raise ValueError(f"pixel {j}: {exc}") from exc
        out[:, j] = proj.projected
        ids[j] = proj.atom_id
        gammas[j] = proj.gamma
        total += proj.distances_evaluated
        clamped += proj.clamped
    return ProductProjectionResult(out, ids, gammas, total, clamped)


# ---------------------------------------------------------------------------
# Dictionary file format: magic, uint64 d, uint64 n_chan, then d*n_chan
# complex entries as interleaved (real, imag) float64 row-major, then d rows
# of (T1, T2) float64.  All little-endian.

def save_dictionary(dictionary: Dictionary, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_DICT_MAGIC)
        fh.write(struct.pack("<QQ", dictionary.size, dictionary.n_chan))
        inter = np.empty((dictionary.size, dictionary.n_chan, 2))
        inter[:, :, 0] = dictionary.atoms.real
        inter[:, :, 1] = dictionary.atoms.imag
        fh.write(inter.astype("<f8").tobytes())
        fh.write(dictionary.params.astype("<f8").tobytes())


def load_dictionary(path) -> Dictionary:
    with open(path, "rb") as fh:
        magic = fh.read(len(_DICT_MAGIC))
        if magic != _DICT_MAGIC:
            raise ValueError(f"{path} is not a dictionary file")
        d, n_chan = struct.unpack("<QQ", fh.read(16))
        inter = np.frombuffer(fh.read(d * n_chan * 16), dtype="<f8").reshape(d, n_chan, 2)
        atoms = inter[:, :, 0] + 1j * inter[:, :, 1]
        params = np.frombuffer(fh.read(d * 16), dtype="<f8").reshape(d, 2)
    return Dictionary(atoms, params.copy())
