"""Linear forward models: apply/adjoint contract, dense and EPI-Fourier
operators, and empirical embedding/operator-norm estimators.

Vectorization layout (the single wire format): an (n_chan, J) image maps to a
vector of length n = n_chan * J with slice l occupying entries
[l*J, (l+1)*J); within a slice, pixel j indexes the (height, width) grid in
column-major order (j = row + height * col).  Measurements stack per-slice
blocks of retained k-space rows, each block flattened row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LinearOperator",
    "DenseOperator",
    "EPISamplingPattern",
    "EPIOperator",
    "EmbeddingEstimate",
    "lattice_epi_pattern",
    "estimate_bilipschitz",
    "operator_norm",
    "add_noise",
    "vectorize_image",
    "unvectorize_image",
    "save_pattern",
    "load_pattern",
    "save_measurements",
    "load_measurements",
]


class LinearOperator:
    """apply/adjoint pair on complex vectors; <Ax, y> == <x, A^H y>."""

    input_dim: int
    output_dim: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class DenseOperator(LinearOperator):
    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=np.complex128)
        if matrix.ndim != 2:
            raise ValueError("matrix must be 2-D")
        if not np.all(np.isfinite(matrix.view(np.float64))):
            raise ValueError("matrix has non-finite entries")
        self.matrix = matrix
        self.output_dim, self.input_dim = matrix.shape

    def apply(self, x):
        return self.matrix @ x

    def adjoint(self, y):
        return self.matrix.conj().T @ y


@dataclass
class EPISamplingPattern:
    """Per-slice retained k-space row indices on a height x width grid."""

    height: int
    width: int
    n_slices: int
    rows: list = field(default_factory=list)  # rows[l] = sorted retained rows of slice l

    def __post_init__(self):
        if len(self.rows) != self.n_slices:
            raise ValueError("need one row list per slice")
        sizes = {len(r) for r in self.rows}
        if len(sizes) != 1:
            raise ValueError("all slices must retain the same number of rows")
        for l, rr in enumerate(self.rows):
            for r in rr:
                if not (0 <= r < self.height):
                    raise ValueError(f"slice {l}: row index {r} out of range")

    @property
    def rows_per_slice(self) -> int:
        return len(self.rows[0])


def lattice_epi_pattern(height: int, width: int, n_slices: int, ratio: int,
                        shift_rule: str = "cycle") -> EPISamplingPattern:
    """Uniform row subselection, shifted per slice: slice l keeps rows
    (l mod ratio) + k*ratio.  shift_rule "none" keeps rows k*ratio for every
    slice."""
    if height % ratio != 0:
        raise ValueError(f"ratio {ratio} does not divide height {height}")
    if shift_rule not in ("cycle", "none"):
        raise ValueError(f"unknown shift rule {shift_rule!r}")
    rows = []
    for l in range(n_slices):
        shift = (l % ratio) if shift_rule == "cycle" else 0
        rows.append(list(range(shift, height, ratio)))
    return EPISamplingPattern(height, width, n_slices, rows)


def vectorize_image(X: np.ndarray) -> np.ndarray:
    """(n_chan, J) image -> length n_chan*J vector, slices stacked."""
    return np.ascontiguousarray(X).ravel()


def unvectorize_image(x: np.ndarray, n_chan: int, J: int) -> np.ndarray:
    return x.reshape(n_chan, J)


class EPIOperator(LinearOperator):
    """Per-slice unitary 2-D FFT followed by k-space row subselection."""

    def __init__(self, pattern: EPISamplingPattern):
        self.pattern = pattern
        self.J = pattern.height * pattern.width
        self.input_dim = pattern.n_slices * self.J
        self.output_dim = pattern.n_slices * pattern.rows_per_slice * pattern.width
        self._row_index = np.array(pattern.rows)  # (n_slices, rows_per_slice)

    def _to_grids(self, x):
        # slice-major vector -> (n_slices, height, width) with column-major pixels
        pat = self.pattern
        return x.reshape(pat.n_slices, pat.width, pat.height).transpose(0, 2, 1)

    def _from_grids(self, grids):
        return grids.transpose(0, 2, 1).reshape(-1)

    def apply(self, x):
        pat = self.pattern
        grids = self._to_grids(np.asarray(x, dtype=np.complex128))
        k = np.fft.fft2(grids, norm="ortho")
        sel = k[np.arange(pat.n_slices)[:, None], self._row_index, :]
        return sel.reshape(-1)

    def adjoint(self, y):
        pat = self.pattern
        blocks = np.asarray(y, dtype=np.complex128).reshape(
            pat.n_slices, pat.rows_per_slice, pat.width)
        k = np.zeros((pat.n_slices, pat.height, pat.width), dtype=np.complex128)
        k[np.arange(pat.n_slices)[:, None], self._row_index, :] = blocks
        grids = np.fft.ifft2(k, norm="ortho")
        return self._from_grids(grids)


@dataclass
class EmbeddingEstimate:
    """Empirical bi-Lipschitz bracket over a finite set of model points."""

    alpha_hat: float
    beta_hat: float
    min_pair: tuple
    max_pair: tuple
    n_pairs: int

    def __post_init__(self):
        if not (0 <= self.alpha_hat <= self.beta_hat):
            raise ValueError("need 0 <= alpha_hat <= beta_hat")


def estimate_bilipschitz(op: LinearOperator, points, pair_budget: int = 10000,
                         seed: int = 0) -> EmbeddingEstimate:
    """Min/max of ||A(x-x')||^2 / ||x-x'||^2 over point pairs.

    Enumerates all pairs when their number fits the budget, otherwise samples
    pairs uniformly with the given seed.  Zero-difference pairs are skipped.
    """
    points = np.asarray(points, dtype=np.complex128)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("need at least two points")
    n_pts = points.shape[0]
    total_pairs = n_pts * (n_pts - 1) // 2
    if total_pairs <= pair_budget:
        pairs = [(i, j) for i in range(n_pts) for j in range(i + 1, n_pts)]
    else:
        rng = np.random.default_rng(seed)
        pairs = []
        for _ in range(pair_budget):
            i, j = rng.choice(n_pts, size=2, replace=False)
            pairs.append((int(i), int(j)))

    alpha_hat, beta_hat = np.inf, -np.inf
    min_pair = max_pair = None
    used = 0
    for i, j in pairs:
        diff = points[i] - points[j]
        den = float(np.linalg.norm(diff)) ** 2
        if den == 0.0:
            continue
        num = float(np.linalg.norm(op.apply(diff))) ** 2
        ratio = num / den
        used += 1
        if ratio < alpha_hat:
            alpha_hat, min_pair = ratio, (i, j)
        if ratio > beta_hat:
            beta_hat, max_pair = ratio, (i, j)
    if used == 0:
        raise ValueError("all point pairs are identical")
    return EmbeddingEstimate(alpha_hat, beta_hat, min_pair, max_pair, used)


def operator_norm(op: LinearOperator, iterations: int = 100, seed: int = 0) -> float:
    """Largest singular value by power iteration on A^H A."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.normal(size=op.input_dim) + 1j * rng.normal(size=op.input_dim)
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(iterations):
        u = op.apply(v)
        s = float(np.linalg.norm(u))  # Rayleigh estimate sqrt(v^H A^H A v)
        v = op.adjoint(u)
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return 0.0
        v /= nv
    return s


def add_noise(y: np.ndarray, noise_norm: float, seed: int = 0) -> np.ndarray:
    """y plus complex Gaussian noise rescaled to exactly `noise_norm`."""
    if noise_norm == 0.0:
        return y.copy()
    rng = np.random.default_rng(seed)
    w = rng.normal(size=y.shape) + 1j * rng.normal(size=y.shape)
    w *= noise_norm / np.linalg.norm(w)
    return y + w


# ---------------------------------------------------------------------------
# File formats

def save_pattern(pattern: EPISamplingPattern, path) -> None:
    """Structured text: header then one 'slice: rows...' line per slice."""
    with open(path, "w") as fh:
        fh.write("covercs-pattern v1\n")
        fh.write(f"height {pattern.height} width {pattern.width} "
                 f"slices {pattern.n_slices}\n")
        for l, rows in enumerate(pattern.rows):
            fh.write(f"{l}: {' '.join(str(r) for r in rows)}\n")


def load_pattern(path) -> EPISamplingPattern:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "covercs-pattern v1":
            raise ValueError(f"{path} is not a sampling pattern file")
        fields = fh.readline().split()
        height, width, n_slices = int(fields[1]), int(fields[3]), int(fields[5])
        rows = []
        for line in fh:
            if not line.strip():
                continue
            _, rest = line.split(":", 1)
            rows.append([int(tok) for tok in rest.split()])
    return EPISamplingPattern(height, width, n_slices, rows)


def save_measurements(y: np.ndarray, path) -> None:
    """Interleaved (real, imag) float64, little-endian, length-prefixed."""
    y = np.asarray(y, dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(b"CSMEAS01")
        fh.write(np.array([y.size], dtype="<u8").tobytes())
        inter = np.empty((y.size, 2))
        inter[:, 0] = y.real
        inter[:, 1] = y.imag
        fh.write(inter.astype("<f8").tobytes())


def load_measurements(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(8) != b"CSMEAS01":
            raise ValueError(f"{path} is not a measurement file")
        (m,) = np.frombuffer(fh.read(8), dtype="<u8")
        inter = np.frombuffer(fh.read(int(m) * 16), dtype="<f8").reshape(int(m), 2)
    return inter[:, 0] + 1j * inter[:, 1]
