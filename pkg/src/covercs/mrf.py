"""Fingerprint dictionaries from a discrete-time bSSFP recursion, synthetic
segment phantoms with ground-truth parameter maps, and atom-to-parameter
lookup.

The magnetization recursion per repetition: instantaneous rotation of M by the
flip angle about the x axis, transverse readout at the echo time with decay
exp(-TE/T2) (off-resonance fixed at zero), then free relaxation over the full
repetition with E2 = exp(-TR/T2) transverse and E1 = exp(-TR/T1) longitudinal
recovery toward equilibrium.  The flip-angle train is a slow half-cosine ramp
from 0 to 60 degrees with a gentle sinusoidal modulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from covercs.model import Dictionary

__all__ = [
    "ExcitationSequence",
    "ParameterGrid",
    "SegmentSpec",
    "Phantom",
    "default_sequence",
    "default_flip_angles",
    "log_parameter_grid",
    "bloch_bssfp_fingerprint",
    "bloch_fingerprints",
    "build_dictionary",
    "default_phantom",
    "synthesize_phantom",
    "params_from_atoms",
    "parameter_mae",
    "save_phantom_spec",
    "load_phantom_spec",
]


@dataclass
class ExcitationSequence:
    flip_angles_deg: np.ndarray
    tr_ms: float
    te_ms: float

    def __post_init__(self):
        self.flip_angles_deg = np.asarray(self.flip_angles_deg, dtype=np.float64)
        if self.flip_angles_deg.ndim != 1 or self.flip_angles_deg.size < 1:
            raise ValueError("need at least one flip angle")
        if np.any(self.flip_angles_deg < 0) or np.any(self.flip_angles_deg > 90):
            raise ValueError("flip angles must lie in [0, 90] degrees")
        if not (0 < self.te_ms <= self.tr_ms):
            raise ValueError("need 0 < TE <= TR")

    @property
    def n_excitations(self) -> int:
        return self.flip_angles_deg.size


def default_flip_angles(n_excitations: int) -> np.ndarray:
    """Slowly varying train from 0 to 60 degrees: half-cosine ramp with a
    gentle sinusoidal modulation that fades out toward the end."""
    if n_excitations == 1:
        return np.array([30.0])
    t = np.arange(n_excitations) / (n_excitations - 1)
    ramp = 0.5 * (1.0 - np.cos(np.pi * t))
    return ramp * (60.0 + 5.0 * (1.0 - t) * np.sin(6.0 * np.pi * t))


def default_sequence(n_excitations: int = 64, tr_ms: float = 37.0) -> ExcitationSequence:
    return ExcitationSequence(default_flip_angles(n_excitations), tr_ms, tr_ms / 2.0)


@dataclass
class ParameterGrid:
    """Admissible (T1 ms, T2 ms) pairs; off-resonance is fixed at zero."""

    pairs: np.ndarray

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.float64)
        if self.pairs.ndim != 2 or self.pairs.shape[1] != 2 or self.pairs.shape[0] < 1:
            raise ValueError("pairs must be a non-empty (d, 2) array")
        t1, t2 = self.pairs[:, 0], self.pairs[:, 1]
        if np.any(t1 <= 0) or np.any(t2 <= 0) or np.any(t2 > t1):
            raise ValueError("grid requires T1 > 0, T2 > 0 and T2 <= T1")

    @property
    def size(self) -> int:
        return self.pairs.shape[0]

    def contains(self, t1: float, t2: float) -> bool:
        return bool(np.any((self.pairs[:, 0] == t1) & (self.pairs[:, 1] == t2)))

    def nearest(self, t1: float, t2: float) -> tuple[float, float]:
        """Grid pair closest in log coordinates."""
        cost = (np.abs(np.log(self.pairs[:, 0]) - np.log(t1))
                + np.abs(np.log(self.pairs[:, 1]) - np.log(t2)))
        i = int(np.argmin(cost))
        return float(self.pairs[i, 0]), float(self.pairs[i, 1])


def log_parameter_grid(t1_range=(100.0, 5000.0), t2_range=(20.0, 1800.0),
                       t1_count: int = 40, t2_count: int = 40) -> ParameterGrid:
    """Log-spaced T1 x T2 grid filtered to the physical region T2 <= T1."""
    t1s = np.geomspace(t1_range[0], t1_range[1], t1_count)
    t2s = np.geomspace(t2_range[0], t2_range[1], t2_count)
    pairs = [(t1, t2) for t1 in t1s for t2 in t2s if t2 <= t1]
    return ParameterGrid(np.array(pairs))


def _check_params(t1_ms, t2_ms):
    t1 = np.atleast_1d(np.asarray(t1_ms, dtype=np.float64))
    t2 = np.atleast_1d(np.asarray(t2_ms, dtype=np.float64))
    if t1.shape != t2.shape:
        raise ValueError("T1 and T2 must have the same shape")
    bad = (t1 <= 0) | (t2 <= 0) | (t2 > t1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(f"non-admissible parameters T1={t1[i]} ms, T2={t2[i]} ms "
                         "(need T1 > 0, T2 > 0, T2 <= T1)")
    return t1, t2


def bloch_fingerprints(seq: ExcitationSequence, t1_ms, t2_ms) -> np.ndarray:
    """Magnetization responses for arrays of parameters, shape (d, n_exc)."""
    t1, t2 = _check_params(t1_ms, t2_ms)
    e1_tr = np.exp(-seq.tr_ms / t1)
    e2_tr = np.exp(-seq.tr_ms / t2)
    e2_te = np.exp(-seq.te_ms / t2)
    mx = np.zeros_like(t1)
    my = np.zeros_like(t1)
    mz = np.ones_like(t1)
    out = np.empty((t1.size, seq.n_excitations), dtype=np.complex128)
    for l, a_deg in enumerate(seq.flip_angles_deg):
        a = np.deg2rad(a_deg)
        c, s = np.cos(a), np.sin(a)
        my, mz = c * my + s * mz, -s * my + c * mz
        out[:, l] = (mx + 1j * my) * e2_te
        mx = mx * e2_tr
        my = my * e2_tr
        mz = 1.0 + (mz - 1.0) * e1_tr
    return out


def bloch_bssfp_fingerprint(seq: ExcitationSequence, t1_ms: float, t2_ms: float) -> np.ndarray:
    """Single-parameter-pair fingerprint, shape (n_exc,)."""
    return bloch_fingerprints(seq, [t1_ms], [t2_ms])[0]


def build_dictionary(seq: ExcitationSequence, grid: ParameterGrid) -> Dictionary:
    """Normalized fingerprint per grid pair; rows are unit norm."""
    fps = bloch_fingerprints(seq, grid.pairs[:, 0], grid.pairs[:, 1])
    norms = np.linalg.norm(fps, axis=1)
    if np.any(norms == 0):
        i = int(np.argmin(norms))
        raise ValueError(f"zero-norm fingerprint for T1={grid.pairs[i, 0]} ms, "
                         f"T2={grid.pairs[i, 1]} ms")
    return Dictionary(fps / norms[:, None], grid.pairs)


# ---------------------------------------------------------------------------
# Phantom

@dataclass
class SegmentSpec:
    """Elliptical region with its tissue parameters."""

    name: str
    cx: float  # center, in units of width
    cy: float  # center, in units of height
    rx: float  # radius, in units of width
    ry: float  # radius, in units of height
    t1_ms: float
    t2_ms: float
    pd: float

    def __post_init__(self):
        if self.pd < 0:
            raise ValueError(f"segment {self.name}: proton density must be >= 0")
        _check_params(self.t1_ms, self.t2_ms)


class Phantom:
    """Segment map painted from elliptical primitives, labels 1..K in paint
    order (later segments overwrite earlier); label 0 is background."""

    def __init__(self, height: int, width: int, segments: list):
        if height < 1 or width < 1:
            raise ValueError("phantom grid must be non-empty")
        if not segments:
            raise ValueError("phantom needs at least one segment")
        self.height = height
        self.width = width
        self.segments = list(segments)
        rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        label_map = np.zeros((height, width), dtype=int)
        for k, seg in enumerate(self.segments, start=1):
            du = (cc + 0.5) / width - seg.cx
            dv = (rr + 0.5) / height - seg.cy
            inside = (du / seg.rx) ** 2 + (dv / seg.ry) ** 2 <= 1.0
            label_map[inside] = k
        self.segment_map = label_map

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def _lookup(self, attr: str) -> np.ndarray:
        vals = np.array([0.0] + [getattr(s, attr) for s in self.segments])
        return vals[self.segment_map]

    @property
    def t1_map(self) -> np.ndarray:
        return self._lookup("t1_ms")

    @property
    def t2_map(self) -> np.ndarray:
        return self._lookup("t2_ms")

    @property
    def pd_map(self) -> np.ndarray:
        return self._lookup("pd")

    def flat_labels(self) -> np.ndarray:
        """Labels in pixel order (column-major grid, matching the operators)."""
        return self.segment_map.ravel(order="F")


_DEFAULT_TISSUES = [
    # name, nominal T1 ms, nominal T2 ms, proton density
    ("skin", 600.0, 30.0, 0.60),
    ("muscle", 1100.0, 45.0, 0.70),
    ("grey_matter", 1300.0, 110.0, 0.85),
    ("white_matter", 800.0, 70.0, 0.75),
    ("csf", 4000.0, 1500.0, 1.00),
]

_DEFAULT_GEOMETRY = [
    # cx, cy, rx, ry per tissue, painted in order
    (0.5, 0.5, 0.46, 0.40),
    (0.5, 0.5, 0.42, 0.36),
    (0.5, 0.5, 0.36, 0.30),
    (0.5, 0.5, 0.28, 0.22),
    (0.5, 0.42, 0.10, 0.07),
]


def default_phantom(height: int, width: int, grid: ParameterGrid) -> Phantom:
    """Six-region head-like layout (background plus five nested tissues) with
    tissue parameters snapped onto the dictionary grid."""
    segments = []
    for (name, t1, t2, pd), (cx, cy, rx, ry) in zip(_DEFAULT_TISSUES, _DEFAULT_GEOMETRY):
        st1, st2 = grid.nearest(t1, t2)
        segments.append(SegmentSpec(name, cx, cy, rx, ry, st1, st2, pd))
    return Phantom(height, width, segments)


def synthesize_phantom(phantom: Phantom, dictionary: Dictionary):
    """Ground-truth image X (n_chan, J): column j = PD(j) * atom of pixel j's
    parameters.  Background pixels are zero with atom id -1."""
    labels = phantom.flat_labels()
    J = labels.size
    seg_atom = np.full(len(phantom.segments) + 1, -1, dtype=int)
    for k, seg in enumerate(phantom.segments, start=1):
        match = np.nonzero((dictionary.params[:, 0] == seg.t1_ms)
                           & (dictionary.params[:, 1] == seg.t2_ms))[0]
        if match.size == 0:
            j = int(np.argmax(labels == k))
            raise ValueError(
                f"pixel {j} (segment {seg.name}): parameters T1={seg.t1_ms} ms, "
                f"T2={seg.t2_ms} ms not present in the dictionary grid")
        seg_atom[k] = int(match[0])
    pd = np.concatenate([[0.0], [s.pd for s in phantom.segments]])[labels]
    atom_ids = seg_atom[labels]
    X = np.zeros((dictionary.n_chan, J), dtype=np.complex128)
    fg = atom_ids >= 0
    X[:, fg] = dictionary.atoms[atom_ids[fg]].T * pd[fg]
    gammas = np.where(fg, pd, 0.0)
    return X, atom_ids, gammas


def params_from_atoms(atom_ids, gammas, lookup: np.ndarray):
    """Per-pixel (T1, T2, PD) maps; pixels with no signal (gamma 0 or id < 0)
    map to zero everywhere."""
    atom_ids = np.asarray(atom_ids, dtype=int)
    gammas = np.asarray(gammas, dtype=np.float64)
    valid = (atom_ids >= 0) & (gammas > 0)
    if np.any(atom_ids[valid] >= lookup.shape[0]):
        raise ValueError("atom id out of lookup range")
    t1 = np.where(valid, lookup[np.clip(atom_ids, 0, None), 0], 0.0)
    t2 = np.where(valid, lookup[np.clip(atom_ids, 0, None), 1], 0.0)
    pd = np.where(valid, gammas, 0.0)
    return t1, t2, pd


def parameter_mae(atom_ids, gammas, truth_ids, truth_gammas, lookup) -> tuple[float, float]:
    """T1/T2 absolute error summed over pixels carrying true signal, divided
    by the total pixel count J.  Pixels with zero true proton density have no
    defined parameters and are excluded from the sum (their recovered density
    sits at the float noise floor)."""
    t1a, t2a, _ = params_from_atoms(atom_ids, gammas, lookup)
    t1b, t2b, pdb = params_from_atoms(truth_ids, truth_gammas, lookup)
    J = len(t1b)
    fg = pdb > 0
    return (float(np.abs(t1a[fg] - t1b[fg]).sum() / J),
            float(np.abs(t2a[fg] - t2b[fg]).sum() / J))


# ---------------------------------------------------------------------------
# Phantom spec file

def save_phantom_spec(phantom: Phantom, path) -> None:
    with open(path, "w") as fh:
        fh.write("covercs-phantom v1\n")
        fh.write(f"size {phantom.height} {phantom.width}\n")
        for seg in phantom.segments:
            fh.write(f"segment {seg.name} ellipse {seg.cx!r} {seg.cy!r} "
                     f"{seg.rx!r} {seg.ry!r} {seg.t1_ms!r} {seg.t2_ms!r} {seg.pd!r}\n")


def load_phantom_spec(path) -> Phantom:
    with open(path) as fh:
        if fh.readline().strip() != "covercs-phantom v1":
            raise ValueError(f"{path} is not a phantom spec file")
        fields = fh.readline().split()
        height, width = int(fields[1]), int(fields[2])
        segments = []
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] != "segment" or tok[2] != "ellipse":
                raise ValueError(f"unsupported phantom line: {line.strip()}")
            segments.append(SegmentSpec(tok[1], *[float(v) for v in tok[3:10]]))
    return Phantom(height, width, segments)
