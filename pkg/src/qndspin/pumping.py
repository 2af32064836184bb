"""Single-atom optical pumping within the f=4 ground manifold.

Density operators live on the 9-dim f=4 space (basis m_z = 4..-4).
Superoperators are (81, 81) matrices acting on the row-major
vectorisation of rho, so ``L rho R`` corresponds to ``kron(L, R.T)``.

All maps are *rate normalised*: the physical generator of color j' at
relative intensity beta is ``beta * gamma_{j'} * D``, with ``gamma_{j'}``
from :func:`qndspin.probe.scattering_rate`.  The normalised jump operators
returned here absorb the factor ``sqrt(Gamma/gamma)``, so the map reads
``D[rho] = -i (H rho - rho H^dag) + sum_q W_q rho W_q^dag`` with an
anti-Hermitian ``H = -i A^dag A / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg as sl

from .atomic import (
    AtomicSpecies,
    check_detuning,
    detuning_factor,
    dipole_raising_operator,
    line_detunings,
    polarized_raising,
    spin_matrices,
)
from .errors import NumericalAbort

E_X = np.array([1.0, 0.0, 0.0], dtype=complex)
REALNESS_TOL = 1e-10

QUTRIT_LABELS = ("up", "down", "T")
COHERENCE_PAIRS = ((0, 1), (0, 2), (1, 2))  # up-down, up-T, down-T
COHERENCE_LABELS = ("up,down", "up,T", "down,T")


def _spre(a):
    return np.kron(a, np.eye(a.shape[1]))


def _spost(b):
    return np.kron(np.eye(b.shape[0]), b.T)


def _sandwich(a, b):
    return np.kron(a, b.T)


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1)


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim)


@dataclass(frozen=True)
class JumpOperators:
    """Rate-normalised absorption/emission operators for one color.

    ``W[q]`` keeps the atom in f=4; ``W_loss[q]`` sends it to f=3.
    ``H`` is the anti-Hermitian absorption generator (units of gamma).
    """

    jp: Fraction
    delta: float
    absorption: np.ndarray  # excited-manifold amplitude operator A, (n_exc, 9)
    W: dict
    W_loss: dict
    H: np.ndarray

    @property
    def scattering_operator(self) -> np.ndarray:
        """``A^dag A``: per-state total scattering rate in units of gamma."""
        return self.absorption.conj().T @ self.absorption


def jump_operators(species: AtomicSpecies, jp, delta: float, eps=E_X) -> JumpOperators:
    jp = Fraction(str(jp))
    check_detuning(species, jp, delta)
    m = species.manifold(jp)
    f = species.f_ground
    dets = line_detunings(species, jp, delta, f)
    norm = np.sqrt(detuning_factor(species, jp, delta))
    fps = sorted(dets)
    blocks = []
    for fp in fps:
        amp = delta / (dets[fp] + 0.5j * m.gamma) / norm
        blocks.append(amp * polarized_raising(species, jp, fp, f, eps))
    A = np.vstack(blocks)

    def emission(fg):
        out = {}
        for q in (-1, 0, 1):
            rows = []
            for fp in fps:
                if abs(fp - fg) <= 1:
                    rows.append(dipole_raising_operator(species, jp, fp, fg)[q].conj().T)
                else:
                    rows.append(np.zeros((2 * fg + 1, 2 * fp + 1)))
            out[q] = np.hstack(rows) @ A
        return out

    other = [g for g in species.ground_hyperfine if g != f]
    w_loss = {}
    for g in other:
        for q, op in emission(g).items():
            w_loss[q] = op if q not in w_loss else np.vstack([w_loss[q], op])
    return JumpOperators(jp, delta, A, emission(f), w_loss, -0.5j * A.conj().T @ A)


@dataclass(frozen=True)
class PumpingMap:
    """Rate-normalised pumping superoperator on the f=4 manifold."""

    matrix: np.ndarray
    dim: int
    jp: Fraction
    delta: float
    averaged: bool = False

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(rho), self.dim)

    def adjoint(self, op: np.ndarray) -> np.ndarray:
        """Heisenberg-picture map: ``Tr[D^dag[A] rho] = Tr[A D[rho]]``."""
        # Tr(A X) = vec(A.T) . vec(X)
        return unvec(self.matrix.T @ vec(np.asarray(op).T), self.dim).T


def single_atom_pumping_map(species, jp, delta, eps=E_X) -> PumpingMap:
    ops = jump_operators(species, jp, delta, eps)
    H = ops.H
    mat = -1j * (_spre(H) - _spost(H.conj().T))
    for W in ops.W.values():
        mat = mat + _sandwich(W, W.conj().T)
    return PumpingMap(mat, H.shape[0], ops.jp, delta)


def _mz(dim):
    f = (dim - 1) / 2
    return np.arange(f, -f - 1, -1)


def larmor_average(pmap: PumpingMap) -> PumpingMap:
    """Average over a Larmor cycle about z by exact Fourier selection.

    ``U D[U^dag rho U] U^dag`` multiplies the (ab, cd) element by
    ``exp(-i phi [(m_a - m_b) - (m_c - m_d)])``; only balanced terms survive.
    """
    m = _mz(pmap.dim)
    q = (m[:, None] - m[None, :]).reshape(-1)
    keep = np.isclose(q[:, None], q[None, :])
    return PumpingMap(np.where(keep, pmap.matrix, 0), pmap.dim, pmap.jp, pmap.delta, True)


def rotated_map(pmap: PumpingMap, phi: float) -> PumpingMap:
    """``rho -> U D[U^dag rho U] U^dag`` with ``U = exp(-i phi f_z)``."""
    u = np.diag(np.exp(-1j * phi * _mz(pmap.dim)))
    S = _sandwich(u, u.conj().T)
    Sinv = _sandwich(u.conj().T, u)
    return PumpingMap(S @ pmap.matrix @ Sinv, pmap.dim, pmap.jp, pmap.delta, pmap.averaged)


# ---------------------------------------------------------------------------
# qutrit basis and tables

@dataclass(frozen=True)
class QutritBasis:
    """|up>, |down>, |T> = |m_x = f, f-1, f-2> embedded in the f manifold.

    Phases are chosen so that ``<up|f_z|down>`` and ``<down|f_z|T>`` are
    real and positive.
    """

    states: np.ndarray  # (dim, 3)
    f: int

    @property
    def n_ops(self) -> list:
        return [np.outer(s, s.conj()) for s in self.states.T]

    @property
    def x_ops(self) -> list:
        s = self.states.T
        return [(np.outer(s[i], s[j].conj()) + np.outer(s[j], s[i].conj())) / np.sqrt(2)
                for i, j in COHERENCE_PAIRS]

    @property
    def y_ops(self) -> list:
        s = self.states.T
        return [(-1j * np.outer(s[i], s[j].conj()) + 1j * np.outer(s[j], s[i].conj())) / np.sqrt(2)
                for i, j in COHERENCE_PAIRS]

    @property
    def projector(self) -> np.ndarray:
        return self.states @ self.states.conj().T

    def fz_weights(self) -> np.ndarray:
        """Hilbert-Schmidt components ``Tr[f_z x_ij]`` of f_z on the coherences."""
        fz = spin_matrices(self.f)[2]
        return np.array([np.trace(fz @ x).real for x in self.x_ops])

    def fx_weights(self) -> np.ndarray:
        fx = spin_matrices(self.f)[0]
        return np.array([np.trace(fx @ n).real for n in self.n_ops])


def qutrit_basis(f: int = 4) -> QutritBasis:
    fy = spin_matrices(f)[1]
    R = sl.expm(-1j * np.pi / 2 * fy).real  # |m_z = m> -> |m_x = m>
    s = R[:, :3].copy()
    fz = spin_matrices(f)[2].real
    for k in (1, 2):
        if s[:, k - 1] @ fz @ s[:, k] < 0:
            s[:, k] *= -1
    return QutritBasis(s.astype(complex), f)


@dataclass
class PumpingTables:
    """Hilbert-Schmidt trace coefficients of a pumping map on the qutrit.

    Adjoint (Heisenberg) tables drive the moment engine:
      T_nn[i, l] = Tr[D^dag[n_i] n_l]
      T_xx[a, b] = Tr[D^dag[x_a] x_b]
      T_xn[a, l] = Tr[D^dag[x_a] n_l]
      N_table[a, b, l] = Tr[N[x_a, x_b] n_l]
    The Schrodinger-form ``T_xn_mean`` and ``T_xx_mean`` are kept for
    diagnostics.  ``loss[l]`` is the rate out of the qutrit from ``n_l``.
    Entries are in units of the rate prefactor ``scale`` (1 for a single
    rate-normalised color, 1/s for combined two-color tables).
    """

    T_nn: np.ndarray
    T_xx: np.ndarray
    T_xn: np.ndarray
    N_table: np.ndarray
    T_xn_mean: np.ndarray
    T_xx_mean: np.ndarray
    T_xy: np.ndarray
    loss: np.ndarray
    meta: dict = field(default_factory=dict)

    _FIELDS = ("T_nn", "T_xx", "T_xn", "N_table", "T_xn_mean", "T_xx_mean", "T_xy", "loss")

    def scaled(self, factor: float) -> "PumpingTables":
        return PumpingTables(*(getattr(self, k) * factor for k in self._FIELDS), meta=dict(self.meta))

    def __add__(self, other: "PumpingTables") -> "PumpingTables":
        meta = {"components": [self.meta, other.meta]}
        return PumpingTables(*(getattr(self, k) + getattr(other, k) for k in self._FIELDS), meta=meta)

    def as_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in self._FIELDS}


def _real(x, what):
    x = np.asarray(x)
    if np.max(np.abs(x.imag), initial=0) > REALNESS_TOL * max(1.0, np.max(np.abs(x), initial=0)):
        raise NumericalAbort(f"{what} has imaginary parts above {REALNESS_TOL}",
                             diagnostics={"max_imag": float(np.max(np.abs(x.imag)))})
    return x.real


def qutrit_projected_tables(pmap: PumpingMap, basis: QutritBasis | None = None) -> PumpingTables:
    if not pmap.averaged:
        raise ValueError("qutrit tables require the Larmor-averaged map")
    basis = qutrit_basis() if basis is None else basis
    n, x, y = basis.n_ops, basis.x_ops, basis.y_ops
    tr = lambda a, b: np.trace(a @ b)  # noqa: E731
    adj_n = [pmap.adjoint(o) for o in n]
    adj_x = [pmap.adjoint(o) for o in x]
    fwd_x = [pmap.apply(o) for o in x]
    T_nn = _real([[tr(adj_n[i], n[l]) for l in range(3)] for i in range(3)], "T_nn")
    T_xx = _real([[tr(adj_x[a], x[b]) for b in range(3)] for a in range(3)], "T_xx")
    T_xn = _real([[tr(adj_x[a], n[l]) for l in range(3)] for a in range(3)], "T_xn")
    T_xy = _real([[tr(adj_x[a], y[b]) for b in range(3)] for a in range(3)], "T_xy")
    T_xn_mean = _real([[tr(fwd_x[a], n[l]) for l in range(3)] for a in range(3)], "T_xn_mean")
    T_xx_mean = _real([[tr(fwd_x[a], x[b]) for b in range(3)] for a in range(3)], "T_xx_mean")
    N = np.zeros((3, 3, 3), dtype=complex)
    for a in range(3):
        for b in range(3):
            ac = x[a] @ x[b] + x[b] @ x[a]
            op = 0.5 * (pmap.adjoint(ac) - (adj_x[a] @ x[b] + x[b] @ adj_x[a])
                        - (x[a] @ adj_x[b] + adj_x[b] @ x[a]))
            for l in range(3):
                N[a, b, l] = tr(op, n[l])
    N_table = _real(N, "N_table")
    P = basis.projector
    loss = _real([-np.trace(P @ pmap.apply(n[l])) for l in range(3)], "loss")
    meta = {"jp": str(pmap.jp), "delta": float(pmap.delta)}
    return PumpingTables(T_nn, T_xx, T_xn, N_table, T_xn_mean, T_xx_mean, T_xy, loss, meta)


def color_tables(species, jp, delta) -> PumpingTables:
    return qutrit_projected_tables(larmor_average(single_atom_pumping_map(species, jp, delta)))


def two_color_tables(species, probe) -> PumpingTables:
    """Rate tables (1/s at peak intensity) summed over the active colors."""
    total = None
    for name, c in (("D1", probe.d1), ("D2", probe.d2)):
        g = probe.gamma.get(name, 0.0)
        if c.power == 0 or g == 0:
            continue
        t = color_tables(species, c.jp, c.delta).scaled(g)
        total = t if total is None else total + t
    return total


def averaged_map_generator(species, probe) -> np.ndarray:
    """Physical (1/s) Larmor-averaged 81x81 generator at peak intensity."""
    out = 0
    for name, c in (("D1", probe.d1), ("D2", probe.d2)):
        g = probe.gamma.get(name, 0.0)
        if c.power == 0 or g == 0:
            continue
        out = out + g * larmor_average(single_atom_pumping_map(species, c.jp, c.delta)).matrix
    return out


def choi_matrix(ops: JumpOperators) -> np.ndarray:
    """Choi matrix of the feeding map ``rho -> sum_q W_q rho W_q^dag``."""
    dim = ops.H.shape[0]
    out = np.zeros((dim * dim, dim * dim), dtype=complex)
    for W in ops.W.values():
        v = W.reshape(-1)  # vec of W in row-major equals sum |i><j| (x) W|i><j| structure
        out += np.outer(v, v.conj())
    return out


__all__ = [
    "COHERENCE_LABELS", "COHERENCE_PAIRS", "E_X", "JumpOperators", "PumpingMap", "PumpingTables",
    "QUTRIT_LABELS", "QutritBasis", "averaged_map_generator", "choi_matrix", "color_tables",
    "jump_operators", "larmor_average", "qutrit_basis", "qutrit_projected_tables", "rotated_map",
    "single_atom_pumping_map", "two_color_tables",
]
