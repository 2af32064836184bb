"""Atomic structure of the alkali ground and D-line excited manifolds.

Dipole operators are built from first principles: the electronic transition
``j -> j'`` is a Clebsch-Gordan coupling of the electron with one photon, and
the hyperfine states are obtained by coupling the electron to the nuclear
spin.  With this normalisation every excited sublevel decays with total
branching one, and the far-detuned vector coefficients reach ``+-1/(3f)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from scipy import constants as sc
from sympy import Rational
from sympy.physics.wigner import clebsch_gordan

from .errors import DomainError, NearResonanceError

HBAR = sc.hbar
C_LIGHT = sc.c

# Detunings closer than this many linewidths to any line are rejected.
NEAR_RESONANCE_FLOOR = 10.0

LINE_BY_J = {Fraction(1, 2): "D1", Fraction(3, 2): "D2"}


def _frac(x) -> Fraction:
    return Fraction(str(x)) if not isinstance(x, Fraction) else x


@dataclass(frozen=True, eq=False)
class ExcitedManifold:
    j: Fraction
    gamma: float  # rad/s
    wavelength: float  # m
    i_sat: float  # W/m^2, unit oscillator strength
    hyperfine: dict  # f' -> energy offset, rad/s

    @property
    def omega(self) -> float:
        return 2 * np.pi * C_LIGHT / self.wavelength

    @property
    def sigma0(self) -> float:
        """Resonant cross section for unit oscillator strength, m^2."""
        return 3 * self.wavelength**2 / (2 * np.pi)

    @property
    def f_levels(self) -> tuple:
        return tuple(sorted(self.hyperfine))

    @property
    def f_max(self) -> int:
        return max(self.hyperfine)

    @property
    def span(self) -> float:
        """Excited hyperfine span in rad/s."""
        vals = list(self.hyperfine.values())
        return max(vals) - min(vals)


@dataclass(frozen=True, eq=False)
class AtomicSpecies:
    name: str
    nuclear_spin: Fraction
    j_ground: Fraction
    f_ground: int
    ground_hyperfine: dict  # f -> energy offset, rad/s
    excited: dict  # j' (Fraction) -> ExcitedManifold
    checksum: str = field(default="", compare=False)
    source: str = field(default="", compare=False)

    @property
    def ground_hyperfine_splitting(self) -> float:
        vals = list(self.ground_hyperfine.values())
        return max(vals) - min(vals)

    def manifold(self, jp) -> ExcitedManifold:
        jp = _frac(jp)
        try:
            return self.excited[jp]
        except KeyError:
            raise DomainError(f"no excited manifold with j'={jp}") from None

    def check_labels(self, jp, fp, f) -> None:
        m = self.manifold(jp)
        if fp not in m.hyperfine:
            raise DomainError(f"f'={fp} is not a hyperfine level of j'={_frac(jp)}")
        if f not in self.ground_hyperfine:
            raise DomainError(f"f={f} is not a ground hyperfine level")
        if abs(fp - f) > 1:
            raise DomainError(f"f={f} -> f'={fp} is not dipole allowed")


def _parse_species(raw: dict, checksum: str, source: str) -> AtomicSpecies:
    mhz = 2 * np.pi * 1e6
    excited = {}
    for line in raw["excited"].values():
        jp = _frac(line["j"])
        excited[jp] = ExcitedManifold(
            j=jp,
            gamma=float(line["linewidth_mhz"]) * mhz,
            wavelength=float(line["wavelength_nm"]) * 1e-9,
            i_sat=float(line["i_sat_mw_cm2"]) * 10.0,
            hyperfine={int(k): float(v) * mhz for k, v in line["hyperfine_offsets_mhz"].items()},
        )
    ground = raw["ground"]
    return AtomicSpecies(
        name=raw["species"],
        nuclear_spin=_frac(raw["nuclear_spin"]),
        j_ground=_frac(ground["j"]),
        f_ground=int(ground["f_fiducial"]),
        ground_hyperfine={int(k): float(v) * mhz for k, v in ground["hyperfine_offsets_mhz"].items()},
        excited=excited,
        checksum=checksum,
        source=source,
    )


def load_species(path: str | Path | None = None) -> AtomicSpecies:
    """Load an atomic data file; the bundled Cs-133 table when ``path`` is None."""
    if path is None:
        text = resources.files("qndspin.data").joinpath("cs133.yaml").read_text()
        source = "qndspin/data/cs133.yaml"
    else:
        text = Path(path).read_text()
        source = str(path)
    checksum = hashlib.sha256(text.encode()).hexdigest()
    return _parse_species(yaml.safe_load(text), checksum, source)


@lru_cache(maxsize=None)
def cesium() -> AtomicSpecies:
    return load_species()


# ---------------------------------------------------------------------------
# detunings

def detuning_to_level(species: AtomicSpecies, jp, fp: int, f: int, delta: float) -> float:
    """Detuning from the ``f -> f'`` line given the detuning from ``f=4 -> f'_max``."""
    species.check_labels(jp, fp, f)
    m = species.manifold(jp)
    g = species.ground_hyperfine
    return (delta + (m.hyperfine[m.f_max] - m.hyperfine[fp])
            + (g[f] - g[species.f_ground]))


def line_detunings(species: AtomicSpecies, jp, delta: float, f: int | None = None) -> dict:
    f = species.f_ground if f is None else f
    m = species.manifold(jp)
    return {fp: detuning_to_level(species, jp, fp, f, delta)
            for fp in m.f_levels if abs(fp - f) <= 1}


def check_detuning(species: AtomicSpecies, jp, delta: float) -> None:
    m = species.manifold(jp)
    for fp, d in line_detunings(species, jp, delta).items():
        if abs(d) < NEAR_RESONANCE_FLOOR * m.gamma:
            raise NearResonanceError(
                f"detuning {delta / (2 * np.pi):.4g} Hz lies within "
                f"{NEAR_RESONANCE_FLOOR:g} linewidths of the f'={fp} line of j'={_frac(jp)}")


# ---------------------------------------------------------------------------
# angular momentum

def spin_matrices(f) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(f_x, f_y, f_z) with basis ordered m = f, f-1, ..., -f."""
    f = float(f)
    m = np.arange(f, -f - 1, -1)
    dim = len(m)
    fp = np.zeros((dim, dim))
    for k in range(1, dim):
        fp[k - 1, k] = np.sqrt(f * (f + 1) - m[k] * (m[k] + 1))
    fx = (fp + fp.T) / 2
    fy = (fp - fp.T) / 2j
    return fx.astype(complex), fy, np.diag(m).astype(complex)


def _mvals(j: Fraction):
    return [j - k for k in range(int(2 * j) + 1)]


@lru_cache(maxsize=None)
def _cg(j1, m1, j2, m2, j3, m3) -> float:
    r = lambda x: Rational(x.numerator, x.denominator)  # noqa: E731
    return float(clebsch_gordan(r(j1), r(j2), r(j3), r(m1), r(m2), r(m3)))


@lru_cache(maxsize=None)
def _coupling_matrix(j: Fraction, i: Fraction, f: int) -> np.ndarray:
    """Rows |f m>, columns uncoupled |m_j, m_i> (m_j major)."""
    f = Fraction(f)
    mj, mi = _mvals(j), _mvals(i)
    out = np.zeros((int(2 * f) + 1, len(mj) * len(mi)))
    for a, m in enumerate(_mvals(f)):
        for b, x in enumerate(mj):
            for c, y in enumerate(mi):
                if x + y == m:
                    out[a, b * len(mi) + c] = _cg(j, x, i, y, f, m)
    return out


@lru_cache(maxsize=None)
def _electronic_raising(j: Fraction, jp: Fraction, q: int) -> np.ndarray:
    """<j' m'| D^dag_q |j m> = <j m; 1 q | j' m'>."""
    out = np.zeros((int(2 * jp) + 1, int(2 * j) + 1))
    for a, mp in enumerate(_mvals(jp)):
        for b, m in enumerate(_mvals(j)):
            if mp == m + q:
                out[a, b] = _cg(j, m, Fraction(1), Fraction(q), jp, mp)
    return out


def _dipole_raising(species: AtomicSpecies, jp, fp: int, f: int) -> dict:
    jp = _frac(jp)
    j, i = species.j_ground, species.nuclear_spin
    ug = _coupling_matrix(j, i, f)
    ue = _coupling_matrix(jp, i, fp)
    eye_i = np.eye(int(2 * i) + 1)
    return {q: ue @ np.kron(_electronic_raising(j, jp, q), eye_i) @ ug.T for q in (-1, 0, 1)}


def dipole_raising_operator(species: AtomicSpecies, jp, fp: int, f: int) -> dict:
    """Spherical components ``q -> D^dag_q`` mapping |f m> to |f' m+q>.

    Matrices have shape ``(2f'+1, 2f+1)`` with rows and columns ordered by
    descending ``m``.  Normalised so that the summed squared elements out of
    every excited sublevel, over both ground hyperfine levels, equal one.
    """
    species.check_labels(jp, fp, f)
    return _cached_raising(species, _frac(jp), fp, f)


@lru_cache(maxsize=64)
def _cached_raising(species, jp, fp, f):
    return _dipole_raising(species, jp, fp, f)


# spherical unit vectors e_{+1} = -(x + i y)/sqrt2, e_0 = z, e_{-1} = (x - i y)/sqrt2
SPHERICAL = {
    1: np.array([-1, -1j, 0]) / np.sqrt(2),
    0: np.array([0, 0, 1], dtype=complex),
    -1: np.array([1, -1j, 0]) / np.sqrt(2),
}


def cartesian_raising(species: AtomicSpecies, jp, fp: int, f: int) -> list[np.ndarray]:
    """Cartesian components so that ``eps . D^dag = sum_i eps_i D^dag_i``."""
    sph = dipole_raising_operator(species, jp, fp, f)
    return [sum(np.conj(SPHERICAL[q][k]) * sph[q] for q in (-1, 0, 1)) for k in range(3)]


def polarized_raising(species: AtomicSpecies, jp, fp: int, f: int, eps) -> np.ndarray:
    comps = cartesian_raising(species, jp, fp, f)
    return sum(e * c for e, c in zip(np.asarray(eps, dtype=complex), comps))


@lru_cache(maxsize=64)
def _ck(species, jp, fp, f):
    dag = cartesian_raising(species, jp, fp, f)
    t = [[d_i.conj().T @ d_j for d_j in dag] for d_i in dag]
    fx, fy, fz = spin_matrices(f)
    dim = 2 * f + 1
    trace_part = t[0][0] + t[1][1] + t[2][2]
    c0 = np.trace(trace_part).real / (3 * dim)
    c1 = (np.trace((t[0][1] - t[1][0]) @ fz) / (2j * np.trace(fz @ fz))).real
    f2 = fx @ fx + fy @ fy + fz @ fz
    q = fz @ fz - f2 / 3
    c2 = (np.trace((t[2][2] - trace_part / 3) @ q) / np.trace(q @ q)).real
    return float(c0), float(c1), float(c2)


def coefficients_CK(species: AtomicSpecies, jp, fp: int, f: int) -> tuple[float, float, float]:
    """Scalar, vector and tensor coefficients of one hyperfine line.

    Defined by ``eps* . D D^dag . eps = C0 |eps|^2 + i C1 (eps* x eps) . f
    + C2 [(eps*.f)(eps.f) + h.c.]/2 - C2 f^2 |eps|^2 / 3``.
    """
    species.check_labels(jp, fp, f)
    return _ck(species, _frac(jp), fp, f)


def effective_CK(species: AtomicSpecies, jp, K: int, delta: float, f: int | None = None) -> float:
    """Detuning-weighted sum of line coefficients, ``sum_f' C_f' delta/delta_f'``."""
    if K not in (0, 1, 2):
        raise DomainError(f"rank K must be 0, 1 or 2, got {K}")
    f = species.f_ground if f is None else f
    check_detuning(species, jp, delta)
    total = 0.0
    for fp, d in line_detunings(species, jp, delta, f).items():
        total += coefficients_CK(species, jp, fp, f)[K] * delta / d
    return total


def line_strengths(species: AtomicSpecies, jp, f: int | None = None) -> dict:
    """Relative strengths of the ``f -> f'`` lines, normalised to sum to one."""
    f = species.f_ground if f is None else f
    raw = {}
    for fp in species.manifold(jp).f_levels:
        if abs(fp - f) <= 1:
            d = dipole_raising_operator(species, jp, fp, f)
            raw[fp] = sum(np.sum(np.abs(m) ** 2) for m in d.values())
    total = sum(raw.values())
    return {k: v / total for k, v in raw.items()}


def detuning_factor(species: AtomicSpecies, jp, delta: float) -> float:
    """Strength-weighted ``sum_f' delta^2/delta_f'^2`` (tends to 1 far off resonance)."""
    w = line_strengths(species, jp)
    return sum(w[fp] * delta**2 / d**2 for fp, d in line_detunings(species, jp, delta).items())
