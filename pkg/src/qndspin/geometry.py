"""Cloud density, Laguerre-Gauss spin-wave modes and projection overlaps.

Conventions
-----------
* Mode normalisation area ``A_m = pi w0^2 / 2`` so that ``u00(0, 0) = 1`` and
  ``beta00 = |u00|^2 = I / I_max`` (the Faraday angle keeps ``A = pi w0^2``).
* Transverse integrals use the variable ``s = 2 r^2 / w(z)^2``.  Every
  integrand is a polynomial times a (possibly complex) Gaussian, so an
  order-n Gauss-Laguerre rule in ``lambda * s`` is exact up to degree 2n-1.
* The moment engine uses *real* modes per slice: Gouy and curvature phases are
  stripped and ``exp(i l phi)`` is replaced by ``sqrt2 cos(l phi)`` /
  ``sqrt2 sin(l phi)``.  Per slice this is a unitary change of basis of the
  complex mode set.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict
from functools import cached_property
from math import factorial
from pathlib import Path

import numpy as np
from numpy.polynomial.laguerre import laggauss
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.special import eval_genlaguerre

from .errors import DomainError

SLICE_SPAN = 3.0  # slices cover +-3 w_z


@dataclass(frozen=True)
class CloudGeometry:
    """Gaussian density ``eta0 exp(-2 r^2/w_perp^2 - 2 z^2/w_z^2)``."""

    eta0: float  # 1/m^3
    w_perp: float  # m
    w_z: float  # m

    def __post_init__(self):
        if self.eta0 < 0:
            raise DomainError("peak density must be non-negative")
        if self.w_perp <= 0 or self.w_z <= 0:
            raise DomainError("cloud radii must be positive")

    @property
    def atom_number(self) -> float:
        return self.eta0 * (np.pi / 2) ** 1.5 * self.w_perp**2 * self.w_z

    def density(self, r_perp, z):
        return self.eta0 * np.exp(-2 * np.asarray(r_perp) ** 2 / self.w_perp**2
                                  - 2 * np.asarray(z) ** 2 / self.w_z**2)

    def with_density(self, eta0: float) -> "CloudGeometry":
        return CloudGeometry(eta0, self.w_perp, self.w_z)


@dataclass(frozen=True)
class Mode:
    p: int
    l: int  # signed for complex modes; >= 0 for real modes
    kind: str = "exp"  # "exp" (complex), "cos", "sin"

    @property
    def label(self) -> str:
        return f"{self.p},{self.l}" + ("" if self.kind == "exp" else self.kind[0])


@dataclass(frozen=True)
class ModeBasis:
    w0: float
    wavelength: float
    p_max: int = 2
    l_max: int = 2
    n_slices: int = 12
    z_extent: float = 0.0  # half-length covered by the slices
    n_radial: int = 64
    n_angular: int = 128

    def __post_init__(self):
        if self.w0 <= 0 or self.wavelength <= 0:
            raise DomainError("waist and wavelength must be positive")
        if self.p_max < 0 or self.l_max < 0 or self.n_slices < 1:
            raise DomainError("mode cutoffs must be non-negative and n_slices >= 1")

    @property
    def area(self) -> float:
        return np.pi * self.w0**2 / 2

    @property
    def rayleigh_range(self) -> float:
        return np.pi * self.w0**2 / self.wavelength

    def waist_at(self, z):
        return self.w0 * np.sqrt(1 + (np.asarray(z) / self.rayleigh_range) ** 2)

    def gouy(self, z):
        return np.arctan(np.asarray(z) / self.rayleigh_range)

    def curvature(self, z):
        """Inverse radius of curvature ``1/R(z)``."""
        z = np.asarray(z, dtype=float)
        zr = self.rayleigh_range
        return z / (z**2 + zr**2)

    @property
    def complex_modes(self) -> list[Mode]:
        return [Mode(p, l) for p in range(self.p_max + 1) for l in range(-self.l_max, self.l_max + 1)]

    @cached_property
    def real_modes(self) -> list[Mode]:
        out = []
        for l in range(self.l_max + 1):
            for kind in (("cos",) if l == 0 else ("cos", "sin")):
                for p in range(self.p_max + 1):
                    out.append(Mode(p, l, kind))
        return out

    @property
    def slice_width(self) -> float:
        return 2 * self.z_extent / self.n_slices

    @property
    def slice_centers(self) -> np.ndarray:
        dz = self.slice_width
        return -self.z_extent + dz * (np.arange(self.n_slices) + 0.5)

    def slice_edges(self) -> np.ndarray:
        return np.linspace(-self.z_extent, self.z_extent, self.n_slices + 1)

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def make_basis(w0, wavelength, cloud: CloudGeometry, p_max=2, l_max=2, n_slices=12,
               n_radial=64, n_angular=128) -> ModeBasis:
    return ModeBasis(w0, wavelength, p_max, l_max, n_slices, SLICE_SPAN * cloud.w_z,
                     n_radial, n_angular)


# ---------------------------------------------------------------------------
# mode functions

def _radial(p, l, s):
    """Radial factor of the LG mode in ``s = 2 r^2/w^2`` without the Gaussian."""
    l = abs(l)
    c = np.sqrt(factorial(p) / factorial(p + l))
    return c * s ** (l / 2) * eval_genlaguerre(p, l, s)


def _angular(mode: Mode, phi):
    if mode.kind == "exp":
        return np.exp(1j * mode.l * phi)
    if mode.l == 0:
        return np.ones_like(phi, dtype=float)
    trig = np.cos if mode.kind == "cos" else np.sin
    return np.sqrt(2) * trig(mode.l * phi)


def lg_mode_amplitude(basis: ModeBasis, p: int, l: int, r_perp, phi, z) -> np.ndarray:
    """Complex LG amplitude with Gouy and curvature phases; ``u00(0,0,0) = 1``."""
    r_perp, phi, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r_perp, phi, z)))
    w = basis.waist_at(z)
    s = 2 * r_perp**2 / w**2
    k = 2 * np.pi / basis.wavelength
    phase = (l * phi - k * r_perp**2 * basis.curvature(z) / 2
             + (2 * p + abs(l) + 1) * basis.gouy(z))
    # global phase chosen so that u00 is real and positive on axis at every z
    phase = phase - basis.gouy(z)
    return (basis.w0 / w) * _radial(p, l, s) * np.exp(-s / 2) * np.exp(1j * phase)


def real_mode_amplitude(basis: ModeBasis, mode: Mode, r_perp, phi, z) -> np.ndarray:
    r_perp, phi, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r_perp, phi, z)))
    w = basis.waist_at(z)
    s = 2 * r_perp**2 / w**2
    return (basis.w0 / w) * _radial(mode.p, mode.l, s) * np.exp(-s / 2) * _angular(mode, phi)


def spinwave_weight(basis: ModeBasis, p: int, l: int, r_perp, phi, z) -> np.ndarray:
    """``beta_pl = u_pl^* u_00``."""
    return np.conj(lg_mode_amplitude(basis, p, l, r_perp, phi, z)) * lg_mode_amplitude(basis, 0, 0, r_perp, phi, z)


def relative_intensity(basis: ModeBasis, r_perp, z) -> np.ndarray:
    """``beta00 = I / I_max``."""
    w = basis.waist_at(z)
    return (basis.w0 / w) ** 2 * np.exp(-2 * np.asarray(r_perp) ** 2 / w**2)


# ---------------------------------------------------------------------------
# transverse quadrature

@dataclass(frozen=True)
class _Quadrature:
    t: np.ndarray
    wt: np.ndarray
    phi: np.ndarray


def _quadrature(n_radial, n_angular) -> _Quadrature:
    t, wt = laggauss(n_radial)
    phi = 2 * np.pi * np.arange(n_angular) / n_angular
    return _Quadrature(t, wt, phi)


def _transverse(basis, z, radial_factors, angular, n_gauss, extra=0.0, quad=None):
    """``(1/A_m) int d^2r`` of a product of mode functions.

    ``radial_factors``: callables of ``s``; ``angular``: values on the phi grid;
    ``n_gauss``: number of ``exp(-s/2)`` factors; ``extra``: additional
    coefficient ``lam`` of ``exp(-lam s)`` (complex allowed).
    """
    quad = quad or _quadrature(basis.n_radial, basis.n_angular)
    w = basis.waist_at(z)
    lam = n_gauss / 2 + extra
    s = quad.t / lam
    radial = np.ones_like(s, dtype=complex)
    for fn in radial_factors:
        radial = radial * fn(s)
    r_int = np.sum(quad.wt * radial) / lam
    a_int = np.mean(angular) * 2 * np.pi
    # d^2 r = (w^2/4) ds dphi
    return (w**2 / 4) * r_int * a_int / basis.area


def _amp_parts(basis, mode: Mode, z, quad, conj=False, complex_phase=True):
    """Return (radial callable, angular values, amplitude prefactor, s-phase coeff)."""
    w = basis.waist_at(z)
    pref = basis.w0 / w
    ang = _angular(mode, quad.phi)
    phase_s = 0.0
    if mode.kind == "exp" and complex_phase:
        # curvature phase -k r^2/(2R) = -(k w^2 / 4R) s
        k = 2 * np.pi / basis.wavelength
        a = k * w**2 * basis.curvature(z) / 4
        gouy = (2 * mode.p + abs(mode.l)) * basis.gouy(z)
        phase_s = -1j * a
        pref = pref * np.exp(1j * gouy)
    if conj:
        ang, pref, phase_s = np.conj(ang), np.conj(pref), np.conj(phase_s)
    return (lambda s, m=mode: _radial(m.p, m.l, s)), ang, pref, phase_s


def overlap_c(basis: ModeBasis, pl, plp, z) -> complex:
    """``(1/A) int u00^2 u*_pl u*_p'l'`` for complex modes with all phases."""
    (p, l), (pp, lp) = pl, plp
    if l + lp != 0:
        return 0.0j
    quad = _quadrature(basis.n_radial, basis.n_angular)
    parts = [
        _amp_parts(basis, Mode(0, 0), z, quad),
        _amp_parts(basis, Mode(0, 0), z, quad),
        _amp_parts(basis, Mode(p, l), z, quad, conj=True),
        _amp_parts(basis, Mode(pp, lp), z, quad, conj=True),
    ]
    return _combine(basis, z, parts, quad)


def overlap_g(basis: ModeBasis, pl, plp, plpp, z) -> complex:
    """``(1/A) int u00 u_p''l'' beta_pl beta_p'l'`` for complex modes."""
    (p, l), (pp, lp), (ppp, lpp) = pl, plp, plpp
    if lpp != l + lp:
        return 0.0j
    quad = _quadrature(basis.n_radial, basis.n_angular)
    parts = [
        _amp_parts(basis, Mode(0, 0), z, quad),
        _amp_parts(basis, Mode(ppp, lpp), z, quad),
        _amp_parts(basis, Mode(p, l), z, quad, conj=True),
        _amp_parts(basis, Mode(0, 0), z, quad),
        _amp_parts(basis, Mode(pp, lp), z, quad, conj=True),
        _amp_parts(basis, Mode(0, 0), z, quad),
    ]
    return _combine(basis, z, parts, quad)


def _combine(basis, z, parts, quad, extra=0.0):
    pref = np.prod([pt[2] for pt in parts])
    ang = np.prod([pt[1] for pt in parts], axis=0)
    phase = sum(pt[3] for pt in parts)
    val = _transverse(basis, z, [pt[0] for pt in parts], ang, len(parts), extra - phase, quad)
    return complex(pref * val)


# ---------------------------------------------------------------------------
# engine tables (real modes, slice centres)

@dataclass
class OverlapTables:
    """Real-mode projection coefficients at the slice centres.

    ``c[k, a, a'] = (1/A) int u_a' u_a u00^2``,
    ``g[k, a, a', a''] = (1/A) int u_a'' u_a u_a' u00^3``.
    """

    c: np.ndarray
    g: np.ndarray
    modes: list
    z: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def n_slices(self) -> int:
        return len(self.z)


def build_overlap_tables(basis: ModeBasis) -> OverlapTables:
    modes = basis.real_modes
    quad = _quadrature(basis.n_radial, basis.n_angular)
    M, K = len(modes), basis.n_slices
    c = np.zeros((K, M, M))
    g = np.zeros((K, M, M, M))
    # cache per-mode values on the quadrature grid for speed
    for k, z in enumerate(basis.slice_centers):
        w = basis.waist_at(z)
        pref = basis.w0 / w

        def rvals(lam):
            s = quad.t / lam
            return np.array([_radial(m.p, m.l, s) for m in modes])

        r4 = rvals(2.0)  # four Gaussian factors
        r6 = rvals(3.0)
        u00_4 = _radial(0, 0, quad.t / 2.0)
        u00_6 = _radial(0, 0, quad.t / 3.0)
        A = np.array([_angular(m, quad.phi) for m in modes])
        scale = (w**2 / 4) / basis.area * 2 * np.pi
        # c: two modes and u00^2
        ang2 = (A[:, None, :] * A[None, :, :]).mean(axis=2)
        rad2 = (quad.wt * r4[:, None, :] * r4[None, :, :] * u00_4**2).sum(axis=2) / 2.0
        c[k] = pref**4 * scale * ang2 * rad2
        # g: three modes and u00^3
        ang3 = np.einsum("ap,bp,cp->abc", A, A, A) / A.shape[1]
        rad3 = np.einsum("p,ap,bp,cp->abc", quad.wt * u00_6**3, r6, r6, r6) / 3.0
        g[k] = pref**6 * scale * ang3 * rad3
    meta = {"fingerprint": basis.fingerprint(), "n_radial": basis.n_radial, "n_angular": basis.n_angular}
    return OverlapTables(c, g, modes, basis.slice_centers, meta)


# ---------------------------------------------------------------------------
# atom numbers and initial conditions

def _transverse_gauss_integral(cloud, basis, z, K):
    """``int d^2r eta |u00|^{2K}`` at fixed z (closed form)."""
    w = basis.waist_at(z)
    return (cloud.density(0.0, z) * (basis.w0 / w) ** (2 * K)
            * np.pi / (2 / cloud.w_perp**2 + 2 * K / w**2))


def effective_atom_number(cloud: CloudGeometry, basis: ModeBasis, K: int) -> float:
    """``N_K = int d^3r eta |u00|^{2K}`` integrated over the full cloud."""
    if K not in (1, 2, 3):
        raise DomainError("K must be 1, 2 or 3")
    # finite limits scaled to the cloud so that quad resolves thin clouds too
    zmax = 10 * cloud.w_z
    val, _ = integrate.quad(lambda z: _transverse_gauss_integral(cloud, basis, z, K),
                            -zmax, zmax, epsabs=0, epsrel=1e-12, limit=200)
    return float(val)


def density_for_N1(N1: float, cloud: CloudGeometry, basis: ModeBasis) -> CloudGeometry:
    """Rescale the peak density so that the full-cloud ``N_1`` equals ``N1``."""
    unit = cloud.with_density(1.0)
    return cloud.with_density(N1 / effective_atom_number(unit, basis, 1))


def slice_mode_integrals(cloud, basis, n_z=8):
    """Per-slice ``int eta beta_a`` and ``int eta beta_a beta_a'`` for real modes.

    Integrates the actual z dependence inside each slice with Gauss-Legendre.
    Returns (first (K, M), second (K, M, M)).
    """
    modes = basis.real_modes
    quad = _quadrature(basis.n_radial, basis.n_angular)
    xg, wg = leggauss(n_z)
    edges = basis.slice_edges()
    M, K = len(modes), basis.n_slices
    first = np.zeros((K, M))
    second = np.zeros((K, M, M))
    A = np.array([_angular(m, quad.phi) for m in modes])
    ang1 = A.mean(axis=1)
    ang2 = (A[:, None, :] * A[None, :, :]).mean(axis=2)
    for k in range(K):
        lo, hi = edges[k], edges[k + 1]
        for xi, wi in zip(xg, wg):
            z = 0.5 * (hi - lo) * xi + 0.5 * (hi + lo)
            jac = 0.5 * (hi - lo) * wi
            w = basis.waist_at(z)
            rho = w**2 / cloud.w_perp**2
            pref = basis.w0 / w
            scale = (w**2 / 4) * 2 * np.pi * cloud.density(0.0, z)
            lam1 = 1.0 + rho  # beta_a ~ two Gaussian factors
            s1 = quad.t / lam1
            r1 = np.array([_radial(m.p, m.l, s1) for m in modes]) * _radial(0, 0, s1)
            first[k] += jac * scale * pref**2 * ang1 * (quad.wt * r1).sum(axis=1) / lam1
            lam2 = 2.0 + rho
            s2 = quad.t / lam2
            r2 = np.array([_radial(m.p, m.l, s2) for m in modes]) * _radial(0, 0, s2) ** 2
            second[k] += (jac * scale * pref**4 * ang2
                          * (quad.wt * r2[:, None, :] * r2[None, :, :]).sum(axis=2) / lam2)
    return first, second


# ---------------------------------------------------------------------------
# binary cache

CACHE_MAGIC = b"QNDTBL01"
CACHE_VERSION = 1


def save_tables(tables: OverlapTables, path) -> None:
    """Write ``magic | u32 version | 64-byte hex hash | u32 K, M | c | g``.

    Payload: little-endian float64, ``c`` in (k, a, a') order then ``g`` in
    (k, a, a', a'') order, both C-contiguous.
    """
    path = Path(path)
    h = tables.meta.get("fingerprint", "0" * 64).encode()
    with path.open("wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", CACHE_VERSION))
        fh.write(h.ljust(64, b"0")[:64])
        fh.write(struct.pack("<II", tables.n_slices, tables.n_modes))
        fh.write(np.ascontiguousarray(tables.c, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(tables.g, dtype="<f8").tobytes())


def load_tables(path, basis: ModeBasis) -> OverlapTables | None:
    """Return cached tables if the header matches ``basis``; otherwise None."""
    path = Path(path)
    if not path.exists():
        return None
    raw = path.read_bytes()
    if raw[:8] != CACHE_MAGIC:
        return None
    (version,) = struct.unpack("<I", raw[8:12])
    h = raw[12:76].decode()
    if version != CACHE_VERSION or h != basis.fingerprint():
        return None
    K, M = struct.unpack("<II", raw[76:84])
    n_c, n_g = K * M * M, K * M * M * M
    data = np.frombuffer(raw[84:], dtype="<f8")
    if data.size != n_c + n_g:
        return None
    c = data[:n_c].reshape(K, M, M).copy()
    g = data[n_c:].reshape(K, M, M, M).copy()
    meta = {"fingerprint": h, "n_radial": basis.n_radial, "n_angular": basis.n_angular}
    return OverlapTables(c, g, basis.real_modes, basis.slice_centers, meta)


def cached_overlap_tables(basis: ModeBasis, cache_dir=None, no_cache=False) -> OverlapTables:
    if cache_dir is None or no_cache:
        tables = build_overlap_tables(basis)
        if cache_dir is not None:
            Path(cache_dir).mkdir(parents=True, exist_ok=True)
            save_tables(tables, Path(cache_dir) / f"overlap-{basis.fingerprint()[:16]}.bin")
        return tables
    path = Path(cache_dir) / f"overlap-{basis.fingerprint()[:16]}.bin"
    tables = load_tables(path, basis)
    if tables is None:
        tables = build_overlap_tables(basis)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_tables(tables, path)
    return tables
