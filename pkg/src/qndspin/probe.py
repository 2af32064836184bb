"""Per-color probe physics and the two-color operating point.

All rates are angular (rad/s or 1/s), powers in W, lengths in m.  The Faraday
angle uses the characteristic cross section ``A = pi w0^2``; spatial
variation enters only through the relative intensity ``beta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .atomic import (
    HBAR,
    AtomicSpecies,
    check_detuning,
    coefficients_CK,
    detuning_factor,
    effective_CK,
    line_detunings,
)
from .errors import DomainError, UncancellableError

D1 = Fraction(1, 2)
D2 = Fraction(3, 2)


@dataclass(frozen=True)
class ProbeColor:
    jp: Fraction
    delta: float  # rad/s, signed, from the f=4 -> f'_max line
    power: float  # W
    waist: float  # m

    def __post_init__(self):
        if self.power < 0:
            raise DomainError(f"probe power must be non-negative, got {self.power}")
        if self.waist <= 0:
            raise DomainError(f"beam waist must be positive, got {self.waist}")
        object.__setattr__(self, "jp", Fraction(str(self.jp)))

    def omega(self, species: AtomicSpecies) -> float:
        return species.manifold(self.jp).omega

    def photon_flux(self, species: AtomicSpecies) -> float:
        return self.power / (HBAR * self.omega(species))

    @property
    def peak_intensity(self) -> float:
        return 2 * self.power / (np.pi * self.waist**2)

    @property
    def area(self) -> float:
        """Characteristic probe cross section entering the Faraday angle."""
        return np.pi * self.waist**2

    def with_power(self, power: float) -> "ProbeColor":
        return ProbeColor(self.jp, self.delta, power, self.waist)


def faraday_angle(species: AtomicSpecies, color: ProbeColor) -> float:
    """Rotation angle per unit ``f_z``, in rad."""
    m = species.manifold(color.jp)
    c1 = effective_CK(species, color.jp, 1, color.delta)
    return -c1 * (m.sigma0 / color.area) * m.gamma / (2 * color.delta)


def tensor_shift_strength(species: AtomicSpecies, color: ProbeColor, beta: float = 1.0) -> float:
    """Coefficient of ``f_x^2`` in the rank-2 light shift divided by hbar (rad/s)."""
    if not 0 <= beta <= 1:
        raise DomainError(f"intensity ratio must lie in [0, 1], got {beta}")
    m = species.manifold(color.jp)
    c2 = effective_CK(species, color.jp, 2, color.delta)
    s = beta * color.peak_intensity / m.i_sat
    return c2 * m.gamma / 8 * s * m.gamma / color.delta


def scattering_rate(species: AtomicSpecies, color: ProbeColor, beta: float = 1.0) -> float:
    """Characteristic photon scattering rate for unit line strength (1/s)."""
    if not 0 <= beta <= 1:
        raise DomainError(f"intensity ratio must lie in [0, 1], got {beta}")
    check_detuning(species, color.jp, color.delta)
    m = species.manifold(color.jp)
    flux_density = beta * color.peak_intensity / (HBAR * m.omega)
    return (m.sigma0 * flux_density * m.gamma**2 / (4 * color.delta**2)
            * detuning_factor(species, color.jp, color.delta))


def eta(species, color) -> float:
    return HBAR * color.omega(species) * faraday_angle(species, color) * color.photon_flux(species)


def kappa_sn(species, color) -> float:
    return (HBAR * color.omega(species)) ** 2 * color.photon_flux(species)


def single_color_measurement_strength(species, color, T: float, var_fz: float) -> float:
    if T < 0:
        raise DomainError("integration time must be non-negative")
    if var_fz <= 0:
        raise DomainError("projection-noise variance must be positive")
    if color.power == 0:
        return 0.0
    return eta(species, color) ** 2 * T * var_fz / kappa_sn(species, color)


def max_measurement_strength(species, color, var_fz: float) -> float:
    """Strength reached after one scattering time, ``T = 1/gamma``."""
    return single_color_measurement_strength(species, color, 1.0, var_fz) / scattering_rate(species, color)


def two_color_strength_ratio(species, probe: "TwoColorProbe", var_fz: float = 1.0) -> float:
    """Two-color measurement strength in units of the single D2-color maximum."""
    d1, d2 = probe.d1, probe.d2
    if d1.power == 0 and d2.power == 0:
        raise DomainError("at least one probe color needs non-zero power")
    if d1.power == 0:
        return 1.0
    if d2.power == 0:
        # r_max is power independent, so compare against a unit-power D2 reference
        d2 = d2.with_power(1.0)
        return (max_measurement_strength(species, d1, var_fz)
                / max_measurement_strength(species, d2, var_fz))
    e_ratio = eta(species, d1) / eta(species, d2)
    k_ratio = kappa_sn(species, d1) / kappa_sn(species, d2)
    g_ratio = scattering_rate(species, d1) / scattering_rate(species, d2)
    return (1 + e_ratio) ** 2 / ((1 + k_ratio) * (1 + g_ratio))


def effective_measurement_rate(species, probe: "TwoColorProbe") -> float:
    """Measurement rate of the summed Faraday signal (1/s per unit F_z^2)."""
    fluxes, amps = [], []
    for c in (probe.d1, probe.d2):
        n = c.photon_flux(species)
        fluxes.append(n)
        amps.append(faraday_angle(species, c) * n if n > 0 else 0.0)
    total = sum(fluxes)
    if total == 0:
        raise DomainError("at least one probe color needs non-zero power")
    # sgn(chi) sqrt(N k) with k = chi^2 N reduces to chi N
    return sum(amps) ** 2 / total


def _tensor_per_power(species, jp, delta, waist) -> float:
    return tensor_shift_strength(species, ProbeColor(jp, delta, 1.0, waist))


def cancellation_operating_point(species, delta_d1: float, delta_d2: float, waist: float = 1.0) -> float:
    """Power ratio ``P_D1/P_D2`` at which the tensor light shifts cancel."""
    t1 = _tensor_per_power(species, D1, delta_d1, waist)
    t2 = _tensor_per_power(species, D2, delta_d2, waist)
    if t1 * t2 >= 0:
        raise UncancellableError(
            "tensor light shifts of the two colors have the same sign at these detunings")
    return -t2 / t1


def cancellation_residual(species, d1: ProbeColor, d2: ProbeColor) -> float:
    a = tensor_shift_strength(species, d1) if d1.power > 0 else 0.0
    b = tensor_shift_strength(species, d2) if d2.power > 0 else 0.0
    denom = abs(a) + abs(b)
    return abs(a + b) / denom if denom > 0 else 0.0


@dataclass(frozen=True)
class TwoColorProbe:
    d1: ProbeColor
    d2: ProbeColor
    chi: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)
    tensor_shift: dict = field(default_factory=dict)
    kappa_meas: float = 0.0
    cancellation_residual: float = 0.0

    @property
    def colors(self) -> tuple[ProbeColor, ProbeColor]:
        return (self.d1, self.d2)

    @property
    def gamma_total(self) -> float:
        return sum(self.gamma.values())

    def to_record(self, species) -> dict:
        def color(c):
            d = asdict(c)
            d["jp"] = str(c.jp)
            d["photon_flux"] = c.photon_flux(species)
            d["peak_intensity"] = c.peak_intensity
            return d
        return {
            "d1": color(self.d1),
            "d2": color(self.d2),
            "chi": {k: float(v) for k, v in self.chi.items()},
            "gamma": {k: float(v) for k, v in self.gamma.items()},
            "tensor_shift": {k: float(v) for k, v in self.tensor_shift.items()},
            "kappa_meas": self.kappa_meas,
            "cancellation_residual": self.cancellation_residual,
            "gamma_total": self.gamma_total,
            "scattering_time": 1 / self.gamma_total if self.gamma_total > 0 else float("inf"),
            "strength_ratio": two_color_strength_ratio(species, self),
        }


def build_probe(species, d1: ProbeColor, d2: ProbeColor) -> TwoColorProbe:
    chi, gam, ten = {}, {}, {}
    for name, c in (("D1", d1), ("D2", d2)):
        if c.power > 0:
            chi[name] = faraday_angle(species, c)
            gam[name] = scattering_rate(species, c)
            ten[name] = tensor_shift_strength(species, c)
        else:
            chi[name] = gam[name] = ten[name] = 0.0
    bare = TwoColorProbe(d1, d2)
    return TwoColorProbe(
        d1, d2, chi=chi, gamma=gam, tensor_shift=ten,
        kappa_meas=effective_measurement_rate(species, bare),
        cancellation_residual=cancellation_residual(species, d1, d2),
    )


def anchored_probe(species, delta_d1: float, delta_d2: float, power_ratio: float,
                   waist: float, scattering_time: float) -> TwoColorProbe:
    """Scale both powers so that ``1/(gamma_D1 + gamma_D2) = scattering_time``."""
    unit = build_probe(species, ProbeColor(D1, delta_d1, power_ratio, waist),
                       ProbeColor(D2, delta_d2, 1.0, waist))
    p2 = 1.0 / (scattering_time * unit.gamma_total)
    return build_probe(species, ProbeColor(D1, delta_d1, power_ratio * p2, waist),
                       ProbeColor(D2, delta_d2, p2, waist))


def cancelled_probe(species, delta_d1, delta_d2, waist, scattering_time) -> TwoColorProbe:
    ratio = cancellation_operating_point(species, delta_d1, delta_d2, waist)
    return anchored_probe(species, delta_d1, delta_d2, ratio, waist, scattering_time)


# ---------------------------------------------------------------------------
# scans

@dataclass
class StrengthScan:
    delta_d2: float
    delta_ratios: np.ndarray  # |delta_D1| / |delta_D2|
    power_ratios: np.ndarray
    sign: int  # sign of delta_D1 / delta_D2 used for the grid
    r_over_rmax: np.ndarray  # shape (n_delta, n_power)
    residual: np.ndarray

    def rows(self):
        for i, dr in enumerate(self.delta_ratios):
            for j, pr in enumerate(self.power_ratios):
                yield (self.sign * dr, pr, self.r_over_rmax[i, j], self.residual[i, j])


def strength_at(species, delta_d2, signed_delta_ratio, power_ratio, waist=1.0) -> tuple[float, float]:
    d1 = ProbeColor(D1, signed_delta_ratio * delta_d2, power_ratio, waist)
    d2 = ProbeColor(D2, delta_d2, 1.0, waist)
    probe = TwoColorProbe(d1, d2)
    return two_color_strength_ratio(species, probe), cancellation_residual(species, d1, d2)


def scan_strength(species, delta_d2, delta_ratios, power_ratios, sign=-1, waist=1.0) -> StrengthScan:
    """Dense grid of ``r/r_max`` over detuning-magnitude and power ratios."""
    dr = np.asarray(delta_ratios, dtype=float)
    pr = np.asarray(power_ratios, dtype=float)
    r = np.empty((dr.size, pr.size))
    res = np.empty_like(r)
    for i, x in enumerate(dr):
        for j, y in enumerate(pr):
            r[i, j], res[i, j] = strength_at(species, delta_d2, sign * x, y, waist)
    return StrengthScan(delta_d2, dr, pr, sign, r, res)


@dataclass(frozen=True)
class DesignPoint:
    signed_delta_ratio: float
    power_ratio: float
    r_over_rmax: float
    residual: float

    @property
    def r_squared(self) -> float:
        return self.r_over_rmax**2


def cancellation_curve_strength(species, delta_d2, signed_delta_ratio, waist=1.0) -> DesignPoint:
    ratio = cancellation_operating_point(species, signed_delta_ratio * delta_d2, delta_d2, waist)
    r, res = strength_at(species, delta_d2, signed_delta_ratio, ratio, waist)
    return DesignPoint(signed_delta_ratio, ratio, r, res)


def optimize_design(species, delta_d2, ratio_range=(0.2, 5.0), n_grid=60, waist=1.0) -> DesignPoint:
    """Best ``r/r_max`` along the tensor-cancellation curve, both detuning signs.

    Dense grid in the detuning ratio followed by a golden-section refinement
    around the best cell.
    """
    grid = np.geomspace(*ratio_range, n_grid)
    best = None
    for sign in (-1, 1):
        for x in grid:
            try:
                p = cancellation_curve_strength(species, delta_d2, sign * x, waist)
            except (UncancellableError, DomainError):
                continue
            if best is None or p.r_over_rmax > best.r_over_rmax:
                best = p
    if best is None:
        raise UncancellableError("no cancellable operating point in the scanned range")
    sign = np.sign(best.signed_delta_ratio)
    x0 = abs(best.signed_delta_ratio)
    step = grid[1] / grid[0]
    lo, hi = max(ratio_range[0], x0 / step), min(ratio_range[1], x0 * step)

    def neg(x):
        try:
            return -cancellation_curve_strength(species, delta_d2, sign * x, waist).r_over_rmax
        except (UncancellableError, DomainError):
            return np.inf

    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
    refined = cancellation_curve_strength(species, delta_d2, sign * res.x, waist)
    return refined if refined.r_over_rmax >= best.r_over_rmax else best


def bisect_cancellation(species, delta_d1, delta_d2, waist=1.0, bracket=(1e-4, 1e4)) -> float:
    """Root of the signed tensor sum in the power ratio; independent of the closed form."""
    def total(ratio):
        a = tensor_shift_strength(species, ProbeColor(D1, delta_d1, ratio, waist))
        b = tensor_shift_strength(species, ProbeColor(D2, delta_d2, 1.0, waist))
        return a + b
    return brentq(total, *bracket, xtol=1e-14, rtol=1e-14)
