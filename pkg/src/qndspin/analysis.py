"""Noise decompositions and squeezing estimates from measurement records.

All quantities are in the scaled record units, where a coherent state gives
``Delta M_PN^2 = T^2 Var F_z^00`` and the empty trap ``Delta M_SN^2 = T/kappa``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


def _window_steps(n_total: int, dt: float, start: float, stop: float) -> slice:
    i0 = int(round(start / dt))
    i1 = int(round(stop / dt))
    if i0 < 0 or i1 > n_total or i1 <= i0:
        raise DomainError(f"window [{start}, {stop}] s lies outside the record span")
    return slice(i0, i1)


def integrate_record(dM, dt: float, window: tuple[float, float]) -> np.ndarray:
    """Itô sum of ``dM`` over ``window``; ``dM`` may be (n,) or (batch, n)."""
    dM = np.asarray(dM, dtype=float)
    sl = _window_steps(dM.shape[-1], dt, *window)
    return dM[..., sl].sum(axis=-1)


def measurement_pairs(dM, dt: float, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Back-to-back integrals over ``[0, T]`` and ``[T, 2T]``."""
    return integrate_record(dM, dt, (0.0, T)), integrate_record(dM, dt, (T, 2 * T))


def covariance_estimate(M1, M2) -> float:
    """``[Var(M1 + M2) - Var(M1 - M2)] / 4`` with unbiased variances."""
    M1, M2 = np.asarray(M1, float), np.asarray(M2, float)
    if M1.shape != M2.shape or M1.size < 2:
        raise DomainError("need at least two paired samples")
    return (np.var(M1 + M2, ddof=1) - np.var(M1 - M2, ddof=1)) / 4


def conditional_variance(M1, M2) -> float:
    """``Var M2 - cov(M1, M2)^2 / Var M1``."""
    M1, M2 = np.asarray(M1, float), np.asarray(M2, float)
    v1 = np.var(M1, ddof=1)
    if not v1 > 0:
        raise DomainError("first measurement has no spread")
    return np.var(M2, ddof=1) - covariance_estimate(M1, M2) ** 2 / v1


def squeezing_from_records(M1, M2, var_sn: float, var_pn: float, mean_spin_ratio: float,
                           orientation: str = "printed") -> float:
    """Record-based squeezing parameter.

    ``orientation="printed"``:
        ``xi^2 = [(Delta(M2|M1)^2 - Delta M_SN^2)/Delta M_PN^2] * ratio``
    ``orientation="wineland"``:
        the same bracket divided by ``ratio``, so that a shrinking mean spin
        raises ``xi^2`` as in ``Var F_z / <F_x>^2``.

    ``mean_spin_ratio`` is ``|<F_2>|^2 / |<F_1>|^2``.
    """
    if var_pn <= 0:
        raise DomainError("projection-noise reference must be positive")
    if not mean_spin_ratio > 0:
        raise DomainError("mean-spin ratio must be positive")
    bracket = (conditional_variance(M1, M2) - var_sn) / var_pn
    if orientation == "printed":
        return bracket * mean_spin_ratio
    if orientation == "wineland":
        return bracket / mean_spin_ratio
    raise DomainError("orientation must be 'printed' or 'wineland'")


def mean_spin_decay_ratio(t, fx, T: float, convention: str = "midpoint") -> float:
    """``(<F_x>(t_2) / <F_x>(t_1))^2`` for the two back-to-back windows.

    ``midpoint``: t_1 = T/2, t_2 = 3T/2.  ``start``: t_1 = 0, t_2 = T.
    """
    t = np.asarray(t)
    if t[-1] < 2 * T * (1 - 1e-9):
        raise DomainError("dynamics must cover [0, 2T]")
    t1, t2 = {"midpoint": (T / 2, 1.5 * T), "start": (0.0, T)}[convention]
    return float((np.interp(t2, t, fx) / np.interp(t1, t, fx)) ** 2)


@dataclass
class NoiseDecomposition:
    var_sn: float
    a: float
    b: float
    N1: np.ndarray
    totals: np.ndarray
    cov: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def pn(self) -> np.ndarray:
        return self.a * self.N1

    @property
    def cn(self) -> np.ndarray:
        return self.b * self.N1**2

    def predict(self, N1) -> np.ndarray:
        N1 = np.asarray(N1, float)
        return self.var_sn + self.a * N1 + self.b * N1**2

    def as_dict(self) -> dict:
        return {"var_sn": self.var_sn, "a": self.a, "b": self.b, "N1": self.N1.tolist(),
                "totals": self.totals.tolist(), "pn": self.pn.tolist(), "cn": self.cn.tolist(),
                "cov": self.cov.tolist()}


def noise_decomposition_fit(N1, var_M, var_sn: float, sigma=None) -> NoiseDecomposition:
    """Weighted least squares of ``Var M - Delta M_SN^2 = a N1 + b N1^2``."""
    N1 = np.asarray(N1, float)
    y = np.asarray(var_M, float) - var_sn
    if len(np.unique(N1)) < 3:
        raise DomainError("need at least three distinct atom numbers")
    s = np.ones_like(y) if sigma is None else np.asarray(sigma, float)
    A = np.column_stack([N1, N1**2]) / s[:, None]
    if np.linalg.matrix_rank(A) < 2:
        raise DomainError("design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(A, y / s, rcond=None)
    resid = y / s - A @ coef
    dof = max(len(y) - 2, 1)
    scale = 1.0 if sigma is not None else float(resid @ resid / dof)
    cov = np.linalg.inv(A.T @ A) * scale
    return NoiseDecomposition(float(var_sn), float(coef[0]), float(coef[1]), N1,
                              np.asarray(var_M, float), cov)


def variance_sigma(x) -> float:
    """Standard error of the unbiased variance of Gaussian samples."""
    x = np.asarray(x, float)
    return float(np.var(x, ddof=1) * np.sqrt(2 / (x.size - 1)))


def bootstrap(stat, *samples, n_boot: int = 200, seed: int = 0) -> np.ndarray:
    """Paired bootstrap replicates of ``stat(*samples)``."""
    n = len(samples[0])
    rng = np.random.Generator(np.random.Philox(key=seed))
    out = np.empty(n_boot)
    for i in range(n_boot):
        idx = rng.integers(0, n, n)
        out[i] = stat(*(np.asarray(s)[idx] for s in samples))
    return out


def chi2_variance_test(samples, expected_var: float, n_sigma: float = 3.0) -> tuple[bool, float]:
    """Two-sided chi-square check of a sample variance against ``expected_var``.

    Returns (pass, z) with ``z`` the deviation in chi-square standard deviations.
    """
    x = np.asarray(samples, float)
    k = x.size - 1
    stat = k * np.var(x, ddof=1) / expected_var
    z = (stat - k) / np.sqrt(2 * k)
    return bool(abs(z) <= n_sigma), float(z)


def to_db(x):
    return 10 * np.log10(x)
