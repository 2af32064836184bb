"""Gaussian moment engine for the qutrit spin waves.

State layout: populations ``N[k, a, i]`` and coherence means ``X[..., k, a, ij]``
over slices k, real modes a and qutrit labels; the symmetrised central
covariance ``C`` of the coherences uses the flat index
``(k * M + a) * 3 + ij``.

Equations (rates in 1/s at peak intensity, ``c_k``/``g_k`` overlap tables):

    dN/dt        = (c_k (x) T_nn) N
    dX           = (L X + b) dt + sqrt(kappa) C h dW
    dC/dt        = L C + C L^T + Q - kappa (C h)(C h)^T
    dM           = h.X dt + dW / sqrt(kappa)

with ``L = blockdiag_k(c_k (x) T_xx)``, ``b = (c_k (x) T_xn) N``,
``Q = blockdiag_k(sum_a'' g_k[., ., a''] (x) N_table . N[k, a'']])`` and ``h``
the fundamental-mode F_z functional.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, NumericalAbort
from .geometry import OverlapTables
from .pumping import PumpingTables, qutrit_basis

N_PAIRS = 3
X_INIT_UP = np.diag([0.5, 0.5, 0.0])  # <up| (x_a x_b)_s |up>


@dataclass(frozen=True)
class SpinCoefficients:
    v_up: float
    w_up: float
    f: float

    @property
    def fz_weights(self) -> np.ndarray:
        """Coefficients of (X_up,down, X_up,T, X_down,T) in F_z.

        These are the Hilbert-Schmidt components ``Tr[f_z x_ij]``; with the
        ``x_ij = (|i><j| + h.c.)/sqrt2`` normalisation the up-down weight is
        ``sqrt2 v_up`` while the down-T weight equals ``w_up``.
        """
        return np.array([np.sqrt(2) * self.v_up, 0.0, self.w_up])

    @property
    def fx_weights(self) -> np.ndarray:
        return np.array([self.f, self.f - 1, self.f - 2])


def spin_coefficients(f) -> SpinCoefficients:
    """``v = sqrt(Var f_z)_up``, ``w = sqrt(2 Var_down - 2 Var_up)`` in m_x states."""
    f = float(f)
    if f < 0.5 or (2 * f) % 1:
        raise DomainError("f must be a positive half-integer")
    # Var f_z in |m_x = m> equals (f(f+1) - m^2)/2
    var = lambda m: (f * (f + 1) - m * m) / 2  # noqa: E731
    v = np.sqrt(var(f))
    w = np.sqrt(max(2 * var(f - 1) - 2 * var(f), 0.0)) if f >= 1 else 0.0
    return SpinCoefficients(float(v), float(w), f)


@dataclass
class MomentState:
    t: float
    N: np.ndarray  # (K, M, 3)
    X: np.ndarray  # (..., K, M, 3)
    C: np.ndarray  # (n, n)
    N1: float
    N2: float
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple:
        return self.N.shape

    @property
    def n(self) -> int:
        return int(np.prod(self.N.shape))

    def copy(self) -> "MomentState":
        return MomentState(self.t, self.N.copy(), self.X.copy(), self.C.copy(),
                           self.N1, self.N2, dict(self.meta))


def initial_moment_state(first: np.ndarray, second: np.ndarray, mode_index=None) -> MomentState:
    """Coherent state along x from slice integrals of ``eta beta`` and ``eta beta beta``.

    ``first``: (K, M) and ``second``: (K, M, M) from
    :func:`qndspin.geometry.slice_mode_integrals`.  ``mode_index`` selects a
    subset of modes (the fundamental must stay first).
    """
    if mode_index is not None:
        first = first[:, mode_index]
        second = second[:, mode_index][:, :, mode_index]
    K, M = first.shape
    N = np.zeros((K, M, 3))
    N[:, :, 0] = first
    X = np.zeros((K, M, 3))
    n = K * M * 3
    C = np.zeros((n, n))
    for k in range(K):
        sl = slice(k * M * 3, (k + 1) * M * 3)
        C[sl, sl] = np.kron(second[k], X_INIT_UP)
    return MomentState(0.0, N, X, C, float(first[:, 0].sum()), float(second[:, 0, 0].sum()))


def active_modes(overlaps: OverlapTables, prune: bool = True) -> list[int]:
    """Modes coupled to the fundamental spin wave (the l = 0 sector) if ``prune``."""
    if not prune:
        return list(range(overlaps.n_modes))
    return [i for i, m in enumerate(overlaps.modes) if m.l == 0]


class MomentEngine:
    """Precomputed linear operators for one probe/geometry configuration."""

    def __init__(self, overlaps: OverlapTables, tables: PumpingTables | None, kappa: float,
                 coeffs: SpinCoefficients | None = None, modes=None):
        self.coeffs = coeffs or spin_coefficients(4)
        idx = list(range(overlaps.n_modes)) if modes is None else list(modes)
        if idx[0] != 0:
            raise DomainError("the fundamental mode must be the first active mode")
        self.modes = idx
        c = overlaps.c[:, idx][:, :, idx]
        g = overlaps.g[:, idx][:, :, idx][:, :, :, idx]
        self.K, self.M = c.shape[0], c.shape[1]
        self.kappa = float(kappa)
        if self.kappa < 0:
            raise DomainError("measurement rate must be non-negative")
        self.tables = tables
        B = self.M * N_PAIRS
        if tables is None:
            self.L = np.zeros((self.K, B, B))
            self.Pn = np.zeros((self.K, B, B))
            self.Bxn = np.zeros((self.K, B, B))
            self.G = np.zeros((self.K, B, B, self.M, 3))
        else:
            self.L = np.stack([np.kron(ck, tables.T_xx) for ck in c])
            self.Pn = np.stack([np.kron(ck, tables.T_nn) for ck in c])
            self.Bxn = np.stack([np.kron(ck, tables.T_xn) for ck in c])
            # Q[k](a i, a' j) = sum_a'' sum_l g[k,a,a',a''] N_table[i,j,l] N[k,a'',l]
            G = np.einsum("kabc,ijl->kaibjcl", g, tables.N_table)
            self.G = G.reshape(self.K, B, B, self.M, 3)
        self.h = np.zeros(self.K * B)
        w = self.coeffs.fz_weights
        for k in range(self.K):
            self.h[k * B:k * B + 3] = w
        self.fx = self.coeffs.fx_weights

    # -- observables ----------------------------------------------------
    @property
    def block(self) -> int:
        return self.M * N_PAIRS

    def fz_mean(self, X):
        X = np.asarray(X)
        return X.reshape(X.shape[:-3] + (-1,)) @ self.h

    def fz_var(self, C):
        return float(self.h @ C @ self.h)

    def fx_mean(self, N):
        return float(np.sum(N[:, 0, :] @ self.fx))

    def populations(self, N):
        return N[:, 0, :].sum(axis=0)

    # -- generators ------------------------------------------------------
    def _blocks(self, v, op):
        """Apply blockdiag(op_k) to the leading flat axis of v."""
        K, B = self.K, self.block
        shp = v.shape
        w = v.reshape((K, B) + shp[1:])
        out = np.einsum("kij,kj...->ki...", op, w)
        return out.reshape(shp)

    def pop_rate(self, N):
        flat = N.reshape(self.K, self.block)
        return np.einsum("kij,kj->ki", self.Pn, flat).reshape(N.shape)

    def source(self, N):
        flat = N.reshape(self.K, self.block)
        return np.einsum("kij,kj->ki", self.Bxn, flat).reshape(-1)

    def noise(self, N):
        Qk = np.einsum("kijal,kal->kij", self.G, N)
        n = self.K * self.block
        Q = np.zeros((n, n))
        B = self.block
        for k in range(self.K):
            Q[k * B:(k + 1) * B, k * B:(k + 1) * B] = Qk[k]
        return Q

    def cov_rate(self, N, C):
        LC = self._blocks(C, self.L)
        Ch = C @ self.h
        return LC + LC.T + self.noise(N) - self.kappa * np.outer(Ch, Ch)

    def mean_drift(self, N, X):
        """Deterministic part of dX/dt for flat X of shape (..., n)."""
        Xf = np.moveaxis(np.asarray(X), -1, 0)
        LX = np.moveaxis(self._blocks(Xf, self.L), 0, -1)
        return LX + self.source(N)

    def gain(self, C) -> np.ndarray:
        return np.sqrt(self.kappa) * (C @ self.h)


# -- single-step API -----------------------------------------------------

def deterministic_drift(state: MomentState, engine: MomentEngine, dt: float) -> MomentState:
    """RK4 step of populations and covariance; means are left untouched."""
    if dt <= 0:
        raise DomainError("dt must be positive")

    def f(N, C):
        return engine.pop_rate(N), engine.cov_rate(N, C)

    N0, C0 = state.N, state.C
    k1 = f(N0, C0)
    k2 = f(N0 + dt / 2 * k1[0], C0 + dt / 2 * k1[1])
    k3 = f(N0 + dt / 2 * k2[0], C0 + dt / 2 * k2[1])
    k4 = f(N0 + dt * k3[0], C0 + dt * k3[1])
    N = N0 + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    C = C0 + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    C = 0.5 * (C + C.T)
    _check(state, N, C, engine)
    out = replace(state, t=state.t + dt, N=N, C=C)
    return out


def _check(state, N, C, engine):
    d = np.diag(C)
    scale = max(np.max(np.abs(np.diag(state.C))), 1e-300)
    if np.min(d) < -1e-9 * scale:
        raise NumericalAbort("negative coherence variance", diagnostics={"min_diag": float(np.min(d)), "t": state.t})
    if N.sum() > state.N.sum() * (1 + 1e-12) + 1e-300:
        raise NumericalAbort("population growth", diagnostics={"t": state.t})
    if engine.fz_var(C) <= 0 and engine.fz_var(state.C) > 0:
        raise NumericalAbort("non-positive F_z variance", diagnostics={"t": state.t})


def paired_update(engine: MomentEngine, N, X, gain, dW, dt: float):
    """One Itô step on flat means ``X`` (..., n) and the matching record sample.

    The same ``dW`` enters the record and the state update.
    """
    dW = np.asarray(dW, dtype=float)
    hx = np.einsum("...n,n->...", X, engine.h)  # row-wise, independent of batch size
    noise = dW / np.sqrt(engine.kappa) if engine.kappa > 0 else np.zeros_like(dW)
    dM = hx * dt + noise
    Xn = X + engine.mean_drift(N, X) * dt + np.multiply.outer(dW, gain)
    return Xn, dM


def conditional_mean_step(state: MomentState, engine: MomentEngine, dW, dt: float):
    """Euler-Maruyama mean update paired with its record sample.

    Returns ``(new_X, dM)``; ``dW`` may carry a leading batch axis.
    """
    X = state.X.reshape(state.X.shape[:-3] + (-1,))
    Xn, dM = paired_update(engine, state.N, X, engine.gain(state.C), dW, dt)
    return Xn.reshape(Xn.shape[:-1] + state.N.shape), dM


# -- squeezing ----------------------------------------------------------

def spinwave_moments(state: MomentState, engine: MomentEngine):
    return engine.fx_mean(state.N), engine.fz_mean(state.X), engine.fz_var(state.C)


def metrological_squeezing(var_fz: float, fx: float, N1: float, N2: float, f: float = 4) -> float:
    """``xi_m^2 = 2 f (N1^2/N2) Var F_z / <F_x>^2``."""
    if fx <= 0:
        raise DomainError("mean spin has vanished")
    return 2 * f * N1**2 / N2 * var_fz / fx**2


def to_db(x):
    return 10 * np.log10(x)


# -- deterministic evolution ----------------------------------------------

@dataclass
class DeterministicPath:
    """Populations/covariance on a uniform grid plus per-step Kalman gains."""

    t: np.ndarray
    fx: np.ndarray
    var_fz: np.ndarray
    populations: np.ndarray  # (n_t, 3) fundamental-mode
    gains: np.ndarray  # (n_t, n) gain at the start of each step
    N_path: np.ndarray  # (n_t, K, M, 3)
    N1: float
    N2: float
    dt: float

    @property
    def xi_m_sq(self) -> np.ndarray:
        return 2 * 4 * self.N1**2 / self.N2 * self.var_fz / self.fx**2

    def loss(self) -> np.ndarray:
        return 1 - self.populations.sum(axis=1) / self.populations[0].sum()


def evolve_deterministic(state: MomentState, engine: MomentEngine, T: float, dt: float,
                         max_halvings: int = 3) -> DeterministicPath:
    """Integrate populations and covariance on ``n = round(T/dt)`` steps.

    On a detected instability the whole run is retried with ``dt/2``.
    """
    for attempt in range(max_halvings + 1):
        try:
            return _evolve(state, engine, T, dt / 2**attempt)
        except NumericalAbort as exc:
            last = exc
    raise NumericalAbort(f"unstable after {max_halvings} halvings: {last}", diagnostics=last.diagnostics)


def _evolve(state, engine, T, dt):
    n_steps = int(round(T / dt))
    if n_steps < 1:
        raise DomainError("T must be at least one step")
    dt = T / n_steps
    s = state.copy()
    ts = np.empty(n_steps + 1)
    fx = np.empty(n_steps + 1)
    var = np.empty(n_steps + 1)
    pops = np.empty((n_steps + 1, 3))
    gains = np.empty((n_steps + 1, s.n))
    Ns = np.empty((n_steps + 1,) + s.N.shape)
    for i in range(n_steps + 1):
        ts[i], fx[i], var[i] = s.t, engine.fx_mean(s.N), engine.fz_var(s.C)
        pops[i] = engine.populations(s.N)
        gains[i] = engine.gain(s.C)
        Ns[i] = s.N
        if i < n_steps:
            s = deterministic_drift(s, engine, dt)
    return DeterministicPath(ts, fx, var, pops, gains, Ns, s.N1, s.N2, dt)


def record_variance_model(state: MomentState, engine: MomentEngine, T: float, dt: float) -> tuple[float, float]:
    """Unconditional ``Var M`` of a record integrated over ``[0, T]``.

    Returns ``(pn, sn)`` with ``pn = Var int_0^T F_z^00 dt`` from the
    measurement-free covariance (conditioning leaves unconditional moments
    unchanged) and ``sn = T / kappa``.  With pumping off ``pn = T^2 Var F_z``.
    """
    n_steps = int(round(T / dt))
    if n_steps < 1:
        raise DomainError("need T >= dt")
    h = engine.h

    def f(y):
        N, C, Z, _ = y
        LC = engine._blocks(C, engine.L)
        return (engine.pop_rate(N), LC + LC.T + engine.noise(N),
                engine._blocks(Z, engine.L) + C @ h, 2 * h @ Z)

    y = (state.N, state.C, np.zeros(state.n), 0.0)
    for _ in range(n_steps):
        k1 = f(y)
        k2 = f(tuple(a + 0.5 * dt * b for a, b in zip(y, k1)))
        k3 = f(tuple(a + 0.5 * dt * b for a, b in zip(y, k2)))
        k4 = f(tuple(a + dt * b for a, b in zip(y, k3)))
        y = tuple(a + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))
    sn = T / engine.kappa if engine.kappa > 0 else np.inf
    return float(y[3]), float(sn)


def stability_dt(engine: MomentEngine, state: MomentState, factor: float = 200.0) -> float:
    """``min(1/(kappa Var F_z), 1/gamma) / factor`` with gamma the fastest pumping rate."""
    rates = [engine.kappa * engine.fz_var(state.C)]
    if engine.tables is not None:
        rates.append(np.max(np.abs(np.diag(engine.tables.T_nn))))
        rates.append(np.max(np.abs(np.diag(engine.tables.T_xx))))
    rate = max(rates)
    if rate <= 0:
        raise DomainError("no dynamics: both kappa and pumping vanish")
    return 1.0 / rate / factor


def fundamental_qutrit_check() -> np.ndarray:
    """``Tr[f_z x_ij]`` from the explicit qutrit embedding (for cross-checks)."""
    return qutrit_basis().fz_weights()
