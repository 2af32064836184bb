"""Synthetic polarimeter records paired with conditioned Gaussian-state evolution.

Records are stored in scaled units, ``dM = <F_z^00> dt + dW / sqrt(kappa)``.
Each trajectory owns a Philox counter-based stream keyed by its seed;
standard normals come from the inverse normal CDF (``scipy.special.ndtri``)
applied to open-interval uniforms, so a record is replayable bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .dynamics import DeterministicPath, MomentEngine, MomentState, evolve_deterministic, paired_update
from .errors import DomainError, NumericalAbort

RNG_ALGORITHM = "philox4x64-10 + ndtri(inverse normal CDF) on (k+0.5)/2^53 uniforms"


class NormalStream:
    """Standard-normal draws from a Philox stream keyed by ``seed``."""

    def __init__(self, seed: int):
        if seed < 0:
            raise DomainError("seed must be non-negative")
        self.seed = int(seed)
        self._bits = np.random.Philox(key=self.seed)

    def uniform(self, n: int) -> np.ndarray:
        k = self._bits.random_raw(n) >> np.uint64(11)
        return (k.astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        return ndtri(self.uniform(n))


def trajectory_seed(base_seed: int, index: int) -> int:
    """Seed of trajectory ``index`` in a batch (counter derivation)."""
    return int(base_seed) * 1_000_003 + int(index)


def content_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class TrajectoryRecord:
    seed: int
    dt: float
    times: np.ndarray  # step start times
    dM: np.ndarray
    fz_mean: np.ndarray  # conditioned <F_z^00> at step start
    final: dict = field(default_factory=dict)
    config_hash: str = ""

    def __post_init__(self):
        if len(self.times) != len(self.dM):
            raise ValueError("times and dM must have equal length")

    @property
    def T(self) -> float:
        return len(self.dM) * self.dt


def _step_count(T, dt):
    if dt <= 0 or T < dt * (1 - 1e-12):
        raise DomainError("need dt > 0 and T >= dt")
    return int(round(T / dt))


def _run_means(initial: MomentState, engine: MomentEngine, path: DeterministicPath,
               streams: list[NormalStream], n_steps: int):
    """Euler-Maruyama on the means for all streams at once.

    The Itô pairing is structural: each ``dW`` column goes through
    :func:`dynamics.paired_update`, which emits the record sample and the
    state update together.
    """
    B = len(streams)
    dt = path.dt
    X = np.broadcast_to(initial.X.reshape(-1), (B, initial.n)).copy()
    dW = np.stack([s.normal(n_steps) for s in streams]) * np.sqrt(dt)  # (B, n)
    dM = np.empty((B, n_steps))
    fz = np.empty((B, n_steps + 1))
    for i in range(n_steps):
        fz[:, i] = np.einsum("bn,n->b", X, engine.h)
        X, dM[:, i] = paired_update(engine, path.N_path[i], X, path.gains[i], dW[:, i], dt)
        if not np.all(np.isfinite(X)):
            raise NumericalAbort("non-finite conditional means", diagnostics={"step": i},
                                 partial={"dM": dM[:, :i + 1]})
    fz[:, n_steps] = np.einsum("bn,n->b", X, engine.h)
    return dM, fz, X


def simulate_batch_from_path(initial: MomentState, engine: MomentEngine, path: DeterministicPath,
                             seeds, config_hash: str = "") -> list[TrajectoryRecord]:
    n_steps = len(path.t) - 1
    streams = [NormalStream(s) for s in seeds]
    dM, fz, X = _run_means(initial, engine, path, streams, n_steps)
    times = path.t[:-1]
    final = {"t": float(path.t[-1]), "fx": float(path.fx[-1]), "var_fz": float(path.var_fz[-1])}
    return [TrajectoryRecord(int(s), path.dt, times, dM[b], fz[b, :-1],
                             dict(final, fz=float(fz[b, -1])), config_hash)
            for b, s in enumerate(seeds)]


def simulate_record(initial: MomentState, engine: MomentEngine, T: float, dt: float, seed: int,
                    config_hash: str = "") -> TrajectoryRecord:
    """One conditioned trajectory with its paired record."""
    _step_count(T, dt)
    path = evolve_deterministic(initial, engine, T, dt, max_halvings=0)
    return simulate_batch_from_path(initial, engine, path, [seed], config_hash)[0]


@dataclass
class BatchResult:
    records: list
    path: DeterministicPath
    failures: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)

    def dM_matrix(self) -> np.ndarray:
        return np.stack([r.dM for r in self.records])


def batch_simulate(initial: MomentState, engine: MomentEngine, T: float, dt: float, n_traj: int,
                   base_seed: int, config_hash: str = "", chunk: int = 256) -> BatchResult:
    """``n_traj`` independent records sharing one deterministic covariance path.

    Seeds follow :func:`trajectory_seed`; output order is the seed order.
    A failing chunk is reported per seed without aborting the batch.
    """
    if n_traj < 1:
        raise DomainError("n_traj must be >= 1")
    _step_count(T, dt)
    path = evolve_deterministic(initial, engine, T, dt)
    seeds = [trajectory_seed(base_seed, i) for i in range(n_traj)]
    records, failures = [], {}
    for start in range(0, n_traj, chunk):
        part = seeds[start:start + chunk]
        try:
            records.extend(simulate_batch_from_path(initial, engine, path, part, config_hash))
        except NumericalAbort as exc:
            for s in part:
                failures[s] = str(exc)
    return BatchResult(records, path, failures, seeds)


# -- calibration records -------------------------------------------------

def empty_trap_records(kappa: float, T: float, dt: float, n_traj: int, base_seed: int) -> np.ndarray:
    """Pure shot-noise records ``dW / sqrt(kappa)`` (shape (n_traj, n_steps))."""
    if kappa <= 0:
        raise DomainError("kappa must be positive")
    n = _step_count(T, dt)
    return np.stack([NormalStream(trajectory_seed(base_seed, i)).normal(n) * np.sqrt(dt / kappa)
                     for i in range(n_traj)])


def thermal_variance(N2: float, f: float = 4) -> float:
    """``Var F_z^00`` of the maximally mixed state, ``N2 f(f+1)/3``."""
    return N2 * f * (f + 1) / 3


def thermal_records(N2: float, kappa: float, T: float, dt: float, n_traj: int, base_seed: int,
                    f: float = 4) -> np.ndarray:
    """Records for the maximally mixed state.

    The state is unchanged by pumping, so F_z^00 is a static Gaussian draw of
    variance :func:`thermal_variance`; the first normal of each stream sets it.
    """
    if kappa <= 0:
        raise DomainError("kappa must be positive")
    n = _step_count(T, dt)
    sd = np.sqrt(thermal_variance(N2, f))
    out = np.empty((n_traj, n))
    for i in range(n_traj):
        z = NormalStream(trajectory_seed(base_seed, i)).normal(n + 1)
        out[i] = sd * z[0] * dt + z[1:] * np.sqrt(dt / kappa)
    return out
