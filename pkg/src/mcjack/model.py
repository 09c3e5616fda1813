"""Domain types for the area-level variance model and its parametric simulator.

The observation model for ``m`` areas is

    y_i = x_i' beta + sqrt(A) xi_i + sqrt(D_i) eta_i,

where the sampling variances ``D_i > 0`` are known, ``A >= 0`` is the
random-effect variance, and ``xi_i``, ``eta_i`` are independent standard
normals.  ``Psi`` bundles the full-model parameters ``(beta, A)``.

Every type here is immutable after construction and every operation is a
pure function of its inputs, so values can be shared freely across threads.

Randomness policy: standard-normal draws are generated once, stored in a
:class:`StandardDraws` value, and reused for every parameter vector that is
evaluated against them (common random numbers).  The generator is numpy's
Philox counter-based bit stream; named substreams are derived with
``SeedSequence(master, spawn_key=...)`` so any parallel schedule sees the
same numbers.  Normals come from ``Generator.standard_normal`` (ziggurat),
which is reproducible bit-for-bit for a fixed numpy build.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularDesign, StructuralError

# Condition-number ceiling for "full column rank" checks.
COND_LIMIT = 1e12


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AreaDataset:
    """Observed data for ``m`` areas: direct estimates, covariates, variances.

    ``X_full`` holds one row per area with the complete set of candidate
    covariates; model-selection code works with column subsets of it.
    """

    area_ids: tuple
    y: np.ndarray
    X_full: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "area_ids", tuple(self.area_ids))
        object.__setattr__(self, "y", _readonly(np.atleast_1d(self.y)))
        object.__setattr__(self, "X_full", _readonly(np.atleast_2d(self.X_full)))
        object.__setattr__(self, "D", _readonly(np.atleast_1d(self.D)))
        m = self.y.shape[0]
        if self.X_full.shape[0] != m or self.D.shape[0] != m or len(self.area_ids) != m:
            raise StructuralError(
                f"inconsistent sizes: y has {m} areas, X has {self.X_full.shape[0]}, "
                f"D has {self.D.shape[0]}, ids has {len(self.area_ids)}"
            )
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.X_full)):
            raise StructuralError("y and X_full must be finite")
        if not np.all(np.isfinite(self.D)) or np.any(self.D <= 0.0):
            raise StructuralError("sampling variances D must be finite and > 0")
        p = self.X_full.shape[1]
        if p > m:
            raise SingularDesign(f"more covariates ({p}) than areas ({m})")
        s = np.linalg.svd(self.X_full, compute_uv=False)
        if s[0] == 0.0 or s[-1] <= s[0] / COND_LIMIT:
            raise SingularDesign("X_full is not of full column rank")

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def p_full(self) -> int:
        return self.X_full.shape[1]

    def drop(self, j: int) -> "AreaDataset":
        """Dataset with area ``j`` removed (delete-j building block)."""
        if not 0 <= j < self.m:
            raise StructuralError(f"area index {j} out of range for m={self.m}")
        keep = [i for i in range(self.m) if i != j]
        return AreaDataset(
            area_ids=tuple(self.area_ids[i] for i in keep),
            y=self.y[keep],
            X_full=self.X_full[keep],
            D=self.D[keep],
        )

    def replace_y(self, y: np.ndarray) -> "AreaDataset":
        """Same design, different observations (used on simulated data)."""
        return AreaDataset(self.area_ids, y, self.X_full, self.D)

    @property
    def design_token(self) -> bytes:
        """Hash of (m, X_full, D); keys per-design caches in the procedures."""
        try:
            return object.__getattribute__(self, "_design_token")
        except AttributeError:
            h = hashlib.blake2b(digest_size=16)
            h.update(np.int64(self.m).tobytes())
            h.update(np.ascontiguousarray(self.X_full).tobytes())
            h.update(np.ascontiguousarray(self.D).tobytes())
            tok = h.digest()
            object.__setattr__(self, "_design_token", tok)
            return tok


@dataclass(frozen=True)
class Psi:
    """Full-model parameter vector: regression coefficients and variance A."""

    beta_f: np.ndarray
    A: float

    def __post_init__(self):
        object.__setattr__(self, "beta_f", _readonly(np.atleast_1d(self.beta_f)))
        object.__setattr__(self, "A", float(self.A))
        if not np.isfinite(self.A) or self.A < 0.0:
            raise DomainError(f"variance A must be finite and >= 0, got {self.A}")
        if not np.all(np.isfinite(self.beta_f)):
            raise DomainError("beta_f must be finite")

    @property
    def p(self) -> int:
        return self.beta_f.shape[0]


@dataclass(frozen=True)
class StandardDraws:
    """K x m matrices of stored N(0,1) draws plus the seed that made them.

    ``xi`` feeds the area random effects, ``eta`` the sampling errors.
    Regeneration from ``seed`` is bit-identical.
    """

    xi: np.ndarray
    eta: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "xi", _readonly(self.xi))
        object.__setattr__(self, "eta", _readonly(self.eta))
        object.__setattr__(self, "seed", int(self.seed))
        if self.xi.ndim != 2 or self.xi.shape != self.eta.shape:
            raise StructuralError("xi and eta must be matrices of identical shape")

    @property
    def K(self) -> int:
        return self.xi.shape[0]

    @property
    def m(self) -> int:
        return self.xi.shape[1]


@dataclass(frozen=True)
class SimulatedPair:
    """One synthetic draw: true area means and the matching observations."""

    theta: np.ndarray
    y_sim: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _readonly(self.theta))
        object.__setattr__(self, "y_sim", _readonly(self.y_sim))
        if self.theta.shape != self.y_sim.shape:
            raise StructuralError("theta and y_sim must have equal length")


def substream_seed(master_seed: int, *path: int) -> int:
    """64-bit seed for a named substream of ``master_seed``.

    Derivation is ``SeedSequence(master, spawn_key=path)``, so streams for
    different paths are independent and the mapping is stable across runs
    and process/thread layouts.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(q) for q in path))
    return int(ss.generate_state(1, np.uint64)[0])


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def draw_standard(seed: int, K: int, m: int) -> StandardDraws:
    """Draw and store the K x m standard-normal matrices for xi and eta."""
    if K < 1 or m < 1:
        raise DomainError(f"need K >= 1 and m >= 1, got K={K}, m={m}")
    gen = _generator(seed)
    xi = gen.standard_normal((K, m))
    eta = gen.standard_normal((K, m))
    return StandardDraws(xi=xi, eta=eta, seed=seed)


def simulate_pair(
    psi: Psi, data_shape: AreaDataset, xi_row: np.ndarray, eta_row: np.ndarray
) -> SimulatedPair:
    """One synthetic (theta, y) pair from ``psi`` and pre-drawn normals.

    theta_i = x_i' beta + sqrt(A) xi_i  and  y_i = theta_i + sqrt(D_i) eta_i.
    Pure: all randomness enters through ``xi_row`` and ``eta_row``.
    """
    xi_row = np.asarray(xi_row, dtype=float)
    eta_row = np.asarray(eta_row, dtype=float)
    m = data_shape.m
    if xi_row.shape != (m,) or eta_row.shape != (m,):
        raise StructuralError(
            f"xi/eta rows must have length m={m}, got {xi_row.shape} and {eta_row.shape}"
        )
    if psi.p != data_shape.p_full:
        raise StructuralError(
            f"beta_f has {psi.p} entries but the design has {data_shape.p_full} columns"
        )
    theta = data_shape.X_full @ psi.beta_f + np.sqrt(psi.A) * xi_row
    y_sim = theta + np.sqrt(data_shape.D) * eta_row
    return SimulatedPair(theta=theta, y_sim=y_sim)


def simulate_columns(
    psi: Psi, data_shape: AreaDataset, draws: StandardDraws
) -> tuple[np.ndarray, np.ndarray]:
    """All K synthetic pairs at once, as m x K columns (Theta, Y).

    Column k equals ``simulate_pair(psi, data_shape, draws.xi[k], draws.eta[k])``.
    """
    if draws.m != data_shape.m:
        raise StructuralError(
            f"draws are for m={draws.m} areas, dataset has m={data_shape.m}"
        )
    if psi.p != data_shape.p_full:
        raise StructuralError(
            f"beta_f has {psi.p} entries but the design has {data_shape.p_full} columns"
        )
    mean = data_shape.X_full @ psi.beta_f
    theta = mean[:, None] + np.sqrt(psi.A) * draws.xi.T
    y = theta + np.sqrt(data_shape.D)[:, None] * draws.eta.T
    return theta, y
