"""Frequentist machinery for the area-level model.

Covers generalized least squares for the regression coefficients, the
moment (Prasad-Rao) estimator of the random-effect variance, profile
maximum likelihood, the shrinkage predictor (EBLUP), and the analytic
MSPE approximations used by the naive and test-based reference
uncertainty estimators.

All solves go through a Cholesky factorization of the weighted normal
equations with a condition-number guard; the designs here are small and
dense, so stability is preferred over speed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar

from .errors import DegenerateFit, DomainError, InsufficientData, SingularDesign
from .model import COND_LIMIT, AreaDataset

if TYPE_CHECKING:  # pragma: no cover
    from .selection import CandidateModel

# Relative weighted-RSS threshold below which data count as an exact fit.
_DEGENERATE_RSS_RTOL = 1e-10


class FitMethod(enum.Enum):
    PROFILE_ML = "profile_ml"
    PRASAD_RAO = "prasad_rao"
    FIXED_ZERO = "fixed_zero"


@dataclass(frozen=True)
class ModelFit:
    """A fitted candidate model: coefficients, variance, and log-likelihood."""

    model: "CandidateModel"
    beta: np.ndarray
    A_hat: float
    loglik: float
    method: FitMethod

    def __post_init__(self):
        if self.A_hat < 0.0:
            raise DomainError(f"A_hat must be >= 0, got {self.A_hat}")
        if not math.isfinite(self.loglik):
            raise DomainError("loglik must be finite")


def _solve_normal_equations(G: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve G x = rhs for symmetric positive-definite G with a cond guard."""
    try:
        cf = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularDesign(f"normal equations not positive definite: {exc}") from exc
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= 0.0 or ev[-1] / ev[0] > COND_LIMIT:
        raise SingularDesign(
            f"normal equations condition number {ev[-1] / max(ev[0], 1e-300):.3g} "
            f"exceeds {COND_LIMIT:.0e}"
        )
    return scipy.linalg.cho_solve(cf, rhs, check_finite=False)


def gls_beta(X: np.ndarray, D: np.ndarray, A: float, y: np.ndarray) -> np.ndarray:
    """Generalized least squares coefficients with weights 1/(A + D_i)."""
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    if A < 0.0:
        raise DomainError(f"A must be >= 0, got {A}")
    w = 1.0 / (A + D)
    Xw = X * w[:, None]
    G = Xw.T @ X
    rhs = Xw.T @ y
    return _solve_normal_equations(G, rhs)


def prasad_rao_A(X: np.ndarray, D: np.ndarray, y: np.ndarray) -> float:
    """Moment estimator of the random-effect variance, truncated at zero.

    A_hat = max{0, [y'(I - P)y - tr((I - P) diag(D))] / (m - p)} with P the
    ordinary (unweighted) projection onto the columns of X.
    """
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    m, p = X.shape
    if m <= p:
        raise InsufficientData(f"need m > p, got m={m}, p={p}")
    Q, R = np.linalg.qr(X)
    rdiag = np.abs(np.diag(R))
    if rdiag.min() <= rdiag.max() / COND_LIMIT:
        raise SingularDesign("X is not of full column rank")
    resid = y - Q @ (Q.T @ y)
    rss = float(resid @ resid)
    leverage = np.einsum("ik,ik->i", Q, Q)
    tr_qd = float(np.sum(D) - np.sum(D * leverage))
    return max(0.0, (rss - tr_qd) / (m - p))


def profile_loglik(A: float, X: np.ndarray, D: np.ndarray, y: np.ndarray) -> float:
    """Profile log-likelihood in A (beta profiled out by GLS), full constants."""
    if A < 0.0:
        raise DomainError(f"A must be >= 0, got {A}")
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    m = y.shape[0]
    beta = gls_beta(X, D, A, y)
    v = A + D
    r = y - X @ beta
    return float(-0.5 * (m * math.log(2.0 * math.pi) + np.sum(np.log(v)) + np.sum(r * r / v)))


def _weighted_rss0(X: np.ndarray, D: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Weighted residual sum of squares at A = 0 and its natural scale."""
    beta0 = gls_beta(X, D, 0.0, y)
    r = y - X @ beta0
    return float(np.sum(r * r / D)), float(max(1.0, np.sum(y * y / D)))


def fit_ml(model: "CandidateModel", data: AreaDataset) -> ModelFit:
    """Fit one candidate model by maximum likelihood.

    Without random effects the variance is pinned at zero and only the GLS
    step runs.  With random effects the profile likelihood is maximized
    over [0, A_max] by bounded scalar search (A tolerance 1e-8); the
    boundary A = 0 is an admissible solution.  Data that the mean model
    fits exactly are rejected with :class:`DegenerateFit`.
    """
    X = data.X_full[:, model.column_indices]
    D = data.D
    y = data.y

    rss0, scale = _weighted_rss0(X, D, y)
    if rss0 <= _DEGENERATE_RSS_RTOL * scale:
        raise DegenerateFit(
            "mean model reproduces the data exactly; likelihood fit is degenerate"
        )

    if not model.include_random_effect:
        ll = profile_loglik(0.0, X, D, y)
        return ModelFit(
            model=model,
            beta=gls_beta(X, D, 0.0, y),
            A_hat=0.0,
            loglik=ll,
            method=FitMethod.FIXED_ZERO,
        )

    a_max = max(1.0, 10.0 * float(np.var(y)))
    res = minimize_scalar(
        lambda a: -profile_loglik(a, X, D, y),
        bounds=(0.0, a_max),
        method="bounded",
        options={"xatol": 1e-8},
    )
    # The bounded search never lands exactly on the boundary; admit it by hand.
    candidates = [0.0, float(res.x)]
    lls = [profile_loglik(a, X, D, y) for a in candidates]
    best = int(np.argmax(lls))
    a_hat = candidates[best]
    return ModelFit(
        model=model,
        beta=gls_beta(X, D, a_hat, y),
        A_hat=a_hat,
        loglik=lls[best],
        method=FitMethod.PROFILE_ML,
    )


def eblup(fit: ModelFit, data: AreaDataset, i: int) -> float:
    """Shrinkage predictor for area i under a fitted model."""
    if not 0 <= i < data.m:
        raise DomainError(f"area index {i} out of range for m={data.m}")
    return float(eblup_all(fit, data)[i])


def eblup_all(fit: ModelFit, data: AreaDataset) -> np.ndarray:
    """Shrinkage predictor for every area.

    theta_hat_i = w_i y_i + (1 - w_i) x_i' beta_hat with w_i = A_hat/(A_hat + D_i);
    at A_hat = 0 this is exactly the regression-synthetic estimate.
    """
    X = data.X_full[:, fit.model.column_indices]
    w = fit.A_hat / (fit.A_hat + data.D)
    return w * data.y + (1.0 - w) * (X @ fit.beta)


def analytic_mspe_A0(X: np.ndarray, D: np.ndarray, i: int) -> float:
    """Prediction variance of the A = 0 regression estimate for area i."""
    return float(analytic_mspe_A0_all(X, D)[i])


def analytic_mspe_A0_all(X: np.ndarray, D: np.ndarray) -> np.ndarray:
    """x_i'(X' diag(D)^-1 X)^-1 x_i for all areas (valid when A = 0)."""
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    Xw = X / D[:, None]
    G = Xw.T @ X
    V = _solve_normal_equations(G, X.T)
    return np.einsum("ip,pi->i", X, V)


def pr_mspe(A_hat: float, X: np.ndarray, D: np.ndarray, i: int) -> float:
    """Second-order MSPE approximation for the EBLUP at area i."""
    return float(pr_mspe_all(A_hat, X, D)[i])


def pr_mspe_all(A_hat: float, X: np.ndarray, D: np.ndarray) -> np.ndarray:
    """g1 + g2 + 2*g3 for every area, for the moment estimator of A.

    g1 = A D_i / (A + D_i)
    g2 = (D_i/(A+D_i))^2 x_i' {sum_j (A+D_j)^-1 x_j x_j'}^-1 x_i
    g3 = D_i^2 (A+D_i)^-3 (2/m^2) sum_j (A+D_j)^2
    """
    if A_hat < 0.0:
        raise DomainError(f"A_hat must be >= 0, got {A_hat}")
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    m = D.shape[0]
    v = A_hat + D
    g1 = A_hat * D / v
    Xw = X / v[:, None]
    G = Xw.T @ X
    V = _solve_normal_equations(G, X.T)
    g2 = (D / v) ** 2 * np.einsum("ip,pi->i", X, V)
    g3 = D**2 / v**3 * (2.0 / m**2) * float(np.sum(v**2))
    return g1 + g2 + 2.0 * g3


@dataclass(frozen=True)
class DhmUncertainty:
    """Per-area MSPE values from the test-then-estimate strategy."""

    values: np.ndarray
    rejected: bool
    t_stat: float
    critical_value: float
    alpha: float


def dhm_uncertainty(data: AreaDataset, model: "CandidateModel", alpha: float) -> DhmUncertainty:
    """MSPE per area after testing for the presence of random effects.

    If the test rejects A = 0, the EBLUP is the predictor and the values
    are the second-order MSPE approximation at the moment estimate of A;
    otherwise the regression-synthetic estimate is the predictor and the
    values are its analytic prediction variance.
    """
    from .selection import dhm_test  # local import to avoid a module cycle

    outcome = dhm_test(data, model, alpha)
    X = data.X_full[:, model.column_indices]
    if outcome.rejected:
        a_hat = prasad_rao_A(X, data.D, data.y)
        values = pr_mspe_all(a_hat, X, data.D)
    else:
        values = analytic_mspe_A0_all(X, data.D)
    return DhmUncertainty(
        values=values,
        rejected=outcome.rejected,
        t_stat=outcome.t_stat,
        critical_value=outcome.critical_value,
        alpha=alpha,
    )
