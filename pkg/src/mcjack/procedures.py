"""Prediction procedures: deterministic maps from a dataset to per-area
point predictions.

A procedure may contain arbitrary internal estimation and model-selection
steps; the only contract is determinism (same dataset in, same predictions
out).  The Monte-Carlo machinery evaluates a procedure on thousands of
synthetic datasets that share one design, so every procedure also exposes
``predict_many``, a vectorized path over columns of observations.  The
default ``predict_many`` falls back to looping over ``predict``; the
built-in procedures override it with algebraically equivalent batched
code (agreement is covered by tests).

Batched internals per design are cached on the procedure instance, keyed
by the dataset's design token, so instances are cheap to reuse but are
not safe to share across threads while a cache entry is being built.
The harness gives each worker its own call path over read-only data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, InsufficientData
from .estimation import eblup_all, gls_beta, prasad_rao_A, _solve_normal_equations
from .model import AreaDataset
from .selection import CandidateModel, chi_square_quantile, select_bic, dhm_test


class PredictionProcedure:
    """Base class; see the module docstring for the contract."""

    name: str = "procedure"

    def __init__(self):
        self._cache: dict = {}

    @property
    def info(self) -> dict:
        return {"name": self.name}

    def predict(self, data: AreaDataset) -> np.ndarray:
        raise NotImplementedError

    def predict_many(self, shape: AreaDataset, y_columns: np.ndarray) -> np.ndarray:
        """Predictions for every column of ``y_columns`` (shape m x K)."""
        y_columns = np.asarray(y_columns, dtype=float)
        out = np.empty_like(y_columns)
        for k in range(y_columns.shape[1]):
            out[:, k] = self.predict(shape.replace_y(y_columns[:, k]))
        return out

    def _prepared(self, shape: AreaDataset):
        tok = shape.design_token
        prep = self._cache.get(tok)
        if prep is None:
            prep = self._prepare(shape)
            self._cache[tok] = prep
        return prep

    def _prepare(self, shape: AreaDataset):  # pragma: no cover - overridden
        raise NotImplementedError


# ---------------------------------------------------------------------------
# shared batched building blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _GlsZeroMap:
    """Linear GLS map at A = 0 for one column subset: beta = B @ y."""

    X: np.ndarray
    B: np.ndarray

    @classmethod
    def build(cls, X: np.ndarray, D: np.ndarray) -> "_GlsZeroMap":
        Xw = X / D[:, None]
        G = Xw.T @ X
        B = _solve_normal_equations(G, Xw.T)
        return cls(X=X, B=B)


@dataclass(frozen=True)
class _MomentPrep:
    """Residual projector pieces for the batched moment estimator of A."""

    resid_proj: np.ndarray  # I - P with P the OLS projection onto X
    tr_qd: float
    df: int

    @classmethod
    def build(cls, X: np.ndarray, D: np.ndarray) -> "_MomentPrep":
        m, p = X.shape
        if m <= p:
            raise InsufficientData(f"need m > p, got m={m}, p={p}")
        Q, _ = np.linalg.qr(X)
        proj = np.eye(m) - Q @ Q.T
        leverage = np.einsum("ik,ik->i", Q, Q)
        return cls(resid_proj=proj, tr_qd=float(np.sum(D) - np.sum(D * leverage)), df=m - p)


def _batch_moment_a(prep: _MomentPrep, Y: np.ndarray) -> np.ndarray:
    """Truncated moment estimate of A for every column of Y."""
    R = prep.resid_proj @ Y
    rss = np.einsum("ik,ik->k", R, R)
    a = (rss - prep.tr_qd) / prep.df
    return np.maximum(a, 0.0, out=a)


def _batch_gls(X: np.ndarray, D: np.ndarray, a_vec: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """GLS coefficients column by column for per-column variances a_vec."""
    w = 1.0 / (a_vec[None, :] + D[:, None])  # (m, K)
    G = np.einsum("ip,ik,iq->kpq", X, w, X)
    c = np.einsum("ip,ik,ik->kp", X, w, Y)
    return np.linalg.solve(G, c[..., None])[..., 0]  # (K, p)


def _batch_eblup(
    X: np.ndarray, D: np.ndarray, a_vec: np.ndarray, beta: np.ndarray, Y: np.ndarray
) -> np.ndarray:
    shrink = a_vec[None, :] / (a_vec[None, :] + D[:, None])
    return shrink * Y + (1.0 - shrink) * (X @ beta.T)


# ---------------------------------------------------------------------------
# concrete procedures
# ---------------------------------------------------------------------------


class DirectEstimator(PredictionProcedure):
    """theta_hat_i = y_i."""

    name = "direct"

    def predict(self, data: AreaDataset) -> np.ndarray:
        return np.array(data.y)

    def predict_many(self, shape: AreaDataset, y_columns: np.ndarray) -> np.ndarray:
        return np.array(y_columns, dtype=float)


class SyntheticRegression(PredictionProcedure):
    """Regression-synthetic estimate x_i' beta_hat with GLS at A = 0."""

    name = "synthetic"

    def __init__(self, covariate_mask):
        super().__init__()
        self.model = CandidateModel(tuple(covariate_mask), include_random_effect=False)

    @property
    def info(self) -> dict:
        return {"name": self.name, "covariate_mask": self.model.covariate_mask}

    def predict(self, data: AreaDataset) -> np.ndarray:
        X = data.X_full[:, self.model.column_indices]
        return X @ gls_beta(X, data.D, 0.0, data.y)

    def _prepare(self, shape: AreaDataset) -> _GlsZeroMap:
        return _GlsZeroMap.build(shape.X_full[:, self.model.column_indices], shape.D)

    def predict_many(self, shape: AreaDataset, y_columns: np.ndarray) -> np.ndarray:
        g = self._prepared(shape)
        return g.X @ (g.B @ np.asarray(y_columns, dtype=float))


class PlainEblup(PredictionProcedure):
    """EBLUP with the moment estimate of A under a fixed mean model."""

    name = "eblup"

    def __init__(self, covariate_mask):
        super().__init__()
        self.model = CandidateModel(tuple(covariate_mask), include_random_effect=True)

    @property
    def info(self) -> dict:
        return {"name": self.name, "covariate_mask": self.model.covariate_mask}

    def predict(self, data: AreaDataset) -> np.ndarray:
        X = data.X_full[:, self.model.column_indices]
        a_hat = prasad_rao_A(X, data.D, data.y)
        beta = gls_beta(X, data.D, a_hat, data.y)
        shrink = a_hat / (a_hat + data.D)
        return shrink * data.y + (1.0 - shrink) * (X @ beta)

    def _prepare(self, shape: AreaDataset):
        X = shape.X_full[:, self.model.column_indices]
        return X, _MomentPrep.build(X, shape.D)

    def predict_many(self, shape: AreaDataset, y_columns: np.ndarray) -> np.ndarray:
        X, mom = self._prepared(shape)
        Y = np.asarray(y_columns, dtype=float)
        a = _batch_moment_a(mom, Y)
        beta = _batch_gls(X, shape.D, a, Y)
        return _batch_eblup(X, shape.D, a, beta, Y)


class BicThenEblup(PredictionProcedure):
    """BIC selection over a candidate list, then the EBLUP under the winner.

    Under a winner without random effects the prediction reduces to the
    regression-synthetic estimate.  The batched path covers candidate
    lists without random effects (selection scores become linear-map
    residual sums); lists with random-effect candidates fall back to the
    per-dataset path.
    """

    name = "bic_eblup"

    def __init__(self, candidates):
        super().__init__()
        if not candidates:
            raise DomainError("need at least one candidate model")
        self.candidates = list(candidates)

    @property
    def info(self) -> dict:
        return {
            "name": self.name,
            "candidates": [
                (c.covariate_mask, c.include_random_effect) for c in self.candidates
            ],
        }

    def predict(self, data: AreaDataset) -> np.ndarray:
        outcome = select_bic(self.candidates, data)
        return eblup_all(outcome.chosen_fit, data)

    def _prepare(self, shape: AreaDataset):
        if any(c.include_random_effect for c in self.candidates):
            return None  # no fast path
        order = sorted(range(len(self.candidates)),
                       key=lambda k: self.candidates[k].tie_break_key())
        maps = []
        penalties = []
        for k in order:
            cand = self.candidates[k]
            X = shape.X_full[:, cand.column_indices]
            maps.append(_GlsZeroMap.build(X, shape.D))
            penalties.append(cand.dim * np.log(shape.m))
        return maps, np.asarray(penalties)

    def predict_many(self, shape: AreaDataset, y_columns: np.ndarray) -> np.ndarray:
        prep = self._prepared(shape)
        if prep is None:
            return super().predict_many(shape, y_columns)
        maps, penalties = prep
        Y = np.asarray(y_columns, dtype=float)
        n_cand = len(maps)
        # BIC differences between A = 0 candidates reduce to weighted RSS
        # plus the dimension penalty; the shared likelihood constant drops.
        scores = np.empty((n_cand, Y.shape[1]))
        fitted = []
        inv_d = 1.0 / shape.D[:, None]
        for c, g in enumerate(maps):
            F = g.X @ (g.B @ Y)
            R = Y - F
            scores[c] = np.einsum("ik,ik->k", R * inv_d, R) + penalties[c]
            fitted.append(F)
        # rows are in tie-break order, so the first minimum is the winner
        sel = np.argmin(scores, axis=0)
        out = np.empty_like(Y)
        for c in range(n_cand):
            cols = sel == c
            if np.any(cols):
                out[:, cols] = fitted[c][:, cols]
        return out


class DhmThenPredict(PredictionProcedure):
    """Test for the random effect, then predict under the accepted branch.

    Reject: EBLUP with the moment estimate of A.  Accept: the
    regression-synthetic estimate.  The mean model is fixed.
    """

    name = "dhm"

    def __init__(self, covariate_mask, alpha: float = 0.05):
        super().__init__()
        if not 0.0 < alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
        self.model = CandidateModel(tuple(covariate_mask), include_random_effect=False)
        self.alpha = float(alpha)

    @property
    def info(self) -> dict:
        return {
            "name": self.name,
            "covariate_mask": self.model.covariate_mask,
            "alpha": self.alpha,
        }

    def predict(self, data: AreaDataset) -> np.ndarray:
        outcome = dhm_test(data, self.model, self.alpha)
        X = data.X_full[:, self.model.column_indices]
        beta0 = gls_beta(X, data.D, 0.0, data.y)
        if not outcome.rejected:
            return X @ beta0
        a_hat = prasad_rao_A(X, data.D, data.y)
        beta = gls_beta(X, data.D, a_hat, data.y)
        shrink = a_hat / (a_hat + data.D)
        return shrink * data.y + (1.0 - shrink) * (X @ beta)

    def _prepare(self, shape: AreaDataset):
        X = shape.X_full[:, self.model.column_indices]
        mom = _MomentPrep.build(X, shape.D)
        crit = chi_square_quantile(mom.df, 1.0 - self.alpha)
        return X, _GlsZeroMap.build(X, shape.D), mom, crit

    def predict_many(self, shape: AreaDataset, y_columns: np.ndarray) -> np.ndarray:
        X, g, mom, crit = self._prepared(shape)
        Y = np.asarray(y_columns, dtype=float)
        beta0 = g.B @ Y
        fitted0 = X @ beta0
        R = Y - fitted0
        t = np.einsum("ik,ik->k", R / shape.D[:, None], R)
        out = np.array(fitted0)
        rej = np.flatnonzero(t > crit)
        if rej.size:
            Yr = Y[:, rej]
            a = _batch_moment_a(mom, Yr)
            beta = _batch_gls(X, shape.D, a, Yr)
            out[:, rej] = _batch_eblup(X, shape.D, a, beta, Yr)
        return out


class CustomProcedure(PredictionProcedure):
    """Adapter for a user-supplied deterministic prediction function."""

    def __init__(self, name: str, fn: Callable[[AreaDataset], np.ndarray]):
        super().__init__()
        self.name = str(name)
        self._fn = fn

    def predict(self, data: AreaDataset) -> np.ndarray:
        return np.asarray(self._fn(data), dtype=float)


PROCEDURE_KINDS = ("direct", "synthetic", "eblup", "bic_eblup", "dhm")


def make_procedure(kind: str, **params) -> PredictionProcedure:
    """Factory over the shipped procedure registry."""
    if kind == "direct":
        return DirectEstimator()
    if kind == "synthetic":
        return SyntheticRegression(params["covariate_mask"])
    if kind == "eblup":
        return PlainEblup(params["covariate_mask"])
    if kind == "bic_eblup":
        return BicThenEblup(params["candidates"])
    if kind == "dhm":
        return DhmThenPredict(params["covariate_mask"], params.get("alpha", 0.05))
    raise DomainError(f"unknown procedure kind {kind!r}; known: {PROCEDURE_KINDS}")
