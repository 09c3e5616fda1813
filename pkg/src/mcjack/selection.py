"""Model selection applied before prediction.

Two procedures are provided: BIC minimization over an explicit candidate
list (covariate subsets crossed with inclusion of the area random
effect), and a chi-square test for the presence of the random effect.
Both are deterministic; BIC ties are broken by model content, never by
list position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.special

from .errors import DomainError, InsufficientData, NoViableModel, SingularDesign
from .estimation import ModelFit, fit_ml, gls_beta
from .model import AreaDataset


@dataclass(frozen=True)
class CandidateModel:
    """A mean structure (mask over the full covariate set) plus an on/off
    flag for the area random effect."""

    covariate_mask: tuple
    include_random_effect: bool

    def __post_init__(self):
        mask = tuple(bool(b) for b in self.covariate_mask)
        object.__setattr__(self, "covariate_mask", mask)
        object.__setattr__(self, "include_random_effect", bool(self.include_random_effect))
        if self.dim < 1:
            raise DomainError("candidate model must have at least one free parameter")

    @property
    def dim(self) -> int:
        """Number of free parameters: selected covariates + 1 if the random
        effect is included."""
        return sum(self.covariate_mask) + (1 if self.include_random_effect else 0)

    @property
    def column_indices(self) -> tuple:
        return tuple(i for i, b in enumerate(self.covariate_mask) if b)

    def tie_break_key(self):
        """Frozen deterministic ordering: smaller dim, then lexicographically
        smaller mask, then the no-random-effect variant."""
        return (self.dim, tuple(int(b) for b in self.covariate_mask), self.include_random_effect)


def enumerate_candidates(
    p_full: int, intercept_col: int = 0, random_effect_options: tuple = (False, True)
) -> list:
    """All covariate subsets containing the intercept column, crossed with
    the requested random-effect options, in tie-break order."""
    if not 0 <= intercept_col < p_full:
        raise DomainError(f"intercept column {intercept_col} out of range for p={p_full}")
    free = [c for c in range(p_full) if c != intercept_col]
    out = []
    for bits in range(1 << len(free)):
        mask = [False] * p_full
        mask[intercept_col] = True
        for k, c in enumerate(free):
            if bits >> k & 1:
                mask[c] = True
        for re_flag in random_effect_options:
            out.append(CandidateModel(tuple(mask), re_flag))
    out.sort(key=CandidateModel.tie_break_key)
    return out


@dataclass(frozen=True)
class SelectionOutcome:
    """Result of a selection procedure.

    For BIC, ``scores`` lists (model, BIC) pairs in the caller's candidate
    order and ``chosen_fit`` is the fit of the winner.  For the variance
    test, ``t_stat``/``critical_value``/``alpha`` are populated and
    ``chosen`` is the mean model with the random effect switched on iff
    the test rejected.
    """

    chosen: CandidateModel
    procedure_tag: str
    scores: tuple = ()
    chosen_fit: ModelFit | None = None
    t_stat: float = float("nan")
    critical_value: float = float("nan")
    alpha: float = float("nan")
    rejected: bool | None = None
    skipped: tuple = field(default_factory=tuple)


def bic_score(fit: ModelFit, m: int) -> float:
    """-2 * loglik + dim * log(m), natural log, full likelihood constants."""
    return -2.0 * fit.loglik + fit.model.dim * float(np.log(m))


def select_bic(candidates: list, data: AreaDataset) -> SelectionOutcome:
    """Fit every candidate by ML and return the BIC minimizer.

    Candidates whose design is singular are skipped (and reported); if all
    fail, :class:`NoViableModel` is raised.  The winner is the minimum of
    (BIC, tie_break_key), so the outcome does not depend on list order.
    """
    if not candidates:
        raise NoViableModel("empty candidate list")
    scores = []
    skipped = []
    best = None  # (bic, tie_key, model, fit)
    for model in candidates:
        try:
            fit = fit_ml(model, data)
        except SingularDesign:
            skipped.append(model)
            continue
        bic = bic_score(fit, data.m)
        scores.append((model, bic))
        key = (bic, model.tie_break_key())
        if best is None or key < best[0]:
            best = (key, model, fit)
    if best is None:
        raise NoViableModel(f"all {len(candidates)} candidate designs are singular")
    return SelectionOutcome(
        chosen=best[1],
        procedure_tag="bic",
        scores=tuple(scores),
        chosen_fit=best[2],
        skipped=tuple(skipped),
    )


def chi_square_quantile(df: int, prob: float) -> float:
    """Chi-square inverse CDF via regularized incomplete-gamma inversion."""
    if df < 1:
        raise DomainError(f"df must be >= 1, got {df}")
    if not 0.0 < prob < 1.0:
        raise DomainError(f"prob must lie in (0, 1), got {prob}")
    return float(2.0 * scipy.special.gammaincinv(0.5 * df, prob))


def dhm_test(data: AreaDataset, mean_model: CandidateModel, alpha: float) -> SelectionOutcome:
    """Chi-square test for the presence of the area random effect.

    With beta estimated by GLS at A = 0, T = sum_i (y_i - x_i' beta)^2 / D_i
    is chi-square with m - p degrees of freedom under A = 0.  Rejects iff
    T strictly exceeds the upper-alpha critical value (accept on ties).
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    X = data.X_full[:, mean_model.column_indices]
    m, p = X.shape
    if m <= p:
        raise InsufficientData(f"need m > p for the variance test, got m={m}, p={p}")
    beta0 = gls_beta(X, data.D, 0.0, data.y)
    r = data.y - X @ beta0
    t_stat = float(np.sum(r * r / data.D))
    crit = chi_square_quantile(m - p, 1.0 - alpha)
    rejected = t_stat > crit
    chosen = CandidateModel(mean_model.covariate_mask, include_random_effect=rejected)
    return SelectionOutcome(
        chosen=chosen,
        procedure_tag="dhm_test",
        t_stat=t_stat,
        critical_value=crit,
        alpha=float(alpha),
        rejected=rejected,
    )
