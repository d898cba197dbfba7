"""Nuisance fits: interacted outcome regression (OLS) and propensity (IRLS logistic)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.special import expit

from .core import (
    ConvergenceError,
    DegenerateArmError,
    ObservationSet,
    SeparationError,
    SingularDesignError,
    ValidationError,
)

_RANK_TOL = 1e-10          # singular values below tol * largest are treated as zero
_IRLS_TOL = 1e-10          # max coefficient change at convergence
_IRLS_MAX_ITER = 100
_SEPARATION_BOUND = 30.0   # |coef| beyond this is read as (quasi-)separation
_PROB_FLOOR = 1e-15        # keeps predicted probabilities strictly inside (0, 1)


def design_labels(p: int) -> list[str]:
    return ["intercept", "t"] + [f"w{j + 1}" for j in range(p)] + [f"t:w{j + 1}" for j in range(p)]


def _collinear_columns(x: np.ndarray, labels: list[str]) -> list[str]:
    """Columns that lie in the span of the others (hence removable)."""
    sv = np.linalg.svd(x, compute_uv=False)
    tol = _RANK_TOL * (sv[0] if sv.size else 1.0)
    rank = int(np.sum(sv > tol))
    out = []
    for j in range(x.shape[1]):
        reduced = np.delete(x, j, axis=1)
        if np.linalg.matrix_rank(reduced, tol=tol) == rank:
            out.append(labels[j])
    return out


def _as_rows(w, p: int) -> np.ndarray:
    """Normalize covariate input to an (n, p) matrix."""
    arr = np.asarray(w, dtype=float)
    if arr.ndim == 0:
        if p == 1:
            return arr.reshape(1, 1)
        if p == 0:
            return arr.reshape(1, 0)[:, :0]
        raise ValidationError(f"scalar covariate given but model expects {p} covariates")
    if arr.ndim == 1:
        if arr.shape[0] == p:
            return arr.reshape(1, p)
        if p == 1:
            return arr.reshape(-1, 1)
        raise ValidationError(f"covariate vector of length {arr.shape[0]} does not match p={p}")
    if arr.ndim == 2:
        if arr.shape[1] != p:
            raise ValidationError(f"covariate matrix has {arr.shape[1]} columns, expected {p}")
        return arr
    raise ValidationError(f"covariates must be at most 2-d, got shape {arr.shape}")


def _linear_predict(beta0, beta_t, beta_w, beta_interact, w_mean, t, w):
    p = w_mean.shape[0]
    scalar = np.ndim(t) == 0 and np.ndim(w) <= 1
    rows = _as_rows(w, p)
    tv = np.atleast_1d(np.asarray(t, dtype=float))
    m = max(rows.shape[0], tv.shape[0])
    if tv.shape[0] == 1 and m > 1:
        tv = np.full(m, tv[0])
    if rows.shape[0] == 1 and m > 1:
        rows = np.broadcast_to(rows, (m, p))
    if tv.shape[0] != rows.shape[0]:
        raise ValidationError(
            f"t has {tv.shape[0]} entries but w has {rows.shape[0]} rows"
        )
    wc = rows - w_mean
    out = beta0 + tv * beta_t + wc @ beta_w + tv * (wc @ beta_interact)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class RegressionFit:
    """OLS fit of y on [1, t, demeaned w, t x demeaned w].

    Stores everything the downstream variance formulas need: the demeaning
    center, the treated fraction t_bar, the mean of t times demeaned w, and
    the training residuals.
    """

    beta0: float
    beta_t: float
    beta_w: np.ndarray
    beta_interact: np.ndarray
    w_mean: np.ndarray
    t_bar: float
    tw_bar: np.ndarray
    residuals: np.ndarray

    @property
    def p(self) -> int:
        return self.w_mean.shape[0]

    @property
    def design_dim(self) -> int:
        return 2 + 2 * self.p

    def predict(self, t, w):
        """Evaluate m(t, w); accepts scalars, vectors or row-aligned arrays."""
        return _linear_predict(
            self.beta0, self.beta_t, self.beta_w, self.beta_interact, self.w_mean, t, w
        )


class OutcomeModel(Protocol):
    """Anything that can evaluate E[Y | T=t, W=w]."""

    def predict(self, t, w): ...


def interacted_design(t: np.ndarray, w_centered: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((t.shape[0], 1)), t[:, None], w_centered, t[:, None] * w_centered])


def fit_ols_interacted(data: ObservationSet) -> RegressionFit:
    """Least squares for the fully interacted, covariate-demeaned design.

    Solved by SVD (np.linalg.lstsq); rank deficiency raises
    SingularDesignError naming the collinear columns, and a single-arm
    sample raises DegenerateArmError.
    """
    t, y, w = data.t, data.y, data.w
    if np.all(t == t[0] if t.size else True):
        raise DegenerateArmError(
            f"cannot fit the outcome regression: every unit has t={t[0]:.0f}"
            if t.size else "cannot fit the outcome regression: empty sample"
        )
    p = data.p
    d = 2 + 2 * p
    if data.n <= d:
        raise ValidationError(f"need n > {d} rows to fit {d} coefficients, got n={data.n}")
    w_mean = w.mean(axis=0)
    wc = w - w_mean
    x = interacted_design(t, wc)
    beta, _, rank, _ = np.linalg.lstsq(x, y, rcond=_RANK_TOL)
    if rank < d:
        cols = _collinear_columns(x, design_labels(p))
        raise SingularDesignError(f"singular design matrix; collinear columns: {', '.join(cols)}")
    beta0, beta_t = float(beta[0]), float(beta[1])
    beta_w = beta[2 : 2 + p].copy()
    beta_interact = beta[2 + p :].copy()
    # residuals go through the same path as predict(), so recomputing
    # y - predict(t, w) on the training rows reproduces them bit for bit
    pred = _linear_predict(beta0, beta_t, beta_w, beta_interact, w_mean, t, w)
    return RegressionFit(
        beta0=beta0,
        beta_t=beta_t,
        beta_w=beta_w,
        beta_interact=beta_interact,
        w_mean=w_mean,
        t_bar=float(t.mean()),
        tw_bar=(t[:, None] * wc).mean(axis=0),
        residuals=y - pred,
    )


@dataclass(frozen=True)
class PropensityModel:
    """Logistic model for Pr(T=1 | W=w)."""

    intercept: float
    coef: np.ndarray

    @property
    def p(self) -> int:
        return self.coef.shape[0]

    def predict_proba(self, w):
        """Predicted treatment probabilities, strictly inside (0, 1)."""
        rows = _as_rows(w, self.p)
        probs = expit(self.intercept + rows @ self.coef)
        probs = np.clip(probs, _PROB_FLOOR, 1.0 - _PROB_FLOOR)
        if rows.shape[0] == 1 and np.ndim(w) <= 1:
            return float(probs[0])
        return probs


def _irls(
    x: np.ndarray,
    t: np.ndarray,
    labels: list[str],
    start: np.ndarray | None = None,
    tol: float = _IRLS_TOL,
    max_iter: int = _IRLS_MAX_ITER,
) -> np.ndarray:
    beta = np.zeros(x.shape[1]) if start is None else start.astype(float).copy()
    steps: list[float] = []
    for _ in range(max_iter):
        probs = expit(x @ beta)
        weights = probs * (1.0 - probs)
        hess = (x * weights[:, None]).T @ x
        grad = x.T @ (t - probs)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            if np.max(np.abs(beta)) > _SEPARATION_BOUND / 2:
                raise SeparationError(
                    "logistic fit diverged (singular weighted Hessian at large coefficients); "
                    "the treatment arms appear separated"
                ) from None
            cols = _collinear_columns(x, labels)
            raise SingularDesignError(
                f"singular logistic design; collinear columns: {', '.join(cols)}"
            ) from None
        beta += step
        steps.append(float(np.max(np.abs(step))))
        if np.max(np.abs(beta)) > _SEPARATION_BOUND:
            raise SeparationError(
                f"logistic coefficients exceeded {_SEPARATION_BOUND:g} in magnitude; "
                "the treatment arms appear (quasi-)separated"
            )
        if steps[-1] < tol:
            return beta
    trace = ", ".join(f"{s:.3g}" for s in steps[-5:])
    raise ConvergenceError(
        f"IRLS did not converge in {max_iter} iterations; last step sizes: {trace}"
    )


def fit_logistic(data: ObservationSet, start: np.ndarray | None = None) -> PropensityModel:
    """Maximum-likelihood logistic regression of t on [1, w] via IRLS.

    Converges when the largest coefficient change drops below 1e-10 (at most
    100 iterations). No ridge is applied: separation raises SeparationError
    rather than being silently regularized away.
    """
    t, w = data.t, data.w
    if t.size == 0 or np.all(t == t[0]):
        raise DegenerateArmError(
            "cannot fit the propensity model: both treatment arms must be present"
        )
    x = np.hstack([np.ones((data.n, 1)), w])
    labels = ["intercept"] + [f"w{j + 1}" for j in range(data.p)]
    beta = _irls(x, t, labels, start=start)
    return PropensityModel(intercept=float(beta[0]), coef=beta[1:].copy())


def predict_outcome(fit: OutcomeModel, t, w):
    """Evaluate a fitted outcome model at (t, w)."""
    return fit.predict(t, w)
