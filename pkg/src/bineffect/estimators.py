"""Point estimates and standard errors: regression, IPW, AIPW and TMLE."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from scipy.linalg import block_diag
from scipy.special import expit, logit

from .core import (
    ConvergenceError,
    DegenerateArmError,
    EstimandKind,
    EstimandSpec,
    EstimateReport,
    ObservationSet,
    SeparationError,
    SingularDesignError,
    ValidationError,
    positivity_diagnostic,
)
from .nuisance import (
    OutcomeModel,
    PropensityModel,
    RegressionFit,
    fit_logistic,
    fit_ols_interacted,
    interacted_design,
)

_TMLE_BOUND = 5e-4   # keeps logit of scaled predictions finite
_TMLE_TOL = 1e-10
_TMLE_MAX_ITER = 100

_RESAMPLE_ERRORS = (DegenerateArmError, SeparationError, SingularDesignError)


@dataclass(frozen=True)
class BootstrapConfig:
    """Nonparametric bootstrap settings; results are deterministic given `seed`."""

    replicates: int = 1000
    seed: int = 0
    ci_method: Literal["normal", "percentile"] = "normal"

    def __post_init__(self) -> None:
        if self.replicates < 2:
            raise ValidationError(f"bootstrap needs at least 2 replicates, got {self.replicates}")
        if self.ci_method not in ("normal", "percentile"):
            raise ValidationError(f"ci_method must be 'normal' or 'percentile', got {self.ci_method!r}")


@dataclass(frozen=True)
class SandwichComponents:
    """Stacked-estimating-equation pieces for the regression estimator.

    theta is ordered (t_bar, tw_bar, beta0, beta_t, beta_w, beta_interact);
    vcov is the asymptotic covariance of sqrt(n) * (theta_hat - theta), i.e.
    A_n^{-1} B_n A_n^{-1}.
    """

    theta: np.ndarray
    a_n: np.ndarray
    b_n: np.ndarray
    vcov: np.ndarray
    n: int
    p: int

    @property
    def idx_t_bar(self) -> int:
        return 0

    @property
    def idx_tw_bar(self) -> slice:
        return slice(1, 1 + self.p)

    @property
    def idx_beta0(self) -> int:
        return 1 + self.p

    @property
    def idx_beta_t(self) -> int:
        return 2 + self.p

    @property
    def idx_beta_w(self) -> slice:
        return slice(3 + self.p, 3 + 2 * self.p)

    @property
    def idx_beta_interact(self) -> slice:
        return slice(3 + 2 * self.p, 3 + 3 * self.p)


@dataclass(frozen=True)
class InfluenceRecord:
    """Estimated influence values, one per unit; mean zero for AIPW."""

    phi: np.ndarray
    estimand: EstimandSpec

    @property
    def se(self) -> float:
        """Estimator SE: sqrt of (mean of phi^2) / n."""
        n = self.phi.shape[0]
        return float(np.sqrt(np.mean(self.phi**2) / n))


def sandwich_variance(fit: RegressionFit, data: ObservationSet) -> SandwichComponents:
    """M-estimation sandwich for (t_bar, tw_bar, regression coefficients).

    The per-unit estimating function stacks the two mean deviations with the OLS
    score x_i * r_i; the bread is block diagonal with identity blocks for the
    two mean components and the average outer product of the design rows for
    the regression block.
    """
    t, w = data.t, data.w
    n, p = data.n, data.p
    wc = w - fit.w_mean
    x = interacted_design(t, wc)
    r = fit.residuals
    psi = np.hstack(
        [
            (t - fit.t_bar)[:, None],
            t[:, None] * wc - fit.tw_bar,
            x * r[:, None],
        ]
    )
    b_n = psi.T @ psi / n
    a_n = block_diag(np.eye(1 + p), x.T @ x / n)
    try:
        a_inv = np.linalg.inv(a_n)
    except np.linalg.LinAlgError:
        raise SingularDesignError("singular bread matrix A_n; the design is rank deficient") from None
    vcov = a_inv @ b_n @ a_inv.T
    vcov = (vcov + vcov.T) / 2.0
    theta = np.concatenate(
        [[fit.t_bar], fit.tw_bar, [fit.beta0], [fit.beta_t], fit.beta_w, fit.beta_interact]
    )
    return SandwichComponents(theta=theta, a_n=a_n, b_n=b_n, vcov=vcov, n=n, p=p)


def _reg_point(fit: RegressionFit, estimand: EstimandSpec) -> float:
    if estimand.kind is EstimandKind.BATE:
        return fit.beta_t
    inter = float(fit.tw_bar @ fit.beta_interact)
    if estimand.arm == 1:
        return (1.0 - fit.t_bar) * fit.beta_t - inter
    return -fit.t_bar * fit.beta_t - inter


def delta_method_se(components: SandwichComponents, estimand: EstimandSpec) -> float:
    """Delta-method SE of the regression estimand from the sandwich covariance."""
    c = components
    g = np.zeros(c.theta.shape[0])
    beta_t = c.theta[c.idx_beta_t]
    beta_interact = c.theta[c.idx_beta_interact]
    t_bar = c.theta[c.idx_t_bar]
    tw_bar = c.theta[c.idx_tw_bar]
    if estimand.kind is EstimandKind.BATE:
        g[c.idx_beta_t] = 1.0
    else:
        g[c.idx_t_bar] = -beta_t
        g[c.idx_tw_bar] = -beta_interact
        g[c.idx_beta_t] = (1.0 - t_bar) if estimand.arm == 1 else -t_bar
        g[c.idx_beta_interact] = -tw_bar
    return float(np.sqrt(g @ c.vcov @ g / c.n))


def estimate_reg(
    data: ObservationSet,
    estimand: EstimandSpec,
    ci_level: float = 0.95,
    seed: int | None = None,
) -> EstimateReport:
    """Regression estimator with M-estimation (sandwich + delta method) SE."""
    fit = fit_ols_interacted(data)
    comps = sandwich_variance(fit, data)
    point = _reg_point(fit, estimand)
    se = delta_method_se(comps, estimand)
    return EstimateReport.from_point_se(
        estimand, "reg", point, se, data.n, ci_level=ci_level, seed=seed
    )


def _ipw_point(data: ObservationSet, pscore: np.ndarray, estimand: EstimandSpec) -> float:
    t, y = data.t, data.y
    treated = np.sum(t * y / pscore)
    control = np.sum((1.0 - t) * y / (1.0 - pscore))
    if estimand.kind is EstimandKind.BATE:
        return float((treated - control) / data.n)
    baseline = np.sum(y)
    side = treated if estimand.arm == 1 else control
    return float((side - baseline) / data.n)


def _bootstrap_many(
    data: ObservationSet,
    fn: Callable[[ObservationSet], np.ndarray],
    replicates: int,
    rng: np.random.Generator,
    ci_level: float,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Resample rows with replacement; returns (ses, percentile cis, redraws).

    Resamples on which `fn` fails with a degenerate arm, separation or a
    singular design are redrawn and counted.
    """
    n = data.n
    first = np.asarray(fn(data), dtype=float)
    k = first.shape[0]
    estimates = np.empty((replicates, k))
    redraws = 0
    max_redraws = max(1000, 100 * replicates)
    b = 0
    while b < replicates:
        idx = rng.integers(0, n, size=n)
        try:
            estimates[b] = fn(data.subset(idx))
        except _RESAMPLE_ERRORS:
            redraws += 1
            if redraws > max_redraws:
                raise ConvergenceError(
                    f"bootstrap gave up after {redraws} redraws of degenerate resamples"
                ) from None
            continue
        b += 1
    ses = estimates.std(axis=0, ddof=1)
    alpha = (1.0 - ci_level) / 2.0
    cis = np.quantile(estimates, [alpha, 1.0 - alpha], axis=0).T
    return ses, cis, redraws


def bootstrap_se(
    data: ObservationSet,
    estimator_fn: Callable[[ObservationSet], float],
    boot: BootstrapConfig,
    ci_level: float = 0.95,
) -> tuple[float, tuple[float, float]]:
    """Nonparametric bootstrap SE and percentile CI of a scalar estimator.

    `estimator_fn` maps an ObservationSet to a float and is re-run (all
    nuisances refit) on each resample. Deterministic for a fixed seed. Warns
    when more than 1% of resamples had to be redrawn.
    """
    rng = np.random.default_rng(boot.seed)
    ses, cis, redraws = _bootstrap_many(
        data, lambda d: np.array([estimator_fn(d)]), boot.replicates, rng, ci_level
    )
    if redraws > 0.01 * boot.replicates:
        warnings.warn(
            f"bootstrap redrew {redraws} degenerate resamples "
            f"({100.0 * redraws / boot.replicates:.1f}% of {boot.replicates})",
            stacklevel=2,
        )
    return float(ses[0]), (float(cis[0, 0]), float(cis[0, 1]))


def estimate_ipw(
    data: ObservationSet,
    estimand: EstimandSpec,
    boot: BootstrapConfig | None = None,
    ci_level: float = 0.95,
    propensity: PropensityModel | None = None,
) -> EstimateReport:
    """Horvitz-Thompson style weighting estimator with bootstrap SE.

    The propensity model is refit inside every bootstrap resample unless a
    prefit `propensity` is injected, in which case that fixed model is used
    throughout.
    """
    boot = boot or BootstrapConfig()
    prop = propensity if propensity is not None else fit_logistic(data)
    pscore = np.asarray(prop.predict_proba(data.w), dtype=float)
    point = _ipw_point(data, pscore, estimand)
    diagnostics = list(positivity_diagnostic(prop, data))

    if propensity is not None:
        def fn(d: ObservationSet) -> np.ndarray:
            ps = np.asarray(propensity.predict_proba(d.w), dtype=float)
            return np.array([_ipw_point(d, ps, estimand)])
    else:
        def fn(d: ObservationSet) -> np.ndarray:
            model = fit_logistic(d)
            ps = np.asarray(model.predict_proba(d.w), dtype=float)
            return np.array([_ipw_point(d, ps, estimand)])

    rng = np.random.default_rng(boot.seed)
    ses, cis, redraws = _bootstrap_many(data, fn, boot.replicates, rng, ci_level)
    if redraws > 0.01 * boot.replicates:
        diagnostics.append(
            f"bootstrap redrew {redraws} degenerate resamples "
            f"({100.0 * redraws / boot.replicates:.1f}% of {boot.replicates})"
        )
    se = float(ses[0])
    ci = None
    if boot.ci_method == "percentile":
        ci = (float(cis[0, 0]), float(cis[0, 1]))
    return EstimateReport.from_point_se(
        estimand,
        "ipw",
        point,
        se,
        data.n,
        ci_level=ci_level,
        diagnostics=tuple(diagnostics),
        seed=boot.seed,
        ci=ci,
    )


def _aipw_contributions(
    data: ObservationSet,
    estimand: EstimandSpec,
    m1: np.ndarray,
    m0: np.ndarray,
    pscore: np.ndarray,
) -> np.ndarray:
    t, y = data.t, data.y
    if estimand.kind is EstimandKind.BATE:
        m_obs = np.where(t == 1.0, m1, m0)
        weight = t / pscore - (1.0 - t) / (1.0 - pscore)
        return weight * (y - m_obs) + m1 - m0
    if estimand.arm == 1:
        return (t / pscore) * (y - m1) + m1 - y
    return ((1.0 - t) / (1.0 - pscore)) * (y - m0) + m0 - y


def _nuisances(
    data: ObservationSet,
    outcome: OutcomeModel | None,
    propensity: PropensityModel | None,
) -> tuple[OutcomeModel, PropensityModel]:
    m = outcome if outcome is not None else fit_ols_interacted(data)
    g = propensity if propensity is not None else fit_logistic(data)
    return m, g


def aipw_influence(
    data: ObservationSet,
    estimand: EstimandSpec,
    outcome: OutcomeModel | None = None,
    propensity: PropensityModel | None = None,
) -> InfluenceRecord:
    """Estimated efficient influence values at the AIPW solution (mean zero)."""
    m, g = _nuisances(data, outcome, propensity)
    pscore = np.asarray(g.predict_proba(data.w), dtype=float)
    m1 = np.asarray(m.predict(1.0, data.w), dtype=float)
    m0 = np.asarray(m.predict(0.0, data.w), dtype=float)
    contrib = _aipw_contributions(data, estimand, m1, m0, pscore)
    return InfluenceRecord(phi=contrib - contrib.mean(), estimand=estimand)


def estimate_aipw(
    data: ObservationSet,
    estimand: EstimandSpec,
    ci_level: float = 0.95,
    outcome: OutcomeModel | None = None,
    propensity: PropensityModel | None = None,
    seed: int | None = None,
) -> EstimateReport:
    """Augmented IPW (doubly robust) estimator with influence-curve SE."""
    m, g = _nuisances(data, outcome, propensity)
    pscore = np.asarray(g.predict_proba(data.w), dtype=float)
    m1 = np.asarray(m.predict(1.0, data.w), dtype=float)
    m0 = np.asarray(m.predict(0.0, data.w), dtype=float)
    contrib = _aipw_contributions(data, estimand, m1, m0, pscore)
    point = float(contrib.mean())
    record = InfluenceRecord(phi=contrib - point, estimand=estimand)
    diagnostics = tuple(positivity_diagnostic(g, data))
    return EstimateReport.from_point_se(
        estimand, "aipw", point, record.se, data.n,
        ci_level=ci_level, diagnostics=diagnostics, seed=seed,
    )


@dataclass(frozen=True)
class TmleFit:
    """Targeted update of the outcome predictions for one estimand."""

    point: float
    fluctuation: float
    influence: np.ndarray
    q1: np.ndarray
    q0: np.ndarray
    q_obs: np.ndarray

    @property
    def se(self) -> float:
        n = self.influence.shape[0]
        return float(np.sqrt(np.mean(self.influence**2) / n))


def _fluctuate(ys: np.ndarray, offset: np.ndarray, h: np.ndarray) -> float:
    """One-dimensional logistic fluctuation: ys ~ expit(offset + beta * h).

    Newton iteration with step halving on the quasi-binomial log likelihood.
    """
    def loglik(beta: float) -> float:
        probs = np.clip(expit(offset + beta * h), 1e-12, 1.0 - 1e-12)
        return float(ys @ np.log(probs) + (1.0 - ys) @ np.log(1.0 - probs))

    beta = 0.0
    current = loglik(beta)
    for _ in range(_TMLE_MAX_ITER):
        probs = expit(offset + beta * h)
        score = float(h @ (ys - probs))
        curvature = float((h * h) @ (probs * (1.0 - probs)))
        if curvature <= 0.0:
            break  # flat likelihood: nothing left to update
        step = score / curvature
        for _ in range(40):
            candidate = loglik(beta + step)
            if candidate >= current - 1e-12:
                break
            step /= 2.0
        beta += step
        current = loglik(beta)
        if abs(step) < _TMLE_TOL:
            return beta
    raise ConvergenceError(
        f"targeting fluctuation did not converge in {_TMLE_MAX_ITER} iterations"
    )


def tmle_update(
    data: ObservationSet,
    estimand: EstimandSpec,
    outcome: OutcomeModel | None = None,
    propensity: PropensityModel | None = None,
) -> TmleFit:
    """Targeted maximum likelihood update and plug-in estimate.

    The outcome is min-max scaled to [0, 1]; initial predictions are bounded
    away from 0/1, fluctuated on the logit scale with the clever covariate as
    the single regressor and the initial logit as a fixed offset, and the
    updated predictions are mapped back to the original scale. Point
    estimates and influence values are invariant to affine rescaling of y.
    """
    m, g = _nuisances(data, outcome, propensity)
    t, y, w = data.t, data.y, data.w
    pscore = np.asarray(g.predict_proba(w), dtype=float)
    m1 = np.asarray(m.predict(1.0, w), dtype=float)
    m0 = np.asarray(m.predict(0.0, w), dtype=float)

    lo, hi = float(y.min()), float(y.max())
    span = hi - lo
    if span == 0.0:
        zero = np.zeros(data.n)
        return TmleFit(0.0, 0.0, zero, m1, m0, np.where(t == 1.0, m1, m0))

    ys = (y - lo) / span
    q1 = np.clip((m1 - lo) / span, _TMLE_BOUND, 1.0 - _TMLE_BOUND)
    q0 = np.clip((m0 - lo) / span, _TMLE_BOUND, 1.0 - _TMLE_BOUND)
    q_obs = np.where(t == 1.0, q1, q0)

    # clever covariate H(t, w), on the observed arm and at each fixed arm
    if estimand.kind is EstimandKind.BATE:
        h_obs = t / pscore - (1.0 - t) / (1.0 - pscore)
        h_arm1 = 1.0 / pscore
        h_arm0 = -1.0 / (1.0 - pscore)
    elif estimand.arm == 1:
        h_obs = 1.0 - t / pscore
        h_arm1 = 1.0 - 1.0 / pscore
        h_arm0 = np.ones(data.n)
    else:
        h_obs = 1.0 - (1.0 - t) / (1.0 - pscore)
        h_arm1 = np.ones(data.n)
        h_arm0 = 1.0 - 1.0 / (1.0 - pscore)

    beta = _fluctuate(ys, logit(q_obs), h_obs)
    q1_new = expit(logit(q1) + beta * h_arm1)
    q0_new = expit(logit(q0) + beta * h_arm0)
    q_obs_new = np.where(t == 1.0, q1_new, q0_new)

    y1 = lo + span * q1_new
    y0 = lo + span * q0_new
    y_obs_pred = lo + span * q_obs_new

    if estimand.kind is EstimandKind.BATE:
        point = float(np.mean(y1 - y0))
        phi = h_obs * (y - y_obs_pred) + (y1 - y0) - point
    elif estimand.arm == 1:
        point = float(np.mean(y1) - np.mean(y_obs_pred))
        phi = (t / pscore) * (y - y1) + y1 - y - point
    else:
        point = float(np.mean(y0) - np.mean(y_obs_pred))
        phi = ((1.0 - t) / (1.0 - pscore)) * (y - y0) + y0 - y - point

    return TmleFit(point, float(beta), phi, y1, y0, y_obs_pred)


def estimate_tmle(
    data: ObservationSet,
    estimand: EstimandSpec,
    ci_level: float = 0.95,
    outcome: OutcomeModel | None = None,
    propensity: PropensityModel | None = None,
    seed: int | None = None,
) -> EstimateReport:
    """Targeted maximum likelihood estimator with influence-curve SE."""
    m, g = _nuisances(data, outcome, propensity)
    fit = tmle_update(data, estimand, outcome=m, propensity=g)
    diagnostics = tuple(positivity_diagnostic(g, data))
    return EstimateReport.from_point_se(
        estimand, "tmle", fit.point, fit.se, data.n,
        ci_level=ci_level, diagnostics=diagnostics, seed=seed,
    )


ESTIMATOR_NAMES = ("reg", "ipw", "aipw", "tmle")


def estimate(
    data: ObservationSet,
    estimand: EstimandSpec,
    estimator: str,
    boot: BootstrapConfig | None = None,
    ci_level: float = 0.95,
) -> EstimateReport:
    """Dispatch on estimator name; `boot` only applies to 'ipw'."""
    if estimator == "reg":
        return estimate_reg(data, estimand, ci_level=ci_level)
    if estimator == "ipw":
        return estimate_ipw(data, estimand, boot=boot, ci_level=ci_level)
    if estimator == "aipw":
        return estimate_aipw(data, estimand, ci_level=ci_level)
    if estimator == "tmle":
        return estimate_tmle(data, estimand, ci_level=ci_level)
    raise ValidationError(f"unknown estimator {estimator!r}; expected one of {ESTIMATOR_NAMES}")
