"""Synthetic data generation, exact truth values, density curves and Monte Carlo runs."""

from __future__ import annotations

import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, stats

from .core import (
    BinarizationRule,
    Direction,
    EstimandSpec,
    EstimationError,
    ObservationSet,
    QuadratureError,
    ValidationError,
    binarize,
)
from .estimators import (
    ESTIMATOR_NAMES,
    _bootstrap_many,
    _ipw_point,
    _reg_point,
    delta_method_se,
    estimate_aipw,
    estimate_tmle,
    sandwich_variance,
)
from .nuisance import fit_logistic, fit_ols_interacted

_QUAD_TARGET = 1e-4     # required absolute accuracy of the truth values
_TAIL_SDS = 10.0        # integration range; mass beyond is < 1e-20


def cubic_sine_outcome(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Default conditional mean of the outcome: a^3 + sin(a) + 100 w."""
    return a**3 + np.sin(a) + 100.0 * w


@dataclass(frozen=True)
class DgpSpec:
    """Generating process: binary covariate, conditionally normal treatment.

    w ~ Bernoulli(w_prob); a | w ~ Normal(a_mean_base + a_mean_slope * w,
    a_sd); y = outcome_fn(a, w) + Normal(0, noise_sd); t = 1(a >= cutoff).
    """

    w_prob: float = 0.5
    a_mean_base: float = 5.0
    a_mean_slope: float = 2.0
    a_sd: float = 1.0
    outcome_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] = cubic_sine_outcome
    noise_sd: float = 1.0
    cutoff: float = 6.0

    def __post_init__(self) -> None:
        if not 0.0 < self.w_prob < 1.0:
            raise ValidationError(f"w_prob must be in (0, 1), got {self.w_prob}")
        if self.a_sd <= 0.0:
            raise ValidationError(f"a_sd must be positive, got {self.a_sd}")
        if self.noise_sd < 0.0:
            raise ValidationError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if not np.isfinite(self.cutoff):
            raise ValidationError(f"cutoff must be finite, got {self.cutoff}")

    @property
    def rule(self) -> BinarizationRule:
        return BinarizationRule(self.cutoff, Direction.GEQ)

    def a_mean(self, w: float) -> float:
        return self.a_mean_base + self.a_mean_slope * w

    def propensity(self, w: float) -> float:
        """Population Pr(A >= cutoff | W = w), from the normal survival function."""
        return float(stats.norm.sf(self.cutoff, loc=self.a_mean(w), scale=self.a_sd))


@dataclass(frozen=True)
class TruthReport:
    """Exact estimand values for a DgpSpec, with the quadrature error bound."""

    psi_bate: float
    psi_peb1: float
    psi_peb0: float
    e_y: float
    quadrature_error_bound: float

    def value(self, estimand: EstimandSpec) -> float:
        return {"bate": self.psi_bate, "peb1": self.psi_peb1, "peb0": self.psi_peb0}[
            estimand.key
        ]

    def to_dict(self) -> dict:
        return {
            "psi_bate": self.psi_bate,
            "psi_peb1": self.psi_peb1,
            "psi_peb0": self.psi_peb0,
            "e_y": self.e_y,
            "quadrature_error_bound": self.quadrature_error_bound,
        }


def sample_dgp(spec: DgpSpec, n: int, seed) -> ObservationSet:
    """Draw n i.i.d. units; `seed` is anything np.random.default_rng accepts,
    or an existing Generator."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = (rng.random(n) < spec.w_prob).astype(float)
    a = rng.normal(spec.a_mean_base + spec.a_mean_slope * w, spec.a_sd)
    y = np.asarray(spec.outcome_fn(a, w), dtype=float) + rng.normal(0.0, spec.noise_sd, n)
    t = binarize(a, spec.rule)
    return ObservationSet(w=w[:, None], t=t, y=y, a=a, rule=spec.rule)


def truth_oracle(spec: DgpSpec) -> TruthReport:
    """Estimand values by adaptive quadrature over each covariate stratum.

    For each w, the conditional mean outcome is integrated against the
    treatment density over the cutoff region (renormalized by the region
    probability) and over the full line. Target absolute error 1e-4.
    """
    e_y = e_mu1 = e_mu0 = 0.0
    err = 0.0
    for w in (0.0, 1.0):
        weight = spec.w_prob if w == 1.0 else 1.0 - spec.w_prob
        m, sd = spec.a_mean(w), spec.a_sd
        pi1 = spec.propensity(w)
        if pi1 < 1e-12 or pi1 > 1.0 - 1e-12:
            raise ValidationError(
                f"positivity fails at w={w:g}: Pr(A >= {spec.cutoff:g} | w) = {pi1:.3g}"
            )

        def integrand(a: float, _w: float = w) -> float:
            return float(spec.outcome_fn(np.float64(a), np.float64(_w))) * float(
                stats.norm.pdf(a, loc=m, scale=sd)
            )

        lo, hi = m - _TAIL_SDS * sd, m + _TAIL_SDS * sd
        pieces = {}
        for name, (left, right) in {
            "upper": (max(spec.cutoff, lo), hi),
            "lower": (lo, min(spec.cutoff, hi)),
        }.items():
            if left < right:
                val, abserr = integrate.quad(integrand, left, right, limit=200)
            else:
                val, abserr = 0.0, 0.0
            if abserr > _QUAD_TARGET:
                raise QuadratureError(
                    f"quadrature error {abserr:.3g} over [{left:g}, {right:g}] (w={w:g}) "
                    f"exceeds the {_QUAD_TARGET:g} target"
                )
            pieces[name] = val
            err += abserr * weight / min(pi1, 1.0 - pi1)
        e_y += weight * (pieces["upper"] + pieces["lower"])
        e_mu1 += weight * pieces["upper"] / pi1
        e_mu0 += weight * pieces["lower"] / (1.0 - pi1)
    return TruthReport(
        psi_bate=e_mu1 - e_mu0,
        psi_peb1=e_mu1 - e_y,
        psi_peb0=e_mu0 - e_y,
        e_y=e_y,
        quadrature_error_bound=err,
    )


DENSITY_ARMS = ("status_quo", "tilde1", "tilde0")


def density_curve(spec: DgpSpec, arm: str, w: int, grid: np.ndarray) -> np.ndarray:
    """Treatment density under the status quo or a cutoff-restricted policy.

    The policy densities are the status-quo normal density truncated to the
    arm's region and renormalized, so density ratios inside the region match
    the status quo exactly. Returns an array of (a, density) rows.
    """
    if arm not in DENSITY_ARMS:
        raise ValidationError(f"arm must be one of {DENSITY_ARMS}, got {arm!r}")
    if w not in (0, 1):
        raise ValidationError(f"w must be 0 or 1, got {w}")
    grid = np.asarray(grid, dtype=float)
    if grid.size and not np.isfinite(grid).all():
        raise ValidationError("grid must be finite")
    base = stats.norm.pdf(grid, loc=spec.a_mean(w), scale=spec.a_sd)
    treated_region = np.asarray(spec.rule.apply(grid), dtype=bool) if grid.size else np.zeros(0, bool)
    pi1 = spec.propensity(w)
    if arm == "status_quo":
        dens = base
    elif arm == "tilde1":
        dens = np.where(treated_region, base / pi1, 0.0)
    else:
        dens = np.where(~treated_region, base / (1.0 - pi1), 0.0)
    return np.column_stack([grid, dens])


@dataclass(frozen=True)
class McRow:
    """Summary for one (estimator, estimand) cell of a Monte Carlo run."""

    estimator: str
    estimand: EstimandSpec
    mean_estimate: float
    bias: float
    mean_est_se: float
    sim_se: float
    n_failed: int

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "estimand": self.estimand.key,
            "mean_estimate": self.mean_estimate,
            "bias": self.bias,
            "mean_est_se": self.mean_est_se,
            "sim_se": self.sim_se,
            "n_failed": self.n_failed,
        }


@dataclass(frozen=True)
class McResult:
    """All cells for one sample size."""

    n: int
    replicates: int
    seed: int
    rows: tuple[McRow, ...]

    def row(self, estimator: str, estimand: EstimandSpec) -> McRow:
        for r in self.rows:
            if r.estimator == estimator and r.estimand.key == estimand.key:
                return r
        raise KeyError(f"no cell for {estimator}/{estimand.key}")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "replicates": self.replicates,
            "seed": self.seed,
            "rows": [r.to_dict() for r in self.rows],
        }


def _replicate_worker(task) -> dict:
    """One Monte Carlo replicate; returns {(estimator, estimand key): (point, se)}.

    Nuisance fits are shared across estimators and estimands within the
    replicate, and the IPW bootstrap reuses one set of resamples for all
    estimands. The RNG stream is derived from (seed, n, replicate) so results
    do not depend on scheduling.
    """
    spec, n, estimators, estimand_keys, boot_replicates, seed, rep = task
    estimands = [EstimandSpec.from_key(k) for k in estimand_keys]
    rng = np.random.default_rng([seed, n, rep])
    data = sample_dgp(spec, n, rng)
    out: dict = {}
    ols = prop = None

    def outcome_fit():
        nonlocal ols
        if ols is None:
            ols = fit_ols_interacted(data)
        return ols

    def propensity_fit():
        nonlocal prop
        if prop is None:
            prop = fit_logistic(data)
        return prop

    for est in estimators:
        try:
            if est == "reg":
                fit = outcome_fit()
                comps = sandwich_variance(fit, data)
                for e in estimands:
                    out[(est, e.key)] = (_reg_point(fit, e), delta_method_se(comps, e))
            elif est == "ipw":
                model = propensity_fit()
                pscore = np.asarray(model.predict_proba(data.w), dtype=float)
                points = [_ipw_point(data, pscore, e) for e in estimands]
                start = np.concatenate([[model.intercept], model.coef])

                def fn(d: ObservationSet) -> np.ndarray:
                    refit = fit_logistic(d, start=start)
                    ps = np.asarray(refit.predict_proba(d.w), dtype=float)
                    return np.array([_ipw_point(d, ps, e) for e in estimands])

                ses, _, _ = _bootstrap_many(data, fn, boot_replicates, rng, 0.95)
                for e, pt, se in zip(estimands, points, ses):
                    out[(est, e.key)] = (pt, float(se))
            elif est == "aipw":
                for e in estimands:
                    rep_out = estimate_aipw(
                        data, e, outcome=outcome_fit(), propensity=propensity_fit()
                    )
                    out[(est, e.key)] = (rep_out.point, rep_out.se)
            elif est == "tmle":
                for e in estimands:
                    rep_out = estimate_tmle(
                        data, e, outcome=outcome_fit(), propensity=propensity_fit()
                    )
                    out[(est, e.key)] = (rep_out.point, rep_out.se)
        except EstimationError:
            for e in estimands:
                out[(est, e.key)] = None
    return out


def run_monte_carlo(
    spec: DgpSpec,
    n_list: Sequence[int],
    replicates: int,
    estimators: Sequence[str],
    seed: int,
    estimands: Sequence[EstimandSpec] = (EstimandSpec.bate(), EstimandSpec.peb(1)),
    boot_replicates: int = 200,
    threads: int | None = 1,
) -> list[McResult]:
    """Repeated-sampling study of the requested estimators.

    Per (n, estimator, estimand) cell: mean estimate, bias against the
    quadrature truth, mean estimated SE and the SD of the estimates across
    replicates. Replicates whose estimator fails (degenerate arm, separation)
    are excluded and counted. Deterministic for a fixed seed regardless of
    `threads`.
    """
    if replicates < 2:
        raise ValidationError(f"replicates must be >= 2, got {replicates}")
    for est in estimators:
        if est not in ESTIMATOR_NAMES:
            raise ValidationError(f"unknown estimator {est!r}; expected one of {ESTIMATOR_NAMES}")
    truth = truth_oracle(spec)
    estimator_tuple = tuple(estimators)
    estimand_keys = tuple(e.key for e in estimands)
    threads = threads or os.cpu_count() or 1

    results = []
    for n in n_list:
        tasks = [
            (spec, int(n), estimator_tuple, estimand_keys, boot_replicates, int(seed), rep)
            for rep in range(replicates)
        ]
        if threads > 1:
            chunk = max(1, replicates // (threads * 8))
            with ProcessPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(_replicate_worker, tasks, chunksize=chunk))
        else:
            outcomes = [_replicate_worker(t) for t in tasks]

        rows = []
        for est in estimator_tuple:
            for e in estimands:
                cells = [o[(est, e.key)] for o in outcomes if o.get((est, e.key)) is not None]
                n_failed = replicates - len(cells)
                points = np.array([c[0] for c in cells])
                ses = np.array([c[1] for c in cells])
                if len(cells) >= 2:
                    mean_est = float(points.mean())
                    row = McRow(
                        estimator=est,
                        estimand=e,
                        mean_estimate=mean_est,
                        bias=float(mean_est - truth.value(e)),
                        mean_est_se=float(ses.mean()),
                        sim_se=float(points.std(ddof=1)),
                        n_failed=n_failed,
                    )
                else:  # every replicate failed for this estimator
                    row = McRow(est, e, float("nan"), float("nan"), float("nan"), float("nan"), n_failed)
                rows.append(row)
        results.append(McResult(n=int(n), replicates=replicates, seed=int(seed), rows=tuple(rows)))
    return results


def mc_results_to_csv(
    results: Sequence[McResult],
    estimators: Sequence[str],
    estimands: Sequence[EstimandSpec] = (EstimandSpec.bate(), EstimandSpec.peb(1)),
) -> str:
    """Render Monte Carlo results as CSV, one row per (estimand, n), with
    Estimate/Bias/Est SE/Sim SE column groups per estimator."""
    buf = io.StringIO()
    header = ["estimand", "n"]
    for est in estimators:
        header += [f"{est}_estimate", f"{est}_bias", f"{est}_est_se", f"{est}_sim_se"]
    buf.write(",".join(header) + "\n")
    for e in estimands:
        for res in results:
            cells = [e.key, str(res.n)]
            for est in estimators:
                row = res.row(est, e)
                cells += [
                    repr(row.mean_estimate),
                    repr(row.bias),
                    repr(row.mean_est_se),
                    repr(row.sim_se),
                ]
            buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def density_curve_to_csv(curve: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write("a,density\n")
    for a, d in curve:
        buf.write(f"{float(a)!r},{float(d)!r}\n")
    return buf.getvalue()
