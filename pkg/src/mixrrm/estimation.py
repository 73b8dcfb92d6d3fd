"""Maximum (simulated) likelihood estimation and covariance estimators.

The optimizer is quasi-Newton BFGS with a backtracking line search that
enforces sufficient decrease, so the log-likelihood is non-decreasing over
accepted steps and two runs on identical inputs take bit-identical paths.
The Hessian used for covariances is obtained by central differences of the
analytic gradient at the optimum only.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .dataset import ChoiceDataset
from .draws import DrawSet, build_drawset, inverse_normal_cdf
from .errors import (
    FewerClustersThanParameters,
    NonConvergence,
    SingularHessian,
)
from .regret import ModelDesign, ModelSpec, ParameterVector


@dataclass
class FitOptions:
    """Optimizer and inference settings shared by both fit entry points."""

    maxiter: int = 200
    gtol: float = 1e-6
    step_tol: float = 1e-10
    start: np.ndarray | None = None
    level: float = 95.0
    covariance: str = "hessian"  # hessian | robust | cluster
    cluster: Mapping[int, int] | None = None
    nrep: int = 50
    burn: int = 15


@dataclass
class FitResult:
    """Point estimates, inference, and convergence diagnostics.

    ``theta`` is the packed parameter vector as estimated (scale entries may
    be negative: the likelihood only identifies their magnitude).  The
    ``estimates`` column reports |scale|; ``covariance`` always refers to the
    signed parameterization.
    """

    spec: ModelSpec
    param_names: tuple[str, ...]
    alternative_labels: tuple[int, ...]
    theta_hat: ParameterVector
    theta: np.ndarray
    estimates: np.ndarray
    loglik: float
    n_individuals: int
    n_situations: int
    n_parameters: int
    covariance: np.ndarray
    covariance_kind: str
    std_errors: np.ndarray
    z_stats: np.ndarray
    p_values: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float
    converged: bool
    iterations: int
    gradient_norm: float
    nrep: int
    burn: int


@dataclass
class _OptResult:
    x: np.ndarray
    loglik: float
    grad: np.ndarray
    iterations: int
    converged: bool
    ll_history: list[float]


def _maximize(
    value_grad: Callable,
    x0: np.ndarray,
    maxiter: int = 200,
    gtol: float = 1e-6,
    step_tol: float = 1e-10,
) -> _OptResult:
    """BFGS ascent with Armijo backtracking.

    ``value_grad(x, need_grad)`` returns ``(ll, grad-or-None)``.  Convergence
    means the sup-norm of the gradient is at or below ``gtol``; the loop also
    stops when backtracking cannot find an acceptable step longer than
    ``step_tol``.  Accepted steps never decrease the objective beyond the
    floating-point rounding noise of the total log-likelihood.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    ll, grad = value_grad(x, True)
    if not np.isfinite(ll):
        raise ValueError("log-likelihood not finite at the starting values")
    h_inv = np.eye(n)
    first_update = True
    history = [ll]
    iterations = 0
    # summation rounding across individuals makes the objective fuzzy at a
    # few ulps of its own magnitude
    noise_floor = 8.0 * np.finfo(float).eps

    while np.max(np.abs(grad)) > gtol and iterations < maxiter:
        direction = h_inv @ grad  # ascent direction
        slope = grad @ direction
        if slope <= 0.0:
            h_inv = np.eye(n)
            first_update = True
            direction = grad.copy()
            slope = grad @ grad
            if slope == 0.0:
                break

        step = 1.0
        d_norm = np.max(np.abs(direction))
        accepted = False
        floor = noise_floor * (abs(ll) + 1.0)
        while step * d_norm >= step_tol:
            candidate = x + step * direction
            ll_new = value_grad(candidate, False)[0]
            target = 1e-4 * step * slope
            # Once the predicted gain sinks below the rounding noise of ll
            # itself, sufficient decrease cannot be certified; accept any
            # step that stays within that noise so the gradient can still
            # be driven to tolerance.
            if np.isfinite(ll_new) and (
                ll_new >= ll + target
                or (target <= floor and ll_new >= ll - floor)
            ):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break

        ll_new, grad_new = value_grad(candidate, True)
        s = candidate - x
        y = grad - grad_new  # gradient change of -ll (minimization form)
        sy = s @ y
        # update only when curvature keeps the approximation positive definite
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            if first_update:
                h_inv *= sy / (y @ y)
                first_update = False
            rho = 1.0 / sy
            v = np.eye(n) - rho * np.outer(s, y)
            h_inv = v @ h_inv @ v.T + rho * np.outer(s, s)
        x, ll, grad = candidate, ll_new, grad_new
        history.append(ll)
        iterations += 1

    return _OptResult(
        x=x,
        loglik=float(ll),
        grad=grad,
        iterations=iterations,
        converged=bool(np.max(np.abs(grad)) <= gtol),
        ll_history=history,
    )


def _fd_hessian(grad_fn: Callable, x: np.ndarray) -> np.ndarray:
    """Central differences of the analytic gradient, step 1e-5*(1+|x_i|)."""
    n = x.size
    hess = np.empty((n, n))
    for i in range(n):
        h = 1e-5 * (1.0 + abs(x[i]))
        plus = x.copy()
        minus = x.copy()
        plus[i] += h
        minus[i] -= h
        hess[:, i] = (grad_fn(plus) - grad_fn(minus)) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def covariance_hessian(hessian: np.ndarray) -> np.ndarray:
    """(-H)^-1 for a negative-definite log-likelihood Hessian."""
    neg = -np.asarray(hessian, dtype=float)
    try:
        np.linalg.cholesky(neg)
        cov = np.linalg.inv(neg)
    except np.linalg.LinAlgError:
        raise SingularHessian(
            "Hessian at the optimum is singular or not negative definite"
        ) from None
    return 0.5 * (cov + cov.T)


def covariance_cluster(
    hessian: np.ndarray, scores: np.ndarray, clusters
) -> np.ndarray:
    """Cluster sandwich (-H)^-1 [C/(C-1) sum_c g_c g_c'] (-H)^-1.

    ``scores`` holds per-individual gradient rows at the optimum; ``clusters``
    assigns each row a cluster id.  Scores are summed within clusters before
    forming the meat.
    """
    scores = np.asarray(scores, dtype=float)
    clusters = np.asarray(list(clusters))
    if clusters.shape[0] != scores.shape[0]:
        raise ValueError("one cluster id per score row required")
    unique, inverse = np.unique(clusters, return_inverse=True)
    n_clusters = unique.size
    if n_clusters < 2:
        raise ValueError("cluster sandwich needs at least 2 clusters")
    if n_clusters < scores.shape[1]:
        warnings.warn(
            f"only {n_clusters} clusters for {scores.shape[1]} parameters; "
            "the sandwich covariance is rank deficient",
            FewerClustersThanParameters,
        )
    grouped = np.zeros((n_clusters, scores.shape[1]))
    np.add.at(grouped, inverse, scores)
    meat = (n_clusters / (n_clusters - 1.0)) * (grouped.T @ grouped)
    bread = covariance_hessian(hessian)
    return bread @ meat @ bread


def covariance_robust(hessian: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Heteroskedasticity-robust sandwich: one singleton cluster per row."""
    return covariance_cluster(hessian, scores, np.arange(len(scores)))


# -- objective plumbing -------------------------------------------------------


def _draws_for(design: ModelDesign, drawset: DrawSet | None, position: int):
    if drawset is None:
        return design.zero_draws()
    return drawset.for_individual(position)


def _make_value_grad(design: ModelDesign, drawset: DrawSet | None):
    n_ind = design.ds.n_individuals

    def value_grad(x, need_grad):
        theta = design.unpack(x)
        total_ll = 0.0
        total_grad = np.zeros(design.n_params) if need_grad else None
        for pos in range(n_ind):
            z = _draws_for(design, drawset, pos)
            if need_grad:
                ll, grad = design.individual_loglik_gradient(pos, theta, z)
                total_grad += grad
            else:
                ll = design.individual_loglik(pos, theta, z)
            total_ll += ll
        return total_ll, total_grad

    return value_grad


def individual_scores(design: ModelDesign, drawset: DrawSet | None, x):
    """Per-individual log-likelihood terms and gradient rows at ``x``."""
    theta = design.unpack(x)
    n_ind = design.ds.n_individuals
    lls = np.empty(n_ind)
    scores = np.empty((n_ind, design.n_params))
    for pos in range(n_ind):
        z = _draws_for(design, drawset, pos)
        lls[pos], scores[pos] = design.individual_loglik_gradient(pos, theta, z)
    return lls, scores


def simulated_loglik(
    ds: ChoiceDataset, spec: ModelSpec, theta: ParameterVector,
    drawset: DrawSet | None,
) -> float:
    """Evaluate the (simulated) log-likelihood at a given parameter point."""
    design = ModelDesign(ds, spec)
    value_grad = _make_value_grad(design, drawset)
    return float(value_grad(theta.pack(), False)[0])


# -- fitting -------------------------------------------------------------------


def fit_classical(
    ds: ChoiceDataset, spec: ModelSpec, opts: FitOptions | None = None
) -> FitResult:
    """Fit the fixed-coefficient regret model by maximum likelihood."""
    if spec.n_random:
        raise ValueError("classical fit requires a spec without random attributes")
    opts = opts or FitOptions()
    design = ModelDesign(ds, spec)
    x0 = (
        np.asarray(opts.start, dtype=float)
        if opts.start is not None
        else np.zeros(design.n_params)
    )
    return _run_fit(design, None, x0, opts, nrep=0, burn=0)


def fit_mixed(
    ds: ChoiceDataset, spec: ModelSpec, opts: FitOptions | None = None
) -> FitResult:
    """Fit the mixed regret model by maximum simulated likelihood.

    The Halton draw set is built once and held fixed for the whole
    optimization.  Without explicit starting values, fixed coefficients and
    random-coefficient locations come from a preliminary classical fit on
    the same attributes; scales start at 0.1 and constants at 0.
    """
    if spec.n_random < 1:
        raise ValueError("mixed fit requires at least one random attribute")
    opts = opts or FitOptions()
    if opts.nrep < 1:
        raise ValueError("nrep must be >= 1")
    design = ModelDesign(ds, spec)
    drawset = build_drawset(
        ds.n_individuals, spec.n_random, opts.nrep, opts.burn
    )
    if opts.start is not None:
        x0 = np.asarray(opts.start, dtype=float)
    else:
        x0 = _starting_values(ds, spec, design, opts)
    return _run_fit(design, drawset, x0, opts, nrep=opts.nrep, burn=opts.burn)


def _starting_values(ds, spec, design: ModelDesign, opts: FitOptions) -> np.ndarray:
    prelim_spec = ModelSpec(
        fixed_attrs=spec.fixed_attrs + spec.random_attrs,
        random_attrs=(),
        ln_count=0,
        use_asc=spec.use_asc,
        base_alternative=spec.base_alternative,
    )
    prelim_opts = FitOptions(
        maxiter=opts.maxiter, gtol=opts.gtol, step_tol=opts.step_tol,
        level=opts.level, covariance="hessian",
    )
    try:
        prelim = fit_classical(ds, prelim_spec, prelim_opts)
    except NonConvergence as err:
        warnings.warn(
            "preliminary classical fit did not converge; "
            "using its last iterate for starting values"
        )
        prelim = err.result
    by_name = dict(zip(prelim.param_names, prelim.theta))

    x0 = np.zeros(design.n_params)
    x0[:design.n_fixed] = [by_name[a] for a in spec.fixed_attrs]
    f, k = design.n_fixed, design.n_random
    for j, attr in enumerate(spec.random_attrs):
        classical = by_name[attr]
        if spec.is_lognormal(j):
            x0[f + j] = math.log(abs(classical)) if classical != 0.0 else math.log(0.1)
        else:
            x0[f + j] = classical
    x0[f + k:f + 2 * k] = 0.1
    # constants start at 0 (asc slots already zero)
    return x0


def _run_fit(
    design: ModelDesign, drawset: DrawSet | None, x0, opts: FitOptions,
    nrep: int, burn: int,
) -> FitResult:
    value_grad = _make_value_grad(design, drawset)
    opt = _maximize(
        value_grad, x0,
        maxiter=opts.maxiter, gtol=opts.gtol, step_tol=opts.step_tol,
    )

    grad_fn = lambda x: value_grad(x, True)[1]
    hessian = _fd_hessian(grad_fn, opt.x)
    _, scores = individual_scores(design, drawset, opt.x)

    try:
        if opts.covariance == "hessian":
            cov = covariance_hessian(hessian)
        elif opts.covariance == "robust":
            cov = covariance_robust(hessian, scores)
        elif opts.covariance == "cluster":
            if opts.cluster is None:
                raise ValueError("covariance='cluster' needs a cluster mapping")
            ids = [
                opts.cluster[block.individual_id]
                for block in design.ds.individuals
            ]
            cov = covariance_cluster(hessian, scores, ids)
        else:
            raise ValueError(f"unknown covariance kind {opts.covariance!r}")
    except SingularHessian:
        if opt.converged:
            raise
        cov = np.full((design.n_params, design.n_params), np.nan)

    theta = design.unpack(opt.x)
    reported = opt.x.copy()
    reported[design.scale_slice] = np.abs(reported[design.scale_slice])

    diag = np.clip(np.diag(cov), 0.0, None)
    se = np.sqrt(diag)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0.0, reported / se, np.nan)
    p = np.array([math.erfc(abs(v) / math.sqrt(2.0)) if np.isfinite(v) else np.nan
                  for v in z])
    z_crit = inverse_normal_cdf(0.5 + opts.level / 200.0)

    result = FitResult(
        spec=design.spec,
        param_names=design.param_names,
        alternative_labels=design.ds.alternative_labels,
        theta_hat=theta,
        theta=opt.x,
        estimates=reported,
        loglik=opt.loglik,
        n_individuals=design.ds.n_individuals,
        n_situations=design.ds.n_situations,
        n_parameters=design.n_params,
        covariance=cov,
        covariance_kind=opts.covariance,
        std_errors=se,
        z_stats=z,
        p_values=p,
        ci_lower=reported - z_crit * se,
        ci_upper=reported + z_crit * se,
        level=opts.level,
        converged=opt.converged,
        iterations=opt.iterations,
        gradient_norm=float(np.max(np.abs(opt.grad))),
        nrep=nrep,
        burn=burn,
    )
    if not opt.converged:
        raise NonConvergence(
            f"no convergence after {opt.iterations} iterations "
            f"(max |gradient| = {result.gradient_norm:.3e})",
            result=result,
        )
    return result


# -- serialization --------------------------------------------------------------


def fit_result_to_json(fit: FitResult) -> dict:
    """JSON-ready dict; includes the model block needed to reload the fit."""
    return {
        "estimates": [
            {
                "name": name,
                "coef": float(fit.estimates[i]),
                "se": float(fit.std_errors[i]),
                "z": _nan_to_none(fit.z_stats[i]),
                "p": _nan_to_none(fit.p_values[i]),
                "ci_low": float(fit.ci_lower[i]),
                "ci_high": float(fit.ci_upper[i]),
            }
            for i, name in enumerate(fit.param_names)
        ],
        "loglik": fit.loglik,
        "nrep": fit.nrep,
        "burn": fit.burn,
        "converged": fit.converged,
        "covariance_kind": fit.covariance_kind,
        "covariance": [[_nan_to_none(v) for v in row] for row in fit.covariance],
        "model": {
            "fixed_attrs": list(fit.spec.fixed_attrs),
            "random_attrs": list(fit.spec.random_attrs),
            "ln_count": fit.spec.ln_count,
            "use_asc": fit.spec.use_asc,
            "base_alternative": fit.spec.base_alternative,
            "alternative_labels": list(fit.alternative_labels),
        },
        "theta": [float(v) for v in fit.theta],
        "level": fit.level,
        "n_individuals": fit.n_individuals,
        "n_situations": fit.n_situations,
        "n_parameters": fit.n_parameters,
        "iterations": fit.iterations,
        "gradient_norm": fit.gradient_norm,
    }


def _nan_to_none(value):
    value = float(value)
    return None if math.isnan(value) else value


def fit_result_from_json(payload: dict) -> FitResult:
    """Rebuild a FitResult from :func:`fit_result_to_json` output."""
    model = payload["model"]
    spec = ModelSpec(
        fixed_attrs=tuple(model["fixed_attrs"]),
        random_attrs=tuple(model["random_attrs"]),
        ln_count=model["ln_count"],
        use_asc=model["use_asc"],
        base_alternative=model["base_alternative"],
    )
    theta = np.array(payload["theta"], dtype=float)
    labels = tuple(model["alternative_labels"])
    n_asc = (len(labels) - 1) if spec.use_asc else 0
    theta_hat = ParameterVector.unpack(theta, spec.n_fixed, spec.n_random, n_asc)
    rows = payload["estimates"]
    cov = np.array(
        [[np.nan if v is None else v for v in row] for row in payload["covariance"]],
        dtype=float,
    )

    def col(key):
        return np.array(
            [np.nan if r[key] is None else float(r[key]) for r in rows]
        )

    return FitResult(
        spec=spec,
        param_names=tuple(r["name"] for r in rows),
        alternative_labels=labels,
        theta_hat=theta_hat,
        theta=theta,
        estimates=col("coef"),
        loglik=float(payload["loglik"]),
        n_individuals=int(payload["n_individuals"]),
        n_situations=int(payload["n_situations"]),
        n_parameters=int(payload["n_parameters"]),
        covariance=cov,
        covariance_kind=payload["covariance_kind"],
        std_errors=col("se"),
        z_stats=col("z"),
        p_values=col("p"),
        ci_lower=col("ci_low"),
        ci_upper=col("ci_high"),
        level=float(payload["level"]),
        converged=bool(payload["converged"]),
        iterations=int(payload["iterations"]),
        gradient_norm=float(payload["gradient_norm"]),
        nrep=int(payload["nrep"]),
        burn=int(payload["burn"]),
    )


def save_fit_json(fit: FitResult, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(fit_result_to_json(fit), handle, indent=1, sort_keys=True)
        handle.write("\n")


def load_fit_json(path) -> FitResult:
    with open(path, encoding="utf-8") as handle:
        return fit_result_from_json(json.load(handle))
