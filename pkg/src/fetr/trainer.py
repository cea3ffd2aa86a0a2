"""Block coordinate minimization of the bounded-spectrum multitask objective.

The full objective over (W, Sigma1, Sigma2) is

    sum_i ||y_i - X_i w_i||^2 + eta tr(Sigma1 W Sigma2 W^T)
        - eta (m log|Sigma1| + d log|Sigma2|)

subject to l I <= Sigma1, Sigma2 <= u I. Each outer iteration exactly
minimizes the W block (choice of solver), then the Sigma1 block, then the
Sigma2 block, so the objective trace is nonincreasing; a violation beyond
floating-point slack raises, loudly.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import covariance, wsolvers
from .datatypes import (
    CovariancePair,
    FetrConfig,
    MultitaskDataset,
    TracePoint,
    TrainReport,
    WeightMatrix,
    WSolver,
    as_weight_array,
    validate_dataset,
)
from .exceptions import (
    DataValidationError,
    DegenerateMetricError,
    DomainError,
    InternalConsistencyError,
    NumericError,
)
from .linalg import symmetrize

# Tolerated objective increase between consecutive trace points, relative.
MONOTONE_SLACK = 1e-10


@dataclass(frozen=True)
class FetrModel:
    """A fitted model: weights, precision matrices, config and run report."""

    weights: WeightMatrix
    covariances: CovariancePair
    config: FetrConfig
    report: TrainReport

    def with_metrics(self, metrics: dict[str, float]) -> "FetrModel":
        return replace(self, report=replace(self.report, metrics=dict(metrics)))


def _loss(w: np.ndarray, data: MultitaskDataset) -> float:
    if data.shared_instances:
        r = data.targets() - data.design() @ w
        return float(np.sum(r * r))
    total = 0.0
    for i, task in enumerate(data.tasks):
        r = task.y - task.x @ w[:, i]
        total += float(r @ r)
    return total


def _logdet_pd(s, name: str) -> float:
    """Sum of log-eigenvalues; raises unless s is symmetric positive definite."""
    s = np.asarray(s, dtype=float)
    if not np.isfinite(s).all():
        raise NumericError(f"{name} has non-finite entries")
    eigs = np.linalg.eigvalsh(symmetrize(s))
    if eigs[0] <= 0.0:
        raise DomainError(f"{name} is not positive definite (min eigenvalue {eigs[0]:.3e})")
    return float(np.sum(np.log(eigs)))


def fetr_objective(w, sigma1, sigma2, data: MultitaskDataset, eta: float) -> float:
    """Objective value at (W, Sigma1, Sigma2).

    The regularizer is computed in trace form,
    eta tr(Sigma1 W Sigma2 W^T) - eta (m log|Sigma1| + d log|Sigma2|),
    which equals eta ||Sigma1^{1/2} W Sigma2^{1/2}||_F^2 minus the
    log-determinant terms but avoids matrix square roots. Log-determinants
    are sums of log-eigenvalues; non-PD input raises ``DomainError``.
    """
    w = as_weight_array(w)
    d, m = w.shape
    logdets = m * _logdet_pd(sigma1, "sigma1") + d * _logdet_pd(sigma2, "sigma2")
    trace_term = float(np.sum((np.asarray(sigma1) @ w @ np.asarray(sigma2)) * w))
    return _loss(w, data) + eta * trace_term - eta * logdets


def mtfrl_objective_unconstrained(w, sigma1, sigma2, data: MultitaskDataset, eta: float) -> float:
    """Objective of the original unconstrained formulation.

    Identical formula to :func:`fetr_objective`; without spectrum bounds it
    is unbounded below (send Sigma = sigma I with sigma to infinity), which
    is why the bounded variant exists. Kept as an evaluation function to
    make that failure observable.
    """
    return fetr_objective(w, sigma1, sigma2, data, eta)


def fit_fetr(data, config: FetrConfig, budget_seconds: float | None = None) -> FetrModel:
    """Run block coordinate minimization until the objective stalls.

    Starts from Sigma1 = Sigma2 = clamp(1) I and W = 0, cycles
    W -> Sigma1 -> Sigma2 recording the objective after every block, and
    stops when |obj_t - obj_{t-1}| <= rel_obj_tol * (1 + |obj_{t-1}|)
    across one outer iteration, when ``max_outer_iters`` is reached, or
    when the optional wall-clock budget runs out.
    """
    data = validate_dataset(data)
    eta, l, u = config.eta, config.l, config.u
    gram = wsolvers.GramCache(data)
    method = wsolvers.resolve_w_solver(config.w_solver, gram.shared, gram.d * gram.m)
    schedule = (
        wsolvers.step_schedule(gram.xtx_eigs, eta, l, u)
        if method == WSolver.GRADIENT_DESCENT
        else None
    )

    init_scale = min(max(1.0, l), u)
    sigma1 = init_scale * np.eye(data.d)
    sigma2 = init_scale * np.eye(data.m)
    w = np.zeros((data.d, data.m))

    start = time.perf_counter()
    evals = 0
    trace: list[TracePoint] = []
    per_block = {"w": 0.0, "sigma1": 0.0, "sigma2": 0.0}
    events: list[str] = []

    def record(iteration: int, block: str) -> float:
        nonlocal evals
        value = fetr_objective(w, sigma1, sigma2, data, eta)
        evals += 1
        if trace:
            prev = trace[-1].objective
            if value > prev + MONOTONE_SLACK * (1.0 + abs(prev)):
                raise InternalConsistencyError(
                    f"objective increased from {prev!r} to {value!r} after "
                    f"{block} block of iteration {iteration}"
                )
        trace.append(
            TracePoint(iteration, block, time.perf_counter() - start, value, evals)
        )
        return value

    prev_outer = record(0, "init")
    converged = False
    iterations = 0
    for outer in range(1, config.max_outer_iters + 1):
        if budget_seconds is not None and time.perf_counter() - start > budget_seconds:
            events.append("budget exhausted")
            break
        t0 = time.perf_counter()
        w = wsolvers.solve_w(
            gram,
            sigma1,
            sigma2,
            eta,
            l,
            u,
            method=method,
            schedule=schedule,
            w0=w,  # warm start matters only for gradient descent
            gd_max_iters=config.gd_max_iters,
            gd_rel_tol=config.gd_rel_tol,
        ).matrix
        per_block["w"] += time.perf_counter() - t0
        record(outer, "w")

        t0 = time.perf_counter()
        sigma1 = covariance.minimize_sigma1(w, sigma2, l, u)
        per_block["sigma1"] += time.perf_counter() - t0
        record(outer, "sigma1")

        t0 = time.perf_counter()
        sigma2 = covariance.minimize_sigma2(w, sigma1, l, u)
        per_block["sigma2"] += time.perf_counter() - t0
        value = record(outer, "sigma2")

        iterations = outer
        if abs(value - prev_outer) <= config.rel_obj_tol * (1.0 + abs(prev_outer)):
            converged = True
            break
        prev_outer = value

    report = TrainReport(
        trace=tuple(trace),
        converged=converged,
        iterations=iterations,
        per_block_seconds=per_block,
        objective_evals=evals,
        events=tuple(events),
    )
    return FetrModel(
        weights=WeightMatrix(w),
        covariances=CovariancePair(sigma1=sigma1, sigma2=sigma2, l=l, u=u),
        config=config,
        report=report,
    )


def predict(w, x_new) -> np.ndarray:
    """Predictions X_new W; a single feature vector yields one row of tasks."""
    w = as_weight_array(w)
    x = np.asarray(x_new, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != w.shape[0]:
        raise DataValidationError(
            f"feature dimension mismatch: inputs have {x.shape[1]}, weights expect {w.shape[0]}"
        )
    out = x @ w
    return out[0] if single else out


def _per_task_pairs(y_true, y_pred):
    # 2-D arrays carry tasks in columns; any other sequence is treated as
    # one entry per task (lengths may differ across tasks)
    if isinstance(y_true, np.ndarray) and y_true.ndim == 2:
        yt = np.asarray(y_true, dtype=float)
        yp = np.asarray(y_pred, dtype=float)
        if yp.shape != yt.shape:
            raise DataValidationError(f"shape mismatch: {yt.shape} vs {yp.shape}")
        return [(yt[:, i], yp[:, i]) for i in range(yt.shape[1])]
    pairs = []
    for t, p in zip(y_true, y_pred, strict=True):
        t = np.asarray(t, dtype=float).reshape(-1)
        p = np.asarray(p, dtype=float).reshape(-1)
        if t.shape != p.shape:
            raise DataValidationError(f"length mismatch: {t.shape} vs {p.shape}")
        pairs.append((t, p))
    return pairs


def metrics(y_true, y_pred, kind: str = "mse") -> tuple[np.ndarray, float]:
    """Per-task error metric and its mean over tasks.

    ``kind`` is "mse" (mean squared residual) or "nmse" (MSE divided by the
    population variance of the task's targets). Targets may be given as an
    n x m matrix or as per-task sequences of unequal lengths. NMSE with a
    zero-variance task raises ``DegenerateMetricError``.
    """
    kind = kind.lower()
    if kind not in ("mse", "nmse"):
        raise ValueError(f"unknown metric kind {kind!r}")
    values = []
    for i, (t, p) in enumerate(_per_task_pairs(y_true, y_pred)):
        mse = float(np.mean((t - p) ** 2))
        if kind == "nmse":
            var = float(np.var(t))
            if var == 0.0:
                raise DegenerateMetricError(f"task {i} has zero target variance")
            mse /= var
        values.append(mse)
    per_task = np.asarray(values)
    return per_task, float(per_task.mean())
