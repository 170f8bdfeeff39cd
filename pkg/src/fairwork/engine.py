"""Concave maximization over the two-layer supply polytope, with duals.

Two solver routes live here:

* maximize: the smooth concave programs (log-surplus objectives, optional
  smoothness penalties) solved through cvxpy conic backends.  Multipliers for
  both supply layers come back with the solution, and the KKT residuals are
  recomputed independently in numpy from this module's own value/gradient
  oracles, so a converged flag never rests on the backend's say-so alone.
* maxmin_linear / probe_component_max: the linear max-min machinery used by
  the positivity check and by every leximin stage, built on scipy's HiGHS
  simplex.  Equal-weight stages collapse to a single LP; unequal weights use
  bisection on the common log-scale value with a feasibility LP per probe.

All allocations are dense (n_buyers, n_items, periods) tensors that are
exactly zero off the valuation support.
"""

from __future__ import annotations

import contextlib
import math
import os
import sys
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import core
from .core import InstanceArrays, MarketInstance, arrays, surplus_per_period
from .errors import DomainGuardViolated, Infeasible

KKT_TOL = 1e-8  # default bound on stationarity / feasibility / complementarity
SUPPORT_TOL = 1e-5  # an allocation entry above this counts as "in the support"
TIE_TOL = 1e-7  # tie tolerance on weighted log-surplus when collecting tight sets
BISECTION_TOL = 1e-9  # max-min bisection tolerance on the log-scale value
PIN_TOL = 1e-6  # a penalized transition this close to zero is retried as an equality

_CONIC_SOLVERS = ("CLARABEL", "SCS")


# ---------------------------------------------------------------------------
# objective specifications


@dataclass(frozen=True)
class ObjectiveSpec:
    """A log-surplus objective over one instance, with oracles.

    The objective is sum_i weights[i] * sum over the buyer's log terms (one
    aggregate term per buyer, or one per period), minus gamma times a
    smoothness penalty on consecutive-period allocation changes.  The value
    and gradient oracles evaluate the printed objective directly; the engine
    cross-checks its duals against them.
    """

    inst: MarketInstance
    kind: str  # program tag, e.g. "eg-demand"
    per_period: bool  # per-(buyer, period) log terms vs one per buyer
    weights: np.ndarray  # (n_buyers,) weight on each buyer's log term(s)
    gamma: float = 0.0
    penalty: str | None = None  # "absdev" | "kl"
    kl_eps: float = 0.0

    def _log_args(self, x: np.ndarray) -> np.ndarray:
        pp = surplus_per_period(self.inst, x)
        return pp if self.per_period else pp.sum(axis=1, keepdims=True)

    def domain_margin(self, x: np.ndarray) -> float:
        """Smallest log argument; the guard requires it strictly positive."""
        return float(self._log_args(x).min())

    def value(self, x: np.ndarray) -> float:
        args = self._log_args(x)
        if (args <= 0).any():
            return -np.inf
        v = float((self.weights[:, None] * np.log(args)).sum())
        if self.gamma > 0.0 and self.penalty is not None:
            v -= self.gamma * self.penalty_value(x)
        return v

    def grad_log_part(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the log-surplus part alone, dense (n, m, T)."""
        a = arrays(self.inst)
        args = self._log_args(x)
        if (args <= 0).any():
            raise DomainGuardViolated("gradient requested outside the log domain")
        g = np.zeros((a.n, a.m, a.T))
        if self.per_period:
            g = self.weights[:, None, None] * a.values[:, :, None] / args[:, None, :]
        else:
            g = (self.weights / args[:, 0])[:, None, None] * a.values[:, :, None]
        return g * a.adjacency[:, :, None]

    def grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the full objective (defined a.e. for penalties)."""
        g = self.grad_log_part(x)
        if self.gamma > 0.0 and self.penalty is not None:
            g = g - self.gamma * self._penalty_grad(x)
        return g

    def total_variation(self, x: np.ndarray) -> float:
        if self.inst.periods < 2:
            return 0.0
        return float(np.abs(np.diff(x, axis=2)).sum())

    def penalty_value(self, x: np.ndarray) -> float:
        """Penalty under this spec's kind (0 when no penalty applies)."""
        if self.penalty is None or self.inst.periods < 2:
            return 0.0
        d = np.diff(x, axis=2)
        if self.penalty == "absdev":
            return float(np.abs(d).sum())
        if self.penalty == "kl":
            nxt = x[:, :, 1:] + self.kl_eps
            prv = x[:, :, :-1] + self.kl_eps
            r1 = nxt * np.log(nxt / prv)
            r2 = prv * np.log(prv / nxt)
            return float(np.maximum(r1, r2).sum())
        raise ValueError(f"unknown penalty {self.penalty!r}")

    def _penalty_grad(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros_like(x)
        if self.penalty is None or self.inst.periods < 2:
            return g
        if self.penalty == "absdev":
            s = np.sign(np.diff(x, axis=2))
            g[:, :, 1:] += s
            g[:, :, :-1] -= s
            return g
        if self.penalty == "kl":
            nxt = x[:, :, 1:] + self.kl_eps
            prv = x[:, :, :-1] + self.kl_eps
            ratio = nxt / prv
            r1 = nxt * np.log(ratio)
            r2 = prv * np.log(1.0 / ratio)
            use1 = r1 >= r2
            # branch gradients: d r1 = (log ratio + 1, -ratio); d r2 = (-1/ratio, log(1/ratio) + 1)
            d_nxt = np.where(use1, np.log(ratio) + 1.0, -1.0 / ratio)
            d_prv = np.where(use1, -ratio, np.log(1.0 / ratio) + 1.0)
            g[:, :, 1:] += d_nxt
            g[:, :, :-1] += d_prv
            return g
        raise ValueError(f"unknown penalty {self.penalty!r}")


def central_difference_gradient(
    spec: ObjectiveSpec, x: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    """Central finite differences of spec.value on the valuation support."""
    a = arrays(spec.inst)
    g = np.zeros_like(x)
    for e in range(a.n_edges):
        i, j = a.edge_buyer[e], a.edge_item[e]
        for t in range(a.T):
            step = h * max(1.0, abs(x[i, j, t]))
            xp = x.copy()
            xp[i, j, t] += step
            xm = x.copy()
            xm[i, j, t] -= step
            g[i, j, t] = (spec.value(xp) - spec.value(xm)) / (2.0 * step)
    return g


# ---------------------------------------------------------------------------
# conic solve with independent KKT verification


@dataclass
class SolveResult:
    """Primal solution, supply-layer duals, and independently computed residuals."""

    x: np.ndarray  # (n, m, T), exactly zero off the valuation support
    lambda_period: np.ndarray  # (m, T) per-period supply duals
    lambda_total: np.ndarray  # (m,) overall supply duals
    objective_value: float
    kkt: dict[str, float]
    iterations: int
    converged: bool
    solver_name: str
    trace: list[str] = field(default_factory=list)
    aux: np.ndarray | None = None  # (E, T-1) penalty epigraph values, if any


def _edge_matrices(a: InstanceArrays) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Item-incidence (m, E) and value-weighted buyer-incidence (n, E)."""
    ones = np.ones(a.n_edges)
    items = sp.csr_matrix(
        (ones, (a.edge_item, np.arange(a.n_edges))), shape=(a.m, a.n_edges)
    )
    buyers = sp.csr_matrix(
        (a.edge_value, (a.edge_buyer, np.arange(a.n_edges))), shape=(a.n, a.n_edges)
    )
    return items, buyers


def _dense_allocation(a: InstanceArrays, xe: np.ndarray) -> np.ndarray:
    x = np.zeros((a.n, a.m, a.T))
    x[a.edge_buyer, a.edge_item, :] = np.maximum(xe, 0.0)
    return x


def _solver_options(name: str) -> dict:
    if name == "CLARABEL":
        return {
            "tol_gap_abs": 1e-12,
            "tol_gap_rel": 1e-12,
            "tol_feas": 1e-12,
            "max_iter": 200,
        }
    if name == "SCS":
        return {"eps_abs": 1e-11, "eps_rel": 1e-11, "max_iters": 200_000}
    return {}


def maximize(
    spec: ObjectiveSpec,
    inst: MarketInstance,
    tol: float = KKT_TOL,
    seed: int = 0,
    variation_band: float | None = None,
) -> SolveResult:
    """Maximize spec over the supply polytope and verify the KKT system.

    Args:
        spec: objective specification built for inst.
        inst: the market instance (budgets already resolved).
        tol: bound each KKT residual must meet for converged=True.
        seed: recorded for reproducibility; the backends are deterministic,
            so re-running with any seed returns the same result.
        variation_band: optional r in (0, 1]; adds hard per-transition
            constraints r * x_t <= x_{t+1} <= (2 - r) * x_t.

    Returns:
        SolveResult with duals for both supply layers and residuals computed
        from this module's own oracles.

    Raises:
        DomainGuardViolated: no allocation makes every log argument positive.
        Infeasible: the variation band admits no feasible allocation.
    """
    import cvxpy as cp

    a = arrays(inst)
    trace = [f"maximize kind={spec.kind} seed={seed} tol={tol:g}"]
    if a.n_edges == 0:
        raise DomainGuardViolated("instance has no positive-valuation pairs")

    items_inc, buyers_val = _edge_matrices(a)
    X = cp.Variable((a.n_edges, a.T), nonneg=True)
    load = cp.Constant(items_inc) @ X  # (m, T)
    constraints = [load <= a.supply_period]
    total_con = None
    if a.T > 1:
        total_con = cp.sum(load, axis=1) <= a.supply_total
        constraints.append(total_con)

    U = cp.Constant(buyers_val) @ X  # (n, T) value received per period
    if spec.per_period:
        logs = cp.sum(
            cp.multiply(np.broadcast_to(spec.weights[:, None], (a.n, a.T)), cp.log(U - a.demand))
        )
    else:
        logs = cp.sum(cp.multiply(spec.weights, cp.log(cp.sum(U, axis=1) - a.demand.sum(axis=1))))
    objective = logs

    diff = None
    pen_cons: list = []
    Z = None
    if spec.gamma > 0.0 and spec.penalty is not None and a.T > 1:
        Z = cp.Variable((a.n_edges, a.T - 1))
        diff = X[:, 1:] - X[:, :-1]
        if spec.penalty == "absdev":
            pen_cons = [diff <= Z, -diff <= Z]
        elif spec.penalty == "kl":
            nxt = X[:, 1:] + spec.kl_eps
            prv = X[:, :-1] + spec.kl_eps
            pen_cons = [cp.rel_entr(nxt, prv) <= Z, cp.rel_entr(prv, nxt) <= Z]
        else:
            raise ValueError(f"unknown penalty {spec.penalty!r}")
        constraints.extend(pen_cons)
        objective = objective - spec.gamma * cp.sum(Z)

    band_cons: list = []
    if variation_band is not None and a.T > 1:
        r = float(variation_band)
        band_cons = [
            X[:, 1:] - (2.0 - r) * X[:, :-1] <= 0,
            r * X[:, :-1] - X[:, 1:] <= 0,
        ]
        constraints.extend(band_cons)

    problem = cp.Problem(cp.Maximize(objective), constraints)

    def harvest(solved: "cp.Problem", backend: str) -> SolveResult | None:
        """Build a SolveResult from the shared variables after a solve."""
        if X.value is None or solved.status in ("infeasible", "unbounded"):
            trace.append(f"{backend}: status={solved.status}")
            return None
        xe = np.asarray(X.value)
        x = _dense_allocation(a, xe)
        lam_per = np.maximum(np.asarray(constraints[0].dual_value), 0.0).reshape(a.m, a.T)
        lam_tot = (
            np.maximum(np.asarray(total_con.dual_value), 0.0).reshape(a.m)
            if total_con is not None
            else np.zeros(a.m)
        )
        pen_duals = [np.maximum(np.asarray(c.dual_value), 0.0) for c in pen_cons]
        band_duals = [np.maximum(np.asarray(c.dual_value), 0.0) for c in band_cons]
        kkt = _kkt_residuals(
            spec, a, x, xe, lam_per, lam_tot,
            Z.value if Z is not None else None,
            pen_duals, band_duals, variation_band,
        )
        iters = getattr(solved.solver_stats, "num_iters", None) or 0
        result = SolveResult(
            x=x,
            lambda_period=lam_per,
            lambda_total=lam_tot,
            objective_value=spec.value(x),
            kkt=kkt,
            iterations=int(iters),
            converged=all(v <= tol for v in kkt.values()),
            solver_name=backend,
            trace=trace,
            aux=np.asarray(Z.value) if Z is not None and Z.value is not None else None,
        )
        trace.append(
            f"{backend}: status={solved.status} iters={iters} "
            f"stat={kkt['stationarity']:.2e} feas={kkt['primal_infeasibility']:.2e} "
            f"comp={kkt['complementarity']:.2e}"
        )
        return result

    best: SolveResult | None = None
    statuses = []
    for name in _CONIC_SOLVERS:
        try:
            with warnings.catch_warnings(), _muted_stdout():
                # the backend's own accuracy doubts (python warnings and
                # native chatter alike) are superseded by the independent
                # residual check below
                warnings.simplefilter("ignore", UserWarning)
                problem.solve(solver=name, **_solver_options(name))
        except Exception as exc:  # noqa: BLE001 — fall through to the next backend
            trace.append(f"{name}: raised {type(exc).__name__}")
            statuses.append("error")
            continue
        statuses.append(problem.status)
        result = harvest(problem, name)
        if result is None:
            continue
        if result.converged:
            return result
        if best is None or max(result.kkt.values()) < max(best.kkt.values()):
            best = result

    if best is not None and not best.converged:
        best = _polish_duals(spec, a, best, variation_band, tol)

    if best is not None and not best.converged and Z is not None:
        # Kinked penalties leave the backend unable to land transitions at
        # exactly zero; pin the near-zero ones as hard equalities, re-solve,
        # and let the dual polish pick the subgradient split.  The residual
        # check still runs against the unpinned program, so a wrong pin can
        # only leave converged=False, never fake a certificate.
        xe = best.x[a.edge_buyer, a.edge_item, :]
        pe, pk = np.nonzero(np.abs(xe[:, 1:] - xe[:, :-1]) <= PIN_TOL)
        if pe.size:
            pinned = cp.Problem(
                cp.Maximize(objective),
                constraints + [X[pe, pk + 1] == X[pe, pk]],
            )
            try:
                with warnings.catch_warnings(), _muted_stdout():
                    warnings.simplefilter("ignore", UserWarning)
                    pinned.solve(solver="CLARABEL", **_solver_options("CLARABEL"))
            except Exception as exc:  # noqa: BLE001 — keep the unpinned best
                trace.append(f"pinned resolve: raised {type(exc).__name__}")
            else:
                resolved = harvest(pinned, "CLARABEL+pins")
                if resolved is not None:
                    resolved = _polish_duals(spec, a, resolved, variation_band, tol)
                    if max(resolved.kkt.values()) < max(best.kkt.values()):
                        best = resolved

    if best is not None:
        if best.converged:
            return best
        best.trace.append("no backend met the KKT tolerance; returning best effort")
        return best

    # Nothing solved: separate a violated domain guard from band infeasibility.
    check = core.check_assumption_pos(inst, per_period=spec.per_period)
    if check.margin <= core.POSITIVE_SURPLUS_TOL:
        raise DomainGuardViolated(
            "no allocation gives strictly positive surplus everywhere "
            f"(best margin {check.margin:.3e} at {check.min_components})",
            margin=check.margin,
        )
    if variation_band is not None:
        raise Infeasible(
            f"variation band {variation_band} admits no feasible allocation",
            field="--variation-band",
        )
    raise Infeasible(f"conic backends failed: statuses {statuses}")


def _kkt_residuals(
    spec: ObjectiveSpec,
    a: InstanceArrays,
    x: np.ndarray,
    xe: np.ndarray,
    lam_per: np.ndarray,
    lam_tot: np.ndarray,
    z: np.ndarray | None,
    pen_duals: list[np.ndarray],
    band_duals: list[np.ndarray],
    variation_band: float | None,
) -> dict[str, float]:
    """Stationarity, primal feasibility, and complementarity from the oracles."""
    ge = spec.grad_log_part(x)[a.edge_buyer, a.edge_item, :]  # (E, T)
    pe = (lam_per + lam_tot[:, None])[a.edge_item, :]  # (E, T)
    lag = ge - pe

    stat_parts = [0.0]
    comp_parts = [0.0]
    feas_parts = [0.0]

    if z is not None and spec.penalty is not None:
        d = xe[:, 1:] - xe[:, :-1]
        if spec.penalty == "absdev":
            mu_p, mu_m = pen_duals
            lag[:, 1:] -= mu_p - mu_m
            lag[:, :-1] += mu_p - mu_m
            stat_parts.append(float(np.abs(mu_p + mu_m - spec.gamma).max()))
            comp_parts.append(float(np.abs(mu_p * (d - z)).max()))
            comp_parts.append(float(np.abs(mu_m * (-d - z)).max()))
            feas_parts.append(float(np.maximum(np.abs(d) - z, 0.0).max()))
        else:  # kl epigraph rows
            mu_1, mu_2 = pen_duals
            nxt = xe[:, 1:] + spec.kl_eps
            prv = xe[:, :-1] + spec.kl_eps
            ratio = nxt / prv
            r1 = nxt * np.log(ratio)
            r2 = prv * np.log(1.0 / ratio)
            lag[:, 1:] -= mu_1 * (np.log(ratio) + 1.0) + mu_2 * (-prv / nxt)
            lag[:, :-1] -= mu_1 * (-ratio) + mu_2 * (np.log(1.0 / ratio) + 1.0)
            stat_parts.append(float(np.abs(mu_1 + mu_2 - spec.gamma).max()))
            comp_parts.append(float(np.abs(mu_1 * (r1 - z)).max()))
            comp_parts.append(float(np.abs(mu_2 * (r2 - z)).max()))
            feas_parts.append(float(np.maximum(np.maximum(r1, r2) - z, 0.0).max()))

    if band_duals and variation_band is not None:
        nu_p, nu_m = band_duals
        r = float(variation_band)
        # rows: x_{t+1} - (2-r) x_t <= 0 and r x_t - x_{t+1} <= 0
        lag[:, 1:] -= nu_p - nu_m
        lag[:, :-1] -= -(2.0 - r) * nu_p + r * nu_m
        g_p = xe[:, 1:] - (2.0 - r) * xe[:, :-1]
        g_m = r * xe[:, :-1] - xe[:, 1:]
        comp_parts.append(float(np.abs(nu_p * g_p).max()))
        comp_parts.append(float(np.abs(nu_m * g_m).max()))
        feas_parts.append(float(np.maximum(g_p, 0.0).max()))
        feas_parts.append(float(np.maximum(g_m, 0.0).max()))

    stat_parts.append(float(np.maximum(lag, 0.0).max()))  # one-sided everywhere
    support = xe > SUPPORT_TOL
    if support.any():
        stat_parts.append(float(np.abs(lag[support]).max()))

    load = x.sum(axis=0)  # (m, T)
    slack_per = a.supply_period - load
    feas_parts.append(float(np.maximum(-slack_per, 0.0).max()))
    comp_parts.append(float(np.abs(lam_per * slack_per).max()))
    if a.T > 1:
        slack_tot = a.supply_total - load.sum(axis=1)
        feas_parts.append(float(np.maximum(-slack_tot, 0.0).max()))
        comp_parts.append(float(np.abs(lam_tot * slack_tot).max()))
    feas_parts.append(float(np.maximum(-xe, 0.0).max()))

    return {
        "stationarity": max(stat_parts),
        "primal_infeasibility": max(feas_parts),
        "complementarity": max(comp_parts),
    }


def _flush_all_stdio() -> None:
    """Flush Python's and the C runtime's stdout buffers."""
    try:
        sys.stdout.flush()
    except (AttributeError, ValueError):
        pass
    try:
        import ctypes

        ctypes.CDLL(None).fflush(None)
    except Exception:  # noqa: BLE001 — flushing is best-effort
        pass


@contextlib.contextmanager
def _muted_stdout():
    """Silence native-library writes to fd 1 for the duration of the block.

    Native solvers print quality chatter with C stdio, so both the redirect
    and the restore must flush the C buffers or suppressed text leaks out
    after the block.
    """
    _flush_all_stdio()
    try:
        saved = os.dup(1)
    except OSError:  # no usable fd 1; nothing to mute
        yield
        return
    devnull = os.open(os.devnull, os.O_WRONLY)
    try:
        os.dup2(devnull, 1)
        yield
    finally:
        _flush_all_stdio()
        os.dup2(saved, 1)
        os.close(saved)
        os.close(devnull)


def _polish_duals(
    spec: ObjectiveSpec,
    a: InstanceArrays,
    best: SolveResult,
    variation_band: float | None,
    tol: float,
) -> SolveResult:
    """Re-fit every multiplier layer against the KKT system at a fixed primal.

    Backends occasionally return a primal far more accurate than its duals:
    near-duplicate rows at flattened transitions leave the dual system
    ill-conditioned, so the reported multipliers can carry orders more error
    than the allocation.  With the primal pinned, every stationarity and
    complementarity residual is linear in the multipliers, which makes the
    tightest certificate a min-max LP.  The polished layers replace the
    backend's only when the independently recomputed residuals improve.
    """
    xe = best.x[a.edge_buyer, a.edge_item, :]
    E, T = xe.shape
    z = best.aux
    ge = spec.grad_log_part(best.x)[a.edge_buyer, a.edge_item, :]
    if not np.isfinite(ge).all():
        return best

    has_pen = spec.penalty is not None and z is not None and T > 1
    has_band = variation_band is not None and T > 1
    n_per = a.m * T
    n_tot = a.m if T > 1 else 0
    K = E * (T - 1) if has_pen else 0
    nb = E * (T - 1) if has_band else 0
    off_per = 1  # variable 0 is the minimized residual bound
    off_tot = off_per + n_per
    off_p = off_tot + n_tot
    off_b = off_p + 2 * K
    n_var = off_b + 2 * nb

    if has_pen and spec.penalty != "absdev":
        nxt = xe[:, 1:] + spec.kl_eps
        prv = xe[:, :-1] + spec.kl_eps
        ratio = nxt / prv

    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    rhs: list[float] = []
    nrow = 0

    def add(idx: list[int], coef: list[float], bound: float) -> None:
        nonlocal nrow
        rows.extend([nrow] * (len(idx) + 1))
        cols.extend(idx + [0])
        vals.extend(coef + [-1.0])
        rhs.append(bound)
        nrow += 1

    band_r = float(variation_band) if variation_band is not None else 0.0
    for e in range(E):
        j = int(a.edge_item[e])
        for t in range(T):
            idx = [off_per + j * T + t]
            coef = [-1.0]
            if T > 1:
                idx.append(off_tot + j)
                coef.append(-1.0)
            if has_pen:
                if spec.penalty == "absdev":
                    if t >= 1:
                        k = t - 1
                        idx += [off_p + e * (T - 1) + k, off_p + K + e * (T - 1) + k]
                        coef += [-1.0, 1.0]
                    if t <= T - 2:
                        idx += [off_p + e * (T - 1) + t, off_p + K + e * (T - 1) + t]
                        coef += [1.0, -1.0]
                else:
                    if t >= 1:
                        k = t - 1
                        idx += [off_p + e * (T - 1) + k, off_p + K + e * (T - 1) + k]
                        coef += [
                            -(math.log(ratio[e, k]) + 1.0),
                            prv[e, k] / nxt[e, k],
                        ]
                    if t <= T - 2:
                        idx += [off_p + e * (T - 1) + t, off_p + K + e * (T - 1) + t]
                        coef += [
                            ratio[e, t],
                            -(math.log(1.0 / ratio[e, t]) + 1.0),
                        ]
            if has_band:
                if t >= 1:
                    k = t - 1
                    idx += [off_b + e * (T - 1) + k, off_b + nb + e * (T - 1) + k]
                    coef += [-1.0, 1.0]
                if t <= T - 2:
                    idx += [off_b + e * (T - 1) + t, off_b + nb + e * (T - 1) + t]
                    coef += [2.0 - band_r, -band_r]
            add(idx, coef, -float(ge[e, t]))  # gradient of the Lagrangian <= bound
            if xe[e, t] > SUPPORT_TOL:  # and = 0 within bound on the support
                add(idx, [-c for c in coef], float(ge[e, t]))

    load = best.x.sum(axis=0)
    slack_per = np.abs(a.supply_period - load)
    for j in range(a.m):
        for t in range(T):
            add([off_per + j * T + t], [float(slack_per[j, t])], 0.0)
    if T > 1:
        slack_tot = np.abs(a.supply_total - load.sum(axis=1))
        for j in range(a.m):
            add([off_tot + j], [float(slack_tot[j])], 0.0)
    if has_pen:
        d = xe[:, 1:] - xe[:, :-1]
        if spec.penalty == "absdev":
            g1 = np.abs(d - z)
            g2 = np.abs(-d - z)
        else:
            g1 = np.abs(nxt * np.log(ratio) - z)
            g2 = np.abs(prv * np.log(1.0 / ratio) - z)
        for e in range(E):
            for k in range(T - 1):
                ip = off_p + e * (T - 1) + k
                im = off_p + K + e * (T - 1) + k
                add([ip, im], [1.0, 1.0], spec.gamma)
                add([ip, im], [-1.0, -1.0], -spec.gamma)
                add([ip], [float(g1[e, k])], 0.0)
                add([im], [float(g2[e, k])], 0.0)
    if has_band:
        g_p = np.abs(xe[:, 1:] - (2.0 - band_r) * xe[:, :-1])
        g_m = np.abs(band_r * xe[:, :-1] - xe[:, 1:])
        for e in range(E):
            for k in range(T - 1):
                add([off_b + e * (T - 1) + k], [float(g_p[e, k])], 0.0)
                add([off_b + nb + e * (T - 1) + k], [float(g_m[e, k])], 0.0)

    c = np.zeros(n_var)
    c[0] = 1.0
    with _muted_stdout():  # HiGHS logs solution-check chatter straight to fd 1
        lp = linprog(
            c,
            A_ub=sp.coo_matrix((vals, (rows, cols)), shape=(nrow, n_var)).tocsr(),
            b_ub=np.asarray(rhs),
            bounds=[(0.0, None)] * n_var,
            method="highs-ds",
        )
    if not lp.success:
        return best
    sol = lp.x
    lam_per = sol[off_per : off_per + n_per].reshape(a.m, T)
    lam_tot = sol[off_tot : off_tot + n_tot] if T > 1 else np.zeros(a.m)
    pen_duals = (
        [
            sol[off_p : off_p + K].reshape(E, T - 1),
            sol[off_p + K : off_p + 2 * K].reshape(E, T - 1),
        ]
        if has_pen
        else []
    )
    band_duals = (
        [
            sol[off_b : off_b + nb].reshape(E, T - 1),
            sol[off_b + nb : off_b + 2 * nb].reshape(E, T - 1),
        ]
        if has_band
        else []
    )
    kkt = _kkt_residuals(
        spec, a, best.x, xe, lam_per, lam_tot, z, pen_duals, band_duals, variation_band
    )
    if max(kkt.values()) >= max(best.kkt.values()):
        return best
    polished = replace(
        best,
        lambda_period=lam_per,
        lambda_total=lam_tot,
        kkt=kkt,
        converged=all(v <= tol for v in kkt.values()),
    )
    polished.trace.append(
        f"dual polish: stat={kkt['stationarity']:.2e} "
        f"feas={kkt['primal_infeasibility']:.2e} comp={kkt['complementarity']:.2e}"
    )
    return polished


# ---------------------------------------------------------------------------
# linear max-min machinery (positivity check, leximin stages, freeze probes)


@dataclass
class MaxMinResult:
    """Outcome of one max-min solve over free components."""

    t_star: float  # optimal min (weighted log scale, or plain surplus when linear)
    x: np.ndarray  # (n, m, T) allocation achieving it
    tight_set: tuple  # free components whose value sits at the optimum
    values: dict  # component -> linear surplus at x
    trace: list[str] = field(default_factory=list)


class _PolytopeLP:
    """Dense LP scaffolding: supply rows over edge-period variables."""

    def __init__(self, a: InstanceArrays):
        self.a = a
        E, T = a.n_edges, a.T
        self.ncols = E * T  # margin/probe variables appended by callers
        rows = []
        rhs = []
        for j in range(a.m):
            mask = a.edge_item == j
            for t in range(T):
                row = np.zeros(E * T)
                row[np.flatnonzero(mask) * T + t] = 1.0
                rows.append(row)
                rhs.append(a.supply_period[j, t])
        if T > 1:
            for j in range(a.m):
                row = np.zeros(E * T)
                idx = np.flatnonzero(a.edge_item == j)
                for t in range(T):
                    row[idx * T + t] = 1.0
                rows.append(row)
                rhs.append(a.supply_total[j])
        self.A_supply = np.array(rows) if rows else np.zeros((0, E * T))
        self.b_supply = np.array(rhs)

    def surplus_row(self, comp) -> tuple[np.ndarray, float]:
        """Coefficients c with surplus(comp) = c . x - offset."""
        a = self.a
        row = np.zeros(self.ncols)
        if isinstance(comp, tuple):
            i, t = comp
            idx = np.flatnonzero(a.edge_buyer == i)
            row[idx * a.T + t] = a.edge_value[idx]
            return row, float(a.demand[i, t])
        idx = np.flatnonzero(a.edge_buyer == comp)
        for t in range(a.T):
            row[idx * a.T + t] = a.edge_value[idx]
        return row, float(a.demand[comp].sum())

    def to_dense_allocation(self, cols: np.ndarray) -> np.ndarray:
        xe = cols[: self.ncols].reshape(self.a.n_edges, self.a.T)
        return _dense_allocation(self.a, xe)


def _components(a: InstanceArrays, per_period: bool) -> list:
    if per_period:
        return [(i, t) for i in range(a.n) for t in range(a.T)]
    return list(range(a.n))


def _component_budget(a: InstanceArrays, comp) -> float:
    return float(a.budgets[comp[0] if isinstance(comp, tuple) else comp])


def _surplus_upper_bound(a: InstanceArrays, comp) -> float:
    """Loose per-component cap: all usable supply routed to the component."""
    if isinstance(comp, tuple):
        i, t = comp
        caps = np.minimum(a.supply_period[:, t], a.supply_total)
        return float((a.values[i] * caps).sum() - a.demand[i, t])
    i = comp
    return float((a.values[i] * a.usable_supply).sum() - a.demand[i].sum())


def _solve_lp(c, A_ub, b_ub, bounds, context: str):
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise Infeasible(f"{context}: LP status {res.status} ({res.message})")
    return res


def maxmin_linear(
    inst: MarketInstance,
    *,
    free=None,
    floors: dict | None = None,
    per_period: bool = False,
    log_scale: bool = True,
    tie_tol: float = TIE_TOL,
) -> MaxMinResult:
    """Maximize the minimum component value over the supply polytope.

    Components are buyers (aggregate surplus) or (buyer, period) pairs when
    per_period is set.  With log_scale the value of component c is
    budget_c * log(surplus_c) and the optimum is found either by one LP (all
    free budgets equal) or by bisection with a feasibility LP per probe;
    without it the plain surplus is maximized, which stays well defined at
    nonpositive margins and is what the positivity check uses.

    Args:
        inst: market instance with budgets already resolved.
        free: components over which the min is taken (default: all).
        floors: linear surplus lower bounds for components outside the min.
        per_period: component granularity.
        log_scale: budget-weighted log values instead of plain surplus.
        tie_tol: log-scale width of the reported tight set.

    Returns:
        MaxMinResult; t_star is in the weighted log scale when log_scale,
        otherwise the plain worst surplus.

    Raises:
        Infeasible: floors cannot be met, or log_scale with a nonpositive
            max-min surplus.
    """
    a = arrays(inst)
    lp = _PolytopeLP(a)
    all_comps = _components(a, per_period)
    free = list(free) if free is not None else list(all_comps)
    floors = dict(floors or {})
    if not free:
        raise ValueError("maxmin_linear needs at least one free component")
    trace = [f"maxmin: {len(free)} free, {len(floors)} floors, log_scale={log_scale}"]

    floor_rows = []
    floor_rhs = []
    for comp, floor in floors.items():
        row, offset = lp.surplus_row(comp)
        floor_rows.append(-row)
        floor_rhs.append(-(floor + offset))

    def solve_linear_maxmin() -> tuple[float, np.ndarray]:
        ncols = lp.ncols + 1
        rows = [np.append(r, 0.0) for r in lp.A_supply]
        rhs = list(lp.b_supply)
        for r, b in zip(floor_rows, floor_rhs):
            rows.append(np.append(r, 0.0))
            rhs.append(b)
        for comp in free:
            row, offset = lp.surplus_row(comp)
            rr = np.append(-row, 1.0)  # surplus >= margin
            rows.append(rr)
            rhs.append(-offset)
        c = np.zeros(ncols)
        c[-1] = -1.0
        bounds = [(0, None)] * lp.ncols + [(None, None)]
        res = _solve_lp(c, np.array(rows), np.array(rhs), bounds, "max-min")
        return float(res.x[-1]), lp.to_dense_allocation(res.x)

    margin, x = solve_linear_maxmin()

    if not log_scale:
        values = _component_values(inst, x, free)
        tight = tuple(c for c in free if values[c] <= margin + max(tie_tol, 1e-9))
        return MaxMinResult(t_star=margin, x=x, tight_set=tight, values=values, trace=trace)

    if margin <= core.POSITIVE_SURPLUS_TOL:
        raise Infeasible(
            f"max-min surplus {margin:.3e} is not strictly positive; "
            "log-scale values are undefined",
            margin=margin,
        )

    budgets = {c: _component_budget(a, c) for c in free}
    distinct = set(budgets.values())
    if len(distinct) == 1:
        b = next(iter(distinct))
        t_star = b * math.log(margin)
        trace.append(f"equal budgets: single LP, t*={t_star:.12g}")
    else:
        lo = min(budgets[c] * math.log(v) for c, v in _component_values(inst, x, free).items())
        hi = max(
            budgets[c] * math.log(max(_surplus_upper_bound(a, c), margin)) for c in free
        )
        hi = max(hi, lo) + 1e-9
        bounds = [(0, None)] * lp.ncols + [(None, None)]
        static_rows = [np.append(r, 0.0) for r in lp.A_supply] + [
            np.append(r, 0.0) for r in floor_rows
        ]
        static_rhs = list(lp.b_supply) + list(floor_rhs)
        c_obj = np.zeros(lp.ncols + 1)
        c_obj[-1] = -1.0
        free_rows = []
        free_offsets = []
        for comp in free:
            row, offset = lp.surplus_row(comp)
            free_rows.append(np.append(-row, 1.0))
            free_offsets.append(offset)
        iters = 0
        while hi - lo > BISECTION_TOL * max(1.0, abs(lo), abs(hi)) and iters < 80:
            mid = 0.5 * (lo + hi)
            rows = list(static_rows)
            rhs = list(static_rhs)
            for comp, rr, offset in zip(free, free_rows, free_offsets):
                target = math.exp(mid / budgets[comp])
                rows.append(rr)
                rhs.append(-(offset + target))
            res = linprog(
                c_obj, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method="highs"
            )
            if res.status == 0 and res.x[-1] >= -1e-12:
                x = lp.to_dense_allocation(res.x)
                achieved = min(
                    budgets[c] * math.log(v)
                    for c, v in _component_values(inst, x, free).items()
                )
                lo = max(mid, achieved)
            else:
                hi = mid
            iters += 1
        t_star = lo
        trace.append(f"bisection: {iters} probes, t*={t_star:.12g}")

    values = _component_values(inst, x, free)
    tight = tuple(
        c
        for c in free
        if budgets[c] * math.log(max(values[c], 1e-300)) <= t_star + tie_tol
    )
    return MaxMinResult(t_star=t_star, x=x, tight_set=tight, values=values, trace=trace)


def _component_values(inst: MarketInstance, x: np.ndarray, comps) -> dict:
    pp = surplus_per_period(inst, x)
    agg = pp.sum(axis=1)
    out = {}
    for c in comps:
        out[c] = float(pp[c[0], c[1]] if isinstance(c, tuple) else agg[c])
    return out


def probe_component_max(
    inst: MarketInstance,
    comp,
    floors: dict,
    per_period: bool = False,
) -> tuple[float, np.ndarray]:
    """Maximize one component's surplus subject to floors on the others.

    Returns the maximum surplus and an allocation achieving it.  This is the
    per-index test behind critical-set freezing: a component whose maximum
    cannot exceed the stage optimum is pinned there in every continuation.
    """
    a = arrays(inst)
    lp = _PolytopeLP(a)
    rows = list(lp.A_supply)
    rhs = list(lp.b_supply)
    for other, floor in floors.items():
        if other == comp:
            continue
        row, offset = lp.surplus_row(other)
        rows.append(-row)
        rhs.append(-(floor + offset))
    obj_row, obj_offset = lp.surplus_row(comp)
    res = _solve_lp(
        -obj_row,
        np.array(rows),
        np.array(rhs),
        [(0, None)] * lp.ncols,
        f"probe component {comp}",
    )
    x = lp.to_dense_allocation(res.x)
    return float(-res.fun - obj_offset), x
