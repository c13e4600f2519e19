"""Implicit integrators for ``M dx/dt = f(t, x)`` with diagonal ``M``.

Every method discretizes the derivative affinely, ``dx/dt ~ c x + d``, and
solves the resulting nonlinear system with a modified Newton iteration on
``c M - J``. Problems expose:

* ``mass`` (ndarray), ``rhs(t, x)``, ``residual(t, x, xdot)``, ``jac(t, x)``;
* optionally ``formulation`` ("residual" or "mass_matrix"), ``names``, ``x0``
  and ``apply_event(event, t, x)``.

Residual-form problems are stepped through ``residual``; mass-matrix
problems through ``rhs``.
"""
import logging
import math
import time as _time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import (MaxIterations, NewtonDivergence, NonFiniteResidual,
                     SingularIterationMatrix, StepSizeUnderflow)
from .traces import ResultTrace

log = logging.getLogger(__name__)

METHODS = ("backward_euler", "trapezoidal", "bdf2_adaptive")
ORDER = {"backward_euler": 1, "trapezoidal": 2, "bdf2_adaptive": 2}
COND_LIMIT = 1e14


@dataclass
class SolverConfig:
    method: str = "bdf2_adaptive"
    abstol: float = 1e-6
    reltol: float = 1e-6
    max_step: float = 0.05
    min_step: float = 1e-10
    newton_tol: float = 1e-10
    newton_max_iter: int = 8
    jacobian_reuse_policy: int = 5
    fixed_step: Optional[float] = None
    # leave algebraic rows out of the error test (needed for higher-index problems)
    suppress_algebraic_error: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not (0 < self.min_step <= self.max_step):
            raise ValueError("need 0 < min_step <= max_step")
        if self.abstol <= 0 or self.reltol <= 0 or self.newton_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.fixed_step is not None and self.fixed_step <= 0:
            raise ValueError("fixed_step must be positive")
        if self.newton_max_iter < 1 or self.jacobian_reuse_policy < 1:
            raise ValueError("newton_max_iter and jacobian_reuse_policy must be >= 1")


# --- generic Newton -------------------------------------------------------------------

def newton_step(evaluator, x_guess, jacobian_provider, tol=1e-10, max_iter=20, reuse=1,
                history=None):
    """Solve ``evaluator(x) = 0``; the Jacobian is refreshed every ``reuse`` iterations."""
    scalar = np.ndim(x_guess) == 0
    x = np.atleast_1d(np.array(x_guess, dtype=float))
    lu, age = None, 0
    for it in range(max_iter + 1):
        r = np.atleast_1d(np.asarray(evaluator(x[0] if scalar else x), dtype=float))
        nrm = float(np.max(np.abs(r))) if r.size else 0.0
        if history is not None:
            history.append(nrm)
        if nrm <= tol:
            return float(x[0]) if scalar else x
        if it == max_iter:
            break
        if lu is None or age >= reuse:
            A = np.atleast_2d(np.asarray(_dense(jacobian_provider(x[0] if scalar else x)),
                                         dtype=float))
            lu = _factor(A)
            age = 0
        x = x + sla.lu_solve(lu, -r)
        age += 1
    raise MaxIterations(f"Newton did not reach {tol:g} in {max_iter} iterations "
                        f"(residual {nrm:.3g})")


def _dense(A):
    return A.toarray() if hasattr(A, "toarray") else A


def _factor(A):
    if not np.all(np.isfinite(A)):
        raise SingularIterationMatrix("iteration matrix has non-finite entries")
    if A.size and np.linalg.cond(A) > COND_LIMIT:
        raise SingularIterationMatrix("iteration matrix is singular")
    return sla.lu_factor(A, check_finite=False)


# --- test problems ----------------------------------------------------------------------

class SemiExplicitDAE:
    """``M dx/dt = f(t, x)`` from plain callables, for tests and experiments.

    ``jac`` defaults to central finite differences. Events are callables
    ``event(t, x) -> x`` carried in objects with a ``time`` attribute.
    """

    def __init__(self, f, mass, x0, jac=None, names=None, formulation="mass_matrix"):
        self.f = f
        self.mass = np.asarray(mass, dtype=float)
        self.x0 = np.asarray(x0, dtype=float)
        self._jac = jac
        self.names = list(names) if names else [f"x{k}" for k in range(self.mass.size)]
        self.formulation = formulation

    def rhs(self, t, x):
        return np.asarray(self.f(t, x), dtype=float)

    def residual(self, t, x, xdot):
        return self.mass * np.asarray(xdot, dtype=float) - self.rhs(t, x)

    def jac(self, t, x):
        if self._jac is not None:
            return np.asarray(self._jac(t, x), dtype=float)
        x = np.asarray(x, dtype=float)
        n = x.size
        J = np.zeros((n, n))
        for j in range(n):
            h = 1e-7 * max(1.0, abs(x[j]))
            e = np.zeros(n)
            e[j] = h
            J[:, j] = (self.rhs(t, x + e) - self.rhs(t, x - e)) / (2 * h)
        return J

    def apply_event(self, event, t, x):
        return np.asarray(event.apply(t, x), dtype=float)


# --- integrator -----------------------------------------------------------------------------

class _Integrator:
    def __init__(self, problem, cfg):
        self.p = problem
        self.cfg = cfg
        self.residual_form = getattr(problem, "formulation", "mass_matrix") == "residual"
        self.err_rows = slice(None)
        if cfg.suppress_algebraic_error:
            self.err_rows = np.flatnonzero(np.asarray(problem.mass) != 0)
        self.stats = {"steps": 0, "rejected": 0, "newton_iterations": 0,
                      "newton_failures": 0, "jacobian_evaluations": 0,
                      "factorizations": 0, "residual_evaluations": 0}
        self.reset_jacobian()

    def reset_jacobian(self):
        self.J = None
        self.J_age = 0
        self.lu = None
        self.lu_c = None

    # -- Newton on c M x + offset - f(x) = 0 -------------------------------------------
    def _G(self, t1, c, d, e, x):
        self.stats["residual_evaluations"] += 1
        if self.residual_form:
            return self.p.residual(t1, x, c * x + d)
        return c * self.p.mass * x + e - self.p.rhs(t1, x)

    def _refresh(self, t1, x):
        self.J = np.asarray(_dense(self.p.jac(t1, x)), dtype=float)
        self.J_age = 0
        self.lu = None
        self.stats["jacobian_evaluations"] += 1

    def solve(self, t1, c, d, e, guess, w):
        cfg = self.cfg
        for attempt in range(2):
            if self.J is None or attempt == 1:
                self._refresh(t1, guess)
            if self.lu is None or self.lu_c != c:
                self.lu = _factor(c * np.diag(self.p.mass) - self.J)
                self.lu_c = c
                self.stats["factorizations"] += 1
            x = guess.copy()
            prev = None
            ok = False
            try:
                for _ in range(cfg.newton_max_iter):
                    g = self._G(t1, c, d, e, x)
                    if np.max(np.abs(g), initial=0.0) <= cfg.newton_tol:
                        ok = True
                        break
                    dx = sla.lu_solve(self.lu, -g, check_finite=False)
                    x = x + dx
                    self.stats["newton_iterations"] += 1
                    nrm = float(np.max(np.abs(dx) / w, initial=0.0))
                    if not math.isfinite(nrm):
                        break
                    if nrm <= 0.01:
                        ok = True
                        break
                    if prev is not None and nrm > 2.0 * prev:
                        break
                    prev = nrm
            except NonFiniteResidual:
                ok = False
            if ok:
                return x
            self.stats["newton_failures"] += 1
        return None

    def weights(self, x):
        return self.cfg.abstol + self.cfg.reltol * np.abs(x)

    def error_norm(self, e, x):
        r = self.err_rows
        return float(np.max(np.abs(e[r]) / self.weights(x[r]), initial=0.0))

    # -- one-step method kernels -------------------------------------------------------
    def be(self, t, x, h, guess=None):
        M = self.p.mass
        c = 1.0 / h
        d = -x / h
        return self.solve(t + h, c, d, M * d, x if guess is None else guess, self.weights(x))

    def trap(self, t, x, xdot, fn, h):
        M = self.p.mass
        c = 2.0 / h
        d = -c * x - xdot
        e = -c * M * x - np.where(M != 0, fn, 0.0)
        x1 = self.solve(t + h, c, d, e, x, self.weights(x))
        if x1 is None:
            return None
        return x1, c * x1 + d, np.where(M != 0, c * M * x1 + e, 0.0)

    def bdf2(self, hist, h, guess):
        (t0, x0), (t1, x1) = hist[-2], hist[-1]
        k = t1 - t0
        om = h / k
        a0 = (1 + 2 * om) / (1 + om)
        a1 = -(1 + om)
        a2 = om * om / (1 + om)
        c = a0 / h
        d = (a1 * x1 + a2 * x0) / h
        return self.solve(t1 + h, c, d, self.p.mass * d, guess, self.weights(x1))


def _derivative_estimate(problem, t, x):
    M = problem.mass
    f = problem.rhs(t, x)
    xdot = np.zeros_like(x)
    nz = M != 0
    xdot[nz] = f[nz] / M[nz]
    return xdot, np.where(nz, f, 0.0)


def _quadratic_predict(hist, t):
    (ta, xa), (tb, xb), (tc, xc) = hist[-3:]
    la = (t - tb) * (t - tc) / ((ta - tb) * (ta - tc))
    lb = (t - ta) * (t - tc) / ((tb - ta) * (tb - tc))
    lc = (t - ta) * (t - tb) / ((tc - ta) * (tc - tb))
    return la * xa + lb * xb + lc * xc


def integrate(problem, config=None, tspan=(0.0, 1.0), x0=None, perturbations=()):
    """Integrate over ``tspan`` applying ``perturbations`` at their exact times."""
    cfg = config or SolverConfig()
    t0, tf = float(tspan[0]), float(tspan[1])
    if not tf > t0:
        raise ValueError("tspan must be increasing")
    if x0 is None:
        x0 = getattr(problem, "x0", None)
        if x0 is None:
            raise ValueError("no initial state; initialize the problem first")
    x = np.array(x0, dtype=float)
    events = sorted(perturbations, key=lambda p: p.time)
    for ev in events:
        if not (t0 <= ev.time <= tf):
            raise ValueError(f"perturbation at t={ev.time} outside tspan [{t0}, {tf}]")

    run = _Integrator(problem, cfg)
    wall = _time.perf_counter()
    p = ORDER[cfg.method]
    adaptive = cfg.fixed_step is None
    h0 = cfg.fixed_step if not adaptive else min(cfg.max_step, 1e-3)
    h = h0
    times, rows, log_ = [t0], [x.copy()], []
    t = t0
    pending = list(events)

    def fire(t, x):
        while pending and pending[0].time <= t:
            ev = pending.pop(0)
            diff = problem.mass != 0
            x_new = np.asarray(problem.apply_event(ev, t, x), dtype=float)
            log_.append({
                "time": t, "kind": getattr(ev, "kind", type(ev).__name__),
                "description": ev.describe() if hasattr(ev, "describe") else repr(ev),
                "max_differential_jump": float(np.max(np.abs(x_new - x)[diff], initial=0.0)),
                "x_pre": x.copy(), "x_post": x_new.copy(),
            })
            x = x_new
            run.reset_jacobian()
        return x

    if pending and pending[0].time <= t0:
        x = fire(t0, x)
        rows[-1] = x.copy()
    xdot, fn = _derivative_estimate(problem, t, x)
    hist = [(t, x)]

    while t < tf:
        t_stop = pending[0].time if pending else tf
        h_try = min(h, t_stop - t)
        snapped = t + h_try >= t_stop - 1e-12 * max(1.0, abs(t_stop))
        if snapped:
            h_try = t_stop - t
        new_points, err = _attempt(run, cfg, adaptive, hist, t, x, xdot, fn, h_try, p)

        if new_points is None:
            if not adaptive:
                raise NewtonDivergence(f"Newton failed at t={t:.6g} with fixed step")
            h = h_try * 0.25
            log_.append({"time": t, "kind": "step_rejected", "h": h_try, "reason": "newton"})
            run.stats["rejected"] += 1
            if h < cfg.min_step:
                raise NewtonDivergence(f"Newton failed at t={t:.6g} down to h={h_try:.3g}")
            continue
        if adaptive and err > 1.0:
            fac = max(0.2, 0.9 * err ** (-1.0 / (p + 1)))
            h = h_try * fac
            log_.append({"time": t, "kind": "step_rejected", "h": h_try, "reason": "error",
                         "error": float(err)})
            run.stats["rejected"] += 1
            if h < cfg.min_step:
                raise StepSizeUnderflow(f"step size {h:.3g} below min_step at t={t:.6g}")
            continue

        for k, (tk, xk, xdk, fk) in enumerate(new_points):
            if snapped and k == len(new_points) - 1:
                tk = t_stop
            times.append(tk)
            rows.append(xk)
            hist.append((tk, xk))
            t, x, xdot, fn = tk, xk, xdk, fk
        hist = hist[-3:]
        run.stats["steps"] += 1
        run.J_age += 1
        if run.J_age >= cfg.jacobian_reuse_policy:
            run.J = None

        if adaptive:
            fac = 2.0 if err == 0 else min(2.0, max(0.2, 0.9 * err ** (-1.0 / (p + 1))))
            h_next = min(cfg.max_step, h_try * fac)
            h = max(h_next, h) if snapped else h_next
            h = min(h, cfg.max_step)
        if pending and t >= pending[0].time:
            x = fire(t, x)
            rows[-1] = x.copy()
            xdot, fn = _derivative_estimate(problem, t, x)
            hist = [(t, x)]
            h = min(h, h0) if adaptive else h0

    run.stats["wall_time_s"] = _time.perf_counter() - wall
    run.stats["method"] = cfg.method
    run.stats["formulation"] = "residual" if run.residual_form else "mass_matrix"
    names = list(getattr(problem, "names", [f"x{k}" for k in range(x.size)]))
    return ResultTrace(np.array(times), np.array(rows), names, log_, run.stats)


def _attempt(run, cfg, adaptive, hist, t, x, xdot, fn, h, p):
    """Try one step; returns ([(t, x, xdot, f), ...], error_norm) or (None, None)."""
    method = cfg.method
    if method == "bdf2_adaptive" and (len(hist) >= 3 or (not adaptive and len(hist) >= 2)):
        guess = _quadratic_predict(hist, t + h) if len(hist) >= 3 else x
        x1 = run.bdf2(hist, h, guess)
        if x1 is None:
            return None, None
        err = 0.0
        if adaptive:
            (ta, _), (tb, _), (tc, _) = hist[-3:]
            k, k2 = tc - tb, tb - ta
            scale = h * (h + k) / ((2 * h + k) * (h + k + k2))
            lte = (x1 - guess) * scale
            err = run.error_norm(lte, np.maximum(np.abs(x), np.abs(x1)))
        return [(t + h, x1, xdot, fn)], err

    one_step_trap = method == "trapezoidal"
    p_step = 2 if one_step_trap else 1

    def step(t_, x_, xd_, f_, h_):
        if one_step_trap:
            return run.trap(t_, x_, xd_, f_, h_)
        x1 = run.be(t_, x_, h_)
        return None if x1 is None else (x1, xd_, f_)

    if not adaptive:
        r = step(t, x, xdot, fn, h)
        return (None, None) if r is None else ([(t + h, *r)], 0.0)

    full = step(t, x, xdot, fn, h)
    if full is None:
        return None, None
    half1 = step(t, x, xdot, fn, h / 2)
    if half1 is None:
        return None, None
    half2 = step(t + h / 2, *half1, h / 2)
    if half2 is None:
        return None, None
    diff = (half2[0] - full[0]) / (2 ** p_step - 1)
    err = run.error_norm(diff, np.maximum(np.abs(x), np.abs(half2[0])))
    return [(t + h / 2, *half1), (t + h, *half2)], err


def convergence_order(method, problem, exact, t_end=1.0, h0=0.1, halvings=4):
    """Log-log slope of the global error at ``t_end`` over successive halvings."""
    hs, errs = [], []
    for k in range(halvings + 1):
        h = h0 / 2 ** k
        cfg = SolverConfig(method=method, fixed_step=h, max_step=h, min_step=min(h, 1e-12))
        tr = integrate(problem, cfg, (0.0, t_end), problem.x0)
        errs.append(float(np.max(np.abs(tr.states[-1] - exact(t_end)))))
        hs.append(h)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    return float(slope)
