"""Numerical kernels shared by the analysis stack.

Binary entropy and its inverse, the Serfling and Hoeffding concentration
terms, Poisson photon-number statistics, and a small bounded linear-program
wrapper.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "binary_entropy",
    "inv_binary_entropy",
    "serfling_deviation",
    "hoeffding_exponent_bound",
    "hoeffding_exponent_log",
    "poisson_pmf",
    "log_poisson_pmf",
    "LpResult",
    "LpInfeasibleError",
    "LpUnboundedError",
    "solve_bounded_lp",
    "check_probability",
    "check_failure_budget",
]

#: relative tolerance guaranteed by solve_bounded_lp
LP_TOL = 1e-8

#: absolute tolerance of the inverse-entropy bisection
INV_ENTROPY_TOL = 1e-9


def check_probability(value: float, name: str = "probability") -> float:
    """Validate that ``value`` lies in [0, 1] and return it."""
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value!r}")
    return float(value)


def check_failure_budget(eps: float, name: str = "epsilon") -> float:
    """Validate that ``eps`` lies in (0, 1] and return it."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"{name} must be in (0, 1], got {eps!r}")
    return float(eps)


def binary_entropy(p: float) -> float:
    """Binary entropy h(p) = -p log2 p - (1-p) log2 (1-p), with 0 log 0 = 0."""
    check_probability(p, "p")
    if p == 0.0 or p == 1.0:
        return 0.0
    # log1p keeps the (1-p) branch accurate for p close to 0
    return -(p * math.log2(p) + (1.0 - p) * math.log1p(-p) / math.log(2.0))


def inv_binary_entropy(y: float) -> float:
    """Inverse of :func:`binary_entropy` on the monotone branch [0, 1/2].

    Bisection; the result p satisfies |binary_entropy(p) - y| corresponding
    to an absolute error below ``INV_ENTROPY_TOL`` in p.
    """
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"entropy value must be in [0, 1], got {y!r}")
    if y == 0.0:
        return 0.0
    if y == 1.0:
        return 0.5
    lo, hi = 0.0, 0.5
    mid = 0.25
    # Converge in both coordinates: tiny entropy values need p resolved far
    # below the nominal tolerance (the slope diverges at p = 0).
    for _ in range(1100):
        mid = 0.5 * (lo + hi)
        h_mid = binary_entropy(mid)
        if hi - lo <= INV_ENTROPY_TOL and abs(h_mid - y) <= 1e-10:
            break
        if mid == lo or mid == hi:  # float resolution exhausted
            break
        if h_mid < y:
            lo = mid
        else:
            hi = mid
    return mid


def serfling_deviation(c_sig: int, c_test: int, eps: float) -> float:
    """Random-sampling-without-replacement deviation term.

    Returns ``sqrt((c_sig+1)(c_sig+c_test) ln(1/eps) / (2 c_test c_sig^2))``,
    the additive penalty when a rate measured on ``c_test`` samples is
    transferred to a disjoint block of ``c_sig`` samples drawn from the same
    finite population.
    """
    if c_sig < 1 or c_test < 1:
        raise ValueError("c_sig and c_test must be >= 1")
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must be in (0, 1], got {eps!r}")
    num = (c_sig + 1.0) * (c_sig + c_test) * math.log(1.0 / eps)
    den = 2.0 * c_test * float(c_sig) ** 2
    return math.sqrt(num / den)


def hoeffding_exponent_log(delta: float, n: int) -> float:
    """Natural log of the Hoeffding tail bound, ``-2 delta^2 n`` (exact)."""
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta!r}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n!r}")
    return -2.0 * delta * delta * n


def hoeffding_exponent_bound(delta: float, n: int) -> float:
    """Hoeffding tail bound exp(-2 delta^2 n), clamped to [0, 1].

    For exponents below the float underflow threshold the returned value is
    0.0; use :func:`hoeffding_exponent_log` for the exact log-space value.
    """
    log_p = hoeffding_exponent_log(delta, n)
    if log_p < -745.0:  # exp underflows to 0.0 below this
        return 0.0
    return min(1.0, math.exp(log_p))


def log_poisson_pmf(mu: float, n: int) -> float:
    """Natural log of the Poisson pmf; -inf where the pmf is zero."""
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu!r}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n!r}")
    if mu == 0.0:
        return 0.0 if n == 0 else -math.inf
    return n * math.log(mu) - mu - math.lgamma(n + 1)


def poisson_pmf(mu: float, n: int) -> float:
    """Poisson pmf e^-mu mu^n / n!, evaluated in log space for stability."""
    log_p = log_poisson_pmf(mu, n)
    return 0.0 if log_p == -math.inf else math.exp(log_p)


class LpInfeasibleError(ValueError):
    """The constraint set admits no feasible point."""


class LpUnboundedError(ValueError):
    """The objective is unbounded over the feasible set."""


@dataclass(frozen=True)
class LpResult:
    optimum: float
    assignment: np.ndarray


def solve_bounded_lp(
    objective,
    constraints,
    variable_bounds,
    sense: str = "min",
    refine_assignment: bool = True,
) -> LpResult:
    """Solve a small box-bounded linear program deterministically.

    Parameters
    ----------
    objective:
        Coefficient sequence c; the objective is ``c @ x``.
    constraints:
        Iterable of ``(coeffs, op, rhs)`` with ``op`` one of ``"<="``/``">="``.
    variable_bounds:
        Sequence of ``(lo, hi)`` intervals, one per variable.
    sense:
        ``"min"`` or ``"max"``.
    refine_assignment:
        When True, ties between degenerate optima are broken by returning the
        lexicographically smallest assignment (one extra solve per variable).
        Callers that consume only the optimum value may disable this.

    Raises
    ------
    LpInfeasibleError, LpUnboundedError
        Explicit outcomes; never silently returns garbage.
    """
    c = np.asarray(objective, dtype=float)
    n = c.size
    if n == 0 or n > 200:
        raise ValueError(f"expected 1..200 variables, got {n}")
    bounds = [(float(lo), float(hi)) for lo, hi in variable_bounds]
    if len(bounds) != n:
        raise ValueError("variable_bounds length must match objective length")

    rows, rhs = [], []
    for coeffs, op, b in constraints:
        a = np.zeros(n)
        a[: len(coeffs)] = coeffs
        if op == "<=":
            rows.append(a)
            rhs.append(float(b))
        elif op == ">=":
            rows.append(-a)
            rhs.append(-float(b))
        else:
            raise ValueError(f"unknown constraint op {op!r}")
    a_ub = np.array(rows) if rows else None
    b_ub = np.array(rhs) if rows else None

    sign = 1.0 if sense == "min" else -1.0
    if sense not in ("min", "max"):
        raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")

    solver_opts = {
        "primal_feasibility_tolerance": 1e-10,
        "dual_feasibility_tolerance": 1e-10,
    }

    def _solve(cost, box, extra_rows=None, extra_rhs=None):
        a, b = a_ub, b_ub
        if extra_rows:
            stack = list(a) if a is not None else []
            a = np.array(stack + extra_rows)
            b = np.concatenate([b if b is not None else np.zeros(0), extra_rhs])
        res = linprog(cost, A_ub=a, b_ub=b, bounds=box, method="highs", options=solver_opts)
        if res.status == 2:
            # Presolve can misjudge constraint windows thinner than its own
            # tolerances; only a full solve may declare infeasibility.
            res = linprog(
                cost, A_ub=a, b_ub=b, bounds=box, method="highs",
                options={**solver_opts, "presolve": False},
            )
        if res.status == 2:
            raise LpInfeasibleError("constraints admit no feasible point")
        if res.status == 3:
            raise LpUnboundedError("objective unbounded over the feasible set")
        if not res.success:
            raise RuntimeError(f"LP solver failed: {res.message}")
        return res

    res = _solve(sign * c, bounds)
    optimum = sign * res.fun
    assignment = np.asarray(res.x, dtype=float)

    if refine_assignment and n > 1:
        assignment = _lexicographic_refine(_solve, sign * c, optimum * sign, bounds, assignment)

    return LpResult(optimum=float(optimum), assignment=assignment)


def _lexicographic_refine(solve, cost_signed, opt_signed, bounds, fallback):
    """Pick the lexicographically smallest optimal assignment.

    Pins the objective near its optimum, then minimises each coordinate in
    turn, narrowing that coordinate's box bound before moving on.  Slack
    sits above the solver's feasibility tolerance (vertices are separated
    on the problem scale, so ties still break exactly); if the pinned
    system degenerates numerically the slack is escalated once, and as a
    last resort the unrefined (still deterministic) assignment stands.
    """
    n = len(fallback)
    for pin_tol in (1e-6, 1e-4):
        box = list(bounds)
        pin_row = [list(cost_signed)]
        pin_rhs = [opt_signed + pin_tol * max(1.0, abs(opt_signed))]
        refined = np.array(fallback, dtype=float)
        try:
            for i in range(n):
                cost = np.zeros(n)
                cost[i] = 1.0
                sub = solve(cost, box, pin_row, pin_rhs)
                value = float(sub.x[i])
                refined[i] = value
                lo, hi = box[i]
                box[i] = (lo, min(hi, value + pin_tol * max(1.0, abs(value))))
            return refined
        except LpInfeasibleError:
            continue
    return fallback
