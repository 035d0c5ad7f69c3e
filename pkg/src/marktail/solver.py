"""Tail exponents and tail constants of stopped Markov additive processes.

The upper exponent is the positive root of ``lam(s) = 1`` and the lower
exponent ``beta`` is minus the negative root.  Because ``log lam`` is
convex and ``lam(0) < 1``, each root is unique, and Newton's method on
``log lam`` started to the right of the root descends monotonically onto
it.  Bisection guards every step.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import DomainExhaustedError, NoSolutionError, NumericalError, ValidationError
from .mapmodel import (LatticeStructure, ProcessSpec, dkernel, kernel, lam,
                       lattice_structure, mgf_domain, mgf_matrix)

UPPER = "upper"
LOWER = "lower"

LOG_TOL = 1e-12
FIRST_STEP = 0.1
MAX_BRACKET = 1e6
DOMAIN_MARGIN = 1e-8
PERRON_TOL = 1e-8


@dataclass(frozen=True)
class TauberianInputs:
    A: float
    B: float
    alpha: float

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0 and self.alpha > 0):
            raise ValidationError("A, B and alpha must all be positive")


@dataclass(frozen=True, eq=False)
class ExponentSolution:
    alpha: float
    beta_tail: float
    perron_x: np.ndarray
    perron_y: np.ndarray
    C: float
    B: float
    lower_bound: float
    upper_bound: float
    lattice: LatticeStructure
    pareto_prefactor: float

    def to_dict(self):
        def f(v):
            return None if v is None else float(v)
        return {
            "alpha": f(self.alpha), "beta": f(self.beta_tail),
            "C": f(self.C), "B": f(self.B),
            "lower_bound": f(self.lower_bound), "upper_bound": f(self.upper_bound),
            "lattice": self.lattice.lattice,
            "lattice_span": f(self.lattice.span) if self.lattice.lattice else None,
            "offset_lattice": self.lattice.offset,
            "pareto_prefactor": f(self.pareto_prefactor),
            "perron_x": None if self.perron_x is None else [float(v) for v in self.perron_x],
            "perron_y": None if self.perron_y is None else [float(v) for v in self.perron_y],
        }


def _log_lam(spec, s):
    v = lam(spec, s)
    return math.log(v) if v > 0 else -math.inf


def _dlog_lam(spec, s):
    K = kernel(spec, s)
    pair = matcore.perron_pair(K)
    dK = dkernel(spec, s)
    return float(pair.left @ dK @ pair.right / (pair.left @ pair.right)) / pair.radius


def _bracket(spec, upper_limit):
    """Expanding search for ``s`` with ``lam(s) > 1``; returns ``(lo, hi)``."""
    lo, s = 0.0, FIRST_STEP
    last = lam(spec, 0.0)
    while True:
        capped = s >= upper_limit
        if capped:
            s = upper_limit
        v = lam(spec, s)
        if v > 1.0:
            return lo, s
        last = v
        if capped:
            break
        lo, s = s, 2.0 * s
    if math.isfinite(upper_limit) and upper_limit < MAX_BRACKET:
        raise DomainExhaustedError(
            f"lambda stays below one up to the MGF domain edge (lambda={last:.6g} at s={s:.6g})",
            endpoint=s, lambda_value=last)
    raise NoSolutionError(
        f"lambda(s) < 1 on the whole search range (lambda={last:.6g} at s={s:.6g})",
        endpoint=s, lambda_value=last)


def _root(spec, method):
    dom = mgf_domain(spec)
    limit = min(dom.upper - DOMAIN_MARGIN, MAX_BRACKET)
    lo, hi = _bracket(spec, limit)
    if method == "bisect":
        return _bisect(spec, lo, hi)
    if method != "hybrid":
        raise ValueError(f"unknown method {method!r}")
    return _newton(spec, lo, hi)


def _bisect(spec, lo, hi):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if lam(spec, mid) > 1.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _newton(spec, lo, hi):
    # Start on the right: convexity keeps Newton iterates right of the root.
    s = hi
    g = _log_lam(spec, s)
    if not math.isfinite(g):
        s = _bisect_to_finite(spec, lo, hi)
        g = _log_lam(spec, s)
    for _ in range(200):
        if g > 0:
            hi = s
        else:
            lo = s
        d = _dlog_lam(spec, s)
        step = g / d if d > 0 else math.inf
        new = s - step
        if not (lo < new < hi):
            new = 0.5 * (lo + hi)
        if abs(new - s) <= 4 * np.finfo(float).eps * max(abs(s), 1.0):
            s = new
            break
        s = new
        g = _log_lam(spec, s)
        if g == 0.0:
            break
    if abs(_log_lam(spec, s)) > LOG_TOL:
        raise NumericalError(f"root refinement stalled at s={s!r}")
    return s


def _bisect_to_finite(spec, lo, hi):
    while not math.isfinite(lam(spec, hi)):
        hi = 0.5 * (lo + hi)
    return hi


def solve_exponent(spec, side=UPPER, method="hybrid"):
    """Positive root ``alpha`` (upper side) or ``beta`` (lower side) of ``lam = 1``.

    Raises :class:`NoSolutionError` when ``lam`` never reaches one on that
    side, with the last bracket point and its ``lam`` value attached.
    """
    if side == UPPER:
        return _root(spec, method)
    if side == LOWER:
        return _root(spec.reflect(), method)
    raise ValueError(f"side must be {UPPER!r} or {LOWER!r}")


def tail_constants(spec, alpha, lattice=None):
    """Residue constant ``C`` and singularity gap ``B`` at the exponent ``alpha``.

    ``C = omega0' x y' ((E - V) * Pi * M) e / (y' (V * Pi * M') x)`` with
    ``x, y`` the right and left Perron vectors of ``V * Pi * M(alpha)``.
    ``B`` is infinite for non-lattice increments and ``2 pi / span``
    otherwise.
    """
    K = kernel(spec, alpha)
    pair = matcore.perron_pair(K)
    r, l = pair.residuals(K)
    scale = max(1.0, float(np.max(K)))
    if max(r, l) > PERRON_TOL * scale or abs(pair.radius - 1.0) > 1e-8:
        raise NumericalError(
            f"Perron pair at alpha={alpha!r} failed its residual check "
            f"(radius={pair.radius!r}, residuals={r:.3g}, {l:.3g})")
    x, y = pair.right, pair.left
    M = mgf_matrix(spec, alpha)
    stop = (1.0 - spec.V) * spec.Pi * M
    e = np.ones(spec.N)
    num = (spec.omega0 @ x) * (y @ stop @ e)
    den = y @ dkernel(spec, alpha) @ x
    C = float(num / den)
    if not C > 0:
        raise NumericalError(f"tail constant C={C!r} is not positive")
    if lattice is None:
        lattice = lattice_structure(spec)
    B = 2 * math.pi / lattice.span if lattice.lattice else math.inf
    return C, B


def tauberian_bounds(inp):
    """Sharp lower and upper limits of ``exp(alpha x) P(X > x)``."""
    A, B, a = inp.A, inp.B, inp.alpha
    if math.isinf(B):
        return A / a, A / a
    h = 2 * math.pi / B
    return (h * A) / math.expm1(h * a), (h * A) / -math.expm1(-h * a)


def pareto_prefactor(spec, alpha, s0_moment=1.0, C=None, lattice=None):
    """Limit of ``s^alpha P(S > s)`` for ``S = S0 exp(W_T)``.

    ``s0_moment`` is ``E[S0^alpha]``.  Only defined for non-lattice
    processes; lattice processes oscillate and need :func:`tauberian_bounds`.
    """
    if lattice is None:
        lattice = lattice_structure(spec)
    if lattice.lattice:
        raise ValidationError("lattice process has no Pareto limit; use tauberian_bounds "
                              "for the liminf/limsup pair")
    if not s0_moment > 0:
        raise ValidationError("E[S0^alpha] must be positive")
    if C is None:
        C, _ = tail_constants(spec, alpha, lattice)
    return C / alpha * s0_moment


def solve(spec, method="hybrid"):
    """Both exponents plus the upper-tail constants, bounds and prefactor."""
    try:
        alpha = solve_exponent(spec, UPPER, method)
    except NoSolutionError:
        alpha = None
    try:
        beta = solve_exponent(spec, LOWER, method)
    except NoSolutionError:
        beta = None
    lattice = lattice_structure(spec)
    x = y = C = B = lo = hi = pref = None
    if alpha is not None:
        pair = matcore.perron_pair(kernel(spec, alpha))
        x, y = pair.right, pair.left
        C, B = tail_constants(spec, alpha, lattice)
        lo, hi = tauberian_bounds(TauberianInputs(C, B, alpha))
        if not lattice.lattice:
            pref = C / alpha
    return ExponentSolution(alpha, beta, x, y, C, B, lo, hi, lattice, pref)


def lower_tail_constants(spec, beta):
    """``(C, B)`` for the lower tail, via the reflected process."""
    return tail_constants(spec.reflect(), beta)


def pencil_scan(spec, alpha, t_max, num=2001):
    """``|det(I - V * Pi * M(alpha + i t))|`` on a grid of ``t`` (diagnostic only).

    Zeros away from ``t = 0`` mark the extra singularities that make a
    process lattice.  Only increments with finite supports or Gaussian laws
    have a complex MGF here.
    """
    ts = np.linspace(-t_max, t_max, num)
    K0 = spec.V * spec.Pi
    out = np.empty(num)
    for k, t in enumerate(ts):
        z = alpha + 1j * t
        Mz = np.array([[_complex_mgf(d, z) for d in row] for row in spec.dists])
        out[k] = abs(np.linalg.det(np.eye(spec.N) - K0 * Mz))
    return ts, out


def _complex_mgf(d, z):
    sup = d.support()
    if sup is not None:
        mean, sd, atoms, probs = d.sampler()
        if atoms is None:
            return np.exp(z * mean)
        return np.sum(probs * np.exp(z * atoms))
    mean, sd, _, _ = d.sampler()
    return np.exp(z * mean + 0.5 * sd * sd * z * z)


def laplace_limit_check(a, sigma, Pi=None, p_grid=None):
    """Compare ``alpha(p)`` for the small-step family with its ``p -> 0`` limit.

    Increments in state ``n`` are ``N(p a_n, p sigma_n^2)`` with survival
    ``1 - p``; as ``p`` falls the exponent should approach the positive
    root of ``(sigma^2/2) s^2 + a s - 1 = 0`` where ``a`` and ``sigma^2``
    are stationary averages.

    Returns a dict with the limit ``s_star``, the table of ``(p, alpha)``
    and the error at the smallest ``p``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    sig = np.atleast_1d(np.asarray(sigma, dtype=float))
    N = a.size
    if Pi is None:
        Pi = np.ones((1, 1)) if N == 1 else np.full((N, N), 1.0 / N)
    Pi = np.asarray(Pi, dtype=float)
    pi = matcore.stationary_distribution(Pi)
    abar = float(pi @ a)
    s2 = float(pi @ sig ** 2)
    if s2 > 0:
        s_star = (-abar + math.sqrt(abar * abar + 2 * s2)) / s2
    else:
        s_star = 1.0 / abar
    if p_grid is None:
        p_grid = [10.0 ** -k for k in range(1, 5)]
    rows = []
    for p in sorted(p_grid, reverse=True):
        dists = [_gauss_or_point(p * a[n], p * sig[n] ** 2) for n in range(N)]
        spec = ProcessSpec.current_state(Pi, np.full(N, 1 - p), dists)
        rows.append((p, solve_exponent(spec)))
    return {"s_star": s_star, "table": rows, "error": abs(rows[-1][1] - s_star)}


def _gauss_or_point(m, v):
    from .mapmodel import Gaussian, PointMass
    return Gaussian(m, v) if v > 0 else PointMass(m)
