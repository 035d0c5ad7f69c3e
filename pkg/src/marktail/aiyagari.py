"""Heterogeneous-agent production economy with idiosyncratic investment risk.

Capitalists own a Cobb-Douglas technology with a Markov productivity
state, hire labour at a common wage, consume a constant fraction of wealth
(Epstein-Zin preferences make the problem homogeneous) and go bankrupt with
probability ``p`` each period.  Homogeneity turns wealth into a random
growth process, so its stationary upper tail is Pareto with an exponent
obtained from the same spectral equation as :mod:`marktail.solver`.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from . import matcore, rng
from ._accel import njit, prange, resolve_backend
from .errors import NoEquilibriumError, NumericalError, ValidationError
from .mapmodel import PointMass, ProcessSpec
from .sim import _pick, hill_estimate
from .solver import solve_exponent

FP_DAMPING = 0.5
FP_TOL = 1e-12
FP_MAX_ITER = 10_000
WAGE_XTOL = 1e-14
BOUNDARY_STEP = 1e-8


# ---------------------------------------------------------------------------
# AR(1) discretisation

def rouwenhorst(S, rho, sigma):
    """Rouwenhorst grid and transition matrix for ``x' = rho x + sigma e``.

    Matches the unconditional variance and the autocorrelation exactly.
    """
    if S < 2:
        raise ValidationError("Rouwenhorst needs at least two states")
    if not -1 < rho < 1 or not sigma > 0:
        raise ValidationError("need |rho| < 1 and sigma > 0")
    q = (1 + rho) / 2
    P = np.array([[q, 1 - q], [1 - q, q]])
    for n in range(3, S + 1):
        Z = np.zeros((n, n))
        Z[:-1, :-1] += q * P
        Z[:-1, 1:] += (1 - q) * P
        Z[1:, :-1] += (1 - q) * P
        Z[1:, 1:] += q * P
        Z[1:-1] /= 2
        P = Z
    half_width = sigma / math.sqrt(1 - rho ** 2) * math.sqrt(S - 1)
    return np.linspace(-half_width, half_width, S), P


def tauchen(S, rho, sigma, m=3.0):
    """Tauchen grid spanning ``m`` unconditional std devs either side of zero."""
    if S < 2:
        raise ValidationError("Tauchen needs at least two states")
    if not -1 < rho < 1 or not sigma > 0:
        raise ValidationError("need |rho| < 1 and sigma > 0")
    sd = sigma / math.sqrt(1 - rho ** 2)
    x = np.linspace(-m * sd, m * sd, S)
    h = (x[1] - x[0]) / 2
    P = np.empty((S, S))
    for j in range(S):
        c = x - rho * x[j]
        P[j] = norm.cdf((c + h) / sigma) - norm.cdf((c - h) / sigma)
        P[j, 0] = norm.cdf((c[0] + h) / sigma)
        P[j, -1] = norm.sf((c[-1] - h) / sigma)
    return x, P


DISCRETIZERS = {"rouwenhorst": rouwenhorst, "tauchen": tauchen}


# ---------------------------------------------------------------------------
# economy

@dataclass(frozen=True, eq=False)
class AiyagariEconomy:
    P: np.ndarray
    A: np.ndarray
    alpha_cap: float = 0.38
    delta: float = 0.08
    disc_beta: float = 0.96 * 0.975
    eps_eis: float = 1.0
    gamma_rra: float = 2.0
    p_die: float = 0.025
    kappa: float = 0.8
    pi0: np.ndarray = None

    def __post_init__(self):
        P = matcore.as_square(self.P, "P")
        S = P.shape[0]
        A = np.atleast_1d(np.asarray(self.A, dtype=float))
        if A.shape != (S,) or not np.all(A > 0) or not np.all(np.isfinite(A)):
            raise ValidationError(f"A must be {S} positive productivities")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-10):
            raise ValidationError("P must be row-stochastic")
        matcore.require_irreducible(P, "P")
        checks = [("alpha_cap", 0 < self.alpha_cap < 1), ("delta", 0 <= self.delta <= 1),
                  ("disc_beta", 0 < self.disc_beta < 1), ("eps_eis", self.eps_eis > 0),
                  ("gamma_rra", self.gamma_rra > 0), ("p_die", 0 < self.p_die < 1),
                  ("kappa", 0 < self.kappa <= 1)]
        for name, ok in checks:
            if not ok:
                raise ValidationError(f"{name}={getattr(self, name)!r} is out of range")
        pi0 = matcore.stationary_distribution(P) if self.pi0 is None \
            else np.asarray(self.pi0, dtype=float)
        if pi0.shape != (S,) or np.any(pi0 < 0) or abs(pi0.sum() - 1) > 1e-10:
            raise ValidationError("pi0 must be a probability vector over the states")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "pi0", pi0)

    @property
    def S(self):
        return self.P.shape[0]

    def replace(self, **kw):
        d = {k: getattr(self, k) for k in ("P", "A", "alpha_cap", "delta", "disc_beta",
                                           "eps_eis", "gamma_rra", "p_die", "kappa", "pi0")}
        d.update(kw)
        return AiyagariEconomy(**d)

    def to_dict(self):
        return {"P": self.P.tolist(), "A": self.A.tolist(), "alpha_cap": self.alpha_cap,
                "delta": self.delta, "disc_beta": self.disc_beta, "eps_eis": self.eps_eis,
                "gamma_rra": self.gamma_rra, "p_die": self.p_die, "kappa": self.kappa,
                "pi0": self.pi0.tolist()}

    @classmethod
    def from_dict(cls, d):
        """Build from a config mapping.

        Productivity is given either as ``P`` plus ``A`` or as
        ``ar1 = {rho, sigma, S, method}`` for log productivity.
        ``disc_beta`` may be replaced by ``beta_raw``, which is multiplied by
        the survival probability.
        """
        d = dict(d)
        if "ar1" in d:
            ar = d.pop("ar1")
            method = ar.get("method", "rouwenhorst")
            if method not in DISCRETIZERS:
                raise ValidationError(f"unknown discretisation {method!r}")
            try:
                x, P = DISCRETIZERS[method](int(ar["S"]), float(ar["rho"]), float(ar["sigma"]))
            except KeyError as exc:
                raise ValidationError(f"ar1 block is missing {exc}") from None
            d["P"], d["A"] = P, np.exp(x)
        if "beta_raw" in d:
            d["disc_beta"] = d.pop("beta_raw") * (1 - d.get("p_die", 0.025))
        allowed = {"P", "A", "alpha_cap", "delta", "disc_beta", "eps_eis", "gamma_rra",
                   "p_die", "kappa", "pi0"}
        extra = set(d) - allowed
        if extra:
            raise ValidationError(f"unknown economy fields: {sorted(extra)}")
        if "P" not in d or "A" not in d:
            raise ValidationError("economy needs P and A (or an ar1 block)")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def benchmark_calibration(method="rouwenhorst", S=9):
    """Benchmark calibration: 9-state AR(1) productivity, unit EIS, p = 0.025."""
    x, P = DISCRETIZERS[method](S, 0.9, 0.1)
    p = 0.025
    return AiyagariEconomy(P=P, A=np.exp(x), alpha_cap=0.38, delta=0.08,
                           disc_beta=0.96 * (1 - p), eps_eis=1.0, gamma_rra=2.0,
                           p_die=p, kappa=0.8)


@dataclass(eq=False)
class AiyagariSolution:
    omega_star: float
    R: np.ndarray
    b: np.ndarray
    Gk: np.ndarray
    Gw: np.ndarray
    zeta: float = math.nan
    phi_residual: float = math.nan
    b_residual: float = math.nan
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {"omega_star": self.omega_star, "R": self.R.tolist(), "b": self.b.tolist(),
                "Gk": self.Gk.tolist(), "Gw": self.Gw.tolist(), "zeta": self.zeta,
                "phi_residual": self.phi_residual, "b_residual": self.b_residual,
                **self.diagnostics}


# ---------------------------------------------------------------------------
# household block

def returns(economy, omega):
    """Gross return on capital in each state at wage ``omega``."""
    if not omega > 0:
        raise ValidationError(f"wage must be positive, got {omega}")
    a = economy.alpha_cap
    return (a * (1 - a) ** (1 / a - 1) * economy.A ** (1 / a) * omega ** (1 - 1 / a)
            + 1 - economy.delta)


def spectral_value(economy, R):
    """Left-hand side of the existence condition for the value function."""
    beta, eps, gam = economy.disc_beta, economy.eps_eis, economy.gamma_rra
    if eps == 1:
        return beta
    if gam == 1:
        # limit of rho(P R^(1-g))^(1/(1-g)) as g -> 1
        pi = matcore.stationary_distribution(economy.P)
        return beta * math.exp((1 - 1 / eps) * float(pi @ np.log(R)))
    rho = matcore.spectral_radius(economy.P * (R ** (1 - gam))[None, :])
    return beta * rho ** ((1 - 1 / eps) / (1 - gam))


def _certainty_equiv(P, Rb, gam):
    if gam == 1:
        return np.exp(P @ np.log(Rb))
    return (P @ Rb ** (1 - gam)) ** (1 / (1 - gam))


def bellman_residual(economy, R, b):
    """Entry-wise residual of the value-coefficient equations."""
    beta, eps, gam = economy.disc_beta, economy.eps_eis, economy.gamma_rra
    ce = _certainty_equiv(economy.P, R * b, gam)
    if eps == 1:
        rhs = (1 - beta) ** (1 - beta) * beta ** beta * ce ** beta
    else:
        rhs = ((1 - beta) ** eps + beta ** eps * ce ** (eps - 1)) ** (1 / (eps - 1))
    return b - rhs


def value_coefficients(economy, R):
    """Positive solution ``b`` of the value-coefficient equations at returns ``R``.

    Raises :class:`NoEquilibriumError` when the spectral existence condition
    fails; the offending value is attached as ``lambda_value``.
    """
    R = np.asarray(R, dtype=float)
    beta, eps, gam = economy.disc_beta, economy.eps_eis, economy.gamma_rra
    lhs = spectral_value(economy, R)
    if not lhs < 1:
        raise NoEquilibriumError(
            f"value function does not exist: spectral condition value {lhs:.17g} >= 1",
            lambda_value=lhs)
    P = economy.P
    if eps == 1:
        # log-linear in log b: contraction with modulus beta
        c0 = (1 - beta) * math.log(1 - beta) + beta * math.log(beta)
        y = np.zeros(economy.S)
        for _ in range(FP_MAX_ITER):
            ce = np.log(_certainty_equiv(P, R * np.exp(y), gam))
            new = c0 + beta * ce
            if np.max(np.abs(new - y)) < FP_TOL:
                y = new
                break
            y = new
        else:
            raise NumericalError("value-coefficient iteration did not converge")
        b = np.exp(y)
    elif gam == 1:
        y = np.zeros(economy.S)
        for _ in range(FP_MAX_ITER):
            ce = np.exp(P @ (np.log(R) + y))
            new = np.log((1 - beta) ** eps + beta ** eps * ce ** (eps - 1)) / (eps - 1)
            new = (1 - FP_DAMPING) * y + FP_DAMPING * new
            if np.max(np.abs(new - y)) < FP_TOL:
                y = new
                break
            y = new
        else:
            raise NumericalError("value-coefficient iteration did not converge")
        b = np.exp(y)
    else:
        sig = (1 - gam) / (eps - 1)
        K = beta ** (eps * sig) * P * (R ** (1 - gam))[None, :]
        c = (1 - beta) ** eps
        x = np.ones(economy.S)
        for _ in range(FP_MAX_ITER):
            new = (c + (K @ x) ** (1 / sig)) ** sig
            new = (1 - FP_DAMPING) * x + FP_DAMPING * new
            if np.max(np.abs(new - x) / np.abs(x)) < FP_TOL:
                x = new
                break
            x = new
        else:
            raise NumericalError("value-coefficient iteration did not converge")
        b = x ** (1 / (1 - gam))
    if not np.all(b > 0) or not np.all(np.isfinite(b)):
        raise NumericalError("value coefficients are not positive and finite")
    return b


def growth_rates(economy, R, b):
    """Capital growth vector ``Gk`` and wealth growth matrix ``Gw``."""
    beta, eps = economy.disc_beta, economy.eps_eis
    save = np.full(economy.S, beta) if eps == 1 else 1 - (1 - beta) ** eps * b ** (1 - eps)
    if np.any(save <= 0):
        raise NumericalError("consumption exceeds wealth in some state")
    return R * save, save[:, None] * R[None, :]


# ---------------------------------------------------------------------------
# equilibrium

def _state(economy, omega):
    R = returns(economy, omega)
    b = value_coefficients(economy, R)
    Gk, Gw = growth_rates(economy, R, b)
    return R, b, Gk, Gw


def _aggregate_radius(economy, Gk):
    return (1 - economy.p_die) * matcore.spectral_radius(economy.P.T * Gk[None, :])


def market_clearing(economy, omega):
    """``phi(omega)``: aggregate capital demand ratio; equilibrium at ``phi = 1``.

    Returns ``inf`` when aggregate capital does not exist at ``omega``
    (the survivors' growth radius is at least one).
    """
    _, _, Gk, _ = _state(economy, omega)
    if _aggregate_radius(economy, Gk) >= 1:
        return math.inf
    p = economy.p_die
    M = np.eye(economy.S) - (1 - p) * economy.P.T * Gk[None, :]
    return p * economy.kappa * float(np.linalg.solve(M, economy.pi0).sum())


def _phi_or_none(economy, omega):
    try:
        return market_clearing(economy, omega)
    except NoEquilibriumError:
        return None


def _boundary(economy, bad, good):
    """Shrink ``(bad, good)`` onto the edge of the admissible wage region."""
    for _ in range(200):
        mid = 0.5 * (bad + good)
        ph = _phi_or_none(economy, mid)
        if ph is None or ph == math.inf:
            bad = mid
        else:
            good = mid
        if good - bad <= BOUNDARY_STEP * good:
            break
    return good


def equilibrium_wage(economy, start=1.0):
    """Wage at which the labour market clears.

    Brackets the root of ``phi - 1`` by moving away from ``start`` and then
    uses Brent's method.  If the admissible region ends before ``phi`` rises
    above one, :class:`NoEquilibriumError` is raised.
    """
    def phi(w):
        return _phi_or_none(economy, w)

    w = start
    ph = phi(w)
    steps = 0
    # too low a wage: returns too high, aggregates explode; move up
    while ph is None or ph == math.inf:
        w *= 2
        ph = phi(w)
        steps += 1
        if steps > 200:
            raise NoEquilibriumError("no admissible wage found above the starting point")
    if ph > 1:
        lo, hi = w, w * 2
        while True:
            ph_hi = phi(hi)
            if ph_hi is None:
                raise NoEquilibriumError(
                    f"admissible region ends near wage {hi:.6g} before phi drops below one")
            if ph_hi < 1:
                break
            lo, hi = hi, hi * 2
            steps += 1
            if steps > 400:
                raise NoEquilibriumError("phi stays above one for all wages tried",
                                         lambda_value=ph_hi)
    else:
        hi, lo = w, w / 2
        while True:
            ph_lo = phi(lo)
            if ph_lo is None or ph_lo == math.inf:
                lo = _boundary(economy, lo, hi)
                ph_lo = phi(lo)
                if ph_lo is None or ph_lo <= 1:
                    raise NoEquilibriumError(
                        f"admissible region ends at wage {lo:.6g} with phi={ph_lo!r} <= 1",
                        endpoint=lo, lambda_value=ph_lo)
                break
            if ph_lo > 1:
                break
            hi, lo = lo, lo / 2
            steps += 1
            if steps > 400:
                raise NoEquilibriumError("phi stays below one for all wages tried")
    return brentq(lambda x: market_clearing(economy, x) - 1, lo, hi,
                  xtol=WAGE_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)


def wealth_spec(economy, Gw):
    """Stopped random-growth spec for log wealth: survival ``1 - p``, point-mass steps."""
    S = economy.S
    dists = [[PointMass(math.log(Gw[s, t])) for t in range(S)] for s in range(S)]
    return ProcessSpec(economy.P, 1 - economy.p_die, dists)


def wealth_exponent(economy, solution):
    """Pareto exponent ``zeta`` of the stationary wealth distribution."""
    if economy.kappa >= 1:
        raise ValidationError("the wealth exponent exceeds one only for kappa < 1")
    zeta = solve_exponent(wealth_spec(economy, solution.Gw))
    if not zeta > 1:
        raise NumericalError(f"wealth exponent {zeta!r} is not above one")
    return zeta


def exponent_radii(economy, solution, z):
    """``(rho(P .* Gw^z), rho(P diag(Gk^z)))``; equal for every ``z``."""
    a = matcore.spectral_radius(economy.P * solution.Gw ** z)
    b = matcore.spectral_radius(economy.P * (solution.Gk ** z)[None, :])
    return a, b


def solve_economy(economy):
    """Equilibrium wage, policies and wealth exponent."""
    w = equilibrium_wage(economy)
    R, b, Gk, Gw = _state(economy, w)
    sol = AiyagariSolution(w, R, b, Gk, Gw)
    sol.phi_residual = market_clearing(economy, w) - 1
    sol.b_residual = float(np.max(np.abs(bellman_residual(economy, R, b))))
    sol.diagnostics["aggregate_radius"] = _aggregate_radius(economy, Gk)
    sol.diagnostics["spectral_condition"] = spectral_value(economy, R)
    if economy.kappa < 1:
        sol.zeta = wealth_exponent(economy, sol)
        sol.diagnostics["zeta_residual"] = (1 - economy.p_die) * exponent_radii(
            economy, sol, sol.zeta)[0] - 1
    return sol


# ---------------------------------------------------------------------------
# simulation
#
# Each agent draws three uniforms per period at counters 3t + {0: death,
# 1: newborn state, 2: transition}; counter -1 maps to the initial state.

@njit(parallel=True)
def _agents_numba(seed, n, periods, p, cumP, cum0, Gk, k_out, s_out, age_out):
    S = cumP.shape[0]
    flat = cumP.ravel()
    for i in prange(n):
        key = rng.entity_key(seed, 1, i)
        s = _pick(cum0, 0, S, rng.uniform(key, 0))
        k = 1.0
        age = 0
        for t in range(periods):
            c = 1 + 3 * t
            if rng.uniform(key, c) < p:
                k = 1.0
                age = 0
                s = _pick(cum0, 0, S, rng.uniform(key, c + 1))
            else:
                k *= Gk[s]
                age += 1
                s = _pick(flat, s * S, S, rng.uniform(key, c + 2))
        k_out[i] = k
        s_out[i] = s
        age_out[i] = age


def _agents_numpy(seed, n, periods, p, cumP, cum0, Gk, k_out, s_out, age_out):
    S = cumP.shape[0]
    keys = rng.entity_keys(seed, 1, np.arange(n))

    def pick(rows, u):
        return np.minimum((rows <= u[:, None]).sum(axis=1), S - 1)

    s = pick(np.broadcast_to(cum0, (n, S)), rng.uniforms(keys, 0))
    k = np.ones(n)
    age = np.zeros(n, dtype=np.int64)
    for t in range(periods):
        c = 1 + 3 * t
        die = rng.uniforms(keys, c) < p
        born = pick(np.broadcast_to(cum0, (n, S)), rng.uniforms(keys, c + 1))
        moved = pick(cumP[s], rng.uniforms(keys, c + 2))
        k = np.where(die, 1.0, k * Gk[s])
        age = np.where(die, 0, age + 1)
        s = np.where(die, born, moved)
    k_out[:] = k
    s_out[:] = s
    age_out[:] = age


@dataclass(eq=False)
class EconomySimulation:
    capital: np.ndarray
    state: np.ndarray
    age: np.ndarray
    wealth: np.ndarray
    tail: object = None

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("agent_id,capital,wealth,state,age\n")
            for i, (k, w, s, a) in enumerate(zip(self.capital, self.wealth, self.state, self.age)):
                fh.write(f"{i},{k:.17g},{w:.17g},{s},{a}\n")


def simulate_economy(economy, solution, agents=100_000, periods=1000, seed=0,
                     tail_fraction=0.1, tail_from=1.0, p_die=None, backend=None):
    """Cross-section of capital and wealth after ``periods`` periods.

    Every agent starts newborn (capital one, state from ``pi0``).  Each
    period an agent dies with probability ``p`` and is replaced by a
    newborn; otherwise capital grows by ``Gk[s]`` and the state moves on.
    Wealth is ``R[s] * k``.  ``p_die`` overrides the economy's bankruptcy
    rate (``1`` is allowed here).

    The attached Hill estimate uses the largest ``tail_fraction`` of the
    wealth observations above ``tail_from`` (the newborn level by default),
    i.e. the top of the upper tail rather than of the whole cross-section;
    ``tail_from=None`` uses every agent.  It is ``None`` when too few
    observations qualify, or when every agent holds newborn capital (then
    wealth only varies with the state and there is no tail to measure).
    """
    backend = resolve_backend(backend)
    p = economy.p_die if p_die is None else float(p_die)
    if not 0 < p <= 1:
        raise ValidationError("bankruptcy probability must lie in (0, 1]")
    if agents < 1 or periods < 0:
        raise ValidationError("need at least one agent and a nonnegative horizon")
    k = np.empty(agents)
    s = np.empty(agents, dtype=np.int64)
    age = np.empty(agents, dtype=np.int64)
    cumP = np.ascontiguousarray(np.cumsum(economy.P, axis=1))
    cum0 = np.cumsum(economy.pi0)
    kern = _agents_numba if backend == "numba" else _agents_numpy
    kern(np.uint64(seed), agents, periods, p, cumP, cum0, np.asarray(solution.Gk, float), k, s, age)
    wealth = solution.R[s] * k
    upper = wealth if tail_from is None else wealth[wealth > tail_from]
    tail = None
    if np.any(k != 1.0):
        try:
            tail = hill_estimate(upper, tail_fraction)
        except ValidationError:
            pass
    return EconomySimulation(k, s, age, wealth, tail)
