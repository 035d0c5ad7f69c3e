"""Gaussian regime-switching model for panel log growth.

Each unit's log growth follows a hidden Markov chain with Gaussian
emissions ``N(mu_n, sigma_n^2)``.  The chain starts from its stationary
law in every unit, units are independent given the parameters, and the
likelihood is the Hamilton filter run unit by unit.  Parameters are fitted
by EM with forward-backward smoothing.

Panels are stored padded: a ``(units, Tmax)`` array plus a vector of
per-unit lengths.  Both kernels (numba and numpy) consume that layout.
"""
import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import matcore
from ._accel import njit, prange, resolve_backend
from .errors import NumericalError, ValidationError
from .mapmodel import LognormalGrowth, ProcessSpec
from .solver import solve_exponent

LOG_2PI = math.log(2.0 * math.pi)
SIGMA_FLOOR = 1e-8
DEGENERATE_MASS = 1e-6
COUNT_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class RegimeModel:
    """Transition matrix plus per-state mean and std of log growth."""

    Pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        Pi = matcore.as_square(self.Pi, "Pi")
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        N = Pi.shape[0]
        if mu.shape != (N,) or sigma.shape != (N,):
            raise ValidationError(f"mu and sigma must have length {N}")
        if np.any(Pi < 0) or np.any(np.abs(Pi.sum(axis=1) - 1.0) > 1e-10):
            raise ValidationError("Pi must be row-stochastic")
        if not np.all(np.isfinite(mu)):
            raise ValidationError("mu must be finite")
        if not np.all(sigma > 0) or not np.all(np.isfinite(sigma)):
            raise ValidationError("sigma must be positive and finite")
        matcore.require_irreducible(Pi, "Pi")
        object.__setattr__(self, "Pi", Pi)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def N(self):
        return self.Pi.shape[0]

    def stationary(self):
        return matcore.stationary_distribution(self.Pi)

    def sorted(self):
        """Same model with states relabelled so that ``mu`` is increasing."""
        order = np.argsort(self.mu, kind="stable")
        return RegimeModel(self.Pi[np.ix_(order, order)], self.mu[order], self.sigma[order])

    def to_dict(self):
        return {"N": self.N, "Pi": self.Pi.tolist(), "mu": self.mu.tolist(),
                "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["Pi"], d["mu"], d["sigma"])
        except KeyError as exc:
            raise ValidationError(f"regime model is missing field {exc}") from None


@dataclass(eq=False)
class FitResult:
    model: RegimeModel
    loglik: float
    filtered: list
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    degenerate_restarts: int = 0
    n_obs: int = 0

    @property
    def n_params(self):
        N = self.model.N
        return N * (N - 1) + 2 * N

    @property
    def aic(self):
        return 2 * self.n_params - 2 * self.loglik

    @property
    def bic(self):
        return self.n_params * math.log(self.n_obs) - 2 * self.loglik

    def to_dict(self):
        return {"model": self.model.to_dict(), "loglik": self.loglik,
                "iterations": self.iterations, "converged": self.converged,
                "degenerate_restarts": self.degenerate_restarts,
                "n_obs": self.n_obs, "aic": self.aic, "bic": self.bic,
                "loglik_trace": list(self.trace)}


# ---------------------------------------------------------------------------
# panel layout

def _is_single(data):
    if isinstance(data, np.ndarray):
        return data.ndim == 1 and data.dtype != object
    return all(np.ndim(x) == 0 for x in data)


def as_panel(data):
    """Pad a series or a list of series into ``(Y, lengths)``."""
    if isinstance(data, np.ndarray) and data.ndim == 2:
        units = [np.asarray(r, dtype=float) for r in data]
    elif _is_single(data):
        units = [np.asarray(data, dtype=float)]
    else:
        units = [np.asarray(u, dtype=float).ravel() for u in data]
    units = [u for u in units if u.size]
    if not units:
        raise ValidationError("no observations")
    if not all(np.all(np.isfinite(u)) for u in units):
        raise ValidationError("observations must be finite")
    lengths = np.array([u.size for u in units], dtype=np.int64)
    Y = np.zeros((len(units), int(lengths.max())))
    for i, u in enumerate(units):
        Y[i, :u.size] = u
    return Y, lengths


def unpad(X, lengths):
    return [X[i, :L] for i, L in enumerate(lengths)]


# ---------------------------------------------------------------------------
# kernels
#
# Both return per-unit log-likelihoods, the filtered probabilities and, when
# smoothing, per-unit sufficient statistics for the M-step:
# stats[u, 0] = sum_t gamma_t, stats[u, 1] = sum_t gamma_t y_t,
# stats[u, 2] = sum_t gamma_t y_t^2, stats[u, 3] = gamma_1, plus expected
# transition counts trans[u].

@njit(parallel=True)
def _fb_numba(Y, lengths, Pi, mu, sigma, pi0, smooth):
    U, Tm = Y.shape
    N = Pi.shape[0]
    filt = np.zeros((U, Tm, N))
    stats = np.zeros((U, 4, N))
    trans = np.zeros((U, N, N))
    ll = np.zeros(U)
    logc = np.zeros((U, Tm))
    lognorm = np.log(sigma) + 0.5 * 1.8378770664093453
    for u in prange(U):
        L = lengths[u]
        pred = pi0.copy()
        a = np.empty(N)
        for t in range(L):
            if t > 0:
                for m in range(N):
                    acc = 0.0
                    for n in range(N):
                        acc += filt[u, t - 1, n] * Pi[n, m]
                    pred[m] = acc
            mx = -np.inf
            for n in range(N):
                z = (Y[u, t] - mu[n]) / sigma[n]
                if pred[n] > 0.0:
                    a[n] = -0.5 * z * z - lognorm[n] + np.log(pred[n])
                else:
                    a[n] = -np.inf
                if a[n] > mx:
                    mx = a[n]
            s = 0.0
            for n in range(N):
                s += np.exp(a[n] - mx)
            lc = mx + np.log(s)
            logc[u, t] = lc
            ll[u] += lc
            for n in range(N):
                filt[u, t, n] = np.exp(a[n] - lc)
        if smooth and L > 0:
            beta = np.ones(N)
            nb = np.empty(N)
            e = np.empty(N)
            g = np.empty(N)
            for n in range(N):
                g[n] = filt[u, L - 1, n]
            for t in range(L - 1, -1, -1):
                if t < L - 1:
                    for m in range(N):
                        z = (Y[u, t + 1] - mu[m]) / sigma[m]
                        e[m] = np.exp(-0.5 * z * z - lognorm[m] - logc[u, t + 1]) * beta[m]
                    tot = 0.0
                    for n in range(N):
                        acc = 0.0
                        for m in range(N):
                            trans[u, n, m] += filt[u, t, n] * Pi[n, m] * e[m]
                            acc += Pi[n, m] * e[m]
                        nb[n] = acc
                        g[n] = filt[u, t, n] * acc
                        tot += g[n]
                    for n in range(N):
                        g[n] /= tot
                        beta[n] = nb[n]
                y = Y[u, t]
                for n in range(N):
                    stats[u, 0, n] += g[n]
                    stats[u, 1, n] += g[n] * y
                    stats[u, 2, n] += g[n] * y * y
            for n in range(N):
                stats[u, 3, n] = g[n]
    return ll, filt, stats, trans


def _fb_numpy(Y, lengths, Pi, mu, sigma, pi0, smooth):
    U, Tm = Y.shape
    N = Pi.shape[0]
    filt = np.zeros((U, Tm, N))
    ll = np.zeros(U)
    logc = np.zeros((U, Tm))
    with np.errstate(divide="ignore", invalid="ignore"):
        logeta = -0.5 * ((Y[:, :, None] - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * LOG_2PI
        pred = np.tile(pi0, (U, 1))
        for t in range(Tm):
            live = lengths > t
            if t > 0:
                pred = filt[:, t - 1] @ Pi
            a = logeta[:, t] + np.log(pred)
            mx = a.max(axis=1, keepdims=True)
            lc = np.where(live, mx[:, 0] + np.log(np.exp(a - mx).sum(axis=1)), 0.0)
            logc[:, t] = lc
            ll += lc
            filt[:, t] = np.where(live[:, None], np.exp(a - lc[:, None]), 0.0)
    if not smooth:
        return ll, filt, np.zeros((U, 4, N)), np.zeros((U, N, N))
    stats, trans = _smooth_numpy(Y, lengths, Pi, filt, logeta, logc)
    return ll, filt, stats, trans


def _smooth_numpy(Y, lengths, Pi, filt, logeta, logc):
    U, Tm = Y.shape
    N = Pi.shape[0]
    gamma = np.zeros_like(filt)
    trans = np.zeros((U, N, N))
    beta = np.ones((U, N))
    idx = np.arange(U)
    gamma[idx, lengths - 1] = filt[idx, lengths - 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        for t in range(Tm - 2, -1, -1):
            act = t + 1 < lengths
            e = np.exp(logeta[:, t + 1] - logc[:, t + 1, None]) * beta
            w = filt[:, t, :, None] * Pi[None] * e[:, None, :]
            trans += np.where(act[:, None, None], w, 0.0)
            nb = e @ Pi.T
            g = filt[:, t] * nb
            g /= g.sum(axis=1, keepdims=True)
            gamma[:, t] = np.where(act[:, None], g, gamma[:, t])
            beta = np.where(act[:, None], nb, beta)
    mask = (np.arange(Tm)[None, :] < lengths[:, None])[:, :, None]
    gamma = np.where(mask, gamma, 0.0)
    y = Y[:, :, None]
    stats = np.stack([gamma.sum(axis=1), (gamma * y).sum(axis=1),
                      (gamma * y * y).sum(axis=1), gamma[:, 0]], axis=1)
    return stats, trans


def forward_backward(model, Y, lengths, smooth=True, backend=None):
    """Run the filter (and smoother) over a padded panel.

    Returns ``(loglik_per_unit, filtered, stats, expected_transitions)``;
    ``stats`` rows are the posterior state weights, weighted sums of ``y``
    and ``y**2`` and the posterior of the first state, summed over units.
    """
    backend = resolve_backend(backend)
    args = (np.ascontiguousarray(Y, dtype=float), np.asarray(lengths, dtype=np.int64),
            np.ascontiguousarray(model.Pi), model.mu.copy(), model.sigma.copy(),
            np.ascontiguousarray(model.stationary()), bool(smooth))
    kern = _fb_numba if backend == "numba" else _fb_numpy
    ll, filt, stats, trans = kern(*args)
    if not np.all(np.isfinite(ll)):
        raise NumericalError("non-finite log-likelihood in the Hamilton filter")
    return ll, filt, stats.sum(axis=0), trans.sum(axis=0)


def hamilton_loglik(model, series, backend=None):
    """Log-likelihood and filtered state probabilities.

    ``series`` is one sequence of log growth rates or a list of them (a
    panel).  For a panel the log-likelihood is summed over units and
    ``filtered`` is a list with one ``(T_i, N)`` array per unit; for a single
    series it is a single ``(T, N)`` array.
    """
    single = _is_single(series)
    Y, lengths = as_panel(series)
    ll, filt, _, _ = forward_backward(model, Y, lengths, smooth=False, backend=backend)
    out = unpad(filt, lengths)
    return float(ll.sum()), (out[0] if single else out)


# ---------------------------------------------------------------------------
# EM

def _q_pi(Pi, trans, first):
    """Transition part of the expected complete-data log-likelihood."""
    if np.any((trans > 0) & (Pi <= 0)) or not matcore.is_irreducible(Pi):
        return -math.inf
    st = matcore.stationary_distribution(Pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.where(trans > 0, trans * np.log(Pi), 0.0).sum()
        return lp + float(np.where(first > 0, first * np.log(np.maximum(st, 1e-300)), 0.0).sum())


def _m_step(model, stats, trans):
    w, wy, wyy, first = stats
    mu = wy / w
    var = np.maximum(wyy / w - mu ** 2, 0.0)
    sigma = np.sqrt(np.maximum(var, SIGMA_FLOOR ** 2))
    if model.N == 1:
        return RegimeModel(model.Pi, mu, sigma)
    cnt = trans + COUNT_FLOOR
    target = cnt / cnt.sum(axis=1, keepdims=True)
    # the stationary initial law makes the exact Pi-update implicit; the
    # count update is accepted only if it raises Q, else backtrack
    q0 = _q_pi(model.Pi, trans, first)
    Pi, t = model.Pi, 1.0
    for _ in range(40):
        cand = model.Pi + t * (target - model.Pi)
        cand = cand / cand.sum(axis=1, keepdims=True)
        if _q_pi(cand, trans, first) >= q0:
            Pi = cand
            break
        t *= 0.5
    return RegimeModel(Pi, mu, sigma)


def initial_model(y, N):
    """Quantile split for means, pooled within-group std, ``Pi = 0.8 I + 0.2/N``."""
    y = np.sort(np.asarray(y, dtype=float))
    groups = np.array_split(y, N)
    mu = np.array([g.mean() for g in groups])
    ss = sum(((g - g.mean()) ** 2).sum() for g in groups)
    sd = math.sqrt(ss / y.size) if ss > 0 else max(float(y.std()), 1e-3)
    sd = max(sd, 1e-6)
    # ties in the data can give equal group means; spread them slightly
    mu = mu + sd * 1e-3 * np.arange(N)
    Pi = 0.8 * np.eye(N) + 0.2 / N
    return RegimeModel(Pi, mu, np.full(N, sd))


def _perturbed(base, rng, spread):
    N = base.N
    mu = base.mu + rng.normal(0.0, 0.5 * spread, N)
    sigma = base.sigma * rng.uniform(0.5, 1.5, N)
    Pi = 0.5 * np.eye(N) + 0.5 * rng.dirichlet(np.ones(N), size=N)
    return RegimeModel(Pi, mu, sigma)


def _run_em(model, Y, lengths, n_iter, tol, backend, trace=None):
    """Up to ``n_iter`` EM steps; returns (model, trace, converged, degenerate)."""
    trace = [] if trace is None else trace
    n_obs = lengths.sum()
    for _ in range(n_iter):
        ll, _, stats, trans = forward_backward(model, Y, lengths, backend=backend)
        cur = float(ll.sum())
        if trace and cur - trace[-1] < tol:
            trace.append(cur)
            return model, trace, True, False
        trace.append(cur)
        if np.any(stats[0] / n_obs < DEGENERATE_MASS):
            return model, trace, False, True
        model = _m_step(model, stats, trans)
    return model, trace, False, False


def em_fit(data, N, init=None, max_iter=500, tol=None, restarts=5, seed=0,
           burn_in=25, backend=None):
    """Fit an ``N``-state model by EM, keeping the best of several starts.

    The first start is the deterministic quantile initialisation (or
    ``init`` when given); ``restarts`` further starts perturb it with a
    seeded generator.  Every start runs ``burn_in`` iterations and only the
    best one is iterated on until the log-likelihood gains less than
    ``tol`` (default ``1e-9`` per observation) or ``max_iter`` is reached.
    A start in which some state keeps less than ``1e-6`` of the posterior
    mass is redrawn and counted in ``degenerate_restarts``.  States of the
    returned model are ordered by increasing mean.
    """
    Y, lengths = as_panel(data)
    N = int(N)
    n_obs = int(lengths.sum())
    if N < 1:
        raise ValidationError("N must be >= 1")
    if n_obs < 10 * N:
        raise ValidationError(f"need at least {10 * N} observations for N={N}, got {n_obs}")
    if tol is None:
        tol = 1e-9 * n_obs
    flat = np.concatenate(unpad(Y, lengths))
    base = init if init is not None else initial_model(flat, N)
    rng = np.random.default_rng(seed)
    spread = float(flat.std()) or 1.0
    starts = [base] + [_perturbed(base, rng, spread) for _ in range(restarts if N > 1 else 0)]
    burn = min(burn_in, max_iter) if len(starts) > 1 else max_iter
    best = None
    n_degenerate = 0
    for start in starts:
        for _ in range(10):
            model, trace, conv, degen = _run_em(start, Y, lengths, burn, tol, backend)
            if not degen:
                break
            n_degenerate += 1
            start = _perturbed(base, rng, spread)
        else:
            continue
        if best is None or trace[-1] > best[1][-1]:
            best = (model, trace, conv)
    if best is None:
        raise NumericalError("every EM start collapsed onto fewer states")
    model, trace, conv = best
    if not conv and len(trace) < max_iter:
        model, trace, conv, degen = _run_em(model, Y, lengths, max_iter - len(trace), tol,
                                            backend, trace)
        if degen:
            n_degenerate += 1
    if n_degenerate:
        warnings.warn(f"{n_degenerate} EM start(s) hit a degenerate state",
                      RuntimeWarning, stacklevel=2)
    model = model.sorted()
    ll, filt, _, _ = forward_backward(model, Y, lengths, smooth=False, backend=backend)
    return FitResult(model, float(ll.sum()), unpad(filt, lengths), len(trace), conv, trace,
                     n_degenerate, n_obs)


# ---------------------------------------------------------------------------
# implied exponent and data

def implied_spec(model, p):
    if not 0.0 < p < 1.0:
        raise ValidationError(f"stopping probability must lie in (0, 1), got {p}")
    dists = [LognormalGrowth(m, s) for m, s in zip(model.mu, model.sigma)]
    return ProcessSpec.current_state(model.Pi, np.full(model.N, 1.0 - p), dists)


def implied_exponent(model, p):
    """Upper Pareto exponent of sizes stopped with probability ``p`` per period."""
    return solve_exponent(implied_spec(model, p))


def implied_exponent_from_lifespan(model, mean_age):
    """Same as :func:`implied_exponent` with ``p = 1 / mean_age``."""
    if not mean_age > 1:
        raise ValidationError("mean age must exceed one period")
    return implied_exponent(model, 1.0 / mean_age)


def simulate_panel(model, units, periods, seed=0):
    """Draw a ``(units, periods)`` array of log growth from ``model``."""
    rng = np.random.default_rng(seed)
    cum = np.cumsum(model.Pi, axis=1)
    state = rng.choice(model.N, size=units, p=model.stationary())
    out = np.empty((units, periods))
    for t in range(periods):
        if t:
            u = rng.random(units)
            state = np.minimum((u[:, None] >= cum[state]).sum(axis=1), model.N - 1)
        out[:, t] = model.mu[state] + model.sigma[state] * rng.standard_normal(units)
    return out


def load_panel_csv(path, normalize=False):
    """Read ``unit_id, period, size`` rows and return per-unit log growth.

    Growth is the log ratio of consecutive sizes within a unit after
    sorting by period.  With ``normalize`` each size is first divided by
    the cross-sectional total of its period.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for i, rec in enumerate(reader):
            if not rec or rec[0].startswith("#"):
                continue
            if i == 0 and rec[0].strip().lower() in ("unit_id", "unit", "id"):
                continue
            if len(rec) < 3:
                raise ValidationError(f"line {i + 1}: expected unit_id, period, size")
            try:
                period, size = float(rec[1]), float(rec[2])
            except ValueError:
                raise ValidationError(f"line {i + 1}: period and size must be numeric") from None
            if not size > 0 or not math.isfinite(size):
                raise ValidationError(f"line {i + 1}: size must be positive, got {rec[2]!r}")
            rows.append((rec[0].strip(), period, size))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    if normalize:
        totals = {}
        for _, t, s in rows:
            totals[t] = totals.get(t, 0.0) + s
        rows = [(u, t, s / totals[t]) for u, t, s in rows]
    by_unit = {}
    for u, t, s in rows:
        by_unit.setdefault(u, []).append((t, s))
    panel = []
    for u in sorted(by_unit):
        obs = sorted(by_unit[u])
        periods = [t for t, _ in obs]
        if len(set(periods)) != len(periods):
            raise ValidationError(f"unit {u!r} has duplicate periods")
        sizes = np.array([s for _, s in obs])
        if sizes.size > 1:
            panel.append(np.diff(np.log(sizes)))
    if not panel:
        raise ValidationError(f"{path}: no unit has two or more periods")
    return panel
