"""Monte Carlo simulation of stopped Markov additive processes and Hill estimation.

Simulation is the independent check on the solver: it never touches MGFs
or spectral radii, only the transition, survival and increment laws.

Each path draws ``J0 ~ omega0`` and then, for ``t = 1, 2, ...``, moves the
chain with ``Pi``, adds the increment of the transition ``(J_{t-1}, J_t)``
and survives with probability ``V[J_{t-1}, J_t]``.  The increment of the
fatal step is still added, so ``T >= 1`` and ``W_T`` includes ``X_T``.
"""
import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng
from ._accel import njit, prange, resolve_backend
from .errors import ValidationError

DEFAULT_MAX_STEPS = 1_000_000
CENSOR_WARN = 1e-3
_DRAWS_PER_STEP = 4


@dataclass(frozen=True)
class SimConfig:
    paths: int = 100_000
    seed: int = 0
    max_steps: int = DEFAULT_MAX_STEPS
    #: ("constant", c) or ("lognormal", mean_log, var_log)
    s0: tuple = ("constant", 1.0)

    def __post_init__(self):
        if self.paths < 1 or self.max_steps < 1:
            raise ValidationError("paths and max_steps must be >= 1")
        if self.s0[0] not in ("constant", "lognormal"):
            raise ValidationError(f"unknown initial-size sampler {self.s0[0]!r}")


@dataclass(frozen=True, eq=False)
class SimResult:
    W: np.ndarray
    T: np.ndarray
    final_state: np.ndarray
    censored: np.ndarray
    S0: np.ndarray = field(default=None)

    @property
    def censor_rate(self):
        return float(self.censored.mean())

    def completed(self):
        """``W_T`` of the uncensored paths."""
        return self.W[~self.censored]

    def sizes(self):
        """``S = S0 exp(W_T)`` for the uncensored paths."""
        keep = ~self.censored
        return self.S0[keep] * np.exp(self.W[keep])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "W_T", "T", "final_state", "censored"])
            for i in range(self.W.size):
                w.writerow([i, f"{self.W[i]:.17g}", int(self.T[i]),
                            int(self.final_state[i]), int(self.censored[i])])


def _flatten(spec):
    """Array encoding of the spec consumed by both kernels."""
    N = spec.N
    kind = np.zeros((N, N), dtype=np.int64)
    mean = np.zeros((N, N))
    std = np.zeros((N, N))
    start = np.zeros((N, N), dtype=np.int64)
    length = np.zeros((N, N), dtype=np.int64)
    atoms, cum = [], []
    pos = 0
    for n in range(N):
        for m in range(N):
            mu, sd, a, p = spec.dists[n][m].sampler()
            if a is None:
                mean[n, m], std[n, m] = mu, sd
            else:
                kind[n, m] = 1
                start[n, m], length[n, m] = pos, a.size
                atoms.append(np.asarray(a, dtype=float))
                cum.append(np.cumsum(p))
                pos += a.size
    atoms = np.concatenate(atoms) if atoms else np.zeros(1)
    cum = np.concatenate(cum) if cum else np.ones(1)
    return (np.cumsum(spec.Pi, axis=1), np.ascontiguousarray(spec.V), kind, mean, std,
            start, length, atoms, cum, np.cumsum(spec.omega0))


@njit
def _pick(cum, lo, n, u):
    k = 0
    for j in range(n):
        if cum[lo + j] <= u:
            k += 1
    return min(k, n - 1)


@njit(parallel=True)
def _paths_numba(seed, n_paths, max_steps, cumPi, V, kind, mean, std,
                 start, length, atoms, cum, cum0, W, T, final, censored):
    N = cumPi.shape[0]
    flat_pi = cumPi.ravel()
    for i in prange(n_paths):
        key = rng.entity_key(seed, 0, i)
        j = _pick(cum0, 0, N, rng.uniform(key, 0))
        w = 0.0
        t = 0
        alive = True
        while alive and t < max_steps:
            base = 1 + _DRAWS_PER_STEP * t
            t += 1
            nxt = _pick(flat_pi, j * N, N, rng.uniform(key, base))
            if kind[j, nxt] == 0:
                u1 = rng.uniform(key, base + 2)
                u2 = rng.uniform(key, base + 3)
                z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
                w += mean[j, nxt] + std[j, nxt] * z
            else:
                k = _pick(cum, start[j, nxt], length[j, nxt], rng.uniform(key, base + 2))
                w += atoms[start[j, nxt] + k]
            alive = rng.uniform(key, base + 1) < V[j, nxt]
            j = nxt
        W[i] = w
        T[i] = t
        final[i] = j
        censored[i] = alive


def _pick_np(cumrows, u):
    k = (cumrows <= u[:, None]).sum(axis=1)
    return np.minimum(k, cumrows.shape[1] - 1)


def _paths_numpy(seed, n_paths, max_steps, cumPi, V, kind, mean, std,
                 start, length, atoms, cum, cum0, W, T, final, censored):
    N = cumPi.shape[0]
    keys = rng.entity_keys(seed, 0, np.arange(n_paths))
    j = _pick_np(np.broadcast_to(cum0, (n_paths, N)), rng.uniforms(keys, 0))
    W[:] = 0.0
    T[:] = 0
    idx = np.arange(n_paths)
    t = 0
    maxlen = int(length.max()) if length.size else 1
    # padded per-cell cumulative probabilities for vectorised atom picks
    cell_cum = np.full((N, N, max(maxlen, 1)), np.inf)
    cell_atoms = np.zeros((N, N, max(maxlen, 1)))
    for n in range(N):
        for m in range(N):
            if kind[n, m] == 1:
                L = length[n, m]
                cell_cum[n, m, :L] = cum[start[n, m]:start[n, m] + L]
                cell_atoms[n, m, :L] = atoms[start[n, m]:start[n, m] + L]
    while idx.size and t < max_steps:
        base = 1 + _DRAWS_PER_STEP * t
        t += 1
        k = keys[idx]
        cur = j[idx]
        nxt = _pick_np(cumPi[cur], rng.uniforms(k, base))
        x = np.empty(idx.size)
        g = kind[cur, nxt] == 0
        if g.any():
            u1 = rng.uniforms(k[g], base + 2)
            u2 = rng.uniforms(k[g], base + 3)
            z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
            x[g] = mean[cur[g], nxt[g]] + std[cur[g], nxt[g]] * z
        d = ~g
        if d.any():
            cd, nd = cur[d], nxt[d]
            lens = length[cd, nd]
            ui = rng.uniforms(k[d], base + 2)
            pos = np.minimum((cell_cum[cd, nd] <= ui[:, None]).sum(axis=1), lens - 1)
            x[d] = cell_atoms[cd, nd, pos]
        W[idx] += x
        T[idx] = t
        alive = rng.uniforms(k, base + 1) < V[cur, nxt]
        j[idx] = nxt
        idx = idx[alive]
    final[:] = j
    censored[:] = False
    censored[idx] = True


def simulate_stopped(spec, cfg=None, backend=None):
    """Simulate ``cfg.paths`` independent stopped paths.

    Paths are keyed by index, so the result does not depend on how the
    work is scheduled; the same seed gives the same sample.  Paths still
    running after ``max_steps`` steps are flagged as censored.
    """
    cfg = cfg or SimConfig()
    backend = resolve_backend(backend)
    n = int(cfg.paths)
    W = np.empty(n)
    T = np.empty(n, dtype=np.int64)
    final = np.empty(n, dtype=np.int64)
    cens = np.empty(n, dtype=np.bool_)
    arrays = _flatten(spec)
    kern = _paths_numba if backend == "numba" else _paths_numpy
    kern(np.uint64(cfg.seed), n, int(cfg.max_steps), *arrays, W, T, final, cens)
    rate = cens.mean()
    if rate > CENSOR_WARN:
        warnings.warn(f"{rate:.3%} of paths hit max_steps={cfg.max_steps} and were censored",
                      RuntimeWarning, stacklevel=2)
    return SimResult(W, T, final, cens, _initial_sizes(cfg))


def _initial_sizes(cfg):
    if cfg.s0[0] == "constant":
        return np.full(cfg.paths, float(cfg.s0[1]))
    _, m, v = cfg.s0
    keys = rng.entity_keys(cfg.seed, 1, np.arange(cfg.paths))
    u1, u2 = rng.uniforms(keys, 0), rng.uniforms(keys, 1)
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return np.exp(m + math.sqrt(v) * z)


# ---------------------------------------------------------------------------
# tail estimation


@dataclass(frozen=True)
class TailEstimate:
    alpha_hat: float
    k: int
    threshold: float
    stderr: float


def hill_estimate(sample, tail_fraction=0.1):
    """Hill maximum-likelihood estimate of the Pareto exponent.

    With order statistics ``X(1) >= X(2) >= ...`` and
    ``k = ceil(tail_fraction * n)``, the estimate is
    ``k / sum_{i<=k} log(X(i) / X(k+1))``; ``X(k+1)`` is the threshold.
    Nonpositive values are dropped first.
    """
    x = np.asarray(sample, dtype=float)
    x = x[np.isfinite(x) & (x > 0)]
    if x.size < 100:
        raise ValidationError(f"Hill estimation needs at least 100 positive values, got {x.size}")
    if not 0 < tail_fraction < 1:
        raise ValidationError("tail_fraction must lie in (0, 1)")
    k = int(math.ceil(tail_fraction * x.size))
    k = min(k, x.size - 1)
    if k < 10:
        raise ValidationError(f"only {k} tail observations; need at least 10")
    top = np.sort(x)[::-1][:k + 1]
    threshold = top[k]
    denom = float(np.sum(np.log(top[:k] / threshold)))
    if denom <= 0:
        raise ValidationError("tail observations are all tied with the threshold")
    a = k / denom
    return TailEstimate(a, k, float(threshold), a / math.sqrt(k))


def survival_counts(sample, grid):
    """Number of sample points strictly above each grid point."""
    s = np.sort(np.asarray(sample, dtype=float))
    return s.size - np.searchsorted(s, np.asarray(grid, dtype=float), side="right")


def empirical_tail_curve(sample, alpha, grid, min_count=1):
    """Rows ``(w, exp(alpha w) P(W > w), log P(W > w) / w)`` on ``grid``.

    Grid points with fewer than ``min_count`` exceedances are dropped;
    the dropped points are returned alongside the table.
    """
    sample = np.asarray(sample, dtype=float)
    grid = np.asarray(grid, dtype=float)
    counts = survival_counts(sample, grid)
    keep = counts >= max(min_count, 1)
    P = counts[keep] / sample.size
    w = grid[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        table = np.column_stack([w, np.exp(alpha * w) * P, np.log(P) / w])
    return table, grid[~keep]


def top_decile_slope(sample, min_count=100, num=200, quantile=0.9):
    """Least-squares slope of ``log P(W > w)`` against ``w`` over the top decile.

    The grid runs from the ``quantile`` of the sample up to the largest
    ``w`` that still has ``min_count`` exceedances, which keeps the noisy
    extreme order statistics out of the fit.
    """
    s = np.sort(np.asarray(sample, dtype=float))
    lo = np.quantile(s, quantile)
    hi = s[s.size - min_count - 1]
    if not hi > lo:
        raise ValidationError("sample too small for a top-decile fit")
    grid = np.linspace(lo, hi, num)
    P = survival_counts(s, grid) / s.size
    slope, _ = np.polyfit(grid, np.log(P), 1)
    return float(slope)
