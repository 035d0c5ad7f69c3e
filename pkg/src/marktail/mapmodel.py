"""Stopped Markov additive processes.

A :class:`ProcessSpec` bundles the transition matrix ``Pi``, the survival
matrix ``V`` and a grid of per-transition increment laws.  The key object
is ``lam(spec, s)``, the spectral radius of ``V * Pi * M(s)`` (Hadamard
products), whose crossings of one give the tail exponents.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import matcore
from .errors import OutOfDomainError, ValidationError

ROW_TOL = 1e-12
LATTICE_DIGITS = 12
MIN_LATTICE_SPAN = 1e-9


# ---------------------------------------------------------------------------
# increment distributions


class IncrementDist:
    """Law of one increment ``X`` given the transition ``(n, n')``."""

    kind = "abstract"
    #: MGF finite for every real s unless a subclass says otherwise
    domain = (-math.inf, math.inf)

    def mgf(self, s):
        raise NotImplementedError

    def dmgf(self, s):
        """Derivative of the MGF in ``s``."""
        raise NotImplementedError

    def mean(self):
        raise NotImplementedError

    def support(self):
        """Finite support as a tuple, or ``None`` for continuous laws."""
        return None

    def reflect(self):
        """Law of ``-X``."""
        raise NotImplementedError

    def sampler(self):
        """``(gaussian_mean, gaussian_std, atoms, probs)``; atoms is None for Gaussians."""
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class PointMass(IncrementDist):
    value: float
    kind = "point"

    def mgf(self, s):
        return math.exp(s * self.value)

    def dmgf(self, s):
        return self.value * math.exp(s * self.value)

    def mean(self):
        return self.value

    def support(self):
        return (self.value,)

    def reflect(self):
        return PointMass(-self.value)

    def sampler(self):
        return 0.0, 0.0, np.array([self.value]), np.array([1.0])

    def to_dict(self):
        return {"type": "point", "value": self.value}


@dataclass(frozen=True)
class Gaussian(IncrementDist):
    mean_: float
    var: float
    kind = "gaussian"

    def __post_init__(self):
        if not (self.var >= 0 and math.isfinite(self.var)):
            raise ValidationError(f"Gaussian variance must be finite and >= 0, got {self.var}")

    def mgf(self, s):
        return math.exp(self.mean_ * s + 0.5 * self.var * s * s)

    def dmgf(self, s):
        return (self.mean_ + self.var * s) * self.mgf(s)

    def mean(self):
        return self.mean_

    def support(self):
        return (self.mean_,) if self.var == 0 else None

    def reflect(self):
        return Gaussian(-self.mean_, self.var)

    def sampler(self):
        return self.mean_, math.sqrt(self.var), None, None

    def to_dict(self):
        return {"type": "gaussian", "mean": self.mean_, "var": self.var}


@dataclass(frozen=True)
class LognormalGrowth(Gaussian):
    """Gaussian log growth rate with mean ``mu`` and standard deviation ``sigma``."""

    kind = "lognormal_growth"

    def __init__(self, mu, sigma):
        if not sigma >= 0:
            raise ValidationError(f"sigma must be >= 0, got {sigma}")
        object.__setattr__(self, "mean_", float(mu))
        object.__setattr__(self, "var", float(sigma) ** 2)

    @property
    def mu(self):
        return self.mean_

    @property
    def sigma(self):
        return math.sqrt(self.var)

    def reflect(self):
        return LognormalGrowth(-self.mu, self.sigma)

    def to_dict(self):
        return {"type": "lognormal_growth", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class FiniteDiscrete(IncrementDist):
    values: tuple
    probs: tuple
    kind = "discrete"

    def __init__(self, values, probs):
        v = np.asarray(values, dtype=float).ravel()
        p = np.asarray(probs, dtype=float).ravel()
        if v.size == 0 or v.shape != p.shape:
            raise ValidationError("discrete law needs matching, non-empty values and probs")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError(f"discrete probabilities must be >= 0 and sum to 1, got {p.sum()!r}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("discrete values must be finite")
        object.__setattr__(self, "values", tuple(v.tolist()))
        object.__setattr__(self, "probs", tuple(p.tolist()))

    def _arrays(self):
        return np.array(self.values), np.array(self.probs)

    def mgf(self, s):
        v, p = self._arrays()
        return float(np.sum(p * np.exp(s * v)))

    def dmgf(self, s):
        v, p = self._arrays()
        return float(np.sum(p * v * np.exp(s * v)))

    def mean(self):
        v, p = self._arrays()
        return float(p @ v)

    def var(self):
        v, p = self._arrays()
        m = p @ v
        return float(p @ (v - m) ** 2)

    def support(self):
        return tuple(x for x, q in zip(self.values, self.probs) if q > 0)

    def reflect(self):
        return FiniteDiscrete([-x for x in self.values], self.probs)

    def sampler(self):
        v, p = self._arrays()
        return 0.0, 0.0, v, p

    def to_dict(self):
        return {"type": "discrete", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class ShiftedScaled(IncrementDist):
    """``loc + scale * Y`` with ``Y`` a zero-mean base law.

    The base is recentred on construction, so any Gaussian or discrete law
    can be passed in.
    """

    base: IncrementDist
    loc: float
    scale: float
    kind = "shifted_scaled"

    def __init__(self, base, loc, scale):
        if not scale > 0:
            raise ValidationError(f"scale must be > 0, got {scale}")
        if isinstance(base, ShiftedScaled):
            raise ValidationError("base of a shifted/scaled law must be Gaussian or discrete")
        if isinstance(base, Gaussian):
            base = Gaussian(0.0, base.var)
        elif isinstance(base, FiniteDiscrete):
            m = base.mean()
            base = FiniteDiscrete([x - m for x in base.values], base.probs)
        elif isinstance(base, PointMass):
            base = PointMass(0.0)
        else:
            raise ValidationError(f"unsupported base law {type(base).__name__}")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "loc", float(loc))
        object.__setattr__(self, "scale", float(scale))

    def mgf(self, s):
        return math.exp(s * self.loc) * self.base.mgf(s * self.scale)

    def dmgf(self, s):
        e = math.exp(s * self.loc)
        return e * (self.loc * self.base.mgf(s * self.scale)
                    + self.scale * self.base.dmgf(s * self.scale))

    def dmgf_dloc(self, s):
        return s * self.mgf(s)

    def dmgf_dscale(self, s):
        return math.exp(s * self.loc) * s * self.base.dmgf(s * self.scale)

    def mean(self):
        return self.loc

    def support(self):
        sup = self.base.support()
        if sup is None:
            return None
        return tuple(self.loc + self.scale * y for y in sup)

    def reflect(self):
        return ShiftedScaled(self.base.reflect(), -self.loc, self.scale)

    def sampler(self):
        m, sd, atoms, probs = self.base.sampler()
        if atoms is None:
            return self.loc, self.scale * sd, None, None
        return 0.0, 0.0, self.loc + self.scale * atoms, probs

    def to_dict(self):
        return {"type": "shifted_scaled", "base": self.base.to_dict(),
                "loc": self.loc, "scale": self.scale}


def to_shifted_scaled(dist):
    """Location-scale form of ``dist``; point masses are rejected."""
    if isinstance(dist, ShiftedScaled):
        return dist
    if isinstance(dist, Gaussian):
        if dist.var <= 0:
            raise ValidationError("degenerate Gaussian has no scale parameter")
        return ShiftedScaled(Gaussian(0.0, 1.0), dist.mean_, math.sqrt(dist.var))
    if isinstance(dist, FiniteDiscrete):
        sd = math.sqrt(dist.var())
        if sd <= 0:
            raise ValidationError("single-atom discrete law has no scale parameter")
        m = dist.mean()
        return ShiftedScaled(FiniteDiscrete([(x - m) / sd for x in dist.values], dist.probs), m, sd)
    raise ValidationError(f"{type(dist).__name__} has no scale parameter")


def dist_from_dict(d):
    """Build an increment law from its JSON-compatible description."""
    if not isinstance(d, dict) or "type" not in d:
        raise ValidationError(f"increment law must be an object with a 'type' field, got {d!r}")
    t = d["type"]
    try:
        if t == "point":
            return PointMass(float(d["value"]))
        if t == "gaussian":
            var = d["var"] if "var" in d else float(d["std"]) ** 2
            return Gaussian(float(d["mean"]), float(var))
        if t == "lognormal_growth":
            return LognormalGrowth(float(d["mu"]), float(d["sigma"]))
        if t == "discrete":
            return FiniteDiscrete(d["values"], d["probs"])
        if t == "shifted_scaled":
            return ShiftedScaled(dist_from_dict(d["base"]), float(d["loc"]), float(d["scale"]))
    except KeyError as exc:
        raise ValidationError(f"increment law of type {t!r} is missing field {exc}") from None
    raise ValidationError(f"unknown increment law type {t!r}")


# ---------------------------------------------------------------------------
# process specification


@dataclass(frozen=True)
class MgfDomain:
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.lower <= 0 <= self.upper:
            raise ValidationError("MGF domain must contain zero")

    def contains(self, s):
        return self.lower < s < self.upper


@dataclass(frozen=True, eq=False)
class ProcessSpec:
    """Validated description of a geometrically stopped Markov additive process.

    Parameters
    ----------
    Pi : (N, N) array
        Row-stochastic transition matrix of the modulating chain.
    V : (N, N) array or float
        Survival probability attached to each transition; a scalar ``v``
        means ``v`` everywhere.
    dists : N x N nested sequence of IncrementDist
        Law of the increment realised on each transition.
    omega0 : (N,) array, optional
        Distribution of the initial state; defaults to the stationary
        distribution of ``Pi``.
    """

    Pi: np.ndarray
    V: np.ndarray
    dists: tuple
    omega0: np.ndarray = field(default=None)

    def __post_init__(self):
        Pi = matcore.as_square(self.Pi, "Pi")
        N = Pi.shape[0]
        if np.any(Pi < 0):
            raise ValidationError("Pi has negative entries")
        rows = Pi.sum(axis=1)
        bad = np.flatnonzero(np.abs(rows - 1.0) > ROW_TOL)
        if bad.size:
            r = int(bad[0])
            raise ValidationError(f"row {r} of Pi sums to {rows[r]!r}, not 1")
        V = np.asarray(self.V, dtype=float)
        if V.ndim == 0:
            V = np.full((N, N), float(V))
        if V.shape != (N, N):
            raise ValidationError(f"V must be scalar or {N}x{N}, got shape {V.shape}")
        if np.any(~np.isfinite(V)) or np.any(V < 0) or np.any(V > 1):
            raise ValidationError("survival probabilities V must lie in [0, 1]")
        dists = tuple(tuple(row) for row in self.dists)
        if len(dists) != N or any(len(r) != N for r in dists):
            raise ValidationError(f"dists must be a {N}x{N} grid")
        for row in dists:
            for d in row:
                if not isinstance(d, IncrementDist):
                    raise ValidationError(f"dists entries must be IncrementDist, got {type(d).__name__}")
        matcore.require_irreducible(V * Pi, "V*Pi")
        if not np.any((V < 1) & (Pi > 0)):
            raise ValidationError("no transition with Pi > 0 has survival below one; "
                                  "the process would never stop")
        if self.omega0 is None:
            omega0 = matcore.stationary_distribution(Pi)
        else:
            omega0 = np.asarray(self.omega0, dtype=float)
            if omega0.shape != (N,) or np.any(omega0 < 0) or abs(omega0.sum() - 1) > 1e-12:
                raise ValidationError("omega0 must be a nonnegative N-vector summing to 1")
        for name, val in (("Pi", Pi), ("V", V), ("omega0", omega0)):
            val = np.array(val, dtype=float)
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "dists", dists)

    @property
    def N(self):
        return self.Pi.shape[0]

    @property
    def active(self):
        """Mask of transitions that occur and are survived with positive probability."""
        return (self.V * self.Pi) > 0

    def replace(self, **changes):
        kw = {"Pi": self.Pi, "V": self.V, "dists": self.dists, "omega0": self.omega0}
        kw.update(changes)
        return ProcessSpec(**kw)

    def reflect(self):
        """Spec of the process with every increment negated."""
        return self.replace(dists=[[d.reflect() for d in row] for row in self.dists])

    @classmethod
    def iid(cls, dist, survival):
        return cls(np.ones((1, 1)), survival, [[dist]])

    @classmethod
    def current_state(cls, Pi, V, dists, omega0=None):
        """Spec whose increment law depends only on the destination state.

        ``dists[n']`` is used on every transition into ``n'``; a vector
        ``V`` likewise means survival ``V[n']``.
        """
        Pi = np.asarray(Pi, dtype=float)
        N = Pi.shape[0]
        V = np.asarray(V, dtype=float)
        if V.ndim == 1:
            V = np.tile(V, (N, 1))
        return cls(Pi, V, [list(dists) for _ in range(N)], omega0)

    def to_dict(self):
        return {"N": self.N, "Pi": self.Pi.tolist(), "V": self.V.tolist(),
                "dists": [[d.to_dict() for d in row] for row in self.dists],
                "omega0": self.omega0.tolist()}

    @classmethod
    def from_dict(cls, data):
        """Parse the JSON-compatible model description.

        ``V`` may be a scalar survival probability, a length-N vector
        (survival keyed on the destination state) or a matrix.  ``dists``
        may be a single law, a list of N laws keyed on the destination state,
        or a full N x N grid.
        """
        try:
            Pi = np.asarray(data["Pi"], dtype=float)
        except KeyError:
            raise ValidationError("model spec is missing 'Pi'") from None
        N = Pi.shape[0] if Pi.ndim == 2 else 0
        if "N" in data and int(data["N"]) != N:
            raise ValidationError(f"N={data['N']} does not match Pi of size {N}")
        if "V" in data:
            V = np.asarray(data["V"], dtype=float)
        elif "p" in data:
            V = np.asarray(1.0 - float(data["p"]))
        else:
            raise ValidationError("model spec needs 'V' (or stopping probability 'p')")
        if V.ndim == 1:
            V = np.tile(V, (N, 1))
        raw = data.get("dists")
        if raw is None:
            raise ValidationError("model spec is missing 'dists'")
        if isinstance(raw, dict):
            grid = [[dist_from_dict(raw)] * N for _ in range(N)]
        elif len(raw) == N and all(isinstance(r, dict) for r in raw):
            row = [dist_from_dict(r) for r in raw]
            grid = [list(row) for _ in range(N)]
        else:
            grid = [[dist_from_dict(d) for d in r] for r in raw]
        return cls(Pi, V, grid, data.get("omega0"))


# ---------------------------------------------------------------------------
# MGF matrices and the spectral function


def mgf_domain(spec):
    """Intersection of the per-transition MGF domains."""
    lo = max(d.domain[0] for row in spec.dists for d in row)
    hi = min(d.domain[1] for row in spec.dists for d in row)
    return MgfDomain(lo, hi)


def _check_domain(spec, s):
    for n, row in enumerate(spec.dists):
        for m, d in enumerate(row):
            lo, hi = d.domain
            if not lo < s < hi:
                raise OutOfDomainError(
                    f"s={s!r} is outside the MGF domain ({lo}, {hi}) of transition ({n}, {m})",
                    cell=(n, m))


def mgf_matrix(spec, s):
    """Matrix of conditional MGFs ``E[exp(s X) | n, n']``."""
    s = float(s)
    _check_domain(spec, s)
    N = spec.N
    M = np.empty((N, N))
    with np.errstate(over="ignore"):
        for n in range(N):
            for m in range(N):
                try:
                    M[n, m] = spec.dists[n][m].mgf(s)
                except OverflowError:
                    M[n, m] = math.inf
    return M


def dmgf_matrix(spec, s):
    s = float(s)
    _check_domain(spec, s)
    N = spec.N
    D = np.empty((N, N))
    for n in range(N):
        for m in range(N):
            try:
                D[n, m] = spec.dists[n][m].dmgf(s)
            except OverflowError:
                D[n, m] = math.inf
    return D


def kernel(spec, s):
    """``V * Pi * M(s)``; inactive transitions are exactly zero."""
    M = mgf_matrix(spec, s)
    K = spec.V * spec.Pi
    out = np.zeros_like(K)
    act = K > 0
    out[act] = K[act] * M[act]
    return out


def dkernel(spec, s):
    D = dmgf_matrix(spec, s)
    K = spec.V * spec.Pi
    out = np.zeros_like(K)
    act = K > 0
    out[act] = K[act] * D[act]
    return out


def lam(spec, s):
    """Spectral radius of ``V * Pi * M(s)``; ``inf`` if an MGF entry overflows."""
    K = kernel(spec, s)
    if not np.all(np.isfinite(K)):
        return math.inf
    return matcore.spectral_radius(K)


def lam_two_state(a, x, s):
    """Closed form of the spectral function for two states with point-mass increments.

    ``a`` is the 2x2 matrix ``V * Pi`` and ``x`` the state values
    (increment ``x[n']`` on entering state ``n'``).
    """
    e1 = math.exp(s * x[0])
    e2 = math.exp(s * x[1])
    d = a[0][0] * e1 - a[1][1] * e2
    return 0.5 * (a[0][0] * e1 + a[1][1] * e2
                  + math.sqrt(d * d + 4 * a[0][1] * a[1][0] * math.exp(s * (x[0] + x[1]))))


# ---------------------------------------------------------------------------
# lattice detection


@dataclass(frozen=True)
class LatticeStructure:
    """Outcome of the lattice test.

    ``span`` is the common grid step ``d`` (``None`` for non-lattice
    processes).  ``offset`` flags lattices whose per-transition grids are
    shifted (``a_{nn'}`` not all multiples of ``d``).
    """

    lattice: bool
    span: float = None
    offset: bool = False

    def __str__(self):
        if not self.lattice:
            return "NonLattice"
        tag = ", offset" if self.offset else ""
        return f"Lattice(span={self.span:.12g}{tag})"


NON_LATTICE = LatticeStructure(False)


def lattice_structure(spec):
    """Decide whether the active increments live on a common shifted grid.

    Supports are rounded to ``LATTICE_DIGITS`` decimals and handled as
    integers.  A potential ``phi`` is propagated along a spanning tree of
    the active transitions; every support point ``x`` on ``(n, n')`` then
    leaves a residual ``x - (phi[n'] - phi[n])`` and the span is the gcd of
    all residuals.  Spans below ``MIN_LATTICE_SPAN`` are indistinguishable
    from rounding noise and are reported as non-lattice.
    """
    scale = 10 ** LATTICE_DIGITS
    act = spec.active
    N = spec.N
    supports = {}
    for n in range(N):
        for m in range(N):
            if act[n, m]:
                sup = spec.dists[n][m].support()
                if sup is None:
                    return NON_LATTICE
                supports[n, m] = [int(round(x * scale)) for x in sup]

    phi = [None] * N
    phi[0] = 0
    queue = [0]
    while queue:
        n = queue.pop(0)
        for m in range(N):
            if act[n, m] and phi[m] is None:
                phi[m] = phi[n] + supports[n, m][0]
                queue.append(m)
    # V*Pi is irreducible, so every state received a potential
    g = 0
    for (n, m), pts in supports.items():
        for x in pts:
            g = math.gcd(g, abs(x - (phi[m] - phi[n])))
    if g == 0:
        return LatticeStructure(True, math.inf, False)
    span = g / scale
    if span < MIN_LATTICE_SPAN:
        return NON_LATTICE
    offset = any(p % g != 0 for p in phi)
    return LatticeStructure(True, span, offset)
