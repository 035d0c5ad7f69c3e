"""Local sensitivity of the upper tail exponent.

With ``F(s, theta) = rho(V * Pi(tau) * M(s; mu, sigma))`` and
``Pi(tau) = tau I + (1 - tau) Pi``, the implicit function theorem gives
``d alpha / d theta = -F_theta / F_s`` at ``F = 1``.  Both partials come
from the Perron pair: ``d rho = y' dK x / y' x`` for a simple root.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import NumericalError, ValidationError
from .mapmodel import ProcessSpec, PointMass, ShiftedScaled, dkernel, kernel, mgf_matrix
from .solver import solve_exponent


@dataclass(frozen=True, eq=False)
class SensitivityReport:
    alpha: float
    dAlpha_dV: np.ndarray
    dAlpha_dMu: np.ndarray
    dAlpha_dSigma: np.ndarray
    dAlpha_dTau: float = None

    def to_dict(self):
        return {"alpha": self.alpha,
                "dAlpha_dV": self.dAlpha_dV.tolist(),
                "dAlpha_dMu": self.dAlpha_dMu.tolist(),
                "dAlpha_dSigma": self.dAlpha_dSigma.tolist(),
                "dAlpha_dTau": self.dAlpha_dTau}


def blend(spec, tau):
    """Spec with the transition matrix replaced by ``tau I + (1 - tau) Pi``."""
    return spec.replace(Pi=tau * np.eye(spec.N) + (1.0 - tau) * spec.Pi)


def is_current_state(spec):
    """True when survival and increment law depend only on the destination state."""
    N = spec.N
    for m in range(N):
        col = [spec.dists[n][m] for n in range(N)]
        if any(d != col[0] for d in col[1:]):
            return False
        if np.any(spec.V[:, m] != spec.V[0, m]):
            return False
    return True


def _perron(spec, alpha):
    K = kernel(spec, alpha)
    pair = matcore.perron_pair(K)
    return pair.left, pair.right, float(pair.left @ pair.right)


def _dF_ds(spec, alpha, y, x, yx):
    dF = float(y @ dkernel(spec, alpha) @ x) / yx
    if not dF > 0:
        raise NumericalError(f"dF/ds = {dF!r} is not positive at alpha={alpha!r}; "
                             "the root was not bracketed on the increasing branch")
    return dF


def dalpha_dtau(spec, tau, alpha=None):
    """``d alpha / d tau`` at persistence ``tau`` (no current-state restriction)."""
    bs = blend(spec, tau)
    if alpha is None:
        alpha = solve_exponent(bs)
    y, x, yx = _perron(bs, alpha)
    Fs = _dF_ds(bs, alpha, y, x, yx)
    dK = spec.V * (np.eye(spec.N) - spec.Pi) * mgf_matrix(spec, alpha)
    return -float(y @ dK @ x) / yx / Fs


def sensitivities(spec, tau=0.0):
    """Partial derivatives of ``alpha`` in every survival, location and scale entry.

    Every increment must be a :class:`ShiftedScaled` law (see
    :func:`marktail.mapmodel.to_shifted_scaled`) so that the location and
    scale parameters are well defined.  ``tau`` blends the transition matrix
    towards the identity before solving.  ``dAlpha_dTau`` is reported only
    for current-state specs, where its sign is known to be nonpositive.
    """
    for row in spec.dists:
        for d in row:
            if not isinstance(d, ShiftedScaled):
                raise ValidationError("sensitivities need location-scale increments; "
                                      "convert with to_shifted_scaled")
    if not 0.0 <= tau < 1.0:
        raise ValidationError("tau must lie in [0, 1)")
    bs = blend(spec, tau) if tau else spec
    alpha = solve_exponent(bs)
    y, x, yx = _perron(bs, alpha)
    Fs = _dF_ds(bs, alpha, y, x, yx)
    N = spec.N
    M = mgf_matrix(bs, alpha)
    dMu = np.empty((N, N))
    dSig = np.empty((N, N))
    for n in range(N):
        for m in range(N):
            d = bs.dists[n][m]
            dMu[n, m] = d.dmgf_dloc(alpha)
            dSig[n, m] = d.dmgf_dscale(alpha)
    # rank-one structure: y' (E_nm * c) x = y_n c x_m
    outer = np.outer(y, x) / yx
    dV = -outer * bs.Pi * M / Fs
    dmu = -outer * bs.V * bs.Pi * dMu / Fs
    dsig = -outer * bs.V * bs.Pi * dSig / Fs
    dtau = dalpha_dtau(spec, tau, alpha) if is_current_state(spec) else None
    return SensitivityReport(alpha, dV, dmu, dsig, dtau)


def finite_difference(spec, tau=0.0, rel_step=1e-6):
    """Central finite differences of ``alpha``; the cross-check for :func:`sensitivities`."""
    N = spec.N

    def alpha_of(s, t=tau):
        return solve_exponent(blend(s, t) if t else s)

    def step(v):
        return rel_step * max(abs(v), 1.0)

    dV = np.zeros((N, N))
    dMu = np.zeros((N, N))
    dSig = np.zeros((N, N))
    for n in range(N):
        for m in range(N):
            v = spec.V[n, m]
            h = step(v)
            Vp, Vm = spec.V.copy(), spec.V.copy()
            Vp[n, m] += h
            Vm[n, m] -= h
            if v + h <= 1.0 and v - h >= 0.0:
                dV[n, m] = (alpha_of(spec.replace(V=Vp)) - alpha_of(spec.replace(V=Vm))) / (2 * h)
            else:
                dV[n, m] = math.nan
            d = spec.dists[n][m]
            h = step(d.loc)
            dMu[n, m] = (alpha_of(_swap(spec, n, m, ShiftedScaled(d.base, d.loc + h, d.scale)))
                         - alpha_of(_swap(spec, n, m, ShiftedScaled(d.base, d.loc - h, d.scale)))) / (2 * h)
            h = rel_step * d.scale
            dSig[n, m] = (alpha_of(_swap(spec, n, m, ShiftedScaled(d.base, d.loc, d.scale + h)))
                          - alpha_of(_swap(spec, n, m, ShiftedScaled(d.base, d.loc, d.scale - h)))) / (2 * h)
    h = rel_step * max(tau, 1.0)
    lo = max(tau - h, 0.0)
    dtau = (alpha_of(spec, tau + h) - alpha_of(spec, lo)) / (tau + h - lo)
    return SensitivityReport(alpha_of(spec), dV, dMu, dSig, dtau)


def _swap(spec, n, m, dist):
    grid = [list(r) for r in spec.dists]
    grid[n][m] = dist
    return spec.replace(dists=grid)


def persistence_counterexample(v=0.96, mu=0.02, taus=None):
    """Exponent against persistence when increments depend on the transition.

    The chain switches states with probability ``1 - tau``; a switch adds
    ``mu`` and staying adds nothing.  Here ``alpha(tau)`` has the closed
    form ``log(1 + (1/v - 1) / (1 - tau)) / mu`` and *increases* with
    ``tau``.  Returns rows ``(tau, alpha_solved, alpha_closed_form)``.
    """
    if taus is None:
        taus = np.round(np.arange(0.1, 0.91, 0.1), 10)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    dists = [[PointMass(0.0), PointMass(mu)], [PointMass(mu), PointMass(0.0)]]
    rows = []
    for tau in taus:
        Pi = tau * np.eye(2) + (1 - tau) * swap
        spec = ProcessSpec(Pi, v, dists)
        closed = math.log1p((1.0 / v - 1.0) / (1.0 - tau)) / mu
        rows.append((float(tau), solve_exponent(spec), closed))
    return rows


def counterexample_spec(v=0.96, mu=0.02, tau=0.0):
    """The transition-dependent spec behind :func:`persistence_counterexample`."""
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    Pi = tau * np.eye(2) + (1 - tau) * swap
    return ProcessSpec(Pi, v, [[PointMass(0.0), PointMass(mu)], [PointMass(mu), PointMass(0.0)]])
