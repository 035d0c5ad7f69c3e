"""Tables behind the standard figures, written as CSV with an optional SVG.

Column schemas (one header row, floats with 17 significant digits):

``rank_size``
    ``rank, size, log_rank, log_size``; sizes sorted in decreasing order.
``tail_curve``
    ``w, scaled_tail, log_tail_over_w, lower_bound, upper_bound`` where
    ``scaled_tail = exp(alpha w) P(W > w)``.
``exponent_vs_tau``
    ``tau, alpha`` for the blended transition matrix ``tau I + (1-tau) Pi``.
``implied_vs_N``
    ``states, mean_age, implied_exponent, loglik``.
"""
import csv
import math

import numpy as np

from .errors import NoSolutionError, ValidationError
from .sim import empirical_tail_curve
from .solver import solve_exponent

KINDS = ("rank_size", "tail_curve", "exponent_vs_tau", "implied_vs_N")
SVG_SALT = "marktail"

COLUMNS = {
    "rank_size": ("rank", "size", "log_rank", "log_size"),
    "tail_curve": ("w", "scaled_tail", "log_tail_over_w", "lower_bound", "upper_bound"),
    "exponent_vs_tau": ("tau", "alpha"),
    "implied_vs_N": ("states", "mean_age", "implied_exponent", "loglik"),
}


def rank_size(sample, top=None):
    x = np.sort(np.asarray(sample, dtype=float))[::-1]
    x = x[x > 0]
    if top is not None:
        x = x[:top]
    r = np.arange(1, x.size + 1, dtype=float)
    return np.column_stack([r, x, np.log(r), np.log(x)])


def tail_curve(sample, alpha, bounds=(math.nan, math.nan), num=200, quantile=0.9, min_count=10):
    s = np.asarray(sample, dtype=float)
    lo = np.quantile(s, quantile)
    hi = np.sort(s)[-min_count - 1]
    grid = np.linspace(lo, hi, num)
    table, _ = empirical_tail_curve(s, alpha, grid, min_count=min_count)
    b = np.tile(np.asarray(bounds, dtype=float), (table.shape[0], 1))
    return np.column_stack([table, b])


def exponent_vs_tau(spec, taus=None):
    if taus is None:
        taus = np.linspace(0.0, 0.99, 100)
    rows = []
    for t in taus:
        s = spec.replace(Pi=t * np.eye(spec.N) + (1 - t) * spec.Pi)
        try:
            a = solve_exponent(s)
        except NoSolutionError:
            a = math.nan
        rows.append((float(t), a))
    return np.array(rows)


def implied_vs_N(data, states=(1, 2, 3, 4, 5), mean_ages=(150, 400, 1000), **fit_kw):
    from .regimefit import em_fit, implied_exponent_from_lifespan
    rows = []
    for n in states:
        fit = em_fit(data, n, **fit_kw)
        for T in mean_ages:
            try:
                a = implied_exponent_from_lifespan(fit.model, T)
            except NoSolutionError:
                a = math.nan
            rows.append((n, T, a, fit.loglik))
    return np.array(rows, dtype=float)


def write_table(path, kind, table):
    cols = COLUMNS[kind]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in table:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    v = float(v)
    if v.is_integer() and abs(v) < 2 ** 53:
        return str(int(v))
    return f"{v:.17g}"


def write_svg(path, kind, table):
    """Static line plot of the table; deterministic bytes for equal input."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = SVG_SALT
    x_col, y_col = {"rank_size": (3, 2), "tail_curve": (0, 1),
                    "exponent_vs_tau": (0, 1), "implied_vs_N": (0, 2)}[kind]
    cols = COLUMNS[kind]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if kind == "implied_vs_N":
        for T in np.unique(table[:, 1]):
            sel = table[:, 1] == T
            ax.plot(table[sel, 0], table[sel, 2], marker="o", label=f"mean age {T:g}")
        ax.legend()
    elif kind == "rank_size":
        ax.plot(table[:, 3], table[:, 2], ".", ms=2)
    else:
        ax.plot(table[:, x_col], table[:, y_col])
        if kind == "tail_curve" and np.all(np.isfinite(table[0, 3:5])):
            ax.axhline(table[0, 3], ls="--", lw=0.8)
            ax.axhline(table[0, 4], ls="--", lw=0.8)
    ax.set_xlabel(cols[x_col])
    ax.set_ylabel(cols[y_col])
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_plot_data(kind, table, csv_path, svg_path=None):
    """Write ``table`` for ``kind`` to ``csv_path`` and optionally an SVG render."""
    if kind not in KINDS:
        raise ValidationError(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[1] != len(COLUMNS[kind]):
        raise ValidationError(f"{kind} table needs {len(COLUMNS[kind])} columns")
    write_table(csv_path, kind, table)
    if svg_path:
        write_svg(svg_path, kind, table)
    return csv_path
