"""Transportation costs and characteristic times of a bandit instance.

For the best arm ``b`` and a suboptimal arm ``i`` the two-arm transport cost is

    f_i(w) = w_b d(mu_b, m) + w_i d(mu_i, m),   m = (w_b mu_b + w_i mu_i)/(w_b + w_i)

and ``g(w) = min_i f_i(w)``.  ``1/T*`` is the maximum of ``g`` over the simplex,
``1/T^beta`` the maximum with ``w_b`` pinned at ``beta``, and the relaxed time
``T_lower`` the value at the allocation that keeps the best/second-best ratio at
the balance point ``gamma`` of the two divergences.

The maximisers are found through the one-dimensional reparameterisations

    k_i(x) = d(mu_b, m_x) + x d(mu_i, m_x),        m_x = (mu_b + x mu_i)/(1 + x)
    h_i(z) = (1 - z) d(mu_b, m_z) + z d(mu_i, m_z), m_z = (1 - z) mu_b + z mu_i

so that ``f_i(w) = w_b k_i(w_i/w_b) = (w_b + w_i) h_i(w_i/(w_b + w_i))``.  All
root finding is plain bisection on monotone functions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .models import Gaussian, Instance

TOL = 1e-10
MAX_ITER = 200


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(f"{message} (residual={residual:.3g})")
        self.residual = residual


@dataclass(frozen=True)
class Weights:
    """A point of the probability simplex, renormalised on construction."""

    w: np.ndarray

    def __init__(self, w: Sequence[float]):
        arr = np.asarray(w, dtype=float).copy()
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError(f"weights must be finite and nonnegative: {arr}")
        total = arr.sum()
        if total <= 0:
            raise ValueError("weights sum to zero")
        arr /= total
        arr.setflags(write=False)
        object.__setattr__(self, "w", arr)

    def __len__(self):
        return self.w.size

    def __getitem__(self, i):
        return self.w[i]

    def __iter__(self):
        return iter(self.w)

    def __eq__(self, other):
        return isinstance(other, Weights) and np.array_equal(self.w, other.w)

    def __hash__(self):
        return hash(self.w.tobytes())

    def tolist(self) -> list[float]:
        return self.w.tolist()

    def is_interior(self) -> bool:
        return bool(np.all(self.w > 0))


def as_weights(w) -> Weights:
    return w if isinstance(w, Weights) else Weights(w)


@dataclass(frozen=True)
class CharacteristicTimes:
    t_star: float
    w_star: Weights
    t_beta: float
    t_lower: float
    gamma: float
    w_lower: Weights
    y_star: float
    y_lower: float
    beta: float = 0.5


def bisect(fn: Callable[[float], float], lo: float, hi: float, tol: float = TOL,
           max_iter: int = MAX_ITER) -> float:
    """Root of an increasing ``fn`` on ``[lo, hi]``.

    Stops once ``|fn(x)| <= tol`` or the bracket can no longer be split in
    floating point; in the latter case the best point seen is returned.
    Raises :class:`SolverError` if ``max_iter`` halvings were not enough.
    """
    f_lo = fn(lo)
    if f_lo >= 0:
        return lo
    f_hi = fn(hi)
    if f_hi <= 0:
        return hi
    best_x, best_f = lo, f_lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = fn(mid)
        if abs(f_mid) < abs(best_f):
            best_x, best_f = mid, f_mid
        if abs(f_mid) <= tol:
            return mid
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    else:
        raise SolverError("bisection hit the iteration cap", abs(best_f))
    return best_x


# ----------------------------------------------------------------------------
# Scalar kernels on a (model, means, best) triple so that empirical means with
# ties can reuse them.


def _pair_cost(kl, mu_a: float, mu_b: float, w_a: float, w_b: float) -> float:
    tot = w_a + w_b
    if tot <= 0:
        return 0.0
    m = (w_a * mu_a + w_b * mu_b) / tot
    cost = 0.0
    if w_a > 0:
        cost += w_a * kl(mu_a, m)
    if w_b > 0:
        cost += w_b * kl(mu_b, m)
    return cost


def _k(kl, mu_b: float, mu_i: float, x: float) -> float:
    m = (mu_b + x * mu_i) / (1.0 + x)
    return kl(mu_b, m) + x * kl(mu_i, m)


def _l_inverse(kl, mu_b: float, mu_i: float, y: float, tol: float = TOL) -> float:
    if y <= 0:
        return 0.0
    cap = kl(mu_b, mu_i)
    if y >= cap:
        raise ValueError(f"y={y} outside the range [0, {cap}) of k")
    hi = 1.0
    for _ in range(MAX_ITER):
        if _k(kl, mu_b, mu_i, hi) > y:
            break
        hi *= 2.0
    else:
        return hi
    # tighter than the tol*max(1, y) contract so that F inherits little noise
    return bisect(lambda x: _k(kl, mu_b, mu_i, x) - y, 0.0, hi, 1e-3 * tol * y)


def _l_inverse_newton(kl, mu_b: float, mu_i: float, y: float, rtol: float) -> float:
    """Safeguarded Newton for ``k(x) = y``; ``k'(x) = kl(mu_i, m(x))`` by the envelope theorem."""
    if y <= 0:
        return 0.0
    lo, hi, x = 0.0, math.inf, 1.0
    for _ in range(MAX_ITER):
        m = (mu_b + x * mu_i) / (1.0 + x)
        d = kl(mu_i, m)
        r = kl(mu_b, m) + x * d - y
        if abs(r) <= rtol * y:
            return x
        if r < 0:
            lo = x
        else:
            hi = x
        if hi - lo <= 4e-16 * hi:
            return x
        step = x - r / d if d > 0 else math.nan
        if lo < step < hi:
            x = step
        else:
            x = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * x
    raise SolverError("Newton inverse of k did not converge", abs(r))


def _solve_w_star_fast(kl, means, best, rtol: float = 1e-9) -> np.ndarray:
    """Looser, much cheaper w* for plug-in use inside sampling rules."""
    mu_b = means[best]
    second = max(m for i, m in enumerate(means) if i != best)
    y_max = kl(mu_b, second)
    if not 0 < y_max < math.inf:
        raise SolverError("degenerate instance for w*", math.nan)
    others = [(i, m) for i, m in enumerate(means) if i != best]

    def excess(y):
        total = 0.0
        for _, mu_i in others:
            x = _l_inverse_newton(kl, mu_b, mu_i, y, rtol)
            m = (mu_b + x * mu_i) / (1.0 + x)
            den = kl(mu_i, m)
            if den <= 0:
                return math.inf
            total += kl(mu_b, m) / den
        return total - 1.0

    hi = (1.0 - 1e-9) * y_max
    if excess(hi) <= 0:
        y = hi
    else:
        y = optimize.brentq(excess, 0.0, hi, xtol=1e-12 * y_max, rtol=1e-10)
    ratios = [1.0] * len(means)
    for i, mu_i in others:
        ratios[i] = _l_inverse_newton(kl, mu_b, mu_i, y, rtol)
    w = np.array(ratios)
    return w / w.sum()


def _F(kl, means, best, y, tol=TOL) -> float:
    mu_b = means[best]
    total = 0.0
    for i, mu_i in enumerate(means):
        if i == best:
            continue
        x = _l_inverse(kl, mu_b, mu_i, y, tol)
        m = (mu_b + x * mu_i) / (1.0 + x)
        den = kl(mu_i, m)
        if den <= 0:
            return math.inf
        total += kl(mu_b, m) / den
    return total


def _solve_w_star(kl, means, best, tol=TOL) -> tuple[np.ndarray, float]:
    mu_b = means[best]
    second = max(m for i, m in enumerate(means) if i != best)
    y_max = kl(mu_b, second)
    if not 0 < y_max < math.inf:
        raise SolverError("degenerate instance for w*", math.nan)
    hi = (1.0 - 1e-12) * y_max
    F_hi = _F(kl, means, best, hi, tol)
    if F_hi < 1.0:
        # only possible when k_i is not monotone (Pareto under the arithmetic mean)
        raise SolverError("F_mu stays below 1 on the whole bracket", 1.0 - F_hi)
    y = bisect(lambda v: _F(kl, means, best, v, tol) - 1.0, 0.0, hi, tol)
    ratios = [1.0 if i == best else _l_inverse(kl, mu_b, m, y, tol) for i, m in enumerate(means)]
    w = np.array(ratios) / sum(ratios)
    return w, y


def _g(kl, means, best, w) -> float:
    mu_b, w_b = means[best], w[best]
    return float(min(_pair_cost(kl, mu_b, m, w_b, w[i]) for i, m in enumerate(means) if i != best))


# ----------------------------------------------------------------------------
# Public API on Instance objects.


def f_value(i: int, w, inst: Instance, best: int | None = None) -> float:
    best = inst.best if best is None else best
    if i == best:
        raise ValueError("f is undefined for the best arm itself")
    w = as_weights(w)
    return _pair_cost(inst.model.kl, inst.means[best], inst.means[i], w[best], w[i])


def g_value(w, inst: Instance) -> float:
    w = as_weights(w)
    return _g(inst.model.kl, inst.means, inst.best, w)


def subgradient(w, inst: Instance, tie_tol: float = 0.0) -> np.ndarray:
    """Subgradient of ``g`` at interior ``w`` averaging over the active challengers."""
    w = as_weights(w)
    if not w.is_interior():
        raise ValueError("subgradient requires w in the interior of the simplex")
    kl, means, b = inst.model.kl, inst.means, inst.best
    fs = {i: _pair_cost(kl, means[b], means[i], w[b], w[i]) for i in range(inst.K) if i != b}
    fmin = min(fs.values())
    if tie_tol > 0:
        J = [i for i, f in fs.items() if f <= fmin + tie_tol]
    else:
        J = [min(i for i, f in fs.items() if f == fmin)]
    v = np.zeros(inst.K)
    for j in J:
        m = (w[b] * means[b] + w[j] * means[j]) / (w[b] + w[j])
        v[b] += kl(means[b], m) / len(J)
        v[j] = kl(means[j], m) / len(J)
    return v


def _check_sub(i: int, inst: Instance) -> None:
    if i == inst.best:
        raise ValueError("arm index must differ from the best arm")


def k_value(i: int, x: float, inst: Instance) -> float:
    _check_sub(i, inst)
    if x < 0:
        raise ValueError("x must be nonnegative")
    return _k(inst.model.kl, inst.means[inst.best], inst.means[i], x)


def h_value(i: int, z: float, inst: Instance) -> float:
    _check_sub(i, inst)
    if not 0 <= z <= 1:
        raise ValueError("z must lie in [0, 1]")
    kl, mu_b, mu_i = inst.model.kl, inst.means[inst.best], inst.means[i]
    m = (1 - z) * mu_b + z * mu_i
    return (1 - z) * kl(mu_b, m) + z * kl(mu_i, m)


def l_inverse(i: int, y: float, inst: Instance, tol: float = TOL) -> float:
    """Inverse of ``k_i``: the ratio ``w_i/w_best`` at which ``k_i`` equals ``y``."""
    _check_sub(i, inst)
    if y < 0:
        raise ValueError("y must be nonnegative")
    return _l_inverse(inst.model.kl, inst.means[inst.best], inst.means[i], y, tol)


def F_mu(y: float, inst: Instance, tol: float = TOL) -> float:
    return _F(inst.model.kl, inst.means, inst.best, y, tol)


def _check_gap(inst: Instance) -> None:
    if inst.means[inst.best] - inst.means[inst.second] < 1e-9:
        raise ValueError("best and second-best means are too close")


def solve_w_star(inst: Instance, tol: float = TOL) -> tuple[Weights, float]:
    """Optimal allocation and the common value ``y*`` of the ``k_i``."""
    _check_gap(inst)
    w, y = _solve_w_star(inst.model.kl, inst.means, inst.best, tol)
    return Weights(w), y


def t_star(inst: Instance, tol: float = TOL) -> float:
    w, _ = solve_w_star(inst, tol)
    return 1.0 / g_value(w, inst)


def t_beta(inst: Instance, beta: float, tol: float = TOL) -> float:
    """Characteristic time with the best arm's share fixed at ``beta``."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    _check_gap(inst)
    kl, means, b = inst.model.kl, inst.means, inst.best
    target = (1.0 - beta) / beta
    others = [m for i, m in enumerate(means) if i != b]
    hi = (1.0 - 1e-12) * kl(means[b], means[inst.second])

    def excess(c):
        return sum(_l_inverse(kl, means[b], m, c, tol) for m in others) - target

    c = bisect(excess, 0.0, hi, tol)
    # match the bisection residual to the scale of the target sum
    if abs(excess(c)) > max(1e-6, tol) * max(1.0, target):
        raise SolverError("t_beta equalisation failed", abs(excess(c)))
    return 1.0 / (beta * c)


def solve_gamma(inst: Instance, tol: float = TOL) -> float:
    """Share ``z`` of the second arm where ``d(mu_1, m_z) = d(mu_2, m_z)``."""
    _check_gap(inst)
    kl = inst.model.kl
    mu1, mu2 = inst.means[inst.best], inst.means[inst.second]

    def balance(z):
        m = (1 - z) * mu1 + z * mu2
        return kl(mu1, m) - kl(mu2, m)

    return bisect(balance, 0.0, 1.0, tol * 1e-3)


def lower_allocation(inst: Instance, tol: float = TOL) -> tuple[Weights, float, float]:
    """``(w_lower, gamma, y_lower)``: allocation equalising every ``k_i`` at ``k_2(gamma/(1-gamma))``."""
    gamma = solve_gamma(inst, tol)
    kl, means, b, s = inst.model.kl, inst.means, inst.best, inst.second
    x2 = gamma / (1.0 - gamma)
    y = _k(kl, means[b], means[s], x2)
    ratios = []
    for i, m in enumerate(means):
        if i == b:
            ratios.append(1.0)
        elif m == means[s]:
            ratios.append(x2)
        else:
            ratios.append(_l_inverse(kl, means[b], m, y, tol))
    return Weights(ratios), gamma, y


def t_lower(inst: Instance, tol: float = TOL) -> tuple[float, Weights]:
    w, _, _ = lower_allocation(inst, tol)
    return 1.0 / g_value(w, inst), w


def gaussian_t_lower_closed(inst: Instance) -> float:
    if not isinstance(inst.model, Gaussian):
        raise ValueError("closed form only holds for the Gaussian model")
    mu1 = inst.means[inst.best]
    gaps = [mu1 - m for i, m in enumerate(inst.means) if i != inst.best]
    d2 = min(gaps)
    gaps.append(d2)
    return sum(4 * inst.model.sigma2 / (g * g + (g * g - d2 * d2)) for g in gaps)


def characteristic_times(inst: Instance, beta: float = 0.5, tol: float = TOL) -> CharacteristicTimes:
    w_star, y_star = solve_w_star(inst, tol)
    w_low, gamma, y_low = lower_allocation(inst, tol)
    return CharacteristicTimes(
        t_star=1.0 / g_value(w_star, inst),
        w_star=w_star,
        t_beta=t_beta(inst, beta, tol),
        t_lower=1.0 / g_value(w_low, inst),
        gamma=gamma,
        w_lower=w_low,
        y_star=y_star,
        y_lower=y_low,
        beta=beta,
    )


def simplex_lattice(K: int, resolution: int) -> np.ndarray:
    """All points of the simplex with coordinates in ``{0, 1/n, ..., 1}``."""
    rows = []
    for cuts in itertools.combinations(range(resolution + K - 1), K - 1):
        prev = -1
        row = []
        for c in cuts:
            row.append(c - prev - 1)
            prev = c
        row.append(resolution + K - 2 - prev)
        rows.append(row)
    return np.array(rows, dtype=float) / resolution


def brute_force_t_star(inst: Instance, grid_resolution: int = 400) -> float:
    """Grid-search oracle for ``T*``; an upper bound up to lattice granularity."""
    if inst.K > 4:
        raise ValueError("brute-force grid limited to K <= 4")
    if grid_resolution < 50:
        raise ValueError("grid resolution must be at least 50")
    grid = simplex_lattice(inst.K, grid_resolution)
    kl = np.vectorize(inst.model.kl, otypes=[float])
    b = inst.best
    mu_b = inst.means[b]
    wb = grid[:, b]
    g = np.full(len(grid), np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        for i, mu_i in enumerate(inst.means):
            if i == b:
                continue
            wi = grid[:, i]
            tot = wb + wi
            m = np.where(tot > 0, (wb * mu_b + wi * mu_i) / np.where(tot > 0, tot, 1.0), mu_b)
            f = wb * kl(mu_b, m) + wi * kl(mu_i, m)
            g = np.minimum(g, f)
    return 1.0 / g.max()
