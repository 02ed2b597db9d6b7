"""Independent reference computations used by the tests.

None of these import the package's numerical code: they work from the
problem statement (maximize price-weighted energy traded minus discharge
cost, subject to SoC and per-step power limits).
"""

from __future__ import annotations

import itertools

import numpy as np


def grid_dp(prices, n_states: int, width: float, up: int, down: int, eta: float, c: float):
    """Optimal profit-to-go on the SoC grid ``0, width, ..., n_states*width``.

    Moving ``d > 0`` grid steps up buys ``d*width/eta`` MWh; moving ``d`` steps
    down sells ``d*width*eta`` MWh.  Moves are capped at ``up``/``down`` steps
    (the power limit), terminal value is zero.  Discharge needs a positive
    price, which also rules out simultaneous charge and discharge.

    Returns ``V`` with ``V[k][i]`` the best profit from step ``k`` at level
    ``i`` (``V[T]`` is all zeros).
    """
    N = n_states
    V = [np.zeros(N + 1)]
    src = np.arange(N + 1)
    for lam in prices[::-1]:
        nxt = V[-1]
        best = np.full(N + 1, -np.inf)
        for d in range(-down, up + 1):
            dst = src + d
            ok = (dst >= 0) & (dst <= N)
            if d > 0:
                r = -lam * d * width / eta
            elif d < 0:
                if lam <= 0:
                    continue  # no discharging into a non-positive price
                r = (lam - c) * (-d) * width * eta
            else:
                r = 0.0
            best[src[ok]] = np.maximum(best[src[ok]], r + nxt[dst[ok]])
        V.append(best)
    return V[::-1]


def marginal_values_fd(V_k: np.ndarray, width: float) -> np.ndarray:
    """Segment marginal values as finite differences of a grid value function."""
    return np.diff(V_k) / width


def enumerate_plans(prices, energy: float, p_step: float, eta: float, c: float, e0: float = 0.0):
    """Best profit over every sequence of full charge / idle / full discharge.

    Only meaningful when every step can move a whole ``p_step`` (e.g. when
    ``energy`` is a multiple of the per-step energy movement).
    """
    best = -np.inf
    for plan in itertools.product((-1, 0, 1), repeat=len(prices)):
        e, profit = e0, 0.0
        for lam, a in zip(prices, plan):
            if a == 1:
                step = min(p_step * eta, energy - e)
                profit -= lam * step / eta
                e += step
            elif a == -1 and lam > 0:
                step = min(p_step / eta, e)
                profit += (lam - c) * step * eta
                e -= step
        best = max(best, profit)
    return best


def value_to_go(q: np.ndarray, energy: float, e: float) -> float:
    """Integral of the piecewise-constant marginal value ``q`` from 0 to ``e``."""
    width = energy / len(q)
    full = int(np.floor(e / width + 1e-12))
    full = min(full, len(q))
    total = float(np.sum(q[:full])) * width
    if full < len(q):
        total += q[full] * (e - full * width)
    return total


def single_period_objective(q, energy, price, e_prev, e_new, eta, c):
    """Step revenue plus value-to-go of the resulting SoC."""
    if e_new >= e_prev:
        rev = -price * (e_new - e_prev) / eta
    else:
        rev = (price - c) * (e_prev - e_new) * eta
    return rev + value_to_go(q, energy, e_new)


def single_period_best(q, energy, price, e_prev, p_step, eta, c, points: int = 4001):
    """Brute-force single-period optimum over a dense grid of end states."""
    lo = max(0.0, e_prev - p_step / eta) if price > 0 else e_prev
    hi = min(energy, e_prev + p_step * eta)
    cands = np.unique(np.concatenate([np.linspace(lo, hi, points), [e_prev, lo, hi],
                                      np.arange(len(q) + 1) * energy / len(q)]))
    cands = cands[(cands >= lo - 1e-12) & (cands <= hi + 1e-12)]
    vals = [single_period_objective(q, energy, price, e_prev, e, eta, c) for e in cands]
    return float(np.max(vals))


def central_difference(f, params: list[np.ndarray], h: float = 1e-6) -> list[np.ndarray]:
    """Numerical gradient of scalar ``f()`` w.r.t. each array in ``params`` (in place)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            fp = f()
            p[i] = old - h
            fm = f()
            p[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def aligned_instance(rng, max_T: int = 48, max_N: int = 201):
    """Random storage/price instance whose power moves are whole grid steps.

    Returns a dict with eta, c, N, up, down, width, p_step and prices.
    """
    eta = float(rng.choice([0.8, 0.9, 1.0]))
    c = float(rng.choice([0.0, 10.0]))
    if eta == 0.9:
        up, down = 81, 100
    elif eta == 0.8:
        k = int(rng.integers(1, 9))
        up, down = 16 * k, 25 * k
    else:
        up = down = int(rng.integers(1, 61))
    N = int(rng.integers(down, max_N + 1))
    energy = 1.0
    width = energy / N
    p_step = down * width * eta
    T = int(rng.integers(1, max_T + 1))
    prices = rng.uniform(-20.0, 150.0, T)
    return {"eta": eta, "c": c, "N": N, "up": up, "down": down, "width": width,
            "energy": energy, "p_step": p_step, "prices": prices}
