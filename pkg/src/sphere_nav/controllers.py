"""Feedback laws for safe stabilization on the sphere.

Two laws are provided.  The conic-gradient law is the negative ambient
gradient of the navigation value

    W(x) = k1 * d_t / (d_t + beta(x)),      d_t = d_s(x, x_d),

where beta blends to zero through a cubic smoothstep of the distance to the
nearest cap.  The star-piecewise law is

    u = k1 * [ (d_i/eps) x_d - (1/kappa)(1 - d_i/eps) g_i ]

inside the band of width eps around constraint i, and k1 * x_d elsewhere;
g_i is the validated kernel point of constraint i.

Both laws are pure functions of (state, arrangement, parameters).  They
evaluate on ambient points near (not exactly on) the sphere so that central
finite differences of W are well defined; the analytic conic law is the
exact gradient of that ambient extension, which the FD oracle checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .constraints import ConicCap, ConstraintArrangement
from .errors import (
    DomainError,
    InsideUnsafe,
    KernelAntipodalToTarget,
    MultipleActiveConstraints,
    TooCloseToBoundary,
)
from .geometry import UnitPoint, coords_of

DEEP_PENETRATION = 1e-6   # beyond this signed penetration the state is rejected


def smoothstep(p: float, eps: float) -> tuple[float, float]:
    """Cubic blend (p^3 - 3 eps p^2 + 3 eps^2 p)/eps^3 and its derivative.

    Strictly increasing on [0, eps] with value 0 -> 1, derivative
    3(p - eps)^2 / eps^3, and vanishing first and second derivative at eps.
    """
    if not -1e-15 <= p <= eps + 1e-15:
        raise DomainError(f"smoothstep argument {p} outside [0, {eps}]")
    p = min(max(p, 0.0), eps)
    value = (p ** 3 - 3.0 * eps * p ** 2 + 3.0 * eps ** 2 * p) / eps ** 3
    deriv = 3.0 * (p - eps) ** 2 / eps ** 3
    return value, deriv


@dataclass(frozen=True)
class ConicControllerParams:
    k1: float
    epsilon: float
    x_d: UnitPoint

    def __post_init__(self):
        if self.k1 <= 0 or self.epsilon <= 0:
            raise DomainError("gain and band width must be positive")
        if not isinstance(self.x_d, UnitPoint):
            object.__setattr__(self, "x_d", UnitPoint(coords_of(self.x_d)))


@dataclass(frozen=True)
class StarControllerParams:
    k1: float
    kappa: float
    epsilon: float
    x_d: UnitPoint

    def __post_init__(self):
        if self.k1 <= 0 or self.kappa <= 0 or self.epsilon <= 0:
            raise DomainError("gains and band width must be positive")
        if not isinstance(self.x_d, UnitPoint):
            object.__setattr__(self, "x_d", UnitPoint(coords_of(self.x_d)))


class ConicGradientController:
    """Negative-gradient law for arrangements made solely of spherical caps."""

    law = "conic-gradient"

    def __init__(self, arr: ConstraintArrangement, params: ConicControllerParams):
        if not all(isinstance(s, ConicCap) for s in arr.sets):
            raise DomainError(
                "the conic-gradient law is restricted to cap arrangements; "
                "use the star-piecewise law for projected star shapes")
        self.arr = arr
        self.params = params
        self.x_d = params.x_d.coords
        self.axes = np.array([s.axis.coords for s in arr.sets]) \
            if arr.sets else np.zeros((0, self.x_d.size))
        self.xi = np.array([s.xi for s in arr.sets])

    # signed spherical margins to every cap, from raw (un-normalized) dots
    def signed_margins(self, x: np.ndarray) -> np.ndarray:
        if self.axes.shape[0] == 0:
            return np.array([np.inf])
        gaps = np.arccos(np.clip(self.axes @ x, -1.0, 1.0)) - self.xi
        return np.sign(gaps) * (1.0 - np.cos(gaps))

    def _band(self, x: np.ndarray):
        """(beta, beta_prime_scaled, active index) at x; far field gives (1, 0, None)."""
        sm = self.signed_margins(x)
        i = int(np.argmin(sm))
        if sm[i] < -DEEP_PENETRATION:
            raise InsideUnsafe(f"state penetrates constraint {i} by {-sm[i]:.3e}")
        eps = self.params.epsilon
        active = np.nonzero(sm <= eps)[0]
        if active.size > 1:
            raise MultipleActiveConstraints(
                "state lies in more than one constraint band")
        if active.size == 0:
            return 1.0, 0.0, None
        i = int(active[0])
        d_i = max(float(sm[i]), 0.0)
        beta, dbeta = smoothstep(d_i, eps)
        theta = float(np.arccos(np.clip(self.axes[i] @ x, -1.0, 1.0)))
        # chain factor from grad_x [1 - cos(theta - xi)] along -g_i
        chain = np.sin(theta - self.xi[i]) / max(np.sin(theta), 1e-300)
        return beta, dbeta * chain, i

    def navigation_value(self, x) -> float:
        xc = coords_of(x)
        beta, _, _ = self._band(xc)
        d_t = 1.0 - float(xc @ self.x_d)
        return self.params.k1 * d_t / (d_t + beta)

    def control(self, x) -> np.ndarray:
        xc = coords_of(x)
        k1 = self.params.k1
        beta, beta_p, i = self._band(xc)
        d_t = 1.0 - float(xc @ self.x_d)
        if i is None:
            return (k1 / (1.0 + d_t) ** 2) * self.x_d
        scale = k1 / (beta + d_t) ** 2
        return scale * (beta * self.x_d - d_t * beta_p * self.axes[i])

    def signed_union_margin(self, x) -> float:
        return float(self.signed_margins(coords_of(x)).min())

    def distance_profile(self, x) -> np.ndarray:
        return np.maximum(self.signed_margins(coords_of(x)), 0.0)

    def active_index(self, x):
        _, _, i = self._band(coords_of(x))
        return i


class StarPiecewiseController:
    """Piecewise attractive/repulsive law for star-shaped (or cap) regions."""

    law = "star-piecewise"

    def __init__(self, arr: ConstraintArrangement, params: StarControllerParams):
        self.arr = arr
        self.params = params
        self.x_d = params.x_d.coords
        for g in arr.kernels:
            if g.dot(params.x_d) <= -1.0 + 1e-12:
                raise KernelAntipodalToTarget(
                    "kernel point antipodal to the target")
        self.kernels = np.array([g.coords for g in arr.kernels]) \
            if arr.kernels else np.zeros((0, self.x_d.size))
        self._bounds = [s.bounding() for s in arr.sets]
        # warm ascent seeds per star set; results never depend on their
        # presence (cold seeds always run too), they only speed refinement up
        self._warm: dict[int, np.ndarray] = {}

    def reset_eval_cache(self):
        self._warm.clear()

    def _signed_margin_set(self, i: int, x: np.ndarray) -> float:
        s = self.arr.sets[i]
        if isinstance(s, ConicCap):
            return s.signed_margin(x)
        margin, argdir = s.distance_warm(x, self._warm.get(i))
        self._warm[i] = argdir
        return margin

    def _candidates(self, x: np.ndarray, slack: float) -> list[int]:
        out = []
        for i, (center, radius) in enumerate(self._bounds):
            gap = np.arccos(np.clip(center @ x / max(np.linalg.norm(x), 1e-300),
                                    -1.0, 1.0)) - radius
            lb = 1.0 - np.cos(max(gap, 0.0))
            if lb <= self.params.epsilon + slack:
                out.append(i)
        return out

    def _band(self, x: np.ndarray):
        """(d_i, i) for the active band, or (None, None) in the far field."""
        eps = self.params.epsilon
        hits = []
        for i in self._candidates(x, slack=1e-9):
            sm = self._signed_margin_set(i, x)
            if sm < -DEEP_PENETRATION:
                raise InsideUnsafe(f"state penetrates constraint {i} by {-sm:.3e}")
            if sm <= eps:
                hits.append((i, max(sm, 0.0)))
        if len(hits) > 1:
            raise MultipleActiveConstraints(
                "state lies in more than one constraint band")
        if not hits:
            return None, None
        i, d_i = hits[0]
        return d_i, i

    def control(self, x) -> np.ndarray:
        xc = coords_of(x)
        k1 = self.params.k1
        d_i, i = self._band(xc)
        if i is None:
            return k1 * self.x_d
        w = d_i / self.params.epsilon
        return k1 * (w * self.x_d - (1.0 / self.params.kappa) * (1.0 - w)
                     * self.kernels[i])

    def signed_union_margin(self, x) -> float:
        xc = coords_of(x)
        best = np.inf
        order = []
        for i, (center, radius) in enumerate(self._bounds):
            gap = np.arccos(np.clip(center @ xc, -1.0, 1.0)) - radius
            order.append((1.0 - np.cos(max(gap, 0.0)), i))
        order.sort()
        for lb, i in order:
            if lb >= best:
                break
            best = min(best, self._signed_margin_set(i, xc))
        return float(best)

    def distance_profile(self, x) -> np.ndarray:
        xc = coords_of(x)
        return self.arr.distances(xc)

    def active_index(self, x):
        _, i = self._band(coords_of(x))
        return i


# ---------------------------------------------------------------------------
# functional wrappers
# ---------------------------------------------------------------------------

def navigation_value(x, arr: ConstraintArrangement,
                     params: ConicControllerParams) -> float:
    return ConicGradientController(arr, params).navigation_value(x)


def conic_control(x, arr: ConstraintArrangement,
                  params: ConicControllerParams) -> np.ndarray:
    return ConicGradientController(arr, params).control(x)


def star_control(x, arr: ConstraintArrangement,
                 params: StarControllerParams) -> np.ndarray:
    return StarPiecewiseController(arr, params).control(x)


def conic_control_fd(x, arr: ConstraintArrangement,
                     params: ConicControllerParams,
                     step: float = 1e-6) -> np.ndarray:
    """Central-difference negative gradient of W; the oracle for conic_control."""
    ctrl = ConicGradientController(arr, params)
    xc = coords_of(x).copy()
    if ctrl.signed_union_margin(xc) <= step:
        raise TooCloseToBoundary(
            "finite-difference stencil would reach the unsafe boundary")
    grad = np.zeros_like(xc)
    for j in range(xc.size):
        xp = xc.copy(); xp[j] += step
        xm = xc.copy(); xm[j] -= step
        grad[j] = (ctrl.navigation_value(xp) - ctrl.navigation_value(xm)) / (2 * step)
    return -grad


def alignment_descent_vector(x, x_d, g) -> np.ndarray:
    """w(x) = ||P(g)x||^2 P(g)x_d - (x_d . P(g)x) P(g)x.

    Orthogonal to P(x)g everywhere, and positively aligned with P(x)x_d away
    from the degenerate arcs; this drives the band-angle monotonicity.
    """
    xc, xd, gc = coords_of(x), coords_of(x_d), coords_of(g)
    px = xc - (gc @ xc) * gc
    pxd = xd - (gc @ xd) * gc
    return float(px @ px) * pxd - float(pxd @ px) * px


@dataclass
class KappaPerSet:
    index: int
    kappa: float
    mu1: float
    mu2: float


@dataclass
class KappaSuggestion:
    kappa_bar: float
    recommended: float
    per_set: list[KappaPerSet]


def suggest_kappa(arr: ConstraintArrangement, x_d, epsilon: float,
                  grid: int = 2048) -> KappaSuggestion:
    """Repulsion-gain bound from the reference arcs target -> kernel antipode.

    For each constraint, samples the arc from x_d to -g_i.  Over the portion
    of the arc inside the band (if any): mu1 is the smallest distance to the
    region, mu2 the smallest tangential speed toward the target; the per-set
    bound is max(0, eps - mu1)/(mu1 * mu2).  Arcs that miss the band
    contribute zero.  The recommendation is 1.1 * max_i bound, floored at 1e-3.
    """
    xd = UnitPoint(coords_of(x_d))
    lams = np.linspace(0.0, 1.0, grid + 1)
    per: list[KappaPerSet] = []
    for i, s in enumerate(arr.sets):
        g = arr.kernels[i]
        if g.dot(xd) <= -1.0 + 1e-12:
            raise KernelAntipodalToTarget(f"kernel {i} is antipodal to the target")
        pts = geo.slerp_many(xd, g.antipode(), lams)
        if isinstance(s, ConicCap):
            d = s.distances_raw(pts @ s.axis.coords)
        else:
            # coarse pass over the whole arc, refine only near-band points;
            # the slack covers the coarse cache gap away from the seeded spikes
            d = np.array([s.distance(p, refine=False) for p in pts])
            for j in np.nonzero(d <= epsilon + 2e-2)[0]:
                d[j] = s.distance(pts[j], refine=True)
        mask = d <= epsilon
        if not mask.any():
            per.append(KappaPerSet(i, 0.0, float("nan"), float("nan")))
            continue
        mu1 = float(d[mask].min())
        tang = np.sqrt(np.maximum(0.0, 1.0 - (pts[mask] @ xd.coords) ** 2))
        mu2 = float(tang.min())
        if mu1 <= 0.0 or mu2 <= 1e-12:
            kappa_i = float("inf")
        else:
            kappa_i = max(0.0, epsilon - mu1) / (mu1 * mu2)
        per.append(KappaPerSet(i, kappa_i, mu1, mu2))
    kappa_bar = max((p.kappa for p in per), default=0.0)
    recommended = max(1.1 * kappa_bar, 1e-3)
    return KappaSuggestion(kappa_bar, recommended, per)
