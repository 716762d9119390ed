"""Cell-weighted cylinder observables with certified norms.

An observable u(x, l) = w(l) * g(x) pairs a summable cell-weight profile w
over Z^2 with a local function g depending only on a finite itinerary window
(a cylinder function).  This class makes the summability and regularity
hypotheses of the mixing theorem certifiable rather than merely sampled: all
local continuity moduli vanish exactly once the window covers the depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .stats import EstimateWithCI, as_generator, mean_estimate


class HypothesisFailed(ValueError):
    """A summability hypothesis could not be certified."""


# -- cell-weight profiles -----------------------------------------------------


@dataclass(frozen=True)
class CellWeightProfile:
    """Weights over Z^2: finite support, geometric decay, or power-law decay.

    geometric: w(l) = amplitude * rho^{|l|_1}; power: amplitude/(1+|l|_1)^gamma.
    """

    kind: str  # "finite" | "geometric" | "power"
    weights: tuple = ()  # finite support: ((cell, w), ...)
    amplitude: float = 1.0
    rho: float = 0.5
    gamma: float = 2.0

    def __post_init__(self):
        if self.kind not in ("finite", "geometric", "power"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "geometric" and not (0.0 < self.rho < 1.0):
            raise ValueError("rho must be in (0,1)")

    @classmethod
    def finite(cls, weights: dict) -> "CellWeightProfile":
        items = tuple(sorted((tuple(c), float(w)) for c, w in weights.items()))
        return cls(kind="finite", weights=items)

    @classmethod
    def delta(cls, cell=(0, 0), w: float = 1.0) -> "CellWeightProfile":
        return cls.finite({tuple(cell): w})

    @classmethod
    def geometric(cls, rho: float, amplitude: float = 1.0) -> "CellWeightProfile":
        return cls(kind="geometric", rho=rho, amplitude=amplitude)

    @classmethod
    def power(cls, gamma: float, amplitude: float = 1.0) -> "CellWeightProfile":
        return cls(kind="power", gamma=gamma, amplitude=amplitude)

    def weight(self, cell) -> float:
        x, y = int(cell[0]), int(cell[1])
        s = abs(x) + abs(y)
        if self.kind == "finite":
            return dict(self.weights).get((x, y), 0.0)
        if self.kind == "geometric":
            return self.amplitude * self.rho**s
        return self.amplitude / (1.0 + s) ** self.gamma

    def abs_sum(self) -> float:
        """Certified sum of |w| over Z^2 (closed form); inf when divergent.

        Shells of the 1-norm have 1 cell at s=0 and 4s cells at s >= 1, so the
        geometric sum is ((1+rho)/(1-rho))^2 and the power-law sum is
        1 + 4(zeta(g-1) - zeta(g)), finite iff gamma > 2.
        """
        if self.kind == "finite":
            return float(sum(abs(w) for _, w in self.weights))
        a = abs(self.amplitude)
        if self.kind == "geometric":
            return a * ((1.0 + self.rho) / (1.0 - self.rho)) ** 2
        if self.gamma <= 2.0:
            return math.inf
        g = self.gamma
        # sum over s>=1 of 4s/(1+s)^g = 4 (zeta(g-1) - zeta(g))
        return a * (1.0 + 4.0 * float(special.zeta(g - 1.0) - special.zeta(g)))

    def abs_sum_partial(self, shells: int) -> float:
        """Direct shell-by-shell partial sum, for cross-checking closed forms."""
        total = abs(self.weight((0, 0)))
        for s in range(1, shells + 1):
            count = 4 * s
            if self.kind == "finite":
                total += sum(
                    abs(w) for (c, w) in self.weights if abs(c[0]) + abs(c[1]) == s
                )
            elif self.kind == "geometric":
                total += count * abs(self.amplitude) * self.rho**s
            else:
                total += count * abs(self.amplitude) / (1.0 + s) ** self.gamma
        return total

    def signed_sum(self) -> float:
        """Sum of w over Z^2 (weights are nonnegative except finite profiles)."""
        if self.kind == "finite":
            return float(sum(w for _, w in self.weights))
        return self.abs_sum() if self.amplitude >= 0 else -self.abs_sum()

    def truncated(self, rel_tol: float = 1e-4):
        """Finite support (cells, weights, dropped-mass bound) for estimators.

        The tail bound is relative to abs_sum and certified by the closed-form
        shell remainders.
        """
        if self.kind == "finite":
            cells = np.array([c for c, _ in self.weights], dtype=np.int64)
            w = np.array([w for _, w in self.weights])
            return cells, w, 0.0
        total = self.abs_sum()
        if not math.isfinite(total):
            raise HypothesisFailed(f"profile {self.kind} has divergent |w| sum")
        a = abs(self.amplitude)
        radius = 0
        if self.kind == "geometric":
            rho = self.rho
            while True:
                l = radius
                tail = 4.0 * a * rho ** (l + 1) * ((l + 1) - l * rho) / (1 - rho) ** 2
                if tail <= rel_tol * total:
                    break
                radius += 1
        else:
            g = self.gamma
            while True:
                l = radius
                tail = 4.0 * a * float(
                    special.zeta(g - 1.0, l + 2.0) - special.zeta(g, l + 2.0)
                )
                if tail <= rel_tol * total:
                    break
                radius += 1
        rng = np.arange(-radius, radius + 1)
        gx, gy = np.meshgrid(rng, rng, indexing="ij")
        mask = np.abs(gx) + np.abs(gy) <= radius
        cells = np.stack([gx[mask], gy[mask]], axis=1).astype(np.int64)
        s = np.abs(cells).sum(axis=1)
        if self.kind == "geometric":
            w = self.amplitude * self.rho ** s.astype(np.float64)
        else:
            w = self.amplitude / (1.0 + s.astype(np.float64)) ** self.gamma
        return cells, w, tail


# -- cylinder functions ------------------------------------------------------


def _window_key(row: np.ndarray, width: int):
    return tuple(
        (int(row[3 * j]), int(row[3 * j + 1]), int(row[3 * j + 2]))
        for j in range(width)
    )


@dataclass
class CylinderFunction:
    """Function of the itinerary window [-depth, depth].

    Backed by an explicit table (window -> value, with a default for windows
    outside the listed alphabet; ``complete=True`` asserts the table lists
    every attainable window) or by a rule with a declared sup bound.
    """

    depth: int
    table: dict | None = None
    rule: object = None
    default: float = 0.0
    sup_norm: float = 0.0
    constant: float | None = None
    complete: bool = False

    @classmethod
    def from_table(cls, depth, table, default=0.0, complete=False):
        vals = [abs(v) for v in table.values()] + [abs(default)]
        return cls(
            depth=depth,
            table=dict(table),
            default=default,
            sup_norm=max(vals),
            complete=complete,
        )

    @classmethod
    def from_rule(cls, depth, rule, sup_norm):
        return cls(depth=depth, rule=rule, sup_norm=sup_norm)

    @classmethod
    def const(cls, c=1.0):
        return cls(depth=0, constant=float(c), sup_norm=abs(c), complete=True)

    @property
    def width(self) -> int:
        return 2 * self.depth + 1

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def value_of(self, window) -> float:
        if self.constant is not None:
            return self.constant
        if self.table is not None:
            return self.table.get(tuple(window), self.default)
        return float(self.rule(tuple(window)))

    def evaluate(self, symbols: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on int window arrays [N, 2*depth+1, 3]."""
        n, w, c = symbols.shape
        if w != self.width:
            raise ValueError(f"window width {w} != {self.width}")
        if self.constant is not None:
            return np.full(n, self.constant)
        flat = np.ascontiguousarray(symbols.reshape(n, w * c))
        uniq, inv = np.unique(flat, axis=0, return_inverse=True)
        vals = np.empty(uniq.shape[0])
        for i in range(uniq.shape[0]):
            vals[i] = self.value_of(_window_key(uniq[i], w))
        return vals[np.asarray(inv).ravel()]

    def oscillation(self) -> float:
        """Worst-case |g(x) - g(y)| over the listed alphabet."""
        if self.constant is not None:
            return 0.0
        vals = list(self.table.values()) if self.table is not None else []
        if not self.complete:
            vals.append(self.default)
        if not vals:
            return 0.0
        return max(vals) - min(vals)


def envelope_local(g: CylinderFunction, k: int, sign: int) -> CylinderFunction:
    """Inf (sign=-1) or sup (sign=+1) of g over the depth-k coarsening.

    Windows of depth k index unions of the finer atoms; depth <= k inputs are
    already measurable and come back unchanged.
    """
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 or +1")
    if g.depth <= k:
        return g
    if g.constant is not None:
        return g
    if g.table is None:
        raise ValueError("envelope needs a table-backed cylinder function")
    off = g.depth - k
    width = 2 * k + 1
    groups: dict = {}
    for key, val in g.table.items():
        sub = tuple(key[off : off + width])
        groups.setdefault(sub, []).append(val)
    pick = max if sign > 0 else min
    table = {sub: pick(vals) for sub, vals in groups.items()}
    if not g.complete:
        table = {sub: pick([v, g.default]) for sub, v in table.items()}
    return CylinderFunction.from_table(
        k, table, default=g.default, complete=g.complete
    )


# -- observables ---------------------------------------------------------------


@dataclass
class Observable:
    """Profile x shared local cylinder function, with cached norms/integrals."""

    profile: CellWeightProfile
    local: CylinderFunction
    p: float = 2.0
    name: str = ""
    integral: EstimateWithCI | None = None
    local_integral: EstimateWithCI | None = None
    local_p_mean: EstimateWithCI | None = None  # Monte Carlo E|g|^p

    @property
    def depth(self) -> int:
        return self.local.depth

    def sup_sum(self) -> float:
        """Certified sum over cells of the sup norms of u_l."""
        return self.profile.abs_sum() * self.local.sup_norm

    def p_sum_bound(self) -> float:
        """Certified bound on the sum of p-norms (p-norm <= sup norm)."""
        return self.profile.abs_sum() * self.local.sup_norm


def make_observable(
    profile: CellWeightProfile,
    local: CylinderFunction,
    system=None,
    n_samples: int = 20_000,
    rng=None,
    p: float = 2.0,
    name: str = "",
) -> Observable:
    """Assemble an observable and cache its integral.

    The integral factorizes: int u dmu = (sum of weights) * int g dmu-bar.
    Constant locals give the exact value; otherwise the local integral is
    estimated over n_samples invariant-measure draws (requires a system).
    """
    total = profile.abs_sum()
    if not math.isfinite(total):
        raise HypothesisFailed("profile |w| sum diverges; observable rejected")
    wsum = profile.signed_sum()
    if local.is_constant:
        li = EstimateWithCI(value=local.constant, stderr=0.0, n_samples=0)
        pm = EstimateWithCI(value=abs(local.constant) ** p, stderr=0.0, n_samples=0)
    else:
        if system is None:
            raise ValueError("non-constant locals need a system to integrate over")
        gen = as_generator(rng)
        batch = system.sample_batch(n_samples, gen)
        sym = system.window_symbols(batch, local.depth, local.depth, gen)
        vals = local.evaluate(sym)
        li = mean_estimate(vals)
        pm = mean_estimate(np.abs(vals) ** p)
    integral = EstimateWithCI(
        value=wsum * li.value,
        stderr=abs(wsum) * li.stderr,
        n_samples=li.n_samples,
    )
    return Observable(
        profile=profile,
        local=local,
        p=p,
        name=name,
        integral=integral,
        local_integral=li,
        local_p_mean=pm,
    )


def envelope(u: Observable, k: int, sign: int) -> Observable:
    """Observable-level envelope: same profile, coarsened local."""
    g = envelope_local(u.local, k, sign)
    out = replace(u, local=g, name=f"{u.name}^({k},{'+' if sign > 0 else '-'})")
    if not g.is_constant:
        out.integral = None
        out.local_integral = None
        out.local_p_mean = None
    return out


# -- hypothesis certification --------------------------------------------------


@dataclass
class HypothesisReport:
    hyp1: bool
    hyp1_sum: float
    hyp1bis: bool
    hyp1bis_bound: float
    hyp2: bool
    hyp2_vanish_depth: int
    failures: list = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return self.hyp1 and self.hyp1bis and self.hyp2


def hypothesis_check(u: Observable, v: Observable) -> HypothesisReport:
    """Certify the summability and regularity hypotheses for the pair (u, v).

    HYP1: sum of (sup|u_l| + p-norm of v_l) over cells, via profile closed
    forms.  HYP1bis: for every k >= 1 the forward-window moduli of v_l are
    summable; cylinder locals have moduli that vanish once k reaches the
    depth and are bounded by the oscillation before, so the certified bound is
    (|w| sum) * 2 sup.  HYP2: the depth-k moduli of both factors vanish for
    k >= max depth, so the limit is exactly zero.
    """
    failures = []
    su = u.profile.abs_sum()
    sv = v.profile.abs_sum()
    hyp1_sum = su * u.local.sup_norm + sv * v.local.sup_norm
    hyp1 = math.isfinite(hyp1_sum)
    if not hyp1:
        which = []
        if not math.isfinite(su):
            which.append(f"sum over cells of sup|u_l| (profile {u.profile.kind})")
        if not math.isfinite(sv):
            which.append(f"sum over cells of |v_l|_p (profile {v.profile.kind})")
        failures.append("HYP1 divergent: " + "; ".join(which))

    bound = sv * 2.0 * v.local.sup_norm
    hyp1bis = math.isfinite(bound)
    if not hyp1bis:
        failures.append("HYP1bis divergent: modulus sum unbounded")

    vanish = max(u.local.depth, v.local.depth)
    hyp2 = hyp1 and hyp1bis
    if not hyp2:
        failures.append("HYP2 cannot be certified on a divergent profile")
    return HypothesisReport(
        hyp1=hyp1,
        hyp1_sum=hyp1_sum,
        hyp1bis=hyp1bis,
        hyp1bis_bound=bound,
        hyp2=hyp2,
        hyp2_vanish_depth=vanish,
        failures=failures,
    )


def require_hypotheses(u: Observable, v: Observable):
    rep = hypothesis_check(u, v)
    if not rep.all_pass:
        raise HypothesisFailed("; ".join(rep.failures))
    return rep


# -- separation metric ----------------------------------------------------------


@dataclass(frozen=True)
class SeparationParams:
    theta: float = 0.5
    cap: int = 32

    def __post_init__(self):
        if not (0.0 < self.theta < 1.0):
            raise ValueError("theta must lie strictly inside (0,1)")


def separation_time_batch(system, batch_x, batch_y, cap: int):
    """Largest k <= cap with itineraries agreeing on [-k, k], per pair.

    Returns (s, grazing) where grazing marks pairs whose windows touched a
    near-tangential collision (their symbols are unreliable).
    """
    sx = system.window_symbols(batch_x, cap, cap)
    gx = system._last_window_graze.copy()
    sy = system.window_symbols(batch_y, cap, cap)
    gy = system._last_window_graze.copy()
    agree = (sx == sy).all(axis=2)
    n = agree.shape[0]
    s = np.zeros(n, dtype=np.int64)
    cond = agree[:, cap].copy()
    for k in range(1, cap + 1):
        cond &= agree[:, cap - k] & agree[:, cap + k]
        s += cond
    return s, gx | gy


def separation_time(system, x, y, cap: int = 32) -> int:
    """Scalar separation time; identical points saturate at cap."""
    if x == y:
        return cap
    bx = system.singleton_batch(x)
    by = system.singleton_batch(y)
    s, _ = separation_time_batch(system, bx, by, cap)
    return int(s[0])


def d_theta(system, x, y, params: SeparationParams) -> float:
    """Dynamical metric theta^s; exactly 0 for identical points."""
    if x == y:
        return 0.0
    s = separation_time(system, x, y, params.cap)
    return params.theta**s


@dataclass
class LipschitzBounds:
    lower: float  # certified sampled lower bound
    upper: float  # exact bound 2 sup / theta^depth for depth-k cylinders
    n_pairs: int
    grazing_excluded: int


def lipschitz_estimate(
    system, g: CylinderFunction, params: SeparationParams, n_pairs: int, rng
) -> LipschitzBounds:
    """Sampled lower bound on the dynamical Lipschitz constant of g.

    For a depth-k cylinder the constant is at most 2 sup / theta^k: points
    with different g-values must separate inside the depth-k window, so
    s <= k-1 and d >= theta^{k-1} > theta^k, bounding the ratio by
    2 sup / theta^k.
    """
    gen = as_generator(rng)
    bx = system.sample_batch(n_pairs, gen)
    by = system.sample_batch(n_pairs, gen)
    s, graz = separation_time_batch(system, bx, by, params.cap)

    symx = system.window_symbols(bx, g.depth, g.depth)
    symy = system.window_symbols(by, g.depth, g.depth)
    vx = g.evaluate(symx)
    vy = g.evaluate(symy)
    d = params.theta ** s.astype(np.float64)
    keep = ~graz & (d > 0)
    ratio = np.abs(vx - vy)[keep] / d[keep]
    lower = float(ratio.max()) if ratio.size else 0.0
    upper = 2.0 * g.sup_norm / params.theta**g.depth
    return LipschitzBounds(
        lower=lower,
        upper=upper,
        n_pairs=n_pairs,
        grazing_excluded=int(graz.sum()),
    )


@dataclass
class ModulusResult:
    value: float
    exact: bool


def continuity_modulus(
    system,
    g: CylinderFunction,
    x,
    k_back: int,
    k_fwd: int,
    n_probe: int = 0,
    rng=None,
) -> ModulusResult:
    """Local oscillation of g over the itinerary atom of x of the given window.

    Exact (from the table) when g is a cylinder function: zero once the window
    covers [-depth, depth], otherwise the spread of table values compatible
    with x's sub-window.  Rule-backed g falls back to a sampled supremum over
    probe points matching the window (a lower bound).
    """
    if g.constant is not None:
        return ModulusResult(0.0, True)
    if k_back >= g.depth and k_fwd >= g.depth:
        return ModulusResult(0.0, True)

    bx = system.singleton_batch(x)
    win = system.window_symbols(bx, k_back, k_fwd)
    key_x = _window_key(
        np.ascontiguousarray(win[0]).reshape(-1), k_back + k_fwd + 1
    )
    gwin = system.window_symbols(bx, g.depth, g.depth)
    gx = float(g.evaluate(gwin)[0])

    if g.table is not None:
        lo = min(k_back, g.depth)
        hi = min(k_fwd, g.depth)
        off = g.depth
        xoff = k_back
        worst = 0.0
        for key, val in g.table.items():
            sub = key[off - lo : off + hi + 1]
            sub_x = key_x[xoff - lo : xoff + hi + 1]
            if sub == sub_x:
                worst = max(worst, abs(gx - val))
        if not g.complete:
            worst = max(worst, abs(gx - g.default))
        return ModulusResult(worst, True)

    gen = as_generator(rng)
    worst = 0.0
    found = 0
    attempts = 0
    while found < n_probe and attempts < 200 * max(n_probe, 1):
        m = max(n_probe, 256)
        batch = system.sample_batch(m, gen)
        wins = system.window_symbols(batch, k_back, k_fwd)
        match = (wins == win).all(axis=(1, 2))
        attempts += m
        if match.any():
            gw = system.window_symbols(batch, g.depth, g.depth)
            vals = g.evaluate(gw)[match]
            worst = max(worst, float(np.abs(vals - gx).max()))
            found += int(match.sum())
    return ModulusResult(worst, False)


# -- local presets ---------------------------------------------------------------


def local_preset(name: str, **kw) -> CylinderFunction:
    """Named cylinder-function presets usable from configs."""
    if name == "constant":
        return CylinderFunction.const(kw.get("value", 1.0))
    if name == "state_indicator":
        target = int(kw.get("state", 0))
        return CylinderFunction.from_rule(
            0, lambda w: 1.0 if w[0][0] == target else 0.0, sup_norm=1.0
        )
    if name == "jump_indicator":
        tx, ty = kw.get("jump", (1, 0))
        return CylinderFunction.from_rule(
            0, lambda w: 1.0 if (w[0][1], w[0][2]) == (tx, ty) else 0.0, sup_norm=1.0
        )
    if name == "match_next_scatterer":
        return CylinderFunction.from_rule(
            1, lambda w: 1.0 if w[1][0] == w[2][0] else 0.0, sup_norm=1.0
        )
    raise ValueError(f"unknown local preset {name!r}")
