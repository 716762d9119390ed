"""Finite Markov chains with lattice jump labels: the exact oracle world.

Every operator of the renewal theory is a finite matrix here.  Kernels are
stored in mass convention (rows = source state, forward-in-time products
compose left to right); the transfer-operator form used in the public API is
the similarity transform T = D^-1 M^T D with D = diag(pi), under which
mass-form first-return decomposition M_{n,0} = sum_j F_j M_{n-j,0} becomes the
operator identity T_n = sum_j T_{n-j} R_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .extension import ExtensionSystem

IDENTITY_TOL = 1e-12
# mass allowed to leak out of the truncated window in long convolutions
LEAK_TARGET = 1e-14


class MemoryBound(RuntimeError):
    """Lattice support would exceed the configured cell budget."""


class IdentityViolation(RuntimeError):
    """An exact renewal identity failed beyond tolerance."""

    def __init__(self, name, n, residual):
        self.name = name
        self.n = n
        self.residual = residual
        super().__init__(f"{name} residual {residual:.3e} at n={n}")


class PeriodicityError(ValueError):
    """Chain cannot return to the zero level at two coprime times."""


class MarkovExtension(ExtensionSystem):
    """Finite-state chain with Z^d jump labels.

    ``kernels`` maps each jump to the matrix of transition mass carrying that
    jump; the summed matrix must be row-stochastic and ``pi``-stationary to
    1e-12.  ``lattice_period`` is the gcd of times at which S_n = 0 carries
    mass; the aperiodic case (period 1) is the one where the plain local limit
    normalization applies, and constructors reject periodic chains unless
    ``require_aperiodic=False``.
    """

    deterministic = False

    def __init__(self, kernels, pi=None, require_aperiodic=True, name=""):
        self.kernels = {
            tuple(int(c) for c in j): np.asarray(m, dtype=np.float64)
            for j, m in kernels.items()
        }
        jumps = sorted(self.kernels)
        self.d = len(jumps[0])
        if any(len(j) != self.d for j in jumps):
            raise ValueError("inconsistent jump dimensions")
        self.transition = sum(self.kernels[j] for j in jumps)
        self.n_states = self.transition.shape[0]
        self.name = name or f"markov-{self.n_states}state"

        rows = self.transition.sum(axis=1)
        if np.abs(rows - 1.0).max() > IDENTITY_TOL:
            raise ValueError(f"rows sum to {rows}, not 1")
        if pi is None:
            pi = _stationary(self.transition)
        self.pi = np.asarray(pi, dtype=np.float64)
        if np.abs(self.pi @ self.transition - self.pi).max() > IDENTITY_TOL:
            raise ValueError("pi is not stationary for the transition matrix")

        self.max_jump = max(
            max(abs(c) for c in j) for j in jumps
        )
        self.lattice_period = _lattice_period(self)
        if require_aperiodic and self.lattice_period != 1:
            raise PeriodicityError(
                f"zero level reachable only at multiples of {self.lattice_period}"
            )

        self._outcomes = _flatten_outcomes(self.kernels, self.n_states)

    # -- ExtensionSystem protocol ------------------------------------------

    def sample_batch(self, n, gen):
        return gen.choice(self.n_states, size=n, p=self.pi).astype(np.int32)

    def singleton_batch(self, x):
        return np.array([x], dtype=np.int32)

    def point_of(self, batch, i: int = 0):
        return int(batch[i])

    def state_ids(self, batch):
        return batch

    def batch_size(self, batch):
        return batch.shape[0]

    def step_batch(self, batch, gen):
        cum, to, jump = self._outcomes
        u = gen.random(batch.shape[0])
        rows = cum[batch]
        k = (u[:, None] > rows).sum(axis=1)
        k = np.minimum(k, cum.shape[1] - 1)
        new = to[batch, k].astype(np.int32)
        jumps = jump[batch, k].astype(np.int64)
        return new, jumps


def _stationary(P):
    """Left stationary vector of a row-stochastic matrix via a linear solve."""
    n = P.shape[0]
    a = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    if pi.min() < -1e-10:
        raise ValueError("stationary vector has negative entries")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _flatten_outcomes(kernels, n_states):
    """Per-state cumulative outcome table for vectorized simulation."""
    jumps = sorted(kernels)
    n_out = len(jumps) * n_states
    prob = np.zeros((n_states, n_out))
    to = np.zeros((n_states, n_out), dtype=np.int64)
    jump = np.zeros((n_states, n_out, len(jumps[0])), dtype=np.int64)
    col = 0
    for j in jumps:
        m = kernels[j]
        for b in range(n_states):
            prob[:, col] = m[:, b]
            to[:, col] = b
            jump[:, col, :] = j
            col += 1
    cum = np.cumsum(prob, axis=1)
    return cum, to, jump


def _lattice_period(sys, n_probe=24):
    """gcd of times n <= n_probe at which P_pi(S_n = 0) > 0."""
    times = []
    kern = {(0,) * sys.d: np.eye(sys.n_states)}
    zero = (0,) * sys.d
    for n in range(1, n_probe + 1):
        kern = _convolve_step(kern, sys.kernels)
        if zero in kern and float(sys.pi @ kern[zero] @ np.ones(sys.n_states)) > 1e-15:
            times.append(n)
    if not times:
        raise PeriodicityError(f"zero level unreachable within {n_probe} steps")
    return math.gcd(*times) if len(times) > 1 else times[0]


def _convolve_step(kern, step_kernels):
    out = {}
    for l, m in kern.items():
        for j, a in step_kernels.items():
            key = tuple(li + ji for li, ji in zip(l, j))
            if key in out:
                out[key] = out[key] + m @ a
            else:
                out[key] = m @ a
    return out


@dataclass
class LatticeKernel:
    """Family of n-step matrices indexed by total jump, mass convention."""

    n: int
    kernels: dict[tuple, np.ndarray]
    pi: np.ndarray

    def mass(self, cell) -> np.ndarray:
        cell = tuple(cell)
        if cell in self.kernels:
            return self.kernels[cell]
        s = self.pi.shape[0]
        return np.zeros((s, s))

    def q(self, cell) -> float:
        """Marginal P_pi(S_n = cell)."""
        return float(self.pi @ self.mass(cell) @ np.ones(self.pi.shape[0]))

    def total(self) -> np.ndarray:
        return sum(self.kernels.values())

    def check_stochastic(self, tol=IDENTITY_TOL):
        rows = self.total().sum(axis=1)
        err = float(np.abs(rows - 1.0).max())
        if err > tol:
            raise IdentityViolation("row-stochastic total mass", self.n, err)
        return err


def lattice_kernels(sys: MarkovExtension, n: int, cell_budget: int = 4_000_000):
    """Exact n-step lattice kernel by full-support dynamic programming."""
    kern = {(0,) * sys.d: np.eye(sys.n_states)}
    for _ in range(n):
        kern = _convolve_step(kern, sys.kernels)
        if len(kern) * sys.n_states**2 > cell_budget:
            raise MemoryBound(f"support {len(kern)} cells exceeds budget")
    return LatticeKernel(n=n, kernels=kern, pi=sys.pi)


def transfer(pi: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Transfer-operator form of a mass matrix: D^-1 M^T D, D = diag(pi)."""
    return (mass.T * pi[None, :]) / pi[:, None]


def operator_Q(sys: MarkovExtension, n: int, cell) -> np.ndarray:
    """Q_{n,cell} acting on densities; pi-mean of Q 1 equals q_n(cell)."""
    if n == 0:
        eye = np.eye(sys.n_states)
        return eye if tuple(cell) == (0,) * sys.d else np.zeros_like(eye)
    kern = lattice_kernels(sys, n)
    return transfer(sys.pi, kern.mass(cell))


@dataclass
class DistributionResult:
    """Windowed exact distribution of (state, S_n) started from pi."""

    n: int
    array: np.ndarray  # [W, W, S] mass
    radius: int
    leak_bound: float

    def q(self, cell) -> float:
        x, y = int(cell[0]), int(cell[1])
        r = self.radius
        if abs(x) > r or abs(y) > r:
            return 0.0
        return float(self.array[x + r, y + r].sum())

    def q_grid(self) -> np.ndarray:
        return self.array.sum(axis=2)

    def total(self) -> float:
        return float(self.array.sum())


def support_radius(n: int, max_jump: int, leak=LEAK_TARGET) -> tuple[int, float]:
    """Truncation radius with a Hoeffding bound on the mass left outside."""
    full = n * max_jump
    if full == 0:
        return 0, 0.0
    r_h = int(math.ceil(max_jump * math.sqrt(2.0 * n * math.log(4.0 / leak))))
    if r_h >= full:
        return full, 0.0
    bound = 4.0 * math.exp(-(r_h**2) / (2.0 * n * max_jump**2))
    return r_h, bound


def exact_distribution(
    sys: MarkovExtension, n: int, cell_budget: int = 4_000_000
) -> DistributionResult:
    """Exact convolution of the lattice marginal, truncated only where a
    Hoeffding bound certifies the discarded mass is below 1e-13."""
    arr, c, r, leak = _dp_evolve(sys, n, cell_budget)
    window = np.ascontiguousarray(arr[c - r : c + r + 1, c - r : c + r + 1, :])
    res = DistributionResult(n=n, array=window, radius=r, leak_bound=leak)
    if abs(res.total() - 1.0) > 1e-10:
        raise IdentityViolation("q_n total mass", n, abs(res.total() - 1.0))
    return res


def _dp_window(sys, n_max, cell_budget):
    r, leak = support_radius(n_max, sys.max_jump)
    w = 2 * r + 1
    if w * w * sys.n_states > cell_budget:
        raise MemoryBound(f"window {w}^2 x {sys.n_states} exceeds budget")
    return r, w, leak


def _dp_step(arr, out, kernels, c, reach_src, weights=None):
    """One windowed convolution step.

    Source mass lives in the square of half-width reach_src around center c;
    the destination (one jump wider) is zeroed in ``out`` before accumulating.
    ``weights`` optionally scales the source per (jump, state).
    """
    one_state = arr.shape[2] == 1
    b = max(max(abs(dx), abs(dy)) for dx, dy in kernels)
    lo, hi = c - reach_src, c + reach_src + 1
    out[lo - b : hi + b, lo - b : hi + b, :] = 0.0
    for (dx, dy), a in kernels.items():
        src = arr[lo:hi, lo:hi, :]
        if weights is not None:
            src = src * weights[(dx, dy)][None, None, :]
        if one_state:
            out[lo + dx : hi + dx, lo + dy : hi + dy, 0] += src[:, :, 0] * a[0, 0]
        else:
            out[lo + dx : hi + dx, lo + dy : hi + dy, :] += np.tensordot(
                src, a, axes=([2], [0])
            )
    return out


def _dp_evolve(sys, n_max, cell_budget, step_weights=None, visit=None):
    """Run the windowed lattice DP from pi, calling visit(n, arr, c) each step.

    The active window grows with the attainable support and is clipped at the
    Hoeffding radius r; mass transported past the clip is dropped (its total
    is bounded by LEAK_TARGET).  The array has an extra margin of one jump so
    transport never indexes out of bounds; cells are addressed as
    arr[c + x, c + y, state].
    """
    if sys.d != 2:
        raise ValueError("implemented for d = 2")
    r, w, leak = _dp_window(sys, n_max, cell_budget)
    b = sys.max_jump
    size = w + 2 * b
    arr = np.zeros((size, size, sys.n_states))
    buf = np.zeros_like(arr)
    c = r + b
    arr[c, c, :] = sys.pi
    if visit is not None:
        visit(0, arr, c)
    step_weights = step_weights or {}
    for n in range(1, n_max + 1):
        reach_src = min((n - 1) * b, r)
        nxt = _dp_step(arr, buf, sys.kernels, c, reach_src,
                       weights=step_weights.get(n - 1))
        arr, buf = nxt, arr
        if n * b > r:
            arr[: c - r, :, :] = 0.0
            arr[c + r + 1 :, :, :] = 0.0
            arr[:, : c - r, :] = 0.0
            arr[:, c + r + 1 :, :] = 0.0
        if visit is not None:
            visit(n, arr, c)
    return arr, c, r, leak


def exact_zero_sequence(sys: MarkovExtension, n_max: int,
                        cell_budget: int = 4_000_000) -> np.ndarray:
    """q_n((0,0)) for n = 0..n_max in one windowed DP pass."""
    q = np.empty(n_max + 1)

    def visit(n, arr, c):
        q[n] = float(arr[c, c].sum())

    _dp_evolve(sys, n_max, cell_budget, visit=visit)
    return q


def exact_kernel_center(sys: MarkovExtension, n: int,
                        cell_budget: int = 16_000_000) -> np.ndarray:
    """Mass matrix M_{n,0} (all n-step paths with S_n = 0) by windowed DP.

    Each starting state is propagated as its own marginal with a point start,
    which reuses the pi-start driver by temporarily replacing pi.
    """
    s = sys.n_states
    out = np.empty((s, s))
    saved = sys.pi
    try:
        for a in range(s):
            start = np.zeros(s)
            start[a] = 1.0
            sys.pi = start
            arr, c, r, _ = _dp_evolve(sys, n, cell_budget // max(s, 1))
            out[a, :] = arr[c, c, :]
    finally:
        sys.pi = saved
    return out


def weighted_lattice_evolution(
    sys: MarkovExtension,
    n_grid,
    step_weights=None,
    cell_budget: int = 4_000_000,
):
    """Vector DP from pi with per-step (state, jump) weights inserted.

    step_weights maps a step index to {jump: weight array [S] applied to the
    source state}.  Returns {n: (array [W,W,S], radius)} snapshots for each n
    in n_grid.
    """
    n_set = set(int(n) for n in n_grid)
    n_max = max(n_set) if n_set else 0
    r, _ = support_radius(n_max, sys.max_jump)
    out = {}

    def visit(n, arr, c):
        if n in n_set:
            win = np.ascontiguousarray(arr[c - r : c + r + 1, c - r : c + r + 1, :])
            out[n] = (win, r)

    _dp_evolve(sys, n_max, cell_budget, step_weights=step_weights, visit=visit)
    return out


def taboo_kernels(sys: MarkovExtension, n_max: int, cell_budget: int = 4_000_000):
    """First-return and no-return kernels by taboo convolution.

    Returns (F, U): F[n] = mass of paths with S_j != 0 for 0 < j < n and
    S_n = 0 (first return at n, F[0] unused); U[n] = mass of paths avoiding
    the zero level through step n (U[0] = identity).
    """
    eye = np.eye(sys.n_states)
    zero = (0,) * sys.d
    g = {zero: eye}
    F = [np.zeros_like(eye)]
    U = [eye]
    for _ in range(1, n_max + 1):
        h = _convolve_step(g, sys.kernels)
        if len(h) * sys.n_states**2 > cell_budget:
            raise MemoryBound(f"taboo support {len(h)} cells exceeds budget")
        F.append(h.pop(zero, np.zeros_like(eye)))
        g = h
        U.append(sum(g.values()) if g else np.zeros_like(eye))
    return F, U


def operator_TR(sys: MarkovExtension, n_max: int):
    """T_n = Q_{n,0} and first-return operators R_n, with the renewal identity
    T_n = sum_{j=1..n} T_{n-j} R_j checked at 1e-12 for every n <= n_max."""
    zero = (0,) * sys.d
    eye = np.eye(sys.n_states)
    T_mass = [eye]
    kern = {zero: eye}
    for _ in range(n_max):
        kern = _convolve_step(kern, sys.kernels)
        T_mass.append(kern.get(zero, np.zeros_like(eye)))
    F, _ = taboo_kernels(sys, n_max)

    T = [transfer(sys.pi, m) for m in T_mass]
    R = [transfer(sys.pi, m) for m in F]
    worst = 0.0
    worst_n = 0
    for n in range(1, n_max + 1):
        acc = np.zeros_like(eye)
        for j in range(1, n + 1):
            acc += T[n - j] @ R[j]
        res = float(np.abs(T[n] - acc).max())
        if res > worst:
            worst, worst_n = res, n
    if worst > IDENTITY_TOL:
        raise IdentityViolation("T_n = sum T_{n-j} R_j", worst_n, worst)
    return T, R, worst


def operator_U_check(sys: MarkovExtension, n_max: int) -> float:
    """Residual of 1 = sum_{j=0..n} U_{n-j} Q_{j,0} applied to the constant 1."""
    zero = (0,) * sys.d
    eye = np.eye(sys.n_states)
    Q_mass = [eye]
    kern = {zero: eye}
    for _ in range(n_max):
        kern = _convolve_step(kern, sys.kernels)
        Q_mass.append(kern.get(zero, np.zeros_like(eye)))
    _, U_mass = taboo_kernels(sys, n_max)
    Q = [transfer(sys.pi, m) for m in Q_mass]
    U = [transfer(sys.pi, m) for m in U_mass]
    ones = np.ones(sys.n_states)
    worst = 0.0
    worst_n = 0
    for n in range(n_max + 1):
        w = np.zeros(sys.n_states)
        for j in range(n + 1):
            w += U[n - j] @ (Q[j] @ ones)
        res = float(np.abs(w - 1.0).max())
        if res > worst:
            worst, worst_n = res, n
    if worst > IDENTITY_TOL:
        raise IdentityViolation("1 = sum U_{n-j} Q_{j,0}", worst_n, worst)
    return worst


@dataclass
class ReturnTail:
    """Exact first-return mass f_n and survival P_pi(phi > n)."""

    f: np.ndarray  # f[0] = 0
    tail: np.ndarray  # tail[n] = P(phi > n), tail[0] = 1
    consistency_residual: float


def exact_return_tail(
    sys: MarkovExtension, n_max: int, q: np.ndarray | None = None
) -> ReturnTail:
    """Tail of the first return time to the zero level, exactly.

    One-state systems: f is deconvolved from the scalar renewal recursion
    q_n = sum_{j<=n} f_j q_{n-j} (an identity for genuine renewal sequences);
    q may be supplied to avoid recomputing long convolutions.  Multi-state
    systems: f_n = pi . F_n 1 from taboo kernels, and the matrix renewal
    identity is checked instead (the scalar recursion is not an identity once
    returns correlate with the state).
    """
    if sys.n_states == 1:
        if q is None:
            q = exact_zero_sequence(sys, n_max)
        q = np.asarray(q, dtype=np.float64)
        f = np.zeros(n_max + 1)
        for n in range(1, n_max + 1):
            conv = float(f[1:n] @ q[n - 1 : 0 : -1]) if n > 1 else 0.0
            f[n] = q[n] - conv
        resid = 0.0
        for n in (1, n_max // 2, n_max):
            if n < 1:
                continue
            conv = float(f[1 : n + 1] @ q[n - 1 :: -1][: n])
            resid = max(resid, abs(q[n] - conv))
        if resid > 1e-10:
            raise IdentityViolation("scalar renewal q = f * q", n_max, resid)
    else:
        F, _ = taboo_kernels(sys, n_max)
        ones = np.ones(sys.n_states)
        f = np.array([float(sys.pi @ m @ ones) for m in F])
        resid = _matrix_renewal_residual(sys, min(n_max, 50))

    tail = 1.0 - np.cumsum(f)
    tail = np.concatenate([[1.0], tail[1:]])
    if tail.min() < -1e-10:
        raise IdentityViolation("tail nonnegative", int(np.argmin(tail)), -tail.min())
    return ReturnTail(f=f, tail=np.maximum(tail, 0.0), consistency_residual=resid)


def _matrix_renewal_residual(sys, n_max):
    zero = (0,) * sys.d
    eye = np.eye(sys.n_states)
    M = [eye]
    kern = {zero: eye}
    for _ in range(n_max):
        kern = _convolve_step(kern, sys.kernels)
        M.append(kern.get(zero, np.zeros_like(eye)))
    F, _ = taboo_kernels(sys, n_max)
    worst = 0.0
    for n in range(1, n_max + 1):
        acc = sum(F[j] @ M[n - j] for j in range(1, n + 1))
        worst = max(worst, float(np.abs(M[n] - acc).max()))
    if worst > IDENTITY_TOL:
        raise IdentityViolation("M_{n,0} = sum F_j M_{n-j,0}", n_max, worst)
    return worst


def jump_moments(sys: MarkovExtension):
    """Stationary one-step mean and covariance of the jump distribution."""
    ones = np.ones(sys.n_states)
    mean = np.zeros(sys.d)
    cov = np.zeros((sys.d, sys.d))
    for j, m in sys.kernels.items():
        p = float(sys.pi @ m @ ones)
        jv = np.array(j, dtype=np.float64)
        mean += p * jv
        cov += p * np.outer(jv, jv)
    return mean, cov - np.outer(mean, mean)


# -- reference systems ------------------------------------------------------


def srw() -> MarkovExtension:
    """Planar simple random walk: one state, jumps +-e1, +-e2 each 1/4.

    Returns to zero happen at even times only (lattice period 2), so local
    limit comparisons carry the sublattice factor 2.
    """
    q = np.array([[0.25]])
    return MarkovExtension(
        {(1, 0): q, (-1, 0): q, (0, 1): q, (0, -1): q},
        require_aperiodic=False,
        name="srw",
    )


def lazy_srw() -> MarkovExtension:
    """Aperiodic one-state walk: hold with prob 1/5, each axis step 1/5."""
    q = np.array([[0.2]])
    return MarkovExtension(
        {(0, 0): q, (1, 0): q, (-1, 0): q, (0, 1): q, (0, -1): q},
        name="lazy-srw",
    )


def srw_q_exact(n: int, cell) -> float:
    """Closed-form P(S_n = cell) for the simple random walk.

    Under the 45-degree rotation the coordinates X = x+y, Y = x-y are
    independent +-1 walks, so the mass is a product of two binomials.
    """
    x, y = int(cell[0]), int(cell[1])
    a, b = x + y, x - y
    if (n + a) % 2 or abs(a) > n or abs(b) > n:
        return 0.0

    def walk1d(k):
        return math.exp(
            math.lgamma(n + 1)
            - math.lgamma((n + k) // 2 + 1)
            - math.lgamma((n - k) // 2 + 1)
            - n * math.log(2.0)
        )

    return walk1d(a) * walk1d(b)


def random_extension(n_states: int = 3, seed: int = 7) -> MarkovExtension:
    """Seeded aperiodic test chain with centered jumps.

    Jump kernels for l and -l are equal, which forces a zero stationary drift
    whatever the stationary vector is; the (0,0) kernel is strictly positive,
    so the zero level is reachable at all times (period 1).
    """
    gen = np.random.Generator(np.random.Philox(key=seed))
    b0 = gen.uniform(0.2, 1.0, size=(n_states, n_states))
    b1 = gen.uniform(0.0, 0.5, size=(n_states, n_states))
    b2 = gen.uniform(0.0, 0.5, size=(n_states, n_states))
    total = b0 + 2 * b1 + 2 * b2
    scale = total.sum(axis=1, keepdims=True)
    b0, b1, b2 = b0 / scale, b1 / scale, b2 / scale
    return MarkovExtension(
        {
            (0, 0): b0,
            (1, 0): b1,
            (-1, 0): b1,
            (0, 1): b2,
            (0, -1): b2,
        },
        name=f"random-{n_states}state-{seed}",
    )
