"""Model definitions for locally regulated branching diffusions on lattices.

A model is the system

    dX(i) = alpha * (sum_j m(i, j) X(j) - X(i)) dt + h(X(i)) dt + sqrt(2 g(X(i))) dB(i)

on a finite box of Z^d. Drift ``h`` and diffusion ``g`` are stored as
polynomials in ascending coefficient order, which covers the logistic case
h(x) = gamma x (K - x), g(x) = beta x as well as linear growth and arbitrary
polynomial regulations. Migration kernels are translation invariant and kept
as an offset stencil plus a sparse realization over the lattice.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Literal, Mapping

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import sparse
from scipy.sparse.csgraph import connected_components

Boundary = Literal["torus", "truncate"]

STENCIL_TOL = 1e-12


class ModelError(ValueError):
    """Invalid model definition."""


@dataclass(frozen=True)
class ModelParams:
    """Rates of migration, branching and competition plus the capacity."""

    alpha: float
    beta: float
    gamma: float
    capacity: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "capacity"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ModelError(f"{name} must be finite and nonnegative, got {v}")


def _trim(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float).ravel()
    if c.size == 0:
        c = np.zeros(1)
    nz = np.nonzero(c)[0]
    return c[: nz[-1] + 1] if nz.size else c[:1]


@dataclass(frozen=True)
class DriftSpec:
    """Local drift h as a polynomial.

    Use the constructors :meth:`logistic`, :meth:`linear` and :meth:`polynomial`.
    ``lipschitz_up`` is the upward Lipschitz constant (sup of h' on [0, inf)),
    ``inf`` when h' is unbounded above.
    """

    kind: Literal["logistic", "linear", "custom"]
    coeffs: np.ndarray
    lipschitz_up: float
    concave: bool
    gamma: float = 0.0
    capacity: float = 0.0

    @classmethod
    def logistic(cls, gamma: float, capacity: float) -> "DriftSpec":
        if gamma < 0 or capacity < 0:
            raise ModelError("logistic drift needs gamma >= 0 and K >= 0")
        coeffs = _trim([0.0, gamma * capacity, -gamma])
        return cls("logistic", coeffs, gamma * capacity, True, gamma, capacity)

    @classmethod
    def linear(cls, c: float) -> "DriftSpec":
        return cls("linear", _trim([0.0, c]), float(c), True)

    @classmethod
    def polynomial(cls, coeffs) -> "DriftSpec":
        c = _trim(coeffs)
        if c[0] != 0.0:
            raise ModelError("drift must satisfy h(0) = 0")
        return cls("custom", c, _sup_derivative(c), _poly_concave(c))

    def __call__(self, x):
        return P.polyval(x, self.coeffs)

    def derivative(self, x):
        return P.polyval(x, P.polyder(self.coeffs))

    def __eq__(self, other):
        return (
            isinstance(other, DriftSpec)
            and self.kind == other.kind
            and np.array_equal(self.coeffs, other.coeffs)
        )

    def __hash__(self):
        return hash((self.kind, self.coeffs.tobytes()))


@dataclass(frozen=True)
class DiffusionSpec:
    """Branching intensity g as a polynomial; g(x) = beta x for Feller."""

    kind: Literal["feller", "custom"]
    coeffs: np.ndarray
    growth_bound: float
    beta: float = 0.0

    @classmethod
    def feller(cls, beta: float) -> "DiffusionSpec":
        if beta < 0:
            raise ModelError("beta must be nonnegative")
        return cls("feller", _trim([0.0, beta]), float(np.sqrt(beta)), float(beta))

    @classmethod
    def polynomial(cls, coeffs) -> "DiffusionSpec":
        c = _trim(coeffs)
        if c[0] != 0.0:
            raise ModelError("diffusion must satisfy g(0) = 0")
        if len(c) > 3:
            bound = np.inf
        else:
            # sqrt(g(x))/x <= sqrt(sum |c_k|) for x >= 1 when deg g <= 2
            bound = float(np.sqrt(np.abs(c).sum()))
        return cls("custom", c, bound)

    @property
    def is_linear(self) -> bool:
        return len(self.coeffs) == 2 and self.coeffs[1] > 0

    @property
    def linear_rate(self) -> float:
        """beta such that g(x) = beta x; raises if g is not linear."""
        if not self.is_linear:
            raise ModelError("diffusion is not of the form g(x) = beta x")
        return float(self.coeffs[1])

    def __call__(self, x):
        return P.polyval(x, self.coeffs)

    def __eq__(self, other):
        return (
            isinstance(other, DiffusionSpec)
            and self.kind == other.kind
            and np.array_equal(self.coeffs, other.coeffs)
        )

    def __hash__(self):
        return hash((self.kind, self.coeffs.tobytes()))


def _sup_derivative(coeffs: np.ndarray) -> float:
    d = P.polyder(coeffs)
    if d.size == 0:
        return 0.0
    if len(d) > 1 and d[-1] > 0:
        return np.inf
    # bounded above on [0, inf): maximum at 0 or at a critical point
    cands = [0.0]
    dd = P.polyder(d)
    if dd.size:
        for r in np.roots(dd[::-1]) if len(dd) > 1 else []:
            if abs(r.imag) < 1e-12 and r.real > 0:
                cands.append(r.real)
    return float(max(P.polyval(np.array(cands), d)))


def _poly_concave(coeffs: np.ndarray, x_max: float = 1e3, n: int = 4001) -> bool:
    if len(coeffs) <= 2:
        return True
    d2 = P.polyder(coeffs, 2)
    if len(d2) > 1 and d2[-1] > 0:
        return False
    x = np.linspace(0.0, x_max, n)
    return bool(np.all(P.polyval(x, d2) <= 1e-12))


@dataclass(frozen=True)
class Lattice:
    """Finite box of Z^d with periodic (torus) or absorbing (truncate) edges.

    Sites are numbered in row-major order of their coordinates in
    ``[0, sides[0]) x ... x [0, sides[d-1])``. ``origin`` is the reference
    site used for distances and point masses; it defaults to the zero
    coordinate on a torus and the box centre when truncated.
    """

    sides: tuple[int, ...]
    boundary: Boundary = "torus"
    origin: tuple[int, ...] | None = None

    def __post_init__(self):
        sides = tuple(int(s) for s in np.atleast_1d(self.sides))
        if not sides or any(s < 1 for s in sides):
            raise ModelError(f"lattice needs at least one site per axis, got {sides}")
        if self.boundary not in ("torus", "truncate"):
            raise ModelError(f"unknown boundary {self.boundary!r}")
        object.__setattr__(self, "sides", sides)
        if self.origin is None:
            origin = (0,) * len(sides) if self.boundary == "torus" else tuple(s // 2 for s in sides)
        else:
            origin = tuple(int(o) for o in self.origin)
            if len(origin) != len(sides) or any(not 0 <= o < s for o, s in zip(origin, sides)):
                raise ModelError(f"origin {origin} outside lattice {sides}")
        object.__setattr__(self, "origin", origin)

    @property
    def dim(self) -> int:
        return len(self.sides)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.sides))

    @property
    def origin_index(self) -> int:
        return self.index(self.origin)

    def index(self, coord) -> int:
        return int(np.ravel_multi_index(tuple(coord), self.sides))

    def coords(self) -> np.ndarray:
        """(n_sites, dim) integer coordinates in site order."""
        grids = np.indices(self.sides).reshape(self.dim, -1)
        return grids.T.copy()


def _normalize_stencil(stencil: Mapping, dim: int) -> dict[tuple[int, ...], float]:
    out: dict[tuple[int, ...], float] = {}
    for off, w in stencil.items():
        key = tuple(int(o) for o in np.atleast_1d(off))
        if len(key) != dim:
            raise ModelError(f"stencil offset {off} does not match lattice dimension {dim}")
        w = float(w)
        if not np.isfinite(w) or w < 0:
            raise ModelError(f"stencil weight for offset {key} must be nonnegative, got {w}")
        out[key] = out.get(key, 0.0) + w
    return out


@dataclass(frozen=True, eq=False)
class MigrationKernel:
    """Translation-invariant migration kernel m(i, j) = m(0, j - i).

    ``matrix`` is the realized sparse (CSR) matrix with entry (i, j) = m(i, j);
    the inflow to site i is ``matrix @ x``.
    """

    stencil: dict[tuple[int, ...], float]
    lattice: Lattice
    matrix: sparse.csr_matrix = field(repr=False)

    @property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    def irreducible(self) -> bool:
        n, _ = connected_components(self.matrix, directed=True, connection="strong")
        return n == 1


def _realize(stencil: dict[tuple[int, ...], float], lattice: Lattice) -> sparse.csr_matrix:
    coords = lattice.coords()
    n = lattice.n_sites
    sides = np.array(lattice.sides)
    rows, cols, vals = [], [], []
    for off, w in stencil.items():
        if w == 0.0:
            continue
        tgt = coords + np.array(off)
        if lattice.boundary == "torus":
            tgt = np.mod(tgt, sides)
            keep = np.ones(n, dtype=bool)
        else:
            keep = np.all((tgt >= 0) & (tgt < sides), axis=1)
        j = np.ravel_multi_index(tuple(tgt[keep].T), lattice.sides)
        rows.append(np.nonzero(keep)[0])
        cols.append(j)
        vals.append(np.full(j.size, w))
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=int)
        v = np.zeros(0)
    m = sparse.csr_matrix((v, (r, c)), shape=(n, n))
    m.sum_duplicates()
    m.sort_indices()
    return m


def build_kernel(stencil: Mapping, lattice: Lattice) -> MigrationKernel:
    """Realize a stencil ``{offset: weight}`` on a lattice.

    On a torus offsets wrap around; on a truncated box any entry whose target
    leaves the box is dropped, so boundary rows sum to less than one and mass
    leaks out at rate ``alpha``.

    Raises
    ------
    ModelError
        For negative weights, weights not summing to one (tolerance 1e-12),
        or a torus kernel whose support graph is not irreducible.
    """
    st = _normalize_stencil(stencil, lattice.dim)
    total = sum(st.values())
    if abs(total - 1.0) > STENCIL_TOL:
        raise ModelError(f"stencil weights must sum to 1, got {total!r}")
    kernel = MigrationKernel(st, lattice, _realize(st, lattice))
    if lattice.boundary == "torus" and not kernel.irreducible():
        raise ModelError("torus kernel is not irreducible")
    return kernel


def transpose_kernel(kernel: MigrationKernel) -> MigrationKernel:
    """Kernel with m_dagger(i, j) = m(j, i); the stencil is reflected."""
    reflected = {tuple(-o for o in off): w for off, w in kernel.stencil.items()}
    mt = kernel.matrix.T.tocsr()
    mt.sort_indices()
    return MigrationKernel(reflected, kernel.lattice, mt)


def nearest_neighbor_stencil(dim: int = 1) -> dict[tuple[int, ...], float]:
    st = {}
    for axis in range(dim):
        for s in (-1, 1):
            off = [0] * dim
            off[axis] = s
            st[tuple(off)] = 1.0 / (2 * dim)
    return st


@dataclass(frozen=True, eq=False)
class SigmaWeights:
    """Strictly positive weights with their Liggett-Spitzer constant.

    ``column_ratios[j] = sum_i sigma_i m(i, j) / sigma_j``; ``c_ls`` is their max.
    """

    sigma: np.ndarray
    c_ls: float
    column_ratios: np.ndarray = field(repr=False)


def graph_distance(kernel: MigrationKernel, source: int) -> np.ndarray:
    """Hop distance from ``source`` in the undirected support graph (BFS)."""
    adj = (kernel.matrix + kernel.matrix.T).tocsr()
    n = kernel.n_sites
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    indptr, indices = adj.indptr, adj.indices
    while queue:
        i = queue.popleft()
        for j in indices[indptr[i] : indptr[i + 1]]:
            if dist[j] < 0:
                dist[j] = dist[i] + 1
                queue.append(j)
    # unreachable sites (possible on truncated boxes) get one more than the max
    dist[dist < 0] = dist.max() + 1
    return dist


def liggett_spitzer_weights(kernel: MigrationKernel, decay_rate: float = 1.0) -> SigmaWeights:
    """Exponentially decaying weights sigma_i = exp(-decay_rate * d(origin, i))."""
    if not decay_rate > 0:
        raise ModelError("decay_rate must be positive")
    dist = graph_distance(kernel, kernel.lattice.origin_index)
    sigma = np.exp(-decay_rate * dist.astype(float))
    ratios = (kernel.matrix.T @ sigma) / sigma
    return SigmaWeights(sigma, float(ratios.max()), ratios)


def sigma_norm(config, weights: SigmaWeights) -> float:
    x = np.asarray(config, dtype=float)
    if x.shape != weights.sigma.shape:
        raise ModelError(f"configuration shape {x.shape} does not match weights {weights.sigma.shape}")
    return float(np.dot(weights.sigma, np.abs(x)))


def as_configuration(values, n_sites: int | None = None) -> np.ndarray:
    """Validate a nonnegative finite configuration and return it as float array."""
    x = np.array(values, dtype=float, ndmin=1)
    if n_sites is not None and x.size == 1 and n_sites > 1:
        x = np.full(n_sites, float(x[0]))
    if n_sites is not None and x.shape != (n_sites,):
        raise ModelError(f"configuration has shape {x.shape}, expected ({n_sites},)")
    if not np.all(np.isfinite(x)) or np.any(x < 0):
        raise ModelError("configuration entries must be finite and nonnegative")
    return x


@dataclass(frozen=True, eq=False)
class Model:
    """Everything needed to run the lattice system: rates, h, g and kernel."""

    params: ModelParams
    drift: DriftSpec
    diffusion: DiffusionSpec
    kernel: MigrationKernel
    weights: SigmaWeights | None = None

    def __post_init__(self):
        if self.weights is None:
            object.__setattr__(self, "weights", liggett_spitzer_weights(self.kernel))

    @classmethod
    def logistic(cls, alpha, beta, gamma, capacity, kernel, decay_rate=1.0) -> "Model":
        params = ModelParams(alpha, beta, gamma, capacity)
        return cls(
            params,
            DriftSpec.logistic(gamma, capacity),
            DiffusionSpec.feller(beta),
            kernel,
            liggett_spitzer_weights(kernel, decay_rate),
        )

    @property
    def is_logistic(self) -> bool:
        return self.drift.kind == "logistic" and self.diffusion.kind == "feller"

    def with_kernel(self, kernel: MigrationKernel) -> "Model":
        return Model(self.params, self.drift, self.diffusion, kernel, liggett_spitzer_weights(kernel))

    def with_drift(self, drift: DriftSpec) -> "Model":
        return Model(self.params, drift, self.diffusion, self.kernel, self.weights)


@dataclass(frozen=True)
class AssumptionReport:
    a1: bool
    a2: bool
    a3: bool
    lipschitz_up: float
    x0: float | None
    tail_integral: float | None
    tail_bound: float | None
    growth_bound: float
    evidence: str
    notes: tuple[str, ...] = ()


def _largest_zero(h, x_max: float, n: int = 10_000) -> float:
    """Largest y >= 0 with h(y) = 0, located on a grid and refined by bisection."""
    from scipy.optimize import brentq

    x = np.linspace(0.0, x_max, n + 1)
    v = h(x)
    y0 = 0.0
    for k in range(n, 0, -1):
        if v[k] == 0.0:
            y0 = x[k]
            break
        if np.sign(v[k]) != np.sign(v[k - 1]):
            y0 = x[k - 1] if v[k - 1] == 0.0 else brentq(h, x[k - 1], x[k], xtol=1e-14)
            break
    return float(y0)


def validate_assumptions(
    drift: DriftSpec, diffusion: DiffusionSpec, x_max: float | None = None, n_grid: int = 10_000
) -> AssumptionReport:
    """Check the standing assumptions on (h, g) over a grid on [0, x_max].

    A1: h(0) = g(0) = 0, h upward Lipschitz, g > 0 on (0, inf), sqrt(g)/x bounded.
    A2: h concave, negative beyond some x0 > 0, with int_{x0}^inf 1/(-h) finite.
    A3: some concave majorant of h has the same integrability (A2 implies A3).

    Polynomial structure decides the tail behaviour exactly; the grid gives
    the reported evidence values.
    """
    if drift(0.0) != 0.0 or diffusion(0.0) != 0.0:
        raise ModelError("need h(0) = g(0) = 0")
    if x_max is None:
        x_max = 100.0 * drift.capacity if drift.kind == "logistic" and drift.capacity > 0 else 100.0
    x = np.linspace(0.0, x_max, n_grid + 1)
    hx, gx = drift(x), diffusion(x)
    if not (np.all(np.isfinite(hx)) and np.all(np.isfinite(gx))):
        raise ModelError("drift or diffusion not evaluable on the validation grid")
    notes = []

    slopes = np.diff(hx) / np.diff(x)
    lip = max(float(slopes.max()), 0.0)
    upward_ok = np.isfinite(drift.lipschitz_up)
    g_pos = bool(np.all(gx[1:] > 0))
    dc = diffusion.coeffs
    g_pos = g_pos and dc[-1] > 0  # eventually positive
    growth_ok = np.isfinite(diffusion.growth_bound)
    a1 = bool(upward_ok and g_pos and growth_ok)
    if not upward_ok:
        notes.append("h' unbounded above")
    if not g_pos:
        notes.append("g not strictly positive on (0, inf)")
    if not growth_ok:
        notes.append("sqrt(g)/x unbounded")

    hc = drift.coeffs
    deg = len(hc) - 1
    eventually_negative = deg >= 1 and hc[-1] < 0
    y0 = _largest_zero(drift, x_max, n_grid) if eventually_negative else None
    x0 = None
    tail_int = tail_bound = None
    integrable = eventually_negative and deg >= 2
    if eventually_negative:
        x0 = max(2.0 * y0, y0 + 1.0)
        cut = max(x_max, 2.0 * x0)
        from scipy.integrate import quad

        tail_int, _ = quad(lambda z: -1.0 / drift(z), x0, cut, limit=200)
        if drift.kind == "logistic" and drift.capacity > 0:
            g_, k_ = drift.gamma, drift.capacity
            tail_bound = np.log(cut / (cut - k_)) / (g_ * k_)
        elif integrable:
            # -h(z) >= |a_n| z^n / 2 for z beyond cut when the leading term dominates
            tail_bound = 2.0 * cut ** (1 - deg) / (abs(hc[-1]) * (deg - 1))
        else:
            tail_bound = np.inf
    concave = drift.concave and _poly_concave(hc, x_max)
    a2 = bool(concave and integrable)
    # leading negative term of degree >= 2 makes h eventually concave
    a3 = bool(a2 or integrable)
    evidence = "analytic" if drift.kind in ("logistic", "linear") else "grid evidence only"
    return AssumptionReport(
        a1, a2, a3, lip, x0, tail_int, tail_bound, float(diffusion.growth_bound), evidence, tuple(notes)
    )
