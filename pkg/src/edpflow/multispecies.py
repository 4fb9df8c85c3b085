"""Many-species linear reaction networks with detailed balance.

A generator splits into a slow part and a fast part scaled by 1/epsilon; both
preserve positivity and total mass (nonnegative off-diagonal entries, zero
column sums) and the assembled generator satisfies detailed balance with
respect to its stationary composition.  Edges with a fast entry are "fast",
edges carried only by the slow part are "slow"; the classification does not
depend on epsilon.

The dissipation machinery mirrors the two-species case: per-species diffusion
terms plus one cosh exchange term per reacting pair, weighted by the
symmetrized rate coefficients kappa_ij = A_ij sqrt(w_j / w_i).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import expm, null_space

from .core import FluxAssignment, State, Trajectory, _readonly
from .dissipation import damped_newton_max
from .functionals import cosh_star, cosh_star_prime, cosh_star_second, perspective_eval
from .solver import SolverConfig, IntegrationError, _diffusion_step

__all__ = [
    "MarkovGenerator",
    "GeneratorReport",
    "load_generator",
    "validate_generator",
    "kappa_coefficients",
    "kappa_split",
    "build_detailed_balance_generator",
    "random_detailed_balance_generator",
    "solve_multispecies",
    "MultispeciesBreakdown",
    "multispecies_dissipation",
]


@dataclass(frozen=True, eq=False)
class MarkovGenerator:
    """Slow/fast generator pair with per-species diffusion constants.

    ``a_slow`` and ``a_fast`` are I x I rate matrices in the convention
    dc/dt = A c (entry (i, j) is the rate from species j into species i);
    the assembled generator is a_slow + a_fast / epsilon.
    """

    species: tuple[str, ...]
    a_slow: np.ndarray
    a_fast: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        a_s = _readonly(self.a_slow)
        a_f = _readonly(self.a_fast)
        d = _readonly(self.delta)
        i = len(self.species)
        if i < 2:
            raise ValueError("need at least two species")
        if a_s.shape != (i, i) or a_f.shape != (i, i) or d.shape != (i,):
            raise ValueError(
                f"shape mismatch: {i} species, A_slow {a_s.shape}, "
                f"A_fast {a_f.shape}, delta {d.shape}"
            )
        object.__setattr__(self, "species", tuple(str(s) for s in self.species))
        object.__setattr__(self, "a_slow", a_s)
        object.__setattr__(self, "a_fast", a_f)
        object.__setattr__(self, "delta", d)

    @property
    def n_species(self) -> int:
        return len(self.species)

    def assemble(self, epsilon: float) -> np.ndarray:
        return self.a_slow + self.a_fast / epsilon

    def stationary(self, epsilon: float) -> np.ndarray:
        """Normalized nonnegative null vector of the assembled generator.

        Raises if the null space is not one-dimensional (degenerate network).
        """
        ns = null_space(self.assemble(epsilon))
        if ns.shape[1] != 1:
            raise ValueError(
                f"stationary space has dimension {ns.shape[1]}, expected 1"
            )
        w = ns[:, 0]
        w = w * np.sign(w.sum())
        total = w.sum()
        if total == 0:
            raise ValueError("degenerate stationary vector")
        return w / total

    def w_limit(self, eps_limit: float = 1e-8) -> np.ndarray:
        """Small-scale limit of the stationary composition (evaluated numerically)."""
        return self.stationary(eps_limit)

    def edge_kind(self, i: int, j: int) -> str | None:
        """"fast", "slow", or None for a non-reacting pair."""
        if self.a_fast[i, j] > 0 or self.a_fast[j, i] > 0:
            return "fast"
        if self.a_slow[i, j] > 0 or self.a_slow[j, i] > 0:
            return "slow"
        return None

    def edges(self):
        """Reacting pairs (i < j) with their fast/slow classification."""
        out = []
        for i in range(self.n_species):
            for j in range(i + 1, self.n_species):
                kind = self.edge_kind(i, j)
                if kind is not None:
                    out.append((i, j, kind))
        return out


_SPEC_KEYS = ("species", "A_slow", "A_fast", "delta")


def load_generator(source) -> MarkovGenerator:
    """Build a generator from a JSON document (path or already-parsed dict).

    The schema is strict: exactly the keys ``species`` (names), ``A_slow`` and
    ``A_fast`` (row-major square matrices), and ``delta`` (positive array).
    Violations raise a ValueError listing every offending key.
    """
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            doc = json.load(fh)
    else:
        doc = source
    problems = []
    if not isinstance(doc, dict):
        raise ValueError("generator spec must be a JSON object")
    for key in _SPEC_KEYS:
        if key not in doc:
            problems.append(f"missing key {key!r}")
    for key in doc:
        if key not in _SPEC_KEYS:
            problems.append(f"unknown key {key!r}")
    if problems:
        raise ValueError("generator spec invalid: " + "; ".join(problems))

    species = doc["species"]
    if not isinstance(species, list) or not all(isinstance(s, str) for s in species):
        problems.append("'species' must be a list of names")
        n = 0
    else:
        n = len(species)
    mats = {}
    for key in ("A_slow", "A_fast"):
        try:
            m = np.array(doc[key], dtype=float)
        except (TypeError, ValueError):
            problems.append(f"{key!r} is not numeric")
            continue
        if m.shape != (n, n):
            problems.append(f"{key!r} must be a {n}x{n} row-major matrix, got shape {m.shape}")
        else:
            mats[key] = m
    try:
        delta = np.array(doc["delta"], dtype=float)
        if delta.shape != (n,):
            problems.append(f"'delta' must have one entry per species, got shape {delta.shape}")
        elif np.any(delta <= 0):
            problems.append("'delta' entries must be positive")
    except (TypeError, ValueError):
        problems.append("'delta' is not numeric")
        delta = None
    if problems:
        raise ValueError("generator spec invalid: " + "; ".join(problems))
    return MarkovGenerator(tuple(species), mats["A_slow"], mats["A_fast"], delta)


@dataclass(frozen=True)
class GeneratorReport:
    """Itemized validation outcome; ``failures`` is empty when the generator is accepted."""

    ok: bool
    failures: tuple[str, ...]
    w_limit: np.ndarray | None
    w_by_epsilon: tuple[tuple[float, np.ndarray], ...]


def validate_generator(gen: MarkovGenerator,
                       eps_sweep=(1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6),
                       tol: float = 1e-12) -> GeneratorReport:
    """Check sign pattern, column sums, detailed balance, and the stationary limit.

    For each scale in the sweep the stationary composition is solved from the
    null space and detailed balance A_ij w_j = A_ji w_i is verified to ``tol``
    relative to the entry scale; the sweep must approach a positive limit
    composition.  Violations are reported itemized, never raised.
    """
    failures = []
    for name, mat in (("A_slow", gen.a_slow), ("A_fast", gen.a_fast)):
        off = mat - np.diag(np.diag(mat))
        if np.any(off < 0):
            failures.append(f"{name}: negative off-diagonal entry")
        colsum = np.abs(mat.sum(axis=0)).max()
        scale = max(1.0, float(np.abs(mat).max()))
        if colsum > tol * scale:
            failures.append(f"{name}: column sums not zero (max {colsum:.3e})")

    w_limit = None
    w_by_eps = []
    try:
        w_limit = gen.w_limit()
    except ValueError as exc:
        failures.append(f"stationary limit: {exc}")
    for eps in eps_sweep:
        try:
            w = gen.stationary(eps)
        except ValueError as exc:
            failures.append(f"epsilon={eps:g}: {exc}")
            continue
        w_by_eps.append((float(eps), w))
        if np.any(w <= 0):
            failures.append(f"epsilon={eps:g}: stationary vector not positive")
            continue
        a = gen.assemble(eps)
        db = np.abs(a * w[None, :] - a.T * w[:, None]).max()
        scale = max(1.0, float(np.abs(a).max()))
        if db > tol * scale:
            failures.append(
                f"epsilon={eps:g}: detailed balance violated (max defect {db:.3e}, "
                f"tolerance {tol * scale:.3e})"
            )
    if w_limit is not None:
        if np.any(w_limit <= 0):
            failures.append("limit stationary vector not positive componentwise")
        errs = [float(np.max(np.abs(w - w_limit))) for _, w in w_by_eps]
        if errs and errs[-1] > 1e-6:
            failures.append(
                f"stationary vector does not approach its limit (final gap {errs[-1]:.3e})"
            )
        # floor at 1e-9: for scale-independent stationary vectors the gaps are
        # pure null-space roundoff, which grows like machine eps over epsilon
        if len(errs) >= 2 and errs[-1] > errs[0] + 1e-9:
            failures.append("stationary-vector gap grows along the sweep")
    return GeneratorReport(
        ok=not failures,
        failures=tuple(failures),
        w_limit=w_limit,
        w_by_epsilon=tuple(w_by_eps),
    )


def kappa_coefficients(gen: MarkovGenerator, epsilon: float) -> np.ndarray:
    """Symmetrized rate coefficients kappa_ij = A_ij sqrt(w_j / w_i), zero diagonal.

    Symmetric whenever the generator satisfies detailed balance.
    """
    w = gen.stationary(epsilon)
    a = gen.assemble(epsilon)
    kappa = a * np.sqrt(w[None, :] / w[:, None])
    np.fill_diagonal(kappa, 0.0)
    return kappa


def kappa_split(gen: MarkovGenerator, epsilon: float):
    """Slow and fast factors with kappa = kappa_slow + kappa_fast / epsilon.

    Both factors stay bounded uniformly in epsilon because the stationary
    composition converges to a positive limit.
    """
    w = gen.stationary(epsilon)
    ratio = np.sqrt(w[None, :] / w[:, None])
    k_slow = gen.a_slow * ratio
    k_fast = gen.a_fast * ratio
    np.fill_diagonal(k_slow, 0.0)
    np.fill_diagonal(k_fast, 0.0)
    return k_slow, k_fast


def build_detailed_balance_generator(species, w, slow_edges, fast_edges, delta) -> MarkovGenerator:
    """Assemble a generator reversible with respect to the composition ``w``.

    ``slow_edges`` and ``fast_edges`` map pairs (i, j) to positive symmetric
    conductances s; the rates A_ij = s sqrt(w_i / w_j) then satisfy
    A_ij w_j = A_ji w_i by construction, and diagonals are set so column sums
    vanish.  Both parts share the stationary composition, so the assembled
    generator is reversible for every scale.
    """
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    n = len(species)

    def assemble(edges):
        a = np.zeros((n, n))
        for (i, j), s in edges.items():
            if not s > 0:
                raise ValueError(f"conductance for edge {(i, j)} must be positive")
            a[i, j] = s * np.sqrt(w[i] / w[j])
            a[j, i] = s * np.sqrt(w[j] / w[i])
        np.fill_diagonal(a, 0.0)
        a[np.diag_indices(n)] = -a.sum(axis=0)
        return a

    return MarkovGenerator(tuple(species), assemble(slow_edges), assemble(fast_edges), delta)


def random_detailed_balance_generator(rng, n_species: int = 4) -> MarkovGenerator:
    """Seeded reversible network: a chain closed into a cycle, first edge fast.

    The cycle matters for validation tests: on a tree every rate assignment is
    reversible with respect to its own stationary vector, so only a cyclic
    network can expose a detailed-balance violation.
    """
    if n_species < 3:
        raise ValueError("need at least three species to close a cycle")
    w = rng.uniform(0.5, 2.0, n_species)
    fast_edges = {(0, 1): float(rng.uniform(0.5, 2.0))}
    slow_edges = {
        (i, i + 1): float(rng.uniform(0.5, 2.0)) for i in range(1, n_species - 1)
    }
    slow_edges[(0, n_species - 1)] = float(rng.uniform(0.5, 2.0))
    delta = rng.uniform(0.5, 2.0, n_species)
    species = tuple(f"X{i + 1}" for i in range(n_species))
    return build_detailed_balance_generator(species, w, slow_edges, fast_edges, delta)


def solve_multispecies(initial: State, gen: MarkovGenerator, epsilon: float,
                       config: SolverConfig) -> Trajectory:
    """Strang-split integration of the I-species reaction-diffusion system.

    The reaction half step applies the exact exponential of the assembled
    generator (scaling-and-squaring on the I x I matrix, shared by all cells),
    the diffusion step is implicit per species.  Mass and positivity are
    preserved; recorded fluxes satisfy the discrete continuity equation with
    species-summed reaction fluxes equal to zero.
    """
    i_sp = gen.n_species
    if initial.n_species != i_sp:
        raise ValueError(
            f"state has {initial.n_species} species, generator {i_sp}"
        )
    n = initial.n_cells
    h = 1.0 / n
    dt = config.dt_effective
    steps = config.n_steps
    propagator = expm(gen.assemble(epsilon) * (0.5 * dt))
    g = np.ones(n - 1)
    delta_faces = [np.full(n - 1, d) for d in gen.delta]
    cn = config.scheme == "strang_cn"

    states = np.empty((steps + 1, i_sp, n))
    J = np.empty((steps, i_sp, n + 1))
    b = np.empty((steps, i_sp, n))
    states[0] = initial.c
    c = initial.c.copy()
    for m in range(steps):
        c_half = propagator @ c
        exch = c_half - c
        c_mid = np.empty_like(c)
        for j in range(i_sp):
            c_mid[j], J[m, j] = _diffusion_step(c_half[j], delta_faces[j], g, dt, h, cn)
        c_next = propagator @ c_mid
        exch += c_next - c_mid
        exch -= exch.sum(axis=0) / i_sp  # exact zero species sum despite expm roundoff
        b[m] = exch / dt
        if not np.all(np.isfinite(c_next)):
            raise IntegrationError("state left the finite range", m)
        states[m + 1] = c_next
        c = c_next
    times = dt * np.arange(steps + 1)
    return Trajectory(times, states, FluxAssignment(J, b))


@dataclass(frozen=True)
class MultispeciesBreakdown:
    """Dissipation terms with the exchange contributions split by edge class."""

    vel_diff: float
    vel_react_slow: float
    vel_react_fast: float
    slope_diff: float
    slope_react_slow: float
    slope_react_fast: float

    @property
    def vel_react(self) -> float:
        return self.vel_react_slow + self.vel_react_fast

    @property
    def slope_react(self) -> float:
        return self.slope_react_slow + self.slope_react_fast

    @property
    def total(self) -> float:
        return self.vel_diff + self.vel_react + self.slope_diff + self.slope_react


def _edge_weights(gen: MarkovGenerator, epsilon: float):
    kappa = kappa_coefficients(gen, epsilon)
    return [(i, j, kappa[i, j], kind) for i, j, kind in gen.edges()]


def _multispecies_rate_cost(c, delta, edges, v, h, tol, max_iter):
    """Dual ascent for the I-species flux cost; returns (J, per-edge b, xi)."""
    i_sp, n = c.shape
    cbar = 0.5 * (c[:, 1:] + c[:, :-1])
    wdiff = delta[:, None] * cbar / h
    hv = (h * v).T.ravel()  # cell-interleaved unknowns, x[i_sp*k + i] = xi[i, k]
    ew = [(i, j, k * h * np.sqrt(c[i] * c[j])) for i, j, k, _ in edges]

    def value_grad(x):
        xi = x.reshape(n, i_sp).T
        dxi = xi[:, 1:] - xi[:, :-1]
        val = float(hv @ x) - 0.5 * float(np.sum(wdiff * dxi * dxi))
        grad_r = np.zeros_like(xi)
        t = wdiff * dxi
        grad_r[:, 1:] += t
        grad_r[:, :-1] -= t
        for i, j, rw in ew:
            u = xi[i] - xi[j]
            with np.errstate(over="ignore"):
                val -= float(rw @ cosh_star(u))
                s = rw * cosh_star_prime(u)
            grad_r[i] += s
            grad_r[j] -= s
        return val, hv - grad_r.T.ravel()

    def hess_banded(x):
        xi = x.reshape(n, i_sp).T
        ab = np.zeros((2 * i_sp + 1, i_sp * n))
        diag = ab[i_sp]
        for sp in range(i_sp):
            w = wdiff[sp]
            diag[sp:i_sp * (n - 1) + sp:i_sp] += w
            diag[i_sp + sp::i_sp] += w
            ab[0, i_sp + sp::i_sp] -= w
        for i, j, rw in ew:
            with np.errstate(over="ignore"):
                r2 = rw * cosh_star_second(xi[i] - xi[j])
            cols_i = i_sp * np.arange(n) + i
            cols_j = i_sp * np.arange(n) + j
            diag[cols_i] += r2
            diag[cols_j] += r2
            ab[i_sp - (j - i), cols_j] -= r2
        ab[i_sp + 1:] = 0.0
        for d in range(1, i_sp + 1):
            ab[i_sp + d, :-d] = ab[i_sp - d, d:]
        return ab

    x, val, gnorm, iters = damped_newton_max(
        value_grad, hess_banded, np.zeros(i_sp * n),
        bandwidth=i_sp, tol=tol, max_iter=max_iter,
    )
    xi = x.reshape(n, i_sp).T
    J = np.zeros((i_sp, n + 1))
    J[:, 1:-1] = wdiff * (xi[:, 1:] - xi[:, :-1])
    edge_b = {
        (i, j): rw / h * cosh_star_prime(xi[i] - xi[j]) for i, j, rw in ew
    }
    return J, edge_b, val, gnorm, iters


def multispecies_dissipation(traj: Trajectory, gen: MarkovGenerator, epsilon: float,
                             *, tol: float = 1e-10, max_iter: int = 200) -> MultispeciesBreakdown:
    """Time-integrated dissipation of an I-species trajectory.

    Diffusion slope per species, one cosh exchange term per reacting pair
    weighted by kappa_ij, and the velocity part by the I-species dual
    maximization; exchange contributions are reported separately for slow and
    fast edges.  With two species the values coincide with the two-species
    evaluator.
    """
    w = gen.stationary(epsilon)
    edges = _edge_weights(gen, epsilon)
    delta = gen.delta
    n = traj.n_cells
    h = 1.0 / n
    dts = np.diff(traj.times)
    out = np.zeros(6)
    for m, dt in enumerate(dts):
        c = traj.states[m]
        v = (traj.states[m + 1] - c) / dt
        J, edge_b, _, _, _ = _multispecies_rate_cost(
            c, delta, edges, v, h, tol, max_iter
        )
        cbar = 0.5 * (c[:, 1:] + c[:, :-1])
        mob = delta[:, None] * cbar
        with np.errstate(divide="ignore", invalid="ignore"):
            kin = np.where(mob > 0, J[:, 1:-1] ** 2 / np.where(mob > 0, mob, 1.0),
                           np.where(J[:, 1:-1] == 0, 0.0, np.inf))
        vel_diff = 0.5 * float(np.sum(kin)) * h
        vel_rs = vel_rf = 0.0
        for i, j, kappa, kind in edges:
            a = kappa * np.sqrt(c[i] * c[j])
            cost = float(np.sum(perspective_eval("cosh", a, edge_b[(i, j)]))) * h
            if kind == "fast":
                vel_rf += cost
            else:
                vel_rs += cost
        rho = c / w[:, None]
        rbar = 0.5 * (rho[:, 1:] + rho[:, :-1])
        drho = rho[:, 1:] - rho[:, :-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            fisher = np.where(rbar > 0, drho * drho / np.where(rbar > 0, rbar, 1.0),
                              np.where(drho == 0, 0.0, np.inf))
        slope_diff = 0.5 * float(np.sum(delta[:, None] * w[:, None] * fisher)) / h
        sq = np.sqrt(rho)
        slope_rs = slope_rf = 0.0
        for i, j, kappa, kind in edges:
            term = 2.0 * kappa * np.sqrt(w[i] * w[j]) * float(np.sum((sq[i] - sq[j]) ** 2)) * h
            if kind == "fast":
                slope_rf += term
            else:
                slope_rs += term
        out += dt * np.array([vel_diff, vel_rs, vel_rf, slope_diff, slope_rs, slope_rf])
    return MultispeciesBreakdown(*out)
