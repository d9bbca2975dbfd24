"""Nonlinearities and sector machinery for Lur'e loops.

Provides sector specifications with centering, sampling-based falsification
of asymptotic sector claims, QP-generated projection nonlinearities with
their piecewise-affine face maps, polytope bounds for piecewise-affine maps,
gauge saturation, convex-combination operators, and the bundled attractor
nonlinearities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .polytopes import Polytope, gauge_matrix, hull_vertices

__all__ = [
    "Nonlinearity",
    "SectorSpec",
    "AsymptoticCertificate",
    "AsymptoticReport",
    "PwaPiece",
    "PolytopeBound",
    "center",
    "verify_asymptotic",
    "qp_projection",
    "qp_nonlinearity",
    "face_projection",
    "pwa_polytope_bound",
    "gauge_saturation",
    "convex_combination",
    "attractor_nonlinearities",
    "example_projection_pieces",
]


@dataclass(frozen=True)
class Nonlinearity:
    """Memoryless (possibly time-varying) map p = phi(t, q)."""

    eval: callable  # (t, q) -> p
    n_q: int
    n_p: int
    tag: str = ""

    def __call__(self, t, q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        p = np.atleast_1d(np.asarray(self.eval(t, q), dtype=float))
        if p.shape != (self.n_p,):
            raise ValueError(f"{self.tag or 'nonlinearity'}: output shape "
                             f"{p.shape}, expected ({self.n_p},)")
        return p

    @classmethod
    def static(cls, f, n_q, n_p=None, tag=""):
        return cls(lambda t, q: f(q), n_q, n_p if n_p is not None else n_q, tag)

    @classmethod
    def scalar(cls, f, tag=""):
        return cls(lambda t, q: np.atleast_1d(f(float(q[0]))), 1, 1, tag)


@dataclass(frozen=True)
class SectorSpec:
    """Sector bounds a < b, scalar or symmetric-matrix valued."""

    a: object
    b: object

    def __post_init__(self):
        a, b = np.asarray(self.a, dtype=float), np.asarray(self.b, dtype=float)
        if a.ndim == 0:
            if not a < b:
                raise ValueError("sector requires a < b")
        else:
            if a.shape != b.shape or a.shape[0] != a.shape[1]:
                raise ValueError("matrix sector bounds must be square, same shape")
            if not (np.allclose(a, a.T) and np.allclose(b, b.T)):
                raise ValueError("matrix sector bounds must be symmetric")
            if np.min(np.linalg.eigvalsh(b - a)) <= 0:
                raise ValueError("matrix sector requires A < B in the definite order")

    @property
    def is_matrix(self):
        return np.asarray(self.a).ndim > 0

    @property
    def c(self):
        """Sector center (a+b)/2."""
        return (np.asarray(self.a) + np.asarray(self.b)) / 2.0

    @property
    def r(self):
        """Sector radius (b-a)/2."""
        return (np.asarray(self.b) - np.asarray(self.a)) / 2.0

    def residual(self, q, p):
        """Sector defect (p - a q)^T (p - b q); nonpositive inside the sector."""
        q, p = np.atleast_1d(q), np.atleast_1d(p)
        if self.is_matrix:
            return float((p - self.a @ q) @ (p - self.b @ q))
        return float((p - self.a * q) @ (p - self.b * q))


@dataclass(frozen=True)
class AsymptoticCertificate:
    """Asymptotic sector data: sector holds for |q| > M, |phi| <= L inside."""

    sector: SectorSpec
    M: float
    L: float

    def __post_init__(self):
        if self.M <= 0 or self.L < 0:
            raise ValueError("require M > 0 and L >= 0")

    @property
    def k(self):
        """Affine offset for the induced gain bound |phi(q)| <= r|q| + k."""
        r = self.sector.r
        rmax = float(np.max(np.abs(np.linalg.eigvalsh(r)))) if self.sector.is_matrix \
            else float(r)
        c = self.sector.c
        cmax = float(np.linalg.norm(c, 2)) if self.sector.is_matrix else abs(float(c))
        return self.L + (cmax + rmax) * self.M


@dataclass(frozen=True)
class AsymptoticReport:
    falsified: bool
    n_samples: int
    violations: list = field(default_factory=list)  # (q, p, residual)

    @property
    def ok(self):
        return not self.falsified


def center(spec: SectorSpec, phi: Nonlinearity):
    """Subtract the sector center: psi(t,q) = phi(t,q) - c q (matrix: - C q)."""
    c = spec.c
    if spec.is_matrix:
        C = np.asarray(c, dtype=float)
        psi = Nonlinearity(lambda t, q: phi(t, q) - C @ q, phi.n_q, phi.n_p,
                           tag=f"centered({phi.tag})")
    else:
        cval = float(c)
        psi = Nonlinearity(lambda t, q: phi(t, q) - cval * q, phi.n_q, phi.n_p,
                           tag=f"centered({phi.tag})")
    return psi, spec.c, spec.r


def verify_asymptotic(phi: Nonlinearity, spec: SectorSpec, M: float,
                      L: float | None = None, sample_budget: int = 10000,
                      M_max_factor: float = 100.0, seed: int = 0,
                      componentwise: bool = False) -> AsymptoticReport:
    """Falsification-by-sampling check of an asymptotic sector claim.

    Samples |q| in (M, M_max_factor*M]: a deterministic log grid along random
    directions plus uniform random points.  An empty violation list means
    "not falsified", which is evidence, not proof.
    """
    rng = np.random.default_rng(seed)
    n = phi.n_q
    samples = []
    n_log = max(sample_budget // 10, 50)
    mags = np.geomspace(M * (1 + 1e-6), M * M_max_factor, n_log)
    for mag in mags:
        d = rng.standard_normal(n)
        d /= np.max(np.abs(d))
        samples.append(mag * d)
        if n == 1:
            samples.append(np.array([-mag * abs(d[0])]))
    for _ in range(sample_budget):
        q = rng.uniform(-1, 1, size=n)
        nq = np.max(np.abs(q))
        if nq < 1e-12:
            continue
        mag = np.exp(rng.uniform(np.log(M), np.log(M * M_max_factor)))
        samples.append(q / nq * mag)

    if componentwise and spec.is_matrix:
        raise ValueError("componentwise check needs a scalar sector")
    violations = []
    for q in samples:
        p = phi(0.0, q)
        if componentwise:
            # scalar sector applied per component, only where that component
            # has itself left the threshold
            res = max(((p[i] - float(spec.a) * q[i]) * (p[i] - float(spec.b) * q[i])
                       for i in range(n) if abs(q[i]) > M), default=-np.inf)
        else:
            res = spec.residual(q, p)
        if res > 1e-10 * (1 + np.dot(q, q)):
            violations.append((q.copy(), p.copy(), res))
        if len(violations) >= 20:
            break
    falsified = bool(violations)
    if not falsified and L is not None:
        # spot-check the interior bound |phi| <= L
        for _ in range(min(sample_budget, 2000)):
            q = rng.uniform(-M, M, size=n)
            p = phi(0.0, q)
            if np.max(np.abs(p)) > L * (1 + 1e-9) + 1e-12:
                violations.append((q.copy(), p.copy(), float(np.max(np.abs(p)) - L)))
                falsified = True
                break
    return AsymptoticReport(falsified, len(samples), violations)


# ---------------------------------------------------------------------------
# QP-generated projections
# ---------------------------------------------------------------------------

def qp_projection(H, Lc, b, x, max_iter=100):
    """Solution map of min_v 1/2 v'Hv - v'x subject to Lc v <= b.

    Primal active-set iteration started at v = 0 (feasible since b >= 0).
    Ties in constraint selection are broken by lowest index.
    Returns (v, active_set, lagrange_multipliers).
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Lc = np.atleast_2d(np.asarray(Lc, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    if np.min(np.linalg.eigvalsh((H + H.T) / 2)) <= 0:
        raise ValueError("H must be symmetric positive definite")
    if np.any(b < -1e-12):
        raise ValueError("b >= 0 required so that v = 0 is feasible")
    n, m = H.shape[0], Lc.shape[0]
    v = np.zeros(n)
    W: list[int] = []
    for _ in range(max_iter):
        # equality-constrained subproblem on the working set
        if W:
            LW = Lc[W]
            K = np.block([[H, LW.T], [LW, np.zeros((len(W), len(W)))]])
            rhs = np.concatenate([x, b[W]])
            sol = np.linalg.solve(K, rhs)
            v_eq, lam = sol[:n], sol[n:]
        else:
            v_eq, lam = np.linalg.solve(H, x), np.zeros(0)
        step = v_eq - v
        if np.max(np.abs(step)) < 1e-12:
            if len(lam) == 0 or np.min(lam) >= -1e-10:
                return v_eq, sorted(W), dict(zip(W, lam))
            # lowest-index constraint with a negative multiplier leaves
            drop = min(W[i] for i in range(len(lam)) if lam[i] < -1e-10)
            W.remove(drop)
            continue
        # largest feasible step toward v_eq; ties keep the lowest index
        alpha, block = 1.0, None
        for i in range(m):
            if i in W:
                continue
            li_step = Lc[i] @ step
            if li_step > 1e-12:
                a_i = (b[i] - Lc[i] @ v) / li_step
                if a_i < alpha - 1e-12:
                    alpha, block = max(a_i, 0.0), i
        v = v + alpha * step
        if block is not None:
            W.append(block)
    raise RuntimeError("active-set iteration failed to converge")


def qp_nonlinearity(H, Lc, b, tag="qp") -> Nonlinearity:
    """Wrap the QP solution map as a static Nonlinearity."""
    n = np.atleast_2d(np.asarray(H)).shape[0]
    return Nonlinearity.static(lambda q: qp_projection(H, Lc, b, q)[0], n, n, tag)


def face_projection(I, Lc, b, H, x):
    """Affine piece of the QP solution map for active index set I.

    phi(x) = H^{-1}(x - L_I' (L_I H^{-1} L_I')^{-1} [L_I H^{-1} x - b_I]).
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Lc = np.atleast_2d(np.asarray(Lc, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    Hinv_x = np.linalg.solve(H, x)
    I = sorted(I)
    if not I:
        return Hinv_x
    LI, bI = Lc[I], b[I]
    if np.linalg.matrix_rank(LI) < len(I):
        raise ValueError("active-set rows must be linearly independent")
    Hinv_LIT = np.linalg.solve(H, LI.T)
    G = LI @ Hinv_LIT
    mult = np.linalg.solve(G, LI @ Hinv_x - bI)
    return Hinv_x - Hinv_LIT @ mult


# ---------------------------------------------------------------------------
# Piecewise-affine polytope bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PwaPiece:
    """One affine piece phi|P_i = L x + offset on P_i = Q + C (Motzkin)."""

    Q: Polytope          # bounded part (vertex list)
    C: Polytope          # recession cone, H-representation with zero rhs
    L: np.ndarray
    offset: np.ndarray


@dataclass(frozen=True)
class PolytopeBound:
    """Certified envelope phi(x) in |x|_tri * B_prime + k * B_inf."""

    B_prime: Polytope
    B_box: Polytope
    T: np.ndarray        # gauge matrix of B_box: |y|_box = |T y|_inf
    k: float             # valid constant from direct vertex maximization
    k_formula: float     # the looser additive-decomposition constant


def pwa_polytope_bound(pieces, B_tri: Polytope, S=None) -> PolytopeBound:
    """Polytope bound for a piecewise-affine map.

    For each piece, the image of B_tri intersected with the recession cone is
    collected; their convex hull B_prime and its symmetrization B_box give a
    polyhedral norm |.|_box with |phi(x)|_box <= |x|_tri + k.

    S, when given, is the gauge matrix of B_tri (|x|_tri = |Sx|_inf); otherwise
    the gauge is evaluated from B_tri's halfspaces.
    """
    dim = B_tri.dim
    vertex_sets = [np.zeros((1, dim))]
    for pc in pieces:
        Bi = B_tri.intersect(pc.C)
        Vi = Bi.vertices
        if len(Vi) == 0:
            continue
        img = Vi @ np.asarray(pc.L, dtype=float).T
        vertex_sets.append(hull_vertices(img))
    B_prime = Polytope.from_vertices(np.vstack(vertex_sets))
    B_box = B_prime.symmetrized()
    T = gauge_matrix(B_box)

    def tri_norm(x):
        return float(np.max(np.abs(np.asarray(S) @ x))) if S is not None \
            else B_tri.gauge(x)

    def box_norm(y):
        return float(np.max(np.abs(T @ y)))

    # paper-style additive constants (mixes the infinity and box norms)
    k1 = max(np.max(np.abs(B_prime.vertices)), 0.0)
    k2 = max(float(np.max(np.abs(pc.offset))) if np.asarray(pc.offset).size
             else 0.0 for pc in pieces)
    k3 = max((float(np.max(np.abs(np.asarray(pc.L) @ y)))
              for pc in pieces for y in pc.Q.vertices), default=0.0)
    k4 = max((float(np.max(np.abs(y)))
              for pc in pieces for y in pc.Q.vertices), default=0.0)
    k_formula = k2 + k3 + k1 * k4

    # valid constant: maximize the bounded remainder in the box norm directly
    # over piece offsets, Q-vertices, and B_prime-vertices
    k_direct = 0.0
    Bp_verts = B_prime.vertices
    for pc in pieces:
        Lmat = np.asarray(pc.L, dtype=float)
        off = np.asarray(pc.offset, dtype=float).reshape(-1)
        Qv = pc.Q.vertices if len(pc.Q.vertices) else np.zeros((1, dim))
        for y in Qv:
            base = off + Lmat @ y
            ty = tri_norm(y)
            for bpp in np.vstack([Bp_verts, np.zeros((1, dim))]):
                k_direct = max(k_direct, box_norm(base + ty * bpp))
    return PolytopeBound(B_prime, B_box, T, float(k_direct), float(k_formula))


def example_projection_pieces():
    """Piece data of the bundled planar projection nonlinearity.

    Projection onto {v: v1 - v2 <= 3, v1 + v2 >= 0, v1 >= 0, v2 >= -1},
    decomposed into its three unbounded preimage regions (hand-derived
    active-set analysis; the bounded faces contribute nothing).
    """
    Lc = np.array([[1.0, -1.0], [-1.0, -1.0], [-1.0, 0.0], [0.0, -1.0]])
    b = np.array([3.0, 0.0, 0.0, 1.0])
    pieces = [
        PwaPiece(
            Q=Polytope.from_vertices([[2.0, -1.0]]),
            C=Polytope.from_halfspaces([[-1.0, 1.0], [-1.0, -1.0]], [0.0, 0.0]),
            L=np.array([[0.5, 0.5], [0.5, 0.5]]),
            offset=np.array([1.5, -1.5]),
        ),
        PwaPiece(
            Q=Polytope.from_vertices([[0.0, 0.0]]),
            C=Polytope.from_halfspaces([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0]),
            L=np.array([[0.0, 0.0], [0.0, 1.0]]),
            offset=np.zeros(2),
        ),
        PwaPiece(
            Q=Polytope.from_vertices([[0.0, 0.0], [1.0, -1.0], [2.0, -1.0]]),
            C=Polytope.from_halfspaces(Lc, np.zeros(4)),
            L=np.eye(2),
            offset=np.zeros(2),
        ),
    ]
    return pieces, Lc, b


def gauge_saturation(P: Polytope, x):
    """sat_P(x): identity inside P, radial clip onto the boundary outside."""
    x = np.asarray(x, dtype=float)
    mu = P.gauge(x)
    return x if mu <= 1.0 else x / mu


def convex_combination(weights, n_q, tag="convex-combination") -> Nonlinearity:
    """phi(q) = sum_i mu_i(q) q_i with mu(q) a convex combination.

    weights: q -> nonnegative vector summing to 1.  The output satisfies
    |phi(q)|_1 <= |q|_inf, a polyhedral gain bound.
    """
    def f(q):
        mu = np.asarray(weights(q), dtype=float)
        if np.any(mu < -1e-12) or abs(np.sum(mu) - 1.0) > 1e-9:
            raise ValueError("weights must be a convex combination")
        return np.atleast_1d(mu @ q)
    return Nonlinearity(lambda t, q: f(q), n_q, 1, tag)


# ---------------------------------------------------------------------------
# Attractor nonlinearities
# ---------------------------------------------------------------------------

_ATTRACTOR_DEFAULTS = {
    "two_attractor": {"M": 10.0, "a": 10.0, "k": 10.0, "rho": 0.3,
                      "beta": (2.0, 3.0, 5.0)},
    "chua": {"alpha": 8.3, "beta": 16.5, "rho": 0.25},
    "mimo_scroll": {"a": (0.1, 0.2, 0.3), "rho": (0.1, 0.2, 0.3),
                    "c": (2.0, 3.0, 4.0)},
}


def attractor_nonlinearities(name, **params):
    """Bundled static nonlinearities of the attractor case studies.

    Returns (Phi: Nonlinearity, A: drift matrix, params).  The drift matrices
    match the loop definitions: two_attractor's third-order resonant chain
    from (M, beta), Chua's circuit from (alpha, beta), and the MIMO scroll
    plant's fixed A.
    """
    if name not in _ATTRACTOR_DEFAULTS:
        raise KeyError(f"unknown attractor nonlinearity {name!r}")
    p = dict(_ATTRACTOR_DEFAULTS[name])
    unknown = set(params) - set(p)
    if unknown:
        raise KeyError(f"unknown parameters {sorted(unknown)} for {name!r}")
    p.update(params)

    if name == "two_attractor":
        M, a, k, rho = p["M"], p["a"], p["k"], p["rho"]
        b1, b2, b3 = p["beta"]
        A = np.array([
            [-(b1 + b2 + b3), -(b1 * b2 + b1 * b3 + b2 * b3) / M,
             -b1 * b2 * b3 / M],
            [M, 0.0, 0.0],
            [0.0, 1.0, 0.0],
        ])

        def f(q):
            return np.array([a * np.tanh(k * q[2]) + rho * q[2], 0.0, 0.0])
        Phi = Nonlinearity.static(f, 3, 3, tag="two_attractor")
    elif name == "chua":
        alpha, beta, rho = p["alpha"], p["beta"], p["rho"]
        A = np.array([[-alpha, alpha, 0.0],
                      [1.0, -1.0, 1.0],
                      [0.0, -beta, 0.0]])

        def f(q):
            return np.array([alpha * np.tanh(2.0 * q[0]) + alpha * rho * q[0],
                             0.0, 0.0])
        Phi = Nonlinearity.static(f, 3, 3, tag="chua")
    else:  # mimo_scroll
        a = np.asarray(p["a"], dtype=float)
        rho = np.asarray(p["rho"], dtype=float)
        c = np.asarray(p["c"], dtype=float)
        A = np.array([[-2.0, 8.8, 0.0],
                      [1.0, -1.0, 1.0],
                      [0.0, -15.0, 0.0]])

        def f(q):
            return q * q / (a + q * q) * (np.tanh(c * q) + rho * q)
        Phi = Nonlinearity.static(f, 3, 3, tag="mimo_scroll")
    return Phi, A, p
