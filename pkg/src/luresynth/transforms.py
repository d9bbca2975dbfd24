"""Loop transformations for Lur'e interconnections.

Covers the factor-based augmentation G_a = Psi [-I, 2G; 0, I] Psi^{-1} and its
Moebius image G_e, the lower/upper triangular transforms built from a
factorization with P = [I, 0; 0, -I], and polyhedral changes of coordinates
(A, B T+, S C, S D T+) together with the matching nonlinearity compositions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ltisys import StateSpace, is_hurwitz
from .nonlin import Nonlinearity

__all__ = [
    "BistabilityError",
    "FactorizedMultiplier",
    "TriangularFactor",
    "PolyhedralChange",
    "check_bistable",
    "augment_Ga",
    "mobius_Ge",
    "triangular_lower",
    "triangular_upper",
    "polyhedral_transform",
    "transform_nonlinearity",
    "SimulatorComposition",
]


class BistabilityError(ValueError):
    """Factor is not stable together with its inverse."""


def check_bistable(sys: StateSpace, what="factor"):
    """Raise unless sys is stable, square, invertible, with a stable inverse."""
    if sys.n_inputs != sys.n_outputs:
        raise BistabilityError(f"{what}: must be square")
    if sys.n_states:
        ok, sa = is_hurwitz(sys.A)
        if not ok:
            raise BistabilityError(f"{what}: A not Hurwitz (abscissa {sa:.4g})")
    D = sys.D
    if D.size == 0:
        raise BistabilityError(f"{what}: empty feedthrough")
    if np.linalg.cond(D) > 1e12:
        raise BistabilityError(f"{what}: feedthrough not invertible")
    if sys.n_states:
        Ainv = sys.A - sys.B @ np.linalg.inv(D) @ sys.C
        ok, sa = is_hurwitz(Ainv)
        if not ok:
            raise BistabilityError(
                f"{what}: inverse realization not Hurwitz (abscissa {sa:.4g})")


@dataclass(frozen=True)
class FactorizedMultiplier:
    """Frequency-domain multiplier factorization Pi = Psi* P Psi.

    Psi must be bistable (stable with a stable inverse); P symmetric and
    invertible.  The factorization itself is supplied by the caller.
    """

    Psi: StateSpace
    P: np.ndarray

    def __post_init__(self):
        check_bistable(self.Psi, "Psi")
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if P.shape[0] != P.shape[1] or not np.allclose(P, P.T):
            raise ValueError("P must be square symmetric")
        if np.linalg.cond(P) > 1e12:
            raise ValueError("P must be invertible")
        object.__setattr__(self, "P", P)


@dataclass(frozen=True)
class TriangularFactor:
    """Triangular factorization blocks with P fixed to [I, 0; 0, -I].

    kind "lower" uses (Psi11, Psi21, Psi22); kind "upper" (Psi11, Psi12,
    Psi22).  Diagonal blocks must be bistable, the off-diagonal block stable.
    """

    Psi11: StateSpace
    Psi22: StateSpace
    Psi21: StateSpace | None = None
    Psi12: StateSpace | None = None
    kind: str = "lower"

    def __post_init__(self):
        if self.kind not in ("lower", "upper"):
            raise ValueError("kind must be 'lower' or 'upper'")
        off = self.Psi21 if self.kind == "lower" else self.Psi12
        if off is None:
            raise ValueError(f"{self.kind} factor needs its off-diagonal block")
        check_bistable(self.Psi11, "Psi11")
        check_bistable(self.Psi22, "Psi22")
        if off.n_states:
            ok, sa = is_hurwitz(off.A)
            if not ok:
                raise BistabilityError(
                    f"off-diagonal block not stable (abscissa {sa:.4g})")


@dataclass(frozen=True)
class PolyhedralChange:
    """Coordinate change induced by polyhedral norms |Tp|_inf and |Sq|_inf.

    T and S must be injective; their left inverses are computed once by
    normal-equations least squares and cached.
    """

    T: np.ndarray
    S: np.ndarray
    T_pinv: np.ndarray = field(init=False, repr=False)
    S_pinv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.T, dtype=float))
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        for M, nm in ((T, "T"), (S, "S")):
            if np.linalg.matrix_rank(M) < M.shape[1]:
                raise ValueError(f"{nm} must have full column rank")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "T_pinv", np.linalg.solve(T.T @ T, T.T))
        object.__setattr__(self, "S_pinv", np.linalg.solve(S.T @ S, S.T))


def augment_Ga(G: StateSpace, F: FactorizedMultiplier) -> StateSpace:
    """Augmented interconnection G_a = Psi [-I, 2G; 0, I] Psi^{-1}."""
    m, p = G.n_outputs, G.n_inputs
    if F.Psi.n_inputs != m + p:
        raise ValueError("Psi dimension must match the stacked (q, p) signals")
    # middle block system [-I, 2G; 0, I] on inputs (u1, u2)
    M = StateSpace(
        G.A,
        np.hstack([np.zeros((G.n_states, m)), 2.0 * G.B]),
        np.vstack([G.C, np.zeros((p, G.n_states))]),
        np.block([[-np.eye(m), 2.0 * G.D],
                  [np.zeros((p, m)), np.eye(p)]]),
    )
    return F.Psi.inverse().series(M).series(F.Psi)


def mobius_Ge(Ga: StateSpace, P) -> StateSpace:
    """Moebius image G_e = (G_a P^{-1} - I)^{-1} (G_a P^{-1} + I).

    Realized through (H - I)^{-1}(H + I) = I + 2 (H - I)^{-1} with
    H = G_a P^{-1}; requires the loop feedthrough H.D - I to be invertible.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    H = Ga.pre_gain(np.linalg.inv(P))
    if H.n_inputs != H.n_outputs:
        raise ValueError("Moebius transform needs a square system")
    k = H.n_inputs
    Dm = H.D - np.eye(k)
    if np.linalg.cond(Dm) > 1e12:
        raise ValueError("Moebius transform ill-posed: H.D - I singular")
    Dmi = np.linalg.inv(Dm)
    if H.n_states == 0:
        return StateSpace.static(np.eye(k) + 2.0 * Dmi)
    return StateSpace(H.A - H.B @ Dmi @ H.C, H.B @ Dmi,
                      -2.0 * Dmi @ H.C, np.eye(k) + 2.0 * Dmi)


def triangular_lower(G: StateSpace, F: TriangularFactor) -> StateSpace:
    """G_tilde = Psi11 G (Psi22 + Psi21 G)^{-1}."""
    if F.kind != "lower":
        raise ValueError("lower transform needs a lower factor")
    inner = F.Psi22.parallel(G.series(F.Psi21))
    return inner.inverse().series(G).series(F.Psi11)


def triangular_upper(G: StateSpace, F: TriangularFactor) -> StateSpace:
    """G_tilde = (Psi11 G + Psi12) Psi22^{-1}."""
    if F.kind != "upper":
        raise ValueError("upper transform needs an upper factor")
    outer = G.series(F.Psi11).parallel(F.Psi12)
    return F.Psi22.inverse().series(outer)


def polyhedral_transform(G: StateSpace, X: PolyhedralChange) -> StateSpace:
    """Rescaled loop (A, B T+, S C, S D T+) for the norms |Tp|, |Sq|."""
    if X.T.shape[1] != G.n_inputs:
        raise ValueError("T column count must match the p-input dimension")
    if X.S.shape[1] != G.n_outputs:
        raise ValueError("S column count must match the q-output dimension")
    return G.pre_gain(X.T_pinv).post_gain(X.S)


@dataclass(frozen=True)
class SimulatorComposition:
    """Deferred nonlinearity composition with dynamic factor blocks.

    Dynamic-factor compositions have no closed form; this records the pieces
    for state-augmented evaluation inside the simulator.  Experimental: only
    the static path is exercised by the bundled studies.
    """

    delta: Nonlinearity
    pre: StateSpace   # applied to the input signal before delta
    post: StateSpace  # applied to delta's output
    offset: StateSpace | None = None


def transform_nonlinearity(delta: Nonlinearity, X) -> Nonlinearity:
    """Composition matching the loop transform.

    PolyhedralChange: returns the static map T o delta o S+ exactly.
    TriangularFactor with static blocks: Psi21 Psi11^{-1} + Psi22 o delta o
    Psi11^{-1}.  Dynamic triangular blocks yield a SimulatorComposition.
    """
    if isinstance(X, PolyhedralChange):
        T, Sp = X.T, X.S_pinv
        return Nonlinearity(
            lambda t, q: T @ delta(t, Sp @ q),
            n_q=X.S.shape[0], n_p=X.T.shape[0],
            tag=f"polyhedral({delta.tag})")
    if isinstance(X, TriangularFactor):
        if X.kind != "lower":
            raise ValueError("nonlinearity composition implemented for lower factors")
        blocks = [X.Psi11, X.Psi21, X.Psi22]
        if any(b.n_states for b in blocks):
            return SimulatorComposition(delta, pre=X.Psi11.inverse(),
                                        post=X.Psi22, offset=X.Psi21)
        P11i = np.linalg.inv(X.Psi11.D)
        P21, P22 = X.Psi21.D, X.Psi22.D
        return Nonlinearity(
            lambda t, q: P21 @ (P11i @ q) + P22 @ delta(t, P11i @ q),
            n_q=X.Psi11.n_outputs, n_p=X.Psi22.n_outputs,
            tag=f"triangular({delta.tag})")
    raise TypeError(f"unsupported transform {type(X).__name__}")
