"""State-space algebra for finite-dimensional LTI systems.

Dense continuous-time state-space models (A, B, C, D), named input/output
partitions, LFT feedback interconnection and the Redheffer star product.
All operations are pure; systems are small so no sparsity or minimal
realization machinery is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StateSpace",
    "PartitionedPlant",
    "ChannelSelector",
    "channel",
    "feedback_lft",
    "star_product",
    "is_hurwitz",
    "spectral_abscissa",
    "sector_shift",
    "freq_response",
    "LoopError",
]

# Algebraic loops with condition number beyond this are treated as singular.
LOOP_COND_MAX = 1e12


class LoopError(ValueError):
    """Ill-posed feedback loop (singular or near-singular feedthrough)."""


def _mat(x, rows=None, cols=None):
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if rows is not None and cols is not None and a.size == 0:
        a = a.reshape(rows, cols)
    return a


@dataclass(frozen=True)
class StateSpace:
    """Continuous-time LTI system  dx = Ax + Bu,  y = Cx + Du.

    n = 0 (pure static gain D) is allowed; pass A of shape (0, 0).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __init__(self, A, B, C, D=None):
        A = _mat(A)
        if A.size == 0:
            A = A.reshape(0, 0)
        B = _mat(B)
        C = _mat(C)
        if B.size == 0:
            B = B.reshape(A.shape[0], B.shape[1] if B.ndim == 2 else 0)
        if C.size == 0:
            C = C.reshape(C.shape[0] if C.ndim == 2 else 0, A.shape[0])
        if D is None:
            D = np.zeros((C.shape[0], B.shape[1]))
        D = _mat(D)
        if D.size == 0:
            D = D.reshape(C.shape[0], B.shape[1])
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise ValueError(f"C has {C.shape[1]} cols, expected {n}")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError(
                f"D shape {D.shape} inconsistent with C ({C.shape[0]} outputs) "
                f"and B ({B.shape[1]} inputs)")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    # -- dimensions ---------------------------------------------------------
    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]

    # -- constructors -------------------------------------------------------
    @staticmethod
    def static(D):
        D = _mat(D)
        return StateSpace(np.zeros((0, 0)), np.zeros((0, D.shape[1])),
                          np.zeros((D.shape[0], 0)), D)

    @staticmethod
    def identity(k):
        return StateSpace.static(np.eye(k))

    # -- algebra ------------------------------------------------------------
    def series(self, other):
        """other applied after self: returns other * self (u -> self -> other -> y)."""
        G, H = self, other
        if H.n_inputs != G.n_outputs:
            raise ValueError("series: dimension mismatch")
        n1, n2 = G.n_states, H.n_states
        A = np.block([
            [G.A, np.zeros((n1, n2))],
            [H.B @ G.C, H.A],
        ])
        B = np.vstack([G.B, H.B @ G.D])
        C = np.hstack([H.D @ G.C, H.C])
        D = H.D @ G.D
        return StateSpace(A, B, C, D)

    def parallel(self, other):
        """Sum of outputs: self + other on a shared input."""
        G, H = self, other
        if (G.n_inputs, G.n_outputs) != (H.n_inputs, H.n_outputs):
            raise ValueError("parallel: dimension mismatch")
        n1, n2 = G.n_states, H.n_states
        A = np.block([
            [G.A, np.zeros((n1, n2))],
            [np.zeros((n2, n1)), H.A],
        ])
        B = np.vstack([G.B, H.B])
        C = np.hstack([G.C, H.C])
        return StateSpace(A, B, C, G.D + H.D)

    def __add__(self, other):
        if isinstance(other, StateSpace):
            return self.parallel(other)
        return NotImplemented

    def __neg__(self):
        return StateSpace(self.A, self.B, -self.C, -self.D)

    def scaled(self, alpha):
        return StateSpace(self.A, self.B, alpha * self.C, alpha * self.D)

    def pre_gain(self, M):
        """Right-multiply by a static matrix: G * M (input transformation)."""
        M = _mat(M)
        return StateSpace(self.A, self.B @ M, self.C, self.D @ M)

    def post_gain(self, M):
        """Left-multiply by a static matrix: M * G (output transformation)."""
        M = _mat(M)
        return StateSpace(self.A, self.B, M @ self.C, M @ self.D)

    def inverse(self):
        """Inverse system; requires square invertible feedthrough D."""
        D = self.D
        if D.shape[0] != D.shape[1]:
            raise ValueError("inverse: system must be square")
        if D.size and np.linalg.cond(D) > LOOP_COND_MAX:
            raise LoopError("inverse: feedthrough D is (near-)singular")
        Di = np.linalg.inv(D) if D.size else D
        A = self.A - self.B @ Di @ self.C
        return StateSpace(A, self.B @ Di, -Di @ self.C, Di)

    def blkdiag(self, other):
        """Diagonal (append) composition: inputs and outputs stacked."""
        G, H = self, other
        n1, n2 = G.n_states, H.n_states
        A = np.block([
            [G.A, np.zeros((n1, n2))],
            [np.zeros((n2, n1)), H.A],
        ])
        B = np.block([
            [G.B, np.zeros((n1, H.n_inputs))],
            [np.zeros((n2, G.n_inputs)), H.B],
        ])
        C = np.block([
            [G.C, np.zeros((G.n_outputs, n2))],
            [np.zeros((H.n_outputs, n1)), H.C],
        ])
        D = np.block([
            [G.D, np.zeros((G.n_outputs, H.n_inputs))],
            [np.zeros((H.n_outputs, G.n_inputs)), H.D],
        ])
        return StateSpace(A, B, C, D)

    # -- serialization ------------------------------------------------------
    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
        }

    @staticmethod
    def from_dict(d):
        A = np.array(d["A"], dtype=float) if d["A"] else np.zeros((0, 0))
        A = A.reshape(len(d["A"]), -1) if d["A"] else A
        D = np.atleast_2d(np.asarray(d["D"], dtype=float)) if d.get("D") is not None else None
        n = A.shape[0]
        if n == 0 and D is not None:
            B = np.zeros((0, D.shape[1]))
            C = np.zeros((D.shape[0], 0))
            return StateSpace(A, B, C, D)
        return StateSpace(A, d["B"], d["C"], D)


def _group_slices(groups, total, axis_name):
    """groups: ordered list of (name, size). Returns dict name -> slice."""
    out = {}
    start = 0
    for name, size in groups:
        if name in out:
            raise ValueError(f"duplicate {axis_name} group name {name!r}")
        if size < 0:
            raise ValueError(f"negative group size for {name!r}")
        out[name] = slice(start, start + size)
        start += size
    if start != total:
        raise ValueError(
            f"{axis_name} groups cover {start} indices, system has {total}")
    return out


@dataclass(frozen=True)
class PartitionedPlant:
    """StateSpace with named, ordered input and output groups.

    Groups are given as ordered (name, size) pairs that partition the input
    and output index sets exactly.
    """

    sys: StateSpace
    input_groups: tuple
    output_groups: tuple
    _in_slices: dict = field(default=None, repr=False, compare=False)
    _out_slices: dict = field(default=None, repr=False, compare=False)

    def __init__(self, sys, input_groups, output_groups):
        input_groups = tuple((str(n), int(s)) for n, s in input_groups)
        output_groups = tuple((str(n), int(s)) for n, s in output_groups)
        ins = _group_slices(input_groups, sys.n_inputs, "input")
        outs = _group_slices(output_groups, sys.n_outputs, "output")
        object.__setattr__(self, "sys", sys)
        object.__setattr__(self, "input_groups", input_groups)
        object.__setattr__(self, "output_groups", output_groups)
        object.__setattr__(self, "_in_slices", ins)
        object.__setattr__(self, "_out_slices", outs)

    def input_slice(self, name):
        try:
            return self._in_slices[name]
        except KeyError:
            raise KeyError(f"unknown input group {name!r}; "
                           f"have {[n for n, _ in self.input_groups]}") from None

    def output_slice(self, name):
        try:
            return self._out_slices[name]
        except KeyError:
            raise KeyError(f"unknown output group {name!r}; "
                           f"have {[n for n, _ in self.output_groups]}") from None

    def input_size(self, name):
        s = self.input_slice(name)
        return s.stop - s.start

    def output_size(self, name):
        s = self.output_slice(name)
        return s.stop - s.start

    def B_of(self, name):
        return self.sys.B[:, self.input_slice(name)]

    def C_of(self, name):
        return self.sys.C[self.output_slice(name), :]

    def D_of(self, out_name, in_name):
        return self.sys.D[self.output_slice(out_name), self.input_slice(in_name)]


@dataclass(frozen=True)
class ChannelSelector:
    """Names a transfer channel of a partitioned plant: from input group to output group."""

    from_group: str
    to_group: str


def channel(plant: PartitionedPlant, sel: ChannelSelector) -> StateSpace:
    """Extract the LTI sub-system of one named channel."""
    si = plant.input_slice(sel.from_group)
    so = plant.output_slice(sel.to_group)
    s = plant.sys
    return StateSpace(s.A, s.B[:, si], s.C[so, :], s.D[so, si])


def feedback_lft(plant: PartitionedPlant, K: StateSpace,
                 u_group: str = "u", y_group: str = "y") -> PartitionedPlant:
    """Close the lower LFT loop u = K y; returns the plant over remaining groups."""
    su = plant.input_slice(u_group)
    sy = plant.output_slice(y_group)
    if K.n_inputs != sy.stop - sy.start or K.n_outputs != su.stop - su.start:
        raise ValueError(
            f"controller dims {K.n_outputs}x{K.n_inputs} do not match "
            f"({u_group} <- {y_group}) = "
            f"{su.stop - su.start}x{sy.stop - sy.start}")
    s = plant.sys
    rin = [i for i in range(s.n_inputs) if not (su.start <= i < su.stop)]
    rout = [i for i in range(s.n_outputs) if not (sy.start <= i < sy.stop)]

    A, Bu, Cy = s.A, s.B[:, su], s.C[sy, :]
    Br, Cr = s.B[:, rin], s.C[rout, :]
    Dyu = s.D[sy, su]
    Dyr = s.D[sy, :][:, rin]
    Dru = s.D[rout, :][:, su]
    Drr = s.D[rout, :][:, rin]

    ny = Cy.shape[0]
    loop = np.eye(ny) - Dyu @ K.D
    if ny and np.linalg.cond(loop) > LOOP_COND_MAX:
        raise LoopError("singular algebraic loop I - D_yu D_K")
    Lam = np.linalg.inv(loop) if ny else loop

    # y = Lam (Cy x + Dyu C_K xK + Dyr w);  u = C_K xK + D_K y
    n, nK = s.n_states, K.n_states
    Acl = np.block([
        [A + Bu @ K.D @ Lam @ Cy, Bu @ (K.C + K.D @ Lam @ Dyu @ K.C)],
        [K.B @ Lam @ Cy, K.A + K.B @ Lam @ Dyu @ K.C],
    ])
    Bcl = np.vstack([
        Br + Bu @ K.D @ Lam @ Dyr,
        K.B @ Lam @ Dyr,
    ])
    Ccl = np.hstack([
        Cr + Dru @ K.D @ Lam @ Cy,
        Dru @ (K.C + K.D @ Lam @ Dyu @ K.C),
    ])
    Dcl = Drr + Dru @ K.D @ Lam @ Dyr
    sys = StateSpace(Acl, Bcl, Ccl, Dcl)
    in_groups = [(nm, sz) for nm, sz in plant.input_groups if nm != u_group]
    out_groups = [(nm, sz) for nm, sz in plant.output_groups if nm != y_group]
    return PartitionedPlant(sys, in_groups, out_groups)


def star_product(M: PartitionedPlant, N: PartitionedPlant) -> PartitionedPlant:
    """Redheffer star product M * N.

    M maps (w1, v1) -> (z1, a); N maps (b, w2) -> (c, z2).  The inner loop
    identifies b = a (M's second output feeds N's first input) and v1 = c
    (N's first output feeds M's second input).  Both plants must have exactly
    two input groups and two output groups.
    """
    if len(M.input_groups) != 2 or len(M.output_groups) != 2 \
            or len(N.input_groups) != 2 or len(N.output_groups) != 2:
        raise ValueError("star_product requires 2x2 block partitions")
    (mw, _), (mu, _) = M.input_groups
    (mz, _), (my, _) = M.output_groups
    (nu, _), (nw, _) = N.input_groups
    (ny, _), (nz, _) = N.output_groups

    B1w, B1u = M.B_of(mw), M.B_of(mu)
    C1z, C1y = M.C_of(mz), M.C_of(my)
    D1zw, D1zu = M.D_of(mz, mw), M.D_of(mz, mu)
    D1yw, D1yu = M.D_of(my, mw), M.D_of(my, mu)

    B2u, B2w = N.B_of(nu), N.B_of(nw)
    C2y, C2z = N.C_of(ny), N.C_of(nz)
    D2yu, D2yw = N.D_of(ny, nu), N.D_of(ny, nw)
    D2zu, D2zw = N.D_of(nz, nu), N.D_of(nz, nw)

    if D1yu.shape[0] != D2yu.shape[1] or D2yu.shape[0] != D1yu.shape[1]:
        raise ValueError("star_product: inner channel dimensions incompatible")

    # Inner signals a (from M) and b (from N):
    #   a = C1y x1 + D1yw w1 + D1yu b
    #   b = C2y x2 + D2yu a + D2yw w2
    ka = D1yu.shape[0]
    loop = np.eye(ka) - D1yu @ D2yu
    if ka and np.linalg.cond(loop) > LOOP_COND_MAX:
        raise LoopError("star_product: ill-posed inner loop")
    La = np.linalg.inv(loop) if ka else loop
    kb = D2yu.shape[0]
    loop_b = np.eye(kb) - D2yu @ D1yu
    Lb = np.linalg.inv(loop_b) if kb else loop_b

    n1, n2 = M.sys.n_states, N.sys.n_states
    # a = La (C1y x1 + D1yw w1 + D1yu C2y x2 + D1yu D2yw w2)
    a_x1, a_x2 = La @ C1y, La @ D1yu @ C2y
    a_w1, a_w2 = La @ D1yw, La @ D1yu @ D2yw
    # b = Lb (C2y x2 + D2yw w2 + D2yu C1y x1 + D2yu D1yw w1)
    b_x1, b_x2 = Lb @ D2yu @ C1y, Lb @ C2y
    b_w1, b_w2 = Lb @ D2yu @ D1yw, Lb @ D2yw

    A = np.block([
        [M.sys.A + B1u @ b_x1, B1u @ b_x2],
        [B2u @ a_x1, N.sys.A + B2u @ a_x2],
    ])
    B = np.block([
        [B1w + B1u @ b_w1, B1u @ b_w2],
        [B2u @ a_w1, B2w + B2u @ a_w2],
    ])
    C = np.block([
        [C1z + D1zu @ b_x1, D1zu @ b_x2],
        [D2zu @ a_x1, C2z + D2zu @ a_x2],
    ])
    D = np.block([
        [D1zw + D1zu @ b_w1, D1zu @ b_w2],
        [D2zu @ a_w1, D2zw + D2zu @ a_w2],
    ])
    sys = StateSpace(A, B, C, D)
    in_groups = [M.input_groups[0], N.input_groups[1]]
    out_groups = [M.output_groups[0], N.output_groups[1]]
    return PartitionedPlant(sys, in_groups, out_groups)


def two_port(sys: StateSpace, k1_in, k1_out,
             names=("w", "u", "z", "y")) -> PartitionedPlant:
    """Wrap a system as a 2x2-partitioned plant with the first k1 channels outer."""
    w, u, z, y = names
    return PartitionedPlant(
        sys,
        [(w, k1_in), (u, sys.n_inputs - k1_in)],
        [(z, k1_out), (y, sys.n_outputs - k1_out)],
    )


def spectral_abscissa(A) -> float:
    A = _mat(A)
    if A.size == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(A).real))


def is_hurwitz(A) -> tuple[bool, float]:
    """Returns (all eigenvalues in open left half-plane, spectral abscissa)."""
    sa = spectral_abscissa(A)
    return bool(sa < 0.0), sa


def sector_shift(plant: PartitionedPlant, c, p_group: str = "p",
                 q_group: str = "q") -> PartitionedPlant:
    """Absorb the sector center into the A matrix: A -> A + B_p Gamma C_q.

    c may be a scalar (Gamma = c I) or a square matrix of the p/q dimension.
    """
    Bp = plant.B_of(p_group)
    Cq = plant.C_of(q_group)
    npdim, nq = Bp.shape[1], Cq.shape[0]
    if np.isscalar(c):
        if npdim != nq:
            raise ValueError("scalar sector shift requires dim p == dim q")
        Gamma = float(c) * np.eye(npdim)
    else:
        Gamma = _mat(c)
        if Gamma.shape != (npdim, nq):
            raise ValueError(
                f"Gamma shape {Gamma.shape} does not match p x q = {(npdim, nq)}")
    s = plant.sys
    sys = StateSpace(s.A + Bp @ Gamma @ Cq, s.B, s.C, s.D)
    return PartitionedPlant(sys, plant.input_groups, plant.output_groups)


def freq_response(G: StateSpace, omega: float) -> np.ndarray:
    """Transfer matrix value G(j omega) = C (j omega I - A)^-1 B + D."""
    n = G.n_states
    if n == 0:
        return G.D.astype(complex)
    M = 1j * omega * np.eye(n) - G.A
    if np.linalg.cond(M) > LOOP_COND_MAX:
        raise LoopError(f"resonance: j*{omega} is (numerically) an eigenvalue of A")
    return G.C @ np.linalg.solve(M, G.B) + G.D
