"""Random matrix construction, rotations and exact determinant identities.

Gaussian draws come from :class:`SeededRng`, a counter-based Philox stream
keyed by ``mix64(master_seed ^ stream_id)`` and turned into normals by the
Box-Muller transform. The GOE is normalised so that ``E J_ij^2 = 1`` off the
diagonal and ``E J_ii^2 = 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DomainError, IdentityViolation, InvalidInputError, PreconditionError
from .tap import TapPoint, k_matrix

MASK64 = (1 << 64) - 1


def mix64(z: int) -> int:
    """SplitMix64 finaliser."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SeededRng:
    """Reproducible Gaussian stream identified by ``(master_seed, stream_id)``.

    Two instances with the same identifiers produce the same sequence of
    draws. Instances are not shared between threads; create one per stream.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        self.master_seed = int(master_seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        self.stream_seed = mix64(self.master_seed ^ self.stream_id)
        self._gen = np.random.Generator(np.random.Philox(self.stream_seed))
        self.draws = 0

    def __repr__(self):
        return f"SeededRng(master_seed={self.master_seed:#x}, stream_id={self.stream_id})"

    def uniform(self, size) -> np.ndarray:
        self.draws += int(np.prod(size))
        return self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        """Standard normals by Box-Muller on pairs of uniforms."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        k = (n + 1) // 2
        u1 = 1.0 - self.uniform(k)  # in (0, 1]
        u2 = self.uniform(k)
        r = np.sqrt(-2.0 * np.log(u1))
        t = 2.0 * np.pi * u2
        z = np.empty(2 * k)
        z[0::2] = r * np.cos(t)
        z[1::2] = r * np.sin(t)
        return z[:n].reshape(shape)


def sample_goe(n: int, rng: SeededRng) -> np.ndarray:
    """GOE matrix ``(A + A^T)/sqrt(2)`` with i.i.d. standard normal ``A``."""
    if n < 1:
        raise InvalidInputError("GOE dimension must be at least 1")
    a = rng.normal((n, n))
    return (a + a.T) / math.sqrt(2.0)


def _orthonormal_columns(vectors) -> np.ndarray:
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    q, r = np.linalg.qr(v.T)
    d = np.abs(np.diag(r))
    if d.size == 0 or d.min() <= 1e-10 * max(d.max(), 1e-300):
        raise InvalidInputError("projector vectors must be linearly independent")
    return q


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    """Recipe ``s J / sqrt(n) + diag(diag_part) + lowrank_part``, optionally
    conjugated by the projector onto the complement of ``projector_vectors``."""

    n: int
    goe_scale: float
    diag_part: np.ndarray
    lowrank_part: np.ndarray | None = None
    lowrank_rank: int | None = None
    projector_vectors: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 2:
            raise InvalidInputError("ensemble dimension must be at least 2")
        if not (math.isfinite(self.goe_scale) and self.goe_scale >= 0):
            raise InvalidInputError("goe_scale must be non-negative")
        d = np.asarray(self.diag_part, dtype=float).ravel()
        if d.size != self.n:
            raise InvalidInputError(f"diag_part has length {d.size}, expected {self.n}")
        object.__setattr__(self, "diag_part", d)
        if self.lowrank_part is not None:
            a = np.asarray(self.lowrank_part, dtype=float)
            if a.shape != (self.n, self.n):
                raise InvalidInputError("lowrank_part has the wrong shape")
            if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
                raise InvalidInputError("lowrank_part must be symmetric")
            sv = np.linalg.svd(a, compute_uv=False)
            rank = int(np.sum(sv > 1e-9 * max(sv[0], 1e-300))) if sv[0] > 0 else 0
            if self.lowrank_rank is None:
                object.__setattr__(self, "lowrank_rank", rank)
            elif rank != self.lowrank_rank:
                raise InvalidInputError(
                    f"declared rank {self.lowrank_rank} but numerical rank is {rank}")
            object.__setattr__(self, "lowrank_part", a)
        if self.projector_vectors is not None:
            q = _orthonormal_columns(self.projector_vectors)
            if q.shape[0] != self.n:
                raise InvalidInputError("projector vectors have the wrong length")
            object.__setattr__(self, "projector_vectors", np.atleast_2d(
                np.asarray(self.projector_vectors, dtype=float)))

    def deterministic_part(self) -> np.ndarray:
        m = np.diag(self.diag_part)
        if self.lowrank_part is not None:
            m = m + self.lowrank_part
        return m


def _project_out(M: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``P M P`` with ``P = I - q q^T`` for orthonormal columns ``q``."""
    Mq = M @ q
    qMq = q.T @ Mq
    out = M - Mq @ q.T - q @ Mq.T + q @ qMq @ q.T
    return 0.5 * (out + out.T)


def build_matrix(spec: EnsembleSpec, rng: SeededRng) -> np.ndarray:
    m = spec.deterministic_part()
    if spec.goe_scale > 0:
        m = m + spec.goe_scale * sample_goe(spec.n, rng) / math.sqrt(spec.n)
    if spec.projector_vectors is not None:
        m = _project_out(m, _orthonormal_columns(spec.projector_vectors))
    return m


def default_goe_scale(beta: float) -> float:
    """``sqrt(2) beta``: the ESD of ``s J / sqrt(N)`` then has variance ``2 beta^2``."""
    return math.sqrt(2.0) * beta


def _check_action(H: np.ndarray, p: TapPoint):
    r = float(np.linalg.norm(H @ p.m - p.v))
    scale = 1e-10 * p.norm_v + 1e-12 * float(np.linalg.norm(H, 2)) * p.norm_m
    if r > scale:
        raise IdentityViolation(f"H m - v has norm {r:.3e} (allowed {scale:.3e})")


def conditional_hessian(p: TapPoint, rng: SeededRng, goe_scale: float | None = None,
                        check: bool = True) -> np.ndarray:
    """Sample ``P Z P + K(m)`` with ``Z = s J / sqrt(N) - diag(D)``.

    Parameters
    ----------
    goe_scale : float, optional
        ``s``; defaults to :func:`default_goe_scale`.
    check : bool
        Verify ``H m = v`` before returning (raises ``IdentityViolation``).
    """
    s = default_goe_scale(p.beta) if goe_scale is None else goe_scale
    n = p.n
    Z = -np.diag(p.D_diag)
    if s > 0:
        Z = Z + s * sample_goe(n, rng) / math.sqrt(n)
    mhat = (p.m / p.norm_m)[:, None]
    H = _project_out(Z, mhat) + k_matrix(p)
    if check:
        _check_action(H, p)
    return H


def rotation_to_e1(m) -> np.ndarray:
    """Orthogonal ``O`` with ``O m = |m| e_1``.

    A Householder reflection with the cancellation-free sign, followed by a
    sign flip of the first row; ``m`` on the positive ``e_1`` axis gives ``I``.
    """
    m = np.asarray(m, dtype=float).ravel()
    nm = float(np.linalg.norm(m))
    if not nm > 0:
        raise DomainError("cannot rotate the zero vector")
    n = m.size
    if m[0] > 0 and not np.any(m[1:]):
        return np.eye(n)
    sgn = 1.0 if m[0] >= 0 else -1.0
    u = m.copy()
    u[0] += sgn * nm
    O = np.eye(n) - (2.0 / float(u @ u)) * np.outer(u, u)
    # the reflection sends m to -sgn |m| e1; flip the first row when needed
    if sgn > 0:
        O[0] = -O[0]
    return O


def rotation_to_e1e2(m, x) -> np.ndarray:
    """Orthogonal ``O`` with ``O m = |m| e_1`` and ``O x = |x| e_2``."""
    m = np.asarray(m, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    nm, nx = float(np.linalg.norm(m)), float(np.linalg.norm(x))
    if not (nm > 0 and nx > 0):
        raise DomainError("m and x must both be non-zero")
    if abs(float(m @ x)) > 1e-8 * nm * nx:
        raise DomainError("m and x must be orthogonal")
    O1 = rotation_to_e1(m)
    y = O1 @ x
    O2 = np.eye(m.size)
    O2[1:, 1:] = rotation_to_e1(y[1:])
    return O2 @ O1


def _rotation_for(p: TapPoint) -> np.ndarray:
    if p.norm_x > 0:
        return rotation_to_e1e2(p.m, p.x)
    return rotation_to_e1(p.m)


def rotated_diagonal(p: TapPoint, rotation: np.ndarray | None = None) -> np.ndarray:
    """``O D O^T`` for the rotation used by the reduced matrices."""
    O = _rotation_for(p) if rotation is None else rotation
    R = (O * p.D_diag) @ O.T
    return 0.5 * (R + R.T)


def build_z_parallel(p: TapPoint, rng: SeededRng, goe_scale: float | None = None,
                     rotated_d: np.ndarray | None = None) -> np.ndarray:
    """``(N-1)``-dimensional ``s J' / sqrt(N) - (O D O^T)^{(1,1)}``.

    ``O`` maps ``m`` to ``|m| e_1`` and, when ``x != 0``, ``x`` to ``|x| e_2``,
    so that the (1,1) minor of this matrix has the law of ``Z_perp``.
    """
    s = default_goe_scale(p.beta) if goe_scale is None else goe_scale
    R = rotated_diagonal(p) if rotated_d is None else rotated_d
    n = p.n
    Z = -R[1:, 1:]
    if s > 0:
        Z = Z + s * sample_goe(n - 1, rng) / math.sqrt(n)
    return Z


def build_z_perp(p: TapPoint, rng: SeededRng, goe_scale: float | None = None,
                 rotated_d: np.ndarray | None = None) -> np.ndarray:
    """``(N-2)``-dimensional ``s J'' / sqrt(N) - (O_mx D O_mx^T)^{([2],[2])}``."""
    if not p.norm_x > 0:
        raise DomainError("x = 0: Z_perp is undefined when v is parallel to m")
    s = default_goe_scale(p.beta) if goe_scale is None else goe_scale
    R = rotated_diagonal(p) if rotated_d is None else rotated_d
    n = p.n
    Z = -R[2:, 2:]
    if s > 0:
        Z = Z + s * sample_goe(n - 2, rng) / math.sqrt(n)
    return Z


def logabsdet(M: np.ndarray) -> float:
    """``log |det M|`` from the symmetric eigenvalues.

    Returns ``-inf`` when the smallest ``|eigenvalue|`` is below
    ``n * eps * max |eigenvalue|`` (singular to working precision).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError("logabsdet needs a square matrix")
    if M.shape[0] == 0:
        return 0.0
    lam = np.abs(np.linalg.eigvalsh(M))
    top = float(lam.max())
    if top == 0 or float(lam.min()) <= M.shape[0] * np.finfo(float).eps * top:
        return -math.inf
    return float(np.sum(np.log(lam)))


def signed_logdet(M: np.ndarray) -> tuple[float, float]:
    """``(sign, log|det|)`` by LU, with ``(0, -inf)`` for exact singularity."""
    if M.shape[0] == 0:
        return 1.0, 0.0
    sign, ld = np.linalg.slogdet(M)
    return float(sign), float(ld)


def exact_det(M: np.ndarray) -> Fraction:
    """Exact determinant of a float matrix (every double is a dyadic rational).

    Entries are scaled to integers by a common power of two and the
    fraction-free Bareiss elimination is run in Python integers.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 0:
        return Fraction(1)
    fr = [[Fraction(float(v)) for v in row] for row in M]
    denom = 1
    for row in fr:
        for v in row:
            denom = max(denom, v.denominator)
    a = [[int(v * denom) for v in row] for row in fr]
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if swap is None:
                return Fraction(0)
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return Fraction(sign * a[n - 1][n - 1], denom**n)


def y_matrix(p: TapPoint, z_par: np.ndarray) -> np.ndarray:
    """Bordered matrix with corner ``(m,v)/|m|^2``, border ``|x|/|m|`` on the
    second coordinate and lower block ``z_par``."""
    if p.cls == "zero_v":
        raise DomainError("the Y matrix is not defined for v = 0")
    n = p.n
    if z_par.shape != (n - 1, n - 1):
        raise InvalidInputError(f"z_par must be {(n - 1)}x{(n - 1)}")
    Y = np.zeros((n, n))
    Y[0, 0] = p.mv / p.norm_m**2
    if n > 1:
        Y[0, 1] = Y[1, 0] = p.norm_x / p.norm_m
    Y[1:, 1:] = z_par
    return Y


@dataclass(frozen=True)
class IdentityReport:
    """Relative residual of a determinant identity.

    ``residual = |lhs - rhs| / scale`` where ``scale`` is the sum of the
    magnitudes of the terms involved. ``ill_conditioned`` flags inputs whose
    pivots make the comparison intrinsically inaccurate.
    """

    residual: float
    lhs_sign: float
    lhs_log: float
    rhs_sign: float
    rhs_log: float
    ill_conditioned: bool = False


def _signed(x: float) -> tuple[float, float]:
    return (math.copysign(1.0, x) if x != 0 else 0.0, math.log(abs(x)) if x != 0 else -math.inf)


def _report(lhs_terms, rhs_terms, ill=False) -> IdentityReport:
    # all four numbers are put on a common exponential scale
    every = list(lhs_terms) + list(rhs_terms)
    logs = [t[1] for t in every if t[0] != 0 and math.isfinite(t[1])]
    top = max(logs) if logs else 0.0

    def value(terms):
        return sum(t[0] * math.exp(t[1] - top) for t in terms if t[0] != 0 and math.isfinite(t[1]))

    lhs, rhs = value(lhs_terms), value(rhs_terms)
    scale = sum(math.exp(t[1] - top) for t in every if t[0] != 0 and math.isfinite(t[1]))
    res = abs(lhs - rhs) / scale if scale > 0 else 0.0
    ls, ll = _signed(lhs)
    rs, rl = _signed(rhs)
    return IdentityReport(res, ls, ll + top, rs, rl + top, ill)


def laplace_identity_check(p: TapPoint, z_par: np.ndarray) -> IdentityReport:
    """``det Y = ((m,v)/|m|^2) det z_par - (|x|^2/|m|^2) det z_par^{(1,1)}``."""
    Y = y_matrix(p, z_par)
    mm = p.norm_m**2
    sy, ly = signed_logdet(Y)
    sz, lz = signed_logdet(z_par)
    sm, lm = signed_logdet(z_par[1:, 1:])
    c1, c2 = p.mv / mm, p.norm_x**2 / mm
    t1 = (math.copysign(1.0, c1) * sz if c1 != 0 else 0.0, (math.log(abs(c1)) if c1 else 0.0) + lz)
    t2 = (-sm if c2 != 0 else 0.0, (math.log(c2) if c2 else 0.0) + lm)
    return _report([(sy, ly)], [t1, t2])


def schur_identity_check(p: TapPoint, z_par: np.ndarray) -> IdentityReport:
    """``det Y = Y_11 det(z_par - (|x|^2/(m,v)) e_1 e_1^T)``.

    Raises
    ------
    PreconditionError
        If ``(m, v) = 0``.
    """
    if p.mv == 0:
        raise PreconditionError("the Schur form needs (m, v) != 0")
    Y = y_matrix(p, z_par)
    y11 = Y[0, 0]
    S = z_par.copy()
    shift = p.norm_x**2 / p.mv
    S[0, 0] -= shift
    sy, ly = signed_logdet(Y)
    ss, ls = signed_logdet(S)
    rhs = (math.copysign(1.0, y11) * ss, math.log(abs(y11)) + ls)
    # the shift dwarfs the matrix when (m, v) is tiny compared with |x|^2
    zn = max(float(np.abs(z_par).max()), 1e-300)
    ill = abs(shift) > 1e6 * zn
    return _report([(sy, ly)], [rhs], ill)


# ---- deterministic inequality checkers ----------------------------------

def _sym_spectrum(M):
    lam = np.linalg.eigvalsh(M)
    return float(np.abs(lam).max()), float(np.abs(lam).min())


@dataclass(frozen=True)
class InequalityReport:
    lhs: float
    rhs: float
    holds: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def rank_perturbation_bound_check(A: np.ndarray, B: np.ndarray, k: int) -> InequalityReport:
    """Check ``|log|det A| - log|det B|| <= 2k(|log|A|| + |log|B|| - log lmin(B) - log lmin(A))``.

    Here ``|M|`` is the operator norm and ``lmin`` the least absolute eigenvalue.

    Raises
    ------
    PreconditionError
        If ``rank(A - B) > k`` or either matrix is singular.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise InvalidInputError("A and B must be square of equal size")
    diff = A - B
    sv = np.linalg.svd(diff, compute_uv=False)
    if sv[0] > 0 and k < sv.size and sv[k] > 1e-9 * sv[0]:
        raise PreconditionError(f"rank(A - B) exceeds {k}")
    nA, lA = _sym_spectrum(A)
    nB, lB = _sym_spectrum(B)
    if lA == 0 or lB == 0:
        raise PreconditionError("A and B must be invertible")
    lhs = abs(logabsdet(A) - logabsdet(B))
    rhs = 2 * k * (abs(math.log(nA)) + abs(math.log(nB)) - math.log(lB) - math.log(lA))
    return InequalityReport(lhs, rhs, lhs <= rhs)


@dataclass(frozen=True)
class MinorReport(InequalityReport):
    """``holds`` refers to the inequality as stated (least eigenvalue of the
    minor). ``corrected_rhs`` uses ``min(1, lmin(minor))`` instead, which is
    the least eigenvalue of the block matrix ``diag(I_k, minor)`` that the
    bound is derived from; the stated form can fail when that minimum is 1."""

    corrected_rhs: float = math.nan

    @property
    def holds_corrected(self) -> bool:
        return self.lhs <= self.corrected_rhs


def minor_bound_check(A: np.ndarray, k: int) -> MinorReport:
    """Compare ``log|det A|`` with ``log|det A^{([k],[k])}|`` (first k rows/cols removed)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if not n > 2 * k:
        raise PreconditionError(f"need N > 2k, got N = {n}, k = {k}")
    minor = A[k:, k:]
    nA, lA = _sym_spectrum(A)
    _, lM = _sym_spectrum(minor)
    if lM == 0 or lA == 0:
        raise PreconditionError("A and its minor must be invertible")
    lhs = abs(logabsdet(A) - logabsdet(minor))
    base = 4 * k * math.log(2.0) + 8 * k * abs(math.log(nA)) - 4 * k * math.log(lA)
    rhs = base - 4 * k * math.log(lM)
    corrected = base - 4 * k * math.log(min(1.0, lM))
    return MinorReport(lhs, rhs, lhs <= rhs, corrected)


def dump_matrix_csv(M: np.ndarray, path) -> None:
    """Row-major CSV with a one-line ``n=<dim> sym=1`` header."""
    M = np.asarray(M, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"n={M.shape[0]} sym=1\n")
        for row in M:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("n="):
            raise InvalidInputError("matrix dump must start with an 'n=<dim>' header")
        n = int(header.split()[0][2:])
        rows = [list(map(float, line.split(","))) for line in fh if line.strip()]
    M = np.asarray(rows, dtype=float)
    if M.shape != (n, n):
        raise InvalidInputError("matrix dump does not match its header")
    return M
