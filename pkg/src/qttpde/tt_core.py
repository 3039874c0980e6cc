"""Tensor-train data structures and arithmetic kernel.

A length-2^L vector is stored as a chain of L cores with mode sizes 2x1; an
operator on R^{2^L} as a chain of cores with mode sizes 2x2 (rectangular
multilevel factors may carry other mode sizes).  Indices are big-endian:
entry i corresponds to the bit string (i_1, ..., i_L) with
i = sum_j 2^{L-j} i_j, most significant bit in core 1.

Every operation is a pure function over immutable inputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TtCore",
    "TtVector",
    "TtMatrix",
    "RankProfile",
    "dense_cap",
    "quantize",
    "quantize_matrix",
    "dequantize",
    "to_dense_matrix",
    "tt_round",
    "axpy",
    "scale",
    "dot",
    "norm",
    "matvec",
    "matmat",
    "transpose",
    "bilinear_form",
    "outer_product",
    "strong_kronecker",
    "mode_core_product",
    "core_transpose",
    "tt_ones",
    "tt_zero",
    "tt_basis_vector",
]

_EPS_MACHINE = float(np.finfo(np.float64).eps)
_TIE_MARGIN = 1e-15
_DEFAULT_DENSE_CAP = 22
_MATRIX_DENSE_CAP = 13


def dense_cap() -> int:
    """Dense-materialization cap on L, overridable via QTT_DENSE_CAP."""
    raw = os.environ.get("QTT_DENSE_CAP")
    if raw is None:
        return _DEFAULT_DENSE_CAP
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"QTT_DENSE_CAP must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ValueError(f"QTT_DENSE_CAP must be positive, got {value}")
    return value


# ---------- Core and chain types ----------


@dataclass(frozen=True)
class TtCore:
    """One block core: a 4-array indexed (rank_left, row, col, rank_right)."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.entries, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError(f"core entries must be 4-dimensional, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"core dimensions must be positive, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("core entries must be finite")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def rank_left(self) -> int:
        return self.entries.shape[0]

    @property
    def rank_right(self) -> int:
        return self.entries.shape[3]

    @property
    def mode_rows(self) -> int:
        return self.entries.shape[1]

    @property
    def mode_cols(self) -> int:
        return self.entries.shape[2]

    def slice(self, i: int, j: int) -> np.ndarray:
        """The (i, j) slice: a rank_left x rank_right matrix."""
        return np.asarray(self.entries[:, i, j, :])

    def block(self, alpha: int, beta: int) -> np.ndarray:
        """The (alpha, beta) mode block: a mode_rows x mode_cols matrix."""
        return np.asarray(self.entries[alpha, :, :, beta])


def _check_chain(cores: tuple[TtCore, ...], what: str) -> None:
    if not cores:
        raise ValueError(f"{what} needs at least one core")
    if cores[0].rank_left != 1 or cores[-1].rank_right != 1:
        raise ValueError(f"{what} must have boundary ranks 1")
    for k in range(len(cores) - 1):
        if cores[k].rank_right != cores[k + 1].rank_left:
            raise ValueError(
                f"{what} cores {k} and {k + 1} do not chain: "
                f"{cores[k].rank_right} != {cores[k + 1].rank_left}"
            )


@dataclass(frozen=True)
class TtVector:
    """QTT vector in R^{2^L}: L cores of mode size 2x1."""

    cores: tuple[TtCore, ...]

    def __post_init__(self) -> None:
        cores = tuple(self.cores)
        _check_chain(cores, "TtVector")
        for k, core in enumerate(cores):
            if core.mode_rows != 2 or core.mode_cols != 1:
                raise ValueError(
                    f"TtVector core {k} must have mode size 2x1, got "
                    f"{core.mode_rows}x{core.mode_cols}"
                )
        object.__setattr__(self, "cores", cores)

    @property
    def level(self) -> int:
        return len(self.cores)

    @property
    def bond_ranks(self) -> tuple[int, ...]:
        return tuple(c.rank_right for c in self.cores[:-1])


@dataclass(frozen=True)
class TtMatrix:
    """QTT operator as a chain of block cores.

    The standard square case has L cores of mode size 2x2 and represents an
    operator on R^{2^L}.  Rectangular multilevel factors (an extra core of
    mode size 2x1 or 1x1) are permitted; `rows`/`cols` give the represented
    shape.
    """

    cores: tuple[TtCore, ...]

    def __post_init__(self) -> None:
        cores = tuple(self.cores)
        _check_chain(cores, "TtMatrix")
        object.__setattr__(self, "cores", cores)

    @property
    def level(self) -> int:
        return len(self.cores)

    @property
    def rows(self) -> int:
        n = 1
        for c in self.cores:
            n *= c.mode_rows
        return n

    @property
    def cols(self) -> int:
        n = 1
        for c in self.cores:
            n *= c.mode_cols
        return n

    @property
    def is_square_binary(self) -> bool:
        return all(c.mode_rows == 2 and c.mode_cols == 2 for c in self.cores)

    @property
    def bond_ranks(self) -> tuple[int, ...]:
        return tuple(c.rank_right for c in self.cores[:-1])


@dataclass(frozen=True)
class RankProfile:
    """Bond ranks and parameter count of a chain."""

    bonds: tuple[int, ...]
    max_rank: int
    n_parameters: int

    @classmethod
    def of(cls, x: TtVector | TtMatrix) -> "RankProfile":
        bonds = x.bond_ranks
        n_parameters = sum(c.entries.size for c in x.cores)
        max_rank = max(bonds) if bonds else 1
        return cls(bonds=bonds, max_rank=max_rank, n_parameters=n_parameters)


def _as3(core: TtCore) -> np.ndarray:
    """Core entries with row/col modes flattened: (rank_left, m*n, rank_right)."""
    p, m, n, q = core.entries.shape
    return core.entries.reshape(p, m * n, q)


def _rebuild(kind: type, cores_3d: list[np.ndarray], mode_shapes: list[tuple[int, int]]):
    cores = tuple(
        TtCore(arr.reshape(arr.shape[0], m, n, arr.shape[2]))
        for arr, (m, n) in zip(cores_3d, mode_shapes)
    )
    return kind(cores)


def _same_kind(x) -> type:
    if isinstance(x, TtVector):
        return TtVector
    if isinstance(x, TtMatrix):
        return TtMatrix
    raise TypeError(f"expected TtVector or TtMatrix, got {type(x).__name__}")


# ---------- Quantization (TT-SVD) and dense materialization ----------


def _choose_rank(s: np.ndarray, budget: float, dim: int,
                 max_rank: int | None = None) -> int:
    """Length of the singular-value head to keep.

    The longest tail whose l2 norm stays strictly below ``budget`` (with a
    1e-15 tie margin: tails exactly at the budget survive) is discarded;
    singular values at relative machine noise for a matrix of largest
    dimension ``dim`` are always discarded.
    """
    count = int(s.size)
    if count == 0:
        return 1
    smax = float(s[0])
    if smax == 0.0:
        return 1
    noise = smax * _EPS_MACHINE * dim
    tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
    r = count
    while r > 1 and (tail[r - 1] <= budget - _TIE_MARGIN or tail[r - 1] <= noise):
        r -= 1
    if max_rank is not None and r > max_rank:
        r = max_rank
    return r


def _tt_svd(tensor: np.ndarray, mode_sizes: list[int], eps: float,
            max_rank: int | None = None) -> list[np.ndarray]:
    """TT-SVD of a full tensor with the given flattened mode sizes.

    Returns 3-d core arrays (rank_left, mode, rank_right).  The truncation
    budget eps*||tensor|| is split evenly over the d-1 truncation steps.
    """
    d = len(mode_sizes)
    nrm = float(np.linalg.norm(tensor))
    step_budget = 0.0 if d == 1 else eps * nrm / np.sqrt(d - 1)
    cores: list[np.ndarray] = []
    rest = tensor.reshape(1, -1)
    r_prev = 1
    for k in range(d - 1):
        m = mode_sizes[k]
        mat = rest.reshape(r_prev * m, -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = _choose_rank(s, step_budget, max(mat.shape), max_rank)
        cores.append(u[:, :r].reshape(r_prev, m, r))
        rest = (s[:r, None] * vt[:r])
        r_prev = r
    cores.append(rest.reshape(r_prev, mode_sizes[-1], 1))
    return cores


def quantize(v: np.ndarray, eps: float) -> TtVector:
    """QTT representation of a length-2^L vector with error <= eps*||v||."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    n = v.size
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"vector length must be a power of two >= 2, got {n}")
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    L = n.bit_length() - 1
    cores3 = _tt_svd(v.reshape([2] * L), [2] * L, eps)
    return _rebuild(TtVector, cores3, [(2, 1)] * L)


def quantize_matrix(a: np.ndarray, eps: float) -> TtMatrix:
    """QTT operator representation of a 2^L x 2^L matrix (paired bit modes)."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"matrix size must be a power of two >= 2, got {n}")
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    L = n.bit_length() - 1
    # interleave row and column bits: (i_1, j_1, i_2, j_2, ...)
    tensor = a.reshape([2] * (2 * L))
    perm = [None] * (2 * L)
    for k in range(L):
        perm[2 * k] = k
        perm[2 * k + 1] = L + k
    tensor = tensor.transpose(perm)
    cores3 = _tt_svd(tensor.reshape([4] * L), [4] * L, eps)
    return _rebuild(TtMatrix, cores3, [(2, 2)] * L)


def dequantize(u: TtVector) -> np.ndarray:
    """Dense vector represented by the chain (exact contraction)."""
    L = u.level
    if L > dense_cap():
        raise ValueError(f"dense materialization refused: L={L} exceeds cap {dense_cap()}")
    w = u.cores[0].entries[:, :, 0, :].reshape(2, -1)  # (2, r1)
    for core in u.cores[1:]:
        arr = core.entries[:, :, 0, :]  # (r, 2, r')
        w = np.einsum("ar,rjs->ajs", w, arr, optimize=True).reshape(-1, arr.shape[2])
    return np.ascontiguousarray(w[:, 0])


def to_dense_matrix(a: TtMatrix) -> np.ndarray:
    """Dense matrix represented by the chain (exact contraction)."""
    L = a.level
    if L > min(dense_cap(), _MATRIX_DENSE_CAP):
        raise ValueError(
            f"dense matrix materialization refused: L={L} exceeds cap "
            f"{min(dense_cap(), _MATRIX_DENSE_CAP)}"
        )
    w = np.ones((1, 1, 1))
    for core in a.cores:
        w = np.einsum("abr,rijs->aibjs", w, core.entries, optimize=True)
        w = w.reshape(w.shape[0] * w.shape[1], w.shape[2] * w.shape[3], -1)
    return np.ascontiguousarray(w[:, :, 0])


# ---------- Orthogonalization and rounding ----------


def _right_orthogonalize(cores3: list[np.ndarray]) -> list[np.ndarray]:
    """Sweep right to left; returns cores with all but the first right-orthogonal."""
    out = list(cores3)
    for k in range(len(out) - 1, 0, -1):
        r, t, q = out[k].shape
        mat = out[k].reshape(r, t * q)
        # mat = R @ Q with Q having orthonormal rows
        qmat, rmat = np.linalg.qr(mat.T, mode="reduced")
        out[k] = qmat.T.reshape(-1, t, q)
        out[k - 1] = np.einsum("ptr,rs->pts", out[k - 1], rmat.T, optimize=True)
    return out


def _round_cores(cores3: list[np.ndarray], eps: float,
                 max_rank: int | None = None) -> list[np.ndarray]:
    """Right-orthogonalize, then truncate left to right."""
    d = len(cores3)
    work = _right_orthogonalize(cores3)
    nrm = float(np.linalg.norm(work[0]))
    if nrm == 0.0:
        return [np.zeros((1, c.shape[1], 1)) for c in work]
    step_budget = 0.0 if d == 1 else eps * nrm / np.sqrt(d - 1)
    for k in range(d - 1):
        p, t, q = work[k].shape
        mat = work[k].reshape(p * t, q)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = _choose_rank(s, step_budget, max(mat.shape), max_rank)
        work[k] = u[:, :r].reshape(p, t, r)
        carry = s[:r, None] * vt[:r]
        work[k + 1] = np.einsum("rq,qts->rts", carry, work[k + 1], optimize=True)
    return work


def tt_round(x: TtVector | TtMatrix, eps: float, max_rank: int | None = None):
    """Compress a chain: ||result - x||_F <= eps*||x||_F, ranks never increase."""
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    kind = _same_kind(x)
    shapes = [(c.mode_rows, c.mode_cols) for c in x.cores]
    cores3 = [_as3(c).copy() for c in x.cores]
    return _rebuild(kind, _round_cores(cores3, eps, max_rank), shapes)


def norm(x: TtVector | TtMatrix) -> float:
    """Frobenius norm, computed stably via orthogonalization."""
    _same_kind(x)
    cores3 = [_as3(c).copy() for c in x.cores]
    work = _right_orthogonalize(cores3)
    return float(np.linalg.norm(work[0]))


# ---------- Linear arithmetic ----------


def _check_same_level(x, y, what: str) -> None:
    if len(x.cores) != len(y.cores):
        raise ValueError(
            f"{what}: chains have different lengths {len(x.cores)} != {len(y.cores)}"
        )


def axpy(a: float, x: TtVector | TtMatrix, y: TtVector | TtMatrix):
    """a*x + y, exactly; each bond rank is the sum of the operand bond ranks."""
    kind = _same_kind(x)
    if _same_kind(y) is not kind:
        raise TypeError("axpy operands must be both vectors or both operators")
    _check_same_level(x, y, "axpy")
    for k, (cx, cy) in enumerate(zip(x.cores, y.cores)):
        if (cx.mode_rows, cx.mode_cols) != (cy.mode_rows, cy.mode_cols):
            raise ValueError(f"axpy: core {k} mode sizes differ")
    d = len(x.cores)
    if d == 1:
        merged = [float(a) * _as3(x.cores[0]) + _as3(y.cores[0])]
        return _rebuild(kind, merged, [(x.cores[0].mode_rows, x.cores[0].mode_cols)])
    out: list[np.ndarray] = []
    shapes: list[tuple[int, int]] = []
    for k, (cx, cy) in enumerate(zip(x.cores, y.cores)):
        ax, ay = _as3(cx), _as3(cy)
        if k == 0:
            ax = float(a) * ax
            block = np.concatenate([ax, ay], axis=2)
        elif k == d - 1:
            block = np.concatenate([ax, ay], axis=0)
        else:
            px, t, qx = ax.shape
            py, _, qy = ay.shape
            block = np.zeros((px + py, t, qx + qy))
            block[:px, :, :qx] = ax
            block[px:, :, qx:] = ay
        out.append(block)
        shapes.append((cx.mode_rows, cx.mode_cols))
    return _rebuild(kind, out, shapes)


def scale(x: TtVector | TtMatrix, a: float):
    """a*x (scalar absorbed into the first core)."""
    kind = _same_kind(x)
    first = TtCore(float(a) * x.cores[0].entries)
    return kind((first,) + x.cores[1:])


def dot(x: TtVector, y: TtVector) -> float:
    """Euclidean inner product sum_i x_i y_i by exact chain contraction."""
    if not isinstance(x, TtVector) or not isinstance(y, TtVector):
        raise TypeError("dot expects two TtVector operands")
    _check_same_level(x, y, "dot")
    env = np.ones((1, 1))
    for cx, cy in zip(x.cores, y.cores):
        ax = cx.entries[:, :, 0, :]
        ay = cy.entries[:, :, 0, :]
        env = np.einsum("ac,aip,cir->pr", env, ax, ay, optimize=True)
    return float(env[0, 0])


def _chain_mode_product(a: TtMatrix, b: TtVector | TtMatrix):
    """Core-wise mode product (operator application), no rounding."""
    _check_same_level(a, b, "product")
    out: list[np.ndarray] = []
    shapes: list[tuple[int, int]] = []
    for k, (ca, cb) in enumerate(zip(a.cores, b.cores)):
        if ca.mode_cols != cb.mode_rows:
            raise ValueError(
                f"product: core {k} mode mismatch {ca.mode_cols} != {cb.mode_rows}"
            )
        prod = np.einsum("aijb,cjkd->acikbd", ca.entries, cb.entries, optimize=True)
        pa, pc = ca.rank_left, cb.rank_left
        qa, qc = ca.rank_right, cb.rank_right
        m, n = ca.mode_rows, cb.mode_cols
        out.append(prod.reshape(pa * pc, m * n, qa * qc))
        shapes.append((m, n))
    return out, shapes


def matvec(a: TtMatrix, x: TtVector, eps: float | None = None) -> TtVector:
    """A*x; bond ranks multiply before the optional rounding at eps."""
    if not isinstance(a, TtMatrix) or not isinstance(x, TtVector):
        raise TypeError("matvec expects (TtMatrix, TtVector)")
    out, shapes = _chain_mode_product(a, x)
    if eps is not None:
        if eps < 0:
            raise ValueError(f"eps must be nonnegative, got {eps}")
        out = _round_cores(out, eps)
    return _rebuild(TtVector, out, shapes)


def matmat(a: TtMatrix, b: TtMatrix, eps: float | None = None) -> TtMatrix:
    """A*B; bond ranks multiply before the optional rounding at eps."""
    if not isinstance(a, TtMatrix) or not isinstance(b, TtMatrix):
        raise TypeError("matmat expects (TtMatrix, TtMatrix)")
    out, shapes = _chain_mode_product(a, b)
    if eps is not None:
        if eps < 0:
            raise ValueError(f"eps must be nonnegative, got {eps}")
        out = _round_cores(out, eps)
    return _rebuild(TtMatrix, out, shapes)


def transpose(a: TtMatrix) -> TtMatrix:
    """Operator transpose: swaps the row/col mode of every core."""
    if not isinstance(a, TtMatrix):
        raise TypeError("transpose expects a TtMatrix")
    return TtMatrix(tuple(TtCore(c.entries.transpose(0, 2, 1, 3)) for c in a.cores))


def bilinear_form(x: TtVector, a: TtMatrix, y: TtVector) -> float:
    """x^T A y by exact three-chain contraction (A never applied explicitly)."""
    _check_same_level(x, a, "bilinear_form")
    _check_same_level(x, y, "bilinear_form")
    env = np.ones((1, 1, 1))
    for cx, ca, cy in zip(x.cores, a.cores, y.cores):
        env = np.einsum(
            "abc,aip,bijq,cjr->pqr",
            env,
            cx.entries[:, :, 0, :],
            ca.entries,
            cy.entries[:, :, 0, :],
            optimize=True,
        )
    return float(env[0, 0, 0])


def outer_product(x: TtVector, y: TtVector) -> TtMatrix:
    """x y^T as an operator chain; bond ranks multiply."""
    _check_same_level(x, y, "outer_product")
    cores = []
    for cx, cy in zip(x.cores, y.cores):
        arr = np.einsum(
            "aip,cjr->acijpr",
            cx.entries[:, :, 0, :],
            cy.entries[:, :, 0, :],
            optimize=True,
        )
        p = cx.rank_left * cy.rank_left
        q = cx.rank_right * cy.rank_right
        cores.append(TtCore(arr.reshape(p, 2, 2, q)))
    return TtMatrix(tuple(cores))


# ---------- Block-core products ----------


def strong_kronecker(u: TtCore, v: TtCore) -> TtCore:
    """Chain product: matrix multiplication on rank slices, Kronecker on modes."""
    if u.rank_right != v.rank_left:
        raise ValueError(
            f"strong_kronecker rank mismatch: {u.rank_right} != {v.rank_left}"
        )
    arr = np.einsum("aijb,bklc->aikjlc", u.entries, v.entries, optimize=True)
    p, q = u.rank_left, v.rank_right
    m = u.mode_rows * v.mode_rows
    n = u.mode_cols * v.mode_cols
    return TtCore(arr.reshape(p, m, n, q))


def mode_core_product(a: TtCore, b: TtCore) -> TtCore:
    """Block product: matrix multiplication on mode blocks, Kronecker on ranks."""
    if a.mode_cols != b.mode_rows:
        raise ValueError(
            f"mode_core_product mode mismatch: {a.mode_cols} != {b.mode_rows}"
        )
    arr = np.einsum("aijb,cjld->acilbd", a.entries, b.entries, optimize=True)
    p = a.rank_left * b.rank_left
    q = a.rank_right * b.rank_right
    m, n = a.mode_rows, b.mode_cols
    return TtCore(arr.reshape(p, m, n, q))


def core_transpose(u: TtCore) -> TtCore:
    """Mode transpose of a block core: U^T(a, i, j, b) = U(a, j, i, b)."""
    return TtCore(u.entries.transpose(0, 2, 1, 3))


# ---------- Simple constructors ----------


def tt_ones(L: int) -> TtVector:
    """All-ones vector of length 2^L, rank 1."""
    if L < 1:
        raise ValueError(f"L must be positive, got {L}")
    core = TtCore(np.ones((1, 2, 1, 1)))
    return TtVector((core,) * L)


def tt_zero(L: int) -> TtVector:
    """Zero vector of length 2^L, rank 1."""
    if L < 1:
        raise ValueError(f"L must be positive, got {L}")
    core = TtCore(np.zeros((1, 2, 1, 1)))
    return TtVector((core,) * L)


def tt_basis_vector(L: int, index: int) -> TtVector:
    """Standard basis vector e_index (0-based), rank 1."""
    if L < 1:
        raise ValueError(f"L must be positive, got {L}")
    if not 0 <= index < 2**L:
        raise ValueError(f"index {index} out of range for length {2**L}")
    cores = []
    for j in range(1, L + 1):
        bit = (index >> (L - j)) & 1
        arr = np.zeros((1, 2, 1, 1))
        arr[0, bit, 0, 0] = 1.0
        cores.append(TtCore(arr))
    return TtVector(tuple(cores))
