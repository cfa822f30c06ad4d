"""Dense and sparse linear algebra used by every solver in the package.

The tridiagonal eigensolver (Sturm bisection + inverse iteration), the
Householder-based dense oracle, conjugate gradients with an optional
orthogonality constraint, and block inverse iteration with Rayleigh-Ritz
are implemented here.  Sparse storage and the optional sparse LU used as
the inner solver for large shifted systems come from scipy.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import _kernels
from .errors import (ConvergenceError, IndefiniteMatrixError, OracleSizeError,
                     ValidationError)

DENSE_ORACLE_CAP = 2000


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TriDiag:
    """Real symmetric tridiagonal matrix given by its two diagonals."""

    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        d = _frozen(np.atleast_1d(self.diag), float)
        e = _frozen(np.atleast_1d(np.asarray(self.offdiag, dtype=float)), float)
        if d.ndim != 1 or d.size < 1:
            raise ValidationError("TriDiag needs a nonempty 1-D diagonal")
        if e.shape != (d.size - 1,):
            raise ValidationError(f"offdiag must have length {d.size - 1}, got {e.size}")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise ValidationError("TriDiag entries must be finite")
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "offdiag", e)

    @property
    def n(self):
        return self.diag.size

    @property
    def shape(self):
        return (self.n, self.n)

    def matvec(self, x):
        x = np.asarray(x)
        y = self.diag * x
        if self.n > 1:
            y[:-1] += self.offdiag * x[1:]
            y[1:] += self.offdiag * x[:-1]
        return y

    __matmul__ = matvec

    def norm_inf(self):
        row = np.abs(self.diag).copy()
        if self.n > 1:
            a = np.abs(self.offdiag)
            row[:-1] += a
            row[1:] += a
        return float(row.max())

    def gershgorin(self):
        rad = np.zeros(self.n)
        if self.n > 1:
            a = np.abs(self.offdiag)
            rad[:-1] += a
            rad[1:] += a
        return float(np.min(self.diag - rad)), float(np.max(self.diag + rad))

    def shifted(self, sigma):
        return TriDiag(self.diag - sigma, self.offdiag)

    def to_dense(self):
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)


class SparseHermitian:
    """Complex Hermitian matrix in compressed-row storage.

    Build with :meth:`from_lower`, which takes the diagonal and the strictly
    lower entries and mirrors the latter, so ``A == A^H`` holds bit for bit.
    """

    def __init__(self, matrix):
        m = sp.csr_matrix(matrix, dtype=complex)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        if m.shape[0] != m.shape[1]:
            raise ValidationError("SparseHermitian must be square")
        diff = m - m.getH()
        diff.eliminate_zeros()
        if diff.nnz:
            raise ValidationError("matrix is not exactly Hermitian")
        self._m = m

    @classmethod
    def from_lower(cls, n, diag, rows=(), cols=(), vals=()):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=complex)
        if rows.size and np.any(rows <= cols):
            raise ValidationError("from_lower expects strictly lower entries (row > col)")
        low = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        low.sum_duplicates()
        full = low + low.getH() + sp.diags(np.asarray(diag, dtype=float).astype(complex))
        out = cls.__new__(cls)
        full = sp.csr_matrix(full)
        full.eliminate_zeros()
        full.sort_indices()
        out._m = full
        return out

    @property
    def n(self):
        return self._m.shape[0]

    @property
    def shape(self):
        return self._m.shape

    @property
    def indptr(self):
        return self._m.indptr

    @property
    def indices(self):
        return self._m.indices

    @property
    def data(self):
        return self._m.data

    def matvec(self, x):
        return self._m @ x

    __matmul__ = matvec

    def diagonal(self):
        return self._m.diagonal().real

    def scaled(self, s):
        """Return ``S A S`` for the positive diagonal ``S = diag(s)``, exactly Hermitian."""
        s = np.asarray(s, dtype=float)
        low = sp.tril(self._m, k=-1).tocoo()
        vals = s[low.row] * low.data * s[low.col]
        return SparseHermitian.from_lower(self.n, self.diagonal() * s * s, low.row, low.col, vals)

    def max_hermitian_defect(self):
        diff = self._m - self._m.getH()
        return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0

    def to_scipy(self):
        return self._m.copy()

    def to_dense(self):
        return self._m.toarray()


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray = field(repr=False)


def _as_matvec(A) -> Callable:
    if hasattr(A, "matvec"):
        return A.matvec
    if callable(A):
        return A
    if sp.issparse(A):
        return lambda x: A @ x
    arr = np.asarray(A)
    return lambda x: arr @ x


# -- tridiagonal eigensolver -------------------------------------------------

def sturm_count(T: TriDiag, sigma: float) -> int:
    """Count eigenvalues of ``T`` strictly below ``sigma``."""
    e2 = np.ascontiguousarray(T.offdiag ** 2)
    return int(_kernels.sturm_count(T.diag, e2, float(sigma)))


def tridiag_eigenvalues(T: TriDiag, k: int) -> np.ndarray:
    """The ``k`` smallest eigenvalues by bisection on the Sturm count."""
    if k < 0 or k > T.n:
        raise ValidationError(f"need 0 <= k <= n, got k={k}, n={T.n}")
    lo, hi = T.gershgorin()
    pad = 2.220446049250313e-16 * max(abs(lo), abs(hi), 1.0) * T.n
    lo -= pad
    hi += pad
    e2 = np.ascontiguousarray(T.offdiag ** 2)
    abstol = 4.0 * 2.220446049250313e-16 * max(abs(lo), abs(hi))
    vals = np.empty(k)
    left = lo
    for j in range(k):
        vals[j] = _kernels.bisect_eigenvalue(T.diag, e2, j, left, hi, abstol)
        left = max(lo, vals[j] - abstol)
    return vals


def _start_vector(n, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.5, 1.5, n) * np.where(rng.random(n) < 0.5, -1.0, 1.0)


def tridiag_smallest(T: TriDiag, k: int, tol: float = 1e-10,
                     max_restarts: int = 3) -> List[EigenPair]:
    """Smallest ``k`` eigenpairs of a symmetric tridiagonal matrix.

    Eigenvalues come from Sturm bisection, vectors from inverse iteration
    with a pivoted factorization of ``T - lambda*I``.  Vectors whose values
    lie close together are orthogonalized against each other inside every
    sweep, so clusters are resolved as a block.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    if k == 0:
        return []
    # work on a power-of-two rescaling with unit size so tiny or huge
    # matrices see the same thresholds; values are scaled back exactly
    tnorm = T.norm_inf()
    scale = 2.0 ** np.round(np.log2(tnorm)) if tnorm > 0 else 1.0
    if scale != 1.0:
        Ts = TriDiag(T.diag / scale, T.offdiag / scale)
        return [EigenPair(p.value * scale, p.vector)
                for p in tridiag_smallest(Ts, k, tol, max_restarts)]
    vals = tridiag_eigenvalues(T, k)
    n = T.n
    tnorm = tnorm or 1.0
    pivmin = np.finfo(float).eps * tnorm
    cluster_gap = 1e-3 * tnorm
    bound = tol * tnorm
    pairs: List[EigenPair] = []
    vecs = []
    for j, lam in enumerate(vals):
        mates = [v for v, mu in zip(vecs, vals[:j]) if abs(lam - mu) <= cluster_gap]
        # the factorization of T - lam*I is shared by every sweep and restart
        fac = _kernels.shifted_lu(T.diag, T.offdiag, lam, pivmin)
        best = np.inf
        found = None
        for attempt in range(max_restarts + 1):
            x = _start_vector(n, 7919 * j + attempt)
            for _ in range(6):
                for v in mates:
                    x -= v * (v @ x)
                x = _kernels.shifted_solve(*fac, x)
                for _pass in range(2):
                    for v in mates:
                        x -= v * (v @ x)
                nrm = np.linalg.norm(x)
                if nrm == 0.0 or not np.isfinite(nrm):
                    break
                x /= nrm
                res = np.linalg.norm(T.matvec(x) - lam * x)
                best = min(best, res)
                if res <= bound:
                    found = x
                    break
            if found is not None:
                break
        if found is None:
            raise ConvergenceError(
                f"inverse iteration did not converge for eigenpair {j} "
                f"(best residual {best:.3e}, bound {bound:.3e})", index=j, residuals=[best])
        vecs.append(found)
        pairs.append(EigenPair(float(lam), found))
    return pairs


# -- dense oracle -------------------------------------------------------------

def householder_tridiagonalize(A):
    """Unitary reduction of a Hermitian matrix to real symmetric tridiagonal form.

    Returns ``(T, reflectors, phases)`` with ``A = Q D T D^* Q^*`` where ``Q`` is
    the product of the reflectors and ``D = diag(phases)``.
    """
    A = np.array(A, dtype=complex, copy=True)
    n = A.shape[0]
    reflectors = []
    for j in range(n - 2):
        x = A[j + 1:, j]
        xnorm = np.linalg.norm(x)
        if xnorm == 0.0:
            reflectors.append(None)
            continue
        x0 = x[0]
        phase = x0 / abs(x0) if x0 != 0 else 1.0
        alpha = -phase * xnorm
        v = x.copy()
        v[0] -= alpha
        v /= np.linalg.norm(v)
        sub = A[j + 1:, j + 1:]
        p = sub @ v
        kappa = np.vdot(v, p).real
        w = p - kappa * v
        sub -= 2.0 * (np.outer(v, w.conj()) + np.outer(w, v.conj()))
        A[j + 1:, j] = 0.0
        A[j, j + 1:] = 0.0
        A[j + 1, j] = alpha
        A[j, j + 1] = np.conj(alpha)
        reflectors.append(v)
    d = A.diagonal().real.copy()
    c = np.array([A[i + 1, i] for i in range(n - 1)], dtype=complex)
    mag = np.abs(c)
    phases = np.ones(n, dtype=complex)
    for i in range(n - 1):
        phases[i + 1] = phases[i] * (c[i] / mag[i] if mag[i] > 0 else 1.0)
    return TriDiag(d, mag), reflectors, phases


def dense_hermitian_eigs(A, k: int) -> List[EigenPair]:
    """Smallest ``k`` eigenpairs of a dense Hermitian matrix (oracle path)."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("dense_hermitian_eigs needs a square matrix")
    n = A.shape[0]
    if n > DENSE_ORACLE_CAP:
        raise OracleSizeError(f"dense oracle is capped at n={DENSE_ORACLE_CAP}, got {n}")
    if k == 0:
        return []
    if k < 0 or k > n:
        raise ValidationError(f"need 0 <= k <= n, got {k}")
    is_real = not np.iscomplexobj(A)
    T, reflectors, phases = householder_tridiagonalize(A)
    out = []
    for pair in tridiag_smallest(T, k):
        z = phases * pair.vector
        for j in range(len(reflectors) - 1, -1, -1):
            v = reflectors[j]
            if v is not None:
                z[j + 1:] -= 2.0 * v * np.vdot(v, z[j + 1:])
        z /= np.linalg.norm(z)
        if is_real:
            # fix the global phase so the real part carries the vector
            i = int(np.argmax(np.abs(z)))
            z = (z * np.conj(z[i]) / abs(z[i])).real
            z /= np.linalg.norm(z)
        out.append(EigenPair(pair.value, z))
    return out


# -- conjugate gradients ------------------------------------------------------

@dataclass
class CGInfo:
    iterations: int = 0
    residual: float = np.inf
    history: list = field(default_factory=list)


def cg_solve(A, b, tol: float = 1e-10, deflation=None, maxiter: Optional[int] = None,
             callback=None, info: Optional[CGInfo] = None):
    """Conjugate gradients for a Hermitian positive definite ``A``.

    With ``deflation = w`` the iteration runs on ``w``'s orthogonal
    complement: ``b`` and every Krylov vector are projected, so the result
    satisfies ``<x, w> = 0``.
    """
    matvec = _as_matvec(A)
    b = np.asarray(b)
    dtype = np.result_type(b.dtype, float)
    if deflation is not None:
        w = np.asarray(deflation, dtype=dtype)
        w = w / np.linalg.norm(w)

        def proj(v):
            return v - w * np.vdot(w, v)
    else:
        def proj(v):
            return v

    b = proj(b.astype(dtype))
    n = b.size
    maxiter = maxiter if maxiter is not None else max(10 * n, 100)
    bnorm = np.linalg.norm(b)
    info = info if info is not None else CGInfo()
    x = np.zeros_like(b)
    if bnorm == 0.0:
        info.residual = 0.0
        return x
    target = tol * bnorm
    for _restart in range(3):
        r = proj(b - matvec(x)) if np.any(x) else b.copy()
        p = r.copy()
        rs = np.vdot(r, r).real
        for _ in range(maxiter):
            Ap = proj(matvec(p))
            curv = np.vdot(p, Ap).real
            if curv <= 0.0:
                raise IndefiniteMatrixError(
                    f"nonpositive curvature {curv:.3e} after {info.iterations} iterations")
            alpha = rs / curv
            x = x + alpha * p
            r = r - alpha * Ap
            info.iterations += 1
            rs_new = np.vdot(r, r).real
            info.history.append(np.sqrt(rs_new))
            if callback is not None:
                callback(x)
            if np.sqrt(rs_new) <= target:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        x = proj(x)
        true_res = np.linalg.norm(proj(matvec(x)) - b)
        info.residual = true_res
        if true_res <= target:
            return x
    raise ConvergenceError(
        f"CG stopped at relative residual {info.residual / bnorm:.3e} > {tol:.1e}",
        residuals=[info.residual])


# -- block inverse iteration --------------------------------------------------

@dataclass
class EigsInfo:
    iterations: int = 0
    residuals: np.ndarray = None
    inner: str = ""


def _rayleigh_ritz(matvec, Q):
    AQ = np.column_stack([matvec(Q[:, i]) for i in range(Q.shape[1])])
    G = Q.conj().T @ AQ
    G = 0.5 * (G + G.conj().T)
    pairs = dense_hermitian_eigs(G, G.shape[0])
    theta = np.array([p.value for p in pairs])
    Z = np.column_stack([p.vector for p in pairs])
    return theta, Q @ Z, AQ @ Z


def hermitian_smallest_eigs(A, k: int, tol: float = 1e-8, block_size: Optional[int] = None,
                            max_iter: int = 300, shift: float = 0.0, inner: str = "cg",
                            inner_tol: Optional[float] = None, seed: int = 0,
                            info: Optional[EigsInfo] = None) -> List[EigenPair]:
    """Smallest ``k`` eigenpairs of a Hermitian matrix by block inverse iteration.

    Each sweep solves ``(A - shift) Y = X`` column by column, orthonormalizes
    ``Y`` and extracts Ritz pairs.  ``inner='cg'`` uses :func:`cg_solve`
    (``A - shift`` must be positive definite); ``inner='lu'`` factors the
    shifted sparse matrix once.  Convergence is declared when every wanted
    pair satisfies ``||A x - theta x|| <= tol * |theta|``.
    """
    n = A.shape[0]
    if k == 0:
        return []
    if k < 0 or k > n:
        raise ValidationError(f"need 0 <= k <= n, got {k}")
    p = block_size if block_size is not None else min(n, k + 4)
    if p < k or p > n:
        raise ValidationError(f"block size must lie in [k, n], got {p}")
    matvec = _as_matvec(A)
    info = info if info is not None else EigsInfo()
    info.inner = inner
    complex_op = isinstance(A, SparseHermitian) or np.issubdtype(
        getattr(A, "dtype", np.float64), np.complexfloating)
    if inner == "lu":
        mat = A.to_scipy() if isinstance(A, SparseHermitian) else sp.csr_matrix(A)
        shifted = (mat - shift * sp.identity(n, format="csr")).tocsc()
        lu = splu(shifted, permc_spec="MMD_AT_PLUS_A")

        def solve(X):
            return lu.solve(X)
    elif inner == "cg":
        itol = inner_tol if inner_tol is not None else min(1e-3, 0.1 * tol)
        if shift == 0.0:
            shifted_mv = matvec
        else:
            def shifted_mv(x):
                return matvec(x) - shift * x

        def solve(X):
            return np.column_stack([cg_solve(shifted_mv, X[:, i], tol=itol) for i in range(X.shape[1])])
    else:
        raise ValidationError(f"unknown inner solver {inner!r}")

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    if complex_op:
        X = X + 1j * rng.standard_normal((n, p))
    X, _ = np.linalg.qr(X)
    best = None
    stall = 0
    for it in range(1, max_iter + 1):
        Y = solve(X)
        Q, _ = np.linalg.qr(Y)
        theta, X, AX = _rayleigh_ritz(matvec, Q)
        res = np.linalg.norm(AX - X * theta, axis=0)
        info.iterations = it
        info.residuals = res[:k]
        scale = np.maximum(np.abs(theta[:k]), np.finfo(float).tiny)
        if np.all(res[:k] <= tol * scale):
            break
        worst = float(np.max(res[:k] / scale))
        if best is None or worst < 0.9 * best:
            best = worst
            stall = 0
        else:
            stall += 1
        if stall >= 50:
            raise ConvergenceError(
                f"block inverse iteration stagnated at relative residual {worst:.3e}",
                residuals=res[:k].copy())
    else:
        raise ConvergenceError(
            f"block inverse iteration hit {max_iter} sweeps, residuals {res[:k]}",
            residuals=res[:k].copy())
    out = []
    for i in range(k):
        v = X[:, i] / np.linalg.norm(X[:, i])
        out.append(EigenPair(float(theta[i]), v))
    return out


def sparse_count_below(A, sigma: float) -> int:
    """Number of eigenvalues of the Hermitian ``A`` below ``sigma``.

    A - sigma is factored with a symmetric fill-reducing permutation and no
    row pivoting, so the diagonal of U is the D of an LDL^H factorization
    and Sylvester's law of inertia gives the count.  A numerically zero
    pivot makes the count unreliable and raises.
    """
    mat = A.to_scipy() if isinstance(A, SparseHermitian) else sp.csc_matrix(A)
    n = mat.shape[0]
    shifted = (mat - sigma * sp.identity(n, format="csc")).tocsc()
    lu = splu(shifted, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options={"SymmetricMode": True})
    if np.any(lu.perm_r != lu.perm_c):
        raise IndefiniteMatrixError("factorization used row pivoting; inertia unavailable")
    d = np.real(lu.U.diagonal())
    scale = np.max(np.abs(d))
    if np.min(np.abs(d)) <= 1e3 * np.finfo(float).eps * scale:
        raise IndefiniteMatrixError(f"near-zero pivot at shift {sigma}")
    return int(np.sum(d < 0))


def tridiag_ground_state(T: TriDiag, lam: Optional[float] = None) -> np.ndarray:
    """Unit ground state of a tridiagonal matrix with negative off-diagonal.

    The vector is strictly positive and accurate to high relative precision
    in its tails, where an eigensolver only resolves it to rounding of the
    largest entry.
    """
    if T.n > 1 and not np.all(T.offdiag < 0):
        raise ValidationError("ground state needs a strictly negative off-diagonal")
    if lam is None:
        lam = tridiag_eigenvalues(T, 1)[0]
    if T.n == 1:
        return np.ones(1)
    logx, _ = _kernels.twisted_log_vector(T.diag, T.offdiag, float(lam))
    x = np.exp(logx - logx.max())
    return x / np.linalg.norm(x)
