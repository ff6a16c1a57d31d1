"""
Linear algebra kernel: banded LU, dense QR eigenvalues, shift-invert Arnoldi
and inverse-iteration singular values.

Everything here runs in real arithmetic. Complex shifts go through the real
2x2-block embedding [[Re, -Im], [Im, Re]] with real and imaginary parts
interleaved, so one LU code path serves all solves.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import as_strided

from kfplab.errors import NoConvergence, NotConverged, Singular

logger = logging.getLogger(__name__)

# Constants
PIVOT_THRESHOLD = 1e-30
START_PERTURBATION = 1e-3
DEFAULT_SEED = 42


class BandedMatrix:
    """
    Square matrix in LAPACK-style column-major band storage.

    Entry (i, j) lives at storage row ``kl + ku + i - j`` of column ``j``;
    the top ``kl`` storage rows are fill space used by pivoting. ``view``
    exposes the storage as a virtual dense array that is only meaningful
    inside the band.
    """

    def __init__(self, order, kl, ku):
        self.order = int(order)
        self.kl = int(kl)
        self.ku = int(ku)
        self.ldab = 2 * self.kl + self.ku + 1
        self.kv = self.kl + self.ku
        self.data = np.zeros(self.ldab * self.order)

    @property
    def view(self):
        item = self.data.itemsize
        base = self.data[self.kv:]
        return as_strided(base, shape=(self.order, self.order),
                          strides=(item, item * (self.ldab - 1)), writeable=True)

    @classmethod
    def from_sparse(cls, M, perm=None):
        """
        Build from a scipy sparse matrix, optionally permuted symmetrically.

        Args:
            M: square scipy sparse matrix
            perm (numpy.ndarray, optional): new-to-old index map

        Returns:
            BandedMatrix: banded copy of ``M[perm][:, perm]``
        """
        M = sp.csr_matrix(M)
        if perm is not None:
            M = M[perm][:, perm]
        coo = M.tocoo()
        coo.sum_duplicates()
        rows, cols, vals = coo.row, coo.col, coo.data
        kl = int(max(0, (rows - cols).max())) if vals.size else 0
        ku = int(max(0, (cols - rows).max())) if vals.size else 0
        band = cls(M.shape[0], kl, ku)
        band.view[rows, cols] = vals
        return band

    @classmethod
    def from_dense(cls, D):
        D = np.asarray(D, dtype=float)
        return cls.from_sparse(sp.csr_matrix(D))

    def _band_indices(self):
        rows, cols = [], []
        for d in range(-self.kl, self.ku + 1):
            i = np.arange(max(0, -d), min(self.order, self.order - d))
            rows.append(i)
            cols.append(i + d)
        return np.concatenate(rows), np.concatenate(cols)

    def to_dense(self):
        out = np.zeros((self.order, self.order))
        rows, cols = self._band_indices()
        out[rows, cols] = self.view[rows, cols]
        return out

    def to_sparse(self):
        rows, cols = self._band_indices()
        vals = self.view[rows, cols]
        keep = vals != 0
        return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(self.order, self.order))

    def transpose(self):
        return BandedMatrix.from_sparse(self.to_sparse().T)

    def copy(self):
        out = BandedMatrix(self.order, self.kl, self.ku)
        out.data[:] = self.data
        return out

    def matvec(self, x):
        x = np.asarray(x)
        y = np.zeros(np.broadcast_shapes(x.shape), dtype=np.result_type(x, float))
        V = self.view
        for d in range(-self.kl, self.ku + 1):
            diag = V.diagonal(d)
            if d >= 0:
                y[:self.order - d] += (diag * x[d:].T).T
            else:
                y[-d:] += (diag * x[:self.order + d].T).T
        return y

    def norm_max(self):
        rows, cols = self._band_indices()
        return float(np.abs(self.view[rows, cols]).max()) if rows.size else 0.0


@dataclass
class BandedLU:
    """LU factors of a banded matrix with row interchanges ``piv``."""

    factors: BandedMatrix
    piv: np.ndarray

    @property
    def order(self):
        return self.factors.order

    def solve(self, b):
        """Solve M x = b for one or several right-hand sides (columns)."""
        F = self.factors
        n, kl, kv = F.order, F.kl, F.kv
        V = F.view
        x = np.array(b, dtype=float, copy=True)
        vector = x.ndim == 1
        if vector:
            x = x[:, None]
        # forward: apply L^{-1} with the recorded interchanges
        for j in range(n):
            p = self.piv[j]
            if p != j:
                x[[j, p]] = x[[p, j]]
            km = min(kl, n - 1 - j)
            if km:
                x[j + 1:j + km + 1] -= np.outer(V[j + 1:j + km + 1, j], x[j])
        # backward: U has upper bandwidth kl + ku
        for j in range(n - 1, -1, -1):
            x[j] /= V[j, j]
            lo = max(0, j - kv)
            if lo < j:
                x[lo:j] -= np.outer(V[lo:j, j], x[j])
        return x[:, 0] if vector else x


def lu_banded(M):
    """
    Factor a banded matrix with partial pivoting inside the band.

    Args:
        M (BandedMatrix): matrix to factor (left untouched)

    Returns:
        BandedLU: the factorization

    Raises:
        Singular: if a pivot is below 1e-30 * max|M|
    """
    F = M.copy()
    n, kl, ku = F.order, F.kl, F.ku
    V = F.view
    piv = np.arange(n)
    threshold = PIVOT_THRESHOLD * max(M.norm_max(), 1e-300)
    ju = 0
    for j in range(n):
        km = min(kl, n - 1 - j)
        p = j + int(np.argmax(np.abs(V[j:j + km + 1, j])))
        piv[j] = p
        if abs(V[p, j]) < threshold:
            raise Singular(f"pivot {j} below threshold ({abs(V[p, j]):.3e})", index=j)
        ju = max(ju, min(p + ku, n - 1))
        if p != j:
            row = V[j, j:ju + 1].copy()
            V[j, j:ju + 1] = V[p, j:ju + 1]
            V[p, j:ju + 1] = row
        if km:
            V[j + 1:j + km + 1, j] /= V[j, j]
            if ju > j:
                V[j + 1:j + km + 1, j + 1:ju + 1] -= np.outer(V[j + 1:j + km + 1, j], V[j, j + 1:ju + 1])
    return BandedLU(F, piv)


def embed_complex_shift(M, sigma, mass=None):
    """
    Real 2x2-block embedding of (M - sigma W) for real sparse M and W
    (W the identity when ``mass`` is None).

    Unknowns are interleaved (Re x_0, Im x_0, Re x_1, ...), so the band
    roughly doubles instead of splitting into two far-apart blocks.
    """
    M = sp.csr_matrix(M)
    n = M.shape[0]
    W = sp.identity(n) if mass is None else sp.csr_matrix(mass)
    block = np.array([[-sigma.real, sigma.imag], [-sigma.imag, -sigma.real]])
    return (sp.kron(M, sp.identity(2)) + sp.kron(W, block)).tocsr()


def embed_dense(M):
    """Real embedding of a dense complex matrix, interleaved ordering."""
    M = np.asarray(M, dtype=complex)
    n = M.shape[0]
    E = np.zeros((2 * n, 2 * n))
    E[0::2, 0::2] = M.real
    E[0::2, 1::2] = -M.imag
    E[1::2, 0::2] = M.imag
    E[1::2, 1::2] = M.real
    return E


def _interleave(z):
    z = np.asarray(z, dtype=complex)
    out = np.empty((2 * z.shape[0],) + z.shape[1:])
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def _deinterleave(x):
    return x[0::2] + 1j * x[1::2]


def dense_solve(M, b):
    """Solve a small dense (possibly complex) system with the banded LU."""
    M = np.asarray(M)
    b = np.asarray(b)
    if np.iscomplexobj(M) or np.iscomplexobj(b):
        lu = lu_banded(BandedMatrix.from_dense(embed_dense(M)))
        return _deinterleave(lu.solve(_interleave(b)))
    return lu_banded(BandedMatrix.from_dense(M)).solve(b)


# Dense eigenvalues

def _balance(a):
    radix = 2.0
    sqrdx = radix * radix
    n = a.shape[0]
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.abs(a[:, i]).sum() - abs(a[i, i])
            r = np.abs(a[i, :]).sum() - abs(a[i, i])
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sqrdx
            g = r * radix
            while c > g:
                f /= radix
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                a[i, :] /= f
                a[:, i] *= f
    return a


def _householder_vector(x):
    alpha = np.linalg.norm(x)
    if alpha == 0.0:
        return None
    v = x.copy()
    v[0] += np.copysign(alpha, x[0])
    norm = np.linalg.norm(v)
    return v / norm if norm else None


def hessenberg(M):
    """Upper Hessenberg form by Householder reflections (similar to M)."""
    a = np.array(M, dtype=float, copy=True)
    n = a.shape[0]
    for k in range(n - 2):
        v = _householder_vector(a[k + 1:, k])
        if v is None:
            continue
        a[k + 1:, k:] -= 2.0 * np.outer(v, v @ a[k + 1:, k:])
        a[:, k + 1:] -= 2.0 * np.outer(a[:, k + 1:] @ v, v)
        a[k + 2:, k] = 0.0
    return a


def _francis_qr(a):
    """Eigenvalues of an upper Hessenberg matrix by implicit double-shift QR."""
    n = a.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = np.abs(np.triu(a, -1)).sum()
    max_iterations = 100 * max(n, 1)
    total = 0
    nn = n - 1
    t = 0.0
    while nn >= 0:
        its = 0
        while True:
            # look for a single small subdiagonal element
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) + s == s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = np.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + np.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = z
                    wi[nn] = -z
                nn -= 2
                break
            if total >= max_iterations:
                raise NoConvergence(f"QR iteration did not converge after {total} iterations")
            if its in (10, 20) or (its > 0 and its % 30 == 0):
                # exceptional shift
                t += x
                for i in range(nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                x = y = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            total += 1
            # form shift and look for two consecutive small subdiagonal elements
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            # double QR step on rows l..nn and columns m..nn
            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = np.copysign(np.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                # row modification
                cols = slice(k, nn + 1)
                pr = a[k, cols] + q * a[k + 1, cols]
                if k != nn - 1:
                    pr = pr + r * a[k + 2, cols]
                    a[k + 2, cols] -= pr * z
                a[k + 1, cols] -= pr * y
                a[k, cols] -= pr * x
                # column modification
                rows = slice(l, min(nn, k + 3) + 1)
                pc = x * a[rows, k] + y * a[rows, k + 1]
                if k != nn - 1:
                    pc = pc + z * a[rows, k + 2]
                    a[rows, k + 2] -= pc * r
                a[rows, k + 1] -= pc * q
                a[rows, k] -= pc
            if l >= nn - 1:
                break
    return wr + 1j * wi


def _sort_eigs(values, tol=1e-10):
    # real parts within tol of each other count as tied and go by imaginary part
    ordered = sorted(values, key=lambda z: -z.real)
    scale = max((abs(z) for z in ordered), default=1.0)
    runs = []
    for z in ordered:
        if runs and runs[-1][0].real - z.real <= tol * max(scale, 1.0):
            runs[-1].append(z)
        else:
            runs.append([z])
    return np.array([z for run in runs for z in sorted(run, key=lambda z: -z.imag)], dtype=complex)


def _project_out(y, basis):
    if basis is None or basis.shape[1] == 0:
        return y
    for _ in range(2):
        y = y - basis @ (basis.conj().T @ y)
    return y


def inverse_iteration(M, lam, steps=3, seed=DEFAULT_SEED, against=None):
    """
    Eigenvector of a dense matrix for an (approximate) eigenvalue.

    The shift is nudged off the eigenvalue so the factorization exists.
    Columns of ``against`` (orthonormal) are projected out after every solve,
    which walks through a repeated eigenvalue one direction at a time.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    scale = max(np.abs(M).max(), 1.0)
    rng = np.random.default_rng(seed)
    x = np.ones(n) + START_PERTURBATION * rng.standard_normal(n)
    x = x.astype(complex) if np.iscomplexobj(lam) or lam.imag != 0 else x
    if against is not None and not np.iscomplexobj(x):
        against = against.real
    x = _project_out(x, against)
    if np.linalg.norm(x) <= 1e-8 * np.sqrt(n):
        x = _project_out(rng.standard_normal(n).astype(x.dtype), against)
    delta = 1e-10 * scale
    for _ in range(6):
        shifted = M - (lam + delta) * np.eye(n)
        try:
            y = x / np.linalg.norm(x)
            for _ in range(steps):
                y = _project_out(dense_solve(shifted, y), against)
                y = y / np.linalg.norm(y)
            return y
        except Singular:
            delta *= 100.0
    raise Singular(f"inverse iteration failed near {lam}")


def _clusters(values, tol):
    # runs of (sorted) eigenvalues closer than tol to the first of the run
    groups = []
    for i, lam in enumerate(values):
        if groups and abs(lam - values[groups[-1][0]]) <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def dense_eigs(M, vectors=False, cluster_tol=1e-8):
    """
    Eigenvalues (and optionally eigenvectors) of a real square matrix.

    Args:
        M (numpy.ndarray): real square matrix, order <= 2000
        vectors (bool): also return unit eigenvectors as columns
        cluster_tol (float): relative distance under which eigenvalues count
            as repeated; their eigenvectors are orthonormal to each other

    Returns:
        numpy.ndarray or tuple: eigenvalues ordered by descending real part,
        then descending imaginary part; conjugate pairs are exact
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 0:
        return (np.zeros(0, dtype=complex), np.zeros((0, 0), dtype=complex)) if vectors else np.zeros(0, dtype=complex)
    if n > 2000:
        raise ValueError("dense_eigs handles order <= 2000")
    a = hessenberg(_balance(M.copy()))
    values = _sort_eigs(_francis_qr(a))
    if not vectors:
        return values
    tol = cluster_tol * max(np.abs(values).max(), 1.0)
    vecs = np.zeros((n, n), dtype=complex)
    # upper half-plane columns from earlier clusters, waiting for their conjugate
    pending = []
    for group in _clusters(values, tol):
        found = []
        for j, i in enumerate(group):
            lam = values[i]
            partner = _conjugate_partner(values, pending, lam, tol) if lam.imag < 0 else None
            if partner is not None:
                pending.remove(partner)
                vecs[:, i] = np.conj(vecs[:, partner])
            else:
                basis = np.column_stack(found) if found else None
                target = lam.real if lam.imag == 0 else lam
                vecs[:, i] = inverse_iteration(M, target, seed=DEFAULT_SEED + j, against=basis)
            found.append(vecs[:, i])
        pending.extend(i for i in group if values[i].imag > 0)
    return values, vecs


def _conjugate_partner(values, pending, lam, tol):
    for k in pending:
        if abs(values[k] - np.conj(lam)) <= tol:
            return k
    return None


# Shift-invert Arnoldi

@dataclass
class ArnoldiResult:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    iterations: int
    basis_size: int
    restarts: int = 0


class ShiftInvertOperator:
    """
    (M - sigma W)^{-1} W through a banded LU, in real arithmetic.

    W is the identity unless ``mass`` is given; then the operator targets the
    pencil M v = lambda W v, that is the eigenvalues of W^{-1} M.
    For complex sigma the operator acts on the interleaved real embedding.
    ``deflation`` holds orthonormal real columns whose span is projected out
    on both sides of the solve.

    Args:
        M: real square scipy sparse matrix
        sigma (complex): shift
        perm (numpy.ndarray, optional): bandwidth-reducing ordering
        deflation (numpy.ndarray, optional): n x p orthonormal columns
        mass: real square scipy sparse matrix W, optional
    """

    def __init__(self, M, sigma, perm=None, deflation=None, mass=None):
        self.M = sp.csr_matrix(M)
        self.n = self.M.shape[0]
        self.sigma = complex(sigma)
        self.embedded = self.sigma.imag != 0.0
        self.mass = None if mass is None else sp.csr_matrix(mass)
        self.norm = float(abs(self.M).sum(axis=1).max()) if self.M.nnz else 0.0
        self.mass_norm = 1.0 if self.mass is None else float(abs(self.mass).sum(axis=1).max())
        W = sp.identity(self.n) if self.mass is None else self.mass
        if self.embedded:
            shifted = embed_complex_shift(self.M, self.sigma, self.mass)
            self.applied_mass = None if self.mass is None else sp.kron(self.mass, sp.identity(2)).tocsr()
            if perm is not None:
                perm = np.column_stack([2 * perm, 2 * perm + 1]).ravel()
        else:
            shifted = (self.M - self.sigma.real * W).tocsr()
            self.applied_mass = self.mass
        self.perm = perm
        self.size = shifted.shape[0]
        self.lu = lu_banded(BandedMatrix.from_sparse(shifted, perm))
        self.deflation = None
        if deflation is not None:
            Q = np.asarray(deflation, dtype=float).reshape(self.n, -1)
            if self.embedded:
                Qe = np.zeros((self.size, 2 * Q.shape[1]))
                Qe[0::2, 0::2] = Q
                Qe[1::2, 1::2] = Q
                Q = Qe
            self.deflation = Q
        logger.debug(f"shift-invert operator ready: order {self.size}, sigma {self.sigma}")

    def project(self, x):
        if self.deflation is None:
            return x
        return x - self.deflation @ (self.deflation.T @ x)

    def solve(self, x):
        if self.perm is None:
            return self.lu.solve(x)
        out = np.empty_like(x)
        out[self.perm] = self.lu.solve(x[self.perm])
        return out

    def apply(self, x):
        x = self.project(x)
        if self.applied_mass is not None:
            x = self.applied_mass @ x
        return self.project(self.solve(x))

    def residual(self, lam, u):
        """||M u - lambda W u|| / ||u||."""
        u = np.asarray(u)
        Wu = u if self.mass is None else self.mass @ u
        return float(np.linalg.norm(self.M @ u - lam * Wu) / np.linalg.norm(u))

    def eigenpair(self, theta, y):
        """Map a Ritz pair of the inverse back to (lambda, vector, residual) of M."""
        if not self.embedded:
            lam = self.sigma.real + 1.0 / theta
            lam = complex(lam)
            return lam, y, self.residual(lam, y)
        u = y[0::2] if np.linalg.norm(y[0::2]) >= np.linalg.norm(y[1::2]) else y[1::2]
        best = None
        for shift in (self.sigma, np.conj(self.sigma)):
            lam = complex(shift + 1.0 / theta)
            res = self.residual(lam, u)
            if best is None or res < best[2]:
                best = (lam, u, res)
        return best


def _orthonormal_append(Q, new, tol=1e-10):
    for v in new:
        v = np.asarray(v, dtype=float)
        for _ in range(2):
            if Q.shape[1]:
                v = v - Q @ (Q.T @ v)
        nv = np.linalg.norm(v)
        if nv > tol:
            Q = np.column_stack([Q, v / nv])
    return Q


def arnoldi_process(apply, v0, m, locked=None):
    """
    Arnoldi factorization with classical Gram-Schmidt and one
    reorthogonalization pass.

    Returns:
        tuple: (V, H, steps) with V of shape (N, steps + 1) and H of shape (steps + 1, steps)
    """
    N = v0.shape[0]
    V = np.zeros((N, m + 1))
    H = np.zeros((m + 1, m))
    V[:, 0] = v0 / np.linalg.norm(v0)
    steps = m
    for j in range(m):
        w = apply(V[:, j])
        if locked is not None and locked.shape[1]:
            w = w - locked @ (locked.T @ w)
            w = w - locked @ (locked.T @ w)
        Vj = V[:, :j + 1]
        h = Vj.T @ w
        w = w - Vj @ h
        h2 = Vj.T @ w
        w = w - Vj @ h2
        h += h2
        H[:j + 1, j] = h
        beta = np.linalg.norm(w)
        H[j + 1, j] = beta
        if beta <= 1e-14 * max(np.linalg.norm(h), 1e-300):
            steps = j + 1
            break
        V[:, j + 1] = w / beta
    return V[:, :steps + 1], H[:steps + 1, :steps], steps


def _start_vector(N, seed):
    rng = np.random.default_rng(seed)
    v = np.ones(N) / np.sqrt(N)
    return v + START_PERTURBATION * rng.standard_normal(N)


def shift_invert_arnoldi(op, k, m=None, tol=1e-8, max_restarts=40, seed=DEFAULT_SEED):
    """
    Eigenvalues of M nearest the shift of ``op``.

    Args:
        op (ShiftInvertOperator): factored (M - sigma)^{-1}
        k (int): number of wanted eigenvalues of M
        m (int): Krylov basis size (raised to at least 2k + 8)
        tol (float): relative residual tolerance against ||M||
        max_restarts (int): restart cap

    Returns:
        ArnoldiResult: the k converged values nearest sigma with their vectors

    Raises:
        NotConverged: with the partial result attached
    """
    want = 2 * k if op.embedded else k
    defl = 0 if op.deflation is None else op.deflation.shape[1]
    available = op.size - defl
    m = max(m or 0, 2 * want + 8)
    m = min(m, available)
    threshold = tol * max(op.norm, 1e-300)

    Z = np.zeros((op.size, 0))
    v = op.project(_start_vector(op.size, seed))
    iterations = 0
    restarts = 0
    for restarts in range(max_restarts + 1):
        v = op.project(v)
        if Z.shape[1]:
            v = v - Z @ (Z.T @ v)
        if np.linalg.norm(v) == 0.0:
            v = op.project(_start_vector(op.size, seed + restarts + 1))
        size = min(m, available - Z.shape[1])
        if size <= 0:
            break
        V, H, steps = arnoldi_process(op.apply, v, size, locked=Z)
        iterations += steps
        theta, S = dense_eigs(H[:steps, :steps], vectors=True)
        order = np.argsort(-np.abs(theta), kind="stable")
        need = want - Z.shape[1]
        beta = H[steps, steps - 1] if H.shape[0] > steps else 0.0
        converged, pending = [], []
        for i in order[:need]:
            y = V[:, :steps] @ S[:, i]
            y = y / np.linalg.norm(y)
            # Krylov residual of the inverse, pushed back to a residual of M
            krylov = abs(beta * S[steps - 1, i]) / np.linalg.norm(S[:, i])
            res = (op.norm + abs(op.sigma) * op.mass_norm) * krylov / max(abs(theta[i]), 1e-300)
            if res <= 0.1 * threshold:
                converged.extend([y.real, y.imag] if np.abs(y.imag).max() > 1e-12 else [y.real])
            else:
                pending.append(y)
        Z = _orthonormal_append(Z, converged)
        logger.debug(f"restart {restarts}: {Z.shape[1]}/{want} locked directions")
        if Z.shape[1] >= want or not pending:
            if Z.shape[1] >= want or steps < size:
                break
        if pending:
            combo = np.sum(pending, axis=0)
            v = combo.real + combo.imag
        else:
            v = _start_vector(op.size, seed + restarts + 1)

    result = _rayleigh_ritz(op, Z, iterations, m, restarts)
    good = result.residuals <= threshold
    if good.sum() < k:
        raise NotConverged(f"{int(good.sum())} of {k} eigenvalues converged near sigma = {op.sigma}", partial=result)
    keep = np.flatnonzero(good)[:k] if not op.embedded else np.flatnonzero(good)
    return ArnoldiResult(result.values[keep], result.vectors[:, keep], result.residuals[keep],
                         iterations, m, restarts)


def _rayleigh_ritz(op, Z, iterations, m, restarts):
    if Z.shape[1] == 0:
        empty = np.zeros(0, dtype=complex)
        return ArnoldiResult(empty, np.zeros((op.n, 0), dtype=complex), np.zeros(0), iterations, m, restarts)
    W = np.column_stack([op.apply(Z[:, j]) for j in range(Z.shape[1])])
    G = Z.T @ W
    theta, S = dense_eigs(G, vectors=True)
    pairs = []
    for i in range(theta.shape[0]):
        if theta[i] == 0:
            continue
        y = Z @ S[:, i]
        lam, u, res = op.eigenpair(theta[i], y / np.linalg.norm(y))
        pairs.append((lam, u / np.linalg.norm(u), res))
    pairs.sort(key=lambda p: (abs(p[0] - op.sigma), -p[0].imag))
    values = np.array([p[0] for p in pairs], dtype=complex)
    vectors = np.column_stack([p[1] for p in pairs]).astype(complex) if pairs else np.zeros((op.n, 0), dtype=complex)
    residuals = np.array([p[2] for p in pairs])
    return ArnoldiResult(values, vectors, residuals, iterations, m, restarts)


# Smallest singular value

@dataclass
class SingularValueEstimate:
    value: float
    lower: float
    upper: float
    iterations: int


def smallest_singular_value(M, shift=0.0, perm=None, iterations=200, rtol=1e-6, seed=DEFAULT_SEED):
    """
    Smallest singular value of (M - shift I) by inverse iteration on the
    normal equations, using separate factorizations of the matrix and its
    transpose.

    Args:
        M: real square scipy sparse matrix
        shift (complex): spectral parameter
        perm (numpy.ndarray, optional): bandwidth-reducing ordering

    Returns:
        SingularValueEstimate: estimate with its Rayleigh-quotient bracket
    """
    M = sp.csr_matrix(M)
    n = M.shape[0]
    shift = complex(shift)
    if shift.imag != 0.0:
        E = embed_complex_shift(M, shift)
        if perm is not None:
            perm = np.column_stack([2 * perm, 2 * perm + 1]).ravel()
    else:
        E = (M - shift.real * sp.identity(n)).tocsr()
    try:
        lu = lu_banded(BandedMatrix.from_sparse(E, perm))
        lu_t = lu_banded(BandedMatrix.from_sparse(E.T.tocsr(), perm))
    except Singular:
        logger.info(f"matrix singular at shift {shift}; smallest singular value is 0")
        return SingularValueEstimate(0.0, 0.0, 0.0, 0)

    def solve(factor, x):
        if perm is None:
            return factor.solve(x)
        out = np.empty_like(x)
        out[perm] = factor.solve(x[perm])
        return out

    x = _start_vector(E.shape[0], seed)
    x /= np.linalg.norm(x)
    rq_prev = None
    rq = res = 0.0
    it = 0
    for it in range(1, iterations + 1):
        w = solve(lu_t, solve(lu, x))
        rq = float(x @ w)
        res = float(np.linalg.norm(w - rq * x))
        x = w / np.linalg.norm(w)
        if rq_prev is not None and abs(rq - rq_prev) <= rtol * rq:
            break
        rq_prev = rq
    upper = 1.0 / np.sqrt(rq)
    lower = 1.0 / np.sqrt(rq + res)
    return SingularValueEstimate(upper, lower, upper, it)
