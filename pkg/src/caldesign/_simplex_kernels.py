"""Hot tableau-pivot loop for the simplex solver, in two interchangeable builds.

``pivot_loop_numba`` is the jitted kernel used by default; ``pivot_loop_numpy``
is a vectorized twin kept for environments without numba and selected via the
``CALDESIGN_DISABLE_NUMBA`` env flag (see :mod:`caldesign.lp_core`).  Both
implement the identical pivot rule -- Bland's smallest-index entering column,
min-ratio leaving row with smallest-basis-index tie break -- so results match
bit for bit.

Tableau layout: ``T`` is (rows+1) x (cols+1); the last row carries reduced
costs (maximization convention, optimal when none is below ``-tol_cost``) and
the last column carries the right-hand side / current objective value.

Return codes: 0 optimal, 1 unbounded, 2 iteration cap hit.
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

RATIO_TIE_TOL = 1e-12


def pivot_loop_numpy(T, basis, tol_cost, tol_piv, max_iter):
    rows = T.shape[0] - 1
    cols = T.shape[1] - 1
    rhs = cols
    for it in range(max_iter):
        improving = np.flatnonzero(T[rows, :cols] < -tol_cost)
        if improving.size == 0:
            return 0, it
        enter = int(improving[0])
        col = T[:rows, enter]
        eligible = col > tol_piv
        if not np.any(eligible):
            return 1, it
        ratios = np.full(rows, np.inf)
        ratios[eligible] = T[:rows, rhs][eligible] / col[eligible]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + RATIO_TIE_TOL)
        leave = int(ties[np.argmin(basis[ties])])

        T[leave] /= T[leave, enter]
        factors = T[:, enter].copy()
        factors[leave] = 0.0
        T -= np.outer(factors, T[leave])
        T[:, enter] = 0.0
        T[leave, enter] = 1.0
        basis[leave] = enter
    return 2, max_iter


def _pivot_loop_plain(T, basis, tol_cost, tol_piv, max_iter):
    rows = T.shape[0] - 1
    cols = T.shape[1] - 1
    rhs = cols
    it = 0
    while it < max_iter:
        enter = -1
        for j in range(cols):
            if T[rows, j] < -tol_cost:
                enter = j
                break
        if enter < 0:
            return 0, it

        best = np.inf
        for r in range(rows):
            a = T[r, enter]
            if a > tol_piv:
                ratio = T[r, rhs] / a
                if ratio < best:
                    best = ratio
        if best == np.inf:
            return 1, it
        leave = -1
        leave_var = 1 << 60
        for r in range(rows):
            a = T[r, enter]
            if a > tol_piv:
                ratio = T[r, rhs] / a
                if ratio <= best + RATIO_TIE_TOL and basis[r] < leave_var:
                    leave_var = basis[r]
                    leave = r

        piv = T[leave, enter]
        for j in range(cols + 1):
            T[leave, j] /= piv
        for r in range(rows + 1):
            if r != leave:
                f = T[r, enter]
                if f != 0.0:
                    for j in range(cols + 1):
                        T[r, j] -= f * T[leave, j]
        for r in range(rows + 1):
            T[r, enter] = 0.0
        T[leave, enter] = 1.0
        basis[leave] = enter
        it += 1
    return 2, max_iter


if HAVE_NUMBA:
    pivot_loop_numba = njit(cache=True)(_pivot_loop_plain)
else:  # pragma: no cover
    pivot_loop_numba = None
