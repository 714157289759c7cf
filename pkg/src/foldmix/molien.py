"""Molien series: the per-degree dimension budget of invariant coordinates.

Two routes are provided and must agree on enumerated families: the generic
group average of 1/det(I - t g), and closed-form generating functions per
family.  Platonic rotation groups and G(m,p,n) exist in closed form only;
weighted cyclic groups go through the generic average of their real
realization.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

INTEGRALITY_TOL = 1e-6


@dataclass
class MolienSeries:
    """coeffs[k] = dim of the degree-k invariant subspace."""

    coeffs: np.ndarray
    source: str

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.int64)
        if self.coeffs[0] != 1 or np.any(self.coeffs < 0):
            raise ValueError("Molien coefficients must be nonnegative with coeffs[0] = 1")

    def __getitem__(self, k):
        return int(self.coeffs[k])


class DimBudget(NamedTuple):
    inclusive: int  # sum of coeffs[0..m_star]
    exclusive: int  # the same minus the degree-0 constant


def _poly_mul(a, b, trunc):
    out = [0] * (trunc + 1)
    for i, ai in enumerate(a):
        if i > trunc or ai == 0:
            continue
        for j, bj in enumerate(b):
            if i + j > trunc:
                break
            out[i + j] += ai * bj
    return out


def _series_inverse(a, trunc):
    # reciprocal of a power series with a[0] = 1; integer-exact
    s = [0] * (trunc + 1)
    s[0] = 1
    for n in range(1, trunc + 1):
        acc = 0
        for k in range(1, min(n, len(a) - 1) + 1):
            acc += a[k] * s[n - k]
        s[n] = -acc
    return s


def _series_ratio(num, den, trunc):
    return _poly_mul(num, _series_inverse(den, trunc), trunc)


def _one_minus_t_pow(k):
    p = [0] * (k + 1)
    p[0], p[k] = 1, -1
    return p


def _charpoly_reciprocal(element, p, trunc):
    """Power series of 1/det(I - t g) up to degree trunc."""
    if element.is_signed_perm:
        # cycle-type recipe: det(I - tg) = prod over cycles (1 - s_c t^{l_c}),
        # exact in integer arithmetic
        perm, signs = element.perm, element.signs
        seen = np.zeros(p, dtype=bool)
        det = [1]
        for start in range(p):
            if seen[start]:
                continue
            length, sign, j = 0, 1, start
            while not seen[j]:
                seen[j] = True
                sign *= int(signs[j])
                j = int(perm[j])
                length += 1
            factor = [0] * (length + 1)
            factor[0], factor[length] = 1, -sign
            det = _poly_mul(det, factor, trunc)
        return np.array(_series_inverse(det, trunc), dtype=float)
    eigs = np.linalg.eigvals(element.matrix)
    # det(I - t g) = prod (1 - lambda t); np.poly gives exactly these
    # coefficients in order of ascending power of t
    a = np.real(np.poly(eigs))
    s = np.zeros(trunc + 1)
    s[0] = 1.0
    for n in range(1, trunc + 1):
        acc = 0.0
        for k in range(1, min(n, p) + 1):
            acc += a[k] * s[n - k]
        s[n] = -acc
    return s


def molien_generic(group, M_max):
    """Group-average Molien coefficients up to degree M_max."""
    if M_max < 0:
        raise ValueError("M_max must be >= 0")
    total = np.zeros(M_max + 1)
    for e in group.elements:
        total += _charpoly_reciprocal(e, group.p, M_max)
    avg = total / group.order
    rounded = np.rint(avg)
    if np.max(np.abs(avg - rounded)) > INTEGRALITY_TOL:
        raise ValueError("non-integer Molien coefficients: group enumeration is broken")
    return MolienSeries(rounded, "generic")


_PLATONIC = {
    "T": ((2, 3, 4), 6),
    "O": ((2, 4, 6), 9),
    "I": ((2, 6, 10), 15),
}


def molien_family(family, params, M_max):
    """Closed-form series for the named family, expanded to degree M_max.

    family in {"sign_flips", "sym", "hyperoctahedral", "dihedral",
    "platonic", "gmpn"}; params as in build_group, "platonic" takes "T",
    "O" or "I", and "gmpn" takes (m, p, n).
    """
    if M_max < 0:
        raise ValueError("M_max must be >= 0")
    num = [1]
    if family == "sign_flips":
        (d,) = params if isinstance(params, tuple) else (params,)
        den = [1]
        for _ in range(d):
            den = _poly_mul(den, _one_minus_t_pow(2), M_max)
    elif family == "sym":
        (d,) = params if isinstance(params, tuple) else (params,)
        den = [1]
        for i in range(1, d + 1):
            den = _poly_mul(den, _one_minus_t_pow(i), M_max)
    elif family == "hyperoctahedral":
        (d,) = params if isinstance(params, tuple) else (params,)
        den = [1]
        for i in range(1, d + 1):
            den = _poly_mul(den, _one_minus_t_pow(2 * i), M_max)
    elif family == "dihedral":
        (m,) = params if isinstance(params, tuple) else (params,)
        if m < 2:
            raise ValueError("dihedral requires m >= 2")
        den = _poly_mul(_one_minus_t_pow(2), _one_minus_t_pow(m), M_max)
    elif family == "platonic":
        tag = params[0] if isinstance(params, tuple) else params
        if tag not in _PLATONIC:
            raise ValueError("platonic tag must be one of T, O, I")
        degrees, disc = _PLATONIC[tag]
        num = [0] * (disc + 1)
        num[0], num[disc] = 1, 1
        den = [1]
        for k in degrees:
            den = _poly_mul(den, _one_minus_t_pow(k), M_max)
    elif family == "gmpn":
        m, p, n = params
        if m < 1 or n < 1 or p < 1 or m % p != 0:
            raise ValueError("G(m,p,n) requires m, n >= 1 and p | m")
        den = [1]
        for i in range(1, n):
            den = _poly_mul(den, _one_minus_t_pow(i * m), M_max)
        den = _poly_mul(den, _one_minus_t_pow(m * n // p), M_max)
    else:
        raise ValueError(f"no closed form for family {family!r}")
    coeffs = _series_ratio(num, den, M_max)
    return MolienSeries(np.array(coeffs), f"closed_form({family})")


def dim_budget(series, m_star):
    """Partial coefficient sum through degree m_star.

    The working budget of the toolkit excludes degree 0 (constants carry no
    information); both counts are returned.
    """
    if m_star >= len(series.coeffs):
        raise ValueError("m_star exceeds the expanded degree")
    inclusive = int(np.sum(series.coeffs[:m_star + 1]))
    return DimBudget(inclusive, inclusive - 1)
