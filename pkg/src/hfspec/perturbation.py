"""Closed-form hyperfine corrections: second order in the dipolar coupling,
first order in the quadrupolar coupling.

The correction of an electron-nuclear level (n, sigma, m_z) relative to its
parent crystal-field level is

    delta = a_j <n,sigma|J_z|n,sigma> m_z
          + sum over other CF states phi of (a_j^2 / dE) *
              [ |<phi|J_z|psi>|^2 m_z^2
                + 1/4 |<phi|J-|psi>|^2 (I(I+1) - m_z(m_z+1))
                + 1/4 |<phi|J+|psi>|^2 (I(I+1) - m_z(m_z-1)) ]
          + b_quad <psi|3J_z^2 - J(J+1)|psi> / (4 I(2I-1) J(2J-1)) *
              (3 m_z^2 - I(I+1))

with dE = E_n - E_phi.  The nuclear ladder factors are tied to their
electronic channel: J+ transfers one quantum from the nucleus to the electron
(intermediate m_z - 1), J- the reverse.  S4 selection rules make most matrix
elements vanish, which is what the irrep-resolved forms below spell out.

Passing a truncated ``levels`` list restricts the intermediate-state sums,
which is how the three-level model built from the K_{i,j} terms is obtained.
All energies in cm^-1.
"""

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .angular import SpinSystem, build_jplus, build_jz
from .hamiltonian import CFLevel, HyperfineConstants, hf_levels_exact


@dataclass(frozen=True)
class LambdaCoefficients:
    """Twice the m_z^2 coefficient of the hyperfine correction, per CF level.

    lambda1 is the ground doublet, lambda2 and lambda3 the first two excited
    singlets.  In the three-level model with no quadrupolar coupling the
    identity lambda2 + lambda3 = -2 lambda1 holds exactly.
    """

    lambda1: float
    lambda2: float
    lambda3: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)


@dataclass(frozen=True)
class KCorrection:
    """Perturbative energy correction of level i due to level j at one m_z."""

    i: int
    j: int
    m_z: float
    value: float


def _level(levels: list[CFLevel], n: int) -> CFLevel:
    for lv in levels:
        if lv.n == n:
            return lv
    raise ValueError(f"level {n} not present in the supplied level list")


def _operators(levels: list[CFLevel]):
    dim = len(levels[0].vectors[+1])
    j = (dim - 1) / 2.0
    jz = build_jz(j).matrix
    jp = build_jplus(j).matrix
    return j, jz, jp, jp.conj().T


def _ladder_factors(i: float, m_z: float) -> tuple[float, float]:
    """Nuclear factors paired with the J- and J+ channels, in that order."""
    ii1 = i * (i + 1)
    return ii1 - m_z * (m_z + 1), ii1 - m_z * (m_z - 1)


def _quadrupole_term(
    vec: NDArray[np.complex128], jz, j: float, i: float, b_quad: float, m_z: float
) -> float:
    if b_quad == 0.0:
        return 0.0
    o20 = float(np.real(vec.conj() @ (3 * jz @ jz) @ vec)) - j * (j + 1)
    denom = 4 * i * (2 * i - 1) * j * (2 * j - 1)
    return b_quad * o20 / denom * (3 * m_z**2 - i * (i + 1))


def delta_full(
    n: int,
    sigma: int,
    m_z: float,
    levels: list[CFLevel],
    hf: HyperfineConstants,
    system: SpinSystem,
) -> float:
    """General second-order correction of level (n, sigma) at nuclear projection m_z.

    Sums over every branch of every other level in ``levels``; reduces to the
    doublet and singlet forms once the selection rules zero the forbidden
    matrix elements.
    """
    level = _level(levels, n)
    if sigma not in level.vectors:
        raise ValueError(f"level {n} has no sigma={sigma:+d} branch")
    j, jz, jp, jm = _operators(levels)
    psi = level.vectors[sigma]

    delta = hf.a_j * level.jz_branch(sigma) * m_z
    for other in levels:
        if other.n == n:
            continue
        de = level.energy - other.energy
        if abs(de) < 1e-9:
            raise ZeroDivisionError(
                f"levels {n} and {other.n} are degenerate: perturbative "
                "correction diverges"
            )
        fm, fp = _ladder_factors(system.i, m_z)
        for sig2 in other.branches():
            phi = other.vectors[sig2]
            el_z = abs(np.vdot(phi, jz @ psi)) ** 2
            el_m = abs(np.vdot(phi, jm @ psi)) ** 2
            el_p = abs(np.vdot(phi, jp @ psi)) ** 2
            delta += (hf.a_j**2 / de) * (
                el_z * m_z**2 + 0.25 * el_m * fm + 0.25 * el_p * fp
            )
    return delta + _quadrupole_term(psi, jz, j, system.i, hf.b_quad, m_z)


def delta_doublet(
    m_z: float,
    sigma: int,
    levels: list[CFLevel],
    hf: HyperfineConstants,
    system: SpinSystem,
) -> float:
    """Ground-doublet correction, written out by irrep of the admixed level.

    First order a_j <J_z> m_z; G1 and G2 singlets enter through one ladder
    channel each (the other vanishes by S4), the remaining doublets through
    J_z only.  Satisfies delta(+1, m) = delta(-1, -m).
    """
    ground = _level(levels, 1)
    if ground.degeneracy != 2:
        raise ValueError("ground level is not a doublet")
    if sigma not in ground.vectors:
        raise ValueError(f"ground level has no sigma={sigma:+d} branch")
    j, jz, jp, jm = _operators(levels)
    psi = ground.vectors[sigma]
    fm, fp = _ladder_factors(system.i, m_z)

    delta = hf.a_j * ground.jz_branch(sigma) * m_z
    for other in levels:
        if other.n == 1:
            continue
        de = ground.energy - other.energy
        if abs(de) < 1e-9:
            raise ZeroDivisionError(f"level {other.n} degenerate with the ground level")
        if other.irrep in ("G1", "G2"):
            phi = other.vectors[+1]
            el_m = abs(np.vdot(phi, jm @ psi)) ** 2
            el_p = abs(np.vdot(phi, jp @ psi)) ** 2
            delta += (hf.a_j**2 / (4 * de)) * (el_m * fm + el_p * fp)
        else:
            for sig2 in other.branches():
                phi = other.vectors[sig2]
                delta += (hf.a_j**2 / de) * abs(np.vdot(phi, jz @ psi)) ** 2 * m_z**2
    return delta + _quadrupole_term(psi, jz, j, system.i, hf.b_quad, m_z)


def delta_singlet(
    n: int,
    m_z: float,
    levels: list[CFLevel],
    hf: HyperfineConstants,
    system: SpinSystem,
) -> float:
    """Correction of one of the two lowest excited singlets (n = 2 or 3).

    No first-order shift (vanishing moment).  Same-irrep singlets contribute
    through J_z; each doublet contributes through both ladder channels, whose
    nuclear factors combine to I(I+1) - m_z^2, making the result even in m_z.
    The dominant term is the repulsion from the ground doublet.
    """
    if n not in (2, 3):
        raise ValueError(f"singlet correction is defined for n = 2 or 3, got n={n}")
    level = _level(levels, n)
    if level.degeneracy != 1:
        raise ValueError(f"level {n} is not a singlet")
    j, jz, jp, jm = _operators(levels)
    psi = level.vectors[+1]
    fm, fp = _ladder_factors(system.i, m_z)

    delta = 0.0
    for other in levels:
        if other.n == n:
            continue
        de = level.energy - other.energy
        if abs(de) < 1e-9:
            raise ZeroDivisionError(f"level {other.n} degenerate with level {n}")
        if other.degeneracy == 1:
            if other.irrep == level.irrep:
                phi = other.vectors[+1]
                delta += (hf.a_j**2 / de) * abs(np.vdot(phi, jz @ psi)) ** 2 * m_z**2
        else:
            for sig2 in other.branches():
                phi = other.vectors[sig2]
                el_m = abs(np.vdot(phi, jm @ psi)) ** 2
                el_p = abs(np.vdot(phi, jp @ psi)) ** 2
                delta += (hf.a_j**2 / (4 * de)) * (el_m * fm + el_p * fp)
    return delta + _quadrupole_term(psi, jz, j, system.i, hf.b_quad, m_z)


def k_correction(
    i: int,
    j: int,
    m_z: float,
    levels: list[CFLevel],
    a_j: float,
    system: SpinSystem,
) -> float:
    """Three-level model term K_{i,j}: correction of level i due to level j.

    K_{1,1} is the first-order shift of the sigma = +1 ground branch; the
    cross terms obey K_{i,j} = -K_{j,i} exactly.  Only indices in {1, 2, 3}
    are defined, with (i, i) allowed for i = 1 only.
    """
    if i not in (1, 2, 3) or j not in (1, 2, 3):
        raise ValueError(f"K indices must lie in 1..3, got ({i}, {j})")
    if i == j and i != 1:
        raise ValueError(f"K_({i},{i}) is not defined")
    _, jz_op, jp, jm = _operators(levels)
    ground = _level(levels, 1)

    if (i, j) == (1, 1):
        return a_j * ground.jz_branch(+1) * m_z
    if i == 1:
        target = _level(levels, j)
        element = abs(np.vdot(target.vectors[+1], jm @ ground.vectors[+1])) ** 2
        de = ground.energy - target.energy
        ii1 = system.i * (system.i + 1)
        return (a_j**2 / 4) * (element / de) * (ii1 - m_z * (m_z + 1))
    if (i, j) == (2, 3):
        lv2, lv3 = _level(levels, 2), _level(levels, 3)
        element = abs(np.vdot(lv3.vectors[+1], jz_op @ lv2.vectors[+1])) ** 2
        return a_j**2 * element / (lv2.energy - lv3.energy) * m_z**2
    return -k_correction(j, i, m_z, levels, a_j, system)


def k_correction_record(
    i: int, j: int, m_z: float, levels: list[CFLevel], a_j: float, system: SpinSystem
) -> KCorrection:
    return KCorrection(i, j, m_z, k_correction(i, j, m_z, levels, a_j, system))


def quadratic_m2_coefficient(
    m_values: NDArray[np.float64], values: NDArray[np.float64]
) -> float:
    """Coefficient of m^2 from a least-squares quadratic a + b m + c m^2.

    Exact for data that is genuinely quadratic in m; on the symmetric
    half-integer grid the odd part drops into b without biasing c.
    """
    m_values = np.asarray(m_values, dtype=float)
    values = np.asarray(values, dtype=float)
    design = np.vstack([np.ones_like(m_values), m_values, m_values**2]).T
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    return float(coef[2])


def lambda_from_model(
    levels: list[CFLevel], hf: HyperfineConstants, system: SpinSystem
) -> LambdaCoefficients:
    """lambda_n = 2 x (m_z^2 coefficient) of the perturbative corrections.

    Evaluated by exact quadratic regression of delta over all 2i+1 nuclear
    projections; the doublet uses its sigma = +1 branch.  Restricting
    ``levels`` restricts the model accordingly.
    """
    m = system.m_i
    out = []
    for n in (1, 2, 3):
        deltas = np.array([delta_full(n, +1, mz, levels, hf, system) for mz in m])
        out.append(2 * quadratic_m2_coefficient(m, deltas))
    return LambdaCoefficients(*out)


def lambda_from_exact(
    params, hf: HyperfineConstants, system: SpinSystem
) -> LambdaCoefficients:
    """Same coefficients extracted from the fully diagonalized spectrum."""
    hf_levels = hf_levels_exact(params, hf, system)
    m = system.m_i
    out = []
    for n in (1, 2, 3):
        corr = {h.m_z: h.correction for h in hf_levels if h.n == n and h.sigma == +1}
        values = np.array([corr[mz] for mz in m])
        out.append(2 * quadratic_m2_coefficient(m, values))
    return LambdaCoefficients(*out)
