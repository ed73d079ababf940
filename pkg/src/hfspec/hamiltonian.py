"""Crystal-field and electron-nuclear Hamiltonians, diagonalization, labelling.

Builds H_CF as a linear combination of Stevens operators, the electron-nuclear
coupling H_HF (dipolar term A_J J.I plus quadrupolar term in (J.I)^2) on the
product space, and classifies eigenstates.

Symmetry conventions
--------------------
With an S4-symmetric crystal field, every H_CF eigenvector has support on a
single residue class of M mod 4 ("sector").  Sector 0 states carry the
identity irrep (labelled G1 here), sector 2 the other one-dimensional irrep
(G2), and the sectors 1 and 3 pair up into time-conjugate doublets (G34).
Within a doublet the two members are distinguished by a branch index sigma:
sigma = +1 is the sector-3 member, which for the reference Ho3+:LiYF4
parameters is the ground-state branch with <J_z> = +5.40.  The sigma = -1
member has the opposite moment.

Energies are reported relative to the lowest crystal-field eigenvalue
throughout, for hyperfine levels as well, so that hyperfine corrections read
directly as (energy - parent CF energy).
"""

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linear_sum_assignment

from .angular import OperatorMatrix, SpinSystem, build_jplus, build_jz, build_stevens

#: sector (M mod 4) of the sigma = +1 doublet branch
SIGMA_PLUS_SECTOR = 3
SIGMA_MINUS_SECTOR = 1

#: CF levels closer than this are treated as degenerate (doublets)
DEGENERACY_TOL = 1e-6
#: maximum tolerated eigenvector weight outside its M mod 4 sector
SECTOR_PURITY_TOL = 1e-8


class SymmetryError(ValueError):
    """An eigenvector mixes M mod 4 sectors: the Hamiltonian breaks S4."""


class LabelingError(RuntimeError):
    """Electron-nuclear eigenstates cannot be assigned unique (n, sigma, m_z) labels."""


@dataclass(frozen=True)
class CFParameters:
    """Crystal-field coefficients B_k^q in cm^-1 multiplying the Stevens operators.

    b4m4 defaults to zero: with one q = -4 coefficient gauged away by the
    orientation freedom about the c-axis, the remaining set is what a
    transition-energy fit can determine.
    """

    b20: float
    b40: float
    b44: float
    b60: float
    b64: float
    b6m4: float = 0.0
    b4m4: float = 0.0

    def __post_init__(self) -> None:
        for name, value in self.items():
            if not np.isfinite(value):
                raise ValueError(f"CF parameter {name} must be finite, got {value}")

    def items(self) -> list[tuple[str, float]]:
        return [(name, getattr(self, name)) for name in
                ("b20", "b40", "b44", "b4m4", "b60", "b64", "b6m4")]

    def terms(self) -> list[tuple[int, int, float]]:
        """(k, q, coefficient) triplets in a fixed order."""
        return [
            (2, 0, self.b20),
            (4, 0, self.b40),
            (4, 4, self.b44),
            (4, -4, self.b4m4),
            (6, 0, self.b60),
            (6, 4, self.b64),
            (6, -4, self.b6m4),
        ]


@dataclass(frozen=True)
class HyperfineConstants:
    """Dipolar (a_j) and quadrupolar (b_quad) coupling constants in cm^-1."""

    a_j: float
    b_quad: float = 0.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.a_j) and np.isfinite(self.b_quad)):
            raise ValueError("hyperfine constants must be finite")


@dataclass(frozen=True)
class CFLevel:
    """One crystal-field level: energy, irrep, and doublet branch data.

    ``vectors`` maps the branch index sigma to the eigenvector over the M
    basis; singlets carry only sigma = +1.  ``jz_expect`` is <J_z> of the
    sigma = +1 branch (signed; the sigma = -1 branch has the opposite sign).
    """

    n: int
    energy: float
    irrep: str
    degeneracy: int
    jz_expect: float
    vectors: dict[int, NDArray[np.complex128]]

    def jz_branch(self, sigma: int) -> float:
        """<J_z> of one branch; zero for singlets up to numerical noise."""
        if self.degeneracy == 1:
            return self.jz_expect
        return self.jz_expect if sigma == +1 else -self.jz_expect

    def branches(self) -> tuple[int, ...]:
        return tuple(sorted(self.vectors, reverse=True))


@dataclass(frozen=True)
class HFLevel:
    """One electron-nuclear level labelled (n, sigma, m_z).

    ``energy`` is relative to the crystal-field ground level; ``correction``
    is energy minus the parent CF energy, i.e. the hyperfine shift.
    """

    n: int
    sigma: int
    m_z: float
    energy: float
    correction: float


def build_cf_hamiltonian(params: CFParameters, system: SpinSystem) -> OperatorMatrix:
    """H_CF = sum over (k, q) of B_k^q O_k^q on the 2j+1 electronic space."""
    dim = system.dim_j
    mat = np.zeros((dim, dim), dtype=complex)
    for k, q, value in params.terms():
        if value != 0.0:
            mat = mat + value * build_stevens(k, q, system.j).matrix
    return OperatorMatrix(mat, tuple(system.m_j))


def build_hf_hamiltonian(hf: HyperfineConstants, system: SpinSystem) -> OperatorMatrix:
    """Electron-nuclear coupling on the (2j+1)(2i+1) product space.

    H = a_j J.I + b_quad / (2 I(2I-1) J(2J-1)) *
        (3 (J.I)^2 + 3/2 (J.I) - I(I+1) J(J+1))

    with J.I = J_z I_z + (J+ I- + J- I+)/2.  The product basis is ordered
    (M, m_z) lexicographically, both ascending.  The quadrupolar term is
    undefined for i < 1 or j < 1 and requires b_quad = 0 there.
    """
    j, i = system.j, system.i
    jz = build_jz(j).matrix
    jp = build_jplus(j).matrix
    iz = build_jz(i).matrix
    ip = build_jplus(i).matrix
    jdoti = (
        np.kron(jz, iz)
        + 0.5 * (np.kron(jp, ip.conj().T) + np.kron(jp.conj().T, ip))
    )
    mat = hf.a_j * jdoti
    if hf.b_quad != 0.0:
        denom = 2 * i * (2 * i - 1) * j * (2 * j - 1)
        if denom == 0.0:
            raise ValueError(
                f"quadrupolar coupling requires i >= 1 and j >= 1, got j={j}, i={i}"
            )
        eye = np.eye(system.dim)
        mat = mat + (hf.b_quad / denom) * (
            3 * jdoti @ jdoti + 1.5 * jdoti - i * (i + 1) * j * (j + 1) * eye
        )
    basis = tuple((mj, mi) for mj in system.m_j for mi in system.m_i)
    return OperatorMatrix(mat, basis)


def diagonalize(
    op: OperatorMatrix, hermitian_tol: float = 1e-10
) -> tuple[NDArray[np.float64], NDArray[np.complex128]]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian operator.

    Deterministic for identical input.  Raises ValueError if the matrix is
    not Hermitian within ``hermitian_tol``.
    """
    defect = op.hermiticity_defect()
    if defect > hermitian_tol:
        raise ValueError(f"matrix is not Hermitian: max |A - A^dagger| = {defect:.3e}")
    eigvals, eigvecs = np.linalg.eigh(op.matrix)
    return eigvals, eigvecs


def _sectors(system: SpinSystem) -> NDArray[np.int64]:
    return np.mod(system.m_j, 4).astype(int)


def _sector_weights(vec: NDArray[np.complex128], sectors: NDArray[np.int64]) -> NDArray[np.float64]:
    return np.array([np.sum(np.abs(vec[sectors == s]) ** 2) for s in range(4)])


def _split_cluster_by_sector(
    vecs: NDArray[np.complex128], sectors: NDArray[np.int64]
) -> dict[int, list[NDArray[np.complex128]]]:
    """Resolve a degenerate eigenspace into sector-pure orthonormal vectors.

    Projecting the cluster basis onto each M mod 4 sector and keeping the
    left singular vectors with singular value near 1 recovers the symmetry-
    adapted basis regardless of how the eigensolver mixed degenerate states.
    For a G34 doublet this coincides with diagonalizing J_z on the pair.
    """
    size = vecs.shape[1]
    members: dict[int, list[NDArray[np.complex128]]] = {}
    total = 0
    for s in range(4):
        proj = np.zeros_like(vecs)
        proj[sectors == s, :] = vecs[sectors == s, :]
        u, sv, _ = np.linalg.svd(proj, full_matrices=False)
        count = int(np.sum(sv > 0.5))
        if count:
            members[s] = [u[:, c] for c in range(count)]
            total += count
    if total != size:
        raise SymmetryError(
            "degenerate eigenspace does not decompose into M mod 4 sectors "
            f"(cluster size {size}, sector members {total}); "
            "the Hamiltonian breaks S4 symmetry"
        )
    return members


def _check_purity(vec: NDArray[np.complex128], sectors: NDArray[np.int64]) -> int:
    weights = _sector_weights(vec, sectors)
    sector = int(np.argmax(weights))
    if 1.0 - weights[sector] > SECTOR_PURITY_TOL:
        raise SymmetryError(
            f"eigenvector has weight {1.0 - weights[sector]:.3e} outside its "
            f"M mod 4 sector; the Hamiltonian breaks S4 symmetry"
        )
    return sector


def _fix_phase(vec: NDArray[np.complex128]) -> NDArray[np.complex128]:
    """Rotate the global phase so the largest component is real positive."""
    k = int(np.argmax(np.abs(vec)))
    phase = vec[k] / abs(vec[k])
    return vec / phase


def classify_levels(
    eigvals: NDArray[np.float64],
    eigvecs: NDArray[np.complex128],
    system: SpinSystem,
    degeneracy_tol: float = DEGENERACY_TOL,
) -> list[CFLevel]:
    """Group a crystal-field eigensystem into levels with irrep and branch labels.

    Eigenvalues within ``degeneracy_tol`` form one level.  Each level is
    resolved into sector-pure members; sectors 0 and 2 give G1 and G2
    singlets, a sector 1/3 pair gives a G34 doublet whose sigma = +1 branch
    is the sector-3 member.  Energies are shifted so the ground level is 0.

    Raises SymmetryError when an eigenvector has mixed-sector support beyond
    tolerance, which signals a symmetry-breaking Hamiltonian.
    """
    sectors = _sectors(system)
    jz = build_jz(system.j).matrix
    shifted = eigvals - eigvals[0]

    clusters: list[list[int]] = []
    idx = 0
    while idx < len(shifted):
        group = [idx]
        while group[-1] + 1 < len(shifted) and (
            shifted[group[-1] + 1] - shifted[group[0]] < degeneracy_tol
        ):
            group.append(group[-1] + 1)
        clusters.append(group)
        idx = group[-1] + 1

    levels: list[CFLevel] = []
    for group in clusters:
        energy = float(np.mean(shifted[group]))
        if len(group) == 1:
            vec = _fix_phase(eigvecs[:, group[0]])
            sector = _check_purity(vec, sectors)
            if sector in (SIGMA_PLUS_SECTOR, SIGMA_MINUS_SECTOR):
                raise SymmetryError(
                    f"non-degenerate eigenvector in doublet sector {sector}; "
                    "time-reversal partner is missing"
                )
            irrep = "G1" if sector == 0 else "G2"
            jz_exp = float(np.real(vec.conj() @ jz @ vec))
            levels.append(CFLevel(0, energy, irrep, 1, jz_exp, {+1: vec}))
        else:
            members = _split_cluster_by_sector(eigvecs[:, group], sectors)
            for s in (0, 2):
                for vec in members.get(s, []):
                    vec = _fix_phase(vec)
                    _check_purity(vec, sectors)
                    irrep = "G1" if s == 0 else "G2"
                    jz_exp = float(np.real(vec.conj() @ jz @ vec))
                    levels.append(CFLevel(0, energy, irrep, 1, jz_exp, {+1: vec}))
            plus = members.get(SIGMA_PLUS_SECTOR, [])
            minus = members.get(SIGMA_MINUS_SECTOR, [])
            if len(plus) != len(minus):
                raise SymmetryError(
                    f"unpaired doublet members in degenerate cluster "
                    f"(sector 3: {len(plus)}, sector 1: {len(minus)})"
                )
            # order multiple doublets within one cluster by <J_z> for determinism
            plus = sorted(plus, key=lambda v: np.real(v.conj() @ jz @ v))
            minus = sorted(minus, key=lambda v: -np.real(v.conj() @ jz @ v))
            for vp, vm in zip(plus, minus):
                vp, vm = _fix_phase(vp), _fix_phase(vm)
                _check_purity(vp, sectors)
                _check_purity(vm, sectors)
                jz_exp = float(np.real(vp.conj() @ jz @ vp))
                levels.append(CFLevel(0, energy, "G34", 2, jz_exp, {+1: vp, -1: vm}))

    levels.sort(key=lambda lv: lv.energy)
    return [
        CFLevel(n, lv.energy, lv.irrep, lv.degeneracy, lv.jz_expect, lv.vectors)
        for n, lv in enumerate(levels, start=1)
    ]


def cf_levels(params: CFParameters, system: SpinSystem) -> list[CFLevel]:
    """Diagonalize H_CF and classify: the standard entry point."""
    eigvals, eigvecs = diagonalize(build_cf_hamiltonian(params, system))
    return classify_levels(eigvals, eigvecs, system)


def hf_levels_exact(
    params: CFParameters,
    hf: HyperfineConstants,
    system: SpinSystem,
    min_overlap: float = 0.5,
) -> list[HFLevel]:
    """Full diagonalization of H_CF + H_HF on the product space, with labels.

    Every eigenstate is assigned the (n, sigma, m_z) label of the CF x nuclear
    product state it overlaps most, using an optimal one-to-one assignment so
    that each label is used exactly once.  Exactly degenerate eigenstates
    (Kramers partners, whole blocks at zero coupling) may come out of the
    eigensolver as arbitrary mixtures; mixing within one energy cluster cannot
    change any assigned energy, so confidence is judged per cluster.

    Raises LabelingError when a label's weight on its assigned energy cluster
    falls below ``min_overlap``: the hyperfine coupling is then too strong for
    perturbative labelling to mean anything, and we report rather than guess.
    """
    cf_op = build_cf_hamiltonian(params, system)
    cf_vals, cf_vecs = diagonalize(cf_op)
    levels = classify_levels(cf_vals, cf_vecs, system)
    e_ground = cf_vals[0]

    full = np.kron(cf_op.matrix, np.eye(system.dim_i)) + build_hf_hamiltonian(hf, system).matrix
    eigvals, eigvecs = np.linalg.eigh(full)
    eigvals = eigvals - e_ground

    labels: list[tuple[int, int, float]] = []
    columns = []
    for level in levels:
        for sigma in level.branches():
            vec = level.vectors[sigma]
            for k, m_z in enumerate(system.m_i):
                nuclear = np.zeros(system.dim_i)
                nuclear[k] = 1.0
                columns.append(np.kron(vec, nuclear))
                labels.append((level.n, sigma, float(m_z)))
    product = np.array(columns)  # (n_labels, dim)

    overlaps = np.abs(product.conj() @ eigvecs) ** 2  # labels x eigenstates
    rows, cols = linear_sum_assignment(-overlaps)

    # Confidence is judged per degenerate cluster: mixing among eigenstates of
    # equal energy (Kramers pairs, or whole blocks at zero coupling) cannot
    # change any assigned energy, so the label weight is summed over the
    # cluster holding the assigned eigenstate.
    cluster_of = np.zeros(len(eigvals), dtype=int)
    current = 0
    for k in range(1, len(eigvals)):
        if eigvals[k] - eigvals[k - 1] > 1e-7:
            current += 1
        cluster_of[k] = current
    for row, col in zip(rows, cols):
        members = cluster_of == cluster_of[col]
        confidence = float(np.sum(overlaps[row, members]))
        if confidence < min_overlap:
            n, sigma, m_z = labels[row]
            raise LabelingError(
                f"ambiguous labelling: state (n={n}, sigma={sigma:+d}, m_z={m_z}) "
                f"has weight {confidence:.3f} < {min_overlap} on its assigned "
                "energy cluster; hyperfine constants too large for perturbative "
                "labelling"
            )

    by_level = {lv.n: lv for lv in levels}
    out = []
    for row, col in zip(rows, cols):
        n, sigma, m_z = labels[row]
        energy = float(eigvals[col])
        out.append(HFLevel(n, sigma, m_z, energy, energy - by_level[n].energy))
    out.sort(key=lambda h: (h.n, -h.sigma, h.m_z))
    return out
