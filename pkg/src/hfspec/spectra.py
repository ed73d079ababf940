"""Forward synthesis of absorbance spectra from electron-nuclear levels.

Transition lines conserve m_z.  Absorbance A = log10(I0/I) is additive over
peaks, so a spectrum is a plain sum of line profiles, optionally with an
isotope satellite per line: substituting one light isotope on a neighbouring
lattice site shifts a line by a fixed splitting, and at natural abundance
only the zero- and one-substitution peaks are visible.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .angular import build_jplus, build_jz
from .hamiltonian import CFLevel, HFLevel

#: Boltzmann constant in spectroscopic units
KB_CM_PER_K = 0.695035

#: FWHM = GAUSSIAN_FWHM_FACTOR * (Gaussian standard deviation)
GAUSSIAN_FWHM_FACTOR = 2.0 * math.sqrt(2.0 * math.log(2.0))

PEAK_SHAPES = ("gaussian", "lorentzian")


@dataclass(frozen=True)
class TransitionLine:
    """One absorption line between labelled electron-nuclear levels.

    ``m_z`` is None for lines that average over the hyperfine structure.
    Intensity is in arbitrary units; None means unspecified.
    """

    n_init: int
    n_final: int
    m_z: float | None
    energy: float
    uncertainty: float | None = None
    intensity: float | None = None


@dataclass(frozen=True)
class PeakModel:
    """A single line profile: shape, center, FWHM and peak height."""

    shape: str
    center: float
    fwhm: float
    amplitude: float

    def __post_init__(self) -> None:
        if self.shape not in PEAK_SHAPES:
            raise ValueError(f"unknown peak shape {self.shape!r}; use one of {PEAK_SHAPES}")
        if not self.fwhm > 0:
            raise ValueError(f"fwhm must be positive, got {self.fwhm}")

    def profile(self, grid: NDArray[np.float64]) -> NDArray[np.float64]:
        x = np.asarray(grid, dtype=float) - self.center
        if self.shape == "gaussian":
            return self.amplitude * np.exp(-4.0 * math.log(2.0) * x**2 / self.fwhm**2)
        half = 0.5 * self.fwhm
        return self.amplitude * half**2 / (x**2 + half**2)

    def area(self) -> float:
        """Integral over the full line; Lorentzian tails converge slowly."""
        if self.shape == "gaussian":
            return self.amplitude * self.fwhm * 0.5 * math.sqrt(math.pi / math.log(2.0))
        return self.amplitude * math.pi * 0.5 * self.fwhm


@dataclass(frozen=True)
class IsotopeConfig:
    """Satellite produced by one substituted light-isotope neighbour.

    The default amplitude ratio 0.33 models four equivalent neighbour sites
    at natural light-isotope abundance (4 x 0.076/0.924); it is configurable
    because observed ratios are sample dependent.
    """

    splitting: float = 0.0098
    satellite_ratio: float = 0.33
    enabled: bool = True

    def __post_init__(self) -> None:
        if not np.isfinite(self.splitting):
            raise ValueError("isotope splitting must be finite")
        if self.satellite_ratio < 0:
            raise ValueError("satellite ratio must be nonnegative")


@dataclass(frozen=True)
class Spectrum:
    """Absorbance sampled on a strictly ascending wavenumber grid."""

    grid: NDArray[np.float64]
    absorbance: NDArray[np.float64]

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        absorbance = np.asarray(self.absorbance, dtype=float)
        if grid.shape != absorbance.shape or grid.ndim != 1:
            raise ValueError("grid and absorbance must be 1-d arrays of equal length")
        if len(grid) > 1 and not np.all(np.diff(grid) > 0):
            raise ValueError("grid must be strictly ascending")
        grid.setflags(write=False)
        absorbance.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "absorbance", absorbance)


def boltzmann_weights(
    levels_hf: list[HFLevel], temperature: float
) -> dict[tuple[int, int, float], float]:
    """Thermal occupation per (n, sigma, m_z) label, normalized to sum 1."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    energies = np.array([h.energy for h in levels_hf])
    weights = np.exp(-(energies - energies.min()) / (KB_CM_PER_K * temperature))
    weights /= weights.sum()
    return {(h.n, h.sigma, h.m_z): float(w) for h, w in zip(levels_hf, weights)}


def _moment_factor(
    mode: str, cf: list[CFLevel] | None, n_init: int, n_final: int, si: int, sf: int
) -> float:
    if mode == "unit":
        return 1.0
    if cf is None:
        raise ValueError(f"intensity mode {mode!r} requires the CF levels")
    by_n = {lv.n: lv for lv in cf}
    vi = by_n[n_init].vectors[si]
    vf = by_n[n_final].vectors[sf]
    j = (len(vi) - 1) / 2.0
    if mode == "jz":
        return float(abs(np.vdot(vf, build_jz(j).matrix @ vi)) ** 2)
    if mode == "jpm":
        jp = build_jplus(j).matrix
        return float(
            abs(np.vdot(vf, jp @ vi)) ** 2 + abs(np.vdot(vf, jp.conj().T @ vi)) ** 2
        )
    raise ValueError(f"unknown intensity mode {mode!r}")


def transition_lines(
    levels_hf: list[HFLevel],
    n_init: int,
    n_final: int,
    weights: dict[tuple[int, int, float], float] | None = None,
    cf_levels: list[CFLevel] | None = None,
    intensity_mode: str = "unit",
) -> list[TransitionLine]:
    """m_z-conserving lines between two CF levels, Kramers partners merged.

    A transition (sigma_i, sigma_f, m_z) and its time-reversed copy
    (-sigma_i, -sigma_f, -m_z) have identical energy; only the canonical
    member of each pair is returned.  When ``weights`` (from
    ``boltzmann_weights``) is given, each line carries the summed occupation
    of its merged initial states, times an optional squared matrix element
    selected by ``intensity_mode`` ("unit", "jz" or "jpm" -- a crude model,
    since measured intensities carry setup-specific systematics).
    """
    init = {(h.sigma, h.m_z): h for h in levels_hf if h.n == n_init}
    final = {(h.sigma, h.m_z): h for h in levels_hf if h.n == n_final}
    if not init or not final:
        missing = n_init if not init else n_final
        raise ValueError(f"no hyperfine levels found for CF index {missing}")
    doublet_i = len({s for s, _ in init}) == 2
    doublet_f = len({s for s, _ in final}) == 2

    lines = []
    seen = set()
    for si, m_z in sorted(init, key=lambda t: (-t[0], t[1])):
        for sf in sorted({s for s, _ in final}, reverse=True):
            key = (si, sf, m_z)
            # time-reversed copy; for singlet-singlet it is the -m_z line of
            # the same branches, which stays a line of its own
            if doublet_i or doublet_f:
                partner = (-si if doublet_i else si, -sf if doublet_f else sf, -m_z)
            else:
                partner = key
            if partner in seen:
                continue
            seen.add(key)
            energy = final[(sf, m_z)].energy - init[(si, m_z)].energy
            intensity = None
            if weights is not None:
                intensity = weights[(n_init, si, m_z)]
                pi, pf, pm = partner
                if (pi, pf, pm) != key:
                    intensity += weights[(n_init, pi, pm)]
                intensity *= _moment_factor(
                    intensity_mode, cf_levels, n_init, n_final, si, sf
                )
            lines.append(TransitionLine(n_init, n_final, m_z, energy, None, intensity))
    return lines


def synthesize(
    lines: list[TransitionLine],
    shape: PeakModel,
    grid: NDArray[np.float64],
    isotope: IsotopeConfig | None = None,
) -> Spectrum:
    """Sum of line profiles on a grid, each with an optional isotope satellite.

    ``shape`` supplies the profile type, FWHM and the amplitude scale; each
    line is placed at its energy with height shape.amplitude x intensity
    (unit intensity when unspecified).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    if not shape.fwhm > 0:
        raise ValueError(f"fwhm must be positive, got {shape.fwhm}")
    total = np.zeros_like(grid)
    for line in lines:
        height = shape.amplitude * (1.0 if line.intensity is None else line.intensity)
        peak = PeakModel(shape.shape, line.energy, shape.fwhm, height)
        total += peak.profile(grid)
        if isotope is not None and isotope.enabled:
            satellite = PeakModel(
                shape.shape,
                line.energy + isotope.splitting,
                shape.fwhm,
                height * isotope.satellite_ratio,
            )
            total += satellite.profile(grid)
    return Spectrum(grid, total)
