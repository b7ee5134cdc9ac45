"""
Transfer-matrix solver for planar multilayer stacks.

Indices are stored as n + ik (k >= 0). Internally every index is conjugated to N = n - ik,
the convention in which the characteristic matrix

    [[cos d, i sin d / eta], [i eta sin d, cos d]]

describes a passive layer (d = 2 pi N d cos(theta) / lambda, eta_s = N cos(theta),
eta_p = N / cos(theta), admittances in free-space units).
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from numbers import Integral

import numpy as np
import pandas as pd

from material_db import complex_index
from runtime_config import config
from utils import write_csv

logger = logging.getLogger(__name__)

SPECTRUM_COLUMNS = ["lambda_nm", "angle_deg", "A", "R", "T"]


class SolverError(ValueError):
    pass


class Polarization(str, Enum):
    S = "S"
    P = "P"
    UNPOLARIZED = "Unpolarized"


class Quantity(str, Enum):
    A = "A"
    R = "R"
    T = "T"


@dataclass(frozen=True)
class Layer:
    material_id: int
    thickness: float  # nm

    def __post_init__(self):
        if not np.isfinite(self.thickness) or self.thickness <= 0:
            raise ValueError(f"Layer thickness must be positive and finite, got {self.thickness}")


@dataclass(frozen=True)
class Stack:
    """
    Integers are material ids; floats and complex numbers are fixed indices.
    """
    layers: tuple
    substrate: object
    incident_medium: object = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("Stack needs at least one layer")

    @property
    def material_ids(self):
        return [layer.material_id for layer in self.layers]

    @property
    def thicknesses(self):
        return np.array([layer.thickness for layer in self.layers], dtype=float)


@dataclass(frozen=True)
class IncidenceSpec:
    angles_deg: tuple = field(default_factory=lambda: tuple(config.INCIDENCE_ANGLES_DEG))
    polarization: Polarization = field(default_factory=lambda: Polarization(config.POLARIZATION))

    def __post_init__(self):
        angles = tuple(float(a) for a in np.atleast_1d(self.angles_deg))
        if not angles:
            raise ValueError("At least one incidence angle is required")
        for angle in angles:
            if not 0.0 <= angle < 90.0:
                raise ValueError(f"Incidence angle must be in [0, 90) degrees, got {angle}")
        object.__setattr__(self, "angles_deg", angles)
        object.__setattr__(self, "polarization", Polarization(self.polarization))


@dataclass(frozen=True, eq=False)
class Spectrum:
    wavelengths_nm: np.ndarray
    absorption: np.ndarray
    reflection: np.ndarray
    transmission: np.ndarray
    angle_deg: float = 0.0

    def __post_init__(self):
        for name in ("wavelengths_nm", "absorption", "reflection", "transmission"):
            values = np.array(getattr(self, name), dtype=float)
            values.setflags(write=False)
            object.__setattr__(self, name, values)
        size = len(self.wavelengths_nm)
        if not (len(self.absorption) == len(self.reflection) == len(self.transmission) == size):
            raise ValueError("Spectrum components must share the wavelength grid")

    def values(self, quantity=Quantity.A):
        quantity = Quantity(quantity)
        return {Quantity.A: self.absorption, Quantity.R: self.reflection, Quantity.T: self.transmission}[quantity]

    def to_frame(self):
        return pd.DataFrame({
            "lambda_nm": self.wavelengths_nm,
            "angle_deg": np.full(len(self.wavelengths_nm), self.angle_deg),
            "A": self.absorption,
            "R": self.reflection,
            "T": self.transmission,
        })


@dataclass(frozen=True, eq=False)
class TargetSpectrum:
    wavelengths_nm: np.ndarray
    values: np.ndarray
    weights: np.ndarray = None
    quantity: Quantity = Quantity.A

    def __post_init__(self):
        wavelengths = np.array(self.wavelengths_nm, dtype=float)
        values = np.array(self.values, dtype=float)
        weights = np.ones_like(values) if self.weights is None else np.array(self.weights, dtype=float)
        if not (len(wavelengths) == len(values) == len(weights)):
            raise ValueError("Target wavelengths, values and weights must have equal lengths")
        if len(wavelengths) == 0:
            raise ValueError("Target spectrum is empty")
        if np.any((values < 0) | (values > 1)):
            raise ValueError("Target values must lie in [0, 1]")
        if np.any(weights < 0) or not np.any(weights > 0):
            raise ValueError("Weights must be non-negative and not all zero")
        for name, array in (("wavelengths_nm", wavelengths), ("values", values), ("weights", weights)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        object.__setattr__(self, "quantity", Quantity(self.quantity))

    @classmethod
    def from_spectrum(cls, spectrum: Spectrum, quantity=Quantity.A, weights=None):
        return cls(spectrum.wavelengths_nm, np.clip(spectrum.values(quantity), 0.0, 1.0), weights, quantity)


def _snell_admittances(index, sin_term, polarization):
    """
    index: N = n - ik. sin_term: N0 sin(theta0). Returns (N cos(theta), eta).
    """
    q = np.sqrt(index * index - sin_term * sin_term + 0j)
    # Forward wave must decay into the medium
    q = np.where(q.imag > 0, -q, q)
    if polarization == Polarization.S:
        return q, q
    return q, index * index / q


def characteristic_matrix(n_complex, thickness, wavelength, angle_deg=0.0, polarization=Polarization.S,
                          incident_index=None):
    """
    2x2 characteristic matrix of one layer.
    """
    polarization = Polarization(polarization)
    if polarization == Polarization.UNPOLARIZED:
        raise ValueError("characteristic_matrix needs a single polarization (S or P)")
    if thickness < 0 or wavelength <= 0:
        raise ValueError("thickness must be non-negative and wavelength positive")
    if not 0.0 <= angle_deg < 90.0:
        raise SolverError(f"Grazing or invalid incidence angle {angle_deg} degrees")

    incident_index = config.INCIDENT_INDEX if incident_index is None else incident_index
    index = np.conj(complex(n_complex))
    sin_term = np.real(incident_index) * np.sin(np.radians(angle_deg))
    q, eta = _snell_admittances(index, sin_term, polarization)
    delta = 2 * np.pi * q * thickness / wavelength
    return np.array([
        [np.cos(delta), 1j * np.sin(delta) / eta],
        [1j * eta * np.sin(delta), np.cos(delta)],
    ])


def _resolve_medium(medium, grid, db):
    if isinstance(medium, Integral) and not isinstance(medium, bool):
        if db is None:
            raise ValueError("A material database is required to resolve material ids")
        return complex_index(db.by_id(int(medium)), grid)
    return np.full(len(grid), complex(medium))


class StackOptics:
    """
    Indices of a fixed material sequence resolved on a wavelength grid. Solves any number
    of thickness vectors at once.
    """

    def __init__(self, layer_indices, incident_index, substrate_index, wavelengths_nm):
        self.wavelengths_nm = np.asarray(wavelengths_nm, dtype=float)
        size = len(self.wavelengths_nm)
        self.layer_indices = [np.broadcast_to(np.asarray(i, dtype=complex), (size,)) for i in layer_indices]
        if not self.layer_indices:
            raise ValueError("Stack needs at least one layer")
        self.incident_index = np.broadcast_to(np.asarray(incident_index, dtype=complex), (size,))
        self.substrate_index = np.broadcast_to(np.asarray(substrate_index, dtype=complex), (size,))
        if np.any(np.abs(self.incident_index.imag) > 0):
            raise SolverError("Incident medium must be lossless")

    @classmethod
    def from_materials(cls, material_ids, db, wavelengths_nm, incident_medium=1.0, substrate=None):
        """
        substrate=None treats the last layer's material as semi-infinite.
        """
        grid = np.asarray(wavelengths_nm, dtype=float)
        layers = [complex_index(db.by_id(int(m)), grid) for m in material_ids]
        if not layers:
            raise ValueError("Stack needs at least one layer")
        substrate_index = layers[-1] if substrate is None else _resolve_medium(substrate, grid, db)
        return cls(layers, _resolve_medium(incident_medium, grid, db), substrate_index, grid)

    @classmethod
    def from_stack(cls, stack: Stack, db, wavelengths_nm):
        return cls.from_materials(stack.material_ids, db, wavelengths_nm, stack.incident_medium, stack.substrate)

    def _solve_polarization(self, thicknesses, angle_deg, polarization):
        wavelengths = self.wavelengths_nm
        incident = np.conj(self.incident_index)
        substrate = np.conj(self.substrate_index)
        sin_term = incident.real * np.sin(np.radians(angle_deg))

        _, eta0 = _snell_admittances(incident, sin_term, polarization)
        _, eta_sub = _snell_admittances(substrate, sin_term, polarization)

        batch = thicknesses.shape[0]
        m11 = np.ones((batch, len(wavelengths)), dtype=complex)
        m12 = np.zeros_like(m11)
        m21 = np.zeros_like(m11)
        m22 = np.ones_like(m11)
        for j, layer_index in enumerate(self.layer_indices):
            q, eta = _snell_admittances(np.conj(layer_index), sin_term, polarization)
            delta = 2 * np.pi * q[None, :] * thicknesses[:, j:j + 1] / wavelengths[None, :]
            cos_d, sin_d = np.cos(delta), np.sin(delta)
            a11, a12 = cos_d, 1j * sin_d / eta
            a21, a22 = 1j * eta * sin_d, cos_d
            m11, m12, m21, m22 = (
                m11 * a11 + m12 * a21,
                m11 * a12 + m12 * a22,
                m21 * a11 + m22 * a21,
                m21 * a12 + m22 * a22,
            )

        b = m11 + m12 * eta_sub
        c = m21 + m22 * eta_sub
        denominator = eta0 * b + c
        r = (eta0 * b - c) / denominator
        reflection = np.abs(r) ** 2
        transmission = 4 * eta0.real * eta_sub.real / np.abs(denominator) ** 2
        return reflection, transmission

    def solve(self, thicknesses, incidence: IncidenceSpec = None):
        """
        thicknesses: (L,) or (B, L) in nm. Returns A, R, T arrays of shape (angles, B, W).
        """
        incidence = incidence or IncidenceSpec()
        thicknesses = np.atleast_2d(np.asarray(thicknesses, dtype=float))
        if thicknesses.shape[1] != len(self.layer_indices):
            raise ValueError(f"Expected {len(self.layer_indices)} thicknesses, got {thicknesses.shape[1]}")
        if np.any(~np.isfinite(thicknesses)) or np.any(thicknesses < 0):
            raise ValueError("Thicknesses must be finite and non-negative")

        if incidence.polarization == Polarization.UNPOLARIZED:
            polarizations = (Polarization.S, Polarization.P)
        else:
            polarizations = (incidence.polarization,)

        reflections, transmissions = [], []
        for angle in incidence.angles_deg:
            parts = [self._solve_polarization(thicknesses, angle, p) for p in polarizations]
            reflections.append(np.mean([p[0] for p in parts], axis=0))
            transmissions.append(np.mean([p[1] for p in parts], axis=0))
        reflection = np.array(reflections)
        transmission = np.array(transmissions)
        absorption = 1.0 - reflection - transmission

        tol = config.ABSORPTION_CLAMP_TOL
        for name, values in (("A", absorption), ("R", reflection), ("T", transmission)):
            if not np.all(np.isfinite(values)):
                raise SolverError(f"Non-finite {name} in solver output")
            if values.min() < -tol or values.max() > 1 + tol:
                raise SolverError(f"{name} outside [0, 1]: range [{values.min():.3g}, {values.max():.3g}]")
        return (
            np.clip(absorption, 0.0, 1.0),
            np.clip(reflection, 0.0, 1.0),
            np.clip(transmission, 0.0, 1.0),
        )

    def spectra(self, thicknesses, incidence: IncidenceSpec = None):
        incidence = incidence or IncidenceSpec()
        absorption, reflection, transmission = self.solve(thicknesses, incidence)
        return [
            Spectrum(self.wavelengths_nm, absorption[i, 0], reflection[i, 0], transmission[i, 0], angle)
            for i, angle in enumerate(incidence.angles_deg)
        ]


def spectrum(stack: Stack, grid, incidence: IncidenceSpec, db):
    """One Spectrum per incidence angle."""
    optics = StackOptics.from_stack(stack, db, grid)
    return optics.spectra(stack.thicknesses, incidence)


def _as_list(spectra):
    return [spectra] if isinstance(spectra, Spectrum) else list(spectra)


def _check_grid(wavelengths, target: TargetSpectrum):
    if len(wavelengths) != len(target.wavelengths_nm) or not np.allclose(
        wavelengths, target.wavelengths_nm, rtol=0, atol=1e-9
    ):
        raise ValueError("Spectrum and target do not share the wavelength grid")


def merit(spectra, target: TargetSpectrum) -> float:
    spectra = _as_list(spectra)
    if not spectra:
        raise ValueError("No spectra to score")
    totals = []
    for item in spectra:
        _check_grid(item.wavelengths_nm, target)
        totals.append(np.sum((item.values(target.quantity) - target.values) ** 2))
    return float(np.mean(totals))


def observation_error(spectra, target: TargetSpectrum, incidence: IncidenceSpec = None) -> float:
    spectra = _as_list(spectra)
    if incidence is not None and len(spectra) != len(incidence.angles_deg):
        raise ValueError(f"Expected {len(incidence.angles_deg)} spectra, got {len(spectra)}")
    total = 0.0
    for item in spectra:
        _check_grid(item.wavelengths_nm, target)
        total += float(np.sum(target.weights * np.abs(item.values(target.quantity) - target.values)))
    return total


def batch_merit(absorption, reflection, transmission, target: TargetSpectrum):
    """
    Merit of each batch member from solver arrays (angles, B, W). Returns shape (B,).
    """
    values = {Quantity.A: absorption, Quantity.R: reflection, Quantity.T: transmission}[target.quantity]
    return np.mean(np.sum((values - target.values[None, None, :]) ** 2, axis=2), axis=0)


def write_spectrum_csv(spectra, path):
    frame = pd.concat([item.to_frame() for item in _as_list(spectra)], ignore_index=True)
    return write_csv(frame, path)


def read_spectrum_csv(path):
    frame = pd.read_csv(path)
    missing = [c for c in SPECTRUM_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    spectra = []
    for angle in pd.unique(frame["angle_deg"]):
        rows = frame[frame["angle_deg"] == angle]
        spectra.append(Spectrum(
            rows["lambda_nm"].to_numpy(), rows["A"].to_numpy(), rows["R"].to_numpy(),
            rows["T"].to_numpy(), float(angle),
        ))
    return spectra
