from runtime_config import config

import numpy as np

from tmm import Quantity, TargetSpectrum
from utils import band_average, band_mask, wavelength_grid

PLANCK = 6.62607015e-34  # J s
LIGHT_SPEED = 2.99792458e8  # m/s
BOLTZMANN = 1.380649e-23  # J/K


def blackbody_radiance(wavelengths_nm, temperature_k=None):
    """Spectral radiance of a black body, W / (m² sr m)."""
    temperature_k = config.SUN_TEMPERATURE_K if temperature_k is None else temperature_k
    wavelengths_m = np.asarray(wavelengths_nm, dtype=float) * 1e-9
    exponent = PLANCK * LIGHT_SPEED / (wavelengths_m * BOLTZMANN * temperature_k)
    return 2 * PLANCK * LIGHT_SPEED**2 / wavelengths_m**5 / np.expm1(exponent)


def solar_irradiance(wavelengths_nm, total=None, temperature_k=None):
    """
    Black-body solar spectrum in W/m²/nm, scaled so that its integral over the whole
    spectrum equals `total` (SOLAR_IRRADIANCE by default).
    """
    total = config.SOLAR_IRRADIANCE if total is None else total
    temperature_k = config.SUN_TEMPERATURE_K if temperature_k is None else temperature_k
    # Stefan-Boltzmann: integral of pi * B over wavelength
    sigma = 2 * np.pi**5 * BOLTZMANN**4 / (15 * LIGHT_SPEED**2 * PLANCK**3)
    full_emission = sigma * temperature_k**4  # W/m²
    spectral = np.pi * blackbody_radiance(wavelengths_nm, temperature_k) * 1e-9  # W/m²/nm
    return spectral * total / full_emission


def solar_weighted_absorptance(spectrum, band=None):
    """
    Integral of A·E over integral of E with the trapezoid rule, optionally restricted to a band.
    """
    wavelengths = spectrum.wavelengths_nm
    absorption = spectrum.absorption
    if band is not None:
        mask = band_mask(wavelengths, band)
        wavelengths, absorption = wavelengths[mask], absorption[mask]
    if len(wavelengths) < 2:
        raise ValueError("At least two wavelengths are needed to integrate")
    irradiance = solar_irradiance(wavelengths)
    return float(np.trapezoid(absorption * irradiance, wavelengths) / np.trapezoid(irradiance, wavelengths))


def solar_absorber_target(wavelengths_nm=None, band=None, weighting="uniform"):
    """
    Absorber target: A* = 1 inside the band, 0 elsewhere. weighting is 'uniform' or 'solar'.
    """
    wavelengths = wavelength_grid() if wavelengths_nm is None else np.asarray(wavelengths_nm, dtype=float)
    band = tuple(config.SOLAR_BAND_NM) if band is None else tuple(band)
    values = band_mask(wavelengths, band).astype(float)
    if weighting == "uniform":
        weights = None
    elif weighting == "solar":
        irradiance = solar_irradiance(wavelengths)
        weights = irradiance / irradiance.max()
    else:
        raise ValueError(f"Unknown weighting {weighting!r}, expected 'uniform' or 'solar'")
    return TargetSpectrum(wavelengths, values, weights, Quantity.A)


def band_absorption(spectrum, band=None):
    band = tuple(config.SOLAR_BAND_NM) if band is None else band
    return band_average(spectrum.absorption, spectrum.wavelengths_nm, band)
