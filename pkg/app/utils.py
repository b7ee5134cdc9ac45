from pathlib import Path

import numpy as np
import pandas as pd
from runtime_config import config

def wavelength_grid(start=None, stop=None, step=None):
    """
    Uniform wavelength grid in nm, endpoints included. Defaults come from the runtime config.
    """
    start = config.GRID_START_NM if start is None else start
    stop = config.GRID_STOP_NM if stop is None else stop
    step = config.GRID_STEP_NM if step is None else step
    if step <= 0 or stop <= start:
        raise ValueError(f"Invalid grid: start={start}, stop={stop}, step={step}")
    count = int(round((stop - start) / step)) + 1
    return np.linspace(start, stop, count)

def band_mask(wavelengths, band):
    wavelengths = np.asarray(wavelengths, dtype=float)
    return (wavelengths >= band[0]) & (wavelengths <= band[1])

def band_average(values, wavelengths, band):
    mask = band_mask(wavelengths, band)
    if not mask.any():
        raise ValueError(f"No grid points inside band {band}")
    return float(np.mean(np.asarray(values)[mask]))

def derive_seed(*parts):
    """
    Stable 32-bit seed from integer parts, independent of call order and thread.
    """
    sequence = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(sequence.generate_state(1)[0])

def write_csv(frame: pd.DataFrame, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
