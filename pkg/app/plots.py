from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import plotly.graph_objects as go

from material_db import Category

# Fixed salt and no date keep SVG output byte-identical between runs
plt.rcParams["svg.hashsalt"] = "thinfilm"
SVG_METADATA = {"Date": None}

CATEGORY_COLORS = {
    Category.METAL.value: "tab:orange",
    Category.ALLOY.value: "tab:red",
    Category.SEMICONDUCTOR.value: "tab:green",
    Category.DIELECTRIC.value: "tab:purple",
    Category.TRANSPARENT.value: "tab:blue",
    Category.OTHER.value: "tab:gray",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return path


def plot_spectrum(frame: pd.DataFrame, path, band=None, target=None):
    """
    A, R and T against wavelength from a spectrum CSV frame (lambda_nm, angle_deg, A, R, T).
    """
    fig, ax = plt.subplots(figsize=(8, 5))
    for angle, rows in frame.groupby("angle_deg", sort=False):
        suffix = "" if frame["angle_deg"].nunique() == 1 else f" ({angle:g}°)"
        ax.plot(rows["lambda_nm"], rows["A"], label=f"Absorption{suffix}", color="black")
        ax.plot(rows["lambda_nm"], rows["R"], label=f"Reflection{suffix}", color="tab:blue", linestyle="--")
        ax.plot(rows["lambda_nm"], rows["T"], label=f"Transmission{suffix}", color="tab:green", linestyle=":")
    if target is not None:
        ax.plot(target.wavelengths_nm, target.values, label="Target", color="tab:red", alpha=0.6)
    if band is not None:
        ax.axvspan(band[0], band[1], color="gold", alpha=0.15, label="Target band")
    ax.set_xlim(frame["lambda_nm"].min(), frame["lambda_nm"].max())
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("Wavelength (nm)")
    ax.set_ylabel("Fraction")
    ax.set_title("Spectrum of the designed stack")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_trace(frame: pd.DataFrame, path):
    fig, ax = plt.subplots(figsize=(8, 5))
    finite = frame[np.isfinite(frame["episode_best_merit"])]
    ax.plot(finite["episode"], finite["episode_best_merit"], label="Episode best", color="tab:gray", alpha=0.6)
    ax.plot(finite["episode"], finite["best_merit"], label="Best so far", color="tab:red")
    ax.set_xlabel("Episode")
    ax.set_ylabel("Merit")
    ax.set_title("Search trace")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_environment_map(env_map, path):
    frame = env_map.to_frame()
    fig, ax = plt.subplots(figsize=(7, 7))
    for category, rows in frame.groupby("category", sort=True):
        ax.scatter(rows["x"], rows["y"], s=18, label=category, color=CATEGORY_COLORS.get(category, "tab:gray"))
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("Environment space")
    ax.legend(loc="best", fontsize="small")
    return _save(fig, path)


def environment_map_html(env_map, path):
    frame = env_map.to_frame()
    fig = go.Figure()
    for category, rows in frame.groupby("category", sort=True):
        fig.add_trace(go.Scatter(
            x=rows["x"], y=rows["y"], mode="markers", name=category, text=rows["name"],
            hovertemplate="%{text}<br>x=%{x:.3f}, y=%{y:.3f}<extra></extra>",
            marker=dict(color=CATEGORY_COLORS.get(category, "tab:gray").replace("tab:", "")),
        ))
    fig.update_layout(
        title="Environment space",
        xaxis=dict(range=[-0.02, 1.02], title="x"),
        yaxis=dict(range=[-0.02, 1.02], title="y", scaleanchor="x"),
        template="plotly_white",
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(path, include_plotlyjs="cdn", div_id="environment-map")
    return path
