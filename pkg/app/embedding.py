"""
Environment space: a 2D map of the material catalog.

Each material's (n, k) dispersion is resampled on a fixed grid, compressed by a
fully-connected variational autoencoder, embedded to 2D with exact t-SNE and scaled onto
the unit square. Any point of the square resolves to its closest material.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, Field, field_validator
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist, squareform
from sklearn.metrics import silhouette_score
from tqdm import tqdm

from material_db import Category, WavelengthRangeError, resample
from networks import Adam, Mlp
from runtime_config import config
from utils import write_csv

logger = logging.getLogger(__name__)

MAP_FORMAT = "environment-map/1"
EMBEDDING_COLUMNS = ["id", "name", "category", "x", "y"]
MACRO_CATEGORIES = {
    Category.METAL: "Metal+Alloy",
    Category.ALLOY: "Metal+Alloy",
    Category.SEMICONDUCTOR: "Semiconductor+Dielectric",
    Category.DIELECTRIC: "Semiconductor+Dielectric",
    Category.TRANSPARENT: "Transparent",
}


class EmbeddingError(ValueError):
    pass


class TrainingDivergenceError(EmbeddingError):
    pass


class MapFormatError(EmbeddingError):
    pass


class EncoderConfig(BaseModel):
    input_grid: Optional[List[float]] = None  # None: VAE_INPUT_POINTS over the catalog support
    latent_dim: int = Field(default_factory=lambda: config.VAE_LATENT_DIM, ge=2)
    hidden_dims: List[int] = Field(default_factory=lambda: list(config.VAE_HIDDEN_DIMS))
    epochs: int = Field(default_factory=lambda: config.VAE_EPOCHS, ge=1)
    learning_rate: float = Field(default_factory=lambda: config.VAE_LEARNING_RATE, gt=0)
    kl_weight: float = Field(default_factory=lambda: config.VAE_KL_WEIGHT, ge=0)
    seed: int = Field(default_factory=lambda: config.SEED)

    @field_validator("hidden_dims")
    @classmethod
    def _positive_widths(cls, value):
        if any(width < 1 for width in value):
            raise ValueError("hidden widths must be positive")
        return value

    @field_validator("input_grid")
    @classmethod
    def _increasing_grid(cls, value):
        if value is not None and (len(value) < 2 or np.any(np.diff(value) <= 0)):
            raise ValueError("input_grid must be strictly increasing with at least two points")
        return value


class TsneConfig(BaseModel):
    perplexity: float = Field(default_factory=lambda: config.TSNE_PERPLEXITY, ge=2)
    iterations: int = Field(default_factory=lambda: config.TSNE_ITERATIONS, ge=1)
    early_exaggeration: float = Field(default_factory=lambda: config.TSNE_EARLY_EXAGGERATION, ge=1)
    exaggeration_iterations: int = Field(default_factory=lambda: config.TSNE_EXAGGERATION_ITERATIONS, ge=0)
    learning_rate: float = Field(default_factory=lambda: config.TSNE_LEARNING_RATE, gt=0)
    init_std: float = Field(default_factory=lambda: config.TSNE_INIT_STD, gt=0)
    seed: int = Field(default_factory=lambda: config.SEED)


# ---------------------------------------------------------------------------
# Features


def encoder_grid(db, cfg: EncoderConfig):
    if cfg.input_grid is not None:
        return np.asarray(cfg.input_grid, dtype=float)
    low, high = db.wavelength_support
    return np.linspace(low, high, config.VAE_INPUT_POINTS)


def material_features(db, grid):
    """
    Rows of [n(grid), log1p(k(grid))], one per material in id order.
    """
    rows = []
    for record in db:
        try:
            n, k = resample(record, grid)
        except WavelengthRangeError as exc:
            raise EmbeddingError(f"Cannot resample {record.name} on the encoder grid: {exc}") from exc
        rows.append(np.concatenate([n, np.log1p(k)]))
    return np.array(rows)


def standardize(features):
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (features - mean) / std, mean, std


# ---------------------------------------------------------------------------
# Variational autoencoder


class Vae:
    def __init__(self, input_dim, latent_dim, hidden_dims, kl_weight, rng):
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.kl_weight = kl_weight
        self.encoder = Mlp([input_dim, *hidden_dims, 2 * latent_dim], rng)
        self.decoder = Mlp([latent_dim, *reversed(hidden_dims), input_dim], rng)

    @property
    def params(self):
        return self.encoder.params + self.decoder.params

    def encode(self, x):
        out = self.encoder(x)
        return out[:, :self.latent_dim], out[:, self.latent_dim:]

    def decode(self, z):
        return self.decoder(z)

    def reconstruction_errors(self, x):
        """Per-sample mean squared error of decoding the latent mean."""
        mu, _ = self.encode(x)
        return np.mean((self.decode(mu) - x) ** 2, axis=1)

    def loss_and_grads(self, x, eps):
        """
        Loss = MSE(x, x_hat) + kl_weight * KL(q(z|x) || N(0, I)), with z = mu + exp(logvar/2) * eps.
        Returns (loss, reconstruction, grads) where grads follow `params` order.
        """
        batch = x.shape[0]
        z_dim = self.latent_dim
        out, enc_cache = self.encoder.forward(x)
        mu, logvar = out[:, :z_dim], out[:, z_dim:]
        std = np.exp(0.5 * logvar)
        z = mu + std * eps
        x_hat, dec_cache = self.decoder.forward(z)

        reconstruction = float(np.mean((x_hat - x) ** 2))
        kl = float(-0.5 * np.sum(1 + logvar - mu**2 - np.exp(logvar)) / batch)
        loss = reconstruction + self.kl_weight * kl

        grad_x_hat = 2 * (x_hat - x) / x.size
        dec_grads, grad_z = self.decoder.backward(dec_cache, grad_x_hat)
        grad_mu = grad_z + self.kl_weight * mu / batch
        grad_logvar = grad_z * eps * 0.5 * std + self.kl_weight * 0.5 * (np.exp(logvar) - 1) / batch
        enc_grads, _ = self.encoder.backward(enc_cache, np.concatenate([grad_mu, grad_logvar], axis=1))
        return loss, reconstruction, enc_grads + dec_grads


@dataclass
class EncoderResult:
    vae: Vae
    latents: np.ndarray
    loss_history: list
    final_loss: float
    grid: np.ndarray
    features: np.ndarray  # standardized
    feature_mean: np.ndarray
    feature_std: np.ndarray


def train_encoder(db, cfg: EncoderConfig = None) -> EncoderResult:
    cfg = cfg or EncoderConfig()
    if len(db) < 10:
        raise EmbeddingError(f"At least 10 materials are needed to train the encoder, got {len(db)}")

    grid = encoder_grid(db, cfg)
    features, mean, std = standardize(material_features(db, grid))
    rng = np.random.default_rng(cfg.seed)
    vae = Vae(features.shape[1], cfg.latent_dim, cfg.hidden_dims, cfg.kl_weight, rng)
    # Encoder and decoder lists are views of the same arrays, so one optimizer covers both
    params = vae.params
    optimizer = Adam(params, cfg.learning_rate)

    history = []
    for epoch in tqdm(range(cfg.epochs), desc="Encoder", disable=not config.SHOW_PROGRESS):
        eps = rng.standard_normal((features.shape[0], cfg.latent_dim))
        loss, reconstruction, grads = vae.loss_and_grads(features, eps)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergenceError(f"Encoder loss became non-finite at epoch {epoch}")
        optimizer.step(params, grads)
        history.append(loss)

    latents, _ = vae.encode(features)
    final_loss = float(np.mean(vae.reconstruction_errors(features)))
    logger.info("Encoder trained: %d epochs, latent %d, final reconstruction loss %.5f",
                cfg.epochs, cfg.latent_dim, final_loss)
    return EncoderResult(vae, latents, history, final_loss, grid, features, mean, std)


def latent_dim_sweep(db, cfg: EncoderConfig = None, dims=(5, 10, 15, 20)):
    cfg = cfg or EncoderConfig()
    rows = []
    for latent_dim in dims:
        result = train_encoder(db, cfg.model_copy(update={"latent_dim": int(latent_dim)}))
        rows.append({"latent_dim": int(latent_dim), "final_loss": result.final_loss})
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Exact t-SNE


@dataclass
class TsneResult:
    coordinates: np.ndarray
    kl_history: list  # (iteration, KL(P||Q)) every 50 iterations


def _row_affinities(distances, target_entropy, tol=1e-5, max_tries=100):
    """Conditional probabilities of one row with the bandwidth found by bisection."""
    shifted = distances - distances.min()
    beta, beta_min, beta_max = 1.0, -np.inf, np.inf
    for _ in range(max_tries):
        p = np.exp(-shifted * beta)
        total = p.sum()
        entropy = np.log(total) + beta * np.sum(shifted * p) / total
        diff = entropy - target_entropy
        if abs(diff) < tol:
            break
        if diff > 0:
            beta_min = beta
            beta = beta * 2 if beta_max == np.inf else (beta + beta_max) / 2
        else:
            beta_max = beta
            beta = beta / 2 if beta_min == -np.inf else (beta + beta_min) / 2
    return p / total


def joint_probabilities(latents, perplexity):
    distances = squareform(pdist(latents, "sqeuclidean"))
    count = distances.shape[0]
    target_entropy = np.log(perplexity)
    conditional = np.zeros((count, count))
    for i in range(count):
        others = np.concatenate([np.arange(i), np.arange(i + 1, count)])
        conditional[i, others] = _row_affinities(distances[i, others], target_entropy)
    joint = (conditional + conditional.T) / (2 * count)
    return np.maximum(joint, 1e-12)


def _kl_divergence(p, q):
    return float(np.sum(p * np.log(p / q)))


def run_tsne(latents, cfg: TsneConfig = None) -> TsneResult:
    cfg = cfg or TsneConfig()
    latents = np.asarray(latents, dtype=float)
    count = latents.shape[0]
    if count < 3 * cfg.perplexity:
        raise EmbeddingError(f"t-SNE needs at least {3 * cfg.perplexity:g} points for perplexity "
                             f"{cfg.perplexity:g}, got {count}")
    if np.all(np.ptp(latents, axis=0) == 0):
        raise EmbeddingError("All latent codes are identical; perplexity calibration cannot converge")

    p = joint_probabilities(latents, cfg.perplexity)
    rng = np.random.default_rng(cfg.seed)
    y = rng.normal(0.0, cfg.init_std, size=(count, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    history = []

    for iteration in tqdm(range(cfg.iterations), desc="t-SNE", disable=not config.SHOW_PROGRESS):
        exaggerating = iteration < cfg.exaggeration_iterations
        exaggeration = cfg.early_exaggeration if exaggerating else 1.0
        momentum = 0.5 if exaggerating else 0.8

        num = 1.0 / (1.0 + squareform(pdist(y, "sqeuclidean")))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)

        weights = (exaggeration * p - q) * num
        gradient = 4.0 * (np.diag(weights.sum(axis=1)) - weights) @ y

        same_sign = (gradient > 0) == (update > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        update = momentum * update - cfg.learning_rate * gains * gradient
        y = y + update
        y = y - y.mean(axis=0)

        if (iteration + 1) % 50 == 0:
            q_kl = num / num.sum()
            q_kl = np.maximum(q_kl, 1e-12)
            np.fill_diagonal(q_kl, 1.0)
            p_kl = p.copy()
            np.fill_diagonal(p_kl, 1.0)
            history.append((iteration + 1, _kl_divergence(p_kl, q_kl)))
            logger.debug("t-SNE iteration %d, KL %.5f", iteration + 1, history[-1][1])

    return TsneResult(y, history)


def embed_tsne(latents, perplexity=None, iterations=None, seed=None):
    updates = {k: v for k, v in (("perplexity", perplexity), ("iterations", iterations), ("seed", seed))
               if v is not None}
    return run_tsne(latents, TsneConfig(**updates)).coordinates


# ---------------------------------------------------------------------------
# Environment map


def normalize_to_unit_square(raw):
    raw = np.asarray(raw, dtype=float)
    low = raw.min(axis=0)
    span = raw.max(axis=0) - low
    scaled = np.empty_like(raw)
    for axis in range(raw.shape[1]):
        if span[axis] > 0:
            scaled[:, axis] = (raw[:, axis] - low[axis]) / span[axis]
        else:
            scaled[:, axis] = 0.5
    return np.clip(scaled, 0.0, 1.0)


@dataclass(frozen=True)
class EnvPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise ValueError(f"EnvPoint ({self.x}, {self.y}) outside the unit square")


@dataclass(eq=False)
class EnvironmentMap:
    ids: tuple
    names: tuple
    categories: tuple
    points: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = tuple(int(i) for i in self.ids)
        self.names = tuple(self.names)
        self.categories = tuple(Category(c).value for c in self.categories)
        self.points = np.array(self.points, dtype=float).reshape(-1, 2)
        count = len(self.ids)
        if not (len(self.names) == len(self.categories) == len(self.points) == count):
            raise MapFormatError("ids, names, categories and points must have equal lengths")
        if len(set(self.ids)) != count:
            raise MapFormatError("material ids must be unique")
        if not np.all(np.isfinite(self.points)) or np.any(self.points < 0) or np.any(self.points > 1):
            raise MapFormatError("map points must lie in the unit square")
        if len(np.unique(self.points, axis=0)) < 2:
            raise MapFormatError("map needs at least two distinct points")
        self.points.setflags(write=False)
        self._ids = np.array(self.ids)
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.ids)

    def point_of(self, material_id) -> EnvPoint:
        x, y = self.points[self.ids.index(int(material_id))]
        return EnvPoint(float(x), float(y))

    def nearest_materials(self, points):
        """Material id nearest to each query point. Ties go to the lowest id."""
        queries = np.atleast_2d(np.asarray(points, dtype=float))
        distances, _ = self._tree.query(queries)
        candidates = self._tree.query_ball_point(queries, distances + config.TIE_TOL)
        return np.array([self._ids[c].min() for c in candidates], dtype=int)

    def nearest_material(self, point) -> int:
        if isinstance(point, EnvPoint):
            point = (point.x, point.y)
        return int(self.nearest_materials([point])[0])

    def to_frame(self):
        return pd.DataFrame({
            "id": self.ids,
            "name": self.names,
            "category": self.categories,
            "x": self.points[:, 0],
            "y": self.points[:, 1],
        })

    def same_as(self, other):
        return (
            self.ids == other.ids
            and self.names == other.names
            and self.categories == other.categories
            and np.array_equal(self.points, other.points)
            and self.provenance == other.provenance
        )


def nearest_material(env_map: EnvironmentMap, point) -> int:
    return env_map.nearest_material(point)


def build_environment_map(db, encoder_cfg: EncoderConfig = None, tsne_cfg: TsneConfig = None):
    """
    Full pipeline. Returns (EnvironmentMap, EncoderResult, TsneResult).
    """
    encoder_cfg = encoder_cfg or EncoderConfig()
    tsne_cfg = tsne_cfg or TsneConfig()
    encoded = train_encoder(db, encoder_cfg)

    max_perplexity = (len(db) - 1) / 3
    if tsne_cfg.perplexity > max_perplexity:
        logger.warning("Perplexity %.1f capped at %.2f for %d materials", tsne_cfg.perplexity, max_perplexity, len(db))
        tsne_cfg = tsne_cfg.model_copy(update={"perplexity": max_perplexity})

    embedded = run_tsne(encoded.latents, tsne_cfg)
    points = normalize_to_unit_square(embedded.coordinates)
    provenance = {
        "encoder": {
            "architecture": "fully-connected VAE",
            **encoder_cfg.model_dump(exclude={"input_grid"}),
            "input_grid": [float(v) for v in encoded.grid],
            "final_loss": float(encoded.final_loss),
        },
        "tsne": tsne_cfg.model_dump(),
    }
    env_map = EnvironmentMap(
        ids=db.ids,
        names=db.names,
        categories=[r.category for r in db],
        points=points,
        provenance=provenance,
    )
    logger.info("Environment map built for %d materials", len(env_map))
    return env_map, encoded, embedded


def category_silhouette(env_map: EnvironmentMap) -> float:
    """
    Mean silhouette of the map points over the macro-categories
    Metal+Alloy, Semiconductor+Dielectric and Transparent. 'Other' is left out.
    """
    labels = np.array([MACRO_CATEGORIES.get(Category(c), "") for c in env_map.categories])
    keep = labels != ""
    labels, points = labels[keep], env_map.points[keep]
    groups = np.unique(labels)
    if len(groups) < 2:
        raise EmbeddingError("Silhouette needs at least two populated categories")
    if len(groups) >= len(points):
        raise EmbeddingError("Silhouette needs a category with more than one material")
    return float(silhouette_score(points, labels))


def write_embedding_csv(env_map: EnvironmentMap, path):
    return write_csv(env_map.to_frame(), path)


def save_map(env_map: EnvironmentMap, path):
    document = {
        "format": MAP_FORMAT,
        "count": len(env_map),
        "provenance": env_map.provenance,
        "materials": [
            {"id": int(i), "name": name, "category": category, "x": float(x), "y": float(y)}
            for i, name, category, (x, y) in zip(env_map.ids, env_map.names, env_map.categories, env_map.points)
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(document, sort_keys=False, allow_unicode=True))
    return path


def load_map(path) -> EnvironmentMap:
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise MapFormatError(f"Cannot read environment map {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise MapFormatError(f"Corrupt environment map {path}: {exc}") from exc

    if not isinstance(document, dict) or document.get("format") != MAP_FORMAT:
        raise MapFormatError(f"{path} is not an environment map")
    materials = document.get("materials")
    if not isinstance(materials, list) or len(materials) != document.get("count"):
        raise MapFormatError(f"{path}: material list is truncated or missing")
    try:
        return EnvironmentMap(
            ids=[m["id"] for m in materials],
            names=[str(m["name"]) for m in materials],
            categories=[m["category"] for m in materials],
            points=[[float(m["x"]), float(m["y"])] for m in materials],
            provenance=document.get("provenance") or {},
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MapFormatError):
            raise
        raise MapFormatError(f"{path}: invalid material entry ({exc})") from exc
