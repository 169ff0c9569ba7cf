"""
Générateur de corpus synthétique: une texture à taches ou rayures par identité.
"""
from pathlib import Path
from typing import Dict, Union
import logging
import math

import numpy as np

import config
from data_pipeline.images import write_ppm
from data_pipeline.manifest import Manifest, save_manifest
from errors import ConfigError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"


def _hue_to_rgb(hue: float, saturation: float = 0.6, value: float = 0.85) -> np.ndarray:
    k = (np.array([5.0, 3.0, 1.0]) + hue * 6.0) % 6.0
    return value - value * saturation * np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)


def identity_params(rng: np.random.Generator) -> Dict:
    """
    Tire les paramètres de texture d'une identité.
    """
    params = {
        "pattern": "spots" if rng.random() < 0.5 else "stripes",
        "color": _hue_to_rgb(rng.random()),
        "axes": (rng.uniform(0.65, 0.85), rng.uniform(0.40, 0.55)),
    }
    if params["pattern"] == "spots":
        n_spots = int(rng.integers(6, 16))
        params["centers"] = rng.uniform(-0.9, 0.9, size=(n_spots, 2))
        params["radius"] = rng.uniform(0.08, 0.18)
    else:
        params["frequency"] = rng.uniform(6.0, 14.0)
        params["angle"] = rng.uniform(0.0, math.pi)
    return params


def render(params: Dict, resolution: int, rng: np.random.Generator) -> np.ndarray:
    """
    Rend une vue de l'identité: rotation, translation, luminosité et bruit de fond aléatoires.

    Returns:
        Image [3,R,R] dans [0,1]
    """
    theta = math.radians(rng.uniform(-1.0, 1.0) * config.SYNTH_CONFIG["max_rotation_deg"])
    # Les coordonnées couvrent [-1,1]: une fraction f de l'image vaut 2f unités
    tx, ty = rng.uniform(-1.0, 1.0, size=2) * 2.0 * config.SYNTH_CONFIG["max_translation"]
    brightness = 1.0 + rng.uniform(-1.0, 1.0) * config.SYNTH_CONFIG["brightness_jitter"]
    noise_std = config.SYNTH_CONFIG["noise_std"]

    grid = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    v, u = np.meshgrid(grid, grid, indexing="ij")
    du, dv = u - tx, v - ty
    a = math.cos(theta) * du + math.sin(theta) * dv
    b = -math.sin(theta) * du + math.cos(theta) * dv
    ax, ay = params["axes"]
    su, sv = a / ax, b / ay
    body = su * su + sv * sv <= 1.0

    if params["pattern"] == "spots":
        centers = params["centers"]
        d2 = (su[..., None] - centers[:, 0]) ** 2 + (sv[..., None] - centers[:, 1]) ** 2
        marked = np.any(d2 < params["radius"] ** 2, axis=-1)
    else:
        phase = su * math.cos(params["angle"]) + sv * math.sin(params["angle"])
        marked = np.sin(params["frequency"] * phase) > 0

    color = params["color"][:, None, None]
    body_pixels = np.where(marked[None], color * 0.25, color)
    body_pixels = body_pixels + rng.normal(0.0, noise_std * 0.25, size=(3, resolution, resolution))
    background = 0.5 + rng.normal(0.0, noise_std, size=(3, resolution, resolution))
    image = np.where(body[None], body_pixels, background) * brightness
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def synth_generate(
    n_ids: int = config.SYNTH_CONFIG["n_ids"],
    imgs_per_id: int = config.SYNTH_CONFIG["imgs_per_id"],
    resolution: int = config.SYNTH_CONFIG["resolution"],
    seed: int = 0,
    out_dir: Union[str, Path] = "synth"
) -> Manifest:
    """
    Génère un corpus PPM et son manifeste.

    Args:
        n_ids: Nombre d'identités (>= 2)
        imgs_per_id: Images par identité
        resolution: Côté des images carrées
        seed: Graine (même graine -> corpus identique à l'octet près)
        out_dir: Dossier de sortie (créé si besoin)

    Returns:
        Manifeste écrit dans out_dir/manifest.csv
    """
    if n_ids < 2:
        raise ConfigError(f"au moins 2 identités requises, reçu {n_ids}")
    if imgs_per_id < 1 or resolution < 1:
        raise ConfigError(f"paramètres invalides: {imgs_per_id} images, résolution {resolution}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_ids):
        params = identity_params(rng)
        identity = f"id{i:03d}"
        (out_dir / identity).mkdir(exist_ok=True)
        for j in range(imgs_per_id):
            image = render(params, resolution, np.random.default_rng([seed, i, j]))
            relative = f"{identity}/img{j:03d}.ppm"
            write_ppm(out_dir / relative, image)
            entries.append((relative, identity))
        logger.debug(f"Identité {identity} générée ({params['pattern']})")

    manifest = Manifest(entries, out_dir)
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    logger.info(f"Corpus synthétique généré: {n_ids} identités x {imgs_per_id} images dans {out_dir}")
    return manifest
