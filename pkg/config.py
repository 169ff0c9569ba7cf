"""
Configuration globale pour l'application reid-forge.
"""
from typing import Dict, List, Union
import os
from pathlib import Path

from dotenv import load_dotenv

# Variables d'environnement (.env facultatif)
load_dotenv()

# Chemins de base
BASE_DIR = Path(__file__).resolve().parent
RUNS_DIR = BASE_DIR / "runs"
DOCS_DIR = BASE_DIR / "docs"

# Configuration de l'application
APP_CONFIG = {
    "name": "reid-forge",
    "threads": max(1, int(os.environ.get("REID_FORGE_THREADS", "1"))),
}

# Paramètres de logging
LOG_CONFIG = {
    "level": os.environ.get("REID_FORGE_LOG_LEVEL", "INFO"),
    "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    "file": "reid_forge.log"
}

# Codes de sortie de la ligne de commande
EXIT_CODES = {
    "ok": 0,
    "config": 1,
    "io": 2,
    "numeric": 3
}

# Configuration de l'autodiff
AUTODIFF_CONFIG = {
    "precision": 32,          # 32 pour l'entraînement, 64 pour la vérification
    "fd_step": 1e-5,          # pas des différences finies centrées
}

# Configuration des couches
LAYER_CONFIG = {
    "norm_eps": 1e-5,
    "norm_momentum": 0.1,
    "gem_p_init": 3.0,
    "gem_clamp": 1e-6,
    "classifier_std": 0.01,
}

# Configuration des données
DATA_CONFIG = {
    "manifest_header": ["path", "identity"],
    "split_column": "split",
    "erasing_prob": 0.5,
    "erasing_area": [0.02, 0.4],
    "erasing_aspect": [0.3, 3.33],
    "erasing_attempts": 10,
    "cache_batches": 8,
    "mean": [0.5, 0.5, 0.5],
    "std": [0.5, 0.5, 0.5],
}

# Configuration du générateur synthétique
SYNTH_CONFIG = {
    "n_ids": 16,
    "imgs_per_id": 12,
    "resolution": 64,
    "max_rotation_deg": 20.0,
    "max_translation": 0.10,
    "brightness_jitter": 0.20,
    "noise_std": 0.08,
}

# Configuration de l'évaluation
EVAL_CONFIG = {
    "ranks": [1, 5, 10],
    "batch_size": 32,
    "metrics_file": "metrics.csv",
    "per_query_file": "per_query.csv",
    "split_report_file": "split_report.csv",
    "cmc_plot_file": "cmc.html",
}

# Configuration de la sauvegarde
SAVE_CONFIG = {
    "checkpoint_format": "epoch_{epoch:03d}.arbc",
    "final_checkpoint": "final.arbc",
    "train_log": "train_log.csv",
    "nan_dump": "nan_batch.json",
    "config_snapshot": "config.txt",
}

# Configuration complète d'une exécution (clés pointées -> valeurs par défaut)
DEFAULT_RUN_CONFIG: Dict[str, Union[int, float, bool, str, List]] = {
    "profile": "none",
    "seed": 0,
    "precision": 32,
    "data.resolution": [64, 64],
    "data.flip_prob": 0.5,
    "data.random_erasing": False,
    "data.erasing_prob": DATA_CONFIG["erasing_prob"],
    "data.erasing_area": DATA_CONFIG["erasing_area"],
    "data.erasing_aspect": DATA_CONFIG["erasing_aspect"],
    "data.mean": DATA_CONFIG["mean"],
    "data.std": DATA_CONFIG["std"],
    "data.train_fraction": 0.5,
    "data.queries_per_id": 2,
    "data.keep_distractors": False,
    "backbone.blocks": [1, 1, 1, 1],
    "backbone.base_channels": 16,
    "backbone.last_stride": 1,
    "backbone.use_ibn": False,
    "backbone.ibn_stages": [1, 2, 3],
    "backbone.use_nonlocal": False,
    "backbone.branches": ["global"],
    "head.embed_dim": 64,
    "head.bnneck": True,
    "head.pooling": "avg",
    "head.test_parts": True,
    "loss.margin": 0.3,
    "loss.epsilon": 0.1,
    "loss.soft_margin": False,
    "loss.label_smoothing": True,
    "loss.w_tp": 1.0,
    "loss.w_ce": 1.0,
    "optim.lr": 0.00035,
    "optim.lr_min": 0.00035 / 45,
    "optim.epochs": 40,
    "optim.freeze_iters": 0,
    "optim.cosine": True,
    "optim.beta1": 0.9,
    "optim.beta2": 0.999,
    "optim.eps": 1e-8,
    "optim.weight_decay": 5e-4,
    "sampler.P": 4,
    "sampler.K": 16,
    "eval.batch_size": EVAL_CONFIG["batch_size"],
}

# Profils nommés (voir docs/profiles.md)
PROFILES: Dict[str, Dict[str, Union[int, float, bool, str, List]]] = {
    "arbase": {
        "data.resolution": [48, 48],
        "data.random_erasing": False,
        "backbone.last_stride": 1,
        "backbone.use_ibn": True,
        "backbone.use_nonlocal": False,
        "backbone.branches": ["global", "parts2", "parts3"],
        "head.bnneck": True,
        "head.pooling": "avg",
        "loss.label_smoothing": True,
        "loss.soft_margin": False,
        "loss.margin": 0.3,
        "loss.epsilon": 0.1,
        "optim.cosine": True,
        "optim.lr": 0.00035,
        "optim.freeze_iters": 0,
    },
    "bot": {
        "data.resolution": [64, 32],
        "data.random_erasing": True,
        "backbone.last_stride": 1,
        "backbone.use_ibn": False,
        "backbone.branches": ["global"],
        "head.bnneck": True,
        "head.pooling": "avg",
        "loss.label_smoothing": True,
        "loss.soft_margin": False,
        "optim.cosine": False,
    },
    "agw": {
        "data.resolution": [64, 32],
        "data.random_erasing": True,
        "backbone.last_stride": 1,
        "backbone.use_nonlocal": True,
        "backbone.branches": ["global"],
        "head.bnneck": True,
        "head.pooling": "gem",
        "loss.label_smoothing": True,
        "optim.cosine": False,
    },
    "sbs": {
        "data.resolution": [64, 32],
        "data.random_erasing": True,
        "backbone.last_stride": 1,
        "backbone.use_ibn": True,
        "backbone.use_nonlocal": True,
        "backbone.branches": ["global"],
        "head.bnneck": True,
        "head.pooling": "gem",
        "loss.label_smoothing": True,
        "loss.soft_margin": True,
        "optim.cosine": True,
        "optim.freeze_iters": 10,
    },
    "mgn": {
        "data.resolution": [96, 32],
        "data.random_erasing": True,
        "backbone.last_stride": 1,
        "backbone.branches": ["global", "parts2", "parts3"],
        "head.bnneck": True,
        "head.pooling": "max",
        "loss.label_smoothing": True,
        "optim.cosine": False,
    },
}
