"""
Configuration d'exécution: clés pointées, profils nommés et validation.
"""
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union
import logging

import config
from backbone import BRANCH_ORDER, BackboneConfig
from data_pipeline import AugmentConfig
from errors import ConfigError
from losses import LossConfig
from optimizer import Schedule
from reid_head import HeadConfig

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


def _schema() -> Dict[str, Tuple[type, Optional[type]]]:
    # clé -> (type, type des éléments pour les listes)
    schema = {}
    for key, default in config.DEFAULT_RUN_CONFIG.items():
        if isinstance(default, list):
            schema[key] = (list, type(default[0]) if default else str)
        else:
            schema[key] = (type(default), None)
    return schema


SCHEMA = _schema()

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


def _scalar(key: str, raw: str, kind: type) -> Any:
    raw = raw.strip().strip("\"'")
    try:
        if kind is bool:
            if raw.lower() in _TRUE:
                return True
            if raw.lower() in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"valeur {raw!r} invalide, {kind.__name__} attendu", key=key)


def parse_value(key: str, raw: str) -> Any:
    """
    Convertit une valeur texte selon le type de la clé.
    """
    if key not in SCHEMA:
        raise ConfigError("clé inconnue", key=key)
    kind, item = SCHEMA[key]
    if kind is list:
        body = raw.strip()
        if body.startswith("[") and body.endswith("]"):
            body = body[1:-1]
        parts = [p for p in (s.strip() for s in body.split(",")) if p]
        return [_scalar(key, p, item) for p in parts]
    return _scalar(key, raw, kind)


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    return str(value)


def validate(values: Dict[str, Any]) -> None:
    """
    Vérifie les invariants croisés de la configuration.
    """
    def require(condition: bool, key: str, message: str) -> None:
        if not condition:
            raise ConfigError(message, key=key)

    require(values["precision"] in (32, 64), "precision", "32 ou 64 attendu")
    resolution = values["data.resolution"]
    require(len(resolution) == 2 and all(r > 0 for r in resolution), "data.resolution", "deux entiers positifs attendus")
    require(all(r % 16 == 0 for r in resolution), "data.resolution", f"{resolution} non divisible par 16")
    require(0.0 <= values["data.flip_prob"] <= 1.0, "data.flip_prob", "probabilité hors de [0,1]")
    require(0.0 <= values["data.erasing_prob"] <= 1.0, "data.erasing_prob", "probabilité hors de [0,1]")
    require(0.0 < values["data.train_fraction"] < 1.0, "data.train_fraction", "fraction hors de (0,1)")
    require(values["data.queries_per_id"] >= 1, "data.queries_per_id", "au moins 1 requête")
    require(len(values["data.mean"]) == 3 and len(values["data.std"]) == 3, "data.mean", "3 canaux attendus")
    require(all(s > 0 for s in values["data.std"]), "data.std", "écarts-types positifs attendus")

    require(values["backbone.last_stride"] in (1, 2), "backbone.last_stride", "1 ou 2 attendu")
    require(len(values["backbone.blocks"]) == 4 and all(n >= 1 for n in values["backbone.blocks"]),
            "backbone.blocks", "4 étages d'au moins un bloc")
    require(values["backbone.base_channels"] >= 2, "backbone.base_channels", "au moins 2 canaux")
    branches = values["backbone.branches"]
    require(bool(branches) and all(b in BRANCH_ORDER for b in branches) and len(set(branches)) == len(branches),
            "backbone.branches", f"sous-ensemble de {list(BRANCH_ORDER)} attendu")
    require("global" in branches, "backbone.branches", "la branche globale est obligatoire")
    feature_height = resolution[0] // (8 * values["backbone.last_stride"])
    for branch, k in (("parts2", 2), ("parts3", 3)):
        require(branch not in branches or feature_height % k == 0, "data.resolution",
                f"hauteur de carte {feature_height} non divisible par {k} ({branch})")

    require(values["head.embed_dim"] >= 1, "head.embed_dim", "dimension positive attendue")
    require(values["head.pooling"] in ("avg", "max", "gem"), "head.pooling", "avg, max ou gem attendu")
    require(values["loss.margin"] >= 0, "loss.margin", "marge négative")
    require(0.0 <= values["loss.epsilon"] < 1.0, "loss.epsilon", "epsilon hors de [0,1)")
    require(values["loss.w_tp"] >= 0 and values["loss.w_ce"] >= 0, "loss.w_tp", "poids négatif")
    require(values["loss.w_tp"] > 0 or values["loss.w_ce"] > 0, "loss.w_tp", "les deux poids sont nuls")
    require(values["optim.lr"] > 0, "optim.lr", "taux positif attendu")
    require(0 <= values["optim.lr_min"] <= values["optim.lr"], "optim.lr_min", "0 <= lr_min <= lr attendu")
    require(values["optim.epochs"] >= 0, "optim.epochs", "nombre d'époques négatif")
    require(values["optim.freeze_iters"] >= 0, "optim.freeze_iters", "nombre de pas négatif")
    require(values["sampler.P"] >= 2, "sampler.P", "au moins 2 identités par lot")
    require(values["sampler.K"] >= 2, "sampler.K", "au moins 2 images par identité")
    require(values["eval.batch_size"] >= 1, "eval.batch_size", "taille de lot positive attendue")


class RunConfig:
    """
    Configuration complète et validée d'une exécution.
    """

    def __init__(self, values: Dict[str, Any]):
        unknown = set(values) - set(SCHEMA)
        if unknown:
            raise ConfigError("clé inconnue", key=sorted(unknown)[0])
        merged = dict(config.DEFAULT_RUN_CONFIG)
        merged.update(values)
        validate(merged)
        self.values = merged

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def as_text(self) -> str:
        """
        Instantané `key = value`, relisible par parse_config.
        """
        return "".join(f"{key} = {format_value(self.values[key])}\n" for key in SCHEMA)

    def backbone_config(self) -> BackboneConfig:
        v = self.values
        return BackboneConfig(
            blocks_per_stage=tuple(v["backbone.blocks"]),
            base_channels=v["backbone.base_channels"],
            last_stride=v["backbone.last_stride"],
            use_ibn=v["backbone.use_ibn"],
            ibn_stages=tuple(v["backbone.ibn_stages"]),
            use_nonlocal=v["backbone.use_nonlocal"],
            branches=tuple(v["backbone.branches"]),
            precision=v["precision"],
        )

    def head_config(self, num_classes: Optional[int] = None) -> HeadConfig:
        v = self.values
        return HeadConfig(
            embed_dim=v["head.embed_dim"],
            bnneck=v["head.bnneck"],
            pooling=v["head.pooling"],
            test_parts=v["head.test_parts"],
            num_classes=num_classes,
        )

    def loss_config(self) -> LossConfig:
        v = self.values
        return LossConfig(
            margin=v["loss.margin"],
            epsilon=v["loss.epsilon"],
            soft_margin=v["loss.soft_margin"],
            label_smoothing=v["loss.label_smoothing"],
            w_tp=v["loss.w_tp"],
            w_ce=v["loss.w_ce"],
        )

    def augment_config(self) -> AugmentConfig:
        v = self.values
        return AugmentConfig(
            flip_prob=v["data.flip_prob"],
            random_erasing=v["data.random_erasing"],
            erasing_prob=v["data.erasing_prob"],
            erasing_area=tuple(v["data.erasing_area"]),
            erasing_aspect=tuple(v["data.erasing_aspect"]),
            resolution=tuple(v["data.resolution"]),
            mean=tuple(v["data.mean"]),
            std=tuple(v["data.std"]),
        )

    def schedule(self, total_steps: int) -> Schedule:
        v = self.values
        return Schedule(
            lr_base=v["optim.lr"],
            lr_min=v["optim.lr_min"],
            total_steps=total_steps,
            freeze_iters=v["optim.freeze_iters"],
            cosine=v["optim.cosine"],
        )


def _parse_lines(text: str) -> Dict[str, str]:
    raw: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"ligne {number}: `key = value` attendu")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"clé inconnue (ligne {number})", key=key)
        if key in raw:
            raise ConfigError(f"clé répétée (ligne {number})", key=key)
        raw[key] = value
    return raw


def parse_config(
    file: Union[str, Path, None] = None,
    overrides: Iterable[str] = (),
    text: Optional[str] = None
) -> RunConfig:
    """
    Lit une configuration `key = value` et applique les surcharges.

    Précédence: valeurs par défaut < profil < fichier < surcharges `--set`.

    Args:
        file: Fichier de configuration (optionnel)
        overrides: Surcharges `key=value`
        text: Contenu déjà lu, à la place du fichier

    Returns:
        Configuration validée
    """
    if text is None and file is not None:
        text = Path(file).read_text(encoding="utf-8")
    from_file = _parse_lines(text or "")

    from_overrides: Dict[str, str] = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"surcharge {item!r}: `key=value` attendu")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError("clé inconnue", key=key)
        from_overrides[key] = value

    profile = parse_value("profile", from_overrides.get("profile", from_file.get("profile", "none")))
    if profile != "none" and profile not in config.PROFILES:
        raise ConfigError(f"profil inconnu {profile!r} ({', '.join(config.PROFILES)})", key="profile")

    values: Dict[str, Any] = dict(config.PROFILES.get(profile, {}))
    for source in (from_file, from_overrides):
        for key, raw in source.items():
            values[key] = parse_value(key, raw)
    values["profile"] = profile

    cfg = RunConfig(values)
    logger.info(f"Configuration chargée (profil {profile}, {len(from_file)} clés de fichier, {len(from_overrides)} surcharges)")
    return cfg
