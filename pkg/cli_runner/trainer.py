"""
Boucle d'entraînement: échantillonnage PK, pertes, Adam, journal CSV et points de sauvegarde.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
import json
import logging
import os

import numpy as np
import pandas as pd

import config
from autodiff import Tape, precision_dtype
from cli_runner.checkpoint import Checkpoint, restore, save_checkpoint
from cli_runner.run_config import RunConfig
from data_pipeline import BatchLoader, Manifest, PKSampler, SplitSpec, make_splits
from errors import ContractError, NumericError
from losses import total_loss
from optimizer import Adam, apply_freeze, learning_rate
from reid_head import ReIDModel

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "epoch", "lr", "loss_total", "loss_tp", "loss_ce"]


def split_for(cfg: RunConfig, manifest: Manifest, seed: Optional[int] = None) -> SplitSpec:
    """
    Partition d'une configuration (graine de la configuration par défaut).
    """
    return make_splits(
        manifest,
        train_fraction=cfg["data.train_fraction"],
        queries_per_id=cfg["data.queries_per_id"],
        seed=cfg.seed if seed is None else seed,
        keep_distractors=cfg["data.keep_distractors"],
    )


class Trainer:
    """
    Entraîne un ReIDModel sur les identités d'entraînement d'un manifeste.

    Le pas t va de 0 à T-1 avec T = époques x lots par époque. Tout l'état
    nécessaire à une reprise exacte (modèle, Adam, générateur du sampler,
    compteurs) passe par les points de sauvegarde.
    """

    def __init__(
        self,
        cfg: RunConfig,
        manifest: Manifest,
        out_dir: Union[str, Path],
        threads: int = config.APP_CONFIG["threads"]
    ):
        """
        Initialise l'entraînement.

        Args:
            cfg: Configuration validée
            manifest: Manifeste du corpus
            out_dir: Dossier des journaux et points de sauvegarde
            threads: Fils de chargement des images
        """
        self.cfg = cfg
        self.manifest = manifest
        self.out_dir = Path(out_dir)
        os.makedirs(self.out_dir, exist_ok=True)

        self.split = split_for(cfg, manifest)
        class_index = self.split.class_index()
        groups: Dict[int, List[int]] = {c: [] for c in class_index.values()}
        for sample in self.split.train:
            groups[class_index[manifest.identity_of(sample)]].append(sample)

        self.dtype = precision_dtype(cfg["precision"])
        self.model = ReIDModel(cfg.backbone_config(), cfg.head_config(len(class_index)), cfg.seed)
        self.optimizer = Adam(
            self.model.named_params(),
            beta1=cfg["optim.beta1"],
            beta2=cfg["optim.beta2"],
            eps=cfg["optim.eps"],
            weight_decay=cfg["optim.weight_decay"],
        )
        self.sampler = PKSampler(groups, cfg["sampler.P"], cfg["sampler.K"], cfg.seed)
        self.loader = BatchLoader(manifest, self.sampler, cfg.augment_config(), cfg.seed, threads, self.dtype)
        self.loss_cfg = cfg.loss_config()
        self.epochs = cfg["optim.epochs"]
        self.batches_per_epoch = self.sampler.batches_per_epoch
        self.schedule = cfg.schedule(self.epochs * self.batches_per_epoch)

        self.step = 0
        self.epoch = 0
        self.log_rows: List[Dict[str, Any]] = []
        self.log_file = self.out_dir / config.SAVE_CONFIG["train_log"]
        logger.info(
            f"Trainer initialisé: {len(class_index)} classes, {self.epochs} époques x "
            f"{self.batches_per_epoch} lots, sortie {self.out_dir}"
        )

    @property
    def total_steps(self) -> int:
        return self.schedule.total_steps

    def meta(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "epoch": self.epoch,
            "sampler_state": self.sampler.get_state(),
            "num_classes": self.model.num_classes,
            "split_seed": self.split.seed,
            "train_ids": list(self.split.train_ids),
        }

    def save(self, file: Union[str, Path]) -> Path:
        return save_checkpoint(file, self.model, self.optimizer, self.cfg.as_text(), **self.meta())

    def resume(self, ckpt: Checkpoint) -> None:
        """
        Reprend depuis un point de sauvegarde produit par la même configuration.
        """
        if ckpt.meta.get("num_classes") != self.model.num_classes:
            raise ContractError(
                f"{ckpt.meta.get('num_classes')} classes dans le point de sauvegarde, "
                f"{self.model.num_classes} dans le manifeste"
            )
        meta = restore(ckpt, self.model, self.optimizer)
        self.sampler.set_state(meta["sampler_state"])
        self.step = int(meta["step"])
        self.epoch = int(meta["epoch"])
        if self.log_file.exists():
            previous = pd.read_csv(self.log_file, float_precision="round_trip")
            self.log_rows = previous[previous["step"] < self.step].to_dict("records")
        logger.info(f"Reprise au pas {self.step} (époque {self.epoch})")

    def _dump_nan_batch(self, batch, report=None, error: str = "") -> Path:
        file = self.out_dir / config.SAVE_CONFIG["nan_dump"]
        dump = {
            "step": self.step,
            "epoch": self.epoch,
            "indices": [int(i) for i in batch.indices],
            "paths": [str(self.manifest.path_of(int(i))) for i in batch.indices],
            "labels": [int(c) for c in batch.labels],
            "loss": report.as_row() if report is not None else None,
        }
        if error:
            dump["error"] = error
        with open(file, "w", encoding="utf-8") as f:
            json.dump(dump, f, indent=4)
        return file

    def train_step(self) -> Dict[str, Any]:
        """
        Exécute un pas d'optimisation.

        Returns:
            Ligne de journal du pas
        """
        lr = learning_rate(self.step, self.schedule)
        apply_freeze(self.model, self.step, self.schedule)
        batch = self.loader.next_batch(self.step)

        self.model.train()
        self.model.zero_grad()
        try:
            with Tape(self.cfg["precision"]) as tape:
                out = self.model(batch.images)
                loss, report = total_loss(out, batch.labels, self.loss_cfg)
        except NumericError as e:
            dump = self._dump_nan_batch(batch, error=str(e))
            logger.error(f"Valeur non finie au pas {self.step}: {e}, lot décrit dans {dump}")
            raise NumericError(f"{e} au pas {self.step} (lot décrit dans {dump})") from e

        if not np.isfinite(report.total):
            dump = self._dump_nan_batch(batch, report)
            logger.error(f"Perte non finie au pas {self.step}, lot décrit dans {dump}")
            raise NumericError(f"perte non finie au pas {self.step} (lot décrit dans {dump})")

        tape.backward(loss)
        self.optimizer.step(lr)
        row = {"step": self.step, "epoch": self.epoch, "lr": lr, **report.as_row()}
        logger.debug(f"Pas {self.step}: perte {report.total:.6f}, lr {lr:.3e}")
        self.step += 1
        return row

    def write_log(self) -> Path:
        frame = pd.DataFrame(self.log_rows, columns=LOG_COLUMNS)
        frame.to_csv(self.log_file, index=False, lineterminator="\n")
        return self.log_file

    def run(self) -> Path:
        """
        Entraîne jusqu'à la dernière époque.

        Un point de sauvegarde est écrit après chaque époque, puis `final.arbc`.

        Returns:
            Chemin du point de sauvegarde final
        """
        (self.out_dir / config.SAVE_CONFIG["config_snapshot"]).write_text(self.cfg.as_text(), encoding="utf-8")
        try:
            while self.epoch < self.epochs:
                for _ in range(self.step - self.epoch * self.batches_per_epoch, self.batches_per_epoch):
                    self.log_rows.append(self.train_step())
                self.epoch += 1
                self.write_log()
                self.save(self.out_dir / config.SAVE_CONFIG["checkpoint_format"].format(epoch=self.epoch))
                last = self.log_rows[-1]
                logger.info(f"Époque {self.epoch}/{self.epochs}: perte {last['loss_total']:.4f}, lr {last['lr']:.3e}")
        except NumericError:
            self.write_log()
            raise
        except Exception as e:
            logger.error(f"Erreur lors de l'entraînement au pas {self.step}: {str(e)}")
            raise
        self.write_log()
        return self.save(self.out_dir / config.SAVE_CONFIG["final_checkpoint"])
