"""
Manifestes de corpus: une image par ligne avec son identité.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import logging

import numpy as np
import pandas as pd

import config
from errors import ContractError, ParseError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)

SPLIT_VALUES = ("train", "test")


@dataclass
class Manifest:
    """
    Liste ordonnée de (chemin relatif, identité) et répertoire racine.

    Args:
        entries: Couples (chemin, identité)
        root: Répertoire de résolution des chemins relatifs
        splits: Partition publiée optionnelle ("train" ou "test" par entrée)
    """
    entries: List[Tuple[str, str]]
    root: Path = Path(".")
    splits: Optional[List[str]] = None
    identity_index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        seen = set()
        self.identity_index = {}
        for path, identity in self.entries:
            if path in seen:
                raise ContractError(f"chemin dupliqué: {path}")
            seen.add(path)
            self.identity_index.setdefault(identity, len(self.identity_index))
        if self.splits is not None and len(self.splits) != len(self.entries):
            raise ContractError("colonne de partition de longueur incohérente")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def identities(self) -> List[str]:
        return list(self.identity_index)

    @property
    def labels(self) -> np.ndarray:
        """
        Indices denses d'identité, dans l'ordre de première apparition.
        """
        return np.array([self.identity_index[i] for _, i in self.entries], dtype=np.int64)

    def path_of(self, index: int) -> Path:
        return self.root / self.entries[index][0]

    def identity_of(self, index: int) -> str:
        return self.entries[index][1]

    def samples_by_identity(self) -> Dict[str, List[int]]:
        grouped: Dict[str, List[int]] = {identity: [] for identity in self.identity_index}
        for i, (_, identity) in enumerate(self.entries):
            grouped[identity].append(i)
        return grouped

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.entries, columns=config.DATA_CONFIG["manifest_header"])
        if self.splits is not None:
            frame[config.DATA_CONFIG["split_column"]] = self.splits
        return frame


def load_manifest(file: Union[str, Path]) -> Manifest:
    """
    Charge un manifeste `path,identity[,split]`.

    Args:
        file: Fichier UTF-8, en-tête puis une ligne par image

    Returns:
        Manifeste dont la racine est le dossier du fichier
    """
    file = Path(file)
    raw = file.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"encodage UTF-8 invalide (octet {e.start})", line=raw[:e.start].count(b"\n") + 1) from e
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("manifeste vide", line=1)

    base_header = config.DATA_CONFIG["manifest_header"]
    header = lines[0].split(",")
    if header == base_header:
        with_split = False
    elif header == base_header + [config.DATA_CONFIG["split_column"]]:
        with_split = True
    else:
        raise ParseError(f"en-tête inattendu: {lines[0]!r}", line=1)
    n_fields = len(header)

    entries, splits, seen = [], [], {}
    for number, line in enumerate(lines[1:], start=2):
        if line.endswith("\r"):
            raise ParseError("fin de ligne CRLF interdite", line=number)
        fields = line.split(",")
        if len(fields) != n_fields:
            raise ParseError(f"{len(fields)} champs au lieu de {n_fields}", line=number)
        if any(not f for f in fields):
            raise ParseError("champ vide", line=number)
        path, identity = fields[0], fields[1]
        if path in seen:
            raise ParseError(f"chemin dupliqué {path!r} (déjà ligne {seen[path]})", line=number)
        seen[path] = number
        if with_split:
            if fields[2] not in SPLIT_VALUES:
                raise ParseError(f"partition inconnue {fields[2]!r}", line=number)
            splits.append(fields[2])
        entries.append((path, identity))

    manifest = Manifest(entries, file.parent, splits if with_split else None)
    logger.info(f"Manifeste {file} chargé: {len(manifest)} images, {len(manifest.identities)} identités")
    return manifest


def save_manifest(manifest: Manifest, file: Union[str, Path]) -> Path:
    """
    Écrit un manifeste au format de load_manifest.
    """
    file = Path(file)
    for path, identity in manifest.entries:
        if "," in path or "," in identity:
            raise ContractError(f"virgule interdite dans {path!r} / {identity!r}")
    manifest.to_frame().to_csv(file, index=False, lineterminator="\n", encoding="utf-8")
    logger.info(f"Manifeste sauvegardé dans {file}")
    return file
