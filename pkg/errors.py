"""
Exceptions typées de reid-forge.
"""
from typing import Optional


class ReIDError(Exception):
    """
    Classe de base de toutes les erreurs de l'application.
    """


class ShapeError(ReIDError):
    """Dimensions incompatibles entre opérandes ou avec une opération."""


class DomainError(ReIDError):
    """Valeur hors du domaine d'une opération (log de x <= 0, max vide...)."""


class AllocationError(ReIDError):
    """Taille de tenseur non adressable."""


class ContractError(ReIDError):
    """Précondition d'appel violée (racine non scalaire, bande vide...)."""


class ConfigError(ReIDError):
    """
    Configuration invalide.

    Args:
        message: Description de l'erreur
        key: Clé de configuration fautive (si connue)
    """

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class MiningError(ReIDError):
    """Lot incompatible avec le minage des triplets difficiles."""


class ParseError(ReIDError):
    """
    Ligne de fichier mal formée.

    Args:
        message: Description de l'erreur
        line: Numéro de ligne (à partir de 1)
    """

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"ligne {line}: {message}" if line is not None else message)


class SplitError(ReIDError):
    """Partition identités entraînement / test impossible."""


class DecodeError(ReIDError):
    """Fichier image ou tenseur illisible."""


class MetricsError(ReIDError):
    """Aucune requête exploitable pour les métriques."""


class NumericError(ReIDError):
    """Valeur non finie pendant l'entraînement."""


class CheckpointError(ReIDError):
    """Point de sauvegarde illisible."""


class MigrationError(CheckpointError):
    """Version de format de point de sauvegarde non supportée."""


class CorruptionError(CheckpointError):
    """Somme de contrôle invalide."""
