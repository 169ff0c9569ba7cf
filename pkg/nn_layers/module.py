"""
Paramètres nommés et conteneur de couches.
"""
from typing import Dict, List, Optional, Tuple
import logging

import numpy as np

import config
from autodiff import Tensor
from errors import ContractError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


class Param:
    """
    Paramètre entraînable d'un modèle.

    Le drapeau `trainable` est permanent; `frozen` est posé temporairement par
    l'entraînement gelé. Un paramètre non modifiable ne reçoit aucune mise à
    jour de l'optimiseur.
    """

    def __init__(self, data: np.ndarray, trainable: bool = True, name: str = ""):
        """
        Initialise le paramètre.

        Args:
            data: Valeur initiale
            trainable: Le paramètre est-il entraînable
            name: Chemin hiérarchique (attribué par assign_names)
        """
        self.value = Tensor(data, requires_grad=trainable, name=name, dtype=np.asarray(data).dtype)
        self.trainable = trainable
        self.frozen = False
        self.name = name

    @property
    def updatable(self) -> bool:
        return self.trainable and not self.frozen

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.value.grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.value.zero_grad()

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape}, trainable={self.trainable})"


class Module:
    """
    Classe de base des couches: enfants et paramètres découverts dans l'ordre
    de déclaration des attributs.
    """

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> List[Tuple[str, "Module"]]:
        """
        Récupère les sous-modules directs.

        Returns:
            Liste de (nom, module)
        """
        found = []
        for name, value in vars(self).items():
            if isinstance(value, Module):
                found.append((name, value))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.append((f"{name}.{i}", item))
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        found.append((f"{name}.{key}", item))
        return found

    def named_params(self, prefix: str = "") -> List[Tuple[str, Param]]:
        """
        Récupère tous les paramètres avec leur chemin hiérarchique.

        Args:
            prefix: Préfixe du chemin

        Returns:
            Liste de (nom, paramètre) dans un ordre déterministe
        """
        found = []
        for name, value in vars(self).items():
            if isinstance(value, Param):
                found.append((f"{prefix}{name}", value))
        for name, child in self.children():
            found.extend(child.named_params(f"{prefix}{name}."))
        return found

    def params(self) -> List[Param]:
        return [p for _, p in self.named_params()]

    def named_modules(self, prefix: str = "") -> List[Tuple[str, "Module"]]:
        found = [(prefix.rstrip("."), self)]
        for name, child in self.children():
            found.extend(child.named_modules(f"{prefix}{name}."))
        return found

    def norm_states(self, kind: Optional[str] = None) -> List[Tuple[str, "Module"]]:
        """
        Récupère les états de normalisation, éventuellement filtrés par type.

        Args:
            kind: "batch", "instance" ou None pour tous
        """
        return [
            (name, module) for name, module in self.named_modules()
            if getattr(module, "norm_kind", None) is not None
            and (kind is None or module.norm_kind == kind)
        ]

    def named_buffers(self) -> List[Tuple[str, np.ndarray]]:
        """
        Récupère les statistiques non entraînables (moyennes et variances courantes).
        """
        found = []
        for name, module in self.named_modules():
            for key in getattr(module, "buffer_names", ()):
                found.append((f"{name}.{key}" if name else key, getattr(module, key)))
        return found

    def load_buffer(self, full_name: str, value: np.ndarray) -> None:
        """
        Remplace une statistique non entraînable par son nom complet.
        """
        modules = dict(self.named_modules())
        owner, _, key = full_name.rpartition(".")
        module = modules.get(owner)
        if module is None or key not in getattr(module, "buffer_names", ()):
            raise ContractError(f"statistique inconnue: {full_name}")
        current = getattr(module, key)
        if current.shape != value.shape:
            raise ContractError(f"forme {value.shape} pour {full_name}, attendu {current.shape}")
        setattr(module, key, np.array(value, dtype=current.dtype))

    def assign_names(self, prefix: str = "") -> None:
        """
        Attribue à chaque paramètre son chemin hiérarchique.
        """
        seen = set()
        for name, param in self.named_params(prefix):
            if name in seen:
                raise ContractError(f"nom de paramètre dupliqué: {name}")
            seen.add(name)
            param.name = name
            param.value.name = name

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.params():
            param.zero_grad()

    def param_count(self) -> int:
        return int(sum(p.value.data.size for p in self.params()))

    def state_summary(self) -> Dict[str, Tuple[int, ...]]:
        return {name: p.shape for name, p in self.named_params()}
