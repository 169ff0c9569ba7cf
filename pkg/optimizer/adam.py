"""
Optimiseur Adam avec correction de biais et décroissance des poids découplée.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple
import logging

import numpy as np

import config
from errors import ContractError
from nn_layers import Param

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """
    Moments par paramètre et compteur de pas.
    """
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Param], st: AdamState, lr: float) -> None:
    """
    Applique un pas d'Adam à tous les paramètres modifiables.

    m <- β1·m + (1-β1)·g; v <- β2·v + (1-β2)·g²; θ <- θ - lr·m̂/(√v̂ + eps)
    puis θ <- θ - lr·wd·θ. Les paramètres gelés ou non entraînables ne
    bougent pas et leurs moments restent inchangés.

    Args:
        params: Paramètres nommés
        st: État de l'optimiseur (muté)
        lr: Taux d'apprentissage du pas
    """
    st.t += 1
    correction1 = 1.0 - st.beta1 ** st.t
    correction2 = 1.0 - st.beta2 ** st.t
    for p in params:
        if not p.updatable:
            continue
        theta = p.value.data
        grad = p.grad if p.grad is not None else np.zeros_like(theta)
        if grad.shape != theta.shape:
            raise ContractError(f"gradient {grad.shape} pour le paramètre {p.name} {theta.shape}")
        m = st.m.setdefault(p.name, np.zeros_like(theta))
        v = st.v.setdefault(p.name, np.zeros_like(theta))
        if m.shape != theta.shape:
            raise ContractError(f"moment {m.shape} pour le paramètre {p.name} {theta.shape}")

        m *= st.beta1
        m += (1.0 - st.beta1) * grad
        v *= st.beta2
        v += (1.0 - st.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        theta -= (lr * m_hat / (np.sqrt(v_hat) + st.eps)).astype(theta.dtype)
        if st.weight_decay:
            theta -= (lr * st.weight_decay * theta).astype(theta.dtype)


class Adam:
    """
    Optimiseur Adam propriétaire de son état.
    """

    def __init__(
        self,
        named_params: Sequence[Tuple[str, Param]],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0
    ):
        """
        Initialise l'optimiseur; les moments de chaque paramètre partent de zéro.

        Args:
            named_params: Paramètres (nom, Param) du modèle
            beta1: Inertie du premier moment
            beta2: Inertie du second moment
            eps: Terme de stabilité
            weight_decay: Décroissance des poids découplée
        """
        self.params: List[Param] = [p for _, p in named_params]
        self.state = AdamState(beta1, beta2, eps, weight_decay)
        for name, p in named_params:
            self.state.m[name] = np.zeros_like(p.value.data)
            self.state.v[name] = np.zeros_like(p.value.data)
        logger.info(f"Adam initialisé pour {len(self.params)} paramètres (β1={beta1}, β2={beta2}, wd={weight_decay})")

    def step(self, lr: float) -> None:
        adam_step(self.params, self.state, lr)

    def state_records(self) -> List[Tuple[str, np.ndarray]]:
        """
        Moments à sérialiser, dans l'ordre des paramètres.
        """
        records = []
        for p in self.params:
            records.append((f"adam.m.{p.name}", self.state.m[p.name]))
            records.append((f"adam.v.{p.name}", self.state.v[p.name]))
        return records

    def load_records(self, records: Dict[str, np.ndarray], t: int) -> None:
        """
        Restaure les moments et le compteur de pas.
        """
        for p in self.params:
            for kind, store in (("m", self.state.m), ("v", self.state.v)):
                key = f"adam.{kind}.{p.name}"
                if key not in records:
                    raise ContractError(f"moment absent du point de sauvegarde: {key}")
                if records[key].shape != p.value.data.shape:
                    raise ContractError(f"forme {records[key].shape} pour {key}")
                store[p.name] = np.array(records[key], dtype=p.value.data.dtype)
        self.state.t = int(t)
