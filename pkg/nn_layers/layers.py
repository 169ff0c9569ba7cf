"""
Couches neuronales: linéaire, convolution, normalisations, pooling et attention non locale.
"""
from typing import Optional, Sequence
import logging
import math

import numpy as np

import config
from autodiff import Tensor, ops
from errors import ConfigError, ContractError, ShapeError
from nn_layers.module import Module, Param

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


def he_normal(shape: Sequence[int], fan_in: int, rng: np.random.Generator,
              dtype: np.dtype) -> np.ndarray:
    """
    Tire des poids gaussiens centrés d'écart-type sqrt(2 / fan_in).
    """
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=tuple(shape)).astype(dtype)


# ---------------------------------------------------------------------------
# Linéaire et convolution
# ---------------------------------------------------------------------------

def linear(x: Tensor, w: Param, bias: Optional[Param] = None) -> Tensor:
    """
    Calcule x·w (+ biais).

    Args:
        x: Entrée [N,Din]
        w: Poids [Din,Dout]
        bias: Biais [Dout] (optionnel)

    Returns:
        Sortie [N,Dout]
    """
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: entrée {x.shape} incompatible avec le poids {w.shape}")
    out = ops.matmul(x, w.value)
    if bias is not None:
        out = ops.add(out, ops.expand(ops.reshape(bias.value, (1, w.shape[1])), out.shape))
    return out


class Linear(Module):
    """
    Couche linéaire.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 std: Optional[float] = None, dtype: np.dtype = np.float32):
        """
        Initialise la couche.

        Args:
            d_in: Dimension d'entrée
            d_out: Dimension de sortie
            rng: Générateur pour l'initialisation
            bias: Ajouter un biais
            std: Écart-type des poids (sqrt(2/d_in) si None)
            dtype: Type scalaire
        """
        super().__init__()
        std = math.sqrt(2.0 / d_in) if std is None else std
        self.weight = Param(rng.normal(0.0, std, size=(d_in, d_out)).astype(dtype))
        self.bias = Param(np.zeros(d_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    """
    Convolution 2D (corrélation croisée) à noyau carré.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = False,
                 dtype: np.dtype = np.float32, zero_init: bool = False):
        super().__init__()
        shape = (c_out, c_in, kernel, kernel)
        data = np.zeros(shape, dtype=dtype) if zero_init else he_normal(
            shape, c_in * kernel * kernel, rng, dtype
        )
        self.weight = Param(data)
        self.bias = Param(np.zeros(c_out, dtype=dtype)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(
            x, self.weight.value, self.bias.value if self.bias is not None else None,
            stride=self.stride, padding=self.padding
        )


# ---------------------------------------------------------------------------
# Normalisations
# ---------------------------------------------------------------------------

class NormState(Module):
    """
    État d'une normalisation par canal: affinité apprise et statistiques courantes.
    """

    def __init__(self, channels: int, dtype: np.dtype = np.float32,
                 momentum: float = config.LAYER_CONFIG["norm_momentum"],
                 eps: float = config.LAYER_CONFIG["norm_eps"],
                 kind: str = "batch"):
        """
        Initialise l'état.

        Args:
            channels: Nombre de canaux
            dtype: Type scalaire
            momentum: Inertie des statistiques courantes, dans (0,1)
            eps: Terme de stabilité ajouté à la variance
            kind: "batch" (statistiques courantes sauvegardées) ou "instance"
        """
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise ConfigError(f"momentum {momentum} hors de (0,1)")
        if kind not in ("batch", "instance"):
            raise ConfigError(f"normalisation inconnue: {kind}")
        self.norm_kind = kind
        self.buffer_names = ("running_mean", "running_var") if kind == "batch" else ()
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.channels = channels

    @property
    def mode(self) -> str:
        return "train" if self.training else "eval"


def _per_channel(values: Tensor, like: Tensor) -> Tensor:
    shape = (1, like.shape[1]) + (1,) * (like.ndim - 2)
    return ops.expand(ops.reshape(values, shape), like.shape)


def _affine(xhat: Tensor, s: NormState) -> Tensor:
    return ops.add(ops.mul(xhat, _per_channel(s.gamma.value, xhat)), _per_channel(s.beta.value, xhat))


def batch_norm(x: Tensor, s: NormState) -> Tensor:
    """
    Normalisation par lot sur (N,H,W) pour chaque canal.

    En mode entraînement, les statistiques du lot normalisent et mettent à
    jour running <- (1 - momentum)·running + momentum·lot (variance non
    biaisée). En mode évaluation, seules les statistiques courantes sont lues.

    Args:
        x: Entrée [N,C,H,W]
        s: État de normalisation à C canaux

    Returns:
        Sortie normalisée de même forme
    """
    if x.ndim != 4 or x.shape[1] != s.channels:
        raise ShapeError(f"batch_norm: entrée {x.shape} pour {s.channels} canaux")
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if count < 1:
        raise ContractError("batch_norm sur un lot vide")

    if s.training:
        if count < 2:
            raise ContractError("batch_norm en entraînement exige au moins 2 valeurs par canal")
        xhat, mean, var = ops.standardize(x, (0, 2, 3), s.eps)
        unbiased = var.reshape(-1) * (count / (count - 1))
        m = s.momentum
        s.running_mean = ((1 - m) * s.running_mean + m * mean.reshape(-1)).astype(s.running_mean.dtype)
        s.running_var = ((1 - m) * s.running_var + m * unbiased).astype(s.running_var.dtype)
    else:
        dtype = x.data.dtype
        mean = Tensor(s.running_mean.astype(dtype))
        scale = Tensor(np.sqrt(s.running_var + s.eps).astype(dtype))
        xhat = ops.div(ops.sub(x, _per_channel(mean, x)), _per_channel(scale, x))
    return _affine(xhat, s)


def instance_norm(x: Tensor, s: NormState) -> Tensor:
    """
    Normalisation par instance: chaque plan (n,c) sur (H,W), sans statistiques courantes.
    """
    if x.ndim != 4 or x.shape[1] != s.channels:
        raise ShapeError(f"instance_norm: entrée {x.shape} pour {s.channels} canaux")
    if x.shape[2] * x.shape[3] < 2:
        raise ContractError("instance_norm exige des plans d'au moins 2 pixels")
    xhat, _, _ = ops.standardize(x, (2, 3), s.eps)
    return _affine(xhat, s)


def ibn(x: Tensor, s_in: NormState, s_bn: NormState, split: int) -> Tensor:
    """
    Normalisation instance-lot: canaux [0, split) par instance, [split, C) par lot.
    """
    channels = x.shape[1]
    if not 0 < split < channels:
        raise ShapeError(f"point de coupure IBN {split} hors de (0, {channels})")
    left = instance_norm(ops.slice_axis(x, 1, 0, split), s_in)
    right = batch_norm(ops.slice_axis(x, 1, split, channels), s_bn)
    return ops.concat([left, right], axis=1)


class BatchNorm(Module):
    """
    Couche de normalisation par lot.
    """

    def __init__(self, channels: int, dtype: np.dtype = np.float32):
        super().__init__()
        self.state = NormState(channels, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.state)


class InstanceNorm(Module):
    """
    Couche de normalisation par instance.
    """

    def __init__(self, channels: int, dtype: np.dtype = np.float32):
        super().__init__()
        self.state = NormState(channels, dtype, kind="instance")

    def forward(self, x: Tensor) -> Tensor:
        return instance_norm(x, self.state)


class IBN(Module):
    """
    Couche instance-lot; la coupure par défaut est la moitié des canaux.
    """

    def __init__(self, channels: int, dtype: np.dtype = np.float32, split: Optional[int] = None):
        super().__init__()
        self.split = channels // 2 if split is None else split
        if not 0 < self.split < channels:
            raise ShapeError(f"point de coupure IBN {self.split} hors de (0, {channels})")
        self.instance = NormState(self.split, dtype, kind="instance")
        self.batch = NormState(channels - self.split, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ibn(x, self.instance, self.batch, self.split)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------

def pool(x: Tensor, kind: str = "avg", p: Optional[Tensor] = None,
         eps: float = config.LAYER_CONFIG["gem_clamp"]) -> Tensor:
    """
    Agrège spatialement chaque canal.

    Args:
        x: Entrée [N,C,H,W]
        kind: "avg", "max" ou "gem"
        p: Exposant GeM (scalaire, ramené à >= 1)
        eps: Seuil de troncature des entrées GeM

    Returns:
        Sortie [N,C]
    """
    if x.ndim != 4 or x.shape[2] * x.shape[3] < 1:
        raise ShapeError(f"pool attend [N,C,H,W] non vide: {x.shape}")
    if kind == "avg":
        return ops.reduce("mean", x, (2, 3))
    if kind == "max":
        return ops.reduce("max", x, (2, 3))
    if kind == "gem":
        if p is None:
            raise ConfigError("GeM exige un exposant p")
        p_eff = ops.clamp_min(p, 1.0)
        powered = ops.exp(ops.mul(ops.log(ops.clamp_min(x, eps)), p_eff))
        pooled = ops.reduce("mean", powered, (2, 3))
        return ops.exp(ops.div(ops.log(pooled), p_eff))
    raise ConfigError(f"pooling inconnu: {kind}")


class Pooling(Module):
    """
    Pooling global: moyenne, maximum ou moyenne généralisée à exposant appris.
    """

    def __init__(self, kind: str = "avg", dtype: np.dtype = np.float32,
                 p_init: float = config.LAYER_CONFIG["gem_p_init"]):
        super().__init__()
        if kind not in ("avg", "max", "gem"):
            raise ConfigError(f"pooling inconnu: {kind}", key="head.pooling")
        self.kind = kind
        self.p = Param(np.asarray(p_init, dtype=dtype)) if kind == "gem" else None

    def forward(self, x: Tensor) -> Tensor:
        return pool(x, self.kind, self.p.value if self.p is not None else None)


# ---------------------------------------------------------------------------
# Attention non locale
# ---------------------------------------------------------------------------

class NonLocalBlock(Module):
    """
    Bloc d'attention non locale résiduel, réduction des canaux par 2.

    W_z est initialisé à zéro: le bloc commence comme l'identité.
    """

    def __init__(self, channels: int, rng: np.random.Generator, dtype: np.dtype = np.float32):
        super().__init__()
        if channels % 2:
            raise ConfigError(f"le bloc non local exige un nombre pair de canaux, reçu {channels}")
        inner = channels // 2
        self.channels = channels
        self.theta = Conv2d(channels, inner, 1, rng, bias=True, dtype=dtype)
        self.phi = Conv2d(channels, inner, 1, rng, bias=True, dtype=dtype)
        self.g = Conv2d(channels, inner, 1, rng, bias=True, dtype=dtype)
        self.w_z = Conv2d(inner, channels, 1, rng, bias=True, dtype=dtype, zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        return non_local(x, self)


def non_local(x: Tensor, params: NonLocalBlock, return_attention: bool = False):
    """
    z = W_z·(softmax(θ(x)·φ(x)ᵀ / sqrt(C/2))·g(x)) + x.

    Args:
        x: Entrée [N,C,H,W]
        params: Bloc portant θ, φ, g et W_z
        return_attention: Renvoyer aussi la matrice d'attention [N,HW,HW]

    Returns:
        Sortie [N,C,H,W] (et l'attention si demandée)
    """
    n, c, h, w = x.shape
    if c % 2:
        raise ConfigError(f"le bloc non local exige un nombre pair de canaux, reçu {c}")
    if c != params.channels:
        raise ShapeError(f"non_local: {c} canaux pour un bloc de {params.channels}")
    inner, positions = c // 2, h * w

    theta = ops.transpose(ops.reshape(params.theta(x), (n, inner, positions)), (0, 2, 1))
    phi = ops.reshape(params.phi(x), (n, inner, positions))
    g = ops.transpose(ops.reshape(params.g(x), (n, inner, positions)), (0, 2, 1))

    scores = ops.mul(ops.matmul(theta, phi), 1.0 / math.sqrt(inner))
    attention = ops.softmax(scores, axis=-1)
    y = ops.matmul(attention, g)
    y = ops.reshape(ops.transpose(y, (0, 2, 1)), (n, inner, h, w))
    z = ops.add(params.w_z(y), x)
    return (z, attention) if return_attention else z
