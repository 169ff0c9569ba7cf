"""
Tenseurs denses et bande d'enregistrement pour la différentiation automatique inverse.
"""
from typing import Callable, List, Optional, Sequence, Tuple, Union
import logging
import math
import sys
import threading

import numpy as np

import config
from errors import AllocationError, ConfigError, ContractError, DomainError, ShapeError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

# Pile de bandes actives, propre à chaque fil d'exécution
_local = threading.local()


def precision_dtype(precision: int) -> np.dtype:
    """
    Convertit une précision (32 ou 64 bits) en type numpy.

    Args:
        precision: Largeur des scalaires en bits

    Returns:
        Type numpy correspondant
    """
    if precision == 32:
        return np.dtype(np.float32)
    if precision == 64:
        return np.dtype(np.float64)
    raise ConfigError(f"précision {precision} non supportée (32 ou 64)", key="precision")


def _tape_stack() -> List["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


class Node:
    """
    Opération enregistrée sur une bande.
    """

    __slots__ = ("tape", "inputs", "output", "backward_fn", "name")

    def __init__(self, tape: "Tape", inputs: Tuple["Tensor", ...], output: "Tensor",
                 backward_fn: BackwardFn, name: str):
        self.tape = tape
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.name = name


class Tape:
    """
    Bande ordonnée des opérations différentiables.

    Les nœuds sont ajoutés dans l'ordre d'exécution, donc dans un ordre
    topologique. Une bande s'active comme gestionnaire de contexte; hors de
    toute bande active, les opérations n'enregistrent rien.
    """

    def __init__(self, precision: int = config.AUTODIFF_CONFIG["precision"]):
        """
        Initialise une bande vide.

        Args:
            precision: Largeur des scalaires (32 par défaut, 64 pour la vérification)
        """
        self.precision = precision
        self.dtype = precision_dtype(precision)
        self.nodes: List[Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    @staticmethod
    def active() -> Optional["Tape"]:
        """
        Récupère la bande active du fil courant.

        Returns:
            Bande active ou None
        """
        stack = _tape_stack()
        return stack[-1] if stack else None

    def record(self, output: "Tensor", inputs: Tuple["Tensor", ...], backward_fn: BackwardFn,
               name: str) -> None:
        """
        Enregistre une opération et relie sa sortie à la bande.

        Args:
            output: Tenseur produit
            inputs: Tenseurs d'entrée
            backward_fn: Règle de rétropropagation (gradient de sortie -> gradients d'entrée)
            name: Nom de l'opération
        """
        node = Node(self, inputs, output, backward_fn, name)
        output.tape_node = node
        self.nodes.append(node)

    def backward(self, loss: "Tensor") -> None:
        """
        Rétropropage depuis une perte scalaire puis consomme la bande.

        Args:
            loss: Tenseur scalaire produit sur cette bande
        """
        if self.consumed:
            raise ContractError("bande déjà consommée")
        if loss.data.size != 1:
            raise ContractError(f"la racine doit être scalaire, forme {loss.shape}")
        if loss.tape_node is None or loss.tape_node.tape is not self:
            raise ContractError("la racine n'a pas été produite sur cette bande")

        grads = {id(loss): np.ones_like(loss.data)}
        reached = {id(loss): loss}

        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            input_grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, input_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    reached[key] = inp

        for key, tensor in reached.items():
            g = np.asarray(grads[key], dtype=tensor.data.dtype).reshape(tensor.shape)
            if tensor.tape_node is None and tensor.grad is not None:
                tensor.grad = tensor.grad + g
            else:
                tensor.grad = g

        for node in self.nodes:
            node.output.tape_node = None
        logger.debug(f"Rétropropagation sur {len(self.nodes)} nœuds, {len(reached)} tenseurs atteints")
        self.nodes = []
        self.consumed = True


class no_grad:
    """
    Contexte sans enregistrement, même sous une bande active.
    """

    def __enter__(self) -> "no_grad":
        _tape_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is None:
            stack.pop()


class Tensor:
    """
    Tableau numérique dense, éventuellement relié à une bande.
    """

    __array_ufunc__ = None

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: str = "",
        dtype: Optional[np.dtype] = None,
        _leaf: bool = True
    ):
        """
        Initialise le tenseur.

        Args:
            data: Valeurs (copiées si un type doit être converti)
            requires_grad: Le tenseur reçoit-il un gradient
            name: Nom lisible
            dtype: Type scalaire (float32 par défaut pour les entrées non flottantes)
            _leaf: Usage interne, faux pour les sorties d'opérations
        """
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float32)
        self.data = array
        self.requires_grad = requires_grad
        self.name = name
        self.tape_node: Optional[Node] = None
        self.grad: Optional[np.ndarray] = np.zeros_like(array) if (requires_grad and _leaf) else None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # Opérateurs délégués au module ops
    def __add__(self, other): return _ops().add(self, other)
    def __radd__(self, other): return _ops().add(other, self)
    def __sub__(self, other): return _ops().sub(self, other)
    def __rsub__(self, other): return _ops().sub(other, self)
    def __mul__(self, other): return _ops().mul(self, other)
    def __rmul__(self, other): return _ops().mul(other, self)
    def __truediv__(self, other): return _ops().div(self, other)
    def __rtruediv__(self, other): return _ops().div(other, self)
    def __neg__(self): return _ops().neg(self)
    def __pow__(self, k: float): return _ops().power(self, k)
    def __matmul__(self, other): return _ops().matmul(self, other)

    def relu(self) -> "Tensor": return _ops().relu(self)
    def exp(self) -> "Tensor": return _ops().exp(self)
    def log(self) -> "Tensor": return _ops().log(self)
    def sqrt(self) -> "Tensor": return _ops().sqrt(self)

    def sum(self, axes=None, keepdims: bool = False) -> "Tensor":
        return _ops().reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False) -> "Tensor":
        return _ops().reduce("mean", self, axes, keepdims)

    def max(self, axes=None, keepdims: bool = False) -> "Tensor":
        return _ops().reduce("max", self, axes, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops().transpose(self, axes or None)


def _ops():
    from autodiff import ops
    return ops


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn,
                name: str) -> Tensor:
    """
    Construit la sortie d'une opération et l'enregistre si nécessaire.

    Args:
        data: Valeurs calculées
        inputs: Tenseurs d'entrée
        backward_fn: Règle de rétropropagation
        name: Nom de l'opération

    Returns:
        Tenseur de sortie
    """
    tape = Tape.active()
    needs_grad = (
        tape is not None
        and not tape.consumed
        and any(t.requires_grad for t in inputs)
    )
    out = Tensor(data, requires_grad=needs_grad, name=name, dtype=data.dtype, _leaf=False)
    if needs_grad:
        tape.record(out, tuple(inputs), backward_fn, name)
    return out


def backward(loss: Tensor) -> None:
    """
    Rétropropage depuis une perte scalaire sur la bande qui l'a produite.

    Args:
        loss: Tenseur scalaire
    """
    if loss.data.size != 1:
        raise ContractError(f"la racine doit être scalaire, forme {loss.shape}")
    if loss.tape_node is None:
        raise ContractError("aucune bande active n'a enregistré cette perte")
    loss.tape_node.tape.backward(loss)


def alloc(
    shape: Sequence[int],
    init: str = "zeros",
    *,
    value: float = 0.0,
    mean: float = 0.0,
    std: float = 1.0,
    seed: int = 0,
    dtype: Union[np.dtype, type] = np.float32,
    requires_grad: bool = False,
    name: str = ""
) -> Tensor:
    """
    Alloue un tenseur initialisé.

    Args:
        shape: Étendues (>= 0)
        init: "zeros", "ones", "constant" ou "gaussian"
        value: Valeur pour "constant"
        mean: Moyenne pour "gaussian"
        std: Écart-type pour "gaussian" (>= 0)
        seed: Graine pour "gaussian"
        dtype: Type scalaire
        requires_grad: Le tenseur reçoit-il un gradient
        name: Nom lisible

    Returns:
        Tenseur alloué
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ShapeError(f"étendues négatives: {shape}")
    dtype = np.dtype(dtype)
    count = math.prod(shape)
    if count * dtype.itemsize > sys.maxsize:
        raise AllocationError(f"{count} éléments dépassent la mémoire adressable")

    if init == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif init == "ones":
        data = np.ones(shape, dtype=dtype)
    elif init == "constant":
        data = np.full(shape, value, dtype=dtype)
    elif init == "gaussian":
        if std < 0:
            raise DomainError(f"écart-type négatif: {std}")
        rng = np.random.default_rng(seed)
        data = rng.normal(mean, std, size=shape).astype(dtype)
    else:
        raise ConfigError(f"initialisation inconnue: {init}")

    return Tensor(data, requires_grad=requires_grad, name=name, dtype=dtype)
