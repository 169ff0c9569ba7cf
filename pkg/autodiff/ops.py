"""
Opérations différentiables sur les tenseurs.

Chaque opération calcule sa sortie avec numpy puis enregistre sa règle de
rétropropagation sur la bande active. Aucune diffusion implicite n'existe en
dehors des opérandes scalaires (forme ()); `expand` est la diffusion explicite.
"""
from typing import List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

import config
from autodiff.tensor import Tensor, make_result
from errors import ContractError, DomainError, NumericError, ShapeError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)

Operand = Union[Tensor, float, int]
Axes = Optional[Union[int, Sequence[int]]]


def _lift(x: Operand, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a: Operand, b: Operand) -> Tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    a, b = _lift(a, like), _lift(b, like)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"formes incompatibles {a.shape} et {b.shape}")
    return a, b


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # Seul le cas scalaire est diffusé
    if shape == () and g.shape != ():
        return np.asarray(g.sum(), dtype=g.dtype)
    return g


# ---------------------------------------------------------------------------
# Opérations élément par élément
# ---------------------------------------------------------------------------

def add(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), _backward, "add")


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), _backward, "sub")


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), _backward, "mul")


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return make_result(a.data / b.data, (a, b), _backward, "div")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def _backward(g):
        return (g * mask,)

    return make_result(np.where(mask, a.data, 0).astype(a.data.dtype), (a,), _backward, "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log d'une valeur <= 0")
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def power(a: Tensor, k: float) -> Tensor:
    k = float(k)
    if not k.is_integer() and np.any(a.data < 0):
        raise DomainError(f"puissance non entière {k} d'une valeur négative")
    out = np.power(a.data, k).astype(a.data.dtype)

    def _backward(g):
        return (g * k * np.power(a.data, k - 1).astype(a.data.dtype),)

    return make_result(out, (a,), _backward, f"pow({k})")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("racine carrée d'une valeur négative")
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0, a.data).astype(a.data.dtype)

    def _backward(g):
        sigmoid = np.exp(-np.logaddexp(0, -a.data)).astype(a.data.dtype)
        return (g * sigmoid,)

    return make_result(out, (a,), _backward, "softplus")


def clamp_min(a: Tensor, c: float) -> Tensor:
    mask = a.data > c
    out = np.where(mask, a.data, c).astype(a.data.dtype)
    return make_result(out, (a,), lambda g: (g * mask,), f"clamp_min({c})")


_UNARY = {
    "relu": relu,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "neg": neg,
    "softplus": softplus,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a: Operand, b: Optional[Operand] = None, k: Optional[float] = None) -> Tensor:
    """
    Applique une opération élément par élément.

    Args:
        op: add, sub, mul, div, relu, exp, log, pow, sqrt, neg, softplus ou clamp_min
        a: Premier opérande
        b: Second opérande (opérations binaires)
        k: Exposant pour pow, seuil pour clamp_min

    Returns:
        Tenseur résultat
    """
    if op in _BINARY:
        if b is None:
            raise ContractError(f"{op} attend deux opérandes")
        return _BINARY[op](a, b)
    a = _lift(a)
    if op in _UNARY:
        return _UNARY[op](a)
    if op == "pow":
        return power(a, k)
    if op == "clamp_min":
        return clamp_min(a, k)
    raise ContractError(f"opération inconnue: {op}")


# ---------------------------------------------------------------------------
# Algèbre linéaire
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Produit matriciel [M,K]·[K,N], ou par lots [B,M,K]·[B,K,N].
    """
    if a.ndim not in (2, 3) or a.ndim != b.ndim:
        raise ShapeError(f"matmul attend deux opérandes de rang 2 ou 3: {a.shape}, {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"étendues internes incompatibles: {a.shape} · {b.shape}")

    def _backward(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return make_result(a.data @ b.data, (a, b), _backward, "matmul")


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0
) -> Tensor:
    """
    Corrélation croisée 2D avec remplissage par zéros.

    Args:
        x: Entrée [N,C,H,W]
        w: Noyaux [F,C,kh,kw]
        bias: Biais [F] (optionnel)
        stride: Pas (>= 1)
        padding: Remplissage symétrique

    Returns:
        Sortie [N,F,H',W']
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d attend des rangs 4: {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"canaux incompatibles: entrée {c}, noyau {cw}")
    if stride < 1:
        raise ShapeError(f"pas invalide: {stride}")
    if kh > h + 2 * padding or kw > wd + 2 * padding:
        raise ShapeError(f"noyau {kh}x{kw} plus grand que l'entrée remplie")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"biais de forme {bias.shape}, attendu ({f},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(windows, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, f, 1, 1)
    out = np.ascontiguousarray(out, dtype=x.data.dtype)

    def _backward(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, w.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib
        gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw.astype(w.data.dtype)) + ((gb,) if bias is not None else ())

    inputs = (x, w) if bias is None else (x, w, bias)
    return make_result(out, inputs, _backward, "conv2d")


# ---------------------------------------------------------------------------
# Réductions
# ---------------------------------------------------------------------------

def _normalize_axes(axes: Axes, ndim: int) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    normalized = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axe {ax} invalide pour un rang {ndim}")
        normalized.append(ax % ndim)
    if len(set(normalized)) != len(normalized):
        raise ShapeError(f"axes répétés: {tuple(axes)}")
    return tuple(sorted(normalized))


def reduce(op: str, x: Tensor, axes: Axes = None, keepdims: bool = False) -> Tensor:
    """
    Réduit un tenseur le long d'axes.

    Args:
        op: "sum", "mean" ou "max"
        x: Tenseur d'entrée
        axes: Axes réduits (tous si None)
        keepdims: Conserver les axes réduits avec une étendue 1

    Returns:
        Tenseur réduit
    """
    axes = _normalize_axes(axes, x.ndim)
    kept_shape = tuple(1 if i in axes else s for i, s in enumerate(x.shape))
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1

    def _expand_grad(g):
        return np.broadcast_to(np.reshape(g, kept_shape), x.shape)

    if op == "sum":
        out = x.data.sum(axis=axes, keepdims=keepdims)

        def _backward(g):
            return (np.array(_expand_grad(g)),)

    elif op == "mean":
        if count == 0:
            raise DomainError("moyenne d'une réduction vide")
        out = (x.data.sum(axis=axes, keepdims=keepdims) / count).astype(x.data.dtype)

        def _backward(g):
            return ((_expand_grad(g) / count).astype(x.data.dtype),)

    elif op == "max":
        if count == 0:
            raise DomainError("max d'une réduction vide")
        out = x.data.max(axis=axes, keepdims=keepdims)

        def _backward(g):
            rest = [i for i in range(x.ndim) if i not in axes]
            perm = rest + list(axes)
            moved = np.transpose(x.data, perm).reshape([x.shape[i] for i in rest] + [count])
            # premier argmax: indice linéaire le plus bas du bloc réduit
            first = np.argmax(moved, axis=-1)
            routed = np.zeros_like(moved)
            g_rest = np.reshape(g, [x.shape[i] for i in rest])
            np.put_along_axis(routed, first[..., None], g_rest[..., None], axis=-1)
            routed = routed.reshape([x.shape[i] for i in perm])
            return (np.transpose(routed, np.argsort(perm)),)

    else:
        raise ContractError(f"réduction inconnue: {op}")

    return make_result(np.asarray(out, dtype=x.data.dtype), (x,), _backward, op)


# ---------------------------------------------------------------------------
# Vues
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    known = [s for s in shape if s != -1]
    if shape.count(-1) > 1 or (shape.count(-1) == 0 and int(np.prod(shape)) != x.data.size) \
            or (shape.count(-1) == 1 and (int(np.prod(known)) == 0 or x.data.size % int(np.prod(known)))):
        raise ShapeError(f"reshape de {x.shape} vers {shape} ne conserve pas le nombre d'éléments")
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (np.reshape(g, x.shape),), "reshape")


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"permutation invalide {axes} pour un rang {x.ndim}")
    inverse = np.argsort(axes)
    out = np.transpose(x.data, axes)
    return make_result(out, (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """
    Extrait la plage [start, stop) d'un axe.
    """
    axis = _normalize_axes(axis, x.ndim)[0]
    if not 0 <= start <= stop <= x.shape[axis]:
        raise ShapeError(f"tranche [{start}, {stop}) hors de l'étendue {x.shape[axis]}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def _backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return make_result(x.data[index], (x,), _backward, "slice")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """
    Concatène des tenseurs le long d'un axe.
    """
    if not tensors:
        raise ShapeError("concaténation d'une liste vide")
    ndim = tensors[0].ndim
    axis = _normalize_axes(axis, ndim)[0]
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(f"étendues hors axe incompatibles: {tensors[0].shape} et {t.shape}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _backward(g):
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index = [slice(None)] * ndim
            index[axis] = slice(int(lo), int(hi))
            grads.append(g[tuple(index)])
        return tuple(grads)

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_result(out, tuple(tensors), _backward, "concat")


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """
    Diffusion explicite vers une forme (règles numpy).
    """
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"impossible de diffuser {x.shape} vers {shape}")
    lead = len(shape) - x.ndim
    summed = tuple(range(lead)) + tuple(
        lead + i for i, s in enumerate(x.shape) if s == 1 and shape[lead + i] != 1
    )

    def _backward(g):
        reduced = g.sum(axis=summed, keepdims=True) if summed else g
        return (np.reshape(reduced, x.shape),)

    return make_result(np.array(out), (x,), _backward, "expand")


def view_ops(op: str, *args, **kwargs) -> Tensor:
    """
    Point d'entrée unique des vues: reshape, transpose, slice, concat, expand.
    """
    table = {
        "reshape": reshape,
        "transpose": transpose,
        "slice": slice_axis,
        "concat": concat,
        "expand": expand,
    }
    if op not in table:
        raise ContractError(f"vue inconnue: {op}")
    return table[op](*args, **kwargs)


def pick(x: Tensor, cols: Sequence[int]) -> Tensor:
    """
    Extrait x[i, cols[i]] pour chaque ligne.

    Args:
        x: Matrice [N,M]
        cols: Indices de colonnes [N]

    Returns:
        Vecteur [N]
    """
    cols = np.asarray(cols, dtype=np.int64)
    if x.ndim != 2 or cols.shape != (x.shape[0],):
        raise ShapeError(f"pick attend [N,M] et [N]: {x.shape}, {cols.shape}")
    rows = np.arange(x.shape[0])

    def _backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, cols), g)
        return (full,)

    return make_result(x.data[rows, cols], (x,), _backward, "pick")


# ---------------------------------------------------------------------------
# Softmax et normalisation
# ---------------------------------------------------------------------------

def _require_finite(x: Tensor, name: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"{name}: entrée non finie ({int(np.sum(~np.isfinite(x.data)))} valeurs)")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """
    Softmax stabilisée par soustraction du maximum.
    """
    _require_finite(x, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = (e / e.sum(axis=axis, keepdims=True)).astype(x.data.dtype)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), _backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """
    Log-softmax sous forme log-somme-exp.
    """
    _require_finite(x, "log_softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = (shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))).astype(x.data.dtype)

    def _backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), _backward, "log_softmax")


def standardize(x: Tensor, axes: Sequence[int], eps: float) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """
    Centre-réduit x selon des axes avec les moments du lot.

    Args:
        x: Tenseur d'entrée
        axes: Axes sur lesquels les moments sont calculés
        eps: Terme ajouté à la variance

    Returns:
        (x normalisé, moyenne, variance biaisée) avec keepdims
    """
    axes = _normalize_axes(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    if count == 0:
        raise ContractError("normalisation sur une réduction vide")
    mean = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    xhat = (centered * inv).astype(x.data.dtype)

    def _backward(g):
        g_sum = g.sum(axis=axes, keepdims=True)
        gx_sum = (g * xhat).sum(axis=axes, keepdims=True)
        return ((inv / count) * (count * g - g_sum - xhat * gx_sum),)

    return make_result(xhat, (x,), _backward, "standardize"), mean, var
