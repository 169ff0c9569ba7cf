"""
Lecture et écriture d'images: PPM (P6), PGM (P5) et tenseurs bruts ART.
"""
from pathlib import Path
from typing import Tuple, Union
import logging
import struct

import numpy as np

import config
from autodiff import Tensor
from errors import ContractError, DecodeError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)

ART_MAGIC = b"ART1"
PPM_MAGIC = b"P6"


def _netpbm_header(data: bytes, magic: bytes, n_values: int) -> Tuple[list, int]:
    # Lit les champs d'en-tête (commentaires '#' ignorés) et renvoie la position des données
    pos, fields = len(magic), []
    while len(fields) < n_values:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DecodeError("en-tête netpbm tronqué ou invalide")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DecodeError("séparateur manquant après l'en-tête netpbm")
    return fields, pos + 1


def decode_ppm(data: bytes) -> np.ndarray:
    """
    Décode un PPM binaire P6 (maxval 255) en tableau [3,H,W] dans [0,1].
    """
    if not data.startswith(PPM_MAGIC):
        raise DecodeError("signature P6 absente")
    (width, height, maxval), offset = _netpbm_header(data, PPM_MAGIC, 3)
    if maxval != 255:
        raise DecodeError(f"maxval {maxval} non supporté (255)")
    if width < 1 or height < 1:
        raise DecodeError(f"dimensions invalides {width}x{height}")
    expected = width * height * 3
    payload = data[offset:offset + expected]
    if len(payload) != expected:
        raise DecodeError(f"données tronquées: {len(payload)} octets sur {expected}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return (pixels.transpose(2, 0, 1).astype(np.float32) / 255.0).astype(np.float32)


def encode_ppm(x: np.ndarray) -> bytes:
    """
    Encode un tableau [3,H,W] dans [0,1] en PPM P6.
    """
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ContractError(f"image [3,H,W] attendue: {x.shape}")
    pixels = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    header = f"P6\n{x.shape[2]} {x.shape[1]}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def encode_pgm(h: np.ndarray) -> bytes:
    """
    Encode une carte [H,W] dans [0,1] en PGM P5.
    """
    h = np.asarray(h)
    if h.ndim != 2:
        raise ContractError(f"carte [H,W] attendue: {h.shape}")
    pixels = np.clip(np.rint(h * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{h.shape[1]} {h.shape[0]}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    if not data.startswith(b"P5"):
        raise DecodeError("signature P5 absente")
    (width, height, maxval), offset = _netpbm_header(data, b"P5", 3)
    if maxval != 255:
        raise DecodeError(f"maxval {maxval} non supporté (255)")
    payload = data[offset:offset + width * height]
    if len(payload) != width * height:
        raise DecodeError("données PGM tronquées")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).astype(np.float32) / 255.0


def decode_art(data: bytes) -> np.ndarray:
    """
    Décode un tenseur brut ART: `ART1`, rang u8, étendues u64 LE, float32 LE.
    """
    if not data.startswith(ART_MAGIC):
        raise DecodeError("signature ART1 absente")
    if len(data) < 5:
        raise DecodeError("en-tête ART tronqué")
    rank = data[4]
    head = 5 + 8 * rank
    if len(data) < head:
        raise DecodeError("étendues ART tronquées")
    extents = struct.unpack(f"<{rank}Q", data[5:head])
    count = int(np.prod(extents, dtype=np.int64)) if rank else 1
    if len(data) != head + 4 * count:
        raise DecodeError(f"charge ART de {len(data) - head} octets, attendu {4 * count}")
    return np.frombuffer(data, dtype="<f4", count=count, offset=head).reshape(extents).astype(np.float32)


def encode_art(x: np.ndarray) -> bytes:
    """
    Encode un tableau en tenseur brut ART (float32 little-endian, ordre ligne).
    """
    x = np.ascontiguousarray(np.asarray(x), dtype="<f4")
    if x.ndim > 255:
        raise ContractError(f"rang {x.ndim} trop grand pour ART")
    return ART_MAGIC + bytes([x.ndim]) + struct.pack(f"<{x.ndim}Q", *x.shape) + x.tobytes()


def decode_image(path: Union[str, Path]) -> Tensor:
    """
    Lit une image PPM ou ART en tenseur [3,H,W] dans [0,1].

    Args:
        path: Fichier image

    Returns:
        Tenseur float32
    """
    path = Path(path)
    data = path.read_bytes()
    try:
        if data.startswith(PPM_MAGIC):
            array = decode_ppm(data)
        elif data.startswith(ART_MAGIC):
            array = decode_art(data)
        else:
            raise DecodeError("format inconnu (P6 ou ART1 attendu)")
    except DecodeError as e:
        raise DecodeError(f"{path}: {e}") from e
    if array.ndim != 3 or array.shape[0] != 3:
        raise ContractError(f"{path}: image [3,H,W] attendue, reçu {array.shape}")
    return Tensor(array, dtype=np.float32)


def write_ppm(path: Union[str, Path], x: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(encode_ppm(x))
    return path


def resize(x: Union[Tensor, np.ndarray], h_out: int, w_out: int) -> Union[Tensor, np.ndarray]:
    """
    Interpolation bilinéaire, centres de pixels en (i + 0.5) / n.

    Args:
        x: Image [C,H,W]
        h_out: Hauteur cible
        w_out: Largeur cible

    Returns:
        Image redimensionnée, du même type que l'entrée
    """
    if h_out < 1 or w_out < 1:
        raise ContractError(f"dimensions cibles invalides {h_out}x{w_out}")
    is_tensor = isinstance(x, Tensor)
    data = x.data if is_tensor else np.asarray(x)
    _, h, w = data.shape
    if (h, w) == (h_out, w_out):
        out = data.copy()
    else:
        def axis_weights(n_in: int, n_out: int):
            src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
            lo = np.floor(src).astype(np.int64)
            hi = np.minimum(lo + 1, n_in - 1)
            return lo, hi, (src - lo).astype(data.dtype)

        y0, y1, wy = axis_weights(h, h_out)
        x0, x1, wx = axis_weights(w, w_out)
        rows = data[:, y0, :] * (1 - wy)[None, :, None] + data[:, y1, :] * wy[None, :, None]
        out = rows[:, :, x0] * (1 - wx)[None, None, :] + rows[:, :, x1] * wx[None, None, :]
        out = out.astype(data.dtype)
    return Tensor(out, dtype=out.dtype) if is_tensor else out
