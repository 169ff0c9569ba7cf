"""
Points de sauvegarde binaires: paramètres, statistiques, état d'Adam, générateurs et compteurs.

Disposition (entiers little-endian):
    magic `ARBC` | u32 version | u32 taille + configuration UTF-8 |
    u32 taille + méta JSON UTF-8 | u32 nombre d'enregistrements |
    enregistrements (u16 taille + nom UTF-8, u8 type, u8 rang, u64 étendues, données) |
    u32 CRC32 de tout ce qui précède
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union
import json
import logging
import struct
import zlib

import numpy as np

import config
from errors import CheckpointError, ContractError, CorruptionError, MigrationError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)

MAGIC = b"ARBC"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    """
    Contenu d'un point de sauvegarde.
    """
    config_text: str
    meta: Dict[str, Any]
    records: List[Tuple[str, np.ndarray]] = field(default_factory=list)
    version: int = VERSION

    def record_map(self) -> Dict[str, np.ndarray]:
        return dict(self.records)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """
    Sérialise un point de sauvegarde.
    """
    config_bytes = ckpt.config_text.encode("utf-8")
    meta_bytes = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", ckpt.version),
        struct.pack("<I", len(config_bytes)), config_bytes,
        struct.pack("<I", len(meta_bytes)), meta_bytes,
        struct.pack("<I", len(ckpt.records)),
    ]
    for name, array in ckpt.records:
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder("<")
        if dtype not in DTYPE_CODES:
            raise ContractError(f"type {array.dtype} non sérialisable pour {name}")
        name_bytes = name.encode("utf-8")
        parts += [
            struct.pack("<H", len(name_bytes)), name_bytes,
            struct.pack("<BB", DTYPE_CODES[dtype], array.ndim),
            struct.pack(f"<{array.ndim}Q", *array.shape),
            np.ascontiguousarray(array, dtype=dtype).tobytes(),
        ]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptionError("point de sauvegarde tronqué")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Désérialise un point de sauvegarde.

    Raises:
        CheckpointError: signature absente
        CorruptionError: somme de contrôle invalide ou contenu tronqué
        MigrationError: version non supportée
    """
    if len(data) < 12 or not data.startswith(MAGIC):
        raise CheckpointError("signature ARBC absente")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptionError("somme de contrôle CRC32 invalide")

    reader = _Reader(body)
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise MigrationError(f"version {version} non supportée (attendu {VERSION})")
    (config_len,) = reader.unpack("<I")
    config_text = reader.take(config_len).decode("utf-8")
    (meta_len,) = reader.unpack("<I")
    meta = json.loads(reader.take(meta_len).decode("utf-8"))
    (count,) = reader.unpack("<I")

    records = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code, rank = reader.unpack("<BB")
        if code not in CODE_DTYPES:
            raise CorruptionError(f"code de type {code} inconnu pour {name}")
        shape = reader.unpack(f"<{rank}Q")
        dtype = CODE_DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        array = np.frombuffer(reader.take(n_bytes), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        records.append((name, array))
    if reader.pos != len(body):
        raise CorruptionError(f"{len(body) - reader.pos} octets inattendus après les enregistrements")
    return Checkpoint(config_text, meta, records, version)


def capture(model, optimizer, config_text: str, meta: Dict[str, Any]) -> Checkpoint:
    """
    Assemble un point de sauvegarde depuis un modèle et son optimiseur.
    """
    records = [(f"param.{name}", p.value.data) for name, p in model.named_params()]
    records += [(f"buffer.{name}", value) for name, value in model.named_buffers()]
    if optimizer is not None:
        records += optimizer.state_records()
    meta = dict(meta)
    if optimizer is not None:
        meta["adam_t"] = optimizer.state.t
    return Checkpoint(config_text, meta, records)


def restore(ckpt: Checkpoint, model, optimizer=None) -> Dict[str, Any]:
    """
    Recharge paramètres, statistiques et état d'Adam.

    Returns:
        Méta-données du point de sauvegarde
    """
    records = ckpt.record_map()
    for name, p in model.named_params():
        key = f"param.{name}"
        if key not in records:
            raise ContractError(f"paramètre absent du point de sauvegarde: {name}")
        value = records[key]
        if value.shape != p.value.data.shape:
            raise ContractError(f"forme {value.shape} pour {name}, attendu {p.value.data.shape}")
        p.value.data[...] = value
    for name, _ in model.named_buffers():
        key = f"buffer.{name}"
        if key not in records:
            raise ContractError(f"statistique absente du point de sauvegarde: {name}")
        model.load_buffer(name, records[key])
    if optimizer is not None:
        optimizer.load_records(records, ckpt.meta.get("adam_t", 0))
    return dict(ckpt.meta)


def save_checkpoint(path: Union[str, Path], model, optimizer, config_text: str, **meta) -> Path:
    """
    Écrit un point de sauvegarde sur disque.
    """
    path = Path(path)
    path.write_bytes(encode_checkpoint(capture(model, optimizer, config_text, meta)))
    logger.info(f"Point de sauvegarde écrit dans {path}")
    return path


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        return decode_checkpoint(path.read_bytes())
    except CheckpointError as e:
        logger.error(f"Point de sauvegarde {path} illisible: {str(e)}")
        raise


def load_checkpoint(path: Union[str, Path], model, optimizer=None) -> Dict[str, Any]:
    """
    Recharge un point de sauvegarde dans un modèle (et son optimiseur).

    Returns:
        Méta-données
    """
    return restore(read_checkpoint(path), model, optimizer)
