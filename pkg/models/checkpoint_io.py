"""
チェックポイントファイルの読み書き

形式: マジック(8B) / 版数 / 浮動小数の幅 / アーキテクチャ / シード / 既読文数 / タグ /
名前付きテンソル列（名前長 + 名前 + 次元数 + 各次元 + リトルエンディアンの値）
"""

import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from config import CHECKPOINT_MAGIC, CHECKPOINT_FORMAT_VERSION
from core.exceptions import CheckpointFormatError
from core.interfaces import ArchitectureSpec, ModelCheckpoint, ModelKind
from core.model_factory import parameter_shapes

_FLOAT_DTYPES = {8: "<f8", 4: "<f4"}


def checkpoint_filename(spec: ArchitectureSpec, seed: int, tag: str) -> str:
    """`{kind}{layers}_s{seed}_{tag}.ckpt`"""
    return f"{spec.label}_s{seed}_{tag}.ckpt"


def _write_str(f: BinaryIO, text: str):
    data = text.encode("utf-8")
    f.write(struct.pack("<H", len(data)))
    f.write(data)


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointFormatError("unexpected end of checkpoint file", details={"wanted": n, "got": len(data)})
    return data


def _read_str(f: BinaryIO) -> str:
    (length,) = struct.unpack("<H", _read_exact(f, 2))
    return _read_exact(f, length).decode("utf-8")


def save_checkpoint(checkpoint: ModelCheckpoint, path: Union[str, Path], float_bytes: int = 8):
    """
    チェックポイントを保存

    Args:
        checkpoint: 保存するチェックポイント
        path: 出力パス
        float_bytes: 値の幅（8=64bit, 4=32bit）
    """
    if float_bytes not in _FLOAT_DTYPES:
        raise CheckpointFormatError(f"unsupported float width: {float_bytes}")
    spec = checkpoint.spec
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IB", CHECKPOINT_FORMAT_VERSION, float_bytes))
        _write_str(f, spec.kind.value)
        f.write(struct.pack("<7IB", spec.layers, spec.vocab_size, spec.embed_dim, spec.gru_hidden,
                            spec.gru_proj, spec.heads, spec.ffn_dim, int(spec.use_position_encoding)))
        f.write(struct.pack("<qQ", checkpoint.seed, checkpoint.sentences_seen))
        _write_str(f, checkpoint.checkpoint_tag)
        f.write(struct.pack("<I", len(checkpoint.tensors)))
        for name, tensor in checkpoint.tensors.items():
            _write_str(f, name)
            f.write(struct.pack("<B", tensor.ndim))
            f.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            f.write(np.ascontiguousarray(tensor, dtype=_FLOAT_DTYPES[float_bytes]).tobytes())
    # 書き込み完了後に置き換え
    tmp.replace(path)


def load_checkpoint(path: Union[str, Path]) -> ModelCheckpoint:
    """
    チェックポイントを読み込み（値は64bitに展開）

    Args:
        path: チェックポイントファイル

    Returns:
        チェックポイント
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointFormatError(f"checkpoint not found: {path}", details={"path": str(path)})
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad checkpoint magic in {path}", details={"path": str(path)})
        version, float_bytes = struct.unpack("<IB", _read_exact(f, 5))
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}",
                                        details={"path": str(path), "version": version})
        if float_bytes not in _FLOAT_DTYPES:
            raise CheckpointFormatError(f"unsupported float width: {float_bytes}", details={"path": str(path)})
        try:
            kind = ModelKind(_read_str(f))
        except ValueError as e:
            raise CheckpointFormatError(f"unknown model kind in {path}", original_error=e)
        layers, vocab, embed, hidden, proj, heads, ffn, use_pe = struct.unpack("<7IB", _read_exact(f, 29))
        spec = ArchitectureSpec(kind=kind, layers=layers, vocab_size=vocab, embed_dim=embed, gru_hidden=hidden,
                                gru_proj=proj, heads=heads, ffn_dim=ffn, use_position_encoding=bool(use_pe))
        seed, seen = struct.unpack("<qQ", _read_exact(f, 16))
        tag = _read_str(f)
        (n_tensors,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = {}
        for _ in range(n_tensors):
            name = _read_str(f)
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            count = int(np.prod(shape))
            raw = _read_exact(f, count * float_bytes)
            tensors[name] = np.frombuffer(raw, dtype=_FLOAT_DTYPES[float_bytes]).astype(np.float64).reshape(shape)
        if f.read(1):
            raise CheckpointFormatError(f"trailing bytes in {path}", details={"path": str(path)})

    expected = parameter_shapes(spec)
    actual = {k: tuple(v.shape) for k, v in tensors.items()}
    if actual != {k: tuple(v) for k, v in expected.items()}:
        raise CheckpointFormatError(f"tensor shapes in {path} do not match the architecture",
                                    details={"path": str(path), "label": spec.label})
    return ModelCheckpoint(spec=spec, tensors=tensors, seed=seed, sentences_seen=seen, checkpoint_tag=tag)
