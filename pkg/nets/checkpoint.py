"""SGN1 checkpoints: magic, length-prefixed JSON header, then SGF1 tensor blocks."""
import json
import os
import numpy as np
from app.errors import FormatError
from app.utils.logger import get_logger
from nets.signet import NetSpec, TrainedNet
from processors.image_processor import decode_sgf, encode_sgf

logger = get_logger(__name__)

MAGIC = b"SGN1"


def _u32(value: int) -> bytes:
    return np.array([value], dtype="<u4").tobytes()


def _read_u32(buf: bytes, offset: int) -> int:
    if len(buf) < offset + 4:
        raise FormatError("truncated checkpoint")
    return int(np.frombuffer(buf, dtype="<u4", count=1, offset=offset)[0])


def encode_checkpoint(net: TrainedNet) -> bytes:
    tensors = []
    for i, p in enumerate(net.params):
        for key in sorted(p):
            tensors.append((i, key, list(p[key].shape)))
    header = {
        "spec": net.spec.model_dump(mode="json"),
        "training_users": list(net.training_users),
        "metadata": net.metadata,
        "tensors": tensors,
    }
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    blocks = []
    for i, key, shape in tensors:
        arr = net.params[i][key]
        blocks.append(encode_sgf(arr.reshape(shape[0], -1) if len(shape) > 1 else arr.reshape(1, -1)))
    return MAGIC + _u32(len(text)) + text + _u32(len(tensors)) + b"".join(blocks)


def decode_checkpoint(buf: bytes) -> TrainedNet:
    if buf[:4] != MAGIC:
        raise FormatError("bad SGN1 magic")
    length = _read_u32(buf, 4)
    try:
        header = json.loads(buf[8:8 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt checkpoint header: {e}") from e

    offset = 8 + length
    count = _read_u32(buf, offset)
    offset += 4
    if count != len(header["tensors"]):
        raise FormatError("tensor count does not match header")

    spec = NetSpec.model_validate(header["spec"])
    params = [{} for _ in spec.layers]
    for i, key, shape in header["tensors"]:
        arr, offset = decode_sgf(buf, offset)
        params[i][key] = arr.reshape(shape)
    return TrainedNet(spec=spec, params=params,
                      training_users=tuple(header["training_users"]),
                      metadata=header["metadata"])


def save_checkpoint(net: TrainedNet, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_checkpoint(net))
    logger.info(f"Saved checkpoint {path} ({net.spec.name}, defense={net.metadata.get('defense')})")
    return path


def load_checkpoint(path: str) -> TrainedNet:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
