"""Checkpoint container: versioned manifest plus little-endian tensor payloads.

File layout::

    offset 0   8 bytes   magic b"GMAECKPT"
    offset 8   uint32    format version (little-endian)
    offset 12  uint64    manifest length M in bytes (little-endian)
    offset 20  M bytes   UTF-8 JSON manifest
    offset 20+M          payload: tensors back to back, little-endian

The manifest holds the model and training configs, the global step and
epoch, one entry per tensor (name, dtype, shape, byte offset into the
payload, byte count), and the payload length and SHA-256. Tensor names are
``model/<parameter>`` and ``optim/<parameter>/<state key>``.
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import (
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpointError,
    MissingCheckpointError,
)

logger = logging.getLogger("gmae.checkpoint")

MAGIC = b"GMAECKPT"
FORMAT_VERSION = 1
HEADER = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    model_config: dict
    train_config: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    global_step: int = 0
    epoch: int = 0
    version: int = FORMAT_VERSION

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix/``, with the prefix stripped."""
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().copy()


def _param_names(model: torch.nn.Module, optimizer: torch.optim.Optimizer) -> list[str]:
    """Parameter names in the optimizer's state_dict index order."""
    by_id = {id(p): name for name, p in model.named_parameters()}
    return [by_id[id(p)] for g in optimizer.param_groups for p in g["params"]]


def checkpoint_from_training(model, optimizer, model_config, train_config, global_step: int, epoch: int) -> Checkpoint:
    tensors = {f"model/{k}": _to_numpy(v) for k, v in model.state_dict().items()}
    if optimizer is not None:
        names = _param_names(model, optimizer)
        for idx, state in optimizer.state_dict()["state"].items():
            for key, value in state.items():
                value = value if torch.is_tensor(value) else torch.tensor(value)
                tensors[f"optim/{names[idx]}/{key}"] = _to_numpy(value)
    return Checkpoint(
        model_config=asdict(model_config),
        train_config=asdict(train_config),
        tensors=tensors,
        global_step=global_step,
        epoch=epoch,
    )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write atomically (temp file, then rename)."""
    path = Path(path)
    entries = []
    chunks = []
    offset = 0
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(data),
        })
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    manifest = {
        "model_config": ckpt.model_config,
        "train_config": ckpt.train_config,
        "global_step": ckpt.global_step,
        "epoch": ckpt.epoch,
        "tensors": entries,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(HEADER.pack(MAGIC, ckpt.version, len(blob)))
        f.write(blob)
        f.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    """
    Read and fully verify a checkpoint.

    Raises:
        MissingCheckpointError: no file at ``path``
        CorruptCheckpointError: bad magic, truncated, bad manifest or checksum
        CheckpointVersionError: written by another format version
    """
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise CorruptCheckpointError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, manifest_len = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a gmae checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads version {FORMAT_VERSION}"
        )
    start = HEADER.size + manifest_len
    if start > len(data):
        raise CorruptCheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[HEADER.size:start].decode("utf-8"))
        entries = manifest["tensors"]
        payload_bytes = manifest["payload_bytes"]
        digest = manifest["payload_sha256"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CorruptCheckpointError(f"{path}: unreadable manifest ({e})") from None

    payload = data[start:]
    if len(payload) != payload_bytes:
        raise CorruptCheckpointError(
            f"{path}: payload is {len(payload)} bytes, manifest says {payload_bytes}"
        )
    if hashlib.sha256(payload).hexdigest() != digest:
        raise CorruptCheckpointError(f"{path}: payload checksum mismatch")

    tensors = {}
    try:
        for e in entries:
            dtype = np.dtype(e["dtype"])
            count = int(np.prod(e["shape"], dtype=np.int64))
            if e["offset"] + count * dtype.itemsize > len(payload):
                raise CorruptCheckpointError(f"{path}: tensor '{e['name']}' runs past the payload")
            arr = np.frombuffer(payload, dtype=dtype, count=count, offset=e["offset"])
            tensors[e["name"]] = arr.reshape(e["shape"]).astype(dtype.newbyteorder("="))
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, CorruptCheckpointError):
            raise
        raise CorruptCheckpointError(f"{path}: malformed tensor entry ({err})") from None

    return Checkpoint(
        model_config=manifest.get("model_config", {}),
        train_config=manifest.get("train_config", {}),
        tensors=tensors,
        global_step=int(manifest.get("global_step", 0)),
        epoch=int(manifest.get("epoch", 0)),
        version=version,
    )


def apply_checkpoint(ckpt: Checkpoint, model: torch.nn.Module, optimizer: torch.optim.Optimizer | None = None) -> None:
    """
    Load checkpoint tensors into a model (and optionally its optimizer).

    Every name and shape is checked before anything is copied, so a
    mismatch leaves the model untouched.
    """
    params = ckpt.group("model")
    expected = model.state_dict()
    for name, t in expected.items():
        if name not in params:
            raise CheckpointShapeError(name, tuple(t.shape), ())
        if tuple(params[name].shape) != tuple(t.shape):
            raise CheckpointShapeError(name, tuple(t.shape), params[name].shape)
    for name in params:
        if name not in expected:
            raise CheckpointShapeError(name, (), params[name].shape)

    optim_state = None
    if optimizer is not None:
        optim = ckpt.group("optim")
        state = {}
        shapes = dict(model.named_parameters())
        for idx, pname in enumerate(_param_names(model, optimizer)):
            entry = {k.split("/", 1)[1]: v for k, v in optim.items() if k.split("/", 1)[0] == pname}
            for key, arr in entry.items():
                if key != "step" and tuple(arr.shape) != tuple(shapes[pname].shape):
                    raise CheckpointShapeError(f"optim/{pname}/{key}", tuple(shapes[pname].shape), arr.shape)
            if entry:
                state[idx] = {k: torch.from_numpy(v.copy()) for k, v in entry.items()}
        optim_state = {"state": state, "param_groups": optimizer.state_dict()["param_groups"]}

    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in params.items()})
    if optim_state is not None:
        optimizer.load_state_dict(optim_state)
    logger.debug(f"applied checkpoint at step {ckpt.global_step} ({len(params)} tensors)")


def load_model(path, model_config=None):
    """
    Rebuild a model from a checkpoint file.

    The model config stored in the checkpoint is used unless one is given,
    in which case the tensors must fit it.
    """
    from .model import GaussianMAE, ModelConfig

    ckpt = load_checkpoint(path)
    if model_config is None:
        try:
            model_config = ModelConfig(**ckpt.model_config)
        except TypeError as e:
            raise CorruptCheckpointError(f"{path}: bad model config ({e})") from None
    model = GaussianMAE(model_config)
    apply_checkpoint(ckpt, model)
    model.eval()
    return model, ckpt
