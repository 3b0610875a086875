
import json
import struct
import typing as T
from pathlib import Path

import numpy as np
import torch

from embedders.generator import CoreModel, TrainConfig

MAGIC = b'CORE1'
VERSION = 1


class CheckpointError(ValueError):
    """
    Raised for unreadable checkpoints or checkpoints that do not match a dataset.
    """


def sidecar_path(path: T.Union[str, Path]) -> Path:
    return Path(path).with_suffix('.json')


def save_checkpoint(
    path: T.Union[str, Path], model: CoreModel, config: TrainConfig,
    vocab_digests: T.Optional[T.Dict[str, str]] = None, step: int = 0,
    manifest: T.Optional[str] = None,
) -> Path:
    """
    Write a binary checkpoint and its JSON sidecar.

    The binary holds the magic bytes, a little-endian uint32 header length, a JSON
    header (model kind, dims, vocab sizes, parameterization per table, array manifest)
    and then every parameter as raw little-endian float64 in header order. The sidecar
    holds hyperparameters, vocabulary hashes and the step.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    header = {
        'version': VERSION,
        'model': model.kind.value,
        'k': model.k,
        'l': model.l,
        'num_entities': model.num_entities,
        'num_relations': model.num_relations,
        'num_types': model.num_types,
        'parameterization': {
            'entity': model.entity_embedding.parameterization.value,
            'relation': model.relation_embedding.parameterization.value,
            'type': model.type_embedding.parameterization.value,
            'type_relation': model.type_relation_embedding.parameterization.value,
        },
        'arrays': [{'name': name, 'shape': list(t.shape)} for name, t in state.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    tmp = path.with_suffix(path.suffix + '.tmp')
    with open(tmp, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<I', len(header_bytes)))
        f.write(header_bytes)
        for tensor in state.values():
            f.write(tensor.detach().cpu().numpy().astype('<f8', copy=False).tobytes())
    tmp.replace(path)

    sidecar = {
        'config': config.to_dict(),
        'vocab': vocab_digests or {},
        'step': step,
        'manifest': manifest,
        'checkpoint': path.name,
    }
    with open(sidecar_path(path), 'w') as json_file:
        json.dump(sidecar, json_file, indent=4, sort_keys=True)
    return path


def load_checkpoint(
    path: T.Union[str, Path], vocab_digests: T.Optional[T.Dict[str, str]] = None
) -> T.Tuple[CoreModel, T.Dict[str, T.Any]]:
    """
    Read a checkpoint written by save_checkpoint. Returns the model and the sidecar
    contents (empty dict if the sidecar is missing). With vocab_digests the stored
    vocabulary hashes must match.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f'Missing checkpoint: {path}')
    with open(path, 'rb') as f:
        blob = f.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f'{path} is not a checkpoint (bad magic)')
    offset = len(MAGIC)
    try:
        (header_len,) = struct.unpack_from('<I', blob, offset)
        offset += 4
        if offset + header_len > len(blob):
            raise ValueError('header runs past the end of the file')
        header = json.loads(blob[offset:offset + header_len].decode('utf-8'))
        offset += header_len
        model = CoreModel(
            header['model'], header['k'], header['l'],
            header['num_entities'], header['num_relations'], header['num_types'],
        )
        arrays = header['arrays']
    except (struct.error, ValueError, KeyError, TypeError) as err:
        raise CheckpointError(f'{path} has a corrupt header: {err}') from None
    state = {}
    for entry in arrays:
        count = int(np.prod(entry['shape']))
        if offset + 8 * count > len(blob):
            raise CheckpointError(f'{path} is truncated at array {entry["name"]}')
        arr = np.frombuffer(blob, dtype='<f8', count=count, offset=offset).reshape(entry['shape'])
        state[entry['name']] = torch.from_numpy(arr.astype(np.float64))
        offset += 8 * count
    try:
        model.load_state_dict(state)
    except RuntimeError as err:
        raise CheckpointError(f'{path}: {err}') from None

    sidecar: T.Dict[str, T.Any] = {}
    if sidecar_path(path).is_file():
        with open(sidecar_path(path), 'r') as json_file:
            sidecar = json.load(json_file)
    if vocab_digests is not None:
        check_vocabularies(sidecar, vocab_digests)
    return model, sidecar


def check_vocabularies(sidecar: T.Dict[str, T.Any], vocab_digests: T.Dict[str, str]) -> None:
    """
    Fail unless the checkpoint was trained on vocabularies with these hashes.
    """
    stored = sidecar.get('vocab') or {}
    for name, digest in vocab_digests.items():
        if name in stored and stored[name] != digest:
            raise CheckpointError(f'{name} vocabulary does not match the checkpoint')
