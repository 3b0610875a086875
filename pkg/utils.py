import datetime
import json
import os
import subprocess
import typing as T
from pathlib import Path

import torch

from dataset.data_utils import DatasetSchema, file_digest


def get_root_dir() -> Path:
    """
    Return the default data root.
    """
    return Path(os.getenv('CORE_KGT_DATA', '.'))


def resolve_data_dir(data_dir: T.Optional[str]) -> Path:
    """
    Resolve a dataset directory, relative paths against the data root.
    """
    if data_dir is None:
        return get_root_dir()
    path = Path(data_dir)
    if not path.is_absolute() and not path.exists():
        path = get_root_dir() / path
    return path


def set_threads(threads: T.Optional[int]) -> int:
    """
    Set the torch worker count, defaulting to the available parallelism.
    """
    if threads is None:
        threads = len(os.sched_getaffinity(0)) if hasattr(os, 'sched_getaffinity') else (os.cpu_count() or 1)
    torch.set_num_threads(threads)
    return threads


def git_describe() -> str:
    try:
        out = subprocess.run(
            ['git', 'describe', '--always', '--dirty'], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return 'unknown'
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else 'unknown'


def utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def write_manifest(
    path: T.Union[str, Path], config: T.Dict[str, T.Any], data_dir: Path,
    schema: T.Optional[DatasetSchema] = None,
) -> Path:
    """
    Record what a run was started from: config, dataset file hashes, seed and code
    version.
    """
    schema = schema or DatasetSchema()
    files = [*schema.kg_files.values(), *schema.type_files.values(), schema.type_triples_file]
    hashes = {name: file_digest(data_dir / name) for name in files if (data_dir / name).is_file()}
    manifest = {
        'config': config,
        'data_dir': str(data_dir),
        'data_hashes': hashes,
        'seed': config.get('seed'),
        'git': git_describe(),
        'started': utc_now(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as json_file:
        json.dump(manifest, json_file, indent=4)
    return path


def finish_manifest(path: T.Union[str, Path], **fields: T.Any) -> None:
    """
    Add completion fields (end timestamp, checkpoint) to an existing manifest.
    """
    with open(path, 'r') as json_file:
        manifest = json.load(json_file)
    manifest.update(fields)
    manifest['finished'] = utc_now()
    with open(path, 'w') as json_file:
        json.dump(manifest, json_file, indent=4)
