import typing as T
from pathlib import Path

import numpy as np
import pytest
import torch

from dataset.data_utils import TripleStore
from dataset.synthetic import make_synthetic_kg


def random_complex(*shape: int, generator: torch.Generator, scale: float = 1.0) -> torch.Tensor:
    parts = torch.randn(*shape, 2, dtype=torch.float64, generator=generator) * scale
    return torch.view_as_complex(parts)


def unit_complex(*shape: int, generator: torch.Generator) -> torch.Tensor:
    theta = (torch.rand(*shape, dtype=torch.float64, generator=generator) * 2 - 1) * np.pi
    return torch.polar(torch.ones_like(theta), theta)


def numeric_grad(f: T.Callable[[], torch.Tensor], x: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """
    Central differences of the scalar f() with respect to every entry of x, which is
    perturbed in place. Complex tensors get d/dRe + i d/dIm.
    """
    flat = torch.view_as_real(x).reshape(-1) if x.is_complex() else x.reshape(-1)
    grad = torch.zeros_like(flat)
    for i in range(len(flat)):
        orig = flat[i].item()
        flat[i] = orig + h
        up = float(f())
        flat[i] = orig - h
        down = float(f())
        flat[i] = orig
        grad[i] = (up - down) / (2 * h)
    if x.is_complex():
        return torch.view_as_complex(grad.reshape(*x.shape, 2))
    return grad.reshape(x.shape)


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    a = torch.view_as_real(analytic) if analytic.is_complex() else analytic
    n = torch.view_as_real(numeric) if numeric.is_complex() else numeric
    return float((a - n).norm() / max(float(a.norm() + n.norm()), 1e-8))


def make_store(
    kg_train: T.Sequence[T.Tuple[int, int, int]],
    tp: T.Dict[str, T.Sequence[T.Tuple[int, int]]],
    num_entities: int, num_relations: int, num_types: int,
) -> TripleStore:
    kg = {'train': np.asarray(kg_train, dtype=np.int64).reshape(-1, 3)}
    pairs = {split: np.asarray(rows, dtype=np.int64).reshape(-1, 2) for split, rows in tp.items()}
    return TripleStore(kg, pairs, None, num_entities, num_relations, num_types)


def random_store(seed: int, num_entities: int = 20, num_relations: int = 3, num_types: int = 8,
                 num_triples: int = 50, num_pairs: int = 40) -> TripleStore:
    rng = np.random.default_rng(seed)
    kg = {tuple(x) for x in zip(rng.integers(0, num_entities, num_triples),
                                rng.integers(0, num_relations, num_triples),
                                rng.integers(0, num_entities, num_triples))}
    pairs = sorted({(int(e), int(t)) for e, t in zip(rng.integers(0, num_entities, num_pairs),
                                                     rng.integers(0, num_types, num_pairs))})
    order = rng.permutation(len(pairs))
    cut1, cut2 = int(0.6 * len(pairs)), int(0.8 * len(pairs))
    tp = {
        'train': [pairs[i] for i in sorted(order[:cut1])],
        'valid': [pairs[i] for i in sorted(order[cut1:cut2])],
        'test': [pairs[i] for i in sorted(order[cut2:])],
    }
    return make_store(sorted(kg), tp, num_entities, num_relations, num_types)


def write_dataset(path: Path, kg: T.Dict[str, T.List[str]], tp: T.Dict[str, T.List[str]]) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    for split in ('train', 'valid', 'test'):
        (path / f'{split}.txt').write_text(''.join(line + '\n' for line in kg.get(split, [])))
        (path / f'Entity_Type_{split}.txt').write_text(''.join(line + '\n' for line in tp.get(split, [])))
    return path


@pytest.fixture
def torch_gen() -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(1234)
    return g


@pytest.fixture
def toy_dir(tmp_path: Path) -> Path:
    return write_dataset(
        tmp_path / 'toy',
        kg={
            'train': ['a\tr1\tb', 'b\tr2\tc', 'c\tr1\ta', 'a\tr2\tc', 'd\tr1\tb'],
            'valid': ['b\tr1\tc'],
            'test': ['c\tr2\tb'],
        },
        tp={
            'train': ['a\tT1', 'b\tT2', 'c\tT1', 'c\tT3', 'd\tT1'],
            'valid': ['a\tT3'],
            'test': ['b\tT1', 'd\tT2'],
        },
    )


@pytest.fixture(scope='session')
def synthetic_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    return make_synthetic_kg(tmp_path_factory.mktemp('synthetic'), seed=0)
