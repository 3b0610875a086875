
import argparse
import typing as T
from pathlib import Path

import numpy as np


def _write(path: Path, rows: T.Iterable[T.Sequence[str]]) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for row in rows:
            f.write('\t'.join(row) + '\n')


def make_synthetic_kg(
    output_path: T.Union[str, Path],
    num_entities: int = 200,
    num_classes: int = 10,
    types_per_class: int = 2,
    num_relations: int = 15,
    num_triples: int = 3000,
    split: T.Tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> Path:
    """
    Write a separable toy KG in the six-file dataset layout.

    Entities are split evenly into latent classes. Every entity carries the first type
    of its class and each further class type with probability 1/2. Each relation links
    a fixed subject class to a fixed object class, so an entity's neighborhood
    determines its class. KG triples all go to train; type pairs are split by `split`.
    """
    rng = np.random.default_rng(seed)
    output_path = Path(output_path)
    output_path.mkdir(parents=True, exist_ok=True)

    classes = np.arange(num_entities) % num_classes
    members = [np.flatnonzero(classes == c) for c in range(num_classes)]

    pairs = []
    for e in range(num_entities):
        c = classes[e]
        pairs.append((e, c * types_per_class))
        for j in range(1, types_per_class):
            if rng.random() < 0.5:
                pairs.append((e, c * types_per_class + j))

    subj_class = np.arange(num_relations) % num_classes
    obj_class = rng.integers(0, num_classes, size=num_relations)
    triples = set()
    per_relation = max(1, num_triples // num_relations)
    for r in range(num_relations):
        s = rng.choice(members[subj_class[r]], size=per_relation)
        o = rng.choice(members[obj_class[r]], size=per_relation)
        triples.update(zip(s.tolist(), [r] * per_relation, o.tolist()))
    triples = sorted(triples)

    order = rng.permutation(len(pairs))
    n_train = int(round(split[0] * len(pairs)))
    n_valid = int(round(split[1] * len(pairs)))
    parts = {
        'train': order[:n_train],
        'valid': order[n_train:n_train + n_valid],
        'test': order[n_train + n_valid:],
    }

    name_e = lambda e: f'e{e}'
    _write(output_path / 'train.txt', ((name_e(s), f'r{r}', name_e(o)) for s, r, o in triples))
    _write(output_path / 'valid.txt', [])
    _write(output_path / 'test.txt', [])
    for split_name, idx in parts.items():
        _write(output_path / f'Entity_Type_{split_name}.txt',
               ((name_e(pairs[i][0]), f't{pairs[i][1]}') for i in sorted(idx)))
    return output_path


if __name__ == '__main__':
    parser = argparse.ArgumentParser()
    parser.add_argument('output_path', help='Directory to write the dataset to')
    parser.add_argument('--entities', type=int, default=200)
    parser.add_argument('--classes', type=int, default=10)
    parser.add_argument('--relations', type=int, default=15)
    parser.add_argument('--triples', type=int, default=3000)
    parser.add_argument('--seed', type=int, default=0)
    args = parser.parse_args()

    make_synthetic_kg(args.output_path, num_entities=args.entities, num_classes=args.classes,
                      num_relations=args.relations, num_triples=args.triples, seed=args.seed)
