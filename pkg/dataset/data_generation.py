
import argparse
import logging
import typing as T
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


def expand_types(rows: np.ndarray, col: int, pairs: np.ndarray, unique: bool = True) -> np.ndarray:
    """
    Replace the entity in column `col` of every row by each of its types in `pairs`,
    dropping rows whose entity has no type. With unique=True the result is
    deduplicated and sorted; otherwise every (row, type) combination is kept.
    """
    rows = np.asarray(rows, dtype=np.int64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(rows) == 0 or len(pairs) == 0:
        return np.zeros((0, rows.shape[1]), dtype=np.int64)
    order = np.argsort(pairs[:, 0], kind='stable')
    ents = pairs[order, 0]
    types = pairs[order, 1]

    starts = np.searchsorted(ents, rows[:, col], side='left')
    counts = np.searchsorted(ents, rows[:, col], side='right') - starts
    total = int(counts.sum())
    if total == 0:
        return np.zeros((0, rows.shape[1]), dtype=np.int64)

    out = np.repeat(rows, counts, axis=0)
    # position of every output row inside its entity's run of types
    run_offset = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    out[:, col] = types[np.repeat(starts, counts) + run_offset]
    return np.unique(out, axis=0) if unique else out


def generate_type_triples(kg_train: np.ndarray, tp_train: np.ndarray) -> np.ndarray:
    """
    Enumerate every (subject type, relation, object type) combination induced by the
    train KG triples and the train entity types. Output rows are unique and sorted by
    (subject_type, relation, object_type).
    """
    kg_train = np.asarray(kg_train, dtype=np.int64).reshape(-1, 3)
    tp_train = np.asarray(tp_train, dtype=np.int64).reshape(-1, 2)
    if len(kg_train) == 0 or len(tp_train) == 0:
        return np.zeros((0, 3), dtype=np.int64)

    rows = np.unique(kg_train, axis=0)
    rows = expand_types(rows, 0, tp_train)
    if len(rows) == 0:
        return rows
    return expand_types(rows, 2, tp_train)


def export_type_triples(
    out_path: T.Union[str, Path], triples: np.ndarray, vocabs: T.Any, delimiter: str = '\t'
) -> None:
    """
    Write type triples as identifier strings, one per line.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, 'w', encoding='utf-8', newline='\n') as f:
        for st, r, ot in triples.tolist():
            f.write(delimiter.join((
                vocabs.types.decode(st), vocabs.relations.decode(r), vocabs.types.decode(ot)
            )) + '\n')
    logger.info('Wrote %d type triples to %s', len(triples), out_path)


def create_type_triples(data_dir: str, out_path: T.Optional[str] = None) -> np.ndarray:
    from dataset.data_utils import DatasetSchema, load_dataset

    schema = DatasetSchema()
    # always regenerate instead of reading a stale export
    schema.type_triples_file = ''
    store, vocabs = load_dataset(data_dir, schema)
    if out_path is None:
        out_path = str(Path(data_dir) / 'type_triples.txt')
    export_type_triples(out_path, store.tt_train, vocabs)
    return store.tt_train


if __name__ == '__main__':
    parser = argparse.ArgumentParser()
    parser.add_argument('data_dir', help='Dataset directory holding the six split files')
    parser.add_argument('-o', '--out', default=None,
                        help='Output path, defaults to <data_dir>/type_triples.txt')
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO)
    create_type_triples(args.data_dir, args.out)
