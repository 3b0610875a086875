import hashlib
import logging
import typing as T
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SPLITS = ('train', 'valid', 'test')


class DatasetError(ValueError):
    """
    Raised when a dataset directory cannot be loaded.
    """


class Vocabulary:
    def __init__(self, name: str, entries: T.Iterable[str] = ()) -> None:
        """
        Bidirectional mapping between identifier strings and dense ids.

        Args:
            name (str): What the vocabulary holds (entity, relation, type). Only used
                in error messages.
            entries (iterable[str]): Initial identifiers, in id order. Duplicates are
                ignored.

        Attributes:
            entries (list[str]): Identifier for each id.
            index (dict[str, int]): Identifier to id.
        """
        self.name = name
        self.entries: T.List[str] = []
        self.index: T.Dict[str, int] = {}
        for entry in entries:
            self.add(entry)

    def add(self, entry: str) -> int:
        idx = self.index.get(entry)
        if idx is None:
            idx = len(self.entries)
            self.index[entry] = idx
            self.entries.append(entry)
        return idx

    def encode(self, entry: str) -> int:
        try:
            return self.index[entry]
        except KeyError:
            raise KeyError(f'Unknown {self.name} {entry!r}') from None

    def decode(self, idx: int) -> str:
        if not 0 <= idx < len(self.entries):
            raise KeyError(f'{self.name} id {idx} out of range [0, {len(self.entries)})')
        return self.entries[idx]

    def digest(self) -> str:
        """
        Content hash used to tie checkpoints to the vocabulary they were trained on.
        """
        h = hashlib.sha256()
        for entry in self.entries:
            h.update(entry.encode('utf-8'))
            h.update(b'\n')
        return h.hexdigest()

    def __contains__(self, entry: str) -> bool:
        return entry in self.index

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.entries == other.entries


class Vocabularies(T.NamedTuple):
    entities: Vocabulary
    relations: Vocabulary
    types: Vocabulary

    def digests(self) -> T.Dict[str, str]:
        return {
            'entities': self.entities.digest(),
            'relations': self.relations.digest(),
            'types': self.types.digest(),
        }


class DatasetSchema:
    def __init__(
        self,
        kg_files: T.Tuple[str, str, str] = ('train.txt', 'valid.txt', 'test.txt'),
        type_files: T.Tuple[str, str, str] = (
            'Entity_Type_train.txt', 'Entity_Type_valid.txt', 'Entity_Type_test.txt'
        ),
        type_triples_file: str = 'type_triples.txt',
        delimiter: str = '\t',
        strict: bool = False,
    ) -> None:
        '''
        File layout of a dataset directory. With strict=True every identifier used in
        valid/test must also appear in a train file.
        '''
        self.kg_files = dict(zip(SPLITS, kg_files))
        self.type_files = dict(zip(SPLITS, type_files))
        self.type_triples_file = type_triples_file
        self.delimiter = delimiter
        self.strict = strict


def _empty(width: int) -> np.ndarray:
    return np.zeros((0, width), dtype=np.int64)


def _frozen(rows: T.List[T.Tuple[int, ...]], width: int) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, width) if rows else _empty(width)
    arr.setflags(write=False)
    return arr


class TripleStore:
    def __init__(
        self,
        kg: T.Dict[str, np.ndarray],
        tp: T.Dict[str, np.ndarray],
        tt_train: T.Optional[np.ndarray],
        num_entities: int,
        num_relations: int,
        num_types: int,
        duplicates: T.Optional[T.Dict[str, int]] = None,
    ) -> None:
        """
        Integer-encoded dataset. KG triples are (subject, relation, object) rows, type
        pairs are (entity, type) rows and type triples are (subject type, relation,
        object type) rows, all int64 numpy arrays that are read-only after construction.

        Attributes:
            known_types (dict[str, dict[int, set[int]]]): Per split, the types observed
                for each entity.
            duplicates (dict[str, int]): Dropped duplicate lines per file.
        """
        self.kg_train, self.kg_valid, self.kg_test = (kg.get(s, _empty(3)) for s in SPLITS)
        self.tp_train, self.tp_valid, self.tp_test = (tp.get(s, _empty(2)) for s in SPLITS)
        self.num_entities = num_entities
        self.num_relations = num_relations
        self.num_types = num_types
        self.duplicates = duplicates or {}
        for arr in (self.kg_train, self.kg_valid, self.kg_test,
                    self.tp_train, self.tp_valid, self.tp_test):
            arr.setflags(write=False)

        self.known_types: T.Dict[str, T.Dict[int, T.Set[int]]] = {}
        for split in SPLITS:
            table: T.Dict[int, T.Set[int]] = {}
            for e, t in self.type_pairs(split).tolist():
                table.setdefault(e, set()).add(t)
            self.known_types[split] = table

        if tt_train is None:
            from dataset.data_generation import generate_type_triples
            tt_train = generate_type_triples(self.kg_train, self.tp_train)
        self.tt_train = tt_train
        self.tt_train.setflags(write=False)
        self._check_bounds()

    def kg_triples(self, split: str) -> np.ndarray:
        return {'train': self.kg_train, 'valid': self.kg_valid, 'test': self.kg_test}[split]

    def type_pairs(self, split: str) -> np.ndarray:
        return {'train': self.tp_train, 'valid': self.tp_valid, 'test': self.tp_test}[split]

    def types_of(self, entity: int, splits: T.Iterable[str] = SPLITS) -> T.Set[int]:
        """
        Types known for an entity across the given splits.
        """
        out: T.Set[int] = set()
        for split in splits:
            out |= self.known_types[split].get(entity, set())
        return out

    def _check_bounds(self) -> None:
        limits = {
            'kg': (self.num_entities, self.num_relations, self.num_entities),
            'tp': (self.num_entities, self.num_types),
            'tt': (self.num_types, self.num_relations, self.num_types),
        }
        groups = {
            'kg': (self.kg_train, self.kg_valid, self.kg_test),
            'tp': (self.tp_train, self.tp_valid, self.tp_test),
            'tt': (self.tt_train,),
        }
        for kind, arrays in groups.items():
            for arr in arrays:
                if len(arr) == 0:
                    continue
                if arr.min() < 0 or np.any(arr.max(axis=0) >= np.asarray(limits[kind])):
                    raise DatasetError(f'{kind} ids out of vocabulary bounds')


def read_records(path: Path, width: int, delimiter: str = '\t') -> T.List[T.List[str]]:
    """
    Read a delimited file with a fixed number of fields per line. Blank lines are
    skipped.
    """
    if not path.is_file():
        raise DatasetError(f'Missing dataset file: {path}')
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip('\r\n')
            if not line.strip():
                continue
            fields = line.split(delimiter)
            if len(fields) != width or any(not x for x in fields):
                raise DatasetError(
                    f'{path.name}:{lineno}: expected {width} fields separated by '
                    f'{delimiter!r}, got {line!r}'
                )
            records.append(fields)
    return records


def _dedup(rows: T.List[T.Tuple[int, ...]]) -> T.Tuple[T.List[T.Tuple[int, ...]], int]:
    seen = set()
    out = []
    for row in rows:
        if row not in seen:
            seen.add(row)
            out.append(row)
    return out, len(rows) - len(out)


def _report_overlaps(name: str, arrays: T.Dict[str, np.ndarray]) -> None:
    sets = {split: set(map(tuple, arr.tolist())) for split, arr in arrays.items()}
    for a, b in (('train', 'valid'), ('train', 'test'), ('valid', 'test')):
        n = len(sets[a] & sets[b])
        if n:
            logger.warning('%d %s records shared between %s and %s', n, name, a, b)


def load_dataset(
    dir_path: T.Union[str, Path], schema: T.Optional[DatasetSchema] = None
) -> T.Tuple[TripleStore, Vocabularies]:
    """
    Load the six split files of a dataset directory, build the vocabularies in
    first-appearance order (train, then valid, then test) and integer-encode
    everything. A `type_triples.txt` file, when present, is used instead of
    generating type triples.
    """
    schema = schema or DatasetSchema()
    dir_path = Path(dir_path)
    vocabs = Vocabularies(Vocabulary('entity'), Vocabulary('relation'), Vocabulary('type'))
    ents, rels, types = vocabs
    delim = schema.delimiter

    kg: T.Dict[str, np.ndarray] = {}
    tp: T.Dict[str, np.ndarray] = {}
    duplicates: T.Dict[str, int] = {}
    train_names: T.Tuple[T.Set[str], T.Set[str], T.Set[str]] = (set(), set(), set())

    def check_seen(vocab_pos: int, name: str, fname: str) -> None:
        if schema.strict and name not in train_names[vocab_pos]:
            raise DatasetError(f'{fname}: {vocabs[vocab_pos].name} {name!r} does not appear in any train file')

    for split in SPLITS:
        kg_name, tp_name = schema.kg_files[split], schema.type_files[split]
        kg_records = read_records(dir_path / kg_name, 3, delim)
        tp_records = read_records(dir_path / tp_name, 2, delim)
        if split == 'train' and not kg_records:
            raise DatasetError(f'empty split: {kg_name}')
        if split == 'train' and not tp_records:
            logger.warning('empty split: %s', tp_name)

        rows = []
        for s, r, o in kg_records:
            if split == 'train':
                train_names[0].update((s, o))
                train_names[1].add(r)
            else:
                check_seen(0, s, kg_name)
                check_seen(1, r, kg_name)
                check_seen(0, o, kg_name)
            rows.append((ents.add(s), rels.add(r), ents.add(o)))
        rows, n_dup = _dedup(rows)
        duplicates[kg_name] = n_dup
        kg[split] = _frozen(rows, 3)

        pairs = []
        for e, t in tp_records:
            if split == 'train':
                train_names[0].add(e)
                train_names[2].add(t)
            else:
                check_seen(0, e, tp_name)
                check_seen(2, t, tp_name)
            pairs.append((ents.add(e), types.add(t)))
        pairs, n_dup = _dedup(pairs)
        duplicates[tp_name] = n_dup
        tp[split] = _frozen(pairs, 2)

    for fname, n in duplicates.items():
        if n:
            logger.warning('Dropped %d duplicate lines from %s', n, fname)
    _report_overlaps('KG triple', kg)
    _report_overlaps('entity type', tp)

    tt_train = None
    tt_path = dir_path / schema.type_triples_file
    if tt_path.is_file():
        rows = []
        for st, r, ot in read_records(tt_path, 3, delim):
            if st not in types or ot not in types or r not in rels:
                raise DatasetError(f'{tt_path.name}: unknown identifier in ({st}, {r}, {ot})')
            rows.append((types.encode(st), rels.encode(r), types.encode(ot)))
        rows, _ = _dedup(rows)
        tt_train = _frozen(sorted(rows), 3)

    store = TripleStore(kg, tp, tt_train, len(ents), len(rels), len(types), duplicates)
    logger.info(
        'Loaded %s: %d entities, %d relations, %d types, %d/%d/%d KG triples, '
        '%d/%d/%d type pairs, %d type triples',
        dir_path, len(ents), len(rels), len(types),
        len(store.kg_train), len(store.kg_valid), len(store.kg_test),
        len(store.tp_train), len(store.tp_valid), len(store.tp_test), len(store.tt_train),
    )
    return store, vocabs


def file_digest(path: T.Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            h.update(chunk)
    return h.hexdigest()
