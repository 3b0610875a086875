import logging
import typing as T
from collections import defaultdict
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from dataset.data_generation import expand_types
from dataset.data_utils import TripleStore
from evaluate import RankingReport, evaluate_ranking

logger = logging.getLogger(__name__)

SDTYPE = 'sdtype'
SDTYPE_COND = 'sdtype-cond'
MODES = (SDTYPE, SDTYPE_COND)

# conditional families: subject type given relation, object type given relation, and
# the same two further conditioned on the type at the other end
FAMILIES = ('subj', 'obj', 'subj_cond', 'obj_cond')

Distribution = T.Tuple[np.ndarray, np.ndarray]


class ConditionalTypeTable:
    def __init__(self, counts: T.Dict[str, np.ndarray]) -> None:
        """
        Sparse conditional type distributions estimated by counting.

        Args:
            counts (dict[str, np.ndarray]): Per family, rows of (condition..., type,
                count). 'subj'/'obj' rows are (relation, type, count); 'subj_cond' rows
                are (relation, object type, subject type, count) and 'obj_cond' rows
                are (relation, subject type, object type, count).

        Attributes:
            tables (dict[str, dict[tuple, (np.ndarray, np.ndarray)]]): Per family, the
                condition key mapped to (type ids, probabilities).
        """
        self.counts = {f: np.asarray(counts[f], dtype=np.int64) for f in FAMILIES}
        self.tables: T.Dict[str, T.Dict[T.Tuple[int, ...], Distribution]] = {}
        for family, rows in self.counts.items():
            table: T.Dict[T.Tuple[int, ...], Distribution] = {}
            if len(rows):
                keys = rows[:, :-2]
                # rows are sorted by key, so each key is one contiguous run
                boundaries = np.flatnonzero(np.any(keys[1:] != keys[:-1], axis=1)) + 1
                for run in np.split(np.arange(len(rows)), boundaries):
                    c = rows[run, -1].astype(np.float64)
                    table[tuple(keys[run[0]].tolist())] = (rows[run, -2].copy(), c / c.sum())
            self.tables[family] = table

    def prob(self, family: str, key: T.Tuple[int, ...], type_id: int) -> float:
        dist = self.tables[family].get(key)
        if dist is None:
            return 0.0
        hit = np.flatnonzero(dist[0] == type_id)
        return float(dist[1][hit[0]]) if len(hit) else 0.0

    def save(self, path: T.Union[str, Path]) -> None:
        """
        Save the raw counts; probabilities are rebuilt on load.
        """
        np.savez_compressed(path, **self.counts)

    @classmethod
    def load(cls, path: T.Union[str, Path]) -> 'ConditionalTypeTable':
        with np.load(path) as data:
            return cls({f: data[f] for f in FAMILIES})


def _count(rows: np.ndarray) -> np.ndarray:
    if len(rows) == 0:
        return np.zeros((0, rows.shape[1] + 1), dtype=np.int64)
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    return np.concatenate([uniq, counts[:, None]], axis=1)


def fit(store: TripleStore) -> ConditionalTypeTable:
    """
    Count train type co-occurrences over the train KG triples. Only train type pairs
    are used as entity types.
    """
    kg = store.kg_triples('train')
    if len(kg) == 0:
        raise ValueError('cannot fit type statistics on an empty train split')
    tp = store.tp_train
    # one row per (triple, subject type) and per (triple, subject type, object type)
    subj_typed = expand_types(kg, 0, tp, unique=False)
    obj_typed = expand_types(kg, 2, tp, unique=False)
    both_typed = expand_types(subj_typed, 2, tp, unique=False)

    counts = {
        'subj': _count(subj_typed[:, [1, 0]]),
        'obj': _count(obj_typed[:, [1, 2]]),
        'subj_cond': _count(both_typed[:, [1, 2, 0]]),
        'obj_cond': _count(both_typed[:, [1, 0, 2]]),
    }
    table = ConditionalTypeTable(counts)
    logger.info('Fitted type statistics: %s',
                ', '.join(f'{f}={len(t)} keys' for f, t in table.tables.items()))
    return table


class Neighborhood:
    def __init__(self, store: TripleStore) -> None:
        '''
        Train triples incident to each entity, as subject and as object.
        '''
        self.store = store
        self.as_subject: T.Dict[int, T.List[T.Tuple[int, int]]] = defaultdict(list)
        self.as_object: T.Dict[int, T.List[T.Tuple[int, int]]] = defaultdict(list)
        for s, r, o in store.kg_train.tolist():
            self.as_subject[s].append((r, o))
            self.as_object[o].append((r, s))

    def combinations(self, entity: int, mode: str) -> T.Set[T.Tuple[str, T.Tuple[int, ...]]]:
        """
        The (family, condition key) set N of an entity's neighborhood. Neighbor types
        come from the train split only.
        """
        train_types = self.store.known_types['train']
        out: T.Set[T.Tuple[str, T.Tuple[int, ...]]] = set()
        for family, incident in (('subj', self.as_subject.get(entity, ())),
                                 ('obj', self.as_object.get(entity, ()))):
            for r, neighbor in incident:
                if mode == SDTYPE:
                    out.add((family, (r,)))
                else:
                    for t in train_types.get(neighbor, ()):
                        out.add((family + '_cond', (r, t)))
        return out


def score_types(
    entity: int, store: TripleStore, table: ConditionalTypeTable, mode: str = SDTYPE_COND,
    neighborhood: T.Optional[Neighborhood] = None,
) -> T.Dict[int, float]:
    """
    Average conditional type probability over the entity's neighborhood combinations.
    Combinations absent from the table are left out of the average. An entity with no
    usable combination gets an empty map.
    """
    if mode not in MODES:
        raise ValueError(f'Unknown baseline mode {mode!r}, expected one of {MODES}')
    neighborhood = neighborhood or Neighborhood(store)
    combos = [(f, k) for f, k in sorted(neighborhood.combinations(entity, mode))
              if k in table.tables[f]]
    if not combos:
        return {}
    totals: T.Dict[int, float] = defaultdict(float)
    for family, key in combos:
        types, probs = table.tables[family][key]
        for t, p in zip(types.tolist(), probs.tolist()):
            totals[t] += p
    return {t: v / len(combos) for t, v in sorted(totals.items())}


class BaselineScorer:
    def __init__(self, store: TripleStore, table: ConditionalTypeTable, mode: str) -> None:
        self.store = store
        self.table = table
        self.mode = mode
        self.neighborhood = Neighborhood(store)

    def __call__(self, entity_ids: Tensor) -> Tensor:
        """
        Negative aggregated probabilities, (len(ids), num_types), lower is better.
        """
        out = torch.zeros(len(entity_ids), self.store.num_types, dtype=torch.float64)
        for i, e in enumerate(entity_ids.tolist()):
            scores = score_types(e, self.store, self.table, self.mode, self.neighborhood)
            if scores:
                out[i, list(scores.keys())] = -torch.tensor(list(scores.values()), dtype=torch.float64)
        return out


def evaluate_baseline(
    split: np.ndarray, store: TripleStore, table: ConditionalTypeTable, mode: str = SDTYPE_COND,
    threads: int = 1, progress: bool = False,
) -> RankingReport:
    """
    Filtered ranking of the split's type pairs by a statistical baseline.
    """
    if mode not in MODES:
        raise ValueError(f'Unknown baseline mode {mode!r}, expected one of {MODES}')
    return evaluate_ranking(split, BaselineScorer(store, table, mode), store,
                            threads=threads, progress=progress)
