import typing as T

import numpy as np

# bound on redraws of a negative that collides with a known positive
MAX_RETRIES = 32

SUBJECT = 'subject'
OBJECT = 'object'


class _KeySet:
    def __init__(self, keys: np.ndarray) -> None:
        self.keys = np.unique(np.asarray(keys, dtype=np.int64))

    def contains(self, keys: np.ndarray) -> np.ndarray:
        if len(self.keys) == 0:
            return np.zeros(keys.shape, dtype=bool)
        idx = np.minimum(np.searchsorted(self.keys, keys), len(self.keys) - 1)
        return self.keys[idx] == keys


def _draw_filtered(
    rng: np.random.Generator, high: int, shape: T.Tuple[int, int],
    keys_of: T.Callable[[np.ndarray], np.ndarray], known: _KeySet, max_retries: int
) -> np.ndarray:
    """
    Draw ids uniformly with replacement, redrawing those whose corrupted record is a
    known positive. After max_retries rounds the remaining collisions are kept.
    """
    ids = rng.integers(0, high, size=shape, dtype=np.int64)
    for _ in range(max_retries):
        bad = known.contains(keys_of(ids))
        n_bad = int(bad.sum())
        if n_bad == 0:
            break
        ids[bad] = rng.integers(0, high, size=n_bad, dtype=np.int64)
    return ids


class TripleSampler:
    def __init__(
        self, num_nodes: int, num_relations: int, known: np.ndarray,
        seed: T.Optional[int] = None, rng: T.Optional[np.random.Generator] = None,
        max_retries: int = MAX_RETRIES,
    ) -> None:
        """
        Corrupts the subject or object of (subject, relation, object) rows. Serves KG
        triples (nodes are entities) and type triples (nodes are types).

        Args:
            num_nodes (int): Size of the vocabulary the corrupted slot is drawn from.
            num_relations (int): Size of the relation vocabulary.
            known (np.ndarray): Train positives used to filter negatives.
            seed (int): Seed for a private generator, ignored when rng is given.
        """
        self.num_nodes = num_nodes
        self.num_relations = num_relations
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.max_retries = max_retries
        known = np.asarray(known, dtype=np.int64).reshape(-1, 3)
        self.known = _KeySet(self._keys(known[:, 0], known[:, 1], known[:, 2]))

    def _keys(self, s: np.ndarray, r: np.ndarray, o: np.ndarray) -> np.ndarray:
        return (s * self.num_relations + r) * self.num_nodes + o

    def corrupt(self, triples: np.ndarray, n: int, mode: str) -> np.ndarray:
        """
        Return a (batch, n) array of replacement ids for the corrupted slot.
        """
        if n < 1:
            raise ValueError(f'negative sample size must be >= 1, got {n}')
        if mode not in (SUBJECT, OBJECT):
            raise ValueError(f'Unknown corruption mode {mode!r}')
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        s, r, o = (triples[:, i:i + 1] for i in range(3))
        if mode == SUBJECT:
            keys_of = lambda ids: self._keys(ids, r, o)
        else:
            keys_of = lambda ids: self._keys(s, r, ids)
        return _draw_filtered(
            self.rng, self.num_nodes, (len(triples), n), keys_of, self.known, self.max_retries
        )

    def corrupt_both(self, triples: np.ndarray, n: int) -> np.ndarray:
        """
        Negatives for each row as full triples, shape (batch, n, 3). The first n // 2
        corrupt the subject, the rest corrupt the object.
        """
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        n_subj = n // 2
        out = np.repeat(triples[:, None, :], n, axis=1)
        if n_subj:
            out[:, :n_subj, 0] = self.corrupt(triples, n_subj, SUBJECT)
        out[:, n_subj:, 2] = self.corrupt(triples, n - n_subj, OBJECT)
        return out

    def sample_negative_entities(self, triple: T.Sequence[int], n: int, mode: str) -> np.ndarray:
        """
        n negatives of a single triple, shape (n, 3).
        """
        triple = np.asarray(triple, dtype=np.int64).reshape(1, 3)
        out = np.repeat(triple, n, axis=0)
        out[:, 0 if mode == SUBJECT else 2] = self.corrupt(triple, n, mode)[0]
        return out


class TypePairSampler:
    def __init__(
        self, num_types: int, known: np.ndarray,
        seed: T.Optional[int] = None, rng: T.Optional[np.random.Generator] = None,
        max_retries: int = MAX_RETRIES,
    ) -> None:
        '''
        Corrupts the type of (entity, type) rows, filtering known train pairs.
        '''
        self.num_types = num_types
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.max_retries = max_retries
        known = np.asarray(known, dtype=np.int64).reshape(-1, 2)
        self.known = _KeySet(known[:, 0] * num_types + known[:, 1])

    def corrupt(self, pairs: np.ndarray, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError(f'negative sample size must be >= 1, got {n}')
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        e = pairs[:, 0:1]
        return _draw_filtered(
            self.rng, self.num_types, (len(pairs), n),
            lambda ids: e * self.num_types + ids, self.known, self.max_retries,
        )

    def sample_negative_types(self, pair: T.Sequence[int], n: int) -> np.ndarray:
        """
        n negatives of a single pair, shape (n, 2).
        """
        pair = np.asarray(pair, dtype=np.int64).reshape(1, 2)
        out = np.repeat(pair, n, axis=0)
        out[:, 1] = self.corrupt(pair, n)[0]
        return out
