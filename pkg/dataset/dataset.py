
import typing as T

import numpy as np
import torch
from torch.utils.data import BatchSampler, DataLoader, Dataset, RandomSampler

from dataset.sampler import TripleSampler, TypePairSampler


class RecordDataset(Dataset):
    def __init__(self, records: np.ndarray) -> None:
        """
        Rows of an integer-encoded record array (KG triples, type pairs or type
        triples). Indexing with a list of positions returns the whole batch at once.
        """
        self.records = np.asarray(records, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: T.Union[int, T.List[int]]) -> np.ndarray:
        return self.records[index]


class TripleCollator:
    def __init__(self, sampler: TripleSampler, neg_size: int) -> None:
        self.sampler = sampler
        self.neg_size = neg_size

    def __call__(self, rows: np.ndarray) -> T.Dict[str, torch.Tensor]:
        positive = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
        negative = self.sampler.corrupt_both(positive, self.neg_size)
        return {'positive': torch.from_numpy(positive), 'negative': torch.from_numpy(negative)}


class PairCollator:
    def __init__(self, sampler: TypePairSampler, neg_size: int) -> None:
        self.sampler = sampler
        self.neg_size = neg_size

    def __call__(self, rows: np.ndarray) -> T.Dict[str, torch.Tensor]:
        positive = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
        negative = self.sampler.corrupt(positive, self.neg_size)
        return {'positive': torch.from_numpy(positive), 'negative': torch.from_numpy(negative)}


class InfiniteIterator:
    def __init__(self, dataloader: DataLoader) -> None:
        '''
        Cycles over a dataloader forever, reshuffling on every pass.
        '''
        self.dataloader = dataloader
        self._it = iter(dataloader)

    def __iter__(self) -> 'InfiniteIterator':
        return self

    def __next__(self) -> T.Dict[str, torch.Tensor]:
        try:
            return next(self._it)
        except StopIteration:
            self._it = iter(self.dataloader)
            return next(self._it)


def get_dataloader(
    records: np.ndarray, collate_fn: T.Callable, batch_size: int, seed: int
) -> T.Optional[InfiniteIterator]:
    """
    Seeded, single-process shuffled batches with negatives attached by collate_fn.
    Each batch is fetched with one indexing call. Returns None for an empty record set.
    """
    dataset = RecordDataset(records)
    if len(dataset) == 0:
        return None
    generator = torch.Generator()
    generator.manual_seed(seed)
    batches = BatchSampler(RandomSampler(dataset, generator=generator),
                           batch_size=min(batch_size, len(dataset)), drop_last=False)
    # batch_size=None: the sampler yields index lists and the dataset returns whole batches
    dataloader = DataLoader(dataset, sampler=batches, batch_size=None, num_workers=0, collate_fn=collate_fn)
    return InfiniteIterator(dataloader)


def build_iterators(store: T.Any, entity_batch: int, type_batch: int,
                    neg_size: int, seed: int) -> T.Dict[str, T.Optional[InfiniteIterator]]:
    """
    One iterator per training phase, each with its own sampler and generator seeded
    from `seed`.
    """
    seeds = np.random.SeedSequence(seed).generate_state(6)
    kg_sampler = TripleSampler(store.num_entities, store.num_relations, store.kg_train,
                               seed=int(seeds[0]))
    tp_sampler = TypePairSampler(store.num_types, store.tp_train, seed=int(seeds[1]))
    tt_sampler = TripleSampler(store.num_types, store.num_relations, store.tt_train,
                               seed=int(seeds[2]))
    return {
        'KGE': get_dataloader(store.kg_train, TripleCollator(kg_sampler, neg_size),
                              entity_batch, int(seeds[3])),
        'REG': get_dataloader(store.tp_train, PairCollator(tp_sampler, neg_size),
                              type_batch, int(seeds[4])),
        'TPE': get_dataloader(store.tt_train, TripleCollator(tt_sampler, neg_size),
                              type_batch, int(seeds[5])),
    }
