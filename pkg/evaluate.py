import dataclasses
import json
import logging
import typing as T
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch
from torch import Tensor
from tqdm import tqdm

from dataset.data_utils import TripleStore
from embedders.generator import CoreModel

logger = logging.getLogger(__name__)

HITS_AT = (1, 3, 10)
# fixed so that reports do not depend on the worker count
CHUNK_SIZE = 256

ScoreFn = T.Callable[[Tensor], Tensor]


@dataclasses.dataclass
class RankingReport:
    per_query: T.List[T.Tuple[int, int, int]]
    mrr: float
    hits: T.Dict[int, float]
    n_queries: int

    @classmethod
    def from_ranks(cls, queries: T.Sequence[T.Tuple[int, int]], ranks: T.Sequence[int]) -> 'RankingReport':
        ranks_arr = np.asarray(ranks, dtype=np.float64)
        if len(ranks_arr) == 0:
            return cls([], 0.0, {k: 0.0 for k in HITS_AT}, 0)
        return cls(
            per_query=[(int(e), int(t), int(r)) for (e, t), r in zip(queries, ranks)],
            mrr=float(np.mean(1.0 / ranks_arr)),
            hits={k: float(np.mean(ranks_arr <= k)) for k in HITS_AT},
            n_queries=len(ranks_arr),
        )

    def to_dict(self) -> T.Dict[str, T.Any]:
        out: T.Dict[str, T.Any] = {'mrr': self.mrr, 'n_queries': self.n_queries}
        out.update({f'hits@{k}': v for k, v in self.hits.items()})
        return out

    def summary(self) -> str:
        return 'MRR %.4f  H@1 %.4f  H@3 %.4f  H@10 %.4f' % (
            self.mrr, self.hits[1], self.hits[3], self.hits[10])

    def dump(self, path: T.Union[str, Path]) -> None:
        """
        Save the aggregate metrics to a JSON file.
        """
        with open(path, 'w') as json_file:
            json.dump(self.to_dict(), json_file, indent=4)

    def dump_ranks(self, path: T.Union[str, Path], vocabs: T.Any = None) -> None:
        """
        Per-query ranks as TSV: entity, true type, filtered rank.
        """
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            for e, t, r in self.per_query:
                if vocabs is not None:
                    f.write(f'{vocabs.entities.decode(e)}\t{vocabs.types.decode(t)}\t{r}\n')
                else:
                    f.write(f'{e}\t{t}\t{r}\n')


def filtered_ranks(scores: Tensor, true_types: Tensor, filter_mask: Tensor) -> Tensor:
    """
    Filtered rank of each true type in a (batch, num_types) score matrix, lower
    scores first. Filtered candidates are skipped and ties with the true type count
    against it.
    """
    idx = torch.arange(len(true_types))
    true_scores = scores[idx, true_types]
    competitors = ~filter_mask
    competitors[idx, true_types] = False
    return 1 + ((scores <= true_scores[:, None]) & competitors).sum(dim=1)


def rank_scores(scores: T.Union[Tensor, np.ndarray], true_type: int, filter_set: T.Iterable[int]) -> int:
    """
    Filtered rank of a single query from its per-type scores.
    """
    scores = torch.as_tensor(scores)
    filter_set = set(filter_set)
    if true_type in filter_set:
        raise ValueError(f'true type {true_type} must not be in the filter set')
    if not 0 <= true_type < len(scores):
        raise KeyError(f'type id {true_type} out of range')
    mask = torch.zeros(1, len(scores), dtype=torch.bool)
    if filter_set:
        mask[0, list(filter_set)] = True
    return int(filtered_ranks(scores[None, :], torch.tensor([true_type]), mask)[0])


def _filter_mask(store: TripleStore, pairs: np.ndarray) -> Tensor:
    mask = torch.zeros(len(pairs), store.num_types, dtype=torch.bool)
    for i, (e, t) in enumerate(pairs.tolist()):
        others = store.types_of(e) - {t}
        if others:
            mask[i, list(others)] = True
    return mask


def evaluate_ranking(
    pairs: np.ndarray, score_fn: ScoreFn, store: TripleStore,
    threads: int = 1, progress: bool = False,
) -> RankingReport:
    """
    Filtered ranking of every (entity, true type) query in file order. score_fn maps a
    tensor of entity ids to a (len(ids), num_types) matrix of scores, lower is better.
    Chunks are scored in parallel threads; the result does not depend on `threads`.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    chunks = [pairs[i:i + CHUNK_SIZE] for i in range(0, len(pairs), CHUNK_SIZE)]

    def rank_chunk(chunk: np.ndarray) -> Tensor:
        scores = score_fn(torch.from_numpy(chunk[:, 0].copy()))
        return filtered_ranks(scores, torch.from_numpy(chunk[:, 1].copy()), _filter_mask(store, chunk))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = pool.map(rank_chunk, chunks)
        if progress:
            results = tqdm(results, total=len(chunks), desc='Ranking', unit='chunk')
        ranks = [int(r) for chunk_ranks in results for r in chunk_ranks.tolist()]
    return RankingReport.from_ranks(pairs.tolist(), ranks)


def _check_model(model: CoreModel, store: TripleStore) -> None:
    from embedders.util import CheckpointError

    sizes = (model.num_entities, model.num_relations, model.num_types)
    expected = (store.num_entities, store.num_relations, store.num_types)
    if sizes != expected:
        raise CheckpointError(
            f'checkpoint vocabulary sizes {sizes} do not match the dataset {expected}')


def evaluate(
    split: np.ndarray, model: CoreModel, store: TripleStore,
    sidecar: T.Optional[T.Dict[str, T.Any]] = None, vocab_digests: T.Optional[T.Dict[str, str]] = None,
    threads: int = 1, progress: bool = False,
) -> RankingReport:
    """
    Rank every type for each query by the regression distance f(e, t).
    """
    _check_model(model, store)
    if sidecar is not None and vocab_digests is not None:
        from embedders.util import check_vocabularies
        check_vocabularies(sidecar, vocab_digests)
    return evaluate_ranking(split, model.type_distances, store, threads=threads, progress=progress)


def _check_entity(model: CoreModel, entity: int) -> None:
    if not 0 <= entity < model.num_entities:
        raise KeyError(f'entity id {entity} out of range [0, {model.num_entities})')


def rank_type(entity: int, true_type: int, model: CoreModel, filter_set: T.Iterable[int]) -> int:
    """
    Filtered rank of the true type among all types by regression distance.
    """
    _check_entity(model, entity)
    return rank_scores(model.type_distances(torch.tensor([entity]))[0], true_type, filter_set)


def predict_types(entity: int, model: CoreModel, top_n: int = 1) -> T.List[T.Tuple[int, float]]:
    """
    The top_n types closest to the entity as (type id, distance), ascending by
    distance, ties broken by lower type id.
    """
    if top_n < 1:
        raise ValueError(f'top_n must be >= 1, got {top_n}')
    _check_entity(model, entity)
    scores = model.type_distances(torch.tensor([entity]))[0]
    order = torch.sort(scores, stable=True).indices[:top_n]
    return [(int(t), float(scores[t])) for t in order]


def predict_type(entity: int, model: CoreModel) -> int:
    return predict_types(entity, model, top_n=1)[0][0]
