import dataclasses
import json
import logging
import typing as T
from pathlib import Path

from dataset.data_utils import TripleStore, Vocabularies
from embedders.generator import TrainConfig
from evaluate import RankingReport, evaluate
from train import run_training

logger = logging.getLogger(__name__)


class SweepPipeline:
    def __init__(
        self, output_dir: T.Union[str, Path], base_config: TrainConfig, dims: T.List[int],
        store: TripleStore, vocabs: T.Optional[Vocabularies] = None, split: str = 'valid',
        threads: int = 1,
    ) -> None:
        '''
        Trains one model per type dimension l, everything else fixed.
        '''
        self.output_dir = Path(output_dir)
        self.base_config = base_config
        self.dims = dims
        self.store = store
        self.vocabs = vocabs
        self.split = split
        self.threads = threads

    def train(self, progress: bool = True) -> T.Dict[int, RankingReport]:
        """
        Train and evaluate every dimension; write per-dimension reports and sweep.json.
        """
        reports: T.Dict[int, RankingReport] = {}
        digests = self.vocabs.digests() if self.vocabs is not None else None
        for dim in self.dims:
            config = dataclasses.replace(self.base_config, l=dim)
            run_dir = self.output_dir / f'l{dim}'
            run_dir.mkdir(parents=True, exist_ok=True)
            config.dump(run_dir / 'config.json')

            model, _ = run_training(config, self.store, run_dir, vocab_digests=digests, progress=progress)
            report = evaluate(self.store.type_pairs(self.split), model, self.store, threads=self.threads)
            report.dump(run_dir / f'report_{self.split}.json')
            reports[dim] = report
            logger.info('l=%d: %s', dim, report.summary())

        best = max(reports, key=lambda d: reports[d].mrr) if reports else None
        with open(self.output_dir / 'sweep.json', 'w') as json_file:
            json.dump({
                'split': self.split,
                'best_l': best,
                'reports': {str(d): r.to_dict() for d, r in reports.items()},
            }, json_file, indent=4)
        return reports
