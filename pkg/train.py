import json
import logging
import math
import typing as T
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from torch import Tensor
from torch.optim import Optimizer
from tqdm import tqdm

import embedders.optim
from dataset.data_utils import TripleStore
from dataset.dataset import InfiniteIterator, build_iterators
from embedders.embedding import EmbeddingTable, score, score_gradients, score_type_space
from embedders.generator import CoreModel, TrainConfig, generate_model
from embedders.losses import LossConfig, ns_loss, ns_loss_gradients
from embedders.regression import regression_gradients, regression_score
from embedders.util import save_checkpoint
from evaluate import evaluate_ranking
from utils import set_threads

logger = logging.getLogger(__name__)


class Phase(str, Enum):
    KGE = 'KGE'
    REG = 'REG'
    TPE = 'TPE'


PHASES = (Phase.KGE, Phase.REG, Phase.TPE)


class NonFiniteLossError(RuntimeError):
    pass


def schedule(step: int, period: int = 1000, warmup: int = 0) -> Phase:
    """
    Phase for a step: KGE -> REG -> TPE, switching every `period` steps. Steps before
    `warmup` all train the KG embeddings.
    """
    if step < 0:
        raise ValueError(f'step must be >= 0, got {step}')
    if step < warmup:
        return Phase.KGE
    return PHASES[((step - warmup) // period) % len(PHASES)]


def build_optimizer(type: str, args: T.Dict[str, T.Any]) -> Optimizer:
    """
    Build an optimizer from a string and a set of arguments, looking in
    embedders.optim before torch.optim.
    """
    cls = getattr(embedders.optim, type, None) or getattr(torch.optim, type)
    return cls(**args)


class TrainingLogger:
    def __init__(self, path: T.Optional[T.Union[str, Path]] = None) -> None:
        '''
        Keeps the loss trajectory in memory and, if given a path, appends one JSON
        record per line.
        '''
        self.records: T.List[T.Dict[str, T.Any]] = []
        self.path = Path(path) if path is not None else None
        self._file = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self.path, 'w')

    def _write(self, record: T.Dict[str, T.Any]) -> None:
        self.records.append(record)
        if self._file is not None:
            self._file.write(json.dumps(record) + '\n')

    def log_train_loss(self, step: int, phase: str, loss: float, valid_mrr: T.Optional[float] = None) -> None:
        """
        Log the training loss at a given step.
        """
        record: T.Dict[str, T.Any] = {'step': step, 'phase': Phase(phase).value, 'loss': loss}
        if valid_mrr is not None:
            record['valid_mrr'] = valid_mrr
        self._write(record)

    def log_eval(self, step: int, valid_mrr: float) -> None:
        """
        Log a validation MRR that is not tied to a training step.
        """
        self._write({'step': step, 'phase': 'init', 'valid_mrr': valid_mrr})

    @property
    def losses(self) -> T.List[float]:
        return [r['loss'] for r in self.records if 'loss' in r]

    @property
    def valid_mrrs(self) -> T.List[T.Tuple[int, float]]:
        return [(r['step'], r['valid_mrr']) for r in self.records if 'valid_mrr' in r]

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None


class TrainState:
    def __init__(
        self, config: TrainConfig, model: CoreModel, optimizer: Optimizer,
        iterators: T.Dict[str, T.Optional[InfiniteIterator]],
        out_dir: T.Optional[Path] = None,
    ) -> None:
        self.config = config
        self.model = model
        self.optimizer = optimizer
        self.iterators = iterators
        self.out_dir = out_dir
        self.step = 0
        # lr decay is applied once per alternation period
        self.lr_scheduler = torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=config.lr_decay)

    @property
    def phase(self) -> Phase:
        return schedule(self.step, self.config.alternation_period, self.config.warmup_steps)

    def next_batch(self) -> T.Optional[T.Dict[str, Tensor]]:
        it = self.iterators.get(self.phase.value)
        return next(it) if it is not None else None


def _triple_phase_grads(
    nodes: EmbeddingTable, relations: EmbeddingTable, batch: T.Dict[str, Tensor],
    kind: T.Any, cfg: LossConfig, score_fn: T.Callable[..., Tensor] = score,
) -> T.Tuple[float, T.Dict[EmbeddingTable, Tensor]]:
    """
    Self-adversarial loss over (subject, relation, object) rows and sparse gradients
    for the node and relation tables.
    """
    pos, neg = batch['positive'], batch['negative']
    batch_size = len(pos)
    w = relations.lookup(pos[:, 1])
    s, o = nodes.lookup(pos[:, 0]), nodes.lookup(pos[:, 2])
    neg_s, neg_o = nodes.lookup(neg[..., 0]), nodes.lookup(neg[..., 2])
    w_neg = w[:, None, :]

    pos_score = score_fn(w, s, o, kind)
    neg_score = score_fn(w_neg, neg_s, neg_o, kind)
    loss = ns_loss(pos_score, neg_score, cfg).mean()
    d_pos, d_neg = ns_loss_gradients(pos_score, neg_score, cfg)

    gp = score_gradients(w, s, o, kind, d_pos / batch_size)
    gn = score_gradients(w_neg, neg_s, neg_o, kind, d_neg / batch_size)

    node_grad = nodes.sparse_grad(
        torch.cat([pos[:, 0], pos[:, 2], neg[..., 0].reshape(-1), neg[..., 2].reshape(-1)]),
        torch.cat([gp.subject, gp.object,
                   gn.subject.reshape(-1, nodes.dim), gn.object.reshape(-1, nodes.dim)]),
    )
    rel_grad = relations.sparse_grad(
        torch.cat([pos[:, 1], pos[:, 1]]),
        torch.cat([gp.relation, gn.relation.reshape(batch_size, relations.dim)]),
    )
    return float(loss), {nodes: node_grad, relations: rel_grad}


def _regression_phase_grads(
    model: CoreModel, batch: T.Dict[str, Tensor], cfg: LossConfig
) -> T.Tuple[float, T.Dict[T.Any, Tensor]]:
    """
    Loss over (entity, type) pairs. The entity table is read but never gets a gradient.
    """
    pos, neg = batch['positive'], batch['negative']
    batch_size = len(pos)
    reg = model.regression
    types = model.type_embedding
    e = model.entity_embedding.lookup(pos[:, 0])
    t = types.lookup(pos[:, 1])
    t_neg = types.lookup(neg)
    e_neg = e[:, None, :]

    pos_score = regression_score(e, t, reg)
    neg_score = regression_score(e_neg, t_neg, reg)
    loss = ns_loss(pos_score, neg_score, cfg).mean()
    d_pos, d_neg = ns_loss_gradients(pos_score, neg_score, cfg)

    gp = regression_gradients(e, t, reg, d_pos / batch_size)
    gn = regression_gradients(e_neg, t_neg, reg, d_neg / batch_size)
    grads: T.Dict[T.Any, Tensor] = {
        reg.a_rr: gp.a_rr + gn.a_rr,
        reg.a_ir: gp.a_ir + gn.a_ir,
        reg.a_ri: gp.a_ri + gn.a_ri,
        reg.a_ii: gp.a_ii + gn.a_ii,
        types: types.sparse_grad(
            torch.cat([pos[:, 1], neg.reshape(-1)]),
            torch.cat([gp.type, gn.type.reshape(-1, types.dim)]),
        ),
    }
    return float(loss), grads


def _dump_nonfinite(state: TrainState, phase: Phase, loss: float, batch: T.Dict[str, Tensor]) -> str:
    diag = {
        'step': state.step,
        'phase': phase.value,
        'loss': repr(loss),
        'positive': batch['positive'].tolist(),
    }
    if state.out_dir is None:
        return json.dumps(diag)[:2000]
    path = state.out_dir / f'nonfinite_step{state.step}.json'
    state.out_dir.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as json_file:
        json.dump(diag, json_file, indent=4)
    return f'diagnostics written to {path}'


def train_step(state: TrainState, batch: T.Optional[T.Dict[str, Tensor]]) -> T.Tuple[TrainState, float]:
    """
    One optimizer step on the current phase's loss. Only the phase's parameters get
    gradients, and only the rows present in the batch change.
    """
    phase = state.phase
    model = state.model
    kind = model.kind
    cfg = state.config.loss_config(phase.value)

    loss = 0.0
    if batch is not None:
        with torch.no_grad():
            if phase == Phase.KGE:
                loss, grads = _triple_phase_grads(
                    model.entity_embedding, model.relation_embedding, batch, kind, cfg)
            elif phase == Phase.TPE:
                loss, grads = _triple_phase_grads(
                    model.type_embedding, model.type_relation_embedding, batch, kind, cfg,
                    score_fn=score_type_space)
            else:
                loss, grads = _regression_phase_grads(model, batch, cfg)

        if not math.isfinite(loss):
            raise NonFiniteLossError(
                f'non-finite loss {loss} at step {state.step} ({phase.value}); '
                + _dump_nonfinite(state, phase, loss, batch))

        by_param = {id(owner.weight if isinstance(owner, EmbeddingTable) else owner): grad
                    for owner, grad in grads.items()}
        state.optimizer.zero_grad(set_to_none=True)
        # parameters outside the phase keep grad None, which the optimizer skips
        for param in model.phase_parameters(phase.value):
            param.grad = by_param.pop(id(param), None)
        if by_param:
            raise RuntimeError(f'{phase.value} produced gradients for parameters it does not train')
        state.optimizer.step()
        state.optimizer.zero_grad(set_to_none=True)

    state.step += 1
    if state.step % state.config.alternation_period == 0:
        state.lr_scheduler.step()
    return state, loss


def _validation_sample(store: TripleStore, cap: int, seed: int) -> np.ndarray:
    pairs = store.tp_valid
    if len(pairs) <= cap:
        return pairs
    rng = np.random.default_rng(seed)
    return pairs[np.sort(rng.choice(len(pairs), size=cap, replace=False))]


def init_state(config: TrainConfig, store: TripleStore, out_dir: T.Optional[Path] = None) -> TrainState:
    config.validate()
    model = generate_model(config, store.num_entities, store.num_relations, store.num_types)
    optimizer = build_optimizer('SparseDenseAdam', {'params': model.parameters(), 'lr': config.lr})
    iterators = build_iterators(store, config.entity_batch, config.type_batch, config.neg_size, config.seed)
    for phase, it in iterators.items():
        if it is None:
            logger.warning('No training records for phase %s; its steps will be skipped', phase)
    return TrainState(config, model, optimizer, iterators, out_dir)


def run_training(
    config: TrainConfig, store: TripleStore, out_dir: T.Optional[T.Union[str, Path]] = None,
    vocab_digests: T.Optional[T.Dict[str, str]] = None, manifest: T.Optional[str] = None,
    logger_: T.Optional[TrainingLogger] = None, progress: bool = True,
) -> T.Tuple[CoreModel, T.Optional[Path]]:
    """
    Train for config.total_steps steps under the alternating schedule. Validation MRR
    on a capped sample of the valid pairs is logged at step 0 and every
    valid_interval steps; checkpoints are written every checkpoint_interval steps and
    at the end. Return the model and the final checkpoint path (None without out_dir).
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    set_threads(config.threads)
    state = init_state(config, store, out_dir)
    model = state.model
    log = logger_ if logger_ is not None else TrainingLogger(out_dir / 'train_log.jsonl' if out_dir else None)
    logger.info('Training %s with %d parameters for %d steps',
                model.kind.value, model.num_parameters(), config.total_steps)

    valid_pairs = _validation_sample(store, config.valid_cap, config.seed)

    def validate() -> T.Optional[float]:
        if len(valid_pairs) == 0:
            return None
        return evaluate_ranking(valid_pairs, model.type_distances, store).mrr

    def checkpoint(name: str) -> T.Optional[Path]:
        if out_dir is None:
            return None
        return save_checkpoint(out_dir / name, model, config, vocab_digests, state.step, manifest)

    try:
        init_mrr = validate()
        if init_mrr is not None:
            log.log_eval(0, init_mrr)

        running_loss = 0.0
        bar_fmt = '{l_bar}{bar}| [{elapsed}<{remaining}{postfix}]'
        with tqdm(desc='Training', total=config.total_steps, leave=True, miniters=1, unit='step',
                  unit_scale=True, bar_format=bar_fmt, position=0, disable=not progress) as progbar:
            while state.step < config.total_steps:
                phase = state.phase
                _, loss = train_step(state, state.next_batch())
                running_loss += loss

                valid_mrr = None
                if state.step % config.valid_interval == 0 or state.step == config.total_steps:
                    valid_mrr = validate()
                log.log_train_loss(state.step, phase, loss, valid_mrr)

                if state.step % config.checkpoint_interval == 0 and state.step < config.total_steps:
                    checkpoint(f'checkpoint_step{state.step}.bin')

                postfix = {'phase': phase.value, 'loss': '%.3g' % (running_loss / state.step)}
                if valid_mrr is not None:
                    postfix['valid_mrr'] = '%.3g' % valid_mrr
                progbar.set_postfix(postfix)
                progbar.update(1)

        final = checkpoint('checkpoint.bin')
    finally:
        if logger_ is None:
            log.close()
    logger.info('Finished training at step %d', state.step)
    return model, final
