import json
import struct
from pathlib import Path

import numpy as np
import pytest
import torch

import train
from dataset.data_utils import load_dataset
from embedders.embedding import ModelKind
from embedders.generator import TrainConfig
from embedders.util import CheckpointError, load_checkpoint
from evaluate import evaluate
from train import (
    NonFiniteLossError, Phase, TrainingLogger, build_optimizer, init_state, run_training, schedule, train_step,
)
from tests.conftest import make_store, random_store


def small_config(**overrides) -> TrainConfig:
    values = dict(k=4, l=4, entity_batch=8, type_batch=8, neg_size=4, gamma1=2.0, lr=0.01,
                  total_steps=30, alternation_period=10, checkpoint_interval=1000, seed=0)
    values.update(overrides)
    return TrainConfig(**values)


def snapshot(model):
    return {name: p.detach().clone() for name, p in model.named_parameters()}


def changed(before, model):
    return {name for name, p in model.named_parameters() if not torch.equal(p.detach(), before[name])}


def test_schedule():
    assert schedule(0) == Phase.KGE
    assert schedule(999) == Phase.KGE
    assert schedule(1000) == Phase.REG
    assert schedule(1999) == Phase.REG
    assert schedule(2000) == Phase.TPE
    assert schedule(3000) == Phase.KGE
    assert schedule(7, period=3) == Phase.REG
    with pytest.raises(ValueError):
        schedule(-1)


def test_schedule_warmup():
    assert schedule(1500, warmup=2000) == Phase.KGE
    assert schedule(2000, warmup=2000) == Phase.KGE
    assert schedule(3000, warmup=2000) == Phase.REG


@pytest.mark.parametrize('kind', [m.value for m in ModelKind])
def test_each_phase_touches_only_its_parameters(kind):
    state = init_state(small_config(model_kind=kind, alternation_period=1), random_store(0))
    regression = {'regression.a_rr', 'regression.a_ir', 'regression.a_ri', 'regression.a_ii'}
    allowed = {
        Phase.KGE: {'entity_embedding.weight', 'relation_embedding.weight'},
        Phase.REG: regression | {'type_embedding.weight'},
        Phase.TPE: {'type_embedding.weight', 'type_relation_embedding.weight'},
    }
    for expected_phase in (Phase.KGE, Phase.REG, Phase.TPE):
        assert state.phase == expected_phase
        before = snapshot(state.model)
        state, loss = train_step(state, state.next_batch())
        assert loss > 0
        moved = changed(before, state.model)
        assert moved and moved <= allowed[expected_phase]


def test_entity_table_frozen_during_regression():
    state = init_state(small_config(warmup_steps=0, alternation_period=1), random_store(1))
    state, _ = train_step(state, state.next_batch())
    assert state.phase == Phase.REG
    entity_bytes = state.model.entity_embedding.weight.detach().numpy().tobytes()
    for _ in range(3):
        state.step = 1
        state, _ = train_step(state, state.next_batch())
    assert state.model.entity_embedding.weight.detach().numpy().tobytes() == entity_bytes


def test_rows_outside_batch_unchanged():
    state = init_state(small_config(entity_batch=2, neg_size=2), random_store(2))
    batch = state.next_batch()
    touched = set(batch['positive'][:, [0, 2]].reshape(-1).tolist())
    touched |= set(batch['negative'][..., [0, 2]].reshape(-1).tolist())
    before = state.model.entity_embedding.weight.detach().clone()
    train_step(state, batch)
    after = state.model.entity_embedding.weight.detach()
    for row in range(len(before)):
        if row not in touched:
            assert torch.equal(after[row], before[row])


def test_zero_learning_rate_keeps_parameters():
    state = init_state(small_config(lr=0.0, alternation_period=2), random_store(3))
    before = snapshot(state.model)
    for _ in range(6):
        train_step(state, state.next_batch())
    assert not changed(before, state.model)


def test_rotate_relations_stay_unit_modulus():
    state = init_state(small_config(model_kind='rotate', lr=0.1, alternation_period=5), random_store(4))
    for _ in range(15):
        train_step(state, state.next_batch())
    for table in (state.model.relation_embedding, state.model.type_relation_embedding):
        assert torch.allclose(table.all().abs(), torch.ones(table.rows, table.dim, dtype=torch.float64), atol=1e-9)


def test_empty_phase_is_skipped():
    store = make_store([(0, 0, 1), (1, 0, 2)], {'train': []}, 3, 1, 1)
    state = init_state(small_config(alternation_period=1), store)
    assert state.iterators['REG'] is None and state.iterators['TPE'] is None
    losses = [train_step(state, state.next_batch())[1] for _ in range(6)]
    assert losses[1] == losses[2] == losses[4] == losses[5] == 0.0
    assert losses[0] > 0 and losses[3] > 0
    assert state.step == 6


def test_nonfinite_loss_is_reported(tmp_path: Path):
    state = init_state(small_config(), random_store(5), out_dir=tmp_path)
    with torch.no_grad():
        state.model.entity_embedding.weight.fill_(float('nan'))
    with pytest.raises(NonFiniteLossError, match='step 0'):
        train_step(state, state.next_batch())
    assert (tmp_path / 'nonfinite_step0.json').is_file()


def test_kge_loss_decreases_on_toy_graph():
    store = make_store([(0, 0, 1), (1, 0, 2), (2, 1, 0)], {'train': [(0, 0), (1, 1), (2, 0)]}, 3, 2, 2)
    config = small_config(entity_batch=3, neg_size=2, lr=0.05, total_steps=100, alternation_period=1000)
    log = TrainingLogger()
    run_training(config, store, logger_=log, progress=False)
    losses = log.losses
    assert len(losses) == 100
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_training_is_deterministic(tmp_path: Path):
    store = random_store(6)
    runs = []
    for name in ('a', 'b'):
        log = TrainingLogger()
        _, ckpt = run_training(small_config(total_steps=100), store, tmp_path / name, logger_=log, progress=False)
        runs.append((log.losses, ckpt.read_bytes()))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]

    log = TrainingLogger()
    run_training(small_config(total_steps=100, seed=1), store, logger_=log, progress=False)
    assert log.losses != runs[0][0]


def test_zero_steps_writes_initial_checkpoint(tmp_path: Path):
    store = random_store(7)
    config = small_config(total_steps=0)
    model, ckpt = run_training(config, store, tmp_path, vocab_digests={'types': 'abc'}, progress=False)
    assert ckpt == tmp_path / 'checkpoint.bin'
    loaded, sidecar = load_checkpoint(ckpt)
    assert sidecar['step'] == 0
    assert sidecar['vocab'] == {'types': 'abc'}
    for (name, a), (_, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert torch.equal(a, b), name

    log_lines = (tmp_path / 'train_log.jsonl').read_text().splitlines()
    assert json.loads(log_lines[0])['phase'] == 'init'


def test_periodic_checkpoints_and_validation(tmp_path: Path):
    store = random_store(8)
    config = small_config(total_steps=25, checkpoint_interval=10, valid_interval=10)
    log = TrainingLogger()
    run_training(config, store, tmp_path, logger_=log, progress=False)
    assert (tmp_path / 'checkpoint_step10.bin').is_file()
    assert (tmp_path / 'checkpoint_step20.bin').is_file()
    assert (tmp_path / 'checkpoint.bin').is_file()
    assert [step for step, _ in log.valid_mrrs] == [0, 10, 20, 25]
    assert len(log.losses) == 25

    # one leading validation record, then one record per step
    init, *steps = log.records
    assert init == {'step': 0, 'phase': 'init', 'valid_mrr': log.valid_mrrs[0][1]}
    assert [r['step'] for r in steps] == list(range(1, 26))
    assert all(r['phase'] in ('KGE', 'REG', 'TPE') and 'loss' in r for r in steps)


def test_build_optimizer_falls_back_to_torch():
    params = [torch.nn.Parameter(torch.zeros(2))]
    assert isinstance(build_optimizer('SGD', {'params': params, 'lr': 0.1}), torch.optim.SGD)
    assert type(build_optimizer('SparseDenseAdam', {'params': params})).__name__ == 'SparseDenseAdam'


def test_config_aliases_and_defaults(tmp_path: Path):
    config = TrainConfig.from_dict({'model': 'rotate', 'Ebz': 16, 'Tbz': 32, 'Nsz': 8, 'eta1': 0.1,
                                    'gamma1': 3.0, 'alpha1': 0.5, 'gamma2': 5.0})
    assert config.kind == ModelKind.ROTATE
    assert (config.entity_batch, config.type_batch, config.neg_size, config.lr) == (16, 32, 8, 0.1)
    assert config.loss_config('KGE') == (3.0, 0.5)
    assert config.loss_config('TPE') == (5.0, 0.5)
    assert config.loss_config('REG') == (3.0, 0.5)
    assert config.valid_interval == config.alternation_period

    config.dump(tmp_path / 'c.json')
    assert json.loads((tmp_path / 'c.json').read_text())['Ebz'] == 16
    assert TrainConfig.load(tmp_path / 'c.json') == config


def test_config_validation():
    with pytest.raises(ValueError, match='Unknown config key'):
        TrainConfig.from_dict({'batch': 3})
    with pytest.raises(ValueError, match='model'):
        TrainConfig(model_kind='transe').validate()
    with pytest.raises(ValueError, match='gamma'):
        TrainConfig(gamma1=0.0).validate()
    with pytest.raises(ValueError, match='neg_size'):
        TrainConfig(neg_size=0).validate()


@pytest.mark.slow
def test_synthetic_recovers_types(synthetic_dir: Path, tmp_path: Path):
    store, vocabs = load_dataset(synthetic_dir)
    config = TrainConfig.load(Path(__file__).parent.parent / 'configs' / 'synthetic_complex.json')
    log = TrainingLogger()
    model, _ = run_training(config, store, tmp_path, vocab_digests=vocabs.digests(), logger_=log, progress=False)
    report = evaluate(store.tp_test, model, store)
    assert report.hits[3] >= 0.8
    assert report.mrr >= 0.6
    mrrs = [m for _, m in log.valid_mrrs]
    assert mrrs[-1] > mrrs[0]


def test_checkpoint_rejects_foreign_files(tmp_path: Path):
    _, ckpt = run_training(small_config(total_steps=0), random_store(9), tmp_path,
                           vocab_digests={'types': 'abc'}, progress=False)
    with pytest.raises(CheckpointError, match='types'):
        load_checkpoint(ckpt, {'types': 'xyz'})
    load_checkpoint(ckpt, {'types': 'abc'})

    (tmp_path / 'junk.bin').write_bytes(b'not a checkpoint')
    with pytest.raises(CheckpointError, match='magic'):
        load_checkpoint(tmp_path / 'junk.bin')
    (tmp_path / 'cut.bin').write_bytes(b'CORE1\x01')
    with pytest.raises(CheckpointError, match='corrupt header'):
        load_checkpoint(tmp_path / 'cut.bin')
    (tmp_path / 'long.bin').write_bytes(b'CORE1' + struct.pack('<I', 1000) + b'{}')
    with pytest.raises(CheckpointError, match='corrupt header'):
        load_checkpoint(tmp_path / 'long.bin')
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / 'absent.bin')


def test_phase_parameters_cover_what_moves():
    state = init_state(small_config(alternation_period=1), random_store(12))
    names = {id(p): name for name, p in state.model.named_parameters()}
    for phase in ('KGE', 'REG', 'TPE'):
        before = snapshot(state.model)
        train_step(state, state.next_batch())
        declared = {names[id(p)] for p in state.model.phase_parameters(phase)}
        assert changed(before, state.model) <= declared
    with pytest.raises(ValueError):
        state.model.phase_parameters('ALL')


def test_gradients_follow_phase_parameters():
    state = init_state(small_config(), random_store(13))
    # a phase that declares nothing trainable cannot receive its gradients
    state.model.phase_parameters = lambda phase: []
    with pytest.raises(RuntimeError, match='does not train'):
        train_step(state, state.next_batch())


def test_log_file_closed_when_training_fails(tmp_path: Path, monkeypatch: pytest.MonkeyPatch):
    closed = []

    class RecordingLogger(TrainingLogger):
        def close(self) -> None:
            closed.append(self.path)
            super().close()

    def failing_step(state, batch):
        raise NonFiniteLossError(f'non-finite loss nan at step {state.step}')

    monkeypatch.setattr(train, 'TrainingLogger', RecordingLogger)
    monkeypatch.setattr(train, 'train_step', failing_step)
    with pytest.raises(NonFiniteLossError):
        run_training(small_config(), random_store(10), tmp_path, progress=False)
    assert closed == [tmp_path / 'train_log.jsonl']
    first = json.loads((tmp_path / 'train_log.jsonl').read_text().splitlines()[0])
    assert first['phase'] == 'init'
