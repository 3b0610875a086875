import json
from pathlib import Path

import pytest

from main import main


def write_config(path: Path, **overrides) -> Path:
    config = {
        'model': 'complex', 'k': 4, 'l': 4, 'Ebz': 16, 'Tbz': 16, 'Nsz': 4,
        'alpha1': 1.0, 'gamma1': 3.0, 'eta1': 0.01, 'total_steps': 40,
        'alternation_period': 10, 'checkpoint_interval': 5000, 'valid_cap': 50, 'seed': 0,
    }
    config.update(overrides)
    path.write_text(json.dumps(config))
    return path


def train(data_dir: Path, out: Path, config: Path, *extra: str) -> Path:
    assert main(['train', '--data-dir', str(data_dir), '--config', str(config),
                 '--out', str(out), '--quiet', '--threads', '1', *extra]) == 0
    return out / 'checkpoint.bin'


def test_gen_type_triples_is_reproducible(synthetic_dir: Path, tmp_path: Path):
    for name in ('a.txt', 'b.txt'):
        assert main(['gen-type-triples', '--data-dir', str(synthetic_dir), '--out', str(tmp_path / name)]) == 0
    assert (tmp_path / 'a.txt').read_bytes() == (tmp_path / 'b.txt').read_bytes()
    assert (tmp_path / 'a.txt').stat().st_size > 0


def test_train_is_bit_identical(synthetic_dir: Path, tmp_path: Path):
    config = write_config(tmp_path / 'tiny.json', total_steps=1000, alternation_period=100)
    first = train(synthetic_dir, tmp_path / 'a', config)
    second = train(synthetic_dir, tmp_path / 'b', config)
    assert first.read_bytes() == second.read_bytes()
    assert (tmp_path / 'a' / 'train_log.jsonl').read_text() == (tmp_path / 'b' / 'train_log.jsonl').read_text()

    manifest = json.loads((tmp_path / 'a' / 'manifest.json').read_text())
    assert manifest['seed'] == 0
    assert manifest['checkpoint'] == 'checkpoint.bin'
    assert 'train.txt' in manifest['data_hashes']
    sidecar = json.loads((tmp_path / 'a' / 'checkpoint.json').read_text())
    assert sidecar['step'] == 1000
    assert sidecar['config']['Nsz'] == 4


def test_seed_and_mode_overrides(synthetic_dir: Path, tmp_path: Path):
    config = write_config(tmp_path / 'tiny.json', total_steps=5)
    train(synthetic_dir, tmp_path / 'run', config, '--seed', '3', '--mode', 'rotate')
    saved = json.loads((tmp_path / 'run' / 'config.json').read_text())
    assert saved['seed'] == 3
    assert saved['model'] == 'rotate'


def test_eval_untrained_model(synthetic_dir: Path, tmp_path: Path):
    ckpt = train(synthetic_dir, tmp_path / 'run', write_config(tmp_path / 'c.json', total_steps=0))
    assert main(['eval', '--data-dir', str(synthetic_dir), '--checkpoint', str(ckpt),
                 '--split', 'test', '--quiet']) == 0
    report = json.loads((tmp_path / 'run' / 'report_test.json').read_text())
    # 20 types, so an untrained model ranks near the middle
    assert 0.02 < report['mrr'] < 0.6
    ranks = (tmp_path / 'run' / 'ranks_test.tsv').read_text().splitlines()
    assert len(ranks) == report['n_queries']
    assert ranks[0].split('\t')[0].startswith('e')


def test_predict(synthetic_dir: Path, tmp_path: Path, capsys: pytest.CaptureFixture):
    ckpt = train(synthetic_dir, tmp_path / 'run', write_config(tmp_path / 'c.json'))
    capsys.readouterr()
    assert main(['predict', '--data-dir', str(synthetic_dir), '--checkpoint', str(ckpt),
                 '--entity', 'e0', '--top-n', '3']) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    distances = [float(line.split('\t')[1]) for line in lines]
    assert distances == sorted(distances)
    assert all(line.startswith('t') for line in lines)

    assert main(['predict', '--data-dir', str(synthetic_dir), '--checkpoint', str(ckpt),
                 '--entity', 'nobody']) == 1
    for top_n in ('0', '-1'):
        assert main(['predict', '--data-dir', str(synthetic_dir), '--checkpoint', str(ckpt),
                     '--entity', 'e0', '--top-n', top_n]) == 1
    assert 'top_n' in capsys.readouterr().err


def test_baseline(synthetic_dir: Path, tmp_path: Path, capsys: pytest.CaptureFixture):
    table = tmp_path / 'table.npz'
    for mode in ('sdtype', 'sdtype-cond'):
        assert main(['baseline', '--data-dir', str(synthetic_dir), '--baseline', mode,
                     '--table', str(table), '--out', str(tmp_path / 'out'), '--quiet']) == 0
        report = json.loads((tmp_path / 'out' / f'{mode}_test.json').read_text())
        # relations fix the class of both ends, so the neighborhood is very informative
        assert report['mrr'] > 0.5
    assert table.is_file()
    assert 'MRR' in capsys.readouterr().out


def test_dim_sweep(synthetic_dir: Path, tmp_path: Path):
    config = write_config(tmp_path / 'c.json', total_steps=15)
    assert main(['dim-sweep', '--data-dir', str(synthetic_dir), '--config', str(config),
                 '--dims', '4,6', '--out', str(tmp_path / 'sweep'), '--quiet', '--threads', '1']) == 0
    sweep = json.loads((tmp_path / 'sweep' / 'sweep.json').read_text())
    assert sweep['best_l'] in (4, 6)
    assert set(sweep['reports']) == {'4', '6'}
    assert json.loads((tmp_path / 'sweep' / 'l6' / 'config.json').read_text())['l'] == 6


def test_data_root_from_environment(synthetic_dir: Path, tmp_path: Path, monkeypatch: pytest.MonkeyPatch):
    monkeypatch.setenv('CORE_KGT_DATA', str(synthetic_dir.parent))
    monkeypatch.chdir(tmp_path)
    assert main(['gen-type-triples', '--data-dir', synthetic_dir.name, '--out', str(tmp_path / 'tt.txt')]) == 0


def test_errors_exit_nonzero(toy_dir: Path, synthetic_dir: Path, tmp_path: Path, capsys: pytest.CaptureFixture):
    assert main(['eval', '--data-dir', str(toy_dir), '--checkpoint', str(tmp_path / 'missing.bin')]) == 1
    assert 'error' in capsys.readouterr().err

    # a checkpoint trained on another dataset
    ckpt = train(synthetic_dir, tmp_path / 'run', write_config(tmp_path / 'c.json', total_steps=0))
    capsys.readouterr()
    assert main(['eval', '--data-dir', str(toy_dir), '--checkpoint', str(ckpt), '--quiet']) == 1
    assert 'error' in capsys.readouterr().err

    # header cut off after the magic bytes
    (tmp_path / 'cut.bin').write_bytes(b'CORE1\x01')
    assert main(['eval', '--data-dir', str(toy_dir), '--checkpoint', str(tmp_path / 'cut.bin'), '--quiet']) == 1
    assert 'corrupt header' in capsys.readouterr().err

    bad = write_config(tmp_path / 'bad.json', Nsz=0)
    assert main(['train', '--data-dir', str(toy_dir), '--config', str(bad), '--out', str(tmp_path / 'x')]) == 1

    (tmp_path / 'empty').mkdir()
    assert main(['baseline', '--data-dir', str(tmp_path / 'empty')]) == 1
