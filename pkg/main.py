
import argparse
import logging
import sys
import typing as T
from pathlib import Path

from baseline import MODES, ConditionalTypeTable, evaluate_baseline, fit
from dataset.data_generation import export_type_triples
from dataset.data_utils import DatasetError, DatasetSchema, load_dataset
from embedders.embedding import ModelKind
from embedders.generator import TrainConfig
from embedders.util import CheckpointError, load_checkpoint
from evaluate import evaluate, predict_types
from model_search import SweepPipeline
from train import NonFiniteLossError, run_training
from utils import finish_manifest, resolve_data_dir, set_threads, write_manifest

logger = logging.getLogger('core_kgt')


def _load_config(args: argparse.Namespace) -> TrainConfig:
    config = TrainConfig.load(args.config)
    if getattr(args, 'mode', None):
        config.model_kind = args.mode
    if getattr(args, 'seed', None) is not None:
        config.seed = args.seed
    if getattr(args, 'threads', None) is not None:
        config.threads = args.threads
    return config.validate()


def cmd_gen_type_triples(args: argparse.Namespace) -> int:
    data_dir = resolve_data_dir(args.data_dir)
    schema = DatasetSchema(type_triples_file='')
    store, vocabs = load_dataset(data_dir, schema)
    out = Path(args.out) if args.out else data_dir / 'type_triples.txt'
    export_type_triples(out, store.tt_train, vocabs)
    print(f'{len(store.tt_train)} type triples written to {out}')
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    set_threads(config.threads)
    data_dir = resolve_data_dir(args.data_dir)
    out_dir = Path(args.out) if args.out else Path('runs') / Path(args.config).stem
    out_dir.mkdir(parents=True, exist_ok=True)
    config.dump(out_dir / 'config.json')
    manifest = write_manifest(out_dir / 'manifest.json', config.to_dict(), data_dir)

    store, vocabs = load_dataset(data_dir)
    _, checkpoint = run_training(config, store, out_dir, vocab_digests=vocabs.digests(),
                                 manifest=manifest.name, progress=not args.quiet)
    finish_manifest(manifest, checkpoint=checkpoint.name if checkpoint else None)
    print(f'checkpoint written to {checkpoint}')
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    threads = set_threads(args.threads)
    model, sidecar = load_checkpoint(args.checkpoint)
    store, vocabs = load_dataset(resolve_data_dir(args.data_dir))
    report = evaluate(store.type_pairs(args.split), model, store, sidecar, vocabs.digests(),
                      threads=threads, progress=not args.quiet)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    report.dump(out_dir / f'report_{args.split}.json')
    report.dump_ranks(out_dir / f'ranks_{args.split}.tsv', vocabs)
    print(report.summary())
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    set_threads(args.threads)
    _, vocabs = load_dataset(resolve_data_dir(args.data_dir))
    model, _ = load_checkpoint(args.checkpoint, vocabs.digests())
    if args.entity in vocabs.entities:
        entity = vocabs.entities.encode(args.entity)
    elif args.entity.isdigit():
        entity = int(args.entity)
    else:
        raise KeyError(f'Unknown entity {args.entity!r}')
    for type_id, distance in predict_types(entity, model, args.top_n):
        print(f'{vocabs.types.decode(type_id)}\t{distance:.6f}')
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    threads = set_threads(args.threads)
    store, vocabs = load_dataset(resolve_data_dir(args.data_dir))
    if args.table and Path(args.table).is_file():
        table = ConditionalTypeTable.load(args.table)
    else:
        table = fit(store)
        if args.table:
            table.save(args.table)
    report = evaluate_baseline(store.type_pairs(args.split), store, table, args.baseline,
                               threads=threads, progress=not args.quiet)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.dump(out_dir / f'{args.baseline}_{args.split}.json')
        report.dump_ranks(out_dir / f'{args.baseline}_ranks_{args.split}.tsv', vocabs)
    print(report.summary())
    return 0


def cmd_dim_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args)
    threads = set_threads(config.threads)
    dims = [int(d) for d in args.dims.split(',') if d.strip()]
    if not dims:
        raise ValueError('--dims needs at least one dimension')
    store, vocabs = load_dataset(resolve_data_dir(args.data_dir))
    out_dir = Path(args.out) if args.out else Path('runs') / f'{Path(args.config).stem}_sweep'
    pipeline = SweepPipeline(out_dir, config, dims, store, vocabs, split=args.split, threads=threads)
    reports = pipeline.train(progress=not args.quiet)
    for dim, report in reports.items():
        print(f'l={dim}\t{report.summary()}')
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='CORE entity type prediction')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p: argparse.ArgumentParser, out_help: str) -> None:
        p.add_argument('--data-dir', default=None, help='dataset directory (default: $CORE_KGT_DATA)')
        p.add_argument('--threads', type=int, default=None, help='worker threads (default: all cores)')
        p.add_argument('--out', default=None, help=out_help)
        p.add_argument('--quiet', action='store_true', help='no progress bars')

    p = sub.add_parser('gen-type-triples', help='generate type triples from the train split')
    common(p, 'output file (default: <data-dir>/type_triples.txt)')
    p.set_defaults(func=cmd_gen_type_triples)

    p = sub.add_parser('train', help='train a CORE model')
    common(p, 'run directory (default: runs/<config name>)')
    p.add_argument('--config', required=True, help='JSON config file')
    p.add_argument('--mode', choices=[m.value for m in ModelKind], default=None, help='override model kind')
    p.add_argument('--seed', type=int, default=None, help='override seed')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', help='filtered ranking of a checkpoint')
    common(p, 'report directory (default: next to the checkpoint)')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--split', choices=['valid', 'test'], default='test')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('predict', help='top types for an entity')
    common(p, 'unused')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--entity', required=True, help='entity identifier or integer id')
    p.add_argument('--top-n', type=int, default=3)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser('baseline', help='SDType / SDType-Cond filtered ranking')
    common(p, 'report directory (default: print only)')
    p.add_argument('--baseline', choices=MODES, default='sdtype-cond')
    p.add_argument('--split', choices=['valid', 'test'], default='test')
    p.add_argument('--table', default=None, help='.npz file to reuse or store fitted counts')
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser('dim-sweep', help='train and evaluate one model per type dimension')
    common(p, 'sweep directory (default: runs/<config name>_sweep)')
    p.add_argument('--config', required=True)
    p.add_argument('--dims', default='250,350,550,700', help='comma separated type dimensions')
    p.add_argument('--mode', choices=[m.value for m in ModelKind], default=None)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--split', choices=['valid', 'test'], default='valid')
    p.set_defaults(func=cmd_dim_sweep)
    return parser


def main(argv: T.Optional[T.List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format='%(asctime)s %(levelname)-8s %(name)s: %(message)s',
        level=logging.DEBUG if args.verbose else logging.INFO,
        datefmt='%Y-%m-%d %H:%M:%S',
    )
    try:
        return args.func(args)
    except (DatasetError, CheckpointError, NonFiniteLossError, ValueError, KeyError, OSError) as err:
        print(f'error: {err}', file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
