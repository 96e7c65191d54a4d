"""
Command-line entry point for training, benchmarks and analyses.

Subcommands:
    train            Train a GCN on a dataset (files or synthetic)
    bench-spmm       Time the staged SpMM alone and export its timeline
    partition-stats  Nonzero balance of a partition (original/random/degree order)
    cost-model       Closed-form 1D vs 1.5D communication time
    synth            Generate and save a synthetic dataset
    density-study    Epoch time vs average degree for several worker counts

Standard output carries only the metrics stream (one JSON object per line);
banners and the run log go to standard error.

Defaults for --workers, --seed, --dtype and the output directory can be set in
a .env file (MGGCN_WORKERS, MGGCN_SEED, MGGCN_DTYPE, MGGCN_OUTPUT_DIR).
"""

import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import argparse
import json
import time
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

from src.collectives import DeviceGroup, audit_timeline
from src.cost_model import STRATEGIES, Topology, UnsupportedStrategyError, cost_model
from src.data_loader import GraphDataLoader
from src.data_profiler import RunProfiler
from src.dense_core import DenseMatrix
from src.dist_spmm import DistSpmmPlan, run_staged_spmm, stage_records
from src.gcn_model import ConfigError, GcnConfig
from src.partitioner import (balance_stats, degree_sorted_permutation, random_permutation,
                             tile_rows, uniform_partition)
from src.sparse_core import normalize_in_degree, transpose
from src.synth_graph import synth_community, synth_graph
from src.trainer import TrainingDriver, load_config


def banner(title: str):
    print(f"\n{'='*60}\n{title}\n{'='*60}", file=sys.stderr)


def emit(record: dict):
    print(json.dumps(record), flush=True)


def output_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_input(args):
    """Dataset from --graph/--features/--labels or a synthetic power-law graph."""
    if args.graph:
        if not (args.features and args.labels):
            raise SystemExit("--graph needs --features and --labels")
        loader = GraphDataLoader(dtype=args.dtype)
        return loader.load_dataset(args.graph, args.features, args.labels, args.masks,
                                   self_loops=args.self_loops)
    return synth_graph(args.synth_n, args.synth_degree, args.synth_exponent, args.seed,
                       feature_dim=args.synth_features, num_classes=args.synth_classes,
                       dtype=args.dtype)


def build_config(args, dataset) -> GcnConfig:
    values = load_config(args.config).to_dict() if args.config else {
        'layer_dims': [dataset.features.cols] + list(args.hidden) + [max(dataset.num_classes, 2)],
    }
    overrides = {'seed': args.seed, 'dtype': args.dtype}
    if args.epochs is not None:
        overrides['epochs'] = args.epochs
    for flag, key in (('permute', 'permute'), ('skip_first_spmm', 'skip_first_backward_spmm'),
                      ('order_swap', 'order_swap')):
        if getattr(args, flag):
            overrides[key] = True
    if args.overlap is not None:
        overrides['overlap'] = args.overlap
    values.update(overrides)
    return GcnConfig.from_dict(values)


def cmd_train(args):
    banner('GCN TRAINING')
    dataset = load_input(args)
    cfg = build_config(args, dataset)
    driver = TrainingDriver()
    result = driver.train(cfg, dataset, args.workers, args.link_delay_ns_per_byte,
                          checkpoint=args.checkpoint)
    for line in result.metrics_lines():
        print(line, flush=True)

    out = output_dir(args)
    if args.timeline:
        result.group.export_timeline(args.timeline)
    if args.breakdown and result.breakdown is not None:
        result.breakdown.to_json(args.breakdown)
    driver.get_run_log().to_csv(out / 'run_log.csv', index=False)
    if result.breakdown is not None:
        print(result.breakdown.to_text(), file=sys.stderr)
    emit({'summary': True, 'final_loss': result.losses[-1] if result.losses else None,
          'final_accuracy': result.records[-1].accuracy if result.records else None,
          'weights_identical': result.weights_identical,
          'bytes_broadcast': result.group.bytes_broadcast})


def _bench_worker(comm, plan, blocks, overlap, stall_s, repeat):
    p = plan.p
    width = blocks[comm.rank].shape[1]
    h_local = DenseMatrix.from_array(blocks[comm.rank])
    out = DenseMatrix.zeros(p.part_size(comm.rank), width)
    bc1 = DenseMatrix.zeros(p.max_part, width)
    bc2 = DenseMatrix.zeros(p.max_part, width)
    dp = DistSpmmPlan(plan, comm.rank, bc1, bc2, overlap=overlap, compute_stall_s=stall_s)
    walls = []
    for _ in range(repeat):
        t0 = time.perf_counter_ns()
        run_staged_spmm(comm, dp, h_local, out)
        walls.append((time.perf_counter_ns() - t0) / 1000.0)
    return walls


def cmd_bench_spmm(args):
    banner('STAGED SPMM BENCHMARK')
    dataset = load_input(args)
    a = dataset.graph
    if args.permute:
        a = dataset.permuted(random_permutation(dataset.n, args.seed)).graph
    p = uniform_partition(a.rows, args.workers)
    plan = tile_rows(transpose(normalize_in_degree(a)), p)
    rng = np.random.default_rng(args.seed)
    h = rng.standard_normal((a.rows, args.width))
    blocks = [h[slice(*p.part_range(i))] for i in range(p.P)]

    group = DeviceGroup(args.workers, args.link_delay_ns_per_byte)
    walls = group.launch(_bench_worker, plan, blocks, bool(args.overlap),
                         args.compute_stall_ms / 1000.0, args.repeat)
    per_run = np.max(np.array(walls), axis=0)
    events = group.timeline.events()
    problems = audit_timeline(events)

    out = output_dir(args)
    timeline_path = Path(args.timeline) if args.timeline else out / 'spmm_timeline.json'
    group.export_timeline(timeline_path)
    stages = stage_records(events)
    stages.to_csv(out / 'spmm_stages.csv', index=False)
    print(RunProfiler(events).stage_table().to_string(), file=sys.stderr)
    emit({'workers': args.workers, 'width': args.width, 'overlap': bool(args.overlap),
          'wall_us': [float(w) for w in per_run], 'mean_wall_us': float(per_run.mean()),
          'bytes_broadcast': group.bytes_broadcast, 'bytes_received': group.bytes_received,
          'timeline': str(timeline_path), 'audit_violations': len(problems)})


def cmd_partition_stats(args):
    banner('PARTITION BALANCE')
    dataset = load_input(args)
    orders = {'original': dataset}
    orders['random'] = dataset.permuted(random_permutation(dataset.n, args.seed))
    orders['degree'] = dataset.permuted(degree_sorted_permutation(dataset.graph))
    p = uniform_partition(dataset.n, args.workers)
    for name in args.orders:
        report = balance_stats(tile_rows(orders[name].graph, p))
        emit({'order': name, **report.to_dict(), **report.extras})


def cmd_cost_model(args):
    banner('COMMUNICATION COST MODEL')
    topo = Topology.preset(args.topology, args.bandwidth)
    for strategy in ([args.strategy] if args.strategy else STRATEGIES):
        try:
            est = cost_model(args.n, args.d, args.workers, topo, strategy, args.scalar_bytes)
        except UnsupportedStrategyError as exc:
            print(f"Error: {exc}", file=sys.stderr)
            sys.exit(2)
        emit({'topology': topo.kind, 'P': args.workers, **est.to_dict()})


def cmd_synth(args):
    banner('SYNTHETIC DATASET')
    if args.community:
        ds = synth_community(args.synth_n, num_classes=args.synth_classes,
                             avg_degree=args.synth_degree, seed=args.seed, dtype=args.dtype)
    else:
        ds = synth_graph(args.synth_n, args.synth_degree, args.synth_exponent, args.seed,
                         feature_dim=args.synth_features, num_classes=args.synth_classes,
                         dtype=args.dtype)
    loader = GraphDataLoader(dtype=args.dtype)
    paths = loader.save_dataset(ds, output_dir(args))
    info = loader.get_dataset_info(ds)
    emit({**{k: v for k, v in info.items() if k != 'masks'},
          'files': {k: str(v) for k, v in paths.items()}})


def cmd_density_study(args):
    banner('DENSITY STUDY')
    driver = TrainingDriver()
    study = driver.density_study(args.synth_n, args.degrees, args.worker_counts,
                                 epochs=args.epochs or 3, seed=args.seed,
                                 exponent=args.synth_exponent, progress=emit)
    study.to_csv(output_dir(args) / 'density_study.csv', index=False)
    print(study.to_string(index=False), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    load_dotenv()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--workers', type=int, default=int(os.getenv('MGGCN_WORKERS', '1')),
                        help='Number of simulated devices P')
    common.add_argument('--seed', type=int, default=int(os.getenv('MGGCN_SEED', '0')))
    common.add_argument('--dtype', choices=['f32', 'f64'], default=os.getenv('MGGCN_DTYPE', 'f64'))
    common.add_argument('--permute', action='store_true', help='Random vertex permutation')
    common.add_argument('--overlap', dest='overlap', action='store_true', default=None,
                        help='Overlap broadcasts with SpMM stages')
    common.add_argument('--no-overlap', dest='overlap', action='store_false')
    common.add_argument('--skip-first-spmm', action='store_true',
                        help="Skip layer 0's backward SpMM")
    common.add_argument('--order-swap', action='store_true', help='SpMM before GeMM when widening')
    common.add_argument('--link-delay-ns-per-byte', type=float, default=None)
    common.add_argument('--timeline', type=str, default=None, help='Timeline JSON output')
    common.add_argument('--breakdown', type=str, default=None, help='Breakdown JSON output')
    common.add_argument('--output-dir', type=str, default=os.getenv('MGGCN_OUTPUT_DIR', 'reports'))
    common.add_argument('--epochs', type=int, default=None)

    source = argparse.ArgumentParser(add_help=False)
    source.add_argument('--graph', type=str, help='Matrix Market or edge-list file')
    source.add_argument('--features', type=str, help='MGDM or CSV features')
    source.add_argument('--labels', type=str, help='One integer label per line')
    source.add_argument('--masks', type=str, default=None, help='vertex,split CSV')
    source.add_argument('--self-loops', action='store_true', help='Train on A + I')
    source.add_argument('--synth-n', type=int, default=2000)
    source.add_argument('--synth-degree', type=float, default=8.0)
    source.add_argument('--synth-exponent', type=float, default=0.5)
    source.add_argument('--synth-features', type=int, default=16)
    source.add_argument('--synth-classes', type=int, default=4)

    parser = argparse.ArgumentParser(description='Multi-device full-batch GCN training')
    sub = parser.add_subparsers(dest='command', required=True)

    p_train = sub.add_parser('train', parents=[common, source], help='Train a GCN')
    p_train.add_argument('--config', type=str, default=None, help='Run configuration JSON')
    p_train.add_argument('--hidden', type=int, nargs='*', default=[16],
                         help='Hidden widths when no config is given')
    p_train.add_argument('--checkpoint', type=str, default=None)
    p_train.set_defaults(func=cmd_train)

    p_bench = sub.add_parser('bench-spmm', parents=[common, source], help='Benchmark staged SpMM')
    p_bench.add_argument('--width', type=int, default=16)
    p_bench.add_argument('--repeat', type=int, default=3)
    p_bench.add_argument('--compute-stall-ms', type=float, default=0.0)
    p_bench.set_defaults(func=cmd_bench_spmm)

    p_part = sub.add_parser('partition-stats', parents=[common, source], help='Tile nnz balance')
    p_part.add_argument('--orders', nargs='+', choices=['original', 'random', 'degree'],
                        default=['original', 'random'])
    p_part.set_defaults(func=cmd_partition_stats)

    p_cost = sub.add_parser('cost-model', parents=[common], help='1D vs 1.5D communication time')
    p_cost.add_argument('--n', type=int, required=True)
    p_cost.add_argument('--d', type=int, required=True)
    p_cost.add_argument('--topology', choices=['asymmetric-6-link', 'switched-12-link'],
                        default='asymmetric-6-link')
    p_cost.add_argument('--strategy', choices=list(STRATEGIES), default=None)
    p_cost.add_argument('--bandwidth', type=float, default=None, help='Link bandwidth in bytes/s')
    p_cost.add_argument('--scalar-bytes', type=int, default=4)
    p_cost.set_defaults(func=cmd_cost_model)

    p_synth = sub.add_parser('synth', parents=[common, source], help='Write a synthetic dataset')
    p_synth.add_argument('--community', action='store_true', help='Homophilous community graph')
    p_synth.set_defaults(func=cmd_synth)

    p_density = sub.add_parser('density-study', parents=[common, source], help='Epoch time vs degree')
    p_density.add_argument('--degrees', type=float, nargs='+', default=[8, 32, 128])
    p_density.add_argument('--worker-counts', type=int, nargs='+', default=[1, 2, 4])
    p_density.set_defaults(func=cmd_density_study)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (FileNotFoundError, ConfigError, ValueError, MemoryError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(1)
    banner('DONE')


if __name__ == "__main__":
    main()
