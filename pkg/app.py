"""
Command-line front end for the repair toolkit.

Every subcommand prints one JSON envelope on stdout; logs go to stderr and
the rotating log file. Exit status is 0 on success, 1 when the toolkit
rejects the input or cannot repair, 2 on anything unexpected.

    python app.py check --net N.nnet --props P.json
    python app.py repair finetune --net N.nnet --props P.json --out fixed.nnet --report R.json
    python app.py repair retrain --net N.nnet --props P.json --out fixed.nnet
    python app.py localize --net N.nnet --props P.json --mode exact --out R.csv
    python app.py synth --topology 5,50,50,5 --activation tanh --rate 0.1 --out planted.nnet
    python app.py fetch --prev 2 --tau 9 --out N_2_9.nnet
    python app.py sweep alpha --net N.nnet --props P.json --values 0.2,0.4,0.6,0.8 --out alpha.csv
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

import charts
import experiments
from src.config import DEFAULT_SEED, get_settings
from src.data_loader import DataLoader
from src.evaluation import json_default
from src.exceptions import ConfigError, RepairError
from src.finetuner import FinetuneConfig, fine_tune
from src.localizer import MODES, localize, select_top
from src.logger import setup_logger
from src.network import ActivationKind, Network
from src.properties import InputDomain, PropertySpec, normalize_spec, spec_set_satisfied
from src.pso import SwarmConfig
from src.retrainer import RetrainConfig, retrain_repair
from src.sampler import as_seed_sequence, collect, sample_uniform
from src.synthetic import PlantedBugSpec, make_buggy
from src.utils.response_normalizer import normalize_exception, success_response

logger = logging.getLogger('src.app')

Result = Tuple[str, Dict[str, Any]]


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _load_inputs(args: argparse.Namespace) -> Tuple[Network, List[PropertySpec]]:
    loader = DataLoader()
    net = loader.load_network(args.net)
    specs = loader.load_properties(args.props)
    if args.normalize:
        specs = [normalize_spec(s, net) for s in specs]
    return net, specs


def _finetune_config(args: argparse.Namespace) -> FinetuneConfig:
    swarm = SwarmConfig(particles=args.particles, max_iters=args.iters)
    return FinetuneConfig(
        r=args.r,
        alpha=args.alpha,
        beta=1.0 - args.alpha if args.beta is None else args.beta,
        layer_filter=args.layer,
        swarm=swarm,
        drawdown_abort=args.drawdown_abort,
        repair_negatives=args.samples,
        repair_positives=args.samples,
        localization_samples=args.samples,
        test_negatives=args.test_samples,
        test_positives=args.test_samples,
        mode=args.mode,
        class_rule=args.class_rule,
    )


def cmd_check(args: argparse.Namespace) -> Result:
    net, specs = _load_inputs(args)
    evidence = [sample_uniform(spec.pre, args.samples, child)
                for spec, child in zip(specs, as_seed_sequence(args.seed).spawn(len(specs)))]
    verdict = spec_set_satisfied(net, specs, evidence)
    message = 'All properties hold on the samples' if verdict.satisfied else 'Some properties are violated'
    return message, dict(verdict.to_dict(), samples=args.samples, seed=args.seed)


def _write_outputs(args: argparse.Namespace, repaired: Network, report) -> Dict[str, Any]:
    data = report.to_dict()
    if args.out:
        DataLoader.save_network(repaired, args.out)
        data['network_path'] = args.out
    if args.report:
        DataLoader.save_report(report, args.report)
        data['report_path'] = args.report
    return data


def cmd_repair_retrain(args: argparse.Namespace) -> Result:
    net, specs = _load_inputs(args)
    cfg = RetrainConfig(
        alpha=args.alpha,
        beta=1.0 - args.alpha if args.beta is None else args.beta,
        k=args.k,
        norm=args.norm,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        seed=args.seed,
        train_samples=args.samples,
        test_samples=args.test_samples,
        negative_fraction=args.negative_fraction,
        preservation_samples=args.samples,
    )
    repaired, report = retrain_repair(net, specs, cfg, args.seed, args.threads)
    data = _write_outputs(args, repaired, report)
    if args.plot and report.history:
        charts.save_figure(charts.plot_training_history(report.history), args.plot)
    return 'Retraining repair finished', data


def cmd_repair_finetune(args: argparse.Namespace) -> Result:
    net, specs = _load_inputs(args)
    repaired, report = fine_tune(net, specs, _finetune_config(args), args.seed, args.threads)
    data = _write_outputs(args, repaired, report)
    if args.plot and report.history:
        charts.save_figure(charts.plot_swarm_history(report.history), args.plot)
    return 'Fine-tuning repair finished', data


def cmd_localize(args: argparse.Namespace) -> Result:
    net, specs = _load_inputs(args)
    sample_sets = [collect(net, spec, args.samples, min_positives=1, seed=child, threads=args.threads)
                   for spec, child in zip(specs, as_seed_sequence(args.seed).spawn(len(specs)))]
    matrix = localize(net, sample_sets, args.mode, not args.no_normalize_fast, args.threads)
    DataLoader.save_responsibility_csv(matrix, args.out)
    if args.plot:
        charts.save_figure(charts.plot_responsibility(matrix), args.plot)
    selection = select_top(matrix, args.top)
    return 'Responsibility written', {
        'path': args.out,
        'mode': args.mode,
        'layer_sizes': matrix.layer_sizes,
        'violated': [s.spec_id for s in sample_sets if s.has_negatives],
        'top': [dict(n.to_dict(), score=s) for n, s in zip(selection.neurons, selection.scores)],
    }


def cmd_synth(args: argparse.Namespace) -> Result:
    region = None
    if args.region:
        bounds = np.asarray(args.region, dtype=np.float64)
        if bounds.size != 2 * args.topology[0]:
            raise ConfigError(f"--region needs {2 * args.topology[0]} numbers: lowers then uppers")
        region = InputDomain(tuple(bounds[:args.topology[0]]), tuple(bounds[args.topology[0]:]))
    cfg = PlantedBugSpec(topology=tuple(args.topology), activation=ActivationKind.parse(args.activation),
                         rate=args.rate, bug_region=region, seed=args.seed)
    net, spec, oracle = make_buggy(cfg)
    props_out = args.props_out or str(Path(args.out).with_suffix('.json'))
    DataLoader.save_network(net, args.out)
    DataLoader.save_properties([spec], props_out)
    return 'Planted-bug network written', {
        'network_path': args.out,
        'properties_path': props_out,
        'activation': str(cfg.activation),
        'bug_region': oracle.region.to_dict(),
        'violation_rate': oracle.achieved_rate,
    }


def cmd_fetch(args: argparse.Namespace) -> Result:
    net = DataLoader().fetch_acasxu(args.prev, args.tau)
    DataLoader.save_network(net, args.out)
    return 'Network downloaded', {'network_path': args.out, 'layer_sizes': net.layer_sizes,
                                  'parameters': net.parameter_count}


def cmd_sweep(args: argparse.Namespace) -> Result:
    cfg = _finetune_config(args)
    if args.kind == 'activations':
        kinds = [ActivationKind.parse(a) for a in args.activations.split(',')] if args.activations else None
        df = experiments.activation_compatibility(args.topology, args.rate, kinds, cfg, args.seed, args.threads)
        x = 'activation'
    else:
        if not args.net or not args.props:
            raise ConfigError(f"sweep {args.kind} needs --net and --props")
        net, specs = _load_inputs(args)
        if args.kind == 'alpha':
            df = experiments.alpha_sweep(net, specs, args.values or [0.2, 0.4, 0.6, 0.8], cfg,
                                         args.seed, args.threads)
            x = 'alpha'
        elif args.kind == 'neurons':
            if args.layer is None:
                raise ConfigError("sweep neurons needs --layer")
            counts = [int(v) for v in args.values] if args.values else [1, 2, 5, 10]
            df = experiments.neuron_count_sweep(net, specs, args.layer, counts, cfg, args.seed, args.threads)
            x = 'r'
        else:
            df = experiments.layer_sweep(net, specs, args.r, cfg, args.seed, args.threads)
            x = 'layer'
    if args.out:
        df.to_csv(args.out, index=False)
    if args.plot:
        charts.save_figure(charts.plot_sweep(df, x), args.plot)
    return f'Sweep over {x} finished', {'path': args.out, 'rows': df.to_dict(orient='records')}


def _add_io(p: argparse.ArgumentParser, required: bool = True):
    p.add_argument('--net', required=required, help='Network: NNet file path or URL')
    p.add_argument('--props', required=required, help='Property JSON file')


def _add_finetune_knobs(p: argparse.ArgumentParser):
    p.add_argument('--alpha', type=float, default=0.6, help='Weight of the unrepaired share in the fitness')
    p.add_argument('--beta', type=float, default=None, help='Weight of the drawdown, 1 - alpha by default')
    p.add_argument('--r', type=int, default=10, help='Neurons to repair')
    p.add_argument('--layer', type=int, default=None, help='Repair only this layer (1 = first hidden)')
    p.add_argument('--particles', type=int, default=20)
    p.add_argument('--iters', type=int, default=100)
    p.add_argument('--mode', choices=MODES, default='fast', help='Responsibility computation')
    p.add_argument('--samples', type=int, default=10000, help='Repair-time negatives and positives per property')
    p.add_argument('--test-samples', type=int, default=10000, help='Held-out negatives and positives per property')
    p.add_argument('--drawdown-abort', type=float, default=0.05)
    p.add_argument('--class-rule', choices=['argmax', 'argmin'], default=None,
                   help='Measure drawdown as a change of predicted class')
    p.add_argument('--plot', default=None, help='Write an HTML chart here')


class JsonArgumentParser(argparse.ArgumentParser):
    """Parser whose usage errors become ``ConfigError`` so they reach the JSON envelope."""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = JsonArgumentParser(description='Repair neural networks against property violations')
    parser.add_argument('--seed', type=int, default=DEFAULT_SEED, help='Seed for all sampling and search')
    parser.add_argument('--log-level', default=None, help='Console log level, REPAIR_LOG_LEVEL by default')
    parser.add_argument('--threads', type=int, default=None, help='Worker threads, REPAIR_THREADS by default')
    parser.add_argument('--normalize', action='store_true',
                        help='Properties are in raw units, map them through the NNet normalization')
    sub = parser.add_subparsers(dest='cmd', required=True)

    p = sub.add_parser('check', help='Sampling-based property check')
    _add_io(p)
    p.add_argument('--samples', type=int, default=10000, help='Samples per property')
    p.set_defaults(func=cmd_check)

    repair = sub.add_parser('repair', help='Repair a network').add_subparsers(dest='repair_mode', required=True)
    p = repair.add_parser('retrain', help='Retraining repair')
    _add_io(p)
    p.add_argument('--alpha', type=float, default=0.5, help='Weight of the repair loss')
    p.add_argument('--beta', type=float, default=None, help='Weight of the preservation loss, 1 - alpha by default')
    p.add_argument('--k', type=int, default=5, help='Positive outputs averaged per corrected label')
    p.add_argument('--norm', type=int, choices=[1, 2], default=2, help='Loss distance')
    p.add_argument('--lr', type=float, default=1e-3)
    p.add_argument('--batch-size', type=int, default=64)
    p.add_argument('--epochs', type=int, default=200)
    p.add_argument('--samples', type=int, default=10000, help='Training samples')
    p.add_argument('--test-samples', type=int, default=5000)
    p.add_argument('--negative-fraction', type=float, default=0.1)
    p.add_argument('--out', default=None, help='Repaired NNet file')
    p.add_argument('--report', default=None, help='Report JSON file')
    p.add_argument('--plot', default=None, help='Write an HTML chart here')
    p.set_defaults(func=cmd_repair_retrain)

    p = repair.add_parser('finetune', help='Fine-tuning repair')
    _add_io(p)
    _add_finetune_knobs(p)
    p.add_argument('--out', default=None, help='Repaired NNet file')
    p.add_argument('--report', default=None, help='Report JSON file')
    p.set_defaults(func=cmd_repair_finetune)

    p = sub.add_parser('localize', help='Write the responsibility matrix')
    _add_io(p)
    p.add_argument('--samples', type=int, default=10000, help='Samples per property')
    p.add_argument('--mode', choices=MODES, default='fast')
    p.add_argument('--no-normalize-fast', action='store_true',
                   help='Use raw sums in fast mode even when set sizes differ')
    p.add_argument('--top', type=int, default=10, help='Neurons listed in the output')
    p.add_argument('--out', required=True, help='Responsibility CSV file')
    p.add_argument('--plot', default=None, help='Write an HTML heatmap here')
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser('synth', help='Build a network with a planted bug')
    p.add_argument('--topology', type=_int_list, default=[5, 50, 50, 5])
    p.add_argument('--activation', default='relu', help='relu, tanh, leaky_relu:A or elu:A')
    p.add_argument('--rate', type=float, default=0.1, help='Target violation rate')
    p.add_argument('--region', type=_float_list, default=None, help='Bug box: lowers then uppers')
    p.add_argument('--out', required=True, help='NNet file')
    p.add_argument('--props-out', default=None, help='Property JSON, next to --out by default')
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('fetch', help='Download a public ACAS Xu network')
    p.add_argument('--prev', type=int, required=True, help='Previous advisory index, 1..5')
    p.add_argument('--tau', type=int, required=True, help='Time-to-loss-of-separation index, 1..9')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser('sweep', help='Fine-tuning parameter sweeps')
    p.add_argument('kind', choices=experiments.SWEEPS)
    _add_io(p, required=False)
    _add_finetune_knobs(p)
    p.add_argument('--values', type=_float_list, default=None, help='Alphas or neuron counts')
    p.add_argument('--topology', type=_int_list, default=[5, 50, 50, 5], help='Planted networks (activations)')
    p.add_argument('--rate', type=float, default=0.1, help='Planted violation rate (activations)')
    p.add_argument('--activations', default=None, help='Comma-separated activations (activations)')
    p.add_argument('--out', default=None, help='Results CSV')
    p.set_defaults(func=cmd_sweep)
    return parser


def _emit(envelope: Dict[str, Any]):
    print(json.dumps(envelope, indent=2, default=json_default))


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        settings = get_settings()
        args.threads = args.threads or settings.threads
        if args.threads < 1:
            raise ConfigError(f"--threads must be positive, got {args.threads}")
        for name in ('src', 'experiments'):
            setup_logger(name, settings.log_dir, args.log_level or settings.log_level)
        message, data = args.func(args)
    except RepairError as e:
        logger.error(f"{type(e).__name__}: {e}")
        _emit(normalize_exception(e))
        return 1
    except Exception as e:
        logger.exception("Unexpected failure")
        _emit(normalize_exception(e))
        return 2
    _emit(success_response(message, data))
    return 0


if __name__ == '__main__':
    sys.exit(main())
