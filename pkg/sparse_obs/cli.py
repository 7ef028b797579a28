"""
Command line interface.

    sparse-obs gen-graph --n 100 --alpha 0.5 --gamma 2 --seed 1 --out g.edges
    sparse-obs sample-world --graph g.edges --model m.json --seed 2 --out w.json
    sparse-obs oracle --graph g.edges --model m.json --world w.json --out marginals.csv
    sparse-obs bp --graph g.edges --model m.json --seed 7 --out marginals.csv
    sparse-obs de --model m.json --gamma 2 --alpha 0.5 --n-pop 10000 --iters 30 --seed 3 --out history.csv
    sparse-obs exp-correlation --config c.json [--out PATH] [--seed N] [--threads N]

Exit codes: 0 on success, 1 on validation errors, 2 on runtime failures.
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from sparse_obs.bp import INIT_PRIOR, INIT_UNIFORM, bp_marginals, bp_run
from sparse_obs.config import config_from_dict, load_config
from sparse_obs.density_evolution import de_run
from sparse_obs.errors import (ConfigError, GraphIndexError, InvalidParameterError, ModelValidationError,
                               SparseObsError, UsageError)
from sparse_obs.experiments import run_experiment
from sparse_obs.graph import EnsembleParams, sample_graph
from sparse_obs.io import (dump_messages_csv, load_model, read_edge_list, read_world, write_edge_list,
                           write_history_csv, write_marginals_csv, write_population_csv, write_world)
from sparse_obs.model import sample_world
from sparse_obs.oracle import ExactPosterior
from sparse_obs.results import build_manifest, manifest_path, write_manifest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

EXPERIMENT_COMMANDS = {
    'exp-correlation': 'correlation_decay',
    'exp-mutual-info': 'mutual_info_sum',
    'exp-overlap': 'overlap_variance',
    'exp-bp-vs-exact': 'bp_vs_exact',
    'exp-de-match': 'de_match',
    'exp-entropy-identity': 'entropy_identity',
    'exp-graph-stats': 'graph_stats',
}

VALIDATION_ERRORS = (ConfigError, ModelValidationError, InvalidParameterError, GraphIndexError, UsageError,
                     json.JSONDecodeError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='sparse-obs', description='Sparse observation systems on random factor graphs.')
    parser.add_argument('--verbose', '-v', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True

    p = sub.add_parser('gen-graph', help='sample a graph from the G(n, alpha n, gamma/n) ensemble')
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--alpha', type=float, required=True)
    p.add_argument('--gamma', type=float, required=True)
    p.add_argument('--seed', type=_non_negative_int, default=0)
    p.add_argument('--out', help='edge list path (stdout if omitted)')

    p = sub.add_parser('sample-world', help='sample hidden symbols and observations on a graph')
    p.add_argument('--graph', required=True)
    p.add_argument('--model', required=True)
    p.add_argument('--theta', type=float, help='reveal probability, overriding the model')
    p.add_argument('--seed', type=_non_negative_int, default=0)
    p.add_argument('--out')

    p = sub.add_parser('oracle', help='exact marginals by enumeration')
    p.add_argument('--graph', required=True)
    p.add_argument('--model', required=True)
    p.add_argument('--world', required=True)
    p.add_argument('--out')

    p = sub.add_parser('bp', help='belief propagation marginals')
    p.add_argument('--graph', required=True)
    p.add_argument('--model', required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--world', help='world JSON')
    source.add_argument('--seed', type=_non_negative_int, help='sample the world from this seed')
    p.add_argument('--theta', type=float)
    p.add_argument('--init', choices=(INIT_PRIOR, INIT_UNIFORM), default=INIT_PRIOR)
    p.add_argument('--damping', type=float, default=0.0)
    p.add_argument('--tol', type=float, default=1e-12)
    p.add_argument('--max-iter', type=int, default=200)
    p.add_argument('--messages-out', help='debug dump of all messages')
    p.add_argument('--out')

    p = sub.add_parser('de', help='density evolution by population dynamics')
    p.add_argument('--model', required=True)
    p.add_argument('--gamma', type=float, required=True)
    p.add_argument('--alpha', type=float, required=True)
    p.add_argument('--theta', type=float)
    p.add_argument('--n-pop', type=int, default=10000)
    p.add_argument('--iters', type=int, default=30)
    p.add_argument('--tol', type=float, default=0.02)
    p.add_argument('--seed', type=_non_negative_int, default=0)
    p.add_argument('--threads', type=int, default=1)
    p.add_argument('--population-out')
    p.add_argument('--out', help='history CSV')

    for command, experiment in EXPERIMENT_COMMANDS.items():
        p = sub.add_parser(command, help=f'run the {experiment} experiment')
        p.add_argument('--config', help='experiment config or run manifest (packaged defaults if omitted)')
        p.add_argument('--out')
        p.add_argument('--seed', type=_non_negative_int)
        p.add_argument('--threads', type=int)
        p.set_defaults(experiment=experiment)
    return parser


def _model(args):
    model = load_model(args.model)
    if getattr(args, 'theta', None) is not None:
        model = model.with_theta(args.theta)
    return model


def cmd_gen_graph(args) -> None:
    G = sample_graph(EnsembleParams(args.n, args.alpha, args.gamma), args.seed)
    write_edge_list(args.out, G)


def cmd_sample_world(args) -> None:
    G = read_edge_list(args.graph)
    world = sample_world(G, _model(args), args.seed)
    write_world(args.out, world)


def cmd_oracle(args) -> None:
    G = read_edge_list(args.graph)
    marginals = ExactPosterior(G, _model(args), read_world(args.world)).marginals()
    write_marginals_csv(args.out, marginals)


def cmd_bp(args) -> None:
    G = read_edge_list(args.graph)
    model = _model(args)
    world = read_world(args.world) if args.world else sample_world(G, model, args.seed)
    result = bp_run(G, model, world, init=args.init, damping=args.damping, tol=args.tol, max_iter=args.max_iter)
    if not result.converged:
        print(f"sparse-obs: BP did not converge after {result.iters} sweeps (residual {result.residual:.3e}).",
              file=sys.stderr)
    marginals = bp_marginals(G, model, world, result.messages)
    write_marginals_csv(args.out, marginals)
    if args.messages_out:
        dump_messages_csv(args.messages_out, result.messages)


def cmd_de(args) -> None:
    pop, history = de_run(_model(args), args.n_pop, args.iters, args.seed, gamma=args.gamma, alpha=args.alpha,
                          tol=args.tol, threads=args.threads)
    write_history_csv(args.out, history)
    if args.population_out:
        write_population_csv(args.population_out, pop)


def cmd_experiment(args) -> None:
    if args.config:
        cfg = load_config(args.config, args.experiment)
    else:
        cfg = config_from_dict({'experiment': args.experiment}, args.experiment)
    if args.out is not None:
        cfg.output = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    cfg.validate()
    logger.info("Running %s, output %s", cfg.experiment, cfg.output)
    table = run_experiment(cfg)
    table.write_csv(cfg.output)
    write_manifest(manifest_path(cfg.output), build_manifest(cfg.to_dict(), seeds=[cfg.seed]))


COMMANDS = {
    'gen-graph': cmd_gen_graph,
    'sample-world': cmd_sample_world,
    'oracle': cmd_oracle,
    'bp': cmd_bp,
    'de': cmd_de,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(f"sparse-obs: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    command = COMMANDS.get(args.command, cmd_experiment)
    try:
        command(args)
    except VALIDATION_ERRORS as err:
        print(f"sparse-obs: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SparseObsError, OSError) as err:
        print(f"sparse-obs: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as err:
        logger.exception("Unexpected failure")
        print(f"sparse-obs: unexpected error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
