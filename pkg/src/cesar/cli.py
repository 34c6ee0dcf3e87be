"""``cesar`` command line: train, beta, risk, overhead, graph-stats.

Exit codes: 0 ok, 1 runtime failure, 2 configuration error. Files are only
ever written below the output directory, which ``CESAR_OUTPUT_DIR``
overrides.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .analysis import (beta_closed_form, beta_monte_carlo, calibrate_alpha, collusion_risk_sweep,
                       measure_prestep_overhead)
from .config import OUTPUT_ENV, load_config
from .errors import ConfigError
from .metrics import write_csv
from .sparsifier import Method
from .topology import avg_second_degree_size, gen_regular_graph, to_edge_list, view2
from .trainlab import METRIC_COLUMNS, run_experiment

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("cesar")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _floats(text: str) -> list[float]:
    """``0.1,0.5`` or an inclusive range ``start:stop:step``."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise argparse.ArgumentTypeError(f"bad range {text!r}, expected start:stop:step")
        start, stop, step = parts
        count = int(round((stop - start) / step))
        return [round(start + i * step, 12) for i in range(count + 1)]
    return [float(p) for p in text.split(",") if p.strip()]


def _ints(text: str) -> list[int]:
    """``3,6,9`` or an inclusive range ``1-15``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1) if not part.startswith("-") else (part, part)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _safe_path(root: Path, name: str) -> Path:
    target = (root / name).resolve()
    if not target.is_relative_to(root.resolve()):
        raise ConfigError(f"refusing to write {name!r} outside output directory {str(root)!r}")
    return target


def _output_root(args) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or args.output_dir)


def _emit(args, header: Sequence[str], rows: list[tuple]) -> None:
    if args.out:
        path = _safe_path(_output_root(args), args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_csv(path, header, rows)
        log.info("wrote %s", path)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- subcommands -------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    root = cfg.output_path()
    alpha = cfg.resolved_alpha
    log.info("alpha = %.6f (method %s, s = %d)", alpha, cfg.method.value, cfg.masking_requirement)
    t = gen_regular_graph(cfg.n, cfg.k, cfg.graph_seed)
    result = run_experiment(t, cfg.round_config(), cfg.train_config(), cfg.rounds, cfg.eval_every,
                            cfg.seeds, cfg.algorithms)
    root.mkdir(parents=True, exist_ok=True)
    write_csv(_safe_path(root, "metrics.csv"), METRIC_COLUMNS, result.rows())
    result.sink().write_jsonl(_safe_path(root, "trace.jsonl"))
    echo = cfg.echo()
    if result.dpsgd_alpha is not None:
        echo += f"# matched D-PSGD alpha = {result.dpsgd_alpha!r}\n"
    echo += f"# cesar {__version__}\n"
    _safe_path(root, "resolved_config.txt").write_text(echo)
    for alg in cfg.algorithms:
        print(f"{alg.value}: final accuracy {result.final_accuracy(alg):.4f}")
    print(f"alpha = {alpha:.6f}")
    return EXIT_OK


def cmd_beta(args) -> int:
    if (args.alpha is None) == (args.beta_target is None):
        raise ConfigError("give exactly one of --alpha or --beta-target")
    rows = []
    for delta in args.delta:
        for s in args.s:
            if args.beta_target is not None:
                alphas = [calibrate_alpha(b, delta, s) for b in args.beta_target]
            else:
                alphas = args.alpha
            for a in alphas:
                row = (a, delta, s, beta_closed_form(a, delta, s))
                if args.mc:
                    row += beta_monte_carlo(a, delta, s, args.mc, args.seed)
                rows.append(row)
    header = ["alpha", "delta", "s", "beta"] + (["beta_mc", "stderr"] if args.mc else [])
    _emit(args, header, sorted(rows, key=lambda r: (r[1], r[2], r[0])))
    return EXIT_OK


def cmd_risk(args) -> int:
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    rows = collusion_risk_sweep(args.n, args.k, args.n_adv, sorted(set(args.s)), args.trials,
                                args.seed, args.workers)
    _emit(args, ["s", "risk", "stderr"], rows)
    return EXIT_OK


def cmd_overhead(args) -> int:
    if args.trials < 1 or args.d < 1:
        raise ConfigError("--trials and --d must be >= 1")
    if not 0.0 <= args.alpha <= 1.0:
        raise ConfigError(f"--alpha must be in [0, 1], got {args.alpha}")
    rows = measure_prestep_overhead(args.n, sorted(set(args.degrees)), args.alpha, args.d, args.trials,
                                    args.method, args.seed)
    _emit(args, ["degree", "prestep_bytes_per_node", "avg_second_degree", "bytes_per_second_degree_neighbor"],
          [(r.degree, r.prestep_bytes_per_node, r.avg_second_degree, r.bytes_per_second_degree_neighbor)
           for r in rows])
    return EXIT_OK


def cmd_graph_stats(args) -> int:
    path = _safe_path(_output_root(args), args.edges) if args.edges else None
    t = gen_regular_graph(args.n, args.k, args.seed)
    sizes = [len(view2(t, i)) for i in range(t.n)]
    print(f"nodes: {t.n}")
    print(f"edges: {len(t.edges)}")
    print(f"degree: {args.k}")
    print(f"connected: {t.is_connected()}")
    print(f"avg_second_degree: {avg_second_degree_size(t):.4f}")
    print(f"second_degree_range: {min(sizes)}..{max(sizes)}")
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(to_edge_list(t))
        print(f"edge list: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cesar", description="Masked sparse model sharing simulator.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def out_opts(sp):
        sp.add_argument("--out", help="CSV file name inside the output directory (default: stdout)")
        sp.add_argument("--output-dir", default=".", help=f"output directory (env {OUTPUT_ENV} wins)")

    sp = sub.add_parser("train", help="run a training experiment from a config file")
    sp.add_argument("config")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("beta", help="shared-fraction curves")
    sp.add_argument("--alpha", type=_floats)
    sp.add_argument("--beta-target", type=_floats)
    sp.add_argument("--delta", type=_ints, required=True)
    sp.add_argument("--s", type=_ints, default=[1])
    sp.add_argument("--mc", type=int, default=0, help="Monte Carlo trials per row")
    sp.add_argument("--seed", type=int, default=0)
    out_opts(sp)
    sp.set_defaults(func=cmd_beta)

    sp = sub.add_parser("risk", help="collusion risk per masking requirement")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--k", type=int, default=25)
    sp.add_argument("--n-adv", type=int, default=15)
    sp.add_argument("--s", type=_ints, default=list(range(1, 16)))
    sp.add_argument("--trials", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    out_opts(sp)
    sp.set_defaults(func=cmd_risk)

    sp = sub.add_parser("overhead", help="prestep bytes against second-degree neighbourhood size")
    sp.add_argument("--n", type=int, default=96)
    sp.add_argument("--degrees", type=_ints, default=[3, 6, 9, 12])
    sp.add_argument("--alpha", type=float, default=0.4)
    sp.add_argument("--d", type=int, default=330)
    sp.add_argument("--trials", type=int, default=3)
    sp.add_argument("--method", type=Method, default=Method.TOPK, choices=list(Method))
    sp.add_argument("--seed", type=int, default=0)
    out_opts(sp)
    sp.set_defaults(func=cmd_overhead)

    sp = sub.add_parser("graph-stats", help="generate a k-regular graph and summarise it")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--edges", help="write the edge list to this file inside the output directory")
    sp.add_argument("--output-dir", default=".")
    sp.set_defaults(func=cmd_graph_stats)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"cesar: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"cesar: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        log.debug("runtime failure", exc_info=True)
        print(f"cesar: error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
