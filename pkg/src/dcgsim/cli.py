"""Command-line entry point: ``dcgsim run | gen-network | inspect``."""
import argparse
import sys
from pathlib import Path

from . import linalg
from .applications import (
    LocalizationScene,
    barycentric_rows,
    build_localization_rows,
    random_spd_rows,
)
from .errors import DcgError
from .experiment import load_config, run_experiment
from .network import Network, generate_geometric_network, hop_diameter, is_connected
from .solvers import rows_to_dense


def _add_run(sub):
    p = sub.add_parser("run", help="run an experiment")
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--scenario", choices=("localization", "least_squares", "raw_system"))
    p.add_argument("--n", type=int)
    p.add_argument("--dim", type=int, choices=(2, 3))
    p.add_argument("--anchors", type=int)
    p.add_argument("--range", dest="reception_range", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--solvers", help="comma-separated, e.g. dcg,richardson")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--fidelity", choices=("cached", "strict"))
    p.add_argument("--max-rounds", dest="max_rounds", type=int)
    p.add_argument("--matrix", choices=("random", "identity"))
    p.add_argument("--out", dest="output_dir")


def _add_gen(sub):
    p = sub.add_parser("gen-network", help="write a random geometric network as JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, choices=(2, 3), default=2)
    p.add_argument("--range", dest="reception_range", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)


def _add_inspect(sub):
    p = sub.add_parser("inspect", help="summarize a network JSON file")
    p.add_argument("--network", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0, help="seed of the random system on abstract networks")


def cmd_run(args):
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "func")}
    try:
        config = load_config(args.config, overrides)
        report = run_experiment(config)
    except (DcgError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, res in report.results.items():
        speed = "" if res.speedup_vs_baseline is None else f"  speedup {res.speedup_vs_baseline:.1f}x"
        mse = "n/a" if res.final_mse is None else f"{res.final_mse:.3e}"
        print(f"{name:13s} {res.status:12s} rounds {res.rounds_to_converge}  mse {mse}{speed}")
    print(f"artifacts in {config.output_dir}")
    return 0 if report.all_converged else 1


def cmd_gen(args):
    net = generate_geometric_network(args.n, args.dim, args.reception_range, args.seed)
    args.out.write_text(net.to_json())
    print(f"wrote {args.out}: n={net.n} edges={len(net.edges)} connected={is_connected(net)}")
    return 0


def _assembled_system(net, seed):
    """Localization system when the network has positions and every free
    agent can compute barycentric weights, else a random SPD one."""
    note = ""
    if net.positions is not None:
        m = net.dim + 1
        pos = net.position_array()
        dists = {(i, j): float(((pos[i] - pos[j]) ** 2).sum() ** 0.5) for i, j in net.edges}
        scene = LocalizationScene(net=net, anchors=tuple(range(m)), measured_distances=dists)
        try:
            rows, _ = build_localization_rows(scene, barycentric_rows(scene))
            a, _ = rows_to_dense(rows)
            return "localization (first dim + 1 agents as anchors)", a
        except DcgError as exc:
            note = f"; localization unavailable: {type(exc).__name__}: {exc}"
    _, a, _ = random_spd_rows(net, seed)
    return f"random SPD (seed {seed}){note}", a


def cmd_inspect(args):
    net = Network.from_json(args.network.read_text())
    connected = is_connected(net)
    print(f"n = {net.n}")
    print(f"dim = {net.dim}")
    print(f"edges = {len(net.edges)}")
    print(f"connected = {connected}")
    print(f"hop diameter H = {hop_diameter(net) if connected else 'undefined'}")
    try:
        label, a = _assembled_system(net, args.seed)
        ext = linalg.eigen_extremes_spd(a)
        print(f"system = {label}")
        print(f"lambda_min = {ext.lambda_min:.6e}")
        print(f"lambda_max = {ext.lambda_max:.6e}")
    except DcgError as exc:
        print(f"system = unavailable ({type(exc).__name__}: {exc})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="dcgsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_gen(sub)
    _add_inspect(sub)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "gen-network": cmd_gen, "inspect": cmd_inspect}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
