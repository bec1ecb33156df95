"""Command-line harness: ``codednet <command> [options]``.

Every command writes its outputs plus ``manifest.json`` (config hash,
seed, output digests, check results) into the output directory.  Reruns
with the same config and seed produce byte-identical files.

Precedence for options: flag, then environment (CODEDNET_SEED and
CODEDNET_OUT only), then the YAML config, then built-in defaults.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys

import numpy as np
import yaml

from . import acceptance
from . import dist_opt as do
from . import dynmulti as dm
from . import experiments as ex
from . import finmem as fm
from . import simulator as sim
from . import subgraph_opt as so
from .netmodel import _node, parse_hypernet


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise SystemExit(f"config {path}: top level must be a mapping")
    return cfg


def _resolve(args):
    cfg = _load_config(args.config)
    seed = args.seed
    if seed is None and "CODEDNET_SEED" in os.environ:
        seed = int(os.environ["CODEDNET_SEED"])
    if seed is None:
        seed = int(cfg.get("seed", 0))
    out = args.out or os.environ.get("CODEDNET_OUT") or cfg.get("out") or "codednet_out"
    parallel = args.parallel or int(cfg.get("parallel", 1))
    os.makedirs(out, exist_ok=True)
    return cfg, seed, out, parallel


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def write_rows(path, rows, header=None):
    """CSV from row dicts; an empty table yields just the header."""
    header = header or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def _digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(out, command, cfg, seed, outputs, checks):
    man = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "outputs": {os.path.basename(p): _digest(p) for p in outputs},
        "checks": checks,
    }
    path = os.path.join(out, "manifest.json")
    with open(path, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def _read_net(path):
    with open(path) as fh:
        return parse_hypernet(fh.read())


def _arc_costs(net, cfg):
    """Unit costs unless the config maps arc text (e.g. '1 -> 2,3') to a cost."""
    given = {k.replace(" ", ""): float(v) for k, v in (cfg.get("costs") or {}).items()}
    out = {}
    for a in net.arcs:
        key = f"{a.tail}->{','.join(map(str, sorted(a.head, key=str)))}"
        out[a] = given.get(key, 1.0)
    return out


def _nodes(text):
    return [_node(t) for t in str(text).split(",") if t]


# ---------------------------------------------------------------------------


def cmd_sim(args):
    cfg, seed, out, _ = _resolve(args)
    if args.tandem:
        rates = [float(v) for v in args.tandem.split(",")]
        net, z, loss = sim.tandem(rates, cfg.get("loss_p"))
        source, sinks = 1, [len(rates) + 1]
    else:
        net, z, loss = _read_net(args.net)
        source, sinks = _node(args.source), _nodes(args.sinks)
    conf = sim.SimConfig(K=args.K, m=args.m, payload_len=cfg.get("payload_len", 2),
                         traffic=args.traffic, duration=args.duration,
                         stop_on_decode=args.stop_on_decode)
    st = sim.run_session(net, loss, z, sim.Connection(source, sinks, args.rate), conf, seed=seed)
    stats = os.path.join(out, "session.json")
    with open(stats, "w") as fh:
        json.dump(st.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    names, rows = st.rank_rows()
    ranks = os.path.join(out, "ranks.csv")
    write_rows(ranks, [dict(zip(["tau"] + [f"rank_{s}" for s in names], r)) for r in rows],
               ["tau"] + [f"rank_{s}" for s in names])
    print(f"decoded: {st.decoded}")
    write_manifest(out, "sim", cfg, seed, [stats, ranks], {"decoded": st.all_decoded()})
    return 0


def cmd_opt(args):
    cfg, seed, out, _ = _resolve(args)
    net, _, loss = _read_net(args.net)
    spec = so.MulticastSpec(_node(args.source), _nodes(args.sinks), args.rate,
                            _arc_costs(net, cfg))
    if args.variant == "lossless":
        lp = so.build_lossless(net, spec)
    elif args.variant == "lossy":
        lp = so.build_lossy(net, loss, spec)
    else:
        lp = so.build_nested(net, spec)
    sol = so.solve_reference(lp)
    lp_path, sol_path = os.path.join(out, "problem.lp"), os.path.join(out, "solution.json")
    with open(lp_path, "w") as fh:
        fh.write(so.lp_text(lp))
    with open(sol_path, "w") as fh:
        fh.write(so.solution_json(sol) + "\n")
    print(f"{sol.status}: cost {sol.cost:.6g}")
    write_manifest(out, f"opt {args.variant}", cfg, seed, [lp_path, sol_path],
                   {"status": sol.status})
    return 0 if sol.status == "optimal" else 1


def cmd_dist(args):
    cfg, seed, out, _ = _resolve(args)
    if args.method == "subgradient":
        if args.net:
            net, _, _ = _read_net(args.net)
            spec = so.MulticastSpec(_node(args.source), _nodes(args.sinks), args.rate,
                                    _arc_costs(net, cfg))
        else:
            g, s, T = acceptance.energy_instance(args.nodes, args.n_sinks, seed)
            net, spec = g.net, so.MulticastSpec(s, T, 1.0, g.cost)
        tr = do.subgradient(net, spec, args.iters, tol=cfg.get("tol"))
        path = os.path.join(out, "subgradient.csv")
        do.write_trace_csv(path, tr, args.recovery)
        checks = {"final_cost": tr.primal[args.recovery][-1]}
    else:
        net, spec, a = do.layered_instance(seed)
        f = lambda z: a * z ** 2
        df = lambda z: 2 * a * z
        pd = do.PrimalDual(net, spec, args.m, f, df, steps=(args.step,) * 3)
        st, n = pd.run(pd.init(1, np.random.default_rng(seed)), args.iters, tol=1e-12)
        path = os.path.join(out, "primal_dual.json")
        with open(path, "w") as fh:
            json.dump({"rounds": n, "cost": float(pd.cost(st)[0]),
                       "kkt_residual": float(pd.kkt_residual(st)[0])}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        checks = {"kkt_residual": float(pd.kkt_residual(st)[0])}
    write_manifest(out, f"dist {args.method}", cfg, seed, [path], checks)
    return 0


def cmd_finmem(args):
    cfg, seed, out, _ = _resolve(args)
    loss_rows, rate_rows = [], []
    for M in range(1, args.M + 1):
        p = fm.FiniteMemoryParams(args.r, args.eps, M)
        res = fm.simulate_isolated(p, args.q, args.epochs, args.mode,
                                   seed=ex.instance_seed(seed, M))
        loss_rows.append({"M": M, "q": args.q, "loss": res.loss, "delay": res.delay,
                          "bound": fm.loss_upper_bound(p)})
        t = fm.simulate_tandem(args.delta, args.eps, M, args.q, args.epochs,
                               seed=ex.instance_seed(seed, 99, M))
        rate_rows.append({"M": M, "q": args.q, "rate_loss": t.rate_loss,
                          "analytic": fm.tandem_rate_loss(args.delta, args.eps, M)})
    lp, rp = os.path.join(out, "loss.csv"), os.path.join(out, "rate.csv")
    write_rows(lp, loss_rows, ["M", "q", "loss", "delay", "bound"])
    write_rows(rp, rate_rows, ["M", "q", "rate_loss", "analytic"])
    write_manifest(out, "finmem", cfg, seed, [lp, rp], {})
    return 0


def cmd_dyn(args):
    cfg, seed, out, _ = _resolve(args)
    prob = dm.four_node() if args.network == "four_node" else dm.random_dyn_problem(args.nodes, seed)
    proc = dm.MembershipProcess(args.birth, args.death)
    T0 = set(_nodes(args.initial)) if args.initial else {prob.others[-1]}
    res = dm.episode_cost(prob, proc, T0, args.horizon, seed=seed)
    path = os.path.join(out, "episode.csv")
    dm.write_episode_csv(path, res)
    print(f"cost {res.cost:.6g} over {res.epochs} epochs")
    write_manifest(out, "dyn", cfg, seed, [path],
                   {"continuity": res.continuity_ok, "admissible": res.admissible_ok})
    return 0


def cmd_exp(args):
    cfg, seed, out, parallel = _resolve(args)
    if args.instances is not None:
        cfg = {**cfg, "instances": args.instances}
    tables, checks = ex.run_study(args.study, cfg, seed, parallel)
    paths = []
    for name, rows in tables.items():
        p = os.path.join(out, f"{name}.csv")
        write_rows(p, rows, _HEADERS.get(name))
        paths.append(p)
    for k, v in checks.items():
        print(f"check {k}: {v if isinstance(v, str) else ('PASS' if v else 'FAIL')}")
    write_manifest(out, f"exp {args.study}", cfg, seed, paths,
                   {k: (v if isinstance(v, str) else ("PASS" if v else "FAIL"))
                    for k, v in checks.items()})
    return 0 if all(v is True or v == "SKIP" for v in checks.values()) else 1


# fixed headers so that empty tables still carry their columns
_HEADERS = {
    "unicast_means": ["nodes", "instances", *ex.bl.APPROACHES],
    "unicast_instances": ["nodes", "instance", "seed", "source", "sink", *ex.bl.APPROACHES],
    "energy_means": ["nodes", "sinks", "instances", "mip", "coded", "reduction"],
    "energy_instances": ["nodes", "sinks", "instance", "seed", "mip", "coded"],
    "weight_means": ["network", "sinks", "instances", "dst", "coded", "reduction"],
    "weight_instances": ["network", "sinks", "instance", "seed", "dst", "coded"],
    "subgradient_curve": ["nodes", "sinks", "n", "modified", "original", "dual", "optimal"],
    "episodes": ["network", "episode", "seed", "myopic", "broadcast", "epochs", "absorbed",
                 "continuity_ok"],
    "episode_trace": ["epoch", "|T|", "cost", "cone", "min_cut_ok"],
}


def cmd_verify(args):
    cfg, seed, out, _ = _resolve(args)
    only = [int(v) for v in args.only.split(",")] if args.only else None
    res = acceptance.run_all(only, rocketfuel=args.rocketfuel or cfg.get("rocketfuel"))
    path = os.path.join(out, "acceptance.csv")
    write_rows(path, [{"criterion": r.number, "name": r.name, "status": r.status,
                       "detail": r.detail} for r in res],
               ["criterion", "name", "status", "detail"])
    write_manifest(out, "verify", cfg, seed, [path], {str(r.number): r.status for r in res})
    return 1 if any(r.status == "FAIL" for r in res) else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with options")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--parallel", type=int, help="worker processes")

    ap = argparse.ArgumentParser(prog="codednet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", parents=[common], help="simulate one coded session")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--net", help="hypernet file")
    g.add_argument("--tandem", help="comma-separated link rates of a line network")
    p.add_argument("--source", default="1")
    p.add_argument("--sinks", default="")
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("-K", type=int, default=32)
    p.add_argument("--m", type=int, default=8, help="field GF(2^m)")
    p.add_argument("--traffic", choices=("slotted", "periodic", "poisson"), default="slotted")
    p.add_argument("--duration", type=float)
    p.add_argument("--stop-on-decode", action="store_true")
    p.set_defaults(fn=cmd_sim)

    p = sub.add_parser("opt", parents=[common], help="solve a min-cost subgraph LP")
    p.add_argument("--net", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--sinks", required=True)
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--variant", choices=("lossless", "lossy", "nested"), default="lossless")
    p.set_defaults(fn=cmd_opt)

    p = sub.add_parser("dist", parents=[common], help="distributed optimizers")
    p.add_argument("--method", choices=("subgradient", "primal-dual"), default="subgradient")
    p.add_argument("--net")
    p.add_argument("--source", default="1")
    p.add_argument("--sinks", default="")
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--nodes", type=int, default=30)
    p.add_argument("--n-sinks", type=int, default=4)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--recovery", choices=("uniform", "window"), default="window")
    p.add_argument("--m", type=float, default=4.0, help="smoothing exponent")
    p.add_argument("--step", type=float, default=0.05)
    p.set_defaults(fn=cmd_dist)

    p = sub.add_parser("finmem", parents=[common], help="finite-memory loss and rate tables")
    p.add_argument("--r", type=float, default=0.6)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--M", type=int, default=10)
    p.add_argument("--q", type=int, default=2 ** 8)
    p.add_argument("--epochs", type=int, default=100_000)
    p.add_argument("--mode", choices=("shift", "chain"), default="shift")
    p.set_defaults(fn=cmd_finmem)

    p = sub.add_parser("dyn", parents=[common], help="one dynamic multicast episode")
    p.add_argument("--network", choices=("four_node", "random"), default="random")
    p.add_argument("--nodes", type=int, default=7)
    p.add_argument("--initial", help="comma-separated initial sinks")
    p.add_argument("--birth", type=float, default=0.3)
    p.add_argument("--death", type=float, default=0.2)
    p.add_argument("--horizon", type=int, default=100)
    p.set_defaults(fn=cmd_dyn)

    p = sub.add_parser("exp", parents=[common], help="run a study and write its tables")
    p.add_argument("study", choices=ex.STUDIES)
    p.add_argument("--instances", type=int, help="instances per table cell")
    p.set_defaults(fn=cmd_exp)

    p = sub.add_parser("verify", parents=[common], help="run the acceptance checks")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.add_argument("--rocketfuel", nargs="*", help="weight files for the wireline check")
    p.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
