"""Command-line front door: consensus, track, optimize, verify, constants.

Flags build a config dict; `--config FILE` (JSON) is merged on top, so a
config file overrides flags. Exit code is nonzero when `verify` fails or a
run diverges.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness, metrics


def _load_config(path):
    with open(path) as fh:
        return json.load(fh)


def _common_flags(p):
    p.add_argument("--config", help="JSON config file; overrides flags")
    p.add_argument("--out-dir", default=None, help="output directory")
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--agents", type=int, default=10)
    p.add_argument("--extra-out-degree", type=int, default=1)
    p.add_argument("--activation", choices=["cyclic-permuted", "random-rounds"],
                   default="cyclic-permuted")
    p.add_argument("--rounds", type=int, default=200)
    p.add_argument("--t-max", type=int, default=None,
                   help="max round length for random-rounds")
    p.add_argument("--delay-kind", choices=["zero", "traveling-time",
                                            "traveling-time-with-loss"],
                   default="zero")
    p.add_argument("--d-tv", type=int, default=0)
    p.add_argument("--loss-rate", type=float, default=0.0)
    p.add_argument("--d-ls", type=int, default=1)


def _network_config(args) -> dict:
    cfg = {
        "replicas": args.replicas,
        "master_seed": args.master_seed,
        "graph": {"I": args.agents, "extra_out_degree": args.extra_out_degree},
        "activation": {"model": args.activation, "rounds": args.rounds},
        "delay": {"kind": args.delay_kind, "D_tv": args.d_tv,
                  "loss_rate": args.loss_rate, "D_ls": args.d_ls},
    }
    if args.t_max is not None:
        cfg["activation"]["T_max"] = args.t_max
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dasopt",
        description="asynchronous multi-agent optimization simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("consensus", help="asynchronous average consensus run")
    _common_flags(pc)
    pc.add_argument("--dimension", type=int, default=1)

    pt = sub.add_parser("track", help="signal-average tracking run")
    _common_flags(pt)
    pt.add_argument("--dimension", type=int, default=1)

    po = sub.add_parser("optimize", help="asynchronous optimization run")
    _common_flags(po)
    po.add_argument("--preset", help="named preset (e.g. ls-paper, ls-desk); "
                                     "replaces the other flags, --config still applies")
    po.add_argument("--objective", choices=["least-squares", "logistic",
                                            "robust-classification"],
                    default="least-squares")
    po.add_argument("--dimension", type=int, default=20)
    po.add_argument("--d-i", type=int, default=5)
    po.add_argument("--samples-per-agent", type=int, default=20)
    po.add_argument("--noise-var", type=float, default=0.04)
    po.add_argument("--lam-reg", type=float, default=0.01)
    po.add_argument("--gamma", type=float, default=None, help="constant step size")
    po.add_argument("--alpha0", type=float, default=None,
                    help="diminishing initial step")
    po.add_argument("--decay-c", type=float, default=0.001)
    po.add_argument("--metrics-stride", type=int, default=1)

    pv = sub.add_parser("verify", help="invariant verification suite")
    pv.add_argument("--scale", choices=["small", "full"], default="small")

    pk = sub.add_parser("constants", help="closed-form theory constants")
    pk.add_argument("--m-bar", type=float, required=True)
    pk.add_argument("--agents", type=int, required=True)
    pk.add_argument("--edges", type=int, required=True)
    pk.add_argument("--T", type=int, required=True)
    pk.add_argument("--D", type=int, required=True)
    pk.add_argument("--c-l", type=float, required=True, help="max gradient Lipschitz constant")
    pk.add_argument("--l-sum", type=float, required=True, help="sum of Lipschitz constants")
    pk.add_argument("--tau", type=float, required=True, help="strong convexity constant")

    args = parser.parse_args(argv)

    if args.command == "verify":
        results = harness.verify_suite(args.scale)
        for res in results:
            print(res.line())
        return 0 if all(r.passed for r in results) else 1

    if args.command == "constants":
        tc = metrics.theory_constants(args.m_bar, args.agents, args.edges,
                                      args.T, args.D, args.c_l, args.l_sum, args.tau)
        print(tc.report())
        return 0

    if args.command in ("consensus", "track"):
        cfg = _network_config(args)
        cfg["kind"] = args.command
        cfg["name"] = args.command
        cfg["dimension"] = args.dimension
        if args.config:
            cfg = harness.merge_config(cfg, _load_config(args.config))
        summary = harness.run_consensus_experiment(cfg, args.out_dir)
        print(f"final max consensus error: {summary['max_final_error']:.3e}")
        return 0

    # optimize
    if args.preset:
        cfg = harness.preset(args.preset)
    else:
        cfg = _network_config(args)
        cfg["kind"] = "optimize"
        cfg["name"] = "optimize"
        cfg["metrics_stride"] = args.metrics_stride
        obj = {"family": args.objective, "I": args.agents}
        if args.objective == "least-squares":
            obj.update(n=args.dimension, d_i=args.d_i, noise_var=args.noise_var)
        elif args.objective == "logistic":
            obj.update(n=args.dimension, samples_per_agent=args.samples_per_agent,
                       lam_reg=args.lam_reg)
        else:
            obj.update(samples_per_agent=args.samples_per_agent, lam_reg=args.lam_reg)
        cfg["objective"] = obj
        if args.alpha0 is not None:
            cfg["policy_variants"] = [{"label": "diminishing",
                                       "kind": "local-diminishing",
                                       "alpha0": args.alpha0, "c": args.decay_c}]
        else:
            gamma = args.gamma if args.gamma is not None else 1.0
            cfg["policy_variants"] = [{"label": "constant", "kind": "constant",
                                       "gamma": gamma}]
    if args.config:
        cfg = harness.merge_config(cfg, _load_config(args.config))
    summary = harness.run_experiment(cfg, args.out_dir)
    bad = sum(len(v.get("diverged", [])) for v in summary["variants"].values())
    for label in sorted(summary["variants"]):
        info = summary["variants"][label]
        if "final_J" in info:
            print(f"{label}: final_J={info['final_J']:.3e} "
                  f"final_MF={info['final_MF']:.3e} slope={info['rate_slope']:.3e}")
        else:
            print(f"{label}: all replicas diverged")
    return 0 if bad == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
