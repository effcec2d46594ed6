"""Command-line entry point ``gfdetect``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import harness as hs
from .channelsim import vector_to_grid
from .errors import GfdetectError
from .matio import read_basis, write_basis, write_channel_dump, write_matrix
from .pilots import gen_patterns_balanced, gen_patterns_random, pattern_stats, write_plan_csv


def _scenario(args) -> hs.Scenario:
    sc = hs.load_scenario(args.scenario)
    lines = [item.replace("=", " = ", 1) for item in getattr(args, "set", None) or []]
    if lines:
        sc = hs.parse_scenario("\n".join(lines), base=sc)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "fixed_pilots", False):
        changes["fixed_pilots"] = True
    if getattr(args, "trials", None) is not None:
        changes["n_trials"] = args.trials
    return sc.replace(**changes) if changes else sc


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    sc = _scenario(args)
    sig = hs.simulate_trial(sc, args.trial)
    out = _out_dir(args.out)
    layout = sc.layout
    # (n_active, L, M) -> (n_active, M, T, F)
    write_channel_dump(out / "channels.bin", vector_to_grid(sig.H.transpose(0, 2, 1), layout))
    for p, Y in enumerate(sig.Y_blocks):
        write_matrix(out / f"received_block{p}.bin", Y)
    write_matrix(out / "learning_covariance.bin", sig.learn_cov)
    write_plan_csv(sig.plan, out / "plan.csv", sc.D)
    with open(out / "truth.csv", "w", newline="") as fh:
        fh.write("user,active\n")
        fh.writelines(f"{k},{int(a)}\n" for k, a in enumerate(sig.truth.tolist()))
    print(f"trial {args.trial}: {sig.active.size} active users, profile {sig.model.profile.name}, "
          f"speed {sig.model.speed_kmh:.1f} km/h; wrote {out}")


def cmd_learn_basis(args):
    sc = _scenario(args)
    if args.kind:
        sc = sc.replace(basis_kind=args.kind)
    sig = hs.simulate_trial(sc, args.trial)
    write_basis(args.out, sig.basis)
    flag = " (oracle fallback)" if sig.fell_back else ""
    print(f"{sc.basis_kind} basis with {sig.basis.N} columns over {sig.basis.rows} rows{flag}; "
          f"wrote {args.out}")


def cmd_detect(args):
    sc = _scenario(args)
    sig = hs.simulate_trial(sc, args.trial)
    basis = read_basis(args.basis) if args.basis else None
    scores, trace = hs.detect_trial(sc, sig, basis)
    with open(args.out, "w", newline="") as fh:
        fh.write("trial,user,score,truth\n")
        fh.writelines(f"{args.trial},{k},{s!r},{int(a)}\n"
                      for k, (s, a) in enumerate(zip(scores.tolist(), sig.truth.tolist())))
    if trace and args.trace:
        with open(args.trace, "w", newline="") as fh:
            fh.write("sweep,objective\n")
            fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(trace))
    if trace:
        print("objective per sweep: " + " ".join(f"{v:.6g}" for v in trace))
    print(f"wrote {args.out}")


def cmd_roc(args):
    _, scores, truth = hs.read_scores_csv(args.scores)
    roc = hs.compute_roc(scores, truth, args.n_thresholds)
    out = _out_dir(args.out)
    hs.write_roc_csv(out / "roc.csv", roc)
    if not args.no_plot:
        from .plotting import plot_roc
        plot_roc({Path(args.scores).stem: roc}, out / "roc.png")
    print(f"pAUC[{args.pfa_lo:g}, {args.pfa_hi:g}] = {roc.partial_auc(args.pfa_lo, args.pfa_hi):.6g}")


def cmd_gen_patterns(args):
    rng = np.random.default_rng(args.seed)
    gen = gen_patterns_balanced if args.kind == "balanced" else gen_patterns_random
    plan = gen(args.K, args.P, args.J, args.D, rng)
    write_plan_csv(plan, args.out, args.D)
    st = pattern_stats(plan)
    deg = st.subpilot_degrees
    print(f"sub-pilot degrees in [{deg.min()}, {deg.max()}], block edges in "
          f"[{st.block_edges.min()}, {st.block_edges.max()}], {st.collisions} collisions; "
          f"wrote {args.out}")


def cmd_wlrma_bench(args):
    res = hs.wlrma_benchmark(seed=args.seed, M=args.M, n_active=args.users, N=args.N,
                             stages=args.stages, eps_pert=args.eps, em_iterations=args.em_iterations)
    out = _out_dir(args.out)
    with open(out / "wlrma_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "iteration", "J", "rel_error"])
        for name, tr in (("em", res.em_trace), ("sa", res.sa_trace)):
            for i, (J, e) in enumerate(tr):
                w.writerow([name, i, repr(J), repr(e)])
    with open(out / "wlrma_errors.csv", "w", newline="") as fh:
        fh.write("method,rel_error\n")
        fh.writelines(f"{k},{v!r}\n" for k, v in res.rel_errors.items())
    if not args.no_plot:
        from .plotting import plot_bars, plot_traces
        plot_traces({"EM": [t[0] for t in res.em_trace], "SA": [t[0] for t in res.sa_trace]},
                    out / "wlrma_trace.png", ylabel="weighted misfit J")
        plot_bars(res.rel_errors, out / "wlrma_errors.png", ylabel="relative covariance error")
    for k, v in res.rel_errors.items():
        print(f"{k:>10s}: {v:.4f}")


def cmd_campaign(args):
    sc = _scenario(args)
    camp = hs.run_monte_carlo(sc, workers=args.workers)
    summary = hs.write_campaign(args.out, camp, plot=not args.no_plot)
    print(json.dumps({"pauc": summary["pauc"], "completed_trials": summary["completed_trials"],
                      "fallback_count": summary["fallback_count"]}, indent=2))


def _add_scenario(p, trials=False):
    p.add_argument("--scenario", default="desk", help="preset name, bundled scenario or file")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--fixed-pilots", action="store_true",
                   help="reuse one pattern and pilot draw for every trial")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one scenario key (repeatable)")
    if trials:
        p.add_argument("--trials", type=int, help="override the number of trials")
    else:
        p.add_argument("--trial", type=int, default=0, help="trial index")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gfdetect", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="dump channels, received blocks and patterns of one trial")
    _add_scenario(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("learn-basis", help="learn the channel basis of one trial")
    _add_scenario(p)
    p.add_argument("--kind", choices=hs.BASIS_KINDS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_basis)

    p = sub.add_parser("detect", help="run activity detection on one trial")
    _add_scenario(p)
    p.add_argument("--basis", help="basis file to use instead of the learned one")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="also write the objective after every sweep to this CSV")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("roc", help="ROC curve and partial AUC from a scores CSV")
    p.add_argument("scores")
    p.add_argument("--out", required=True)
    p.add_argument("--n-thresholds", type=int)
    p.add_argument("--pfa-lo", type=float, default=1e-3)
    p.add_argument("--pfa-hi", type=float, default=1e-1)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("gen-patterns", help="generate hopping patterns")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--P", type=int, required=True)
    p.add_argument("--J", type=int, required=True)
    p.add_argument("--D", type=int, default=1)
    p.add_argument("--kind", choices=hs.PATTERN_KINDS, default="balanced")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_patterns)

    p = sub.add_parser("wlrma-bench", help="covariance estimation benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--M", type=int, default=100)
    p.add_argument("--users", type=int, default=50)
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--stages", type=int, default=10)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--em-iterations", type=int, default=40)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_wlrma_bench)

    p = sub.add_parser("campaign", help="Monte-Carlo campaign with CSV, JSON and PNG outputs")
    _add_scenario(p, trials=True)
    p.add_argument("--workers", type=int, help="worker processes (default: GFDETECT_WORKERS or 1)")
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_campaign)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except GfdetectError as exc:
        print(f"gfdetect: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
