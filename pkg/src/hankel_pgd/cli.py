"""``hankel-pgd`` command line entry point.

Exit status: 0 on success, 1 on invalid input, 2 on runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import exp_harness as eh
from .pgd_solver import load_instance, observed_residual, solve

log = logging.getLogger("hankel_pgd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=eh.default_threads(),
                   help="worker processes (default $HANKEL_PGD_THREADS or 1)")
    p.add_argument("--out", help="output path; summary and metadata go next to it")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--profile", help="JSON file with experiment fields; flags override it")
    p.add_argument("--trials", type=int)
    p.add_argument("--dims", type=_ints, help="signal dimensions, e.g. 127 or 8,16,32")
    p.add_argument("--n", type=int, help="1D signal length (shorthand for --dims)")
    p.add_argument("--separated", action="store_true", default=None,
                   help="enforce wrap-around separation 1.5/N_i")
    p.add_argument("--damping", choices=("none", "scaled"))
    p.add_argument("--sampling", choices=("without-replacement", "with-replacement"))
    p.add_argument("--success-threshold", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = _Parser(prog="hankel-pgd", description="Spectrally sparse signal recovery by "
                 "projected gradient descent on Hankel factors.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    rec = sub.add_parser("recover", parents=[common], help="recover one instance")
    rec.add_argument("--r", type=int, help="model order")
    rec.add_argument("--p", type=float, help="sampling ratio")
    rec.add_argument("--theta", type=float, help="noise level")
    rec.add_argument("--instance", help="ProblemInstance JSON file instead of a random draw")

    pt = sub.add_parser("phase-transition", parents=[common], help="success rate over (p, r)")
    pt.add_argument("--p-grid", type=_floats)
    pt.add_argument("--r-max", type=int)

    nz = sub.add_parser("noise", parents=[common], help="error versus noise level")
    nz.add_argument("--theta-grid", type=_floats)
    nz.add_argument("--p-grid", type=_floats)
    nz.add_argument("--r", type=int, dest="r_true")

    mo = sub.add_parser("model-order", parents=[common], help="misspecified model order")
    mo.add_argument("--r-grid", type=_ints)
    mo.add_argument("--r-true", type=int)
    mo.add_argument("--p", type=float)
    mo.add_argument("--theta", type=float)

    rh = sub.add_parser("rank-heuristic", parents=[common], help="rank-increasing sweep")
    rh.add_argument("--r-max", type=int)
    rh.add_argument("--r-true", type=int)
    rh.add_argument("--p", type=float)
    rh.add_argument("--theta", type=float)
    rh.add_argument("--threshold", type=float, dest="improvement_threshold")

    sub.add_parser("selftest", parents=[common], help="fast paths against dense references")
    return ap


KIND = {
    "recover": "single_recover",
    "phase-transition": "phase_transition",
    "noise": "noise",
    "model-order": "model_order",
    "rank-heuristic": "rank_heuristic",
}

DEFAULTS = {
    "single_recover": {"dims": [127], "r_true": 4, "p_grid": [0.5], "trials": 1},
    "phase_transition": {"dims": [63], "p_grid": [round(0.1 + 0.05 * i, 2) for i in range(18)]},
    "noise": {"dims": [127], "r_true": 4, "p_grid": [0.5, 0.75],
              "theta_grid": [10 ** (-k / 2) for k in range(6, -1, -1)]},
    "model_order": {"dims": [63], "r_true": 3, "r_grid": [1, 2, 3, 4, 6], "p_grid": [0.6]},
    "rank_heuristic": {"dims": [63], "r_true": 3, "r_max": 6, "p_grid": [0.6]},
}


def _spec_from_args(args) -> eh.ExperimentSpec:
    kind = KIND[args.command]
    fields = dict(DEFAULTS[kind])
    if args.profile:
        try:
            with open(args.profile) as fh:
                prof = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read profile {args.profile}: {exc}") from exc
        if not isinstance(prof, dict):
            raise UsageError("profile must be a JSON object")
        prof.pop("kind", None)
        fields.update(prof)
    a = vars(args)
    if a.get("n") is not None:
        fields["dims"] = [a["n"]]
    direct = ("dims", "trials", "seed", "separated", "success_threshold", "r_max",
              "r_true", "r_grid", "p_grid", "theta_grid", "theta", "improvement_threshold")
    for key in direct:
        if a.get(key) is not None:
            fields[key] = a[key]
    if a.get("r") is not None:
        fields["r_true"] = a["r"]
    if a.get("p") is not None:
        fields["p_grid"] = [a["p"]]
    if a.get("damping") is not None:
        fields["damping"] = None if a["damping"] == "none" else a["damping"]
    if a.get("sampling") is not None:
        fields["sampling_mode"] = a["sampling"]
    if a.get("max_iters") is not None:
        prof = dict(fields.get("profile", {}))
        prof["stop"] = dict(prof.get("stop", {}), max_iters=a["max_iters"])
        fields["profile"] = prof
    try:
        return eh.ExperimentSpec.from_dict(dict(fields, kind=kind)).validate()
    except TypeError as exc:
        raise UsageError(str(exc)) from exc


def _recover_file(args) -> int:
    try:
        with open(args.instance) as fh:
            shape, samples, x_obs, config = load_instance(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot load instance: {exc}") from exc
    res = solve(shape, samples, x_obs, config)
    print(f"observed_residual={observed_residual(samples, res.x_rec, x_obs):.6e} "
          f"iterations={res.iterations} termination={res.termination_reason}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(res.to_json(include_history=False) + "\n")
    return 0


def _recover(args) -> int:
    if args.instance:
        return _recover_file(args)
    spec = _spec_from_args(args)
    result = eh.run_single(spec, threads=1)
    for row in result.trials:
        print(f"rmse={row['rmse']:.6e} iterations={row['iterations']} "
              f"termination={row['termination']} seed={row['seed']}")
    eh.write_result(result, args.out, args.format)
    return 0


def _experiment(args) -> int:
    spec = _spec_from_args(args)
    result = eh.RUNNERS[spec.kind](spec, threads=max(1, args.threads))
    written = eh.write_result(result, args.out, args.format)
    if not written:
        sys.stdout.write(eh.to_csv(result.summary))
    else:
        for path in written:
            print(path)
    return 0


def _selftest(args) -> int:
    from .selftest import run_selftest

    ok = run_selftest(seed=args.seed or 0, stream=sys.stdout)
    return 0 if ok else 2


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        if args.command == "recover":
            return _recover(args)
        if args.command == "selftest":
            return _selftest(args)
        return _experiment(args)
    except (UsageError, eh.SpecError) as exc:
        print(f"hankel-pgd: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"hankel-pgd: runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
