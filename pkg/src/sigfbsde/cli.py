"""Command-line entry point: run experiments, print oracles, self-check."""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import harness, net, oracle, sde, solver
from .sigcore import paths, tensor

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _parse_overrides(pairs) -> dict:
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise harness.ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _cmd_run(args) -> int:
    overrides = _parse_overrides(args.set)
    for key in ("experiment", "profile", "out"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = harness.load_config(args.config, overrides)
    table = harness.run_experiment(cfg)
    summary = table.summary
    print(f"{cfg.experiment} ({cfg.spec.method}, {cfg.profile}): "
          f"mean={summary['mean']:.4f} "
          f"ci=[{summary['ci_low']:.4f}, {summary['ci_high']:.4f}] "
          f"reference={summary['reference']:.4f} ({summary['kind']})")
    if "rel_error" in summary:
        print(f"relative error: {summary['rel_error'] * 100:.2f}%")
    if cfg.out:
        print(f"results written to {cfg.out}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    overrides = _parse_overrides(args.set)
    if args.experiment is not None:
        overrides["experiment"] = args.experiment
    cfg = harness.load_config(None, overrides)
    refs = harness.reference_values(cfg)
    print(f"{cfg.experiment}: reference = {refs['reference']:.6f} ({refs['kind']})")
    for key in ("european_se", "jensen_bound"):
        if key in refs:
            print(f"{key} = {refs[key]:.6f}")
    return EXIT_OK


def _selftest_checks():
    rng = np.random.default_rng(20240)

    def chen_split():
        nodes = rng.standard_normal((9, 2))
        full = paths.path_signature(nodes, 3)
        left = paths.path_signature(nodes[:5], 3)
        right = paths.path_signature(nodes[4:], 3)
        return full.allclose(tensor.truncated_product(left, right))

    def shuffle_level2():
        nodes = rng.standard_normal((7, 3))
        sig = paths.path_signature(nodes, 2)
        lvl1, lvl2 = sig.levels[0], sig.levels[1].reshape(3, 3)
        return np.allclose(np.multiply.outer(lvl1, lvl1), lvl2 + lvl2.T, rtol=1e-12)

    def scalar_closed_form():
        nodes = np.cumsum(rng.standard_normal(6))
        sig = paths.path_signature(nodes, 5)
        inc = nodes[-1] - nodes[0]
        expect = [inc ** k / math.factorial(k) for k in range(1, 6)]
        return np.allclose(sig.flatten(), expect, rtol=1e-12)

    def exp_log_roundtrip():
        v = tensor.TruncatedTensorSeries.from_levels(
            0.0, [rng.standard_normal(2), rng.standard_normal(4),
                  rng.standard_normal(8)])
        back = tensor.truncated_log(tensor.truncated_exp(v))
        return back.allclose(v, rtol=1e-12, atol=1e-12)

    def pullback_fd():
        nodes = rng.standard_normal((5, 2))
        cot = rng.standard_normal(tensor.sig_dim(2, 2))
        grad = paths.signature_pullback(nodes, 2, cot)
        eps = 1e-6
        for idx in [(0, 0), (2, 1), (4, 0)]:
            bumped = nodes.copy()
            bumped[idx] += eps
            up = float(cot @ paths.path_signature(bumped, 2).flatten())
            bumped[idx] -= 2 * eps
            down = float(cot @ paths.path_signature(bumped, 2).flatten())
            if abs((up - down) / (2 * eps) - grad[idx]) > 1e-5 * max(1.0, abs(grad[idx])):
                return False
        return True

    def lyndon_roundtrip():
        nodes = rng.standard_normal((6, 2))
        sig = paths.path_signature(nodes, 3)
        logsig = paths.log_signature(nodes, 3)
        rebuilt = tensor.truncated_exp(logsig.to_tensor())
        return rebuilt.allclose(sig, rtol=1e-10, atol=1e-12)

    def adam_zero_grad():
        params = [np.array([1.0, -2.0])]
        state = net.init_adam(params, lr=0.1)
        net.adam_step(state, params, [np.zeros(2)])
        return np.array_equal(params[0], [1.0, -2.0])

    def simulation_reproducible():
        model = sde.ModelSpec.geometric(10.0, 0.01, 1.0)
        grid = sde.GridSpec(1.0, 16, 4)
        a = sde.simulate_batch(model, grid, 4, seed=9)
        b = sde.simulate_batch(model, grid, 2, seed=9, path_offset=2)
        return np.array_equal(a.states[2:], b.states)

    def lookback_formula():
        p = oracle.LookbackParams(10.0, 10.0, 0.01, 1.0, 1.0)
        return abs(oracle.lookback_price(p) - 5.828175) < 5e-4

    return [
        ("chen identity split", chen_split),
        ("shuffle relation depth 2", shuffle_level2),
        ("scalar closed form", scalar_closed_form),
        ("exp/log inversion", exp_log_roundtrip),
        ("pullback finite differences", pullback_fd),
        ("lyndon expand/exp roundtrip", lyndon_roundtrip),
        ("adam zero-gradient fixpoint", adam_zero_grad),
        ("per-path stream reproducibility", simulation_reproducible),
        ("lookback closed form", lookback_formula),
    ]


def _cmd_selftest(_args) -> int:
    failures = 0
    for name, check in _selftest_checks():
        try:
            ok = check()
        except Exception as exc:  # a crash is a failure, not an abort
            ok = False
            print(f"FAIL {name}: {exc}")
        else:
            print(f"{'PASS' if ok else 'FAIL'} {name}")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} selftest check(s) failed")
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sig-fbsde",
        description="Signature-feature solvers for path-dependent FBSDEs")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one experiment and emit results")
    run.add_argument("--experiment", choices=harness.EXPERIMENTS)
    run.add_argument("--profile", choices=harness.PROFILES)
    run.add_argument("--config", help="JSON config document")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory for CSV/JSON results")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any config key (repeatable)")
    run.set_defaults(func=_cmd_run)

    orc = sub.add_parser("oracle", help="print reference values")
    orc.add_argument("--experiment", choices=harness.EXPERIMENTS)
    orc.add_argument("--set", action="append", metavar="KEY=VALUE")
    orc.set_defaults(func=_cmd_oracle)

    st = sub.add_parser("selftest", help="run the quick property checks")
    st.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, solver.SpecError, sde.GridError,
            sde.ModelError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except solver.SolverAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
