"""Command line front end: validate, analyze, simulate, certify, predict.

Exit codes: 0 success / pass, 1 check failure or bad input, 2 violated
precondition (e.g. the reference point is not complex balanced).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import equilibrium_in_class
from .certify import Tolerances, certify_trajectory
from .exceptions import ConvergenceError, IntegrationError, NotComplexBalancedError, ParseError
from .integrator import integrate, write_csv
from .network import ReactionNetwork, format_network, load_network, parse_history
from .stoichiometry import find_equilibrium, is_complex_balanced, stoichiometric_subspace

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PRECONDITION = 2


@dataclass
class RunConfig:
    network_path: str
    history_spec: str | None = None
    horizon: float = 60.0
    step: float = 1e-3
    tolerances: dict[str, float] = field(default_factory=dict)
    output_dir: str | None = None
    delays: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.step > 0:
            raise ValueError("step must be positive")
        for name, value in self.tolerances.items():
            if not value > 0:
                raise ValueError(f"tolerance {name} must be positive")


def _round12(obj):
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, (np.floating, np.integer)):
        return _round12(obj.item())
    if isinstance(obj, np.ndarray):
        return _round12(obj.tolist())
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round12(v) for v in obj]
    return obj


def _dump(obj, out=None, path=None):
    text = json.dumps(_round12(obj), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    if out is not None:
        print(text, file=out)


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _load(cfg: RunConfig) -> ReactionNetwork:
    net = load_network(cfg.network_path)
    if cfg.delays:
        delays = list(net.delays)
        for k, d in cfg.delays.items():
            if not 1 <= k <= net.n_reactions:
                raise ParseError(f"--delay refers to reaction {k}, network has {net.n_reactions}")
            delays[k - 1] = d
        net = net.with_delays(delays)
    return net


def _history(cfg: RunConfig, net: ReactionNetwork):
    if cfg.history_spec is None:
        raise ParseError("--history is required")
    return parse_history(cfg.history_spec, net, base_dir=Path(cfg.network_path).parent)


def _summary(traj) -> dict:
    return {
        "horizon": traj.horizon,
        "step": traj.step,
        "terminal": traj.terminal.tolist(),
        "min_component": float(traj.values.min()),
        "min_before_clamp": traj.min_raw,
    }


# -- commands ---------------------------------------------------------------------


def cmd_validate(network_path, out=None) -> int:
    out = out or sys.stdout
    try:
        net = load_network(network_path)
    except (ParseError, OSError) as exc:
        _err(exc)
        return EXIT_FAIL
    out.write(format_network(net))
    return EXIT_OK


def cmd_analyze(network_path, at=None, find_from=None, out=None) -> int:
    out = out or sys.stdout
    try:
        net = load_network(network_path)
    except (ParseError, OSError) as exc:
        _err(exc)
        return EXIT_FAIL
    result = {"species": list(net.species), **stoichiometric_subspace(net).to_dict()}
    try:
        if at is not None:
            result["at"] = is_complex_balanced(net, at).to_dict(net.species)
        if find_from is not None:
            result["equilibrium"] = find_equilibrium(net, find_from).to_dict(net.species)
    except ValueError as exc:
        _err(exc)
        return EXIT_PRECONDITION
    except ConvergenceError as exc:
        _err(exc)
        return EXIT_FAIL
    _dump(result, out=out)
    return EXIT_OK


def _simulate_case(net, history, cfg):
    return integrate(net, history, cfg.horizon, cfg.step, clamp_tol=cfg.tolerances.get("clamp", 1e-12))


def cmd_simulate(cfg: RunConfig, sweep=None, sweep_reaction=None, out=None) -> int:
    """Run one simulation, or one per sweep case (``("delays", [...])`` or ``("init", [[...], ...])``)."""
    out = out or sys.stdout
    try:
        net = _load(cfg)
        cases = []
        if sweep is None:
            cases.append(("trajectory", net, _history(cfg, net)))
        elif sweep[0] == "delays":
            targets = [sweep_reaction] if sweep_reaction else [k + 1 for k, d in enumerate(net.delays) if d > 0]
            if not targets:
                raise ParseError("no delayed reaction to sweep; pass --sweep-reaction")
            for i, d in enumerate(sweep[1]):
                delays = list(net.delays)
                for k in targets:
                    delays[k - 1] = d
                case_net = net.with_delays(delays)
                cases.append((f"case_{i:02d}", case_net, _history(cfg, case_net)))
        elif sweep[0] == "init":
            for i, vec in enumerate(sweep[1]):
                spec = "const " + " ".join(repr(float(v)) for v in vec)
                cases.append((f"case_{i:02d}", net, parse_history(spec, net)))
        else:
            raise ParseError(f"unknown sweep kind {sweep[0]!r} (expected 'delays' or 'init')")
    except (ParseError, OSError, ValueError) as exc:
        _err(exc)
        return EXIT_FAIL

    try:
        with ThreadPoolExecutor() as pool:
            trajs = list(pool.map(lambda c: _simulate_case(c[1], c[2], cfg), cases))
    except (IntegrationError, ValueError) as exc:
        _err(exc)
        return EXIT_FAIL

    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    for (label, case_net, _), traj in zip(cases, trajs):
        s = {"label": label, "delays": case_net.delays.tolist(), "initial": traj.values[0].tolist(), **_summary(traj)}
        if out_dir is not None:
            write_csv(traj, out_dir / f"{label}.csv")
            s["csv"] = f"{label}.csv"
        summaries.append(s)
    summary = summaries[0] if sweep is None else {"cases": summaries}
    _dump(summary, out=out, path=None if out_dir is None else out_dir / "summary.json")
    return EXIT_OK


def cmd_certify(cfg: RunConfig, equilibrium, out=None) -> int:
    out = out or sys.stdout
    try:
        net = _load(cfg)
        theta = _history(cfg, net)
        tol = Tolerances().replace(**cfg.tolerances)
    except (ParseError, OSError, ValueError) as exc:
        _err(exc)
        return EXIT_FAIL
    try:
        report = certify_trajectory(net, stoichiometric_subspace(net), equilibrium, theta, cfg.horizon, cfg.step, tol)
    except NotComplexBalancedError as exc:
        _err(f"not complex balanced: {exc}")
        return EXIT_PRECONDITION
    except ValueError as exc:
        _err(exc)
        return EXIT_PRECONDITION
    except ConvergenceError as exc:
        _err(exc)
        return EXIT_FAIL
    if cfg.output_dir:
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _dump(report.to_dict(), path=out_dir / "certificate.json")
        if report.lyapunov is not None:
            report.lyapunov.write_csv(out_dir / "lyapunov.csv")
        if report.trajectory is not None:
            write_csv(report.trajectory, out_dir / "trajectory.csv")
    _dump(report.to_dict(), out=out)
    for line in report.diagnostics:
        print(f"violated {line}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_predict(cfg: RunConfig, equilibrium, verify=False, starts=0, seed=0, out=None) -> int:
    out = out or sys.stdout
    try:
        net = _load(cfg)
        theta = _history(cfg, net)
        tol = Tolerances().replace(**cfg.tolerances)
    except (ParseError, OSError, ValueError) as exc:
        _err(exc)
        return EXIT_FAIL
    report = stoichiometric_subspace(net)
    try:
        predicted = equilibrium_in_class(net, report, equilibrium, theta)
        result = {"predicted_limit": predicted.tolist()}
        if starts:
            rng = np.random.default_rng(seed)
            d = report.s_perp_basis.shape[0]
            others = [
                equilibrium_in_class(net, report, equilibrium, theta, lam0=rng.uniform(-1, 1, d))
                for _ in range(starts)
            ]
            spread = max((float(np.max(np.abs(p - predicted))) for p in others), default=0.0)
            result.update({"starts": starts, "seed": seed, "multistart_spread": spread})
    except NotComplexBalancedError as exc:
        _err(f"not complex balanced: {exc}")
        return EXIT_PRECONDITION
    except ValueError as exc:
        _err(exc)
        return EXIT_PRECONDITION
    except ConvergenceError as exc:
        _err(exc)
        return EXIT_FAIL
    code = EXIT_OK
    if verify:
        try:
            traj = integrate(net, theta, cfg.horizon, cfg.step)
        except IntegrationError as exc:
            _err(exc)
            return EXIT_FAIL
        err = float(np.linalg.norm(traj.terminal - predicted))
        result.update({"simulated_terminal": traj.terminal.tolist(), "verify_error": err, "verified": err <= tol.terminal})
        code = EXIT_OK if result["verified"] else EXIT_FAIL
    _dump(result, out=out)
    return code


# -- argument parsing -------------------------------------------------------------


def _delay_override(text):
    try:
        k, v = text.split("=", 1)
        return int(k), float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected K=VALUE, got {text!r}") from None


def _parse_sweep(kind, values):
    if kind == "delays":
        return kind, [float(v) for v in values.replace(";", ",").split(",") if v.strip()]
    if kind == "init":
        return kind, [[float(x) for x in vec.replace(",", " ").split()] for vec in values.split(";") if vec.strip()]
    raise argparse.ArgumentTypeError(f"unknown sweep kind {kind!r}")


def _extract_tolerances(extra):
    tols, rest = {}, []
    it = iter(extra)
    for item in it:
        if item.startswith("--tol."):
            name, _, value = item[len("--tol."):].partition("=")
            if not value:
                value = next(it, None)
                if value is None:
                    raise SystemExit(f"error: {item} needs a value")
            tols[name] = float(value)
        else:
            rest.append(item)
    return tols, rest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delaycrn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, history=True, run=True):
        sp.add_argument("--network", required=True, help="network file")
        if history:
            sp.add_argument("--history", help="'const v1 ... vN' or 'csv <path>'")
        if run:
            sp.add_argument("--horizon", type=float, default=60.0)
            sp.add_argument("--step", type=float, default=1e-3)
            sp.add_argument("--out", help="output directory")
            sp.add_argument(
                "--delay", type=_delay_override, action="append", default=[], metavar="K=VALUE",
                help="override the delay of reaction K (1-based)",
            )

    sp = sub.add_parser("validate", help="parse and echo the canonical network")
    common(sp, history=False, run=False)

    sp = sub.add_parser("analyze", help="stoichiometry, deficiency, weak reversibility, complex balance")
    common(sp, history=False, run=False)
    sp.add_argument("--at", type=float, nargs="+", help="check complex balance at this point")
    sp.add_argument("--find-from", type=float, nargs="+", help="Newton search for an equilibrium from this guess")

    sp = sub.add_parser("simulate", help="integrate the delayed system, write CSV + summary")
    common(sp)
    sp.add_argument("--sweep", nargs=2, metavar=("KIND", "VALUES"), help="'delays 0.05,0.1' or 'init \"0.5 0.5;1 1\"'")
    sp.add_argument("--sweep-reaction", type=int, help="reaction whose delay is swept (default: all delayed ones)")

    sp = sub.add_parser("certify", help="check conservation, Lyapunov decrease and convergence on a run")
    common(sp)
    sp.add_argument("--equilibrium", type=float, nargs="+", required=True)

    sp = sub.add_parser("predict", help="equilibrium of the delayed compatibility class of the history")
    common(sp)
    sp.add_argument("--equilibrium", type=float, nargs="+", required=True)
    sp.add_argument("--verify", action="store_true", help="compare with a simulation to --horizon")
    sp.add_argument("--starts", type=int, default=0, help="extra random Newton starts (uniqueness check)")
    sp.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    tols, rest = _extract_tolerances(extra)
    if rest:
        parser.error(f"unrecognized arguments: {' '.join(rest)}")

    if args.command == "validate":
        return cmd_validate(args.network)
    if args.command == "analyze":
        return cmd_analyze(args.network, at=args.at, find_from=args.find_from)

    try:
        cfg = RunConfig(
            network_path=args.network,
            history_spec=args.history,
            horizon=args.horizon,
            step=args.step,
            tolerances=tols,
            output_dir=args.out,
            delays=dict(args.delay),
        )
    except ValueError as exc:
        _err(exc)
        return EXIT_FAIL
    if args.command == "simulate":
        try:
            sweep = _parse_sweep(*args.sweep) if args.sweep else None
        except (argparse.ArgumentTypeError, ValueError) as exc:
            _err(exc)
            return EXIT_FAIL
        return cmd_simulate(cfg, sweep=sweep, sweep_reaction=args.sweep_reaction)
    if args.command == "certify":
        return cmd_certify(cfg, args.equilibrium)
    return cmd_predict(cfg, args.equilibrium, verify=args.verify, starts=args.starts, seed=args.seed)


if __name__ == "__main__":
    sys.exit(main())
