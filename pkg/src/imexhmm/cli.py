"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 numerical failure (solver did not
converge), 3 divergence in a study that does not tolerate it.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from .fe import SolverError
from .micro import CellConfig, homogenized_tensor_exact, homogenized_tensor_hmm, homogenized_tensor_reference_1d
from .study import StudyConfig, StudyResult, run_study

logger = logging.getLogger("imexhmm")

OUTPUT_ENV = "IMEXHMM_OUTPUT_DIR"
STUDY_COMMANDS = {"space-study": "space", "time-study": "time", "micro-study": "micro", "plateau-study": "plateau"}

_TUPLE_FIELDS = {"schemes", "levels", "taus", "micro_n", "deltas", "macro_point"}
_BOOL_FIELDS = {"literal_nonlinearity", "record_timing"}
_INT_FIELDS = {"p", "fp_maxit", "threads"}
_STR_FIELDS = {"kind", "tensor", "coupling", "mode", "solver", "reference", "reference_scheme"}


class UsageError(Exception):
    pass


def parse_number(text: str) -> float:
    """Parse ``0.25``, ``1e-3`` or powers written as ``2^-5`` / ``2**-5``."""
    s = text.strip()
    m = re.fullmatch(r"([0-9.eE+-]+)\s*(?:\^|\*\*)\s*([+-]?[0-9.]+)", s)
    try:
        if m:
            return float(m.group(1)) ** float(m.group(2))
        return float(s)
    except ValueError:
        raise UsageError(f"not a number: {text!r}") from None


def _parse_value(name: str, text: str):
    if name in _TUPLE_FIELDS:
        items = [t for t in re.split(r"[,\s]+", text.strip()) if t]
        if name == "schemes":
            return tuple(items)
        if name in ("levels", "micro_n"):
            return tuple(int(parse_number(t)) for t in items)
        return tuple(parse_number(t) for t in items)
    if name in _BOOL_FIELDS:
        low = text.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"{name}: expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if name in _INT_FIELDS:
        return int(parse_number(text))
    if name in _STR_FIELDS:
        return text.strip()
    return parse_number(text)


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(config: StudyConfig, section: str | None = None) -> str:
    """Serialize to the flat ``key = value`` format under one section."""
    section = section or f"{config.kind}-study"
    lines = [f"[{section}]"]
    for name in StudyConfig.field_names():
        lines.append(f"{name} = {_format_value(getattr(config, name))}")
    return "\n".join(lines) + "\n"


def parse_config_text(text: str, section: str) -> dict:
    """Read ``section`` (or ``[study]``) into a dict of typed StudyConfig fields.

    Unknown keys are rejected.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"malformed config: {exc}") from None
    name = section if parser.has_section(section) else "study" if parser.has_section("study") else None
    if name is None:
        raise UsageError(f"config has no [{section}] or [study] section")
    known = set(StudyConfig.field_names())
    values = {}
    for key, raw in parser.items(name):
        if key not in known:
            raise UsageError(f"unknown config key {key!r} in [{name}]")
        values[key] = _parse_value(key, raw)
    return values


def build_config(kind: str, file_values: dict, overrides: dict) -> StudyConfig:
    values = {**file_values, **{k: v for k, v in overrides.items() if v is not None}}
    values["kind"] = kind
    try:
        return StudyConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_study_overrides(p: argparse.ArgumentParser) -> None:
    for name in StudyConfig.field_names():
        if name == "kind":
            continue
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"ov_{name}", metavar="VALUE", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="imexhmm", description="IMEX / FE-HMM convergence studies")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for cmd in STUDY_COMMANDS:
        p = sub.add_parser(cmd, help=f"run a {STUDY_COMMANDS[cmd]} convergence study")
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--output", type=Path, default=None, help=f"output directory (default ${OUTPUT_ENV} or ./results)")
        p.add_argument("--name", default=None, help="base name of the CSV/SVG files")
        p.add_argument("--no-plot", action="store_true")
        p.add_argument("--allow-divergence", action="store_true", help="exit 0 even if an implicit run diverges")
        _add_study_overrides(p)

    p = sub.add_parser("solve", help="single run, prints E(T)")
    p.add_argument("--config", type=Path)
    p.add_argument("--level", type=int, default=4)
    p.add_argument("--tau", type=str, default="1e-3")
    p.add_argument("--scheme", default="imex")
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--tensor", default="exact")
    p.add_argument("--micro-n", type=int, default=None)

    p = sub.add_parser("tensor", help="print the effective tensor at a macro point")
    p.add_argument("--x1", type=str, required=True)
    p.add_argument("--x2", type=str, default="0.5")
    p.add_argument("--mode", choices=("exact", "reference", "frozen", "sampled"), default="exact")
    p.add_argument("--epsilon", type=str, default="2^-7")
    p.add_argument("--delta", type=str, default="2^-5")
    p.add_argument("--micro-n", type=int, default=64)
    p.add_argument("--coupling", default="periodic")

    sub.add_parser("selftest", help="run the quick built-in checks")
    return parser


def _overrides(args) -> dict:
    out = {}
    for name in StudyConfig.field_names():
        raw = getattr(args, f"ov_{name}", None)
        if raw is not None:
            out[name] = _parse_value(name, raw)
    return out


def _format_tensor(t: np.ndarray) -> str:
    if abs(t[0, 1]) < 1e-12 and abs(t[1, 0]) < 1e-12:
        return f"diag({t[0, 0]:.6f}, {t[1, 1]:.6f})"
    return np.array2string(t, precision=6)


def _output_dir(args) -> Path:
    if args.output is not None:
        return args.output
    return Path(os.environ.get(OUTPUT_ENV, "results"))


def _cmd_study(args) -> int:
    kind = STUDY_COMMANDS[args.command]
    file_values = {}
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        file_values = parse_config_text(text, args.command)
    config = build_config(kind, file_values, _overrides(args))
    result = run_study(config)
    out = _output_dir(args)
    name = args.name or (args.config.stem if args.config else args.command)
    csv_path = result.write_csv(out / f"{name}.csv")
    print(f"wrote {csv_path}", file=sys.stderr)
    if not args.no_plot:
        from .plotting import emit_plot

        try:
            svg = emit_plot(result, out / f"{name}.svg")
            print(f"wrote {svg}", file=sys.stderr)
        except ValueError as exc:
            print(f"plot skipped: {exc}", file=sys.stderr)
    _summarize(result)
    bad = [r for r in result.rows if r["diverged"] and r["scheme"] != "explicit_mp"]
    if bad and not args.allow_divergence:
        print(f"{len(bad)} run(s) diverged", file=sys.stderr)
        return 3
    return 0


def _summarize(result: StudyResult) -> None:
    for r in result.rows:
        par = r["tau"] if r["study"].startswith("time") else r["H"] if r["H"] is not None else r["micro_n"]
        status = "diverged" if r["diverged"] else f"E={r['E_total']:.4e}"
        rate = "" if r["rate"] is None else f" rate={r['rate']:.3f}"
        print(f"{r['study']:10s} {r['scheme'] or '-':12s} {par!s:>22s} {status}{rate}", file=sys.stderr)


def _cmd_solve(args) -> int:
    from .fe import FEFunction
    from .study import build_operators, error_functional, initial_state, macro_space, tensor_field
    from .integrators import integrate

    file_values = parse_config_text(args.config.read_text(), "solve") if args.config else {}
    values = {**file_values, "tensor": args.tensor, "p": args.p}
    if args.micro_n is not None:
        values["micro_n"] = (args.micro_n,)
    config = build_config("space", values, {})
    problem = config.problem
    space = macro_space(args.level, config.p)
    ops = build_operators(space, tensor_field(config), problem)
    tau = parse_number(args.tau)
    start = time.perf_counter()
    state = integrate(args.scheme, initial_state(space, problem), ops, tau, problem.T)
    if state.diverged:
        print(f"diverged at t={state.time:.6g}", file=sys.stderr)
        return 3
    nu = ops.velocity(state)
    E = error_functional(FEFunction(space, state.mu), FEFunction(space, nu), problem.T, problem)
    print(f"E({problem.T:g}) = {E!r}  [{args.scheme}, Q{config.p}, H=2^-{args.level}, tau={tau:g}, "
          f"{1000 * (time.perf_counter() - start):.0f} ms]")
    return 0


def _cmd_tensor(args) -> int:
    x = np.array([parse_number(args.x1), parse_number(args.x2)])
    if args.mode == "exact":
        t = homogenized_tensor_exact(x)
    elif args.mode == "reference":
        t = homogenized_tensor_reference_1d(x)
    else:
        try:
            cfg = CellConfig(tuple(x), parse_number(args.delta), parse_number(args.epsilon), args.micro_n,
                             coupling=args.coupling, mode=args.mode)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        t = homogenized_tensor_hmm(cfg)
    print(_format_tensor(t))
    return 0


def selftest() -> list[tuple[str, bool]]:
    """Cheap closed-form checks; returns ``(name, passed)`` pairs."""
    from .fe import FESpace, assemble_mass, assemble_stiffness, gauss_rule
    from .mesh import build_uniform_quad_mesh
    from .model import exact_solution, nonlinearity
    from .study import estimate_rates

    checks = []
    m = build_uniform_quad_mesh((0, 0), (1, 1), (2, 2))
    checks.append(("mesh counts", m.n_nodes == 9 and m.n_elements == 4 and len(m.boundary_nodes) == 8))
    checks.append(("periodic slaves", len(m.periodic_pairs) == 5))
    r = gauss_rule(2)
    checks.append(("gauss 2x2 exactness", abs(r.weights @ (r.points[:, 0] ** 2 * r.points[:, 1] ** 2) - 1 / 9) < 1e-15))
    s = FESpace(build_uniform_quad_mesh((0, 0), (1, 1), (1, 1)), 1)
    M = assemble_mass(s).toarray()
    checks.append(("Q1 mass entries", np.allclose([M[0, 0], M[0, 1], M[0, 3]], [1 / 9, 1 / 18, 1 / 36])))
    K = assemble_stiffness(s, 1.0).toarray()
    checks.append(("Q1 stiffness entries", np.allclose([K[0, 0], K[0, 1], K[0, 3]], [2 / 3, -1 / 6, -1 / 3])))
    checks.append(("exact tensor", np.allclose(np.diag(homogenized_tensor_exact([0.25, 0.0])), [0.3 * np.sqrt(2.31), 0.48])))
    checks.append(("nonlinearity odd", float(nonlinearity(0.0)) == 0.0 and np.isclose(nonlinearity(-2.0), -nonlinearity(2.0))))
    checks.append(("exact solution", np.isclose(exact_solution(0.0, [0.5, 0.5])[0], 0.5)))
    checks.append(("rates", np.allclose(estimate_rates([1, 0.25], [1, 0.5]), [2.0])))
    return checks


def _cmd_selftest(args) -> int:
    results = selftest()
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0 if all(ok for _, ok in results) else 1


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    handlers = {"solve": _cmd_solve, "tensor": _cmd_tensor, "selftest": _cmd_selftest}
    handler = handlers.get(args.command, _cmd_study)
    try:
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
