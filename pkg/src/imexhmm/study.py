"""Convergence studies in space, time and micro resolution."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .fe import FEFunction, FESpace, assemble_mass, assemble_stiffness, error_norms, interpolate_nodal
from .integrators import SCHEMES, State, StepSystem, SystemOperators, integrate
from .macro import TensorField, assemble_hmm_stiffness
from .mesh import build_uniform_quad_mesh
from .micro import CellConfig, TensorCache, homogenized_tensor_exact, homogenized_tensor_hmm
from .model import (
    ProblemSpec,
    exact_gradient,
    exact_solution,
    exact_velocity,
    initial_data,
    manufactured_rhs,
    nonlinearity,
)

logger = logging.getLogger(__name__)

KINDS = ("space", "time", "micro", "plateau")
CSV_COLUMNS = (
    "study", "scheme", "p", "H", "tau", "eps", "delta", "micro_n", "coupling", "mode",
    "err_u_H1", "err_v_L2", "E_total", "rate", "diverged", "wall_ms", "cg_iters",
)  # fmt: skip


@dataclass
class StudyConfig:
    kind: str = "space"
    schemes: tuple[str, ...] = ("imex",)
    p: int = 1
    levels: tuple[int, ...] = (2, 3, 4, 5)  # macro H = 2^-level
    taus: tuple[float, ...] = (1e-3,)
    tensor: str = "exact"  # or "hmm"
    epsilon: float = 2.0**-7
    delta: float = 2.0**-5
    micro_n: tuple[int, ...] = (32,)
    deltas: tuple[float, ...] = ()  # micro study: sweep cell size at fixed h
    coupling: str = "periodic"
    mode: str = "frozen"
    macro_point: tuple[float, float] = (0.25, 0.5)
    T: float = 1.0
    beta: float = 0.01
    literal_nonlinearity: bool = False
    solver: str = "direct"
    fp_tol: float = 1e-10
    fp_maxit: int = 50
    reference: str = "reference"  # time studies: "reference", "exact" or "both"
    tau_ref: float = 2.0**-12
    reference_scheme: str = "imex"
    threads: int = 1
    record_timing: bool = True

    def __post_init__(self):
        for name in ("schemes", "levels", "taus", "micro_n", "deltas", "macro_point"):
            value = getattr(self, name)
            if isinstance(value, (int, float, str)):
                value = (value,)
            setattr(self, name, tuple(value))
        self.levels = tuple(int(v) for v in self.levels)
        self.micro_n = tuple(int(v) for v in self.micro_n)
        self.taus = tuple(float(v) for v in self.taus)
        self.deltas = tuple(float(v) for v in self.deltas)
        self.macro_point = tuple(float(v) for v in self.macro_point)
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}")
        for s in (*self.schemes, self.reference_scheme):
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if self.tensor not in ("exact", "hmm"):
            raise ValueError(f"tensor source must be 'exact' or 'hmm', got {self.tensor!r}")
        if self.reference not in ("reference", "exact", "both"):
            raise ValueError(f"unknown reference strategy {self.reference!r}")
        if not self.schemes or not self.levels or not self.taus or not self.micro_n:
            raise ValueError("parameter lists must be non-empty")
        if self.kind == "time":
            for tau in (*self.taus, self.tau_ref):
                n = round(self.T / tau)
                if abs(n * tau - self.T) > 1e-12 * self.T:
                    raise ValueError(f"tau={tau} does not divide T={self.T}")

    @property
    def problem(self) -> ProblemSpec:
        return ProblemSpec(epsilon=self.epsilon, beta=self.beta, T=self.T, literal_nonlinearity=self.literal_nonlinearity)

    def cell_template(self, micro_n: int | None = None, delta: float | None = None) -> CellConfig:
        return CellConfig(
            macro_point=self.macro_point,
            delta=self.delta if delta is None else delta,
            epsilon=self.epsilon,
            micro_subdivisions=self.micro_n[0] if micro_n is None else micro_n,
            coupling=self.coupling,
            mode=self.mode,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list[dict] = field(default_factory=list)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def rates(self, study: str | None = None, scheme: str | None = None) -> list[float]:
        return [
            r["rate"]
            for r in self.select(study, scheme)
            if r["rate"] is not None
        ]

    def select(self, study: str | None = None, scheme: str | None = None) -> list[dict]:
        return [
            r
            for r in self.rows
            if (study is None or r["study"] == study) and (scheme is None or r["scheme"] == scheme)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([_csv_value(r.get(c)) for c in CSV_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        return atomic_write(path, self.to_csv())


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(v)
    return str(v)


def read_csv(path) -> list[dict]:
    """Parse a study CSV back into typed rows."""
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row: dict = {}
            for k, v in raw.items():
                if v == "":
                    row[k] = None
                elif k in ("study", "scheme", "coupling", "mode"):
                    row[k] = v
                elif k == "diverged":
                    row[k] = v == "true"
                elif k in ("p", "micro_n", "cg_iters"):
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def estimate_rates(errors, parameters) -> list[float]:
    """``log(e_i / e_{i+1}) / log(p_i / p_{i+1})`` for consecutive entries."""
    e = np.asarray(errors, dtype=float)
    p = np.asarray(parameters, dtype=float)
    if e.shape != p.shape or e.size < 2:
        raise ValueError("need at least two errors with matching parameters")
    if np.any(e <= 0) or np.any(p <= 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors and parameters must be positive and finite")
    if np.any(np.diff(p) >= 0):
        raise ValueError("parameters must be strictly decreasing")
    return [float(r) for r in np.log(e[:-1] / e[1:]) / np.log(p[:-1] / p[1:])]


# problem setup ---------------------------------------------------------------


def macro_space(level: int, p: int) -> FESpace:
    n = 2**level
    return FESpace(build_uniform_quad_mesh((0.0, 0.0), (1.0, 1.0), (n, n)), order=p, constraint="dirichlet")


def tensor_field(config: StudyConfig, cache: TensorCache | None = None) -> TensorField:
    if config.tensor == "exact":
        return TensorField.exact()
    return TensorField.hmm(config.cell_template(), cache=cache, threads=config.threads)


def build_operators(space: FESpace, field: TensorField, problem: ProblemSpec) -> SystemOperators:
    """Mass, HMM/exact stiffness and damping matrices plus nodal loads.

    The damping ``g(u_t)`` sits on the left of the equation, so the
    right-hand side nonlinearity is ``-g(nu)`` applied node-wise.
    """
    M = assemble_mass(space)
    A = assemble_hmm_stiffness(space, field)
    B = problem.beta * assemble_stiffness(space, 1.0)
    pts = space.dof_coordinates

    def G(t, mu, nu):
        return -nonlinearity(nu, problem)

    def f(t):
        return manufactured_rhs(t, pts, problem)

    return SystemOperators.from_assembled(
        M,
        A,
        B,
        constrained=space.constrained_dofs,
        G=G if problem.with_nonlinearity else None,
        f=f,
        lipschitz=problem.lipschitz_constant,
    )


def initial_state(space: FESpace, problem: ProblemSpec) -> State:
    u0, v0 = initial_data(space, problem)
    return State(u0.coefficients, v0.coefficients, 0.0)


def exact_norms(space: FESpace, t: float) -> tuple[float, float]:
    """``(||u(t)||_H1, ||u_t(t)||_L2)`` by quadrature on the mesh of ``space``."""
    zero = FEFunction(space, np.zeros(space.dof_count))
    l2, h1 = error_norms(zero, lambda x: exact_solution(t, x), lambda x: exact_gradient(t, x))
    v_l2, _ = error_norms(zero, lambda x: exact_velocity(t, x), None)
    return math.hypot(l2, h1), v_l2


def solution_errors(u_h: FEFunction, v_h: FEFunction, t: float) -> tuple[float, float]:
    """``(||u_h - u(t)||_H1, ||v_h - u_t(t)||_L2)`` against the exact solution."""
    l2, h1 = error_norms(u_h, lambda x: exact_solution(t, x), lambda x: exact_gradient(t, x))
    v_l2, _ = error_norms(v_h, lambda x: exact_velocity(t, x), None)
    return math.hypot(l2, h1), v_l2


def error_functional(u_h: FEFunction, v_h: FEFunction, t: float, problem: ProblemSpec | None = None) -> float:
    """Relative error ``(|u_h - u|_H1 + |v_h - u_t|_L2) / (|u|_H1 + |u_t|_L2)``."""
    eu, ev = solution_errors(u_h, v_h, t)
    nu, nv = exact_norms(u_h.space, t)
    denom = nu + nv
    if denom < 1e-14:
        raise ZeroDivisionError(f"exact solution norm vanishes at t={t}")
    return (eu + ev) / denom


def discrete_difference_norms(space: FESpace, du: np.ndarray, dv: np.ndarray) -> tuple[float, float]:
    """Exact ``H1`` norm of ``du`` and ``L2`` norm of ``dv`` for FE coefficient vectors."""
    M, L = space.mass, space.laplacian
    return math.sqrt(max(du @ (M @ du) + du @ (L @ du), 0.0)), math.sqrt(max(dv @ (M @ dv), 0.0))


@dataclass
class RunOutcome:
    state: State
    wall_ms: float
    cg_iters: int
    ops: SystemOperators


def run_scheme(
    space: FESpace, field: TensorField, problem: ProblemSpec, scheme: str, tau: float, config: StudyConfig,
    ops: SystemOperators | None = None,
) -> RunOutcome:
    ops = ops or build_operators(space, field, problem)
    state0 = initial_state(space, problem)
    start = time.perf_counter()
    sys = None if scheme == "explicit_mp" else StepSystem(ops, tau, method=config.solver)
    final = integrate(
        scheme, state0, ops, tau, problem.T, sys=sys, fp_tol=config.fp_tol, fp_maxit=config.fp_maxit
    )
    if not final.diverged and final.nu is None:
        final = State(final.mu, ops.velocity(final), final.time)
    wall = 1000.0 * (time.perf_counter() - start)
    return RunOutcome(final, wall, sys.cg_iterations if sys is not None else 0, ops)


def _row(config: StudyConfig, study: str, scheme: str | None, H, tau, **values) -> dict:
    hmm = config.tensor == "hmm" or study == "micro"
    row = {
        "study": study,
        "scheme": scheme,
        "p": config.p if study != "micro" else None,
        "H": H,
        "tau": tau,
        "eps": config.epsilon if hmm else None,
        "delta": config.delta if hmm else None,
        "micro_n": config.micro_n[0] if hmm else None,
        "coupling": config.coupling if hmm else None,
        "mode": config.mode if hmm else None,
        "err_u_H1": None,
        "err_v_L2": None,
        "E_total": None,
        "rate": None,
        "diverged": False,
        "wall_ms": None,
        "cg_iters": None,
    }
    row.update(values)
    if not config.record_timing:
        row["wall_ms"] = None
    return row


def _fill_rates(rows: list[dict], parameter: str) -> None:
    """Rates between consecutive converged rows; diverged rows break the chain."""
    prev = None
    for r in rows:
        if r["diverged"] or r["E_total"] is None or not r["E_total"] > 0:
            prev = None
            continue
        if prev is not None:
            r["rate"] = float(estimate_rates([prev["E_total"], r["E_total"]], [prev[parameter], r[parameter]])[0])
        prev = r


def run_space_study(config: StudyConfig, cache: TensorCache | None = None) -> StudyResult:
    """Fixed ``tau``, refine ``H``; records ``E(T)`` per level and scheme."""
    if config.kind not in ("space", "plateau"):
        raise ValueError(f"config.kind must be 'space' or 'plateau', got {config.kind!r}")
    study = "plateau" if config.tensor == "hmm" or config.kind == "plateau" else "space"
    problem = config.problem
    cache = TensorCache() if cache is None else cache
    field = tensor_field(config, cache) if config.tensor == "hmm" else TensorField.exact()
    tau = config.taus[0]
    result = StudyResult(config)
    for scheme in config.schemes:
        rows = []
        for level in config.levels:
            space = macro_space(level, config.p)
            H = 2.0**-level
            out = run_scheme(space, field, problem, scheme, tau, config)
            if out.state.diverged:
                rows.append(_row(config, study, scheme, H, tau, diverged=True, E_total=math.inf,
                                 wall_ms=out.wall_ms, cg_iters=out.cg_iters))
                continue
            u_h, v_h = FEFunction(space, out.state.mu), FEFunction(space, out.state.nu)
            eu, ev = solution_errors(u_h, v_h, problem.T)
            nu_, nv_ = exact_norms(space, problem.T)
            rows.append(_row(config, study, scheme, H, tau, err_u_H1=eu, err_v_L2=ev,
                             E_total=(eu + ev) / (nu_ + nv_), wall_ms=out.wall_ms, cg_iters=out.cg_iters))
            logger.info("%s %s H=2^-%d E=%.4e", study, scheme, level, rows[-1]["E_total"])
        _fill_rates(rows, "H")
        result.rows.extend(rows)
    return result


def run_time_study(config: StudyConfig) -> StudyResult:
    """Fixed mesh ``H = 2^-levels[0]``, sweep ``tau`` for every scheme.

    ``reference="reference"`` measures against a ``tau_ref`` solution of
    ``reference_scheme`` on the same mesh (isolating the temporal order);
    ``"exact"`` against the manufactured solution (which plateaus at the
    spatial error); ``"both"`` emits both row sets.
    """
    if config.kind != "time":
        raise ValueError(f"config.kind must be 'time', got {config.kind!r}")
    problem = config.problem
    level = config.levels[0]
    H = 2.0**-level
    space = macro_space(level, config.p)
    field = tensor_field(config)
    ops = build_operators(space, field, problem)
    nu_ex, nv_ex = exact_norms(space, problem.T)
    denom = nu_ex + nv_ex

    ref = None
    if config.reference in ("reference", "both"):
        ref_out = run_scheme(space, field, problem, config.reference_scheme, config.tau_ref, config, ops=ops)
        if ref_out.state.diverged:
            raise ArithmeticError(f"reference run ({config.reference_scheme}, tau={config.tau_ref}) diverged")
        ref = ref_out.state

    result = StudyResult(config)
    taus = sorted(config.taus, reverse=True)
    for scheme in config.schemes:
        ref_rows, exact_rows = [], []
        for tau in taus:
            try:
                out = run_scheme(space, field, problem, scheme, tau, config, ops=ops)
            except ArithmeticError:
                out = None
            if out is None or out.state.diverged:
                common = dict(diverged=True, E_total=math.inf,
                              wall_ms=None if out is None else out.wall_ms,
                              cg_iters=None if out is None else out.cg_iters)
                ref_rows.append(_row(config, "time-ref", scheme, H, tau, **common))
                exact_rows.append(_row(config, "time-exact", scheme, H, tau, **common))
                logger.info("time %s tau=%g diverged", scheme, tau)
                continue
            st = out.state
            timing = dict(wall_ms=out.wall_ms, cg_iters=out.cg_iters)
            if ref is not None:
                eu, ev = discrete_difference_norms(space, st.mu - ref.mu, st.nu - ref.nu)
                ref_rows.append(_row(config, "time-ref", scheme, H, tau, err_u_H1=eu, err_v_L2=ev,
                                     E_total=(eu + ev) / denom, **timing))
            u_h, v_h = FEFunction(space, st.mu), FEFunction(space, st.nu)
            eu, ev = solution_errors(u_h, v_h, problem.T)
            exact_rows.append(_row(config, "time-exact", scheme, H, tau, err_u_H1=eu, err_v_L2=ev,
                                   E_total=(eu + ev) / denom, **timing))
            logger.info("time %s tau=%g E_ref=%s", scheme, tau,
                        ref_rows[-1]["E_total"] if ref_rows else None)
        for rows in (ref_rows, exact_rows):
            _fill_rates(rows, "tau")
        if config.reference in ("reference", "both"):
            result.rows.extend(ref_rows)
        if config.reference in ("exact", "both"):
            result.rows.extend(exact_rows)
    return result


def run_micro_study(config: StudyConfig) -> StudyResult:
    """HMM tensor error against the closed form at ``config.macro_point``.

    Sweeps ``micro_n`` at fixed ``delta``; if ``deltas`` lists several cell
    sizes, sweeps those instead at the fixed micro width ``deltas[0] / micro_n[0]``.
    """
    if config.kind != "micro":
        raise ValueError(f"config.kind must be 'micro', got {config.kind!r}")
    exact = homogenized_tensor_exact(np.asarray(config.macro_point))
    result = StudyResult(config)
    cases = []
    if len(config.deltas) > 1:
        h = config.deltas[0] / config.micro_n[0]
        for d in sorted(config.deltas, reverse=True):
            cases.append((d, int(round(d / h)), d))
        parameter = "delta"
    else:
        delta = config.deltas[0] if config.deltas else config.delta
        for n in sorted(config.micro_n):
            cases.append((delta, n, delta / n))
        parameter = "_h"
    rows = []
    for delta, n, param in cases:
        start = time.perf_counter()
        tensor = homogenized_tensor_hmm(config.cell_template(micro_n=n, delta=delta))
        wall = 1000.0 * (time.perf_counter() - start)
        err = float(np.linalg.norm(tensor - exact))
        row = _row(config, "micro", None, None, None, E_total=err, wall_ms=wall,
                   delta=delta, micro_n=n, eps=config.epsilon, coupling=config.coupling, mode=config.mode)
        row["_h"] = param
        rows.append(row)
    _fill_rates(rows, parameter)
    for r in rows:
        r.pop("_h")
    result.rows = rows
    return result


def run_study(config: StudyConfig, cache: TensorCache | None = None) -> StudyResult:
    if config.kind in ("space", "plateau"):
        return run_space_study(config, cache)
    if config.kind == "time":
        return run_time_study(config)
    return run_micro_study(config)


def tensor_error_level(config: StudyConfig, n_samples: int = 64) -> float:
    """Mean relative Frobenius error of the HMM tensor over the macro domain.

    The tensor depends on ``x1`` only, so the mean is taken over a midpoint
    sample of ``x1`` at fixed ``x2 = 0.5``.
    """
    x1 = (np.arange(n_samples) + 0.5) / n_samples
    pts = np.column_stack([x1, np.full_like(x1, 0.5)])
    template = config.cell_template()
    num = den = 0.0
    for p in pts:
        ex = homogenized_tensor_exact(p)
        num += np.linalg.norm(homogenized_tensor_hmm(template.at(p)) - ex)
        den += np.linalg.norm(ex)
    return num / den
