"""Command-line driver: configuration, seeding and result files.

Seeds: the master seed ``s`` is split into child streams by key,
``train`` stage ``i`` uses ``(s, 0, i)``, ``estimate`` uses ``(s, 1)`` and
``quality`` run ``j`` uses ``(s, 2, j)``. Inside a batch, paths are drawn in
fixed chunks with their own streams, so ``--threads`` never changes results.

Exit codes: 0 success (flags may be set in the output), 1 usage or
configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adaptive, analysis, ecm, letgs
from .estimators import EstimatorKind, evaluate
from .exceptions import (LikelihoodOverflowError, LineSearchError, NoMinimizerError,
                         NumericalBlowupError)
from .model import (MGF, UPPER, LOWER, Box, Committor, ExitByTime, ModelSpec, flat_grad,
                    flat_potential, three_well_grad, three_well_potential)

log = logging.getLogger("adaptis")

POTENTIALS = {
    "three_well": (three_well_grad, three_well_potential),
    "flat": (flat_grad, flat_potential),
}
FACES = {"lower": LOWER, "upper": UPPER}
TRAINABLE = ("ce", "msq", "msq2", "var", "ic")
QUALITY_COLUMNS = ["method", "ic", "ic_se", "var", "var_se", "cost", "cost_se", "K", "n_inner"]
FDREF_COLUMNS = ["x", "u", "r_star", "v", "v_star"]
ORACLE_COLUMNS = ["d", "b_prime", "b", "msq", "var", "ce", "g", "f_ce", "f_msq", "f_msq2",
                  "f_ic", "enum_ce", "enum_msq", "enum_var", "enum_ic2"]
WELCH_COLUMNS = ["quantity", "method_x", "method_y", "x", "y", "t", "reject"]


class ConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


@dataclass
class ModelConfig:
    potential: str = "three_well"
    temperature: float = 0.5
    step: float = 0.01
    start: float = 0.0
    domain: list = field(default_factory=lambda: [-3.5, 3.5])
    functional: str = "committor"
    target: list = field(default_factory=lambda: ["upper"])
    added: float = 0.05
    horizon: float = 10.0
    rate: float = 0.1
    step_cap: int = 1_000_000

    def validate(self):
        if self.potential not in POTENTIALS:
            raise ConfigError(f"model.potential: unknown {self.potential!r}, "
                              f"expected one of {sorted(POTENTIALS)}")
        if self.functional not in ("committor", "mgf", "exit_by_time"):
            raise ConfigError(f"model.functional: unknown {self.functional!r}")
        if len(self.domain) != 2 or not self.domain[0] < self.start < self.domain[1]:
            raise ConfigError("model.domain: need [a1, a2] with a1 < start < a2")
        for face in self.target:
            if face not in FACES:
                raise ConfigError(f"model.target: unknown face {face!r}")
        for name in ("temperature", "step", "horizon", "rate", "step_cap"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"model.{name}: must be positive")

    def build(self) -> ModelSpec:
        if self.functional == "committor":
            func = Committor(tuple(FACES[f] for f in self.target), self.added)
        elif self.functional == "mgf":
            func = MGF(self.rate)
        else:
            func = ExitByTime(self.horizon, self.added)
        grad, pot = POTENTIALS[self.potential]
        return ModelSpec(grad, self.temperature, self.step, np.array([float(self.start)]),
                         Box.interval(*self.domain), func, int(self.step_cap), potential=pot)


@dataclass
class BasisConfig:
    kind: str = "gaussian"
    M: int = 10
    lo: float = -3.6
    hi: float = 3.6
    time_power: float | None = None

    def validate(self):
        if self.kind != "gaussian":
            raise ConfigError(f"basis.kind: unknown {self.kind!r}")
        if self.M < 2 or not self.lo < self.hi:
            raise ConfigError("basis: need M >= 2 and lo < hi")

    def build(self, temperature: float) -> letgs.GaussianBasis:
        return letgs.GaussianBasis.uniform(self.lo, self.hi, self.M, temperature, self.time_power)


@dataclass
class PlanConfig:
    estimator: str = "ic"
    k: int = 6
    n0: int = 50
    growth: float = 2.0
    grad_tol: float | None = None
    grad_tol_scale: float = 1e-2
    radii: list | None = None

    def validate(self):
        if self.estimator not in TRAINABLE:
            raise ConfigError(f"plan.estimator: unknown {self.estimator!r}, "
                              f"expected one of {list(TRAINABLE)}")
        if self.k < 1 or self.n0 < 1 or self.growth < 1:
            raise ConfigError("plan: need k >= 1, n0 >= 1, growth >= 1")
        if self.radii is not None and len(self.radii) != 2:
            raise ConfigError("plan.radii: need [B1, B2]")


@dataclass
class AnalysisConfig:
    K: int = 2000
    n_inner: int = 10
    gamma: float = 0.05
    N_final: int = 200_000
    budget: float | None = None

    def validate(self):
        if self.K < 2 or self.n_inner < 3 or self.N_final < 2:
            raise ConfigError("analysis: need K >= 2, n_inner >= 3, N_final >= 2")
        if not 0 < self.gamma < 1:
            raise ConfigError("analysis.gamma: must lie in (0, 1)")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    seed: int = 0
    out: str = "out"

    def validate(self):
        for block in (self.model, self.basis, self.plan, self.analysis):
            block.validate()

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        blocks = {"model": ModelConfig, "basis": BasisConfig, "plan": PlanConfig,
                  "analysis": AnalysisConfig}
        kwargs = {}
        for key, value in data.items():
            if key in blocks:
                if not isinstance(value, dict):
                    raise ConfigError(f"{key}: expected an object")
                known = {f.name for f in dataclasses.fields(blocks[key])}
                for sub in value:
                    if sub not in known:
                        raise ConfigError(f"{key}.{sub}: unknown field")
                try:
                    kwargs[key] = blocks[key](**value)
                except TypeError as exc:
                    raise ConfigError(f"{key}: {exc}") from exc
            elif key in ("seed", "out"):
                kwargs[key] = value
            else:
                raise ConfigError(f"{key}: unknown field")
        cfg = cls(**kwargs)
        try:
            cfg.validate()
        except TypeError as exc:
            raise ConfigError(f"bad field type: {exc}") from exc
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError("top level must be an object")
        return cls.from_dict(data)


def _problem(cfg: RunConfig, threads: int) -> adaptive.PathProblem:
    model = cfg.model.build()
    return adaptive.PathProblem(model, cfg.basis.build(model.temperature), threads)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_b(path, dim: int) -> np.ndarray:
    if path is None:
        return np.zeros(dim)
    data = json.loads(Path(path).read_text())
    b = np.asarray(data["b"] if isinstance(data, dict) else data, dtype=float)
    if b.shape != (dim,):
        raise ConfigError(f"{path}: parameter has {b.size} entries, basis needs {dim}")
    return b


def cmd_train(cfg: RunConfig, args) -> int:
    problem = _problem(cfg, args.threads)
    p = cfg.plan
    plan = adaptive.StagePlan(p.k, p.n0, p.estimator, np.zeros(problem.dim), cfg.seed, p.growth,
                              None if p.radii is None else tuple(p.radii), p.grad_tol,
                              p.grad_tol_scale)
    trace = adaptive.msm_run(problem, plan)
    out = Path(cfg.out)
    config = dataclasses.asdict(cfg)
    del config["out"]
    _write_json(out / "trace.json", {"config": config, **trace.to_dict()})
    flags = [f for s in trace.stages for f in s.flags]
    _write_json(out / "b.json", {"b": [float(v) for v in trace.final], "estimator": p.estimator,
                                 "flags": flags})
    lo, hi = cfg.model.domain
    x = np.linspace(lo, hi, 701)
    cols = [letgs.drift_eval(problem.basis, plan.b0, x)]
    cols += [letgs.drift_eval(problem.basis, s.b, x) for s in trace.stages]
    _write_csv(out / "drift.csv", ["x"] + [f"stage{i}" for i in range(len(cols))],
               [[_fmt(v) for v in row] for row in zip(x, *cols)])
    print(json.dumps({"b": [float(v) for v in trace.final], "flags": flags}))
    return 0


def cmd_estimate(cfg: RunConfig, args) -> int:
    problem = _problem(cfg, args.threads)
    b = _read_b(args.b, problem.dim)
    a = cfg.analysis
    budget = args.budget if args.budget is not None else a.budget
    n = None if budget is not None else (args.n or a.N_final)
    rep = analysis.two_stage(problem, b, n=n, budget=budget, gamma=a.gamma,
                             seed=adaptive.stream(cfg.seed, 1))
    _write_json(Path(cfg.out) / "estimate.json", rep.to_dict())
    print(json.dumps(rep.to_dict()))
    return 0


def _labelled(spec: str):
    label, sep, path = spec.partition("=")
    return (label, path) if sep else (Path(spec).stem, spec)


def cmd_quality(cfg: RunConfig, args) -> int:
    problem = _problem(cfg, args.threads)
    a = cfg.analysis
    rows = []
    for j, spec in enumerate(args.b or ["cmc="]):
        label, path = _labelled(spec)
        b = _read_b(path or None, problem.dim)
        q = analysis.quality_outer_loop(problem, b, a.K, a.n_inner, adaptive.stream(cfg.seed, 2, j))
        rows.append([label] + [_fmt(getattr(q, c)) for c in QUALITY_COLUMNS[1:]])
    _write_csv(Path(cfg.out) / "quality.csv", QUALITY_COLUMNS, rows)
    for r in rows:
        print(",".join(map(str, r)))
    return 0


def cmd_oracle(cfg: RunConfig, args) -> int:
    rows = []
    kinds = (("ce", 2), ("msq", 2), ("var", 2), ("ic2", 3))
    for d in args.d:
        prob = ecm.ThreePointProblem(d)
        for bp in args.b_prime:
            for b in args.b:
                v = ecm.three_point_eval(prob, b)
                enum = [ecm.three_point_enumerate(prob, bp, b, n, k) for k, n in kinds]
                rows.append([_fmt(x) for x in (d, bp, b, v.msq, v.var, v.ce, v.g, v.f_ce, v.f_msq,
                                               v.f_msq2, v.f_ic, *enum)])
    _write_csv(Path(cfg.out) / "oracle.csv", ORACLE_COLUMNS, rows)
    print(f"{len(rows)} rows")
    return 0


def cmd_fdref(cfg: RunConfig, args) -> int:
    ref = analysis.fd_reference(cfg.model.build(), args.grid, args.c0)
    _write_csv(Path(cfg.out) / "fdref.csv", FDREF_COLUMNS,
               [[_fmt(v) for v in row] for row in zip(ref.grid, ref.u, ref.r_star, ref.v,
                                                       ref.v_star)])
    print(json.dumps({"u_start": ref.value_at(cfg.model.start)}))
    return 0


def _read_quality(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_compare(cfg: RunConfig, args) -> int:
    xs, ys = _read_quality(args.x), _read_quality(args.y)
    rows = []
    for rx in xs:
        for ry in ys:
            for q in ("ic", "var", "cost"):
                t, reject = analysis.welch_from_se(float(rx[q]), float(rx[q + "_se"]),
                                                   float(ry[q]), float(ry[q + "_se"]),
                                                   args.threshold)
                rows.append([q, rx["method"], ry["method"], rx[q], ry[q], _fmt(t), int(reject)])
    _write_csv(Path(cfg.out) / "welch.csv", WELCH_COLUMNS, rows)
    for r in rows:
        print(",".join(map(str, r)))
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    sample = letgs.Sample.from_csv(args.sample)
    b = _read_b(args.b, sample.dim) if args.b else sample.b_prime
    e = evaluate(args.estimator, sample, b)
    out = {"estimator": args.estimator, "b": [float(v) for v in b], "value": e.value,
           "gradient": None if e.gradient is None else [float(v) for v in e.gradient]}
    print(json.dumps(out))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="adaptis", description="Adaptive importance sampling for stopped diffusions.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="multi-stage training of the IS parameter")
    t.add_argument("--estimator", choices=TRAINABLE)
    t.add_argument("--k", type=int)
    t.add_argument("--n0", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", parents=[common], help="second-stage estimate with a CI")
    e.add_argument("--b", help="parameter JSON from train (default zero: crude MC)")
    e.add_argument("--n", type=int, help="sample size (overrides analysis.N_final)")
    e.add_argument("--budget", type=float, help="cost budget instead of a fixed size")
    e.set_defaults(func=cmd_estimate)

    q = sub.add_parser("quality", parents=[common], help="outer-loop ic/var/cost with SEs")
    q.add_argument("--b", action="append", metavar="[LABEL=]PATH",
                   help="parameter JSON; repeat for several methods (default crude MC)")
    q.set_defaults(func=cmd_quality)

    o = sub.add_parser("oracle", parents=[common], help="three-point closed forms")
    o.add_argument("--d", type=float, nargs="+", default=[-0.25, 0.5, 1.0, 2.0])
    o.add_argument("--b", type=float, nargs="+", default=[-0.5, 0.0, 0.5])
    o.add_argument("--b-prime", type=float, nargs="+", default=[0.0, 0.3])
    o.set_defaults(func=cmd_oracle)

    f = sub.add_parser("fdref", parents=[common], help="finite-difference reference solution")
    f.add_argument("--grid", type=int, default=4001)
    f.add_argument("--c0", type=float, help="shift of the tilted potential")
    f.set_defaults(func=cmd_fdref)

    c = sub.add_parser("compare", parents=[common], help="Welch-style tests between quality CSVs")
    c.add_argument("x", help="quality CSV")
    c.add_argument("y", help="quality CSV")
    c.add_argument("--threshold", type=float, default=analysis.WELCH_THRESHOLD)
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("eval", parents=[common], help="evaluate an estimator on a sample CSV")
    v.add_argument("sample", help="sample CSV")
    v.add_argument("--estimator", choices=[k.value for k in EstimatorKind], required=True)
    v.add_argument("--b", help="parameter JSON (default: the sampling parameter)")
    v.set_defaults(func=cmd_eval)
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config.read_text()) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    for name in ("estimator", "k", "n0"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg.plan, name, value)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        return args.func(cfg, args)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"adaptis: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalBlowupError, LikelihoodOverflowError, NoMinimizerError, LineSearchError,
            FloatingPointError, ValueError) as exc:
        print(f"adaptis: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
