"""Command-line front end: ``mskmc {derive,simulate,sweep,validate,rerun}``.

Every command reads a model preset or definition file, optionally a run
config (TOML, same keys as the flags), and writes its outputs under the
output directory (``--out``, else ``$MSKMC_OUTPUT_DIR``, else
``./mskmc-out``). Each output file starts with ``#`` comment lines holding
the command and the full run config, which ``mskmc rerun FILE`` replays.

Exit codes: 0 ok, 1 acceptance failure, 2 config or model error,
3 event budget exceeded, 4 more than 1% of replicas failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import effective, stats
from .ctmc import DEFAULT_MAX_EVENTS, RngStream, simulate, write_trajectory_csv
from .errors import ConfigError, EventBudgetExceeded, KMCError, NotIrreducible
from .modelfile import PARAM_KEYS, load_model, tomllib

OUTPUT_ENV = "MSKMC_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CRITERION = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_REPLICAS = 4

_PARAM_NAMES = sorted({k for keys in PARAM_KEYS.values() for k in keys})


@dataclass
class RunConfig:
    model: str = "two-macro-s2.3"
    params: dict = field(default_factory=dict)
    epsilon: float | None = None
    epsilons: list = field(default_factory=list)
    x: int | None = None
    z: int | None = None
    replicas: int = 10_000
    seed: int = 0
    stream_id: int = 0
    horizon: float = 10.0
    max_events: int = DEFAULT_MAX_EVENTS
    bin_width: float = 0.05
    num_bins: int = 100
    weighting: str = "riemann"
    total_energy: float | None = None
    jobs: int = 1
    out: str | None = None

    def validate(self) -> None:
        for name in ("replicas", "max_events", "num_bins", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.bin_width > 0:
            raise ConfigError("bin_width must be positive")
        if not self.horizon >= 0:
            raise ConfigError("horizon must be nonnegative")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if any(not float(e) > 0 for e in self.epsilons):
            raise ConfigError("epsilons must be positive")
        if self.weighting not in ("riemann", "paper_literal"):
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        unknown = set(self.params) - set(_PARAM_NAMES)
        if unknown:
            raise ConfigError(f"unknown model parameters {sorted(unknown)}")

    def definition(self, epsilon: float | None = None):
        eps = epsilon if epsilon is not None else self.epsilon
        return load_model(self.model, epsilon=eps, x=self.x, z=self.z, **self.params)

    def output_dir(self) -> Path:
        out = Path(self.out or os.environ.get(OUTPUT_ENV) or "mskmc-out")
        out.mkdir(parents=True, exist_ok=True)
        return out

    def header(self, command: str) -> dict:
        cfg = asdict(self)
        cfg.pop("out")
        cfg.pop("jobs")
        return {"command": command, "config": json.dumps(cfg, sort_keys=True)}


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    valid = {f.name for f in fields(RunConfig)}
    init = data.pop("initial", {})
    data.update({k: v for k, v in init.items() if k in ("x", "z")})
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return data


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(_load_config_file(args.config))
    params = dict(values.pop("params", {}))
    for name in _PARAM_NAMES:
        v = getattr(args, name, None)
        if v is not None:
            params[name] = v
    if getattr(args, "preset", None):
        values["model"] = args.preset
    if getattr(args, "model", None):
        values["model"] = args.model
    for f in fields(RunConfig):
        if f.name in ("model", "params"):
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    cfg = RunConfig(params=params, **values)
    cfg.validate()
    return cfg


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def _comments(header: dict) -> list[str]:
    return [f"{k} = {v}" for k, v in header.items()]


def cmd_derive(cfg: RunConfig) -> int:
    defn = cfg.definition()
    total = cfg.total_energy if cfg.total_energy is not None else defn.total_energy()
    eff = effective.derive(defn.model, total)
    report = effective.report(eff)
    print(f"model {defn.name} ({defn.kind})")
    if eff.kind == "two-macro":
        print(f"pi0 = {eff.pi0.tolist()}\npi1 = {eff.pi1.tolist()}")
        print(f"lambda0 = {eff.lambda0!r}\nlambda1 = {eff.lambda1!r}")
    elif eff.kind == "ring":
        print(f"pi = {eff.pi.tolist()}")
        print(f"lambda_l = {eff.lambda_l!r}\nlambda_r = {eff.lambda_r!r}")
    else:
        print(f"total energy E = {eff.total_energy:g}; levels {eff.levels}")
        for e, p in eff.pis.items():
            print(f"pi^{e:g} = {p.tolist()}")
        for i, e in enumerate(eff.levels):
            for j, e2 in enumerate(eff.levels):
                if i != j:
                    print(f"B({e:g},{e2:g}) = {float(eff.B[i, j])!r}")
    out = cfg.output_dir() / f"derive_{defn.name}.json"
    _write(out, "".join(f"// {line}\n" for line in _comments(cfg.header("derive"))) + report + "\n")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    defn = cfg.definition()
    model = defn.model
    rng = RngStream(cfg.seed, cfg.stream_id)
    t0 = time.perf_counter()
    try:
        traj = simulate(model.chain, defn.initial_state, cfg.horizon, rng, cfg.max_events)
    except EventBudgetExceeded as exc:
        print(f"event budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    wall = time.perf_counter() - t0
    out = cfg.output_dir() / "trajectory.csv"
    write_trajectory_csv(traj, out, model.label, _comments(cfg.header("simulate")))
    flag = " (absorbing)" if traj.absorbed else ""
    print(f"events={traj.n_events} final={model.label(traj.final_state)}{flag} wall={wall:.3f}s -> {out}")
    return EXIT_OK


_GNUPLOT = """# gnuplot script generated by mskmc sweep
set datafile separator ","
set logscale x
set xlabel "epsilon"
set key top left
set terminal pngcairo size 900,600
set output "sweep_mean.png"
plot "sweep.csv" using 1:3:4:5 with yerrorbars title "mean", {mean} title "limit"
set output "sweep_l1.png"
plot "sweep.csv" using 1:9 with linespoints title "L1", "" using 1:10 with linespoints title "discrepancy"
"""


def _eps_tag(eps: float) -> str:
    return f"{eps:.6g}"


def cmd_sweep(cfg: RunConfig) -> int:
    if not cfg.epsilons:
        raise ConfigError("sweep needs a nonempty epsilon list")
    defn = cfg.definition()
    header = cfg.header("sweep")
    report = stats.sweep(
        defn.model, cfg.epsilons, cfg.replicas, cfg.seed, defn.initial_state,
        bin_width=cfg.bin_width, num_bins=cfg.num_bins, weighting=cfg.weighting,
        max_events=cfg.max_events, jobs=cfg.jobs, model_id=defn.name, header=header,
    )
    out = cfg.output_dir()
    _write(out / "sweep.csv", stats.sweep_csv(report))
    for row in report.rows:
        h = dict(header, epsilon=_eps_tag(row.epsilon), limit_rate=repr(report.limit_rate))
        _write(out / f"hist_eps={_eps_tag(row.epsilon)}.csv", stats.histogram_csv(row.histogram, h))
    _write(out / "plot_sweep.gp", _GNUPLOT.format(mean=1.0 / report.limit_rate))

    print(f"model {defn.name}, limit exit rate {report.limit_rate:.6g} (mean {1 / report.limit_rate:.6g})")
    print(f"{'epsilon':>10} {'n':>7} {'mean':>9} {'var':>9} {'l1':>8} {'KS':>8} {'p_right':>8} {'fail':>6}")
    for row in report.rows:
        mo, amp = row.moments, row.amplitude
        mean = f"{mo.mean:9.4f}" if mo else f"{'-':>9}"
        var = f"{mo.variance:9.4f}" if mo else f"{'-':>9}"
        pr = f"{amp.p_right:8.4f}" if amp else f"{'-':>8}"
        print(f"{row.epsilon:10.3g} {row.sample.n:7d} {mean} {var} {row.l1:8.4f} "
              f"{row.discrepancy:8.4f} {pr} {row.fail_fraction:6.2%}")
        if row.error:
            print(f"  epsilon={row.epsilon:g}: {row.error}")
    return EXIT_OK if report.ok else EXIT_REPLICAS


def cmd_validate(args: argparse.Namespace) -> int:
    from . import acceptance

    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "mskmc-out")
    out.mkdir(parents=True, exist_ok=True)
    only = [int(x) for x in args.only.split(",")] if args.only else None
    results = acceptance.run_all(only=only, presets_dir=args.presets_dir, workdir=out / "validate-work")
    for res in results:
        print(res.line())
    doc = {"passed": all(r.passed for r in results), "criteria": [r.as_dict() for r in results]}
    (out / "validation.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    failed = [r for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(f"#{r.number} {r.name}" for r in failed))
        return EXIT_CRITERION
    return EXIT_OK


def _read_header(path: str) -> tuple[str, dict]:
    command, config = None, None
    with open(path) as fh:
        for line in fh:
            if not (line.startswith("#") or line.startswith("//")):
                break
            body = line.lstrip("#/ ").rstrip("\n")
            key, _, value = body.partition(" = ")
            if key == "command":
                command = value
            elif key == "config":
                config = json.loads(value)
    if command is None or config is None:
        raise ConfigError(f"{path} has no run header")
    return command, config


def cmd_rerun(args: argparse.Namespace) -> int:
    command, config = _read_header(args.file)
    if command not in COMMANDS:
        raise ConfigError(f"cannot rerun command {command!r}")
    try:
        cfg = RunConfig(**config, out=args.out)
    except TypeError as exc:
        raise ConfigError(f"bad run header in {args.file}: {exc}") from exc
    cfg.validate()
    return COMMANDS[command](cfg)


COMMANDS = {"derive": cmd_derive, "simulate": cmd_simulate, "sweep": cmd_sweep}


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", help="bundled preset: two-macro-s2.3, ring-s3.2, energy-s4.3")
    g.add_argument("--model", help="path to a model definition file (TOML)")
    p.add_argument("--config", help="run config file (TOML); flags override it")
    for name in _PARAM_NAMES:
        typ = int if name == "m" else float
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None,
                       help=f"override model parameter {name}")
    p.add_argument("--x", type=int, default=None, help="initial micro-state / first particle word")
    p.add_argument("--z", type=int, default=None, help="initial macro-state / second particle word")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV} or ./mskmc-out)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mskmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derive", help="effective slow dynamics of a model")
    _model_flags(p)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--total-energy", dest="total_energy", type=float, default=None)

    p = sub.add_parser("simulate", help="simulate one trajectory to CSV")
    _model_flags(p)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stream-id", dest="stream_id", type=int, default=None)
    p.add_argument("--max-events", dest="max_events", type=int, default=None)

    p = sub.add_parser("sweep", help="exit-time statistics over a list of epsilons")
    _model_flags(p)
    p.add_argument("--epsilons", type=float, nargs="*", default=None)
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-events", dest="max_events", type=int, default=None)
    p.add_argument("--bin-width", dest="bin_width", type=float, default=None)
    p.add_argument("--num-bins", dest="num_bins", type=int, default=None)
    p.add_argument("--weighting", choices=["riemann", "paper_literal"], default=None)
    p.add_argument("--jobs", type=int, default=None, help="worker threads for replicas")

    p = sub.add_parser("validate", help="run the acceptance criteria")
    p.add_argument("--out", default=None)
    p.add_argument("--only", default=None, help="comma-separated criterion numbers")
    p.add_argument("--presets-dir", dest="presets_dir", default=None,
                   help="directory of preset TOML files replacing the bundled ones")

    p = sub.add_parser("rerun", help="replay the command recorded in an output file header")
    p.add_argument("file")
    p.add_argument("--out", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "rerun":
            return cmd_rerun(args)
        return COMMANDS[args.command](build_config(args))
    except NotIrreducible as exc:
        block = f" [{exc.block}]" if exc.block else ""
        print(f"error: not irreducible{block}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KMCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
