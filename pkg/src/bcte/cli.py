"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 solver failure, 4 runtime failure.  ``BCTE_WORKERS`` sets the default
worker count for ``run``.

Config files are INI documents::

    [instance]
    model = bernoulli
    means = 0.3, 0.21, 0.2, 0.19, 0.18
    ; sigma2 = 1.0   (gaussian)    scale = 1.0   (pareto)

    [experiment]
    policies = bcte, tasd, t3c, rr
    deltas = 0.1, 0.01
    n_runs = 100
    master_seed = 0
    threshold = heuristic          ; or: deviational 5 1.2
    horizon_cap = 1000000

    [output]
    directory = out
    formats = jsonl, csv

Command-line flags override the file.  ``run`` writes ``effective.ini`` next to
its results; feeding it back through ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import shutil
import sys
from dataclasses import dataclass, field

from . import characteristic as ch
from . import harness
from .models import Instance, make_model
from .policies import parse_policy, policy_key
from .stopping import Deviational, HeuristicLogLog

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER, EXIT_RUNTIME = 0, 1, 2, 3, 4

SCHEMA = {
    "instance": ("model", "means", "sigma2", "scale"),
    "experiment": ("policies", "deltas", "n_runs", "master_seed", "threshold", "horizon_cap"),
    "output": ("directory", "formats"),
}
DEFAULT_DELTAS = (0.2, 0.1, 0.01, 0.001)
FORMATS = ("jsonl", "csv")


class ConfigError(ValueError):
    pass


def fmt(x: float) -> str:
    """Display rounding: four significant digits."""
    return f"{x:.4g}"


def fmt_vec(xs) -> str:
    return "(" + ", ".join(fmt(x) for x in xs) + ")"


def _floats(text: str) -> list[float]:
    parts = [p for p in text.replace(",", " ").split()]
    if not parts:
        raise ValueError("empty list")
    return [float(p) for p in parts]


def parse_threshold(text: str):
    """``heuristic`` or ``deviational [c [alpha]]``; separators may be spaces, commas or colons."""
    tok = text.replace(",", " ").replace(":", " ").split()
    if not tok:
        raise ValueError("empty threshold")
    kind, args = tok[0].lower(), tok[1:]
    if kind == "heuristic" and not args:
        return HeuristicLogLog()
    if kind == "deviational" and len(args) <= 2:
        c = float(args[0]) if args else None
        alpha = float(args[1]) if len(args) > 1 else 1.2
        return Deviational(c, alpha)
    raise ValueError(f"unknown threshold {text!r}")


def threshold_text(kind) -> str:
    if isinstance(kind, Deviational):
        return "deviational" if kind.c is None else f"deviational {kind.c!r} {kind.alpha!r}"
    return "heuristic"


@dataclass
class Settings:
    """Everything a command needs, merged from config file and flags."""

    model: str | None = None
    means: list[float] | None = None
    sigma2: float | None = None
    scale: float | None = None
    policies: list[str] = field(default_factory=lambda: ["bcte"])
    deltas: list[float] = field(default_factory=lambda: list(DEFAULT_DELTAS))
    n_runs: int = 100
    master_seed: int = 0
    threshold: str = "heuristic"
    horizon_cap: int = harness.DEFAULT_HORIZON_CAP
    directory: str | None = None
    formats: list[str] = field(default_factory=lambda: list(FORMATS))

    def instance(self) -> Instance:
        if self.model is None or self.means is None:
            raise ConfigError("an instance needs both a model and means")
        try:
            model = make_model(self.model, sigma2=self.sigma2, scale=self.scale)
            return Instance(model, self.means)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid instance: {exc}") from exc

    def threshold_kind(self):
        try:
            return parse_threshold(self.threshold)
        except ValueError as exc:
            raise ConfigError(f"threshold: {exc}") from exc

    def experiment(self) -> harness.ExperimentConfig:
        inst = self.instance()
        try:
            policies = tuple(parse_policy(p) for p in self.policies)
        except ValueError as exc:
            raise ConfigError(f"policies: {exc}") from exc
        keys = [policy_key(p) for p in policies]
        if len(set(keys)) != len(keys):
            raise ConfigError("policies: duplicate policy")
        try:
            return harness.ExperimentConfig(inst, policies, tuple(self.deltas), self.n_runs,
                                            self.master_seed, self.threshold_kind(), self.horizon_cap)
        except ValueError as exc:
            raise ConfigError(f"experiment: {exc}") from exc

    def dump(self) -> str:
        """Effective configuration as INI text at full precision."""
        lines = ["[instance]", f"model = {self.model}", "means = " + ", ".join(repr(m) for m in self.means)]
        if self.sigma2 is not None:
            lines.append(f"sigma2 = {self.sigma2!r}")
        if self.scale is not None:
            lines.append(f"scale = {self.scale!r}")
        lines += [
            "", "[experiment]",
            "policies = " + ", ".join(self.policies),
            "deltas = " + ", ".join(repr(d) for d in self.deltas),
            f"n_runs = {self.n_runs}",
            f"master_seed = {self.master_seed}",
            f"threshold = {self.threshold}",
            f"horizon_cap = {self.horizon_cap}",
            "", "[output]",
            f"directory = {self.directory or ''}",
            "formats = " + ", ".join(self.formats),
        ]
        return "\n".join(lines) + "\n"


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of each ``section.key`` so value errors can point at the file."""
    out, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif line and line[0] not in "#;" and section is not None:
            for sep in ("=", ":"):
                if sep in line:
                    out[(section, line.split(sep, 1)[0].strip().lower())] = no
                    break
    return out


_CONVERTERS = {
    "model": str.strip,
    "means": _floats,
    "sigma2": float,
    "scale": float,
    "policies": lambda s: [p.strip() for p in s.split(",") if p.strip()],
    "deltas": _floats,
    "n_runs": int,
    "master_seed": int,
    "threshold": str.strip,
    "horizon_cap": int,
    "directory": lambda s: s.strip() or None,
    "formats": lambda s: [p.strip().lower() for p in s.split(",") if p.strip()],
}


def load_config(path: str, settings: Settings | None = None) -> Settings:
    settings = settings or Settings()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from exc
    lines = _key_lines(text)
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in parser.items(section):
            where = f"{path}, line {lines.get((section, key), '?')}, field {section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}: unknown key")
            try:
                setattr(settings, key, _CONVERTERS[key](value))
            except ValueError as exc:
                raise ConfigError(f"{where}: {exc}") from exc
            if key == "formats" and not set(settings.formats) <= set(FORMATS):
                raise ConfigError(f"{where}: formats must be drawn from {', '.join(FORMATS)}")
            if key == "threshold":
                try:
                    parse_threshold(settings.threshold)
                except ValueError as exc:
                    raise ConfigError(f"{where}: {exc}") from exc
    return settings


def settings_from_args(args) -> Settings:
    s = load_config(args.config) if getattr(args, "config", None) else Settings()
    try:
        if getattr(args, "model", None):
            s.model = args.model
        if getattr(args, "means", None):
            s.means = _floats(args.means)
        if getattr(args, "sigma2", None) is not None:
            s.sigma2 = args.sigma2
        if getattr(args, "scale", None) is not None:
            s.scale = args.scale
        if getattr(args, "policies", None):
            s.policies = [p.strip() for p in args.policies.split(",") if p.strip()]
        if getattr(args, "deltas", None):
            s.deltas = _floats(args.deltas)
        if getattr(args, "runs", None) is not None:
            s.n_runs = args.runs
        if getattr(args, "seed", None) is not None:
            s.master_seed = args.seed
        if getattr(args, "threshold", None):
            s.threshold = args.threshold
        if getattr(args, "horizon_cap", None) is not None:
            s.horizon_cap = args.horizon_cap
        if getattr(args, "out", None):
            s.directory = args.out
    except ValueError as exc:
        raise ConfigError(f"command line: {exc}") from exc
    return s


# ---------------------------------------------------------------------------
# commands


def times_csv(rows: list[tuple[str, str]]) -> str:
    return "quantity,value\n" + "".join(f"{k},{v}\n" for k, v in rows)


def cmd_times(args) -> int:
    s = settings_from_args(args)
    inst = s.instance()
    kind = s.threshold_kind().resolve(inst.K)
    for d in s.deltas:
        if not 0 < d < 1:
            raise ConfigError(f"delta {d!r} outside (0, 1)")
    times = ch.characteristic_times(inst)
    out = sys.stdout
    out.write(f"model      {inst.model.name} {inst.model.params() or ''}".rstrip() + "\n")
    out.write(f"means      {fmt_vec(inst.means)}\n")
    out.write(f"T*         {fmt(times.t_star)}\n")
    out.write(f"w*         {fmt_vec(times.w_star)}\n")
    out.write(f"T^1/2      {fmt(times.t_beta)}\n")
    out.write(f"T_lower    {fmt(times.t_lower)}\n")
    out.write(f"gamma      {fmt(times.gamma)}\n")
    out.write(f"w_lower    {fmt_vec(times.w_lower)}\n")
    out.write(f"threshold  {kind.describe()}\n")
    rows = [("t_star", repr(times.t_star)), ("t_half", repr(times.t_beta)),
            ("t_lower", repr(times.t_lower)), ("gamma", repr(times.gamma))]
    rows += [(f"w_star_{i + 1}", repr(w)) for i, w in enumerate(times.w_star)]
    rows += [(f"w_lower_{i + 1}", repr(w)) for i, w in enumerate(times.w_lower)]
    out.write(f"{'delta':>8} {'LB':>10} {'PLB':>10}\n")
    for d in s.deltas:
        lb = harness.lower_bound(inst, d, times.t_star)
        plb = harness.practical_lower_bound(inst, d, kind, times.t_star)
        out.write(f"{fmt(d):>8} {fmt(lb):>10} {plb:>10d}\n")
        rows += [(f"lb_{d!r}", repr(lb)), (f"plb_{d!r}", str(plb))]
    if s.directory:
        os.makedirs(s.directory, exist_ok=True)
        with open(os.path.join(s.directory, "times.csv"), "w") as fh:
            fh.write(times_csv(rows))
    return EXIT_OK


def cmd_run(args) -> int:
    s = settings_from_args(args)
    config = s.experiment()
    if not s.directory:
        raise ConfigError("run needs an output directory (--out or [output] directory)")
    workers = args.workers if args.workers is not None else harness.default_workers()
    out_dir = s.directory
    created = not os.path.exists(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []
    try:
        records = harness.run_experiment(config, workers=workers, timing=args.timing)
        keys = [policy_key(p) for p in config.policies]
        aggs = harness.aggregate(records)
        path = os.path.join(out_dir, "effective.ini")
        written.append(path)
        with open(path, "w") as fh:
            fh.write(s.dump())
        if "jsonl" in s.formats:
            path = os.path.join(out_dir, "runs.jsonl")
            written.append(path)
            harness.write_records(records, path)
        if "csv" in s.formats:
            path = os.path.join(out_dir, "aggregates.csv")
            written.append(path)
            with open(path, "w") as fh:
                fh.write(harness.aggregates_csv(aggs, keys))
    except BaseException:
        _cleanup(out_dir, written, created)
        raise
    print(f"{'policy':<10} {'delta':>8} {'n':>6} {'mean_tau':>10} {'stderr':>8} {'error':>8} {'trunc':>6}")
    for a in aggs:
        print(f"{a.policy:<10} {fmt(a.delta):>8} {a.n:>6} {fmt(a.mean_tau):>10} {fmt(a.stderr):>8} "
              f"{fmt(a.error_rate):>8} {a.truncated:>6}")
    print(f"wrote {len(records)} records to {out_dir}")
    return EXIT_OK


def _cleanup(out_dir: str, written: list[str], created: bool) -> None:
    for path in written:
        try:
            os.remove(path)
        except OSError:
            pass
    if created:
        shutil.rmtree(out_dir, ignore_errors=True)


def cmd_sweep(args) -> int:
    try:
        models = [make_model(m.strip(), sigma2=args.sigma2, scale=args.scale)
                  for m in args.models.split(",") if m.strip()]
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"models: {exc}") from exc
    if args.kmin < 2 or args.kmax < args.kmin:
        raise ConfigError("need 2 <= kmin <= kmax")
    try:
        harness.family_means(args.family, 2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows, dropped = harness.ratio_sweep(models, args.family, range(args.kmin, args.kmax + 1))
    text = harness.sweep_csv(rows)
    if args.out:
        path = args.out if args.out.endswith(".csv") else os.path.join(args.out, f"sweep_{args.family}.csv")
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        try:
            with open(path, "w") as fh:
                fh.write(text)
        except BaseException:
            if os.path.exists(path):
                os.remove(path)
            raise
        print(f"wrote {len(rows)} rows to {path}")
    else:
        sys.stdout.write(text)
    for name, K, why in dropped:
        print(f"dropped {name} K={K}: {why}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import run_all

    checks = run_all()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<42} {c.seconds:6.1f}s  {c.detail}")
    n_ok = sum(c.passed for c in checks)
    print(f"{n_ok}/{len(checks)} properties hold")
    return EXIT_OK if n_ok == len(checks) else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


def _instance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="INI config file")
    p.add_argument("--model", help="bernoulli, gaussian, poisson, exponential or pareto")
    p.add_argument("--means", help="comma-separated arm means")
    p.add_argument("--sigma2", type=float, help="Gaussian variance")
    p.add_argument("--scale", type=float, help="Pareto scale")
    p.add_argument("--deltas", help="comma-separated confidence levels")
    p.add_argument("--threshold", help="'heuristic' or 'deviational [c [alpha]]'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcte", description="Fixed-confidence best-arm identification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("times", help="characteristic times and lower bounds of an instance")
    _instance_flags(p)
    p.add_argument("--out", metavar="DIR", help="also write times.csv here")
    p.set_defaults(func=cmd_times)

    p = sub.add_parser("run", help="replicated runs to stopping")
    _instance_flags(p)
    p.add_argument("--policies", help="comma-separated: bcte, tasd, t3c[:beta], rr")
    p.add_argument("--runs", type=int, help="runs per (policy, delta)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--horizon-cap", type=int, dest="horizon_cap")
    p.add_argument("--workers", type=int, help="worker processes (default: $BCTE_WORKERS or CPU count)")
    p.add_argument("--timing", action="store_true", help="record wall-clock ns per step")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="T_lower/T* and T^1/2/T* along an instance family")
    p.add_argument("--family", default="mu1", choices=("mu1", "mu2", "worst"))
    p.add_argument("--models", default="bernoulli,gaussian,poisson,exponential")
    p.add_argument("--sigma2", type=float)
    p.add_argument("--scale", type=float)
    p.add_argument("--kmin", type=int, default=2)
    p.add_argument("--kmax", type=int, default=50)
    p.add_argument("--out", metavar="PATH", help="CSV file or directory (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="run the invariant suite")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ch.SolverError as exc:
        detail = "" if math.isnan(exc.residual) else f" (residual {exc.residual:.3g})"
        print(f"solver error: {exc}{detail}", file=sys.stderr)
        return EXIT_SOLVER
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
