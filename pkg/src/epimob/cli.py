"""``epimob`` command line entry point.

Global options ``--config``, ``--seed`` and ``--out`` may appear before or
after the stage name. Stage options resolve in the order command line, then
the stage's table in the TOML config, then built-in defaults.

Exit codes: 0 success, 1 usage or processing error, 2 missing prerequisite,
3 parameter out of range.
"""
from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__, pipeline
from .errors import EpimobError, MissingPrerequisiteError, ParameterError

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_PARAM = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _date(text) -> dt.date:
    if isinstance(text, dt.date):
        return text
    try:
        return dt.date.fromisoformat(str(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


@dataclass(frozen=True)
class Opt:
    dest: str
    type: object = str
    default: object = None
    help: str = ""
    path: bool = False
    flag: bool = False
    aliases: tuple = ()

    @property
    def option(self):
        return "--" + self.dest.replace("_", "-")


STAGES = {
    "simulate": [
        Opt("scenario", path=True, help="scenario TOML ([scenario]/[mobility], or [ensemble])"),
        Opt("deterministic", flag=True, help="expected counts instead of Poisson draws"),
    ],
    "flows": [
        Opt("input", path=True, help="OD flows CSV (date,origin,destination,trips)"),
        Opt("hierarchy", path=True, help="unit hierarchy CSV"),
        Opt("level", str, "region", "output spatial level"),
        Opt("input_level", str, "municipality", "spatial level of the input rows"),
        Opt("threshold", int, 15, "suppress municipal records with fewer trips"),
        Opt("start", _date, None, "first day of the M_t series"),
        Opt("end", _date, None, "last day of the M_t series"),
    ],
    "rt": [
        Opt("cases", path=True, help="folder of case series (default <out>/cases)"),
        Opt("half_width", int, 4, "half-width of the case smoothing window"),
        Opt("ma_window", int, 7, "moving average applied to the posterior mean"),
        Opt("raw", flag=True, help="estimate on raw counts, skipping case smoothing"),
        Opt("iterations", int, 12000),
        Opt("burn_in", int, 2000),
        Opt("thinning", int, 5),
        Opt("proposal_sd", float, 0.3),
        Opt("r_max", float, 12.0),
        Opt("shape", float, 1.87, "generation-time gamma shape"),
        Opt("rate", float, 0.28, "generation-time gamma rate (1/day)"),
    ],
    "fda smooth": [
        Opt("start", _date, None, "window start (default: latest series start)"),
        Opt("end", _date, None, "window end (default: earliest series end)"),
        Opt("n_basis", int, 32),
        Opt("order", int, 4, "B-spline order"),
        Opt("rt", path=True, help="R_t series folder (default <out>/rt_mean)"),
        Opt("mobility", path=True, help="M_t series folder (default <out>/mobility)", aliases=("--mob",)),
    ],
    "fda fcc": [],
    "fda register": [
        Opt("cap", float, 20.0, "maximum absolute shift in days"),
        Opt("step", float, 0.5, "shift grid spacing in days"),
    ],
    "fof": [
        Opt("lag", float, 13.0, "lag of the reported slice"),
        Opt("level", float, 0.95, "pointwise band level"),
        Opt("ks", int, 10, "predictor basis size"),
        Opt("kt", int, 10, "response basis size"),
        Opt("pc1", path=True, help="covariate CSV; adds the first PC as a scalar predictor"),
        Opt("penalty", float, None, "fixed penalty instead of GCV"),
    ],
    "delay": [
        Opt("rt", path=True),
        Opt("mobility", path=True, aliases=("--mob",)),
        Opt("cases", path=True),
        Opt("population", path=True, help="CSV with unit_id,population", aliases=("--pop",)),
        Opt("as_of", _date, None, "incidence cut-off date (default 2020-05-15)"),
        Opt("baseline_start", _date, None, "default 2020-02-01"),
        Opt("baseline_end", _date, None, "default 2020-02-14"),
        Opt("mobility_ma", int, 7),
        Opt("fraction", float, 0.8, "reduction threshold as a fraction of baseline"),
    ],
    "report": [],
}

# keys of the [paths] table that feed stage options
PATH_KEYS = {"flows": "input", "hierarchy": "hierarchy", "cases": "cases", "population": "population"}


def _add_opts(parser, opts):
    for o in opts:
        if o.flag:
            parser.add_argument(o.option, *o.aliases, dest=o.dest, action="store_true", default=argparse.SUPPRESS, help=o.help)
        else:
            typ = Path if o.path else o.type
            parser.add_argument(o.option, *o.aliases, dest=o.dest, type=typ, default=argparse.SUPPRESS, help=o.help or None)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="TOML config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="run folder (default ./run)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="epimob", description="Mobility and transmission analysis pipeline.", parents=[common])
    parser.add_argument("--version", action="version", version=f"epimob {__version__}")
    sub = parser.add_subparsers(dest="stage", metavar="stage", parser_class=_Parser)
    sub.required = True
    for name, opts in STAGES.items():
        if " " in name:
            continue
        p = sub.add_parser(name, parents=[common], help=f"run the {name} stage")
        if name == "flows":
            p.add_argument("action", nargs="?", choices=["ingest"], help="optional, for readability")
        _add_opts(p, opts)
    fda = sub.add_parser("fda", help="functional data stages", parents=[common])
    fsub = fda.add_subparsers(dest="fda_stage", metavar="step", parser_class=_Parser)
    fsub.required = True
    for name in ("smooth", "fcc", "register"):
        p = fsub.add_parser(name, parents=[common], help=f"fda {name}")
        _add_opts(p, STAGES[f"fda {name}"])
    return parser


def load_config(path) -> tuple[dict, Path]:
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(path, "config file")
    try:
        return tomllib.loads(path.read_text()), path.parent
    except tomllib.TOMLDecodeError as exc:
        raise ParameterError(f"{path}: {exc}") from None


def _section(config: dict, stage: str) -> dict:
    node = config
    for part in stage.split():
        node = node.get(part, {}) if isinstance(node, dict) else {}
    return {k: v for k, v in node.items() if not isinstance(v, dict)} if isinstance(node, dict) else {}


def resolve(stage: str, cli: dict, config: dict, base: Path) -> dict:
    """Merge defaults, config and command line values for ``stage``."""
    opts = {o.dest: o for o in STAGES[stage]}
    values = {d: o.default if not o.flag else False for d, o in opts.items()}
    paths = config.get("paths", {})
    for key, dest in PATH_KEYS.items():
        if key in paths and dest in opts:
            values[dest] = base / paths[key]
    section = _section(config, stage)
    unknown = set(section) - set(opts)
    if unknown:
        raise ParameterError(f"unknown keys in [{stage.replace(' ', '.')}]: {sorted(unknown)}")
    for k, v in section.items():
        o = opts[k]
        try:
            values[k] = base / v if o.path else (bool(v) if o.flag else o.type(v))
        except (ValueError, TypeError, argparse.ArgumentTypeError) as exc:
            raise ParameterError(f"[{stage}] {k}: {exc}") from None
    values.update({k: v for k, v in cli.items() if k in opts})
    return values


def run_stage(stage: str, root: Path, seed: int | None, p: dict) -> pipeline.StageResult:
    if stage == "simulate":
        if p["scenario"] is None:
            raise UsageError("simulate needs --scenario")
        return pipeline.simulate(root, p["scenario"], seed, p["deterministic"])
    if stage == "flows":
        if p["input"] is None:
            raise UsageError("flows needs --input")
        return pipeline.flows_ingest(
            root, p["input"], p["hierarchy"], p["level"], p["threshold"], p["input_level"], p["start"], p["end"]
        )
    if stage == "rt":
        return pipeline.rt(
            root,
            p["cases"],
            seed or 0,
            p["half_width"],
            p["ma_window"],
            not p["raw"],
            p["iterations"],
            p["burn_in"],
            p["thinning"],
            p["proposal_sd"],
            p["r_max"],
            p["shape"],
            p["rate"],
        )
    if stage == "fda smooth":
        return pipeline.fda_smooth(root, p["start"], p["end"], p["n_basis"], p["rt"], p["mobility"], order=p["order"])
    if stage == "fda fcc":
        return pipeline.fda_fcc(root)
    if stage == "fda register":
        return pipeline.fda_register(root, p["cap"], p["step"])
    if stage == "fof":
        return pipeline.fof(root, p["lag"], p["level"], p["ks"], p["kt"], p["pc1"], p["penalty"])
    if stage == "delay":
        kw = {k: p[k] for k in ("as_of", "baseline_start", "baseline_end") if p[k] is not None}
        return pipeline.delay(
            root, p["rt"], p["mobility"], p["cases"], p["population"], mobility_ma=p["mobility_ma"], fraction=p["fraction"], **kw
        )
    if stage == "report":
        return pipeline.report(root)
    raise UsageError(f"unknown stage {stage!r}")  # pragma: no cover


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help, --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.get("verbose") else logging.WARNING, format="%(levelname)s %(message)s")
    stage = args.pop("stage")
    args.pop("action", None)
    if stage == "fda":
        stage = f"fda {args.pop('fda_stage')}"
    try:
        config, base = load_config(args["config"]) if "config" in args else ({}, Path.cwd())
        seed = args.get("seed", config.get("seed"))
        if seed is not None and (not isinstance(seed, int) or seed < 0):
            raise ParameterError("seed must be a non-negative integer")
        out = args.get("out") or (base / config["paths"]["out"] if "out" in config.get("paths", {}) else Path("run"))
        params = resolve(stage, args, config, base)
        result = run_stage(stage, Path(out), seed, params)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"epimob: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingPrerequisiteError as exc:
        print(f"epimob: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ParameterError as exc:
        print(f"epimob: parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except EpimobError as exc:
        print(f"epimob: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"{result.stage}: wrote {len(result.outputs)} files under {out}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
