"""Command-line entry point: ``ionladder <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 computation error,
4 file-system error, 64 usage error.  Failures print one JSON object on
stderr: ``{"error": {"type", "code", "id", "message"}}`` where ``id`` is the
stable error identifier of the exception class.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import config as config_mod
from . import figures, runs
from .exceptions import ComputeError, ConfigError, IonLadderError
from .output import RunWriter, json_text, plain

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPUTE = 3
EXIT_IO = 4
EXIT_USAGE = 64


class UsageError(IonLadderError):
    code = "usage_error"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


COMMANDS = {
    "equilibrium": runs.cmd_equilibrium,
    "modes": runs.cmd_modes,
    "couplings": runs.cmd_couplings,
    "dynamics": runs.cmd_dynamics,
    "ed-scan": runs.cmd_ed_scan,
    "errors": runs.cmd_errors,
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (or a manifest.json)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config entry, e.g. trap.n_ions=5 (repeatable)")
    common.add_argument("--seed", type=int, help="random seed (default: config rng_seed)")
    common.add_argument("--threads", type=int, help="worker processes for parameter grids")
    common.add_argument("--out", help=f"output root (default: ${config_mod.OUTPUT_ENV} "
                                      "or config output_dir)")
    common.add_argument("--json", action="store_true", help="print the summary as JSON")
    common.add_argument("--plot", action="store_true", help="also render PNG plots")

    parser = _Parser(prog="ionladder", description="Trapped-ion ladder simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("equilibrium", parents=[common], help="crystal equilibrium and legs")
    sub.add_parser("modes", parents=[common], help="transverse and planar normal modes")
    p = sub.add_parser("couplings", parents=[common], help="spin-spin coupling matrices")
    p.add_argument("--phi", metavar="I-J=VALUE",
                   help="choose theta so that ions I and J see phase VALUE (rad)")
    sub.add_parser("dynamics", parents=[common], help="full vs effective spin dynamics")
    p = sub.add_parser("ed-scan", parents=[common], help="exact-diagonalization phase scan")
    p.add_argument("--L", type=int, help="number of spins")
    p.add_argument("--f2", help="grid: value, list a,b,c or start:stop:step")
    p.add_argument("--g", help="grid: value, list a,b,c or start:stop:step")
    p.add_argument("--mode", choices=("scan", "tied"))
    p = sub.add_parser("errors", parents=[common], help="error budget")
    p.add_argument("--parts", help="comma list from " + ",".join(runs.ERROR_PARTS))
    p = sub.add_parser("reproduce", parents=[common], help="canned figure bundle")
    p.add_argument("figure", help="one of " + ", ".join(figures.FIGURES))
    p = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    return parser


def _load_config(path):
    return config_mod.default_config() if path is None else config_mod.load(path)


OPTION_KEYS = ("phi", "L", "f2", "g", "mode", "parts", "figure", "plot")


def execute(command, cfg, options, out=None):
    """Run one command on a validated config; returns (summary, directory)."""
    seed = int(cfg["rng_seed"])
    threads = int(cfg["threads"])
    resolved = config_mod.resolve(cfg)
    root = config_mod.output_root(cfg, out)
    if command == "reproduce":
        fig = options.get("figure")
        if fig not in figures.FIGURES:
            raise UsageError(f"unknown figure id {fig!r}; choose from {list(figures.FIGURES)}")
        writer = RunWriter(root, f"reproduce-{fig}")
        summary, series = figures.FIGURES[fig](resolved, writer, seed=seed, threads=threads)
        if options.get("plot") and series:
            from .plotting import render

            writer.binary(f"{fig}.png", render(fig, series))
    else:
        writer = RunWriter(root, command)
        kwargs = {k: v for k, v in options.items() if k in OPTION_KEYS and v is not None}
        summary = COMMANDS[command](resolved, writer, seed=seed, threads=threads, **kwargs)
        if options.get("plot"):
            series = _command_series(command, writer)
            if series:
                from .plotting import render

                writer.binary(f"{command}.png", render(command, series))
    args = {"command": command, **{k: v for k, v in options.items() if v is not None}}
    directory = writer.commit(cfg, args, seed)
    return summary, directory


def _command_series(command, writer):
    """Series for plain commands, read back from the staged CSV text."""
    import csv
    import io

    def table(name):
        data = writer.files.get(name)
        if data is None:
            return []
        return list(csv.DictReader(io.StringIO(data.decode())))

    if command == "equilibrium":
        rows = table("crystal.csv")
        return [{"panel": "crystal", "name": "ions", "x": [float(r["z"]) for r in rows],
                 "y": [float(r["x"]) for r in rows], "xlabel": "z", "ylabel": "x",
                 "style": "scatter"}]
    if command == "modes":
        rows = table("branch_plot.csv")
        out = []
        for branch in ("planar", "transverse"):
            sel = [r for r in rows if r["branch"] == branch]
            out.append({"panel": "branches", "name": branch,
                        "x": [float(r["mode"]) for r in sel],
                        "y": [float(r["frequency"]) for r in sel],
                        "xlabel": "mode", "ylabel": "frequency (rad/s)", "style": "scatter"})
        return out
    if command == "dynamics":
        out = []
        for name in ("full", "effective"):
            rows = table(f"dynamics_{name}.csv")
            for ion in sorted({r["ion"] for r in rows}):
                sel = [r for r in rows if r["ion"] == ion]
                out.append({"panel": "spins", "name": f"{name} ion {ion}",
                            "x": [float(r["t"]) for r in sel],
                            "y": [float(r["mean"]) for r in sel],
                            "xlabel": "t (s)", "ylabel": "<sigma^x>", "style": "line"})
        return out
    if command == "ed-scan":
        rows = table("phase_map.csv")
        out = []
        for f2 in sorted({r["f2"] for r in rows}, key=float):
            sel = [r for r in rows if r["f2"] == f2]
            for key in ("S_0", "S_pi_over_2"):
                out.append({"panel": key, "name": f"f2={float(f2):g}",
                            "x": [float(r["g"]) for r in sel],
                            "y": [float(r[key]) for r in sel],
                            "xlabel": "g", "ylabel": key, "style": "line"})
        return out
    return []


def _prepare(args):
    cfg = _load_config(args.config)
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"rng_seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    return config_mod.apply_overrides(cfg, overrides)


def _rerun(args):
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("manifest_version") != 1:
        raise ConfigError("not an ionladder manifest")
    cfg = config_mod.validate(manifest["config"])
    stored = dict(manifest.get("arguments", {}))
    command = stored.pop("command", manifest.get("command"))
    return command, cfg, stored


def _error(exc, code):
    payload = {"error": {"type": type(exc).__name__, "code": code,
                         "id": "io_error" if isinstance(exc, OSError)
                         else getattr(exc, "code", "compute_error"), "message": str(exc)}}
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "rerun":
            command, cfg, options = _rerun(args)
        else:
            command = args.command
            cfg = _prepare(args)
            options = {k: getattr(args, k, None) for k in OPTION_KEYS}
            options = {k: v for k, v in options.items() if v not in (None, False)}
        summary, directory = execute(command, cfg, options, args.out)
    except UsageError as exc:
        return _error(exc, EXIT_USAGE)
    except ConfigError as exc:
        return _error(exc, EXIT_CONFIG)
    except (ComputeError, ValueError, ArithmeticError, MemoryError) as exc:
        return _error(exc, EXIT_COMPUTE)
    except OSError as exc:
        return _error(exc, EXIT_IO)
    if args.json:
        sys.stdout.write(json_text({"command": command, "directory": directory,
                                    "summary": summary}))
    else:
        sys.stdout.write(f"{command}: wrote {directory}\n")
        for key, value in plain(summary).items():
            sys.stdout.write(f"  {key}: {value}\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
