"""Command-line interface: ``metasinr curve | table | compare``.

Thresholds are given in dB on the command line (``theta = 10^(dB/10)``)
and lists accept either ``a,b,c`` or an inclusive ``start:stop:step``
range.  Exit codes: 0 success, 2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata

import numpy as np

from . import metadist, simkit
from .errors import ConfigurationError, ConvergenceError, DomainError
from .geometry import MCP, PLCP, PPP, Bipolar, ChannelModel, KTier

CLI_METHODS = {
    "proposed": "proposed",
    "proposed-j": "proposed_j",
    "beta": "beta",
    "exact": "exact_gilpelaez",
    "nearest-only": "nearest_only",
    "sim": "simulation",
}
TABLE_THETAS_DB = (-10.0, 0.0, 12.0)
CSV_COLUMNS = ("theta_db", "gamma", "method", "value", "std_err")


class UsageError(Exception):
    """Bad or incompatible command-line options."""


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunManifest:
    """Everything needed to reproduce one command's output."""

    command: str
    params: dict
    seed: int | None
    tool_version: str = field(default_factory=tool_version)
    wall_time: float = 0.0

    def to_dict(self, with_time: bool = True) -> dict:
        d = asdict(self)
        if not with_time:
            d.pop("wall_time")
        return d


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------

def parse_values(text: str) -> list[float]:
    """``"1,2,3"`` or inclusive ``"start:stop:step"``."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
                raise ValueError
            start, stop, step = parts
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            # round away binary noise so 0.1:0.9:0.1 yields 0.3, not 0.30000000000000004
            return [round(start + k * step, 12) for k in range(n)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"cannot parse value list {text!r}") from None


def parse_tiers(text: str) -> tuple:
    try:
        tiers = []
        for item in text.split(","):
            lam, pt = item.split(":")
            tiers.append((float(lam), float(pt)))
        return tuple(tiers)
    except ValueError:
        raise UsageError(f"--tiers expects lambda:power,lambda:power,..., got {text!r}") from None


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def build_model(args):
    kind = args.model
    try:
        if kind == "ppp":
            return PPP(args.lam)
        if kind == "bipolar":
            return Bipolar(args.lam, args.bipolar_r)
        if kind == "mcp":
            return MCP(args.lam, args.rc)
        if kind == "ktier":
            if not args.tiers:
                raise UsageError("--model ktier needs --tiers")
            return KTier(parse_tiers(args.tiers))
        if kind == "plcp":
            return PLCP(args.lambda_l, args.lambda_p)
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    raise UsageError(f"unknown model {kind!r}")


def build_channel(args) -> ChannelModel:
    try:
        return ChannelModel(args.alpha, args.pt, args.sigma2)
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def check_method(method: str, model) -> None:
    if isinstance(model, PLCP) and method in ("beta", "exact_gilpelaez"):
        raise UsageError(f"--method {method} is not available for PLCP: its moments are not "
                         "derived analytically (use proposed or sim)")
    if method == "proposed_j" and not isinstance(model, (PPP, KTier)):
        raise UsageError("--method proposed-j supports only the PPP (and K-tier) models")


def _fmt(x) -> str:
    return "" if x is None else f"{x:.12g}"


# ---------------------------------------------------------------------------
# Curve evaluation
# ---------------------------------------------------------------------------

def curve_rows(model, channel, thetas_db, gammas, method, args) -> list[tuple]:
    """Rows ``(theta_db, gamma, method, value, std_err)`` for one method."""
    quad = metadist.QuadratureSpec()
    thetas = [db_to_linear(t) for t in thetas_db]
    if method == "simulation":
        cfg = simkit.SimulationConfig(args.realizations, args.links, args.window, args.seed,
                                      tuple(sorted(set(gammas))))
        sims = simkit.simulate_meta_multi(model, channel, thetas, cfg)
        rows = []
        for tdb, sim in zip(thetas_db, sims):
            vals = sim.ccdf_at(gammas)
            se = np.sqrt(vals * (1 - vals) / sim.n_samples)
            rows.extend((tdb, g, method, float(v), float(s)) for g, v, s in zip(gammas, vals, se))
        return rows
    curve = metadist.evaluate_curve(model, channel, thetas, gammas, method, quad,
                                    j=args.j, mean_field=args.plcp_interference)
    return [(tdb, g, method, v, None)
            for tdb, (_, g), v in zip([t for t in thetas_db for _ in gammas], curve.grid, curve.values)]


def write_csv(rows, handle) -> None:
    w = csv.writer(handle, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for tdb, g, m, v, s in rows:
        w.writerow((_fmt(tdb), _fmt(g), m, _fmt(v), _fmt(s)))


def _emit(text: str, out: str | None, manifest: RunManifest | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
        if manifest is not None:
            with open(out + ".manifest.json", "w") as fh:
                json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
    else:
        sys.stdout.write(text)


def _model_params(args) -> dict:
    keys = ("model", "lam", "bipolar_r", "rc", "tiers", "lambda_l", "lambda_p", "alpha", "pt",
            "sigma2", "theta_db", "gamma", "method", "j", "plcp_interference", "seed",
            "realizations", "links", "window")
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def cmd_curve(args) -> int:
    start = time.perf_counter()
    model = build_model(args)
    channel = build_channel(args)
    method = CLI_METHODS[args.method[0] if isinstance(args.method, list) else args.method]
    check_method(method, model)
    thetas_db = parse_values(args.theta_db)
    gammas = parse_values(args.gamma)
    _check_gammas(gammas)
    rows = curve_rows(model, channel, thetas_db, gammas, method, args)
    buf = io.StringIO()
    write_csv(rows, buf)
    manifest = RunManifest("curve", _model_params(args), args.seed)
    manifest.wall_time = time.perf_counter() - start
    _emit(buf.getvalue(), args.out, manifest)
    return 0


def _check_gammas(gammas):
    if not gammas or any(not 0 < g < 1 for g in gammas):
        raise UsageError("gamma values must lie in (0, 1)")


# ---------------------------------------------------------------------------
# Compare
# ---------------------------------------------------------------------------

def cmd_compare(args) -> int:
    start = time.perf_counter()
    if not args.method or len(args.method) != 2:
        raise UsageError("compare needs exactly two --method values")
    model = build_model(args)
    channel = build_channel(args)
    methods = [CLI_METHODS[m] for m in args.method]
    for m in methods:
        check_method(m, model)
    thetas_db = parse_values(args.theta_db)
    if len(thetas_db) != 1:
        raise UsageError("compare works on a single --theta-db value")
    gammas = sorted(set(parse_values(args.gamma)))
    _check_gammas(gammas)
    curves = []
    for m in methods:
        rows = curve_rows(model, channel, thetas_db, gammas, m, args)
        curves.append((np.array(gammas), np.array([r[3] for r in rows])))
    report = simkit.compare(curves[0], curves[1], methods[0], methods[1])
    manifest = RunManifest("compare", _model_params(args), args.seed)
    out = report.to_dict()
    out["theta_db"] = thetas_db[0]
    # the embedded manifest leaves out wall time so reruns stay byte-identical
    out["manifest"] = manifest.to_dict(with_time=False)
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    manifest.wall_time = time.perf_counter() - start
    _emit(text, args.out, manifest)
    return 0


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def table_configs(table: int) -> list[tuple[str, object, ChannelModel, list[str]]]:
    """``(label, model, channel, rows)`` for each column of a KL table."""
    base = dict(pt=10.0, sigma2=1e-9)
    if table == 1:
        cfgs = [(f"alpha={a}", PPP(1.0), ChannelModel(a, **base)) for a in (2.5, 3.0, 3.5, 4.0)]
        cfgs += [(f"alpha=4,lambda={lam}", PPP(lam), ChannelModel(4.0, **base))
                 for lam in (0.1, 0.5, 5.0, 10.0)]
        return [(lbl, m, ch, ["prop", "beta"]) for lbl, m, ch in cfgs]
    if table == 2:
        return [(f"R={r}m", Bipolar(10.0, r / 1000.0), ChannelModel(4.0, **base), ["prop", "beta"])
                for r in (15, 30, 45, 60, 75, 100, 125, 150)]
    if table == 3:
        return [(f"rc={r}m", MCP(1.0, r / 1000.0), ChannelModel(4.0, **base), ["prop", "beta"])
                for r in (100, 150, 200, 250, 300, 350, 400)]
    if table == 4:
        return [("lambda_l=1.6/pi,lambda_p=1", PLCP(1.6 / math.pi, 1.0), ChannelModel(4.0, **base),
                 ["prop", "prop(PPP)", "TPPP"]),
                ("lambda_l=8/pi,lambda_p=0.2", PLCP(8 / math.pi, 0.2), ChannelModel(4.0, **base),
                 ["prop", "prop(PPP)", "TPPP"])]
    raise UsageError(f"--table must be 1, 2, 3 or 4, got {table!r}")


def table_entries(table: int, seed: int, scale: float, convention: str,
                  links: int = 500) -> list[tuple]:
    """``(config, theta_db, row, value)`` for every cell of a KL table.

    ``value`` is ``None`` for the out-of-scope TPPP row.
    """
    quad = metadist.QuadratureSpec()
    n_real = max(1, int(round(100 * scale)))
    cfg = simkit.SimulationConfig(n_real, links, None, seed)
    gammas = np.array(cfg.gamma_grid)
    entries = []
    for label, model, channel, rows in table_configs(table):
        thetas = [db_to_linear(t) for t in TABLE_THETAS_DB]
        sims = simkit.simulate_meta_multi(model, channel, thetas, cfg)
        for tdb, th, sim in zip(TABLE_THETAS_DB, thetas, sims):
            for row in rows:
                if row == "TPPP":
                    entries.append((label, tdb, row, None))
                    continue
                if row == "beta":
                    m1 = metadist.moment_b(model, channel, th, 1, quad).real
                    m2 = metadist.moment_b(model, channel, th, 2, quad).real
                    vals = [metadist.beta_meta_from_moments(m1, m2, g) for g in gammas]
                else:
                    mode = "ppp-approx" if row == "prop(PPP)" else "auto"
                    vals = [metadist.proposed_meta(model, channel, metadist.MetaQuery(th, g),
                                                   quad, mode) for g in gammas]
                kl = simkit.kl_divergence((gammas, np.array(vals)), sim, convention)
                entries.append((label, tdb, row, kl))
    return entries


def format_table(table: int, entries) -> str:
    labels = list(dict.fromkeys(e[0] for e in entries))
    row_keys = list(dict.fromkeys((e[1], e[2]) for e in entries))
    lookup = {(e[0], e[1], e[2]): e[3] for e in entries}
    head = ["row"] + labels
    lines = []
    for tdb, row in row_keys:
        name = f"D_KL,{row}|exact (theta={tdb:g} dB)"
        cells = []
        for lbl in labels:
            v = lookup.get((lbl, tdb, row))
            cells.append("n/a (out of scope)" if v is None else f"{v:.4f}")
        lines.append([name] + cells)
    widths = [max(len(str(r[i])) for r in [head] + lines) for i in range(len(head))]
    out = [f"KL divergence table {table}"]
    for r in [head] + lines:
        out.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(out) + "\n"


def cmd_table(args) -> int:
    start = time.perf_counter()
    if not 0 < args.scale <= 1:
        raise UsageError("--scale must lie in (0, 1]")
    convention = "paper" if args.paper_convention else "normalized"
    entries = table_entries(args.table, args.seed, args.scale, convention, args.links)
    sys.stdout.write(format_table(args.table, entries))
    if args.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("table", "config", "theta_db", "row", "kl"))
        for lbl, tdb, row, v in entries:
            w.writerow((args.table, lbl, _fmt(tdb), row, "n/a (out of scope)" if v is None else _fmt(v)))
        manifest = RunManifest("table", {"table": args.table, "scale": args.scale,
                                         "convention": convention, "links": args.links},
                               args.seed)
        manifest.wall_time = time.perf_counter() - start
        _emit(buf.getvalue(), args.out, manifest)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--model", choices=("ppp", "bipolar", "mcp", "ktier", "plcp"), default="ppp")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="BS / transmitter / cluster-centre density per km^2")
    p.add_argument("--bipolar-r", type=float, default=0.05, help="bipolar link distance (km)")
    p.add_argument("--rc", type=float, default=0.1, help="MCP cluster radius (km)")
    p.add_argument("--tiers", help="K-tier list lambda:power,lambda:power,...")
    p.add_argument("--lambda-l", type=float, default=8 / math.pi, help="PLCP line density")
    p.add_argument("--lambda-p", type=float, default=0.2, help="PLCP points per km of line")
    p.add_argument("--alpha", type=float, default=4.0)
    p.add_argument("--pt", type=float, default=10.0, help="transmit power (W)")
    p.add_argument("--sigma2", type=float, default=1e-9, help="noise power (W)")
    p.add_argument("--theta-db", default="0", help="list or start:stop:step, in dB")
    p.add_argument("--gamma", default="0.1:0.9:0.1", help="list or start:stop:step")
    p.add_argument("--j", type=int, default=2, help="dominant interferers for proposed-j")
    p.add_argument("--plcp-interference", choices=("plcp", "ppp-approx"), default="plcp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--realizations", type=int, default=100)
    p.add_argument("--links", type=int, default=500, help="users per realization")
    p.add_argument("--window", type=float, default=None, help="simulation window radius (km)")
    p.add_argument("--out", help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metasinr",
                                     description="SINR meta distribution of Poisson networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curve", help="evaluate one method on a theta x gamma grid (CSV)")
    _add_model_flags(p)
    p.add_argument("--method", choices=tuple(CLI_METHODS), default="proposed")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("compare", help="sup gap and KL divergence of two methods (JSON)")
    _add_model_flags(p)
    p.add_argument("--method", choices=tuple(CLI_METHODS), action="append")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("table", help="reproduce a KL divergence table")
    p.add_argument("--table", type=int, choices=(1, 2, 3, 4), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paper-convention", action="store_true",
                   help="unnormalized cell masses (values may be negative)")
    p.add_argument("--scale", type=float, default=1.0,
                   help="fraction of the 100 realizations to simulate")
    p.add_argument("--links", type=int, default=500)
    p.add_argument("--out", help="CSV output file")
    p.set_defaults(func=cmd_table)
    return parser


_LIST_FLAGS = ("--theta-db", "--gamma")


def _glue_list_values(argv: list[str]) -> list[str]:
    """Turn ``--theta-db -10:0:10`` into ``--theta-db=-10:0:10``.

    argparse would otherwise read a leading minus as the start of an option.
    """
    out = []
    it = iter(argv)
    for tok in it:
        if tok in _LIST_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_glue_list_values(argv))
    try:
        if getattr(args, "plcp_interference", None) == "plcp":
            args.plcp_interference = "auto"
        return args.func(args)
    except (UsageError, DomainError, ConfigurationError) as exc:
        parser.print_usage(sys.stderr)
        print(f"metasinr: error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"metasinr: numerical failure: {exc} {json.dumps(exc.diagnostics, default=str)}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
