"""Command-line runner: ``python -m holotorsion COMMAND [options]``.

Config files are flat ``key = value`` text; ``#`` starts a comment.  Keys:

=============  ==========================================================
``seed``       integer seed for randomized suites
``format``     ``json``, ``csv`` or ``text``
``out``        output path (stdout when absent)
``tau``        complex modulus, e.g. ``0.3+1.2j``
``scale``      positive area multiplier
``alpha``      character exponent along ``1``
``beta``       character exponent along ``tau``
``p``          holomorphic form degree
``factor``     ``tau scale alpha beta`` for one factor of a product; repeatable
``nonunitary`` ``true`` to allow complex ``alpha``, ``beta``
``scale0``     first scale of the anomaly check
``scale1``     second scale of the anomaly check
``tol.NAME``   tolerance override for the case ``NAME``
=============  ==========================================================

Command-line flags override the file.  Exit status: 0 when every case
passes, 1 on a failed case, 2 on a usage or config error, 3 on an internal
error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile

from . import torus as tm
from .suites import Case, Report, run_suite

COMMANDS = ("verify-algebra", "verify-mehler", "verify-parametrix", "verify-chern-weil",
            "torsion", "anomaly", "report")
FORMATS = ("json", "csv", "text")
FIELDS = ("name", "status", "measured", "expected", "tolerance", "anchor")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

def _parse_bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_complex(v: str) -> complex:
    try:
        return complex(v.replace(" ", "").replace("i", "j"))
    except ValueError:
        raise ConfigError(f"not a complex number: {v!r}") from None


def _parse_real(v: str) -> float:
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"not a number: {v!r}") from None


_SCALAR_KEYS = {
    "seed": int, "format": str, "out": str, "tau": _parse_complex, "scale": _parse_real,
    "alpha": _parse_complex, "beta": _parse_complex, "p": int, "nonunitary": _parse_bool,
    "scale0": _parse_real, "scale1": _parse_real,
}


def parse_config_text(text: str) -> dict:
    """Parse the flat key-value grammar into a dict (``factor`` and ``tol`` collected)."""
    out: dict = {"factor": [], "tol": {}}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key.startswith("tol."):
            out["tol"][key[4:]] = _parse_tol_value(val)
        elif key == "factor":
            parts = val.split()
            if len(parts) != 4:
                raise ConfigError(f"line {lineno}: factor needs tau scale alpha beta")
            out["factor"].append((_parse_complex(parts[0]), _parse_real(parts[1]),
                                  _parse_complex(parts[2]), _parse_complex(parts[3])))
        elif key in _SCALAR_KEYS:
            try:
                out[key] = _SCALAR_KEYS[key](val)
            except ValueError as e:
                raise ConfigError(f"line {lineno}: {e}") from None
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return out


def _parse_tol_value(v: str) -> float:
    x = _parse_real(v)
    if not x > 0 or not math.isfinite(x):
        raise ConfigError(f"tolerances must be positive, got {v!r}")
    return x


def _tol_flag(s: str):
    if "=" not in s:
        raise argparse.ArgumentTypeError("expected NAME=VALUE")
    k, v = s.split("=", 1)
    try:
        return k.strip(), _parse_tol_value(v)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="python -m holotorsion",
                                 description="Holomorphic torsion verification runner.")
    ap.add_argument("command", nargs="?", choices=COMMANDS)
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output path (written atomically)")
    ap.add_argument("--format", choices=FORMATS)
    ap.add_argument("--tol", type=_tol_flag, action="append", default=[], metavar="NAME=VALUE")
    ap.add_argument("--tau", type=_parse_complex)
    ap.add_argument("--scale", type=float)
    ap.add_argument("--alpha", type=_parse_complex)
    ap.add_argument("--beta", type=_parse_complex)
    ap.add_argument("-p", "--p", type=int, dest="p")
    ap.add_argument("--nonunitary", action="store_true", default=None)
    ap.add_argument("--scale0", type=float)
    ap.add_argument("--scale1", type=float)
    ap.add_argument("--no-timing", action="store_true",
                    help="report wall_time as 0 so reruns are byte-identical")
    return ap


def resolve(args) -> dict:
    """Merge config file and flags into one run configuration."""
    cfg: dict = {"factor": [], "tol": {}}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = parse_config_text(fh.read())
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
    for key in ("seed", "out", "format", "tau", "scale", "alpha", "beta", "p", "nonunitary",
                "scale0", "scale1"):
        v = getattr(args, key)
        if v is not None:
            cfg[key] = v
    cfg["tol"].update(dict(args.tol))
    cfg.setdefault("seed", 0)
    cfg.setdefault("format", "json")
    if cfg["format"] not in FORMATS:
        raise ConfigError(f"unknown format {cfg['format']!r}")
    nonunitary = bool(cfg.get("nonunitary", False))
    try:
        if cfg["factor"]:
            if any(k in cfg for k in ("tau", "scale", "alpha", "beta")):
                raise ConfigError("use either factor lines or tau/scale/alpha/beta")
            factors = tuple(tm.TorusFactor(t, s, a, b, nonunitary) for t, s, a, b in cfg["factor"])
        else:
            factors = (tm.TorusFactor(cfg.get("tau", 1j), cfg.get("scale", 1.0),
                                      cfg.get("alpha", 0.5), cfg.get("beta", 0.5), nonunitary),)
        cfg["model"] = tm.TorusConfig(factors, cfg.get("p", 0))
    except ValueError as e:
        raise ConfigError(f"invalid model: {e}") from None
    for k in ("scale0", "scale1"):
        if k in cfg and not cfg[k] > 0:
            raise ConfigError(f"{k} must be positive")
    return cfg


# ---------------------------------------------------------------- output

def _num(x):
    """JSON-ready number: floats at 17 significant digits, complex as ``{re, im}``."""
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, int) or (hasattr(x, "is_integer") and type(x).__name__.startswith("int")):
        return int(x)
    z = complex(x)
    if z.imag:
        return {"re": _num(z.real), "im": _num(z.imag)}
    return _Float(z.real)


class _Float(float):
    pass


def _dump(obj) -> str:
    if isinstance(obj, _Float):
        if math.isfinite(obj):
            return format(float(obj), ".17g")
        return json.dumps(repr(float(obj)))
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dump(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, list):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    return json.dumps(obj)


def _text_num(x) -> str:
    if isinstance(x, (bool, str)) or x is None:
        return str(x)
    if isinstance(x, int):
        return str(x)
    z = complex(x) + 0.0        # drop the sign of zero
    if z.imag:
        return f"{z.real:.8g}{z.imag:+.8g}j"
    return f"{z.real:.8g}"


def report_dict(rep: Report) -> dict:
    return {"suite": rep.suite,
            "cases": [{f: (_num(getattr(c, f)) if f in ("measured", "expected", "tolerance")
                           else getattr(c, f)) for f in FIELDS} for c in rep.cases],
            "wall_time": _num(rep.wall_time)}


def emit_table(report: Report, fmt: str = "json") -> bytes:
    """Serialize a report; field order is fixed."""
    if fmt == "json":
        return (_dump(report_dict(report)) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FIELDS)
        for c in report.cases:
            w.writerow([getattr(c, f) if f in ("name", "status", "anchor") else _text_num(getattr(c, f))
                        for f in FIELDS])
        return buf.getvalue().encode()
    if fmt == "text":
        rows = [list(FIELDS)] + [[getattr(c, f) if f in ("name", "status", "anchor")
                                  else _text_num(getattr(c, f)) for f in FIELDS]
                                 for c in report.cases]
        widths = [max(len(r[i]) for r in rows) for i in range(len(FIELDS))]
        lines = [f"suite: {report.suite}   wall_time: {report.wall_time:.8g} s"]
        for r in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
        return ("\n".join(lines) + "\n").encode()
    raise ValueError(f"unknown format {fmt!r}")


def _decode(v):
    if isinstance(v, dict):
        return complex(_decode(v["re"]), _decode(v["im"]))
    if isinstance(v, str) and v in ("inf", "-inf", "nan"):
        return float(v)
    return v


def report_from_json(data: bytes | str) -> Report:
    d = json.loads(data)
    cases = [Case(c["name"], c["status"], _decode(c["measured"]), _decode(c["expected"]),
                  _decode(c["tolerance"]), c["anchor"]) for c in d["cases"]]
    return Report(d["suite"], cases, _decode(d["wall_time"]))


def write_atomic(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- run

def run(cfg: dict, command: str) -> Report:
    kw = dict(seed=cfg["seed"], tol=cfg["tol"], config=cfg["model"],
              scale0=cfg.get("scale0", 1.0), scale1=cfg.get("scale1", 2.0))
    if command != "report":
        return run_suite(command, **kw)
    full = Report("report")
    for name in COMMANDS[:-1]:
        sub = run_suite(name, **kw)
        for c in sub.cases:
            full.cases.append(Case(f"{name}/{c.name}", c.status, c.measured, c.expected,
                                   c.tolerance, c.anchor))
        full.wall_time += sub.wall_time
    return full


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        ap.print_usage(sys.stderr)
        print("error: a command is required", file=sys.stderr)
        return 2
    try:
        cfg = resolve(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        rep = run(cfg, args.command)
        known = {c.name.split("/")[-1] for c in rep.cases}
        unknown = set(cfg["tol"]) - known
        if unknown:
            print(f"config error: unknown tolerance names {sorted(unknown)}", file=sys.stderr)
            return 2
        if args.no_timing:
            rep.wall_time = 0.0
        data = emit_table(rep, cfg["format"])
        if cfg.get("out"):
            write_atomic(cfg["out"], data)
        else:
            sys.stdout.buffer.write(data)
            sys.stdout.flush()
    except OSError as e:
        print(f"output error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - reported as internal error
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    return 0 if rep.passed else 1
