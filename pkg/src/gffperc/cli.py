"""Command-line runner: config merging, deterministic outputs, manifests, plots.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .constants import ConstantsLedger

OUT_ENV = "GFFPERC_OUT"
DEFAULT_OUT = "gffperc_out"

# Constants a bound check refuses to run without (unless placeholders are allowed).
REQUIRED_CONSTANTS = {"renorm-ub": ["c2", "c5"], "renorm-lb": ["c0_prime"]}
CONSTANT_NAMES = ["c", "c_prime", "c0", "c2", "c3", "c4_eps", "c5", "c8",
                  "c0_prime", "c1_prime", "c3_prime", "c4_prime"]


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# ------------------------------------------------------------- parsing

def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text) -> list[int]:
    return [int(v) for v in _floats(text)]


# command -> {key: (converter, default or REQUIRED)}
REQ = object()
SPECS = {
    "green": {"d": (int, REQ), "x": (_ints, None), "method": (str, "quadrature"),
              "walks": (int, 10 ** 7), "tolerance": (float, 1e-8), "radius": (float, 10.0)},
    "sample": {"d": (int, REQ), "radius": (int, 1), "sampler": (str, "dense"), "format": (str, "csv")},
    "crossing": {"d": (int, REQ), "geometry": (str, "box_to_sphere"), "scale": (int, 2),
                 "h": (_floats, REQ)},
    "local-conn": {"d": (int, REQ), "R": (int, REQ), "h": (_floats, REQ), "eps": (float, None)},
    "hstar": {"d": (int, REQ), "L": (_ints, REQ), "h_grid": (_floats, REQ), "threshold": (float, 0.5)},
    "hdoublestar": {"d": (int, REQ), "L": (_ints, REQ), "h_grid": (_floats, REQ), "threshold": (float, 0.5)},
    "renorm-ub": {"d": (int, REQ), "eps": (float, REQ), "n_max": (int, 30), "log_p0": (float, None),
                  "L0": (int, None), "l0": (int, None), "N": (int, None), "k0_variant": (str, "default")},
    "renorm-lb": {"d": (int, REQ), "eps": (float, REQ), "n_max": (int, 40), "log_q0": (float, None),
                  "p_fail": (float, None), "L0": (int, None), "k1_mode": (str, "exact")},
    "hypercube": {"d": (int, REQ), "eps": (float, REQ), "depth": (int, REQ), "branching": (int, REQ),
                  "threshold": (int, None)},
    "good-event": {"d": (int, REQ), "h": (_floats, REQ)},
    "verify": {"d": (_ints, REQ)},
}
COMMON = {"seed": (int, 0), "replicas": (int, 1000)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gffperc", description="Free-field level-set percolation toolkit",
                                allow_abbrev=False)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command")
    for name, spec in SPECS.items():
        sp = sub.add_parser(name, allow_abbrev=False)
        sp.add_argument("--config", help="JSON file with parameters; flags override it")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        sp.add_argument("--constants", help="JSON ledger of constant values")
        sp.add_argument("--allow-placeholders", action="store_true", default=None,
                        help="run bound checks with placeholder constants")
        for key in list(spec) + list(COMMON):
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None)
        for c in CONSTANT_NAMES:
            sp.add_argument("--" + c.replace("_", "-"), dest="const_" + c, type=float, default=None)
    pl = sub.add_parser("plot")
    pl.add_argument("--input", required=True)
    pl.add_argument("--kind", choices=["sweep", "trace"], required=True)
    pl.add_argument("--output", required=True)
    return p


def merge_config(args: argparse.Namespace) -> tuple[dict, ConstantsLedger]:
    """Defaults < config file < flags, validated and converted."""
    cmd = args.command
    spec = {**SPECS[cmd], **COMMON}
    raw: dict = {}
    const_vals: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - set(spec) - {"constants", "allow_placeholders", "command"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if data.get("command", cmd) != cmd:
            raise ConfigError(f"config is for command {data['command']!r}, not {cmd!r}")
        const_vals.update(data.get("constants", {}))
        raw.update({k: v for k, v in data.items() if k in spec})
        if data.get("allow_placeholders"):
            args.allow_placeholders = args.allow_placeholders or True
    for key in spec:
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    cfg = {}
    for key, (conv, default) in spec.items():
        if key in raw and raw[key] is not None:
            try:
                cfg[key] = conv(raw[key])
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {key}: {raw[key]!r}") from None
        elif default is REQ:
            raise ConfigError(f"missing required parameter: {key}")
        else:
            cfg[key] = default
    if args.constants:
        try:
            const_vals.update(json.loads(Path(args.constants).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read constants {args.constants}: {exc}") from None
    for c in CONSTANT_NAMES:
        v = getattr(args, "const_" + c, None)
        if v is not None:
            const_vals[c] = v
    try:
        led = ConstantsLedger.from_mapping(const_vals)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad constants: {exc}") from None
    missing = [n for n in REQUIRED_CONSTANTS.get(cmd, []) if led.is_placeholder(n)]
    if missing and not args.allow_placeholders:
        raise ConfigError("missing constants for bound checks: " + ", ".join(missing)
                          + " (supply them or pass --allow-placeholders)")
    if cfg["replicas"] < 1:
        raise ConfigError("replicas must be positive")
    if "d" in cfg and isinstance(cfg["d"], int) and cfg["d"] < 3:
        raise ConfigError("d must be >= 3")
    cfg["command"] = cmd
    return cfg, led


# ------------------------------------------------------------- outputs

def _num(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(v, (list, tuple)):
        return ";".join(str(_num(x)) for x in v)
    if v is None:
        return ""
    return str(v)


def csv_text(rows: list[dict]) -> str:
    """RFC-4180 text with a header row and CRLF line ends."""
    buf = io.StringIO()
    if rows:
        keys = list(rows[0].keys())
        for r in rows[1:]:
            keys += [k for k in r if k not in keys]
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_num(r.get(k)) for k in keys])
    return buf.getvalue()


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if math.isfinite(o) else repr(o)
    if isinstance(o, int) and abs(o) >= 2 ** 63:
        return str(o)
    return o


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# ------------------------------------------------------------- commands

def _run_green(cfg, led):
    from .potential import METHODS, GreenEvaluator, green_free
    d = cfg["d"]
    if cfg["method"] not in METHODS:
        raise ConfigError(f"method must be one of {', '.join(METHODS)}")
    x = cfg["x"] or [0] * d
    if len(x) != d:
        raise ConfigError(f"x has {len(x)} coordinates, expected {d}")
    ev = GreenEvaluator(d, cfg["method"], tolerance=cfg["tolerance"], seed=cfg["seed"],
                        walks=cfg["walks"], radius=cfg["radius"])
    g = green_free(ev, x)
    print(f"g({','.join(map(str, x))}) = {g.value:.10g} ± {g.error:.3g} [{g.method}]")
    row = {"d": d, "x": ",".join(map(str, x)), "value": g.value, "error": g.error, "method": g.method,
           "seed": cfg["seed"]}
    return {"green.csv": csv_text([row])}


def _run_sample(cfg, led):
    from .gff import box_markov_model, covariance_model, sample_box_markov, sample_dense, sample_sequential
    from .lattice import ball
    d, R, n, seed = cfg["d"], cfg["radius"], cfg["replicas"], cfg["seed"]
    kind = cfg["sampler"]
    if kind == "box_markov":
        batch = sample_box_markov(box_markov_model(d, R), n, seed)
    else:
        region = ball(d, r=R, kind="linf")
        if kind == "dense":
            batch = sample_dense(covariance_model(region), n, seed)
        elif kind == "sequential":
            batch = sample_sequential(region, None, seed, n)
        else:
            raise ConfigError(f"unknown sampler {kind!r}")
    coords = batch.region.coords
    if cfg["format"] == "binary":
        from .gff import encode_binary
        return {f"sample_{i:05d}.gffs": encode_binary(s) for i, s in enumerate(batch)}
    rows = []
    for i in range(len(batch)):
        for j in range(len(coords)):
            rows.append({"replica": int(batch.replicas[i]), **{f"x{k + 1}": int(coords[j, k]) for k in range(d)},
                         "value": float(batch.values[i, j])})
    return {"samples.csv": csv_text(rows)}


def _run_crossing(cfg, led):
    from .levelset import mc_crossing_prob
    rows = mc_crossing_prob(cfg["d"], cfg["geometry"], cfg["scale"], cfg["h"], cfg["replicas"], cfg["seed"])
    return {"crossing.csv": csv_text(rows)}


def _run_local_conn(cfg, led):
    from .levelset import local_connectivity
    res = local_connectivity(cfg["d"], cfg["R"], cfg["h"], cfg["replicas"], cfg["seed"],
                             eps=cfg["eps"], c5=led.get("c5"))
    rows = [{"d": cfg["d"], "R": cfg["R"], **r, "replicas": cfg["replicas"], "seed": cfg["seed"]}
            for r in res["rows"]]
    return {"local_conn.csv": csv_text(rows), "local_conn.json": json_text(res)}


def _run_bracket(cfg, led, star: bool):
    from .levelset import h_doublestar_proxy, h_star_proxy
    if star:
        br = h_star_proxy(cfg["d"], cfg["L"], cfg["h_grid"], cfg["replicas"], cfg["seed"], cfg["threshold"])
    else:
        br = h_doublestar_proxy(cfg["d"], cfg["L"], cfg["threshold"], cfg["h_grid"], cfg["replicas"], cfg["seed"])
    name = "hstar" if star else "hdoublestar"
    return {f"{name}.csv": csv_text(br.rows), f"{name}.json": json_text(br.as_dict())}


def _run_renorm_ub(cfg, led):
    from . import renorm
    s = renorm.ub_schedule(cfg["d"], cfg["eps"], led, L0=cfg["L0"], l0=cfg["l0"], N=cfg["N"],
                           k0_variant=cfg["k0_variant"], compute_h0=cfg["d"] <= 10 ** 6)
    if cfg["log_p0"] is not None:
        tr = renorm.ub_propagate(s, cfg["log_p0"], cfg["n_max"])
    else:
        tr = renorm.ub_sequences(s, cfg["n_max"])
    fc = renorm.ub_final_chain(s, tr)
    rep = renorm.report(tr)
    rep["final_chain"] = fc
    rep["verdicts"] = tr.verdicts + fc["verdicts"]
    for v in rep["verdicts"]:
        print(f"{'PASS' if v['pass'] else 'FAIL'}  {v['name']}")
    return {"renorm_ub.json": json_text(rep), "renorm_ub.csv": csv_text(tr.rows)}


def _run_renorm_lb(cfg, led):
    from . import renorm
    s = renorm.lb_schedule(cfg["d"], cfg["eps"], led, L0=cfg["L0"], n_max=cfg["n_max"], k1_mode=cfg["k1_mode"])
    tr = renorm.lb_propagate(s, cfg["log_q0"], cfg["n_max"], p_fail=cfg["p_fail"])
    for v in tr.verdicts:
        print(f"{'PASS' if v['pass'] else 'FAIL'}  {v['name']}")
    return {"renorm_lb.json": json_text(renorm.report(tr)), "renorm_lb.csv": csv_text(tr.rows)}


def _run_hypercube(cfg, led):
    from .hypercube import alpha_coefficients, embed_tree, gw_domination_check, gw_params
    tree = embed_tree(cfg["d"], cfg["depth"], cfg["branching"])
    gw = gw_params(cfg["d"], cfg["eps"], threshold=cfg["threshold"], depth=cfg["depth"],
                   branching=cfg["branching"])
    a = alpha_coefficients(tree, led)
    rep = gw_domination_check(tree, gw, cfg["replicas"], cfg["seed"], a, led)
    rep["constants"] = led.snapshot()
    rep["banner"] = led.banner(["c3_prime"])
    print(f"max sum alpha = {a.max_sum:.6f}, violations = {rep['violations']}")
    return {"hypercube.json": json_text(rep)}


def _run_good_event(cfg, led):
    from .hypercube import good_event_mc
    res = good_event_mc(cfg["d"], cfg["h"], cfg["replicas"], cfg["seed"])
    return {"good_event.csv": csv_text(res.rows())}


def _run_verify(cfg, led):
    from .potential import verify_bounds
    rep = verify_bounds(cfg["d"], led)
    return {"verify.json": json_text(rep)}


RUNNERS = {
    "green": _run_green, "sample": _run_sample, "crossing": _run_crossing,
    "local-conn": _run_local_conn,
    "hstar": lambda c, l: _run_bracket(c, l, True),
    "hdoublestar": lambda c, l: _run_bracket(c, l, False),
    "renorm-ub": _run_renorm_ub, "renorm-lb": _run_renorm_lb,
    "hypercube": _run_hypercube, "good-event": _run_good_event, "verify": _run_verify,
}


def run(cfg: dict, led: ConstantsLedger, out_dir: Path) -> dict:
    """Execute one experiment and write its files plus manifest.json."""
    from .hypercube import GiantUniquenessError
    from .lattice import CapExceeded
    from .potential import NumericalError, ToleranceError
    from .renorm import ScheduleError, SeedConditionError

    start = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    try:
        files = RUNNERS[cfg["command"]](cfg, led)
    except (ScheduleError, SeedConditionError, CapExceeded) as exc:
        raise ConfigError(str(exc)) from None
    except (ToleranceError, NumericalError, ArithmeticError, GiantUniquenessError,
            np.linalg.LinAlgError) as exc:
        raise NumericalFailure(f"{type(exc).__name__}: {exc}") from None
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, data in sorted(files.items()):
        blob = data.encode("utf-8") if isinstance(data, str) else data
        (out_dir / name).write_bytes(blob)
        entries.append({"name": name, "sha256": hashlib.sha256(blob).hexdigest(), "bytes": len(blob)})
    manifest = {"tool": "gffperc", "version": __version__, "config": cfg, "constants": led.snapshot(),
                "banner": led.banner(), "started": start,
                "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()), "files": entries}
    (out_dir / "manifest.json").write_text(json_text(manifest), encoding="utf-8")
    return manifest


# ------------------------------------------------------------- plotting

_W, _H, _M = 640, 420, 60


def _scale(vals, lo_px, hi_px):
    lo, hi = min(vals), max(vals)
    if hi == lo:
        lo, hi = lo - 1, hi + 1
    return lambda v: lo_px + (v - lo) / (hi - lo) * (hi_px - lo_px), lo, hi


def svg_plot(rows: list[dict], kind: str) -> str:
    """Minimal deterministic SVG: estimate vs h with CI whiskers, or log-bound vs n."""
    if kind == "sweep":
        need, xk, yk = ("h", "estimate"), "h", "estimate"
    elif kind == "trace":
        need, xk = ("n",), "n"
        yk = None
        if rows:
            for cand in ("log_p_bound", "log_chain", "log_q", "log_delta", "log_h_increment"):
                if cand in rows[0]:
                    yk = cand
                    break
            if yk is None:
                yk = next((k for k in rows[0] if k.startswith("log_")), None)
            if yk is None:
                raise ValueError("trace CSV needs a log_* column")
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    if rows and any(k not in rows[0] for k in need):
        raise ValueError(f"CSV schema mismatch for {kind}: need columns {need}")
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<line x1="{_M}" y1="{_H - _M}" x2="{_W - _M}" y2="{_H - _M}" stroke="black"/>',
           f'<line x1="{_M}" y1="{_M}" x2="{_M}" y2="{_H - _M}" stroke="black"/>']
    ylabel = yk or "value"
    out.append(f'<text x="{_W // 2}" y="{_H - 15}" text-anchor="middle" font-size="14">{xk}</text>')
    out.append(f'<text x="15" y="{_H // 2}" font-size="14" transform="rotate(-90 15 {_H // 2})" '
               f'text-anchor="middle">{ylabel}</text>')
    pts = []
    for r in rows:
        try:
            x, y = float(r[xk]), float(r[yk])
        except (TypeError, ValueError):
            continue
        if math.isfinite(x) and math.isfinite(y):
            hw = float(r.get("ci_half_width") or 0.0) if kind == "sweep" else 0.0
            pts.append((x, y, hw))
    if not pts:
        out.append(f'<text x="{_W // 2}" y="{_H // 2}" text-anchor="middle" font-size="18">no data</text>')
    else:
        pts.sort(key=lambda p: p[0])
        fx, x0, x1 = _scale([p[0] for p in pts], _M, _W - _M)
        ys = [p[1] for p in pts] + [p[1] + p[2] for p in pts] + [p[1] - p[2] for p in pts]
        fy, y0, y1 = _scale(ys, _H - _M, _M)
        poly = " ".join(f"{fx(x):.2f},{fy(y):.2f}" for x, y, _ in pts)
        out.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="2" points="{poly}"/>')
        for x, y, hw in pts:
            out.append(f'<circle cx="{fx(x):.2f}" cy="{fy(y):.2f}" r="3" fill="#1f4e9c"/>')
            if hw > 0:
                out.append(f'<line x1="{fx(x):.2f}" y1="{fy(y - hw):.2f}" x2="{fx(x):.2f}" '
                           f'y2="{fy(y + hw):.2f}" stroke="#888"/>')
        for v, px in ((x0, _M), (x1, _W - _M)):
            out.append(f'<text x="{px}" y="{_H - _M + 18}" text-anchor="middle" font-size="11">{v:.4g}</text>')
        for v, py in ((y0, _H - _M), (y1, _M)):
            out.append(f'<text x="{_M - 6}" y="{py}" text-anchor="end" font-size="11">{v:.4g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _plot(args) -> int:
    try:
        with open(args.input, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        text = svg_plot(rows, args.kind)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    Path(args.output).write_text(text, encoding="utf-8")
    return 0


# ------------------------------------------------------------- entry point

def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    if args.command == "plot":
        return _plot(args)
    try:
        cfg, led = merge_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    try:
        manifest = run(cfg, led, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    for f in manifest["files"]:
        print(f"wrote {out_dir / f['name']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
