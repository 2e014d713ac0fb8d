"""Command-line front end.

Every run writes a CSV of raw estimates and a JSON manifest (parameters,
seed, version, wall times, output paths with digests, summary numbers) into
the output directory: ``--out``, else ``$PERCLAB_OUT``, else ``./perclab_out``.
``perclab replay MANIFEST`` re-executes a run and checks every summary
number and output file bit-exactly.

Exit codes: 0 success, 1 runtime failure or replay mismatch, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .rng import set_threads

DEFAULT_OUT = "perclab_out"


class ManifestCorrupt(RuntimeError):
    pass


class Mismatch(RuntimeError):
    pass


class UsageError(Exception):
    pass


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


def _plain(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _fmt(v) -> str:
    v = _plain(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, rows: list[dict]) -> None:
    cols = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def _digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# commands: each returns (rows, summary, extra files {suffix: writer})


def cmd_theta(a):
    from .measures import estimate_theta
    e = estimate_theta(a.r, a.trials, a.seed)
    row = {"r": e.r, "estimate": e.estimate, "se": e.se, "trials": e.trials, "seed": a.seed}
    return [row], {"estimate": e.estimate, "se": e.se}, {}


def cmd_arm(a):
    from .experiments import exp_arm_exponents
    f1, f4 = exp_arm_exponents(a.radii, a.trials, a.seed, four_radii=a.four_radii)
    rows = [{"kind": k, "R": r["x"], "estimate": r["estimate"], "se": r["se"]}
            for k, f in (("one-arm", f1), ("four-arm", f4)) for r in f.rows()]
    return rows, {**f1.summary(), **f4.summary()}, {}


def cmd_pivotal_scale(a):
    from .experiments import exp_pivotal_scale
    sc = exp_pivotal_scale(a.radii, a.trials, a.seed, event=a.event)
    f = sc.fit()
    return sc.rows(), {"slope": f.slope, "slope_se": f.slope_se}, {}


def cmd_window(a):
    from .experiments import exp_window
    rows = exp_window(a.radii, a.s, a.trials, a.seed)
    return rows, {f"P_R{r['R']}_s{r['s']}_{'+' if r['sign'] > 0 else '-'}": r["estimate"]
                  for r in rows}, {}


def cmd_kesten(a):
    from .experiments import exp_kesten_relation
    rows = exp_kesten_relation(a.epsilons, a.r_max, a.trials, a.seed)
    return rows, {f"ratio_eps{r['epsilon']}": r["ratio"] for r in rows}, {}


def cmd_quenched_iic(a):
    from .experiments import exp_quenched_iic
    rows = exp_quenched_iic(a.r, a.T, a.seed, draws=a.draws)
    return rows, {f"tv_T{r['T']}": r["tv"] for r in rows}, {}


def cmd_fetic_vs_iic(a):
    from .experiments import exp_fetic_vs_iic
    rep = exp_fetic_vs_iic(a.r, a.epsilon, a.R, a.trials, a.seed, cap=a.cap)
    rows = [{"N": s.N, "T": s.T, "fine": s.fine, "cap_N": s.cap_N, "cap_T": s.cap_T,
             "good": s.good} for s in rep.samples]
    return rows, rep.summary(), {}


def cmd_centre(a):
    from .experiments import exp_centre_cannot_hold
    rows = exp_centre_cannot_hold(a.n, a.trials, a.seed)
    return rows, {f"P_n{r['n']}": r["estimate"] for r in rows}, {}


def cmd_collapse(a):
    from .experiments import exp_collapse
    res = exp_collapse(a.R, a.t_grid, a.trials, a.seed)

    def paths(path):
        np.savetxt(path, res.paths, fmt="%d", delimiter=",",
                   header=",".join(repr(float(t)) for t in res.t_grid), comments="")
    return res.rows(), res.fit.summary(), {"paths.csv": paths}


def cmd_volume(a):
    from .experiments import exp_volume_exponent
    res = exp_volume_exponent(a.r, a.n, a.trials, a.seed)
    return res.rows(), res.fit.summary(), {}


def cmd_spectrum(a):
    from .spectrum import (crossing_table, decorrelation_exact, decorrelation_mc,
                           pivotal_moments, spectral_size_moments, walsh_transform)
    n = a.L * a.L
    tab = crossing_table(a.L)
    spec = walsh_transform(tab, n)
    m1, m2 = spectral_size_moments(spec)
    p1, p2 = pivotal_moments(tab, n)
    rows = []
    for i, t in enumerate(a.t):
        mc = decorrelation_mc(tab, n, t, a.trials, a.seed + i)
        rows.append({"t": t, "exact": decorrelation_exact(spec, spec, t), "mc": mc.estimate,
                     "se": mc.se})
    extra = {"coefficients.csv": spec.to_csv, "size_law.csv": spec.size_law_csv}
    return rows, {"E_spec": m1, "E_spec2": m2, "E_piv": p1, "E_piv2": p2}, extra


COMMANDS = {
    "theta": cmd_theta, "arm": cmd_arm, "pivotal-scale": cmd_pivotal_scale,
    "window": cmd_window, "kesten": cmd_kesten, "quenched-iic": cmd_quenched_iic,
    "fetic-vs-iic": cmd_fetic_vs_iic, "centre": cmd_centre, "collapse": cmd_collapse,
    "volume": cmd_volume, "spectrum": cmd_spectrum,
}


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="perclab", description="Dynamical percolation experiments.")
    p.add_argument("--version", action="version", version=f"perclab {__version__}")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--config", default=None, help="flat key=value file with flag defaults")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, **flags):
        sp = sub.add_parser(name)
        sp.add_argument("--seed", type=int, default=1)
        for flag, (typ, default) in flags.items():
            sp.add_argument(f"--{flag}", type=typ, default=default)
        return sp

    add("theta", r=(int, 1), trials=(int, 100_000))
    add("arm", radii=(_ints, "8,16,32,64,128"), **{"four-radii": (_ints, "8,16,32,64")},
        trials=(int, 100_000))
    sp = add("pivotal-scale", radii=(_ints, "8,16,32,64"), trials=(int, 2000))
    sp.add_argument("--event", choices=("annulus", "box"), default="annulus")
    add("window", radii=(_ints, "16,32,64"), s=(_floats, "0,1,16"), trials=(int, 4000))
    add("kesten", epsilons=(_floats, "0.02,0.05,0.1"), **{"r-max": (int, 256)},
        trials=(int, 2000))
    add("quenched-iic", r=(int, 2), T=(_floats, "100,1000,10000"), draws=(int, 100_000))
    add("fetic-vs-iic", r=(int, 8), epsilon=(float, 0.1), R=(int, 32), trials=(int, 10_000),
        cap=(float, 64.0))
    add("centre", n=(_ints, "16,32,64"), trials=(int, 10_000))
    add("collapse", R=(int, 256), **{"t-grid": (_floats, ",".join(repr(2.0 ** -k)
                                                                   for k in range(8, 1, -1)))},
        trials=(int, 100))
    add("volume", r=(int, 64), n=(_ints, "4,8,16,32"), trials=(int, 2000))
    add("spectrum", L=(int, 3), t=(_floats, "0.1,0.5,1,2"), trials=(int, 100_000))
    rp = sub.add_parser("replay")
    rp.add_argument("manifest")
    sub.add_parser("selftest")
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Use ``key=value`` lines of ``--config`` as defaults for the subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        lines = Path(known.config).read_text().splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config: {e}") from None
    cfg = {}
    for ln in lines:
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise UsageError(f"bad config line {ln!r}")
        k, v = (s.strip() for s in ln.split("=", 1))
        cfg[k.replace("-", "_")] = v
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in subs.choices.values():
        for act in sp._actions:
            if act.dest in cfg:
                raw = cfg[act.dest]
                act.default = act.type(raw) if act.type else raw


def _out_dir(ns) -> Path:
    return Path(ns.out or os.environ.get("PERCLAB_OUT") or DEFAULT_OUT)


def _params(ns) -> dict:
    skip = {"command", "out", "config", "threads"}
    return {k: _plain(v) for k, v in vars(ns).items() if k not in skip}


def execute(command: str, params: dict, out: Path, stem: str | None = None) -> dict:
    """Run ``command`` with ``params``, write artifacts under ``out`` and
    return the manifest."""
    ns = argparse.Namespace(**params)
    t0 = time.time()
    rows, summary, extra = COMMANDS[command](ns)
    t1 = time.time()
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{command}-seed{params['seed']}"
    outputs = {}
    path = out / f"{stem}.csv"
    write_csv(path, rows)
    outputs[path.name] = _digest(path)
    for suffix, writer in extra.items():
        pth = out / f"{stem}.{suffix}"
        writer(pth)
        outputs[pth.name] = _digest(pth)
    manifest = {
        "command": command, "params": params, "seed": params["seed"], "version": __version__,
        "start": t0, "end": t1, "outputs": outputs,
        "summary": {k: _fmt(v) for k, v in summary.items()},
    }
    mpath = out / f"{stem}.manifest.json"
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".manifest-")
    with os.fdopen(fd, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, mpath)
    manifest["path"] = str(mpath)
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        m = json.loads(path.read_text())
        for key in ("command", "params", "seed", "outputs", "summary"):
            m[key]
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ManifestCorrupt(f"{path}: {e}") from None
    if m["command"] not in COMMANDS:
        raise ManifestCorrupt(f"{path}: unknown command {m['command']!r}")
    for name in m["outputs"]:
        if not (path.parent / name).exists():
            raise ManifestCorrupt(f"{path}: missing output {name}")
    return m


def replay(path) -> None:
    """Re-execute a manifest and compare summaries and outputs bit-exactly."""
    m = load_manifest(path)
    params = dict(m["params"])
    if params.get("seed") != m["seed"]:
        raise Mismatch("manifest seed disagrees with its parameters")
    with tempfile.TemporaryDirectory() as tmp:
        stem = Path(path).name[: -len(".manifest.json")] if str(path).endswith(
            ".manifest.json") else None
        new = execute(m["command"], params, Path(tmp), stem=stem)
    bad = [k for k in set(m["summary"]) | set(new["summary"])
           if m["summary"].get(k) != new["summary"].get(k)]
    for name, dig in m["outputs"].items():
        if new["outputs"].get(name) != dig:
            bad.append(name)
        elif _digest(Path(path).parent / name) != dig:
            bad.append(f"{name} (stored file altered)")
    if bad:
        raise Mismatch("differs: " + ", ".join(sorted(bad)))


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("perclab: error: a subcommand is required")
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    set_threads(ns.threads)
    try:
        if ns.command == "selftest":
            from .selftest import run_selftest
            failures = run_selftest()
            for f in failures:
                print(f"FAIL {f}")
            print("selftest ok" if not failures else f"selftest: {len(failures)} failure(s)")
            return 0 if not failures else 1
        if ns.command == "replay":
            replay(ns.manifest)
            print(f"replay ok: {ns.manifest}")
            return 0
        m = execute(ns.command, _params(ns), _out_dir(ns))
        summ = " ".join(f"{k}={v}" for k, v in m["summary"].items())
        print(f"{ns.command}: {summ} -> {m['path']}")
        return 0
    except (ManifestCorrupt, Mismatch) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
