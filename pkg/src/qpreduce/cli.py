"""qpcli: batch pipelines with reproducible JSON configuration.

Every artifact starts with a single ``#`` header line carrying the version, the
timestamp and wall-clock figures; everything after it is a deterministic
function of the configuration.  Exit codes: 0 all checks pass, 1 a check
failed, 2 usage/config error, 3 numerical halt.
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import Cocycle, Frequency, lyapunov_exponent, rotation_number
from .kam import ChainViolation, KamError, KamSchedule, SmallDivisorError, reduce_full
from .spectrum import (QUALITY, Potential, refine_edge_by_reduction, scan_spectrum, schrodinger_cocycle)
from .torus import MatrixTorusFunction, ScalarTorusFunction, rotation_matrix

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_HALT = 0, 1, 2, 3

DEFAULTS = {
    "frequency": "golden",
    "potential": {"family": "amo", "lambda": 0.05},
    "schedule": {},
    "seed": 0,
    "quality": "default",
    "rotation": {"cocycle": {"kind": "schrodinger", "energy": 0.0}, "expect": None, "tol": 1e-5},
    "lyapunov": {"energy": 0.0, "n_iters": 100000},
    "scan": {"e_range": [-3.0, 3.0], "n_grid": 256, "label_radius": 50, "label_tol": 1e-4},
    "reduce": {"energy": 0.0, "branch": "diophantine", "gamma": 0.05, "tau": 2.0, "m": [1],
               "residual_tol": 1e-8},
    "dualize": {"phase": 0.1, "sites": [0, 1, 3], "radius": 64, "C": 4.0, "eps": 0.2, "k_tilde": 4.0,
                "b": 1.0, "counting": True, "n_phases": 8, "overlap_min": 0.999, "ev_tol": 1e-6,
                "decay_min": 4.0},
    "gapopen": {"m": [1], "side": "left", "energy": None, "W": "one", "t": [1e-3, -1e-3, 1e-4, -1e-4],
                "scan_grid": 128},
    "selftest": {"criteria": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]},
}

MODULE_TAGS = {"torus": "torus-fourier", "dynamics": "cocycle-dynamics", "kam": "kam-reducibility",
               "spectrum": "schrodinger-spectrum", "duality": "aubry-duality", "gapopen": "gap-opening",
               "acceptance": "acceptance", "cli": "qpcli"}


class ConfigError(ValueError):
    pass


# -- configuration -------------------------------------------------------------------

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path):
    if path is None:
        return copy.deepcopy(DEFAULTS), {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return _merge(DEFAULTS, raw), raw


def make_frequency(spec):
    if spec == "golden":
        return Frequency.golden()
    if spec == "silver":
        return Frequency((np.sqrt(2.0) - 1.0,))
    if isinstance(spec, (list, tuple)) and 1 <= len(spec) <= 2:
        return Frequency(tuple(float(x) for x in spec))
    raise ConfigError(f"bad frequency spec {spec!r}")


def make_potential(spec, d):
    if not isinstance(spec, dict):
        raise ConfigError("potential must be an object")
    lam = float(spec.get("lambda", 1.0))
    fam = spec.get("family")
    if fam == "amo":
        return Potential.amo(lam, d)
    if fam == "free":
        return Potential(ScalarTorusFunction.zeros(d), lam)
    if "modes" in spec:
        return Potential(_scalar_from_modes(spec["modes"], d), lam)
    raise ConfigError(f"bad potential spec {spec!r}")


def _scalar_from_modes(rows, d):
    modes = {}
    for row in rows:
        if len(row) != d + 2:
            raise ConfigError(f"mode row {row!r} must be [n_1..n_d, re, im]")
        modes[tuple(int(v) for v in row[:d])] = complex(row[d], row[d + 1])
    f = ScalarTorusFunction.from_modes(modes, d=d, real=False)
    c = f.coeffs
    flip = np.conj(c[(slice(None, None, -1),) * d])
    if np.max(np.abs(c - flip)) > 1e-14:
        raise ConfigError("potential modes must satisfy V(-n) = conj V(n)")
    return ScalarTorusFunction(c.real if np.all(c.imag == 0) else c, real=True)


def make_schedule(over):
    fields = KamSchedule.__dataclass_fields__
    bad = set(over) - set(fields)
    if bad:
        raise ConfigError(f"unknown schedule keys: {sorted(bad)}")
    return KamSchedule(**over)


# -- output ----------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else repr(v)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1)


class Artifacts:
    """Collects outputs; files are written at the end with a one-line header."""

    def __init__(self, out_dir, command, config):
        self.dir = Path(out_dir)
        self.command = command
        self.config = config
        self.files = {}

    def json(self, name, payload):
        body = dict(payload)
        body["config"] = self.config
        self.files[name] = dumps(body) + "\n"

    def csv(self, name, text):
        self.files[name] = "# config: " + json.dumps(_jsonable(self.config), sort_keys=True) + "\n" + text

    def jsonl(self, name, records):
        lines = [json.dumps(_jsonable({"config": self.config}), sort_keys=True)]
        lines += [json.dumps(_jsonable(r), sort_keys=True) for r in records]
        self.files[name] = "\n".join(lines) + "\n"

    def write(self, wall, timings=None):
        self.dir.mkdir(parents=True, exist_ok=True)
        stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        head = (f"# qpreduce {__version__} command={self.command} generated={stamp} wall_s={wall:.3f}"
                + (f" timings={json.dumps(_jsonable(timings), sort_keys=True)}" if timings else ""))
        for name, body in sorted(self.files.items()):
            (self.dir / name).write_text(head + "\n" + body)
        return sorted(self.files)


def read_artifact(path):
    """Body of an artifact with the header line stripped (JSON files are parsed)."""
    text = Path(path).read_text()
    body = text.split("\n", 1)[1] if text.startswith("# qpreduce") else text
    if str(path).endswith(".json"):
        return json.loads(body)
    return body


# -- commands --------------------------------------------------------------------------

def _quality(cfg):
    q = cfg["quality"]
    if isinstance(q, str) and q not in QUALITY:
        raise ConfigError(f"quality must be one of {sorted(QUALITY)} or an object")
    return QUALITY[q] if isinstance(q, str) else q


def cmd_rotation(cfg, art, jobs):
    fr = make_frequency(cfg["frequency"])
    spec = cfg["rotation"]["cocycle"]
    q = _quality(cfg)
    if spec.get("kind") == "rotation":
        c = Cocycle(fr, MatrixTorusFunction.constant(rotation_matrix(float(spec["angle"])), d=fr.d, tag="SL2"))
    elif spec.get("kind") == "schrodinger":
        c = schrodinger_cocycle(make_potential(cfg["potential"], fr.d), float(spec["energy"]), fr)
    else:
        raise ConfigError("rotation.cocycle.kind must be 'rotation' or 'schrodinger'")
    est = rotation_number(c, q["n_iters"], q["n_phases"], cfg["seed"])
    rep = {"rho": est.rho, "error_bound": est.error_bound, "n_iters": est.n_iters,
           "estimator": {"n_iters": q["n_iters"], "n_phases": q["n_phases"], "seed": cfg["seed"]}}
    ok = True
    exp = cfg["rotation"].get("expect")
    if exp is not None:
        err = abs(((est.rho - float(exp)) + 0.5) % 1.0 - 0.5)
        ok = err < cfg["rotation"]["tol"]
        rep["check"] = {"expected": exp, "abs_err": err, "tol": cfg["rotation"]["tol"], "passed": ok}
    art.json("rotation.json", rep)
    return ok


def cmd_lyapunov(cfg, art, jobs):
    fr = make_frequency(cfg["frequency"])
    V = make_potential(cfg["potential"], fr.d)
    E = float(cfg["lyapunov"]["energy"])
    n = int(cfg["lyapunov"]["n_iters"])
    le = lyapunov_exponent(schrodinger_cocycle(V, E, fr), n, 8)
    art.json("lyapunov.json", {"E": E, "lyapunov": le, "estimator": {"n_iters": n, "n_phases": 8}})
    return True


def cmd_scan(cfg, art, jobs):
    fr = make_frequency(cfg["frequency"])
    V = make_potential(cfg["potential"], fr.d)
    s = cfg["scan"]
    sc = scan_spectrum(V, tuple(s["e_range"]), int(s["n_grid"]), cfg["quality"], fr,
                       label_radius=int(s["label_radius"]), label_tol=float(s["label_tol"]), jobs=jobs)
    art.csv("scan.csv", sc.to_csv())
    art.json("scan_report.json", {"gaps": [g.to_dict() for g in sc.gaps], "step": sc.step,
                                  "estimator": _quality(cfg), "label_tol": s["label_tol"]})
    return True


def _state_dump(st):
    return {"a_const": st.a_const, "deg_accum": list(st.deg_accum), "eps": st.eps,
            "b_accum": st.b_accum.to_dict(), "f_pert": st.f_pert.to_dict(), "steps": st.step_index}


def _run_reduce(cfg, fr, V, E):
    r = cfg["reduce"]
    sched = make_schedule(cfg["schedule"])
    c = schrodinger_cocycle(V, E, fr)
    if r["branch"] == "diophantine":
        rho_class = ("diophantine", float(r["gamma"]), float(r["tau"]))
    elif r["branch"] == "rational":
        rho_class = ("rational", tuple(int(v) for v in r["m"]))
    else:
        raise ConfigError("reduce.branch must be 'diophantine' or 'rational'")
    return reduce_full(c, sched, rho_class)


def cmd_reduce(cfg, art, jobs):
    fr = make_frequency(cfg["frequency"])
    V = make_potential(cfg["potential"], fr.d)
    E = float(cfg["reduce"]["energy"])
    st, rep = _run_reduce(cfg, fr, V, E)
    ok = rep.residual < float(cfg["reduce"]["residual_tol"])
    art.jsonl("telemetry.jsonl", st.telemetry)
    art.json("reduce_report.json", {"E": E, "branch": rep.branch, "steps": rep.steps, "final_eps": rep.final_eps,
                                    "deg_accum": list(rep.deg_accum), "classification": rep.classification,
                                    "rho_const": rep.rho_const, "sign": rep.sign, "residual": rep.residual,
                                    "notes": rep.notes, "residual_tol": cfg["reduce"]["residual_tol"],
                                    "passed": ok})
    art.json("final_state.json", _state_dump(st))
    return ok


def cmd_dualize(cfg, art, jobs):
    from . import duality
    from .spectrum import locate_energy_by_rotation, refine_energy_by_reduction
    fr = make_frequency(cfg["frequency"])
    V = make_potential(cfg["potential"], fr.d)
    if fr.d != 1:
        raise ConfigError("dualize supports d = 1 frequencies")
    p = cfg["dualize"]
    phase = float(p["phase"])
    op = duality.dual_operator(V, 1.0, fr, phase)
    lam = float(np.sum(np.abs(V.function().coeffs)))
    certs = []
    ok = True
    for m in p["sites"]:
        target = (phase + int(m) * fr.vec[0]) % 1.0
        if target > 0.5:
            target = 1.0 - target
        E0, _ = locate_energy_by_rotation(V, target, (-2 - lam - 0.1, 2 + lam + 0.1), 1e-6, fr, "default")
        E, rho, st, rep = refine_energy_by_reduction(V, target, E0, fr, make_schedule(cfg["schedule"]))
        ef = duality.extract_eigenfunction(st, int(m), phase, V, E, fr, radius=int(p["radius"]))
        o = duality.match_oracle(ef, op, int(p["radius"]))
        good = duality.check_good(ef, int(p["radius"]), float(p["C"]), float(p["eps"]))
        sule = duality.check_sule(ef, float(p["k_tilde"]), float(p["b"]))
        dec = duality.fit_decay_exponent(ef)
        passed = (o["overlap"] >= p["overlap_min"] and o["eigenvalue_mismatch"] < p["ev_tol"]
                  and ef.norm >= ef.norm_bound and dec >= p["decay_min"])
        ok = ok and passed
        art.csv(f"eigenfunction_m{int(m)}.csv", ef.to_csv())
        certs.append({"m": int(m), "E": E, "rho": rho, "center": list(ef.center), "norm": ef.norm,
                      "norm_bound": ef.norm_bound, "residual": ef.residual, "meta": ef.meta,
                      "oracle": o, "decay_exponent": dec, "good": good.to_dict(), "sule": sule.to_dict(),
                      "passed": passed})
    out = {"certificates": certs, "thresholds": {k: p[k] for k in ("overlap_min", "ev_tol", "decay_min")}}
    if p.get("counting"):
        frac, per = duality.pp_counting_check(op, int(p["radius"]), float(p["C"]), float(p["eps"]),
                                              int(p["radius"]), int(p["n_phases"]))
        out["counting"] = {"fraction": frac, "per_phase": per, "C": p["C"], "eps": p["eps"]}
    art.json("certificates.json", out)
    return ok


def cmd_gapopen(cfg, art, jobs):
    from . import gapopen
    fr = make_frequency(cfg["frequency"])
    V = make_potential(cfg["potential"], fr.d)
    g = cfg["gapopen"]
    m = tuple(int(v) for v in g["m"])
    sched = make_schedule(cfg["schedule"])
    if g.get("energy") is not None:
        E = float(g["energy"])
        st, _ = reduce_full(schrodinger_cocycle(V, E, fr), sched, ("rational", m))
    else:
        lam = float(np.sum(np.abs(V.function().coeffs)))
        sc = scan_spectrum(V, (-2 - lam - 0.2, 2 + lam + 0.2), int(g["scan_grid"]), "fast", fr, jobs=jobs)
        gaps = [x for x in sc.gaps if x.label == m]
        if not gaps:
            art.json("opening.json", {"error": f"no open gap labelled {list(m)} found by the scan"})
            return False
        gap = gaps[0]
        e_in = gap.lo if g["side"] == "left" else gap.hi
        brk = (e_in - sc.step, e_in) if g["side"] == "left" else (e_in + sc.step, e_in)
        res = refine_edge_by_reduction(V, fr, m, brk, sched)
        E, st = res.E, res.state
    W = ScalarTorusFunction.constant(1.0, fr.d) if g["W"] == "one" else _scalar_from_modes(g["W"], fr.d)
    nf = gapopen.normal_form_at_edge(V, E, st, fr)
    data = gapopen.mp_averages(nf, W)
    pred = gapopen.predict_opening(data, nf.c_offdiag, nf.sign)
    ver = gapopen.verify_opening(V, E, W, g["t"], pred, fr)
    gen = gapopen.generic_condition_check(nf, W)
    ok = all(r["agree"] is not False for r in ver)
    art.json("opening.json", {"E": E, "normal_form": nf.to_dict(), "averages": data.to_dict(),
                              "prediction": pred.to_dict(), "verification": ver, "generic": gen,
                              "passed": ok})
    return ok


def cmd_selftest(cfg, art, jobs):
    from . import acceptance
    ids = [int(i) for i in cfg["selftest"]["criteria"]]
    bad = set(ids) - set(acceptance.CHECKS)
    if bad:
        raise ConfigError(f"unknown criteria {sorted(bad)}")
    results = acceptance.run_checks(ids)
    art.json("acceptance.json", {"results": [r.to_dict() for r in results],
                                 "passed": all(r.passed for r in results)})
    art.timings = {f"c{r.cid}": r.timing for r in results}
    for r in results:
        print(r.line())
    return all(r.passed for r in results)


COMMANDS = {"rotation": cmd_rotation, "lyapunov": cmd_lyapunov, "scan": cmd_scan, "reduce": cmd_reduce,
            "dualize": cmd_dualize, "gapopen": cmd_gapopen, "selftest": cmd_selftest}


def _module_tag(err):
    tb = err.__traceback__
    mod = "cli"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("qpreduce."):
            mod = name.split(".")[1]
        tb = tb.tb_next
    return MODULE_TAGS.get(mod, mod)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="qpcli", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Reducibility, spectra and duality pipelines for quasi-periodic cocycles.",
        epilog="default configuration (override any subset in a JSON file):\n" + dumps(DEFAULTS))
    ap.add_argument("--version", action="version", version=f"qpreduce {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                           help=f"run the {name} pipeline")
        p.add_argument("--config", default=None, help="JSON config file (missing keys take defaults)")
        p.add_argument("--out", default=os.environ.get("QPREDUCE_OUT", "qp_out"),
                       help="output directory (env QPREDUCE_OUT overrides the default)")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg, _ = load_config(args.config)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        art = Artifacts(args.out, args.command, cfg)
        art.timings = None
        ok = COMMANDS[args.command](cfg, art, args.jobs)
    except (ConfigError, KeyError, TypeError) as err:
        print(f"qpcli: config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (KamError, SmallDivisorError, ChainViolation, np.linalg.LinAlgError, FloatingPointError,
            RuntimeError, ValueError) as err:
        print(f"qpcli: [{_module_tag(err)}] numerical halt: {err}", file=sys.stderr)
        return EXIT_HALT
    files = art.write(time.perf_counter() - t0, art.timings)
    print(f"{args.command}: {'PASS' if ok else 'FAIL'}; wrote {', '.join(files)} to {args.out}")
    return EXIT_OK if ok else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
