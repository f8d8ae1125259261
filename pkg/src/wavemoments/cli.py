"""Command line front end: ``wavemoments {moment,simulate,analyze,selftest}``.

Configuration is a TOML file of flat dotted keys, e.g.::

    wave.kappa = 1.0
    wave.lambda = 1.0
    position.kind = "constant"
    grid.dt = 0.0078125

Every CSV starts with a comment line carrying the config hash and a comment
line with column units, followed by the column header.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analysis as an
from . import closed_moments as cm
from . import heat_extension as he
from . import kernels as kn
from . import simulator as sim
from . import weighted_convolution as wc
from ._charquad import QuadratureError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SELFTEST = 0, 2, 3, 4
THREADS_ENV = "WAVEMOMENTS_THREADS"


class ConfigError(ValueError):
    pass


_ANY_NUM = (int, float)
_NONE = type(None)

# key -> (accepted types, default)
SCHEMA: dict[str, tuple[tuple, Any]] = {
    "wave.kappa": (_ANY_NUM, 1.0),
    "wave.lambda": (_ANY_NUM, 1.0),
    "rho.kind": ((str,), "linear"),
    "rho.vbar": (_ANY_NUM, 0.0),
    "rho.lip_upper": (_ANY_NUM + (_NONE,), None),
    "rho.sigma_upper": (_ANY_NUM, 0.0),
    "rho.lip_lower": (_ANY_NUM + (_NONE,), None),
    "rho.sigma_lower": (_ANY_NUM, 0.0),
    "position.kind": ((str,), "constant"),
    "position.w": (_ANY_NUM, 1.0),
    "position.a": (_ANY_NUM, 0.25),
    "position.c": (_ANY_NUM, 1.0),
    "position.beta": (_ANY_NUM, 1.0),
    "position.xs": ((list,), [-1.0, 0.0, 1.0]),
    "position.values": ((list,), [0.0, 1.0, 0.0]),
    "velocity.kind": ((str,), "zero"),
    "velocity.wtilde": (_ANY_NUM, 0.0),
    "velocity.x0": (_ANY_NUM, 0.0),
    "velocity.mass": (_ANY_NUM, 1.0),
    "velocity.c": (_ANY_NUM, 1.0),
    "velocity.beta": (_ANY_NUM, 1.0),
    "moment.t": ((list,), []),
    "moment.x": ((list,), []),
    "moment.p": ((int,), 2),
    "moment.reference_x": (_ANY_NUM, 0.0),
    "moment.exact": ((bool,), True),
    "grid.t_max": (_ANY_NUM, 1.0),
    "grid.x_min": (_ANY_NUM, -0.25),
    "grid.x_max": (_ANY_NUM, 0.25),
    "grid.dt": (_ANY_NUM, 1.0 / 128),
    "grid.n_paths": ((int,), 1000),
    "grid.seed": ((int,), 0),
    "grid.x_shift": (_ANY_NUM + (_NONE,), None),
    "simulate.p": ((list,), [2]),
    "simulate.validate": ((bool,), True),
    "analyze.task": ((str,), "lyapunov"),
    "lyapunov.x": (_ANY_NUM, 0.0),
    "lyapunov.t_lo": (_ANY_NUM, 10.0),
    "lyapunov.t_hi": (_ANY_NUM, 50.0),
    "lyapunov.n": ((int,), 41),
    "lyapunov.p": ((int,), 2),
    "growth.alpha_min": (_ANY_NUM, 0.8),
    "growth.alpha_max": (_ANY_NUM, 1.3),
    "growth.alpha_step": (_ANY_NUM, 0.01),
    "growth.t_eval": (_ANY_NUM, 40.0),
    "holder.gamma": (_ANY_NUM + (str,), "inf"),
    "holder.a": (_ANY_NUM + (_NONE,), None),
    "holder.t": (_ANY_NUM, 1.0),
    "holder.empirical": ((bool,), False),
    "holder.lag_steps": ((list,), [1, 2, 5, 10]),
    "holder.align": ((str,), "right"),
    "holder.bound_lags": ((list,), [0.01, 0.03, 0.1, 0.3, 1.0]),
    "theta.kind": ((str,), "one"),
    "theta.r": (_ANY_NUM, 1.0),
    "picard.t": (_ANY_NUM, 1.0),
    "picard.dt": (_ANY_NUM, 1.0 / 64),
    "picard.x": ((list,), [0.0]),
    "output.dir": ((str,), "out"),
    "output.verbosity": ((int,), 1),
}

_CHOICES = {
    "rho.kind": ("linear", "quasilinear", "lipschitz"),
    "position.kind": ("zero", "constant", "power", "expdecay", "tabulated"),
    "velocity.kind": ("zero", "constant", "dirac", "expdecay"),
    "analyze.task": ("lyapunov", "growth", "holder", "picard"),
    "holder.align": ("right", "left"),
    "theta.kind": ("one", "power", "expinv"),
}

# keys that do not change any numerical output
_UNHASHED = ("output.dir", "output.verbosity")


def _flatten(tree, prefix=""):
    out = {}
    for key, val in tree.items():
        full = f"{prefix}{key}"
        if isinstance(val, dict):
            out.update(_flatten(val, full + "."))
        else:
            out[full] = val
    return out


def _check_type(key, val):
    types, _ = SCHEMA[key]
    # bool is an int subclass; keep them apart
    if isinstance(val, bool) and bool not in types:
        raise ConfigError(f"{key}: expected {'/'.join(t.__name__ for t in types)}, got a boolean")
    if not isinstance(val, types):
        raise ConfigError(f"{key}: expected {'/'.join(t.__name__ for t in types)}, got {type(val).__name__}")
    if key in _CHOICES and val not in _CHOICES[key]:
        raise ConfigError(f"{key}: must be one of {', '.join(_CHOICES[key])}, got {val!r}")


def load_flat(path: Optional[str]) -> dict:
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = _flatten(tomllib.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}") from exc
    for key in raw:
        if key not in SCHEMA:
            raise ConfigError(f"{key}: unknown configuration key")
    flat = {k: default for k, (_, default) in SCHEMA.items()}
    for key, val in raw.items():
        _check_type(key, val)
        flat[key] = val
    return flat


def config_hash(flat: dict) -> str:
    payload = {k: v for k, v in flat.items() if k not in _UNHASHED}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _num_list(flat, key, kind=float):
    vals = flat[key]
    if not all(isinstance(v, _ANY_NUM) and not isinstance(v, bool) for v in vals):
        raise ConfigError(f"{key}: expected a list of numbers")
    return [kind(v) for v in vals]


@dataclass
class RunConfig:
    """Validated configuration; ``flat`` keeps every key with defaults filled in."""

    flat: dict
    wave: kn.WaveParams
    rho: Any
    init: cm.InitialData
    theta: Any
    holder: an.HolderQuery
    out_dir: Path
    verbosity: int
    grid: Optional[sim.GridSpec] = None
    hash: str = field(default="")

    def get(self, key):
        return self.flat[key]


def _build(key_prefix, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{key_prefix}: {exc}") from exc


def _rho(flat):
    kind, lam = flat["rho.kind"], float(flat["wave.lambda"])
    if kind == "linear":
        return cm.Linear(lam)
    if kind == "quasilinear":
        return cm.QuasiLinear(lam, float(flat["rho.vbar"]))
    if flat["rho.lip_upper"] is None:
        raise ConfigError("rho.lip_upper: required when rho.kind = 'lipschitz'")
    low = flat["rho.lip_lower"]
    return cm.LipschitzEnvelope(float(flat["rho.lip_upper"]), float(flat["rho.sigma_upper"]),
                                None if low is None else float(low), float(flat["rho.sigma_lower"]))


def _position(flat):
    kind = flat["position.kind"]
    if kind == "zero":
        return cm.Zero()
    if kind == "constant":
        return cm.Constant(float(flat["position.w"]))
    if kind == "power":
        return cm.PowerSingular(float(flat["position.a"]))
    if kind == "expdecay":
        return cm.ExpDecay(float(flat["position.c"]), float(flat["position.beta"]))
    return cm.Tabulated(tuple(_num_list(flat, "position.xs")), tuple(_num_list(flat, "position.values")))


def _velocity(flat):
    kind = flat["velocity.kind"]
    if kind == "zero":
        return cm.Zero()
    if kind == "constant":
        return cm.ConstantDensity(float(flat["velocity.wtilde"]))
    if kind == "dirac":
        return cm.Dirac(float(flat["velocity.x0"]), float(flat["velocity.mass"]))
    return cm.ExpDecayDensity(float(flat["velocity.c"]), float(flat["velocity.beta"]))


def _theta(flat):
    kind = flat["theta.kind"]
    if kind == "one":
        return he.One()
    if kind == "power":
        return he.PowerTaper(float(flat["theta.r"]))
    return he.ExpInverse()


def _holder(flat):
    g = flat["holder.gamma"]
    if isinstance(g, str):
        if g.strip().lower() not in ("inf", "infinity"):
            raise ConfigError(f"holder.gamma: expected a number or 'inf', got {g!r}")
        g = math.inf
    a = flat["holder.a"]
    return an.HolderQuery(float(g), None if a is None else float(a))


def _grid(flat, init):
    shift = flat["grid.x_shift"]
    if shift is None:
        # keep nodes off the singular characteristics of power-law data
        shift = 0.5 if isinstance(init.position, cm.PowerSingular) else 0.0
    if flat["grid.n_paths"] < 2:
        raise ConfigError("grid.n_paths: need at least 2 paths")
    if flat["grid.dt"] <= 0:
        raise ConfigError("grid.dt: must be positive")
    return sim.GridSpec(float(flat["grid.t_max"]), float(flat["grid.x_min"]), float(flat["grid.x_max"]),
                        float(flat["grid.dt"]), float(flat["wave.kappa"]), int(flat["grid.n_paths"]),
                        int(flat["grid.seed"]), float(shift))


def build_config(flat: dict, out_override: Optional[str] = None) -> RunConfig:
    wave = _build("wave", lambda: kn.WaveParams(float(flat["wave.kappa"]), float(flat["wave.lambda"])))
    rho = _build("rho", lambda: _rho(flat))
    init = _build("position/velocity", lambda: cm.InitialData(_build("position", lambda: _position(flat)),
                                                              _build("velocity", lambda: _velocity(flat))))
    theta = _build("theta", lambda: _theta(flat))
    holder = _build("holder", lambda: _holder(flat))
    grid = _build("grid", lambda: _grid(flat, init))
    out = Path(out_override if out_override is not None else flat["output.dir"])
    return RunConfig(flat, wave, rho, init, theta, holder, out, int(flat["output.verbosity"]),
                     grid, config_hash(flat))


# ---------------------------------------------------------------- CSV output


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(path: Path, cfg: RunConfig, columns, rows):
    """``columns`` is a list of (name, unit)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_hash={cfg.hash}",
             "# units: " + ",".join(f"{n}=[{u}]" for n, u in columns),
             ",".join(n for n, _ in columns)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    # newline="\n" keeps files byte-identical across platforms
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _say(cfg, level, msg):
    if cfg.verbosity >= level:
        print(msg)


# ---------------------------------------------------------------- subcommands


def cmd_moment(cfg: RunConfig) -> int:
    ts = _num_list(cfg.flat, "moment.t")
    xs = _num_list(cfg.flat, "moment.x")
    p = cfg.get("moment.p")
    if p < 2:
        raise ConfigError("moment.p: must be >= 2")
    exact = cfg.get("moment.exact")
    ref = float(cfg.get("moment.reference_x"))
    k = cfg.wave.kappa
    if exact and isinstance(cfg.rho, cm.LipschitzEnvelope):
        raise ConfigError("rho.kind: exact moments need a linear or quasilinear coupling "
                          "(set moment.exact = false for bounds only)")
    if isinstance(cfg.rho, cm.LipschitzEnvelope) and cfg.rho.lip_lower is None:
        raise ConfigError("rho.lip_lower: the lower bound column needs a lower envelope")
    rows = []
    for t in ts:
        for x in xs:
            try:
                m2 = cm.second_moment(t, x, cfg.init, cfg.rho, k) if exact else math.nan
                tp = cm.two_point(t, x, ref, cfg.init, cfg.rho, k) if exact else math.nan
                lo = cm.second_moment_lower(t, x, cfg.init, cfg.rho, k)
                up = cm.pth_moment_upper(p, t, x, cfg.init, cfg.rho, k)
            except cm.SingularPointError as exc:
                raise ConfigError(f"moment.x: ({t}, {x}) lies on a singular characteristic: {exc}") from exc
            rows.append((t, x, m2, lo, up, tp))
    cols = [("t", "time"), ("x", "length"), ("second_moment", "u^2"), ("lower_bound", "u^2"),
            (f"upper_bound_p{p}", f"|u|^{p}"), (f"two_point_ref{fmt(ref)}", "u^2")]
    path = write_csv(cfg.out_dir / "moment.csv", cfg, cols, rows)
    _say(cfg, 1, f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK


def _closed_form_available(cfg):
    return isinstance(cfg.rho, (cm.Linear, cm.QuasiLinear))


def cmd_simulate(cfg: RunConfig, n_threads: int = 1) -> int:
    p_list = tuple(_num_list(cfg.flat, "simulate.p", int))
    grid = cfg.grid
    t0 = time.perf_counter()
    est = sim.mc_moments(grid, cfg.init, cfg.rho, cfg.wave.kappa, p_list=p_list, n_threads=n_threads)
    _say(cfg, 2, f"simulated {grid.n_paths} paths in {time.perf_counter() - t0:.1f} s")
    cols = [("t", "time"), ("x", "length"), ("mean", "u"), ("se_mean", "u")]
    for p in p_list:
        cols += [(f"m{p}", f"u^{p}"), (f"se_m{p}", f"u^{p}")]
    rows = []
    for k, t in enumerate(est.times):
        for c, x in enumerate(est.xs):
            if np.isnan(est.mean[k, c]):
                continue
            row = [t, x, est.mean[k, c], est.se_mean[k, c]]
            for p in p_list:
                row += [est.moments[p][k, c], est.se[p][k, c]]
            rows.append(row)
    path = write_csv(cfg.out_dir / "field.csv", cfg, cols, rows)
    _say(cfg, 1, f"wrote {path} ({len(rows)} rows)")
    if cfg.get("simulate.validate") and 2 in p_list and _closed_form_available(cfg):
        vrows = validation_rows(cfg, est)
        vcols = [("k", "index"), ("i", "index"), ("t", "time"), ("x", "length"), ("mc", "u^2"),
                 ("se", "u^2"), ("closed_form", "u^2"), ("abs_diff", "u^2"), ("z", "1")]
        vpath = write_csv(cfg.out_dir / "validation.csv", cfg, vcols, vrows)
        zs = np.array([r[-1] for r in vrows])
        frac = float(np.mean(np.abs(zs) <= 3)) if len(zs) else 1.0
        _say(cfg, 1, f"wrote {vpath}: {frac:.4f} of {len(zs)} cells with |z| <= 3")
    return EXIT_OK


def validation_rows(cfg: RunConfig, est: sim.FieldEstimate):
    """(k, i, t, x, mc, se, closed form, |mc - closed|, z) for every node with t > 0."""
    grid = est.grid
    rows = []
    for k in range(1, len(est.times)):
        t = float(est.times[k])
        for c, x in enumerate(est.xs):
            m = est.moments[2][k, c]
            if np.isnan(m):
                continue
            exact = cm.second_moment(t, float(x), cfg.init, cfg.rho, cfg.wave.kappa)
            s = est.se[2][k, c]
            diff = abs(m - exact)
            if s > 0:
                z = (m - exact) / s
            else:
                z = 0.0 if diff == 0 else math.copysign(math.inf, m - exact)
            i = int(round(x / grid.dx - grid.x_shift))
            rows.append((k, i, t, float(x), m, s, exact, diff, z))
    return rows


def _growth_predicted(cfg):
    pos = cfg.init.position
    kappa = cfg.wave.kappa
    if isinstance(pos, cm.ExpDecay):
        q = cm.GrowthQuery(2, pos.beta, pos.beta)
        lo, up = cm.growth_index_bounds(q, cfg.rho, kappa)
        return lo, up
    if isinstance(pos, (cm.Tabulated, cm.Zero)):
        return kappa, kappa
    return math.nan, math.nan


def _auto_center(grid: sim.GridSpec, target: float, t: float) -> float:
    """Smallest node at level t/dt that is >= target."""
    K = int(round(t / grid.dt))
    i = math.ceil(target / grid.dx - grid.x_shift - 1e-9)
    if (i - K) % 2:
        i += 1
    return (i + grid.x_shift) * grid.dx


def cmd_analyze(cfg: RunConfig, n_threads: int = 1) -> int:
    task = cfg.get("analyze.task")
    kappa = cfg.wave.kappa
    report = []
    out = cfg.out_dir
    if task == "lyapunov":
        x = float(cfg.get("lyapunov.x"))
        lo, hi = float(cfg.get("lyapunov.t_lo")), float(cfg.get("lyapunov.t_hi"))
        ts = np.linspace(lo, hi, cfg.get("lyapunov.n"))
        ms = [cm.second_moment(t, x, cfg.init, cfg.rho, kappa) for t in ts]
        p = cfg.get("lyapunov.p")
        ups = [cm.pth_moment_upper(p, t, x, cfg.init, cfg.rho, kappa) for t in ts]
        slope = an.fit_lyapunov(list(zip(ts, ms)), (lo, hi))
        write_csv(out / "lyapunov.csv", cfg, [("t", "time"), ("second_moment", "u^2"),
                                               (f"upper_bound_p{p}", f"|u|^{p}")],
                  list(zip(ts, ms, ups)))
        report += [("lyapunov_m2", slope, cm.lyapunov_anderson_m2(cfg.rho, kappa)),
                   (f"lyapunov_upper_p{p}", math.nan, cm.lyapunov_upper(p, cfg.rho, kappa))]
    elif task == "growth":
        a0, a1, da = (float(cfg.get(k)) for k in ("growth.alpha_min", "growth.alpha_max", "growth.alpha_step"))
        if not 0 < a0 < a1 or da <= 0:
            raise ConfigError("growth.alpha_*: need 0 < alpha_min < alpha_max and alpha_step > 0")
        alphas = np.round(a0 + da * np.arange(int(math.floor((a1 - a0) / da + 1e-9)) + 1), 12)
        t_eval = float(cfg.get("growth.t_eval"))
        scan = an.growth_index_scan(lambda t, x: cm.second_moment(t, x, cfg.init, cfg.rho, kappa),
                                    alphas, t_eval, kappa)
        write_csv(out / "growth.csv", cfg, [("alpha", "velocity"), ("rate", "1/time")],
                  list(zip(scan.alphas, scan.values)))
        lo, up = _growth_predicted(cfg)
        cross = math.nan if scan.crossing is None else scan.crossing
        report += [("growth_crossing", cross, lo), ("growth_predicted_upper", math.nan, up)]
        if scan.crossing is None:
            _say(cfg, 1, f"no sign change in the scan; bracket {scan.bracket}")
    elif task == "holder":
        q = cfg.holder
        report.append(("holder_predicted", math.nan, an.predicted_holder(q)))
        if q.a is not None:
            t = float(cfg.get("holder.t"))
            lags = _num_list(cfg.flat, "holder.bound_lags")
            rows = an.holder_lower_bound_check(q.a, t, lags, kappa, cfg.wave.lam)
            write_csv(out / "holder_bound.csv", cfg, [("h", "length"), ("lhs", "u^2"), ("rhs", "u^2")], rows)
            report.append(("holder_bound_ok", float(all(l >= r for _, l, r in rows)), 1.0))
        if cfg.get("holder.empirical"):
            fit = _empirical_holder(cfg, n_threads)
            write_csv(out / "holder_increments.csv", cfg, [("lag", "length"), ("rms_increment", "u")],
                      list(zip(fit.lags, fit.rms)))
            report.append(("holder_empirical", fit.exponent, an.predicted_holder(q)))
            report.append(("holder_degenerate", float(fit.degenerate), 0.0))
    else:  # picard
        t = float(cfg.get("picard.t"))
        xs = _num_list(cfg.flat, "picard.x")
        if not xs:
            raise ConfigError("picard.x: need at least one position")
        # the lattice must hold the backward cone of every queried point
        reach = max(abs(x) for x in xs) + kappa * t
        lat = _build("picard", lambda: wc.Lattice.covering(t, float(cfg.get("picard.dt")), kappa, x_max=reach))
        res = wc.picard_second_moment(cfg.init, cfg.rho, cfg.theta, lat)
        rows = []
        for x in xs:
            val = res.field.at(t, x)
            ref = (cm.second_moment(t, x, cfg.init, cfg.rho, kappa)
                   if isinstance(cfg.theta, he.One) and _closed_form_available(cfg) else math.nan)
            rows.append((t, x, val, ref))
        write_csv(out / "picard.csv", cfg, [("t", "time"), ("x", "length"), ("picard", "u^2"),
                                             ("closed_form", "u^2")], rows)
        report.append(("picard_iterations", res.iterations, math.nan))
    write_csv(out / f"{task}_report.csv", cfg, [("quantity", "-"), ("estimate", "-"), ("predicted", "-")], report)
    for name, est, pred in report:
        _say(cfg, 1, f"{name}: estimate={fmt(est)} predicted={fmt(pred)}")
    return EXIT_OK


def _empirical_holder(cfg: RunConfig, n_threads: int):
    g0 = cfg.grid
    t = float(cfg.get("holder.t"))
    steps = _num_list(cfg.flat, "holder.lag_steps", int)
    if any(m < 1 for m in steps):
        raise ConfigError("holder.lag_steps: entries must be positive integers")
    lags = [2 * m * g0.dx for m in steps]
    target = cfg.wave.kappa * t if isinstance(cfg.init.position, cm.PowerSingular) else 0.0
    c = _auto_center(g0, target, t)
    align = cfg.get("holder.align")
    span = max(lags) + 2 * g0.dx
    lo, hi = (c - span, c + g0.dx) if align == "right" else (c - g0.dx, c + span)
    grid = sim.GridSpec(t, lo, hi, g0.dt, g0.kappa, g0.n_paths, g0.master_seed, g0.x_shift)
    return an.empirical_holder(grid, cfg.init, cfg.rho, cfg.wave.kappa, t, [c], lags,
                               align=align, n_threads=n_threads)


# ---------------------------------------------------------------- self-test


def _suite_kernels():
    p = kn.WaveParams(1.0, 1.0)
    worst = 0.0
    for t in np.linspace(0.1, 5.0, 12):
        for x in np.linspace(-t, t, 12):
            K = kn.kernel_K(t, x, p)
            s = sum(kn.kernel_L_n(n, t, x, p) for n in range(41))
            worst = max(worst, abs(s - K) / abs(K))
    return worst <= 1e-12, f"kernels: sum of L_n over n <= 40 equals K (worst rel {worst:.2e})"


def _suite_int_K():
    from scipy import integrate
    p = kn.WaveParams(1.0, 1.3)
    worst = 0.0
    for t in (0.5, 1.0, 2.0):
        num = integrate.quad(lambda x: kn.kernel_K(t, x, p), -t, t, epsabs=1e-13, epsrel=1e-13)[0]
        worst = max(worst, abs(num - kn.int_K_dx(t, p)))
    return worst <= 1e-8, f"kernels: integral of K over x matches its closed form (worst {worst:.2e})"


def _suite_constant_moment():
    worst = 0.0
    for lam in (0.5, 1.0, 2.0):
        for t in (0.3, 1.0, 4.0):
            m = cm.second_moment(t, 0.2, cm.InitialData(cm.Constant(1.0)), cm.Linear(lam), 1.0)
            ref = math.cosh(lam * math.sqrt(0.5) * t)
            worst = max(worst, abs(m - ref) / ref)
    return worst <= 1e-12, f"closed_moments: constant data gives cosh growth (worst rel {worst:.2e})"


def _suite_dirac_moment():
    lam, vbar = 1.0, 0.5
    p = kn.WaveParams(1.0, lam)
    init = cm.InitialData(cm.Zero(), cm.Dirac(0.0, 1.0))
    worst = 0.0
    for t, x in ((1.0, 0.0), (2.0, 0.7), (0.5, -0.3)):
        m = cm.second_moment(t, x, init, cm.QuasiLinear(lam, vbar), 1.0)
        ref = kn.kernel_K(t, x, p) / lam**2 + vbar**2 * kn.calH(t, p)
        worst = max(worst, abs(m - ref) / abs(ref))
    return worst <= 1e-12, f"closed_moments: Dirac velocity gives K / lam^2 + vbar^2 H (worst rel {worst:.2e})"


def _suite_forward_backward():
    rng = np.random.default_rng(5)
    lat = wc.Lattice(0.1, 1.0, 6, 6)
    T, X = np.meshgrid(lat.times, lat.xs, indexing="ij")
    cone = np.abs(X) <= T + 1e-12
    th = wc.LatticeField(lat, rng.random(lat.shape) + 0.5)
    worst = 0.0
    for n in (2, 3):
        gs = [wc.LatticeField(lat, rng.random(lat.shape) * cone, "source")]
        gs += [wc.LatticeField(lat, rng.random(lat.shape) * cone, "lag") for _ in range(n - 1)]
        for s, y in ((0.3, 0.2), (0.6, -0.1)):
            a = wc.multi_conv_forward(gs, th, 0.6, 0.1, s, y)
            b = wc.multi_conv_backward(gs, th, 0.6, 0.1, s, y)
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return worst <= 1e-10, f"weighted_convolution: forward and backward iterated kernels agree (worst {worst:.2e})"


def _suite_picard():
    lat = wc.Lattice.covering(1.0, 1.0 / 64, 1.0)
    init = cm.InitialData(cm.Constant(1.0))
    res = wc.picard_second_moment(init, cm.Linear(1.0), he.One(), lat)
    err = abs(res.field.at(1.0, 0.0) - math.cosh(math.sqrt(0.5)))
    return err <= 1e-3, f"weighted_convolution: Picard fixed point matches cosh growth (err {err:.2e})"


def _suite_heat_derivative():
    worst = 0.0
    nu, t = 1.0, 0.7
    h = 1e-4
    for n in range(1, 5):
        for z in (-0.9, 0.1, 1.4):
            # derivatives are in y with z = x - y, so d/dy = -d/dz
            fd = -(he.heat_kernel_derivative(n - 1, nu, t, z + h)
                   - he.heat_kernel_derivative(n - 1, nu, t, z - h)) / (2 * h)
            ex = he.heat_kernel_derivative(n, nu, t, z)
            worst = max(worst, abs(fd - ex) / max(abs(ex), 1e-3))
    return worst <= 1e-6, f"heat_extension: heat-kernel derivatives match finite differences (worst {worst:.2e})"


def _suite_admissible():
    ok = (he.admissible(he.One(), 0) and not he.admissible(he.One(), 1)
          and he.admissible(he.PowerTaper(1.0), 2) and not he.admissible(he.PowerTaper(1.0), 3)
          and all(he.admissible(he.ExpInverse(), k) for k in range(8)))
    return ok, "heat_extension: taper admissibility table"


def _suite_simulator():
    g = sim.GridSpec(0.25, -0.1, 0.1, 1.0 / 32, 1.0, n_paths=3, master_seed=11)
    init = cm.InitialData(cm.Constant(1.0))
    _, _, a = sim.simulate_path(g, init, cm.Linear(1.0), 1.0, 1)
    _, _, b = sim.simulate_path_direct(g, init, cm.Linear(1.0), 1.0, 1)
    err = float(np.nanmax(np.abs(a - b)))
    return err <= 1e-12, f"simulator: cone recursion equals the direct cone sum (err {err:.2e})"


def _suite_lyapunov():
    ts = np.linspace(0.0, 5.0, 11)
    s = an.fit_lyapunov(list(zip(ts, np.exp(3.0 * ts))), (0.0, 5.0))
    return abs(s - 3.0) <= 1e-12, f"analysis: slope of a pure exponential (got {s!r})"


SUITES = [_suite_kernels, _suite_int_K, _suite_constant_moment, _suite_dirac_moment,
          _suite_forward_backward, _suite_picard, _suite_heat_derivative, _suite_admissible,
          _suite_simulator, _suite_lyapunov]

FAULTS = ("kernel_K",)


def cmd_selftest(inject_fault: Optional[str] = None, verbosity: int = 1) -> int:
    saved = kn.kernel_K
    if inject_fault == "kernel_K":
        kn.kernel_K = lambda t, x, p: saved(t, x, p) * (1.0 + 1e-6)
    elif inject_fault is not None:
        raise ConfigError(f"--inject-fault: unknown fault {inject_fault!r}; known: {', '.join(FAULTS)}")
    failed = []
    try:
        for suite in SUITES:
            try:
                ok, msg = suite()
            except Exception as exc:  # a crashing suite is a failed suite
                ok, msg = False, f"{suite.__name__}: raised {type(exc).__name__}: {exc}"
            if verbosity >= 1:
                print(("PASS " if ok else "FAIL ") + msg)
            if not ok:
                failed.append(msg)
    finally:
        kn.kernel_K = saved
    if failed:
        print(f"selftest: {len(failed)} suite(s) failed")
        return EXIT_SELFTEST
    print("selftest: all suites passed")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def _threads(arg: Optional[int]) -> int:
    if arg is not None:
        n = arg
    else:
        env = os.environ.get(THREADS_ENV)
        try:
            n = int(env) if env else 1
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV}: expected an integer, got {env!r}") from exc
    if n < 1:
        raise ConfigError("--threads: must be >= 1")
    return n


def make_parser():
    ap = argparse.ArgumentParser(prog="wavemoments", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("moment", "simulate", "analyze"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML file of dotted keys")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--seed", type=int, help="master seed (overrides grid.seed)")
        sp.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    st = sub.add_parser("selftest")
    st.add_argument("--inject-fault", choices=FAULTS, help="perturb a kernel to check the harness")
    return ap


def _origin(exc) -> str:
    """Name of the innermost package module the exception passed through."""
    name = "cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        path = Path(frame.filename)
        if path.parent == Path(__file__).parent:
            name = path.stem
    return name


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest(args.inject_fault)
        flat = load_flat(args.config)
        if args.seed is not None:
            flat["grid.seed"] = args.seed
        cfg = build_config(flat, args.out)
        n_threads = _threads(args.threads)
        if args.command == "moment":
            return cmd_moment(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, n_threads)
        return cmd_analyze(cfg, n_threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (wc.PicardNonConvergence, QuadratureError) as exc:
        print(f"numerical failure in {_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError) as exc:
        print(f"error in {_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
