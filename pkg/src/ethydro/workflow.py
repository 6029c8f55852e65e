"""Run orchestration: configuration, task DAG, manifest, reproducibility.

A run is a flat list of small tasks (spectra, per-observable analyses,
verdicts) executed in dependency stages. Tasks exchange nothing but
immutable artifacts: files under the output directory, or entries in an
in-memory pool that are written exactly once. Each task draws its seed
from the base seed and its own id, so outputs are independent of
scheduling order and of how many workers a stage uses.
"""

import dataclasses
import hashlib
import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from configparser import ConfigParser
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    finite_size_fit,
    fourier_f2,
    oscillation_filter,
    powerlaw_fit,
    roi_check,
    saturation_value,
)
from .errors import ConfigError, TaskError
from .lattice import (
    ObservableDescriptor,
    build_hamiltonian,
    build_observable,
    hilbert_dim,
    make_spec,
    preset_spec,
    spectral_bounds,
)
from .moments import moment_table, overlap_order
from .spectra import (
    diagonal_ensemble_variance,
    diagonal_matrix_elements,
    ed_autocorrelator,
    f2_binned,
    gap_ratio,
)
from . import store
from .typicality import TimeSeries, default_realizations, dqt_autocorrelator, make_run

METHODS = ("ed", "dqt", "both")
ROUTES = ("auto", "dense", "sectors")

# above this dimension the single dense block is replaced by translation
# sectors; well below the hard diagonalization cap, chosen for wall clock
DENSE_ROUTE_LIMIT = 3**7


# ============================================================
# observables from text
# ============================================================


def parse_observable(text):
    """Descriptor from compact text like "sx1" or "sx1sx2sx3"."""
    t = str(text).strip().lower()
    tokens = re.findall(r"s([xyz])([0-9]+)", t)
    rebuilt = "".join(f"s{a}{s}" for a, s in tokens)
    if not tokens or rebuilt != t:
        raise ConfigError(
            f"cannot parse observable {text!r}; expected forms like sx1, sz3, sx1sx2"
        )
    factors = tuple((int(site), axis) for axis, site in tokens)
    for site, _ in factors:
        if site < 1:
            raise ConfigError(f"sites are 1-based, got {site}")
    return ObservableDescriptor(name=t, factors=factors)


# ============================================================
# run configuration
# ============================================================


@dataclass(frozen=True)
class RunConfig:
    """Fully defaulted description of one pipeline run.

    Either a model preset name or an explicit (model, couplings) pair;
    everything else is analysis knobs. None means "resolve automatically"
    and the resolution is recorded per task in the manifest.
    """

    preset: str | None = "tilted-ising-paper"
    model: str | None = None
    couplings: tuple = ()
    lengths: tuple = (6,)
    betas: tuple = (0.0,)
    observables: tuple = ("sx1",)
    method: str = "ed"
    route: str = "auto"
    dt: float = 0.1
    t_max: float = 20.0
    bin_width: float | None = None
    fit_window: tuple | None = None
    filter_scale: float = 2.0
    n_p: int | None = None
    seed_base: int = 7041
    cheb_tol: float = 1e-12
    m_max: int = 6
    overlap_threshold: float | None = None
    roi_tol: float | None = None
    dynamical_z: float = 2.0
    out_dir: str = "ethydro-run"
    workers: int = 1

    def __post_init__(self):
        coerce = object.__setattr__
        coerce(self, "lengths", tuple(int(x) for x in self.lengths))
        coerce(self, "betas", tuple(float(b) for b in self.betas))
        coerce(self, "observables", tuple(str(o) for o in self.observables))
        coerce(self, "couplings", tuple(sorted(
            (str(k), float(v)) for k, v in dict(self.couplings).items())))
        if self.fit_window is not None:
            fw = tuple(float(x) for x in self.fit_window)
            if len(fw) != 2 or not fw[0] < fw[1]:
                raise ConfigError("fit_window must be (lo, hi) with lo < hi")
            coerce(self, "fit_window", fw)
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.route not in ROUTES:
            raise ConfigError(f"route must be one of {ROUTES}")
        if self.model is not None and self.preset is not None:
            raise ConfigError("give a preset or an explicit model, not both")
        if self.model is None and self.preset is None:
            raise ConfigError("need a preset or an explicit model")
        if self.dt <= 0 or self.t_max <= 0:
            raise ConfigError("dt and t_max must be positive")
        if self.filter_scale <= 0:
            raise ConfigError("filter_scale must be positive")
        if self.m_max < 1:
            raise ConfigError("m_max must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not self.lengths:
            raise ConfigError("need at least one chain length")
        for L in self.lengths:
            if L < 2:
                raise ConfigError("chain lengths start at 2")
        for b in self.betas:
            if b < 0:
                raise ConfigError("beta must be nonnegative")
        for o in self.observables:
            parse_observable(o)

    @classmethod
    def make(cls, **kw):
        """Constructor that drops the preset default when a model is given."""
        if kw.get("model") is not None and "preset" not in kw:
            kw["preset"] = None
        return cls(**kw)

    def spec_for(self, length):
        if self.preset is not None:
            return preset_spec(self.preset, length)
        return make_spec(self.model, length, **dict(self.couplings))

    def route_for(self, length):
        if self.route != "auto":
            return self.route
        return "dense" if hilbert_dim(length) <= DENSE_ROUTE_LIMIT else "sectors"

    def n_p_for(self, length):
        return self.n_p if self.n_p is not None else default_realizations(length)

    def window_for(self):
        if self.fit_window is not None:
            return self.fit_window
        return (1.5, max(6.0, 0.3 * self.t_max))

    def n_steps(self):
        return int(round(self.t_max / self.dt))


def resolved(config):
    """JSON-safe dict of the fully-defaulted configuration."""
    return {
        "preset": config.preset,
        "model": config.model,
        "couplings": dict(config.couplings),
        "lengths": list(config.lengths),
        "betas": list(config.betas),
        "observables": list(config.observables),
        "method": config.method,
        "route": config.route,
        "dt": config.dt,
        "t_max": config.t_max,
        "bin_width": config.bin_width,
        "fit_window": list(config.fit_window) if config.fit_window else None,
        "filter_scale": config.filter_scale,
        "n_p": config.n_p,
        "seed_base": config.seed_base,
        "cheb_tol": config.cheb_tol,
        "m_max": config.m_max,
        "overlap_threshold": config.overlap_threshold,
        "roi_tol": config.roi_tol,
        "dynamical_z": config.dynamical_z,
        "out_dir": config.out_dir,
        "workers": config.workers,
    }


def config_from_dict(d):
    kw = dict(d)
    kw["couplings"] = tuple(sorted(kw.get("couplings", {}).items()))
    for key in ("lengths", "betas", "observables"):
        kw[key] = tuple(kw.get(key, ()))
    fw = kw.get("fit_window")
    kw["fit_window"] = tuple(fw) if fw else None
    return RunConfig(**kw)


# ------------------------------------------------------------
# INI form: diff-friendly key = value sections, "auto" for None
# ------------------------------------------------------------


def _auto(v):
    return "auto" if v is None else repr(float(v))


def to_ini(config):
    lines = ["[model]"]
    if config.preset is not None:
        lines.append(f"preset = {config.preset}")
    else:
        lines.append(f"model = {config.model}")
        for k, v in config.couplings:
            lines.append(f"{k} = {v!r}")
    lines.append("lengths = " + ", ".join(str(L) for L in config.lengths))
    lines += ["", "[ensemble]"]
    lines.append("betas = " + ", ".join(repr(b) for b in config.betas))
    lines.append("observables = " + ", ".join(config.observables))
    lines += ["", "[method]"]
    lines.append(f"method = {config.method}")
    lines.append(f"route = {config.route}")
    lines += ["", "[time]"]
    lines.append(f"dt = {config.dt!r}")
    lines.append(f"t_max = {config.t_max!r}")
    lines += ["", "[dqt]"]
    lines.append("n_p = " + ("auto" if config.n_p is None else str(config.n_p)))
    lines.append(f"seed_base = {config.seed_base}")
    lines.append(f"cheb_tol = {config.cheb_tol!r}")
    lines += ["", "[analysis]"]
    lines.append(f"bin_width = {_auto(config.bin_width)}")
    fw = config.fit_window
    lines.append("fit_window = " +
                 ("auto" if fw is None else f"{fw[0]!r}, {fw[1]!r}"))
    lines.append(f"filter_scale = {config.filter_scale!r}")
    lines.append(f"m_max = {config.m_max}")
    lines.append(f"overlap_threshold = {_auto(config.overlap_threshold)}")
    lines.append(f"roi_tol = {_auto(config.roi_tol)}")
    lines.append(f"dynamical_z = {config.dynamical_z!r}")
    lines += ["", "[output]"]
    lines.append(f"out_dir = {config.out_dir}")
    lines.append(f"workers = {config.workers}")
    return "\n".join(lines) + "\n"


def _split_list(text):
    return [s for s in re.split(r"[,\s]+", text.strip()) if s]


def from_ini_text(text):
    cp = ConfigParser()
    cp.optionxform = str  # coupling names are case sensitive
    try:
        cp.read_string(text)
    except Exception as exc:
        raise ConfigError(f"bad config file: {exc}") from None
    kw = {}
    model_keys = {}
    if cp.has_section("model"):
        for k, v in cp.items("model"):
            model_keys[k] = v
    if "preset" in model_keys:
        kw["preset"] = model_keys.pop("preset")
    if "model" in model_keys:
        kw["model"] = model_keys.pop("model")
        kw.setdefault("preset", None)
    if "lengths" in model_keys:
        kw["lengths"] = tuple(int(x) for x in _split_list(model_keys.pop("lengths")))
    if model_keys:
        kw["couplings"] = tuple(sorted(
            (k, float(v)) for k, v in model_keys.items()))

    def grab(section, key, conv, auto_none=False):
        if cp.has_option(section, key):
            v = cp.get(section, key).strip()
            if auto_none and v.lower() == "auto":
                kw[key] = None
            else:
                kw[key] = conv(v)

    grab("ensemble", "betas", lambda v: tuple(float(x) for x in _split_list(v)))
    if cp.has_option("ensemble", "observables"):
        kw["observables"] = tuple(_split_list(cp.get("ensemble", "observables")))
    grab("method", "method", str)
    grab("method", "route", str)
    grab("time", "dt", float)
    grab("time", "t_max", float)
    grab("dqt", "n_p", int, auto_none=True)
    grab("dqt", "seed_base", int)
    grab("dqt", "cheb_tol", float)
    grab("analysis", "bin_width", float, auto_none=True)
    grab("analysis", "fit_window",
         lambda v: tuple(float(x) for x in _split_list(v)), auto_none=True)
    grab("analysis", "filter_scale", float)
    grab("analysis", "m_max", int)
    grab("analysis", "overlap_threshold", float, auto_none=True)
    grab("analysis", "roi_tol", float, auto_none=True)
    grab("analysis", "dynamical_z", float)
    grab("output", "out_dir", str)
    grab("output", "workers", int)
    return RunConfig.make(**kw)


def from_ini(path):
    with open(path, "r", encoding="utf-8") as fh:
        return from_ini_text(fh.read())


def to_json(config):
    return json.dumps(resolved(config), indent=2, sort_keys=True) + "\n"


# ============================================================
# manifest
# ============================================================


def task_seed(seed_base, task_id):
    """Stable per-task seed: base plus a hash of the task id."""
    h = int.from_bytes(hashlib.sha256(task_id.encode()).digest()[:4], "little")
    return (int(seed_base) + h) % (2**31 - 1)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


@dataclass
class RunManifest:
    """Everything needed to audit or byte-identically repeat a run."""

    code_version: str
    config: dict
    out_dir: str
    tasks: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)
    notices: list = field(default_factory=list)

    def to_dict(self):
        return {
            "code_version": self.code_version,
            "config": self.config,
            "out_dir": self.out_dir,
            "tasks": self.tasks,
            "outputs": self.outputs,
            "notices": self.notices,
        }

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(json.dumps(_jsonable(self.to_dict()), indent=2,
                                sort_keys=True).encode() + b"\n")
        return path

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(code_version=d.get("code_version", ""),
                   config=d.get("config", {}), out_dir=d.get("out_dir", "."),
                   tasks=d.get("tasks", []), outputs=d.get("outputs", {}),
                   notices=d.get("notices", []))

    def task(self, task_id):
        for t in self.tasks:
            if t["id"] == task_id:
                return t
        raise KeyError(task_id)

    def done(self, kind=None):
        return [t for t in self.tasks
                if t["status"] == "done" and (kind is None or t["kind"] == kind)]


# ============================================================
# the task DAG
# ============================================================


@dataclass
class _Task:
    id: str
    kind: str
    stage: int
    params: dict
    fn: object
    deps: tuple = ()
    seed: int | None = None


class _RunState:
    """Write-once pools shared between tasks of one run."""

    def __init__(self, config, out_dir):
        self.config = config
        self.out_dir = out_dir
        self.cache_dir = os.path.join(out_dir, "cache")
        self.blocks = {}
        self.ops = {}
        self.records = {}
        self.notices = []
        self._lock = threading.Lock()

    def spec(self, length):
        return self.config.spec_for(length)

    def hamiltonian(self, length):
        with self._lock:
            if length not in self.ops:
                spec = self.spec(length)
                self.ops[length] = (spec, build_hamiltonian(spec))
            return self.ops[length]

    def observable(self, length, name):
        return build_observable(length, parse_observable(name))

    def eigenblocks(self, length):
        got = self.blocks.get(length)
        if got is None:
            raise TaskError(f"spectrum for L={length} unavailable")
        return got

    def result_of(self, task_id):
        rec = self.records.get(task_id)
        if rec is None or rec["status"] != "done":
            raise TaskError(f"needs {task_id}, which did not complete")
        return rec["results"]


def _tag(length, beta, name):
    return f"L{length}-b{beta:g}-{name}"


# ------------------------------------------------------------
# task bodies; each returns (list of relative output paths, results)
# ------------------------------------------------------------


def _spectrum_task(state, length):
    cfg = state.config
    spec, h_op = state.hamiltonian(length)
    route = cfg.route_for(length)
    blocks, files = store.load_or_build_blocks(
        spec, h_op, route, state.cache_dir, want_vectors=True,
        notices=state.notices)
    state.blocks[length] = blocks
    sectors = {}
    for basis, spectrum in blocks:
        token = "all" if basis is None else basis.label.token()
        sectors[token] = int(spectrum.dim)
    energies = np.concatenate([s.energies for _, s in blocks])
    rels = [os.path.relpath(f, state.out_dir) for f in files]
    return rels, {
        "route": route,
        "sectors": sectors,
        "e_min": float(energies.min()),
        "e_max": float(energies.max()),
    }


def _gap_task(state):
    cfg = state.config
    rows = []
    for length in cfg.lengths:
        spec, h_op = state.hamiltonian(length)
        energies, _ = store.symmetric_sector_energies(
            spec, h_op, state.cache_dir, notices=state.notices)
        rows.append((length, float(gap_ratio(energies))))
    rel = "gap-ratio.csv"
    store.write_csv(os.path.join(state.out_dir, rel), ["L", "r"],
                    [[r[0] for r in rows], [r[1] for r in rows]],
                    comments=["zero-momentum reflection-even block"])
    return [rel], {"r": {str(L): v for L, v in rows}, "sector": "k0p+1"}


def _fit_decay(state, series, plateau, route_tag, tag, rels):
    """Shared ed/dqt tail: filter, subtract the plateau, fit the decay."""
    cfg = state.config
    filt = oscillation_filter(series, method="moving_average",
                              scale=cfg.filter_scale)
    resid = np.abs(np.asarray(filt.values).real - plateau)
    window = cfg.window_for()
    fit = powerlaw_fit(series.times, resid, window=window)
    comments = [
        f"observable: {series.observable}", f"beta: {series.beta!r}",
        f"moving average scale: {cfg.filter_scale!r}",
        f"plateau subtracted: {plateau!r}",
    ]
    rel_rep = f"fit-{route_tag}-{tag}.txt"
    rel_res = f"fitres-{route_tag}-{tag}.csv"
    store.write_fit_report(os.path.join(state.out_dir, rel_rep), fit,
                           comments=comments)
    store.write_fit_residuals(os.path.join(state.out_dir, rel_res), fit,
                              comments=comments)
    rels += [rel_rep, rel_res]
    return fit


def _eth_task(state, length, beta, obsname):
    cfg = state.config
    blocks = state.eigenblocks(length)
    o_op = state.observable(length, obsname)
    tag = _tag(length, beta, obsname)
    rels = []

    energies, diags = diagonal_matrix_elements(blocks, o_op)
    rel = f"diag-{tag}.csv"
    sectors = ",".join(
        "all" if b is None else b.label.token() for b, _ in blocks)
    store.write_diagonal_profile(
        os.path.join(state.out_dir, rel), energies, diags,
        comments=[f"sectors: {sectors}", f"observable: {obsname}"])
    rels.append(rel)

    prof = f2_binned(blocks, o_op, length, beta=beta, bin_width=cfg.bin_width)
    rel = f"f2-ed-{tag}.csv"
    store.write_frequency_profile(
        os.path.join(state.out_dir, rel), prof,
        comments=[f"sectors: {sectors}", f"observable: {obsname}"])
    rels.append(rel)

    times = np.arange(cfg.n_steps() + 1) * cfg.dt
    values = ed_autocorrelator(blocks, o_op, times, beta=beta)
    series = TimeSeries(times=times, values=values,
                        stderr=np.zeros(times.size), beta=beta,
                        observable=obsname, length=length)
    rel = f"autocorr-ed-{tag}.csv"
    store.write_time_series(os.path.join(state.out_dir, rel), series,
                            comments=["route: ed"])
    rels.append(rel)

    plateau = diagonal_ensemble_variance(blocks, o_op, beta=beta)
    fit = _fit_decay(state, series, plateau, "ed", tag, rels)
    return rels, {
        "plateau": float(plateau),
        "nu": float(-fit.exponent),
        "nu_stderr": float(fit.exponent_stderr),
        "r_squared": float(fit.r_squared),
        "fit_window": list(fit.window),
        "c0": float(np.asarray(series.values).real[0]),
    }


def _dqt_task(state, length, beta, obsname, seed):
    cfg = state.config
    spec, h_op = state.hamiltonian(length)
    o_op = state.observable(length, obsname)
    tag = _tag(length, beta, obsname)
    n_p = cfg.n_p_for(length)
    run_desc = make_run(seed, n_p, beta=beta, dt=cfg.dt,
                        n_steps=cfg.n_steps(), cheb_tol=cfg.cheb_tol)
    bounds = spectral_bounds(h_op)
    series = dqt_autocorrelator(h_op, o_op, run_desc, bounds=bounds)
    rels = []
    rel = f"autocorr-dqt-{tag}.csv"
    store.write_time_series(os.path.join(state.out_dir, rel), series,
                            comments=[f"route: dqt n_p={n_p} seed={seed}"])
    rels.append(rel)

    n_tail = max(4, min(50, np.asarray(series.times).size // 4))
    sat = saturation_value(series, n_last=n_tail)
    fit = _fit_decay(state, series, sat.value, "dqt", tag, rels)

    prof = fourier_f2(series, c_inf=sat.value)
    rel = f"f2-dqt-{tag}.csv"
    store.write_frequency_profile(
        os.path.join(state.out_dir, rel), prof,
        comments=[f"observable: {obsname}", f"n_p: {n_p}"])
    rels.append(rel)
    return rels, {
        "saturation": float(sat.value),
        "saturation_stderr": float(sat.stderr),
        "still_decaying": bool(sat.still_decaying),
        "n_p": int(n_p),
        "nu": float(-fit.exponent),
        "nu_stderr": float(fit.exponent_stderr),
        "r_squared": float(fit.r_squared),
        "fit_window": list(fit.window),
    }


def _overlap_method(length, beta):
    if hilbert_dim(length) <= DENSE_ROUTE_LIMIT:
        return "exact-dense"
    if beta == 0.0:
        return "exact-sparse-columns"
    return "stochastic-trace"


def _overlap_task(state, length, beta, obsname, seed):
    cfg = state.config
    spec, h_op = state.hamiltonian(length)
    o_op = state.observable(length, obsname)
    method = _overlap_method(length, beta)
    seeds = None
    if method == "stochastic-trace":
        seeds = [seed + k for k in range(24)]
    result = overlap_order(h_op, o_op, beta=beta, m_max=cfg.m_max,
                           threshold=cfg.overlap_threshold, method=method,
                           seeds=seeds)
    table = moment_table(h_op, o_op, max(cfg.m_max, 2), beta=beta,
                         method=method, seeds=seeds)
    tag = _tag(length, beta, obsname)
    rel = f"moments-{tag}.csv"
    store.write_moment_table(os.path.join(state.out_dir, rel), table,
                             comments=[f"observable: {obsname}",
                                       f"method: {method}"])
    order = float(result.m) if np.isfinite(result.m) else np.inf
    return [rel], {
        "order": order,
        "witness": float(result.witness),
        "threshold": float(result.threshold),
        "ambiguous": bool(result.ambiguous),
        "normalized": {str(k): float(v) for k, v in result.normalized.items()},
        "method": method,
    }


def _verdict_task(state, length, beta, obsname, fit_source):
    cfg = state.config
    fit_res = state.result_of(fit_source)
    ov = state.result_of(f"overlap:{_tag(length, beta, obsname)}")
    m = ov["order"]
    m = int(m) if np.isfinite(m) else np.inf
    verdict = roi_check(fit_res["nu"], m, d=1, z=cfg.dynamical_z,
                        tol=cfg.roi_tol, nu_stderr=fit_res["nu_stderr"])
    out = dataclasses.asdict(verdict)
    out["source"] = fit_source.split(":", 1)[0]
    return [], out


def _plateau_task(state, beta, obsname):
    cfg = state.config
    rows = []
    for length in cfg.lengths:
        rec = state.records.get(f"eth:{_tag(length, beta, obsname)}")
        if rec is not None and rec["status"] == "done":
            rows.append((length, rec["results"]["plateau"]))
    if not rows:
        raise TaskError("no completed per-size analyses to scale")
    rel = f"plateau-b{beta:g}-{obsname}.csv"
    store.write_plateaus(os.path.join(state.out_dir, rel),
                         [r[0] for r in rows], [r[1] for r in rows],
                         comments=[f"observable: {obsname}", f"beta: {beta!r}"])
    results = {"n_sizes": len(rows)}
    if len(rows) >= 3:
        fit = finite_size_fit(rows)
        if fit.below_noise_floor:
            results["below_noise_floor"] = True
            results["note"] = fit.note
        else:
            results["exponent"] = float(fit.exponent)
            results["exponent_stderr"] = float(fit.exponent_stderr)
    return [rel], results


# ------------------------------------------------------------
# DAG construction and execution
# ------------------------------------------------------------


def build_tasks(state):
    cfg = state.config
    tasks = []
    use_ed = cfg.method in ("ed", "both")
    use_dqt = cfg.method in ("dqt", "both")

    if use_ed:
        for L in cfg.lengths:
            tasks.append(_Task(
                id=f"spectrum:L{L}", kind="spectrum", stage=0,
                params={"length": L, "route": cfg.route_for(L)},
                fn=lambda L=L: _spectrum_task(state, L)))
        tasks.append(_Task(
            id="gap-ratio", kind="gap_ratio", stage=0,
            params={"lengths": list(cfg.lengths)},
            fn=lambda: _gap_task(state)))

    for L in cfg.lengths:
        for beta in cfg.betas:
            for obs in cfg.observables:
                tag = _tag(L, beta, obs)
                params = {"length": L, "beta": beta, "observable": obs}
                if use_ed:
                    tasks.append(_Task(
                        id=f"eth:{tag}", kind="eth", stage=1, params=params,
                        deps=(f"spectrum:L{L}",),
                        fn=lambda L=L, b=beta, o=obs: _eth_task(state, L, b, o)))
                if use_dqt:
                    tid = f"dqt:{tag}"
                    seed = task_seed(cfg.seed_base, tid)
                    tasks.append(_Task(
                        id=tid, kind="dqt", stage=1, params=dict(
                            params, dt=cfg.dt, t_max=cfg.t_max,
                            n_p=cfg.n_p_for(L)),
                        seed=seed,
                        fn=lambda L=L, b=beta, o=obs, s=seed:
                            _dqt_task(state, L, b, o, s)))
                tid = f"overlap:{tag}"
                seed = task_seed(cfg.seed_base, tid)
                tasks.append(_Task(
                    id=tid, kind="overlap", stage=1,
                    params=dict(params, m_max=cfg.m_max,
                                method=_overlap_method(L, beta)),
                    seed=seed,
                    fn=lambda L=L, b=beta, o=obs, s=seed:
                        _overlap_task(state, L, b, o, s)))
                fit_source = f"eth:{tag}" if use_ed else f"dqt:{tag}"
                tasks.append(_Task(
                    id=f"verdict:{tag}", kind="verdict", stage=2,
                    params=params, deps=(fit_source, f"overlap:{tag}"),
                    fn=lambda L=L, b=beta, o=obs, fs=fit_source:
                        _verdict_task(state, L, b, o, fs)))

    if use_ed:
        for beta in cfg.betas:
            for obs in cfg.observables:
                # no hard deps: scales whatever per-size analyses finished
                tasks.append(_Task(
                    id=f"plateau:b{beta:g}-{obs}", kind="plateau", stage=2,
                    params={"beta": beta, "observable": obs},
                    fn=lambda b=beta, o=obs: _plateau_task(state, b, o)))
    return tasks


def _run_one(state, task):
    rec = {
        "id": task.id, "kind": task.kind, "params": _jsonable(task.params),
        "seed": task.seed, "status": "done", "error": None,
        "error_kind": None, "wall_clock_s": 0.0, "outputs": {}, "results": {},
    }
    missing = [d for d in task.deps
               if state.records.get(d, {}).get("status") != "done"]
    if missing:
        rec["status"] = "skipped"
        rec["error"] = "dependency did not complete: " + ", ".join(missing)
        rec["error_kind"] = "DependencySkipped"
        return rec
    t0 = time.perf_counter()
    try:
        rels, results = task.fn()
        rec["results"] = _jsonable(results)
        rec["outputs"] = {
            rel: store.sha256_file(os.path.join(state.out_dir, rel))
            for rel in rels
        }
    except MemoryError as exc:
        rec["status"] = "failed"
        rec["error"] = f"memory cap: {exc}"
        rec["error_kind"] = "CapExceeded"
    except Exception as exc:  # siblings keep running; kind is recorded
        rec["status"] = "failed"
        rec["error"] = str(exc)
        rec["error_kind"] = type(exc).__name__
    rec["wall_clock_s"] = time.perf_counter() - t0
    return rec


def run(config, out_dir=None):
    """Execute the full pipeline and write everything under out_dir.

    Failures are captured per task (status and error kind in the
    manifest) so one oversized or misconfigured task does not abort its
    siblings. Returns the RunManifest, which is also saved as
    manifest.json.
    """
    out = out_dir or config.out_dir
    os.makedirs(out, exist_ok=True)
    state = _RunState(config, out)

    with open(os.path.join(out, "config.ini"), "wb") as fh:
        fh.write(to_ini(config).encode())
    with open(os.path.join(out, "config.json"), "wb") as fh:
        fh.write(to_json(config).encode())

    tasks = build_tasks(state)
    for stage in sorted({t.stage for t in tasks}):
        group = [t for t in tasks if t.stage == stage]
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                recs = list(pool.map(lambda t: _run_one(state, t), group))
        else:
            recs = [_run_one(state, t) for t in group]
        for t, r in zip(group, recs):
            state.records[t.id] = r

    manifest = RunManifest(
        code_version=_code_version(), config=resolved(config), out_dir=out,
        tasks=[state.records[t.id] for t in tasks])
    for rel in ("config.ini", "config.json"):
        manifest.outputs[rel] = store.sha256_file(os.path.join(out, rel))
    for t in manifest.tasks:
        manifest.outputs.update(t["outputs"])

    scripts = store.emit_plots(manifest, out_dir=out, notices=state.notices)
    for path in scripts:
        rel = os.path.relpath(path, out)
        manifest.outputs[rel] = store.sha256_file(path)
    manifest.notices = list(state.notices)
    manifest.save(os.path.join(out, "manifest.json"))
    return manifest


def rerun(manifest_path, out_dir=None):
    """Repeat a recorded run; outputs must come back checksum-identical."""
    manifest = RunManifest.load(manifest_path)
    config = config_from_dict(manifest.config)
    return run(config, out_dir=out_dir or manifest.out_dir)


def _code_version():
    from . import __version__
    return __version__
