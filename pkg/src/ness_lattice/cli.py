"""Command-line entry point.

One JSON document describes an experiment (model, integrator, run,
analysis and output blocks; see ``config_schema.json``).  Each subcommand
writes its files plus a ``manifest.json`` holding the resolved document,
its digest and the seed, so ``ness-lattice verify <dir>`` can rerun the
command and byte-compare every file.

Exit codes: 0 success, 1 analysis failure, 2 configuration error,
3 runtime fault.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import re
import sys
import tempfile
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match
from scipy import integrate

from . import __version__
from . import analysis as an
from . import linear_oracle as lo
from .dynamics import (
    EnsembleError,
    GLEConfig,
    IntegratorFault,
    IntegratorSpec,
    TrajectoryRecord,
    derive_seed,
    gaussian_sampler,
    simulate,
    simulate_ensemble,
    simulate_gle,
    suggest_dt,
)
from .model import (
    LANGEVIN,
    MARKOVIAN_AUX,
    PolynomialPotential,
    ReservoirSpec,
    SystemConfig,
    SystemState,
    build_chain,
    build_graph,
    build_hypercube,
    check_H1,
    check_H2,
)
from .observables import ObservableError

EXIT_OK, EXIT_ANALYSIS, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
ENV_OUTPUT = "NESS_OUTPUT_DIR"
DEFAULT_OUTPUT = "ness_output"
MANIFEST = "manifest.json"


class ConfigError(ValueError):
    """Invalid experiment document; ``diagnostics`` lists one line per problem."""

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


# ---------------------------------------------------------------------------
# Loading and validation
# ---------------------------------------------------------------------------


def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


_WS = re.compile(r"[ \t\n\r]*")


def _positions(text: str) -> dict[tuple, int]:
    """Character offset of every JSON path in an already valid document."""
    dec = json.JSONDecoder()
    pos: dict[tuple, int] = {}

    def skip(i):
        return _WS.match(text, i).end()

    def value(i, path):
        i = skip(i)
        pos.setdefault(path, i)
        ch = text[i]
        if ch == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                i = skip(i)
                start = i
                key, i = json.decoder.scanstring(text, i + 1)
                pos[path + (key,)] = start
                i = skip(i) + 1
                i = skip(value(i, path + (key,)))
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        if ch == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = skip(value(i, path + (k,)))
                k += 1
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        _, end = dec.raw_decode(text, i)
        return end

    value(0, ())
    return pos


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    return line, offset - (text.rfind("\n", 0, offset) + 1) + 1


def _field(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _expand(errors):
    """Replace ``oneOf`` failures by the errors of the branch the instance selects by ``kind``."""
    for err in errors:
        if not err.context:
            yield err
            continue
        kind = err.instance.get("kind") if isinstance(err.instance, dict) else None
        branch = None
        if err.validator == "oneOf":
            for i, sub in enumerate(err.validator_value):
                if sub.get("properties", {}).get("kind", {}).get("const") == kind:
                    branch = i
        if branch is None:
            yield best_match(err.context) or err
        else:
            yield from sorted((e for e in err.context if e.relative_schema_path[0] == branch),
                              key=lambda e: list(map(str, e.absolute_path)))


def validate_document(doc, text: str | None = None, source: str = "<config>") -> None:
    """Raise :class:`ConfigError` listing every schema violation with its field path."""
    validator = Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if not errors:
        return
    pos = _positions(text) if text is not None else {}
    diags = []
    for err in _expand(errors):
        path = tuple(err.absolute_path)
        where = ""
        if path in pos or () in pos:
            line, col = _line_col(text, pos.get(path, pos.get((), 0)))
            where = f":{line}:{col}"
        diags.append(f"{source}{where}: {_field(path)}: {err.message}")
    raise ConfigError(f"{len(diags)} schema violation(s)", diags)


def read_document(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("malformed JSON", [f"{path}:{err.lineno}:{err.colno}: {err.msg}"]) from err
    validate_document(doc, text, str(path))
    return doc


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@dataclass
class ExperimentConfig:
    """A validated experiment document with defaults resolved.

    ``document`` is the resolved form embedded in every output; the output
    directory is deliberately not part of it, so moving or re-creating a run
    elsewhere leaves its digest unchanged.
    """

    document: dict
    system: SystemConfig | None
    spec: IntegratorSpec | None

    @property
    def digest(self) -> str:
        return hashlib.sha256(_canonical(self.document).encode()).hexdigest()[:32]

    @property
    def seed(self) -> int:
        return int(self.document["run"]["seed"])

    @property
    def run(self) -> dict:
        return self.document["run"]

    def analysis(self, name: str) -> dict:
        return dict(self.document.get("analysis", {}).get(name, {}))

    def require_system(self) -> SystemConfig:
        if self.system is None:
            raise ConfigError("this command needs a model block")
        return self.system

    @classmethod
    def from_document(cls, doc: dict, text: str | None = None, source: str = "<config>") -> "ExperimentConfig":
        validate_document(doc, text, source)
        doc = copy.deepcopy(doc)
        system = spec = None
        if "model" in doc:
            system = build_system(doc["model"])
            doc["model"] = _resolve_model(doc["model"])
        integ = {"scheme": "splitting", "cap_G": None, **doc.get("integrator", {})}
        if system is not None:
            if "dt" not in integ:
                integ["dt"] = suggest_dt(system)
            spec = IntegratorSpec(float(integ["dt"]), integ["scheme"], integ["cap_G"])
        doc["integrator"] = integ
        mean_t = float(np.mean(system.temperatures())) if system is not None else 0.0
        doc["run"] = {
            "horizon": 100.0,
            "n_traj": 1,
            "seed": 0,
            "stride": 1,
            "burn_in": 0.0,
            "observers": ["G"],
            "initial": "gibbs" if mean_t > 0 else "zeros",
            **doc.get("run", {}),
        }
        out = dict(doc.get("output", {}))
        doc["output"] = {"formats": out.get("formats", ["csv", "json"])}
        doc.setdefault("analysis", {})
        return cls(doc, system, spec)


def _resolve_model(model: dict) -> dict:
    model = copy.deepcopy(model)
    if "reservoirs" in model:
        kind = "langevin" if model["topology"]["kind"] == "hypercube" else MARKOVIAN_AUX
        model["reservoirs"] = {"kind": kind, "gamma": 1.0, **model["reservoirs"]}
    return model


def build_system(model: dict) -> SystemConfig:
    """Build a :class:`SystemConfig` from a schema-valid model block."""
    topo = model["topology"]
    onsite = PolynomialPotential(tuple(model["onsite"]))
    pair = PolynomialPotential(tuple(model["pair"]))
    kind = topo["kind"]
    try:
        if kind == "graph":
            if "baths" not in model or "reservoirs" in model:
                raise ConfigError("graph topologies take a 'baths' list and no 'reservoirs' block",
                                  ["model: use baths = [{vertex, T, lambda}, ...]"])
            specs = {}
            for b in model["baths"]:
                if b["vertex"] in specs:
                    raise ConfigError(f"two baths on vertex {b['vertex']!r}", ["model.baths"])
                specs[b["vertex"]] = ReservoirSpec.langevin(b["T"], b["lambda"])
            edges = [tuple(e) for e in topo["edges"]]
            return build_graph(edges, specs, onsite, pair, topo.get("vertices"))
        if "reservoirs" not in model or "baths" in model:
            raise ConfigError(f"{kind} topologies take a 'reservoirs' block and no 'baths' list", ["model.reservoirs"])
        res = model["reservoirs"]
        if kind == "chain":
            return build_chain(topo["n"], onsite, pair, res["T_left"], res["T_right"], res["lambda"],
                               res.get("gamma", 1.0), res.get("kind", MARKOVIAN_AUX))
        if res.get("kind", LANGEVIN) != LANGEVIN:
            raise ConfigError("hypercube reservoirs are of langevin kind", ["model.reservoirs.kind"])
        extra = {"vertex_cap": topo["vertex_cap"]} if "vertex_cap" in topo else {}
        return build_hypercube(topo["N"], topo["dim"], onsite, pair, res["T_left"], res["T_right"], res["lambda"], **extra)
    except ConfigError:
        raise
    except (ValueError, TypeError, OverflowError) as err:
        raise ConfigError(f"invalid model: {err}", [f"model: {err}"]) from err


def load_experiment(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read, validate and resolve a config file; ``overrides`` patch the run block."""
    path = Path(path)
    doc = read_document(path)
    text = path.read_text()
    if overrides:
        doc.setdefault("run", {}).update(overrides)
        text = None
    return ExperimentConfig.from_document(doc, text, str(path))


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------


class Emitter:
    """Collects files written into one output directory."""

    def __init__(self, directory: Path, exp: ExperimentConfig, raw: bool = False):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.exp = exp
        self.raw = raw
        self.files: list[str] = []

    @property
    def csv_enabled(self) -> bool:
        return "csv" in self.exp.document["output"]["formats"]

    def comment(self) -> str:
        return f"config_digest={self.exp.digest} seed={self.exp.seed}"

    def _track(self, path: Path) -> None:
        self.files.append(path.name)

    def report(self, name: str, analysis: str, results: dict, passed: bool | None, grids: dict | None = None,
               seeds=None) -> dict:
        rep = an.report_envelope(analysis, results, self.exp.system, seeds if seeds is not None else [self.exp.seed],
                                 passed, grids)
        rep["experiment_digest"] = self.exp.digest
        rep["seed"] = self.exp.seed
        path = an.write_report(self.directory / f"{name}.json", rep, raw=self.raw)
        self._track(path)
        if self.raw:
            self._track(path.with_suffix(".raw.json"))
        return rep

    def curve(self, name: str, columns: dict) -> None:
        if self.csv_enabled:
            self._track(an.write_curve_csv(self.directory / f"{name}.csv", columns, self.comment()))

    def record(self, stem: str, rec: TrajectoryRecord) -> None:
        rec.meta["experiment_digest"] = self.exp.digest
        rec.meta["experiment"] = self.exp.document
        formats = self.exp.document["output"]["formats"]
        stem_path = self.directory / stem
        if self.csv_enabled:
            self._track(rec.write_csv(stem_path.with_suffix(".csv")))
        if "json" in formats or not self.csv_enabled:
            head = rec.header()
            if not self.csv_enabled:
                # no CSV companion, so the samples go into the JSON document
                head["samples"] = {"t": rec.sample_times.tolist(),
                                   **{k: v.tolist() for k, v in rec.observable_samples.items()}}
            path = stem_path.with_suffix(".json")
            path.write_text(json.dumps(head, indent=2, sort_keys=True))
            self._track(path)

    def manifest(self, command: str) -> Path:
        files = {}
        for name in sorted(set(self.files)):
            files[name] = hashlib.sha256((self.directory / name).read_bytes()).hexdigest()
        man = {
            "command": command,
            "config": self.exp.document,
            "config_digest": self.exp.digest,
            "seed": self.exp.seed,
            "package_version": __version__,
            "options": {"raw": self.raw},
            "files": files,
        }
        path = self.directory / MANIFEST
        path.write_text(_dumps(man))
        return path


def resolve_output_dir(flag: str | None, doc: dict | None) -> Path:
    """``--out``, then the config's output directory, then ``$NESS_OUTPUT_DIR``, then ``./ness_output``."""
    if flag:
        return Path(flag)
    if doc and doc.get("output", {}).get("directory"):
        return Path(doc["output"]["directory"])
    if os.environ.get(ENV_OUTPUT):
        return Path(os.environ[ENV_OUTPUT])
    return Path(DEFAULT_OUTPUT)


def _sampler(exp: ExperimentConfig):
    system = exp.require_system()
    if exp.run["initial"] == "zeros":
        return SystemState.zeros(system)
    temp = exp.run.get("initial_temperature", float(np.mean(system.temperatures())))
    if temp <= 0:
        raise ConfigError("a gibbs start needs a positive temperature", ["run.initial_temperature"])
    return gaussian_sampler(system, temp)


def _records(exp: ExperimentConfig, observers, workers: int) -> list[TrajectoryRecord]:
    run = exp.run
    system = exp.require_system()
    if run["n_traj"] == 1:
        return [simulate(system, _sampler(exp), exp.spec, run["horizon"], exp.seed, observers, run["stride"],
                         run["burn_in"])]
    return simulate_ensemble(system, _sampler(exp), exp.spec, run["horizon"], run["n_traj"], exp.seed, observers,
                             run["stride"], run["burn_in"], workers)


def _trajectory_seeds(exp: ExperimentConfig) -> list[int]:
    n = exp.run["n_traj"]
    return [exp.seed] if n == 1 else [derive_seed(exp.seed, i) for i in range(n)]


# ---------------------------------------------------------------------------
# Commands; each returns True (pass), False (analysis failure) or None
# ---------------------------------------------------------------------------


def cmd_check(exp: ExperimentConfig, em: Emitter, args) -> bool:
    system = exp.require_system()
    h1 = check_H1(system.onsite, system.pair)
    h2 = check_H2(system.pair)
    results = {"H1": h1.to_dict(), "H2": h2.to_dict(), "controllability": None, "warnings": []}
    ok = h1.holds and h2.holds
    print(f"H1: {'ok' if h1.holds else 'FAIL'} (k1={h1.k1}, k2={h1.k2})")
    print(f"H2: {'ok' if h2.holds else 'FAIL'}")
    try:
        model = lo.assemble_linear(system)
    except lo.NonQuadraticError as err:
        results["controllability"] = {"skipped": str(err)}
    else:
        rep = lo.controllability_rank(model)
        results["controllability"] = rep.to_dict()
        if rep.full:
            print(f"controllability: full rank {rep.rank}/{rep.state_dim}")
        else:
            msg = (f"controllability rank deficient: rank {rep.rank}/{rep.state_dim}, "
                   f"{rep.uncontrollable_modes} undamped mode(s); the invariant measure is not unique")
            results["warnings"].append(msg)
            print(f"warning: {msg}", file=sys.stderr)
            if args.strict:
                ok = False
    em.report("check", "check", results, ok)
    return ok


def cmd_simulate(exp: ExperimentConfig, em: Emitter, args) -> None:
    run = exp.run
    system = exp.require_system()
    observers = list(run["observers"])
    seeds = _trajectory_seeds(exp)
    if run["horizon"] == 0:
        # header-only output: no integration step is taken
        from .observables import validate_observable_names

        validate_observable_names(system, observers)
        for k, seed in enumerate(seeds):
            rec = TrajectoryRecord(np.zeros(0), {o: np.zeros(0) for o in observers}, seed, system.digest(),
                                   spec=exp.spec.to_dict(), meta={"steps": 0, "sample_stride": run["stride"]})
            em.record("trajectory" if len(seeds) == 1 else f"trajectory_{k:04d}", rec)
        return None
    recs = _records(exp, observers, args.workers)
    for k, rec in enumerate(recs):
        em.record("trajectory" if len(recs) == 1 else f"trajectory_{k:04d}", rec)
    return None


def cmd_steady(exp: ExperimentConfig, em: Emitter, args) -> bool:
    cfg = {"burn_in_fraction": 0.1, "batch_count": 20, "n_se": 3.0, "targets": {}, "products": [],
           "observables": list(exp.run["observers"]), **exp.analysis("steady")}
    products = [tuple(p) for p in cfg["products"]]
    needed = list(dict.fromkeys(list(cfg["observables"]) + [x for p in products for x in p]))
    recs = _records(exp, needed, args.workers)
    rep = an.steady_state(recs, cfg["observables"], cfg["burn_in_fraction"], cfg["batch_count"],
                          an.product_getters(products))
    checks = {}
    for name, target in cfg["targets"].items():
        if name not in rep.estimates:
            raise ConfigError(f"steady target {name!r} is not an estimated observable or product",
                              [f"analysis.steady.targets.{name}"])
        z = rep[name].z(target)
        checks[name] = {"target": target, "z": z, "pass": bool(abs(z) <= cfg["n_se"])}
    ok = all(c["pass"] for c in checks.values())
    results = {**rep.to_dict(), "targets": checks}
    em.report("steady", "steady_state", results, ok, {"observables": cfg["observables"], "products": cfg["products"]},
              _trajectory_seeds(exp))
    return ok


def cmd_ldp(exp: ExperimentConfig, em: Emitter, args) -> bool:
    system = exp.require_system()
    cfg = {"alphas": [round(0.1 * k, 10) for k in range(11)], "t_list": [50.0, 100.0, 200.0], "n_traj": 1000,
           "j": 1, "burn_in": 100.0, "n_boot": 200, "n_eff_floor": 30.0, "w_grid": [], "n_se": 3.0,
           **exp.analysis("ldp")}
    try:
        curve = an.mgf_cumulant(system, cfg["alphas"], cfg["t_list"], cfg["n_traj"], exp.spec, exp.seed, cfg["j"],
                                cfg["burn_in"], _sampler(exp), exp.run["stride"], args.workers, cfg["n_boot"],
                                cfg["n_eff_floor"])
    except an.DomainError as err:
        raise ConfigError(str(err), [f"analysis.ldp.alphas: domain is {list(err.domain)}"]) from err
    gc = an.gc_symmetry_check(curve, cfg["n_se"])
    endpoints = {}
    for a in (0.0, 1.0):
        idx = np.flatnonzero(np.isclose(curve.alphas, a))
        if idx.size and curve.usable[idx[0]]:
            k = idx[0]
            v, se = float(curve.values[k]), float(curve.se[k])
            endpoints[str(a)] = {"e": v, "se": se, "pass": bool(abs(v) <= cfg["n_se"] * se or v == 0.0)}
    ok = bool(gc["pass"]) and all(e["pass"] for e in endpoints.values())
    results = {"cumulant": curve.to_dict(), "symmetry": gc, "endpoints": endpoints}
    em.curve("ldp_cumulant", {"alpha": curve.alphas, "e": curve.values, "se": curve.se, "n_eff": curve.n_eff,
                              "usable": curve.usable.astype(float)})
    if cfg["w_grid"]:
        rate = an.legendre_rate(curve, cfg["w_grid"])
        results["rate"] = rate.to_dict()
        results["rate_symmetry"] = an.rate_symmetry(rate)
        em.curve("ldp_rate", {"w": rate.w, "I": rate.values})
    grids = {k: cfg[k] for k in ("alphas", "t_list", "w_grid")}
    grids.update(n_traj=cfg["n_traj"], j=cfg["j"])
    em.report("ldp", "large_deviations", results, ok, grids, {"base_seed": exp.seed})
    return ok


def _equilibrium(system: SystemConfig) -> tuple[SystemConfig, bool]:
    tl, tr = system.end_temperatures()
    if tl == tr:
        return system, False
    t = 2.0 / (1.0 / tl + 1.0 / tr)
    return system.with_end_temperatures(t, t), True


def _oracle_green_kubo(system: SystemConfig, j: int, probes) -> dict | None:
    try:
        model = lo.assemble_linear(system)
    except lo.NonQuadraticError:
        return None
    cov = lo.stationary_covariance(model)
    if not cov.unique:
        return None
    tl, _ = system.end_temperatures()
    beta = 1.0 / tl
    d = max(probes)
    flux = []
    for s in (+1, -1):
        t1, tn = an.probe_temperatures(beta, s * d)
        hot = system.with_end_temperatures(t1, tn)
        m = lo.assemble_linear(hot)
        flux.append(lo.exact_flux(m, lo.stationary_covariance(m), hot, j))
    return {
        "correlation_integral": lo.exact_correlation_integral(model, cov, system, f"Phi_{j}"),
        "response": (flux[0] - flux[1]) / (2 * d),
        "probe": d,
    }


def cmd_greenkubo(exp: ExperimentConfig, em: Emitter, args) -> bool:
    system, shifted = _equilibrium(exp.require_system())
    cfg = {"j": 1, "horizon": exp.run["horizon"], "probes": [0.05, 0.1], "n_segments": 20,
           "burn_in": exp.run["burn_in"], "tolerance": 0.15, **exp.analysis("greenkubo")}
    res = an.green_kubo(system, cfg["j"], cfg["horizon"], exp.spec, tuple(cfg["probes"]), exp.seed,
                        cfg["n_segments"], cfg["burn_in"], None, exp.run["stride"], cfg.get("max_lag_time"))
    ok = bool(abs(res.ratio - 1.0) <= cfg["tolerance"] and res.overlapping)
    results = {"estimate": res.to_dict(), "equilibrium_shifted": shifted,
               "oracle": _oracle_green_kubo(system, cfg["j"], cfg["probes"])}
    em.report("greenkubo", "green_kubo", results, ok, {k: cfg[k] for k in ("j", "probes", "n_segments", "horizon")},
              {"correlation": exp.seed, "response": derive_seed(exp.seed, 1)})
    return ok


def cmd_lyapunov(exp: ExperimentConfig, em: Emitter, args) -> bool:
    system = exp.require_system()
    tmax = float(system.temperatures().max())
    cfg = {"theta": 0.25 / tmax if tmax > 0 else 0.25, "t": 1.0, "energies": [1e2, 1e3, 1e4],
           "samples_per_shell": 20, "n_rep": 50, "inner_samples": 0, **exp.analysis("lyapunov")}
    res = an.lyapunov_probe(system, cfg["theta"], cfg["energies"], cfg["t"], cfg["samples_per_shell"], cfg["n_rep"],
                            seed=exp.seed, inner_samples=cfg["inner_samples"])
    em.curve("lyapunov_kappa", {"E": res.energies, "kappa": res.kappa})
    em.report("lyapunov", "lyapunov_probe", res.to_dict(), bool(res.decreasing), cfg)
    return bool(res.decreasing)


def cmd_scaling(exp: ExperimentConfig, em: Emitter, args) -> bool:
    system = exp.require_system()
    cold = system.with_end_temperatures(0.0, 0.0)
    cfg = {"energies": [1e2, 3e2, 1e3, 3e3, 1e4], "n_directions": 12, **exp.analysis("scaling")}
    res = an.dissipation_scaling(cold, cfg["energies"], cfg.get("dt"), cfg["n_directions"], exp.seed)
    em.curve("scaling", {"E": res.energies, "delta_G": res.delta_G})
    results = {**res.to_dict(), "temperatures_zeroed": bool(np.any(system.temperatures() > 0))}
    em.report("scaling", "dissipation_scaling", results, bool(res.consistent), cfg)
    return bool(res.consistent)


def cmd_oracle(exp: ExperimentConfig, em: Emitter, args) -> bool:
    system = exp.require_system()
    cfg = exp.analysis("oracle")
    try:
        model = lo.assemble_linear(system)
    except lo.NonQuadraticError as err:
        raise ConfigError(f"oracle needs quadratic potentials: {err}", ["model.onsite", "model.pair"]) from err
    cov = lo.stationary_covariance(model, cfg.get("method"))
    ctrl = lo.controllability_rank(model)
    results = {
        "names": list(model.names),
        "covariance": cov.to_dict(),
        "controllability": ctrl.to_dict(),
        "eigenvalues_real": sorted(np.real(model.eigenvalues()).tolist()),
        "flux_table": None,
        "slowest_rate": None,
    }
    if cov.unique:
        from .observables import heat_flows

        count = len(heat_flows(system, SystemState.zeros(system)))
        results["flux_table"] = {f"Phi_{j}": lo.exact_flux(model, cov, system, j) for j in range(count)}
        results["slowest_rate"] = lo.slowest_rate(model)
        print(_dumps(results["flux_table"]), end="")
    else:
        print(f"no unique stationary covariance: {cov.classification}", file=sys.stderr)
    em.report("oracle", "linear_oracle", results, bool(cov.unique))
    return bool(cov.unique)


def _gle_exact(gle: GLEConfig) -> dict:
    veff, T = gle.effective_potential, gle.temperature
    if T <= 0:
        return {}
    Z = integrate.quad(lambda q: math.exp(-veff(q) / T), -np.inf, np.inf)[0]
    m1 = integrate.quad(lambda q: q * math.exp(-veff(q) / T), -np.inf, np.inf)[0] / Z
    m2 = integrate.quad(lambda q: q * q * math.exp(-veff(q) / T), -np.inf, np.inf)[0] / Z
    return {"q_1": m1, "p_1": 0.0, "q_1*q_1": m2, "p_1*p_1": T, "q_1*p_1": 0.0}


def cmd_gle_compare(exp: ExperimentConfig, em: Emitter, args) -> bool:
    raw = exp.analysis("gle_compare")
    if not raw:
        raise ConfigError("gle-compare needs an analysis.gle_compare block", ["analysis.gle_compare"])
    cfg = {"dt": 0.01, "horizon": 2e5, "burn_in": 50.0, "stride": 10, "n_se": 3.0, **raw}
    try:
        gle = GLEConfig(PolynomialPotential(tuple(cfg["onsite"])), cfg["lambda"], cfg["gamma"], cfg["T"])
    except ValueError as err:
        raise ConfigError(str(err), ["analysis.gle_compare.onsite"]) from err
    names = ["q_1", "p_1"]
    pairs = [("q_1", "q_1"), ("p_1", "p_1"), ("q_1", "p_1")]
    extra = an.product_getters(pairs)
    s_gle, s_ext = derive_seed(exp.seed, 0), derive_seed(exp.seed, 1)
    rec_g = simulate_gle(gle, (0.0, 0.0), cfg["dt"], cfg["horizon"], s_gle, sample_stride=cfg["stride"],
                         burn_in=cfg["burn_in"])
    ext = gle.extended_config()
    start = gaussian_sampler(ext, gle.temperature) if gle.temperature > 0 else SystemState.zeros(ext)
    rec_e = simulate(ext, start, IntegratorSpec(cfg["dt"]), cfg["horizon"], s_ext, names, cfg["stride"],
                     cfg["burn_in"])
    rep_g = an.steady_state([rec_g], names, extra=extra)
    rep_e = an.steady_state([rec_e], names, extra=extra)
    exact = _gle_exact(gle)
    table = {}
    for k in rep_g.estimates:
        a, b = rep_g[k], rep_e[k]
        comb = math.hypot(a.se, b.se)
        z = (a.mean - b.mean) / comb if comb > 0 else 0.0
        table[k] = {"gle": a.mean, "gle_se": a.se, "markov": b.mean, "markov_se": b.se, "z": z,
                    "exact": exact.get(k), "pass": bool(abs(z) <= cfg["n_se"])}
    ok = all(row["pass"] for row in table.values())
    em.curve("gle_compare", {"gle": [table[k]["gle"] for k in table], "markov": [table[k]["markov"] for k in table],
                             "z": [table[k]["z"] for k in table]})
    em.report("gle_compare", "gle_compare", {"moments": table, "order": list(table)}, ok, cfg,
              {"gle": s_gle, "markov": s_ext})
    return ok


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "steady": cmd_steady,
    "ldp": cmd_ldp,
    "greenkubo": cmd_greenkubo,
    "lyapunov": cmd_lyapunov,
    "scaling": cmd_scaling,
    "oracle": cmd_oracle,
    "gle-compare": cmd_gle_compare,
}


HELP = {
    "check": "structural checks on the potentials and, for quadratic models, controllability",
    "simulate": "integrate trajectories and write observable CSVs",
    "steady": "batch-means estimates of stationary means",
    "ldp": "cumulant function of the entropy production and its symmetry",
    "greenkubo": "correlation integral against finite-difference response",
    "lyapunov": "Lyapunov weight contraction across energy shells",
    "scaling": "zero-temperature energy loss versus initial energy",
    "oracle": "exact stationary covariance and fluxes of a linear chain",
    "gle-compare": "memory-kernel particle against its Markovian extension",
}


def execute(command: str, exp: ExperimentConfig, outdir: Path, workers: int = 1, raw: bool = False,
            strict: bool = False) -> tuple[bool | None, Emitter]:
    """Run one command into ``outdir`` and write its manifest."""
    em = Emitter(outdir, exp, raw)
    args = argparse.Namespace(workers=workers, strict=strict)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = COMMANDS[command](exp, em, args)
    em.manifest(command)
    return result, em


def verify(outdir, workers: int = 1) -> tuple[bool, list[str]]:
    """Rerun the command recorded in ``outdir`` and byte-compare every file."""
    outdir = Path(outdir)
    try:
        man = json.loads((outdir / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read manifest in {outdir}: {err}") from err
    exp = ExperimentConfig.from_document(man["config"])
    mismatched = []
    with tempfile.TemporaryDirectory() as tmp:
        execute(man["command"], exp, Path(tmp), workers, man.get("options", {}).get("raw", False))
        for name in sorted(set(man["files"]) | {MANIFEST}):
            a, b = outdir / name, Path(tmp) / name
            if not (a.exists() and b.exists() and a.read_bytes() == b.read_bytes()):
                mismatched.append(name)
    return not mismatched, mismatched


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _error(kind: str, code: int, message: str, details=None) -> int:
    payload = {"error": kind, "exit_code": code, "message": message}
    if details:
        payload["details"] = details
    print(json.dumps(payload), file=sys.stderr)
    for line in details or []:
        if isinstance(line, str):
            print(line, file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ness-lattice", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("config", help="experiment JSON document")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, default=1, help="trajectory worker threads")
        p.add_argument("--raw", action="store_true", help="also write full-precision .raw.json reports")
        if name == "check":
            p.add_argument("--strict", action="store_true", help="treat rank deficiency as failure")
        if name == "simulate":
            p.add_argument("--horizon", type=float, help="override run.horizon")
            p.add_argument("--observers", help="comma-separated observable names, overrides run.observers")
    p = sub.add_parser("verify", help="rerun an output directory and byte-compare")
    p.add_argument("outdir")
    p.add_argument("--workers", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            ok, bad = verify(args.outdir, args.workers)
            print("verified: all files identical" if ok else "mismatch: " + ", ".join(bad))
            return EXIT_OK if ok else EXIT_ANALYSIS
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if getattr(args, "horizon", None) is not None:
            overrides["horizon"] = args.horizon
        if getattr(args, "observers", None):
            overrides["observers"] = [s.strip() for s in args.observers.split(",") if s.strip()]
        exp = load_experiment(args.config, overrides)
        raw_doc = json.loads(Path(args.config).read_text())
        outdir = resolve_output_dir(args.out, raw_doc)
        result, em = execute(args.command, exp, outdir, args.workers, args.raw, getattr(args, "strict", False))
        print(f"wrote {len(em.files) + 1} file(s) to {outdir}")
        return EXIT_ANALYSIS if result is False else EXIT_OK
    except ConfigError as err:
        return _error("config_error", EXIT_CONFIG, str(err), err.diagnostics)
    except (ObservableError, lo.NonQuadraticError) as err:
        return _error("config_error", EXIT_CONFIG, str(err))
    except IntegratorFault as err:
        return _error("integrator_fault", EXIT_RUNTIME, str(err), {"time": err.time, "state_digest": err.state_digest})
    except EnsembleError as err:
        return _error("ensemble_fault", EXIT_RUNTIME, str(err))
    except an.AnalysisError as err:
        return _error("analysis_error", EXIT_RUNTIME, str(err))
    except lo.NonUniqueError as err:
        return _error("non_unique", EXIT_ANALYSIS, str(err))


if __name__ == "__main__":
    sys.exit(main())
