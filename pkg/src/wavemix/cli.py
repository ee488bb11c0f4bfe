"""Command-line entry point: config parsing, dispatch, and artifact emission.

Every run resolves its configuration (file plus flag overrides) into a
manifest, executes one experiment, and writes CSV series plus a JSON verdict
carrying the measured values, the tolerances they were judged against, and a
content hash of the emitted artifacts.  The seed is the only entropy source.

Exit codes: 0 pass, 1 fail, 2 inconclusive (undersampled), 64 config error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from wavemix import coupling as cpl
from wavemix import ergodic as erg
from wavemix import nlw
from wavemix import rates
from wavemix import toys
from wavemix.observables import default_observables
from wavemix.spectral import Field, PhaseState, SpectralBasis

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INCONCLUSIVE = 2
EXIT_CONFIG = 64


class ConfigError(Exception):
    pass


def _floats(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    return [float(x) for x in text.replace(",", " ").split()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# (type, default) per key; unknown keys in a config file are hard errors.
SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {
        "kind": (str, "nlw"),
        "length": (float, math.pi),
        "length2": (float, 0.0),
        "modes": (int, 32),
        "gamma": (float, 1.0),
        "nonlinearity": (str, "klein_gordon"),
        "rho": (float, 1.0),
        "lam": (float, 0.0),
        "nu": (float, 0.01),
        "alpha": (float, 0.0),
        "h_amplitude": (float, 0.0),
        "theta": (float, 1.0),
        "sigma": (float, 1.0),
        "toy_eps": (float, 0.25),
    },
    "noise": {
        "amplitude": (float, 0.25),
        "decay_q": (float, 2.0),
        "cutoff": (int, 0),
        "eps": (float, 1.0),
    },
    "integrator": {
        "dt": (float, 0.0),
        "horizon": (float, 10.0),
        "stride": (int, 8),
        "toy_dt": (float, 1e-3),
        "allow_large_dt": (_bool, False),
    },
    "experiment": {
        "n_traj": (int, 400),
        "n_feedback": (int, 8),
        "distances": (_floats, [0.04, 0.02, 0.01]),
        "betas": (_floats, [-0.5, -0.25, 0.25, 0.5]),
        "interval": (_floats, [0.4, 0.6]),
        "horizons": (_floats, []),
        "kappa": (float, 0.0),
        "s_exponent": (float, 0.4),
        "eps_list": (_floats, [1e-3]),
        "sets": (_floats, [2.9, 3.1]),
        "mc": (_bool, False),
        "from_point": (float, 0.0),
        "to_point": (float, 3.0),
        "eta": (float, 0.05),
        "radii": (_floats, [0.15, 0.2, 0.3, 0.45, 0.6]),
        "chain_variant": (str, "i-graph"),
        "use_solver": (_bool, False),
        "replicas": (int, 64),
        "rep_horizon": (float, 1500.0),
        "state_scale": (float, 0.4),
        "observable": (str, "cos_pos1"),
    },
}

SUBCOMMANDS = ["simulate", "energy-audit", "couple-fp", "girsanov-tv", "mix",
               "occupation", "pressure", "ldp1", "quasipotential", "fw-graph",
               "stationary-smallnoise", "boundary-chain", "selftest"]


class RunConfig:
    """Resolved configuration: schema values plus seed and output directory."""

    def __init__(self, values: dict[str, dict], seed: int, out: str):
        self.values = values
        self.seed = seed
        self.out = out

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def emit(self) -> str:
        cp = configparser.ConfigParser()
        cp["run"] = {"seed": str(self.seed)}
        for section in SCHEMA:
            cp[section] = {}
            for key in SCHEMA[section]:
                v = self.values[section][key]
                if isinstance(v, list):
                    cp[section][key] = " ".join(repr(x) for x in v)
                else:
                    cp[section][key] = repr(v) if isinstance(v, float) else str(v)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def content_hash(self) -> str:
        return hashlib.sha256(self.emit().encode()).hexdigest()[:16]


def parse_config(path: str | None = None, overrides: list[str] | None = None,
                 seed: int = 12345, out: str = "out") -> RunConfig:
    """Read the key-value config file and apply ``section.key=value`` overrides.

    Unknown sections or keys are configuration errors; there are no silent
    defaults for misspellings.
    """
    values = {s: {k: (v[1] if not isinstance(v[1], list) else list(v[1]))
                  for k, v in keys.items()}
              for s, keys in SCHEMA.items()}
    if path is not None:
        cp = configparser.ConfigParser()
        read = cp.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for section in cp.sections():
            if section == "run":
                if set(cp["run"]) - {"seed", "out"}:
                    raise ConfigError(f"unknown keys in [run]: "
                                      f"{sorted(set(cp['run']) - {'seed', 'out'})}")
                if "seed" in cp["run"]:
                    seed = int(cp["run"]["seed"])
                if "out" in cp["run"]:
                    out = cp["run"]["out"]
                continue
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in cp[section].items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {section}.{key}")
                typ = SCHEMA[section][key][0]
                try:
                    values[section][key] = typ(raw)
                except ValueError as e:
                    raise ConfigError(f"bad value for {section}.{key}: {e}")
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item}")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {section}.{key}")
        typ = SCHEMA[section][key][0]
        try:
            values[section][key] = typ(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {section}.{key}: {e}")
    cfg = RunConfig(values, seed, out)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    m = cfg["model"]
    if m["kind"] not in ("nlw", "cubic", "doublewell", "ou", "chain2"):
        raise ConfigError(f"unknown model kind {m['kind']!r}")
    if m["kind"] == "nlw":
        try:
            nl = _build_nonlinearity(cfg)
        except ValueError as e:
            raise ConfigError(f"nonlinearity rejected: {e}")
        rep = nlw.check_dissipativity(nl)
        if not rep.ok:
            raise ConfigError(f"dissipativity violated: {rep.violations}")
        basis = _build_basis(cfg)
        lam1 = float(basis.eigenvalues[0])
        if nl.nu > (lam1 if lam1 < m["gamma"] else m["gamma"]) / 8:
            raise ConfigError(f"nu={nl.nu} above (lambda_1 ^ gamma)/8")
        try:
            _build_noise(cfg, basis)
        except ValueError as e:
            raise ConfigError(f"noise rejected: {e}")
        try:
            _build_simconfig(cfg, basis)
        except ValueError as e:
            raise ConfigError(f"integrator rejected: {e}")


def _build_basis(cfg: RunConfig) -> SpectralBasis:
    m = cfg["model"]
    lengths = (m["length"],) if m["length2"] <= 0 else (m["length"], m["length2"])
    return SpectralBasis(lengths, m["modes"])


def _build_nonlinearity(cfg: RunConfig) -> nlw.Nonlinearity:
    m = cfg["model"]
    if m["nonlinearity"] == "klein_gordon":
        return nlw.Nonlinearity.klein_gordon(m["rho"], m["lam"], nu=m["nu"])
    if m["nonlinearity"] == "sine_gordon":
        return nlw.Nonlinearity.sine_gordon(nu=m["nu"])
    if m["nonlinearity"] == "zero":
        return nlw.Nonlinearity.zero()
    raise ConfigError(f"unknown nonlinearity {m['nonlinearity']!r}")


def _build_noise(cfg: RunConfig, basis: SpectralBasis) -> nlw.NoiseModel:
    n = cfg["noise"]
    cutoff = n["cutoff"] if n["cutoff"] > 0 else None
    return nlw.NoiseModel.power_law(basis, n["amplitude"], n["decay_q"], cutoff)


def _build_simconfig(cfg: RunConfig, basis: SpectralBasis) -> nlw.SimConfig:
    m, i, n = cfg["model"], cfg["integrator"], cfg["noise"]
    dt = i["dt"] if i["dt"] > 0 else 0.5 / math.sqrt(basis.eigenvalues[-1])
    h = None
    if m["h_amplitude"] != 0.0:
        h = Field.from_mode(basis, 1, m["h_amplitude"], 1.0)
    return nlw.SimConfig(basis=basis, gamma=m["gamma"], dt=dt,
                         horizon=i["horizon"], seed=cfg.seed, eps=n["eps"],
                         alpha=m["alpha"] if m["alpha"] > 0 else None, h=h,
                         stride=i["stride"], allow_large_dt=i["allow_large_dt"])


def _build_toy(cfg: RunConfig):
    kind = cfg["model"]["kind"]
    if kind == "cubic":
        return toys.builtin_cubic()
    if kind == "doublewell":
        return toys.builtin_doublewell()
    if kind == "ou":
        return toys.OrnsteinUhlenbeck(cfg["model"]["theta"], cfg["model"]["sigma"])
    raise ConfigError(f"model kind {kind!r} is not a toy")


def _smooth_state(basis: SpectralBasis, alpha: float, scale: float,
                  seed: int) -> PhaseState:
    rng = np.random.default_rng(seed)
    m = basis.mode_count
    decay = 1.0 / np.arange(1, m + 1) ** 2
    return PhaseState.from_coeffs(basis, scale * rng.standard_normal(m) * decay,
                                  scale * rng.standard_normal(m) * decay, alpha)


# --------------------------------------------------------------------------
# Artifact emission


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(x) for x in row) + "\n")


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def _finish(cfg: RunConfig, out_dir: Path, status: str, metrics: dict,
            tolerances: dict) -> int:
    manifest = out_dir / "manifest.ini"
    manifest.write_text(cfg.emit())
    artifacts = sorted(p for p in out_dir.iterdir()
                       if p.name not in ("verdict.json",))
    h = hashlib.sha256()
    for p in artifacts:
        h.update(p.name.encode())
        h.update(p.read_bytes())
    verdict = {
        "status": status,
        "metrics": _jsonify(metrics),
        "tolerances": _jsonify(tolerances),
        "seed": cfg.seed,
        "config_hash": cfg.content_hash(),
        "artifact_hash": h.hexdigest()[:16],
        "artifacts": [p.name for p in artifacts],
    }
    (out_dir / "verdict.json").write_text(json.dumps(verdict, indent=2,
                                                     sort_keys=True) + "\n")
    print(json.dumps({"status": status, "config_hash": verdict["config_hash"],
                      "artifact_hash": verdict["artifact_hash"]}))
    return {"pass": EXIT_PASS, "fail": EXIT_FAIL,
            "inconclusive": EXIT_INCONCLUSIVE}[status]


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isinf(x) or math.isnan(x):
            return str(x)
        return x
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    return obj


# --------------------------------------------------------------------------
# Experiment implementations


def _cmd_simulate(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    kind = cfg["model"]["kind"]
    if kind == "nlw":
        basis = _build_basis(cfg)
        nl = _build_nonlinearity(cfg)
        noise = _build_noise(cfg, basis)
        sim = _build_simconfig(cfg, basis)
        y0 = _smooth_state(basis, sim.alpha, cfg["experiment"]["state_scale"],
                           cfg.seed + 1)
        traj = nlw.simulate(sim, nl, noise, y0)
        k = min(8, basis.mode_count)
        s = cfg["experiment"]["s_exponent"]
        rows = [[traj.t[i], traj.energy[i], traj.norm_h()[i], traj.norm_hs(s)[i],
                 *traj.states[i, 0, :k]] for i in range(traj.t.size)]
        _write_csv(out_dir / "trajectory.csv",
                   ["t", "E", "normH", "normHs"] + [f"mode_{j + 1}" for j in range(k)],
                   rows)
        finite = bool(np.isfinite(traj.states).all())
        return _finish(cfg, out_dir, "pass" if finite else "fail",
                       {"final_energy": traj.energy[-1]}, {"finite": True})
    model = _build_toy(cfg)
    eps = cfg["model"]["toy_eps"] if kind != "ou" else None
    t, paths, _ = toys.simulate_toy(model, eps, cfg["integrator"]["toy_dt"],
                                    cfg["integrator"]["horizon"], cfg.seed,
                                    record_stride=cfg["integrator"]["stride"])
    _write_csv(out_dir / "trajectory.csv", ["t", "u"],
               [[t[i], paths[0, i]] for i in range(t.size)])
    return _finish(cfg, out_dir, "pass", {"final": paths[0, -1]}, {})


def _cmd_energy_audit(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    basis = _build_basis(cfg)
    nl = _build_nonlinearity(cfg)
    noise = _build_noise(cfg, basis)
    sim = _build_simconfig(cfg, basis)
    y0 = _smooth_state(basis, sim.alpha, cfg["experiment"]["state_scale"], cfg.seed + 1)
    if cfg["noise"]["eps"] == 0:
        audit = nlw.energy_audit(nlw.simulate(sim, nl, noise, y0))
    else:
        n_traj = cfg["experiment"]["n_traj"]
        res = nlw.run_flow(sim, nl, noise, y0, n_traj=n_traj,
                           probes={"energy": nlw.make_energy_fn(basis, nl, sim.alpha)},
                           integrands={"normH2": lambda s:
                                       np.sum(basis.eigenvalues * s[..., 0, :] ** 2
                                              + (s[..., 1, :] + sim.alpha * s[..., 0, :]) ** 2,
                                              axis=-1)},
                           threads=threads)
        trajs = [nlw.Trajectory(res.t, np.zeros((res.t.size, 2, basis.mode_count)),
                                res.probes["energy"][i], sim, nl, noise, y0,
                                {"normH2": res.integrals["normH2"][i]})
                 for i in range(res.probes["energy"].shape[0])]
        audit = nlw.energy_audit(trajs)
    _write_csv(out_dir / "energy.csv", ["t", "E"],
               [[audit.t[i], audit.series[i]] for i in range(audit.t.size)])
    slope_ok = audit.decay is not None and (cfg["noise"]["eps"] > 0
                                            or audit.decay_rate >= 0.9 * sim.alpha)
    status = "pass" if (np.isfinite(audit.c_fit) and slope_ok) else "fail"
    return _finish(cfg, out_dir, status,
                   {"c_fit": audit.c_fit, "decay_rate": audit.decay_rate,
                    "k_fit": audit.k_fit},
                   {"min_decay_rate": 0.9 * sim.alpha})


def _cmd_couple_fp(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    basis = _build_basis(cfg)
    nl = _build_nonlinearity(cfg)
    noise = _build_noise(cfg, basis)
    sim = _build_simconfig(cfg, basis)
    z = _smooth_state(basis, sim.alpha, cfg["experiment"]["state_scale"], cfg.seed + 1)
    zp = _smooth_state(basis, sim.alpha, cfg["experiment"]["state_scale"], cfg.seed + 2)
    n_fb = cfg["experiment"]["n_feedback"]
    pair = cpl.couple_fp(sim, nl, noise, z, zp, n_fb)
    d0_sq = max(rates.phase_dist_sq(z.as_array(), zp.as_array(),
                                    basis.eigenvalues, sim.alpha), 1e-300)
    rows = []
    for i in range(pair.t.size):
        ratio = pair.lowmode_sq[i] / d0_sq * math.exp(sim.alpha * pair.t[i])
        rows.append([pair.t[i], pair.diff_vu[i], ratio,
                     pair.girsanov.novikov_energy[i]])
    _write_csv(out_dir / "couple_fp.csv",
               ["t", "diff_normH", "lowmode_ratio", "novikov_energy"], rows)
    rep = cpl.fp_contraction_test(sim, nl, noise, z, zp,
                                  n_grid=(2, 4, n_fb, basis.mode_count))
    ok = rep.lowmode_ok and rep.n_star is not None
    return _finish(cfg, out_dir, "pass" if ok else "fail",
                   {"rates": {str(k): v for k, v in rep.rates.items()},
                    "n_star": rep.n_star, "lowmode_margin": rep.lowmode_margin},
                   {"lowmode_margin_max": 1e-6, "rate_floor": sim.alpha / 2})


def _cmd_girsanov_tv(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    basis = _build_basis(cfg)
    nl = _build_nonlinearity(cfg)
    noise = _build_noise(cfg, basis)
    sim = _build_simconfig(cfg, basis)
    z = _smooth_state(basis, sim.alpha, 0.3, cfg.seed + 1)
    d = np.zeros((2, basis.mode_count))
    d[0, 0] = 1.0 / math.sqrt(basis.eigenvalues[0])
    d[1, 0] = -sim.alpha / math.sqrt(basis.eigenvalues[0])
    exp = cpl.girsanov_tv_experiment(sim, nl, noise, z, d,
                                     cfg["experiment"]["distances"],
                                     cfg["experiment"]["n_feedback"],
                                     n_traj=cfg["experiment"]["n_traj"])
    rows = [[exp.distances[i], exp.tv_estimates[i].value, exp.tv_estimates[i].stderr,
             exp.bounds[i].value, exp.novikov_median[i]]
            for i in range(exp.distances.size)]
    _write_csv(out_dir / "girsanov_tv.csv",
               ["distance", "tv_estimate", "tv_stderr", "tv_bound",
                "novikov_median"], rows)
    # representative coupled series at the largest separation
    d0 = float(exp.distances[0])
    zp = PhaseState.from_coeffs(basis, *(z.as_array() + d0 * d), sim.alpha)
    pair = cpl.couple_fp(sim, nl, noise, z, zp, cfg["experiment"]["n_feedback"])
    d0_sq = max(rates.phase_dist_sq(z.as_array(), zp.as_array(),
                                    basis.eigenvalues, sim.alpha), 1e-300)
    series = [[pair.t[i], pair.diff_vu[i],
               pair.lowmode_sq[i] / d0_sq * math.exp(sim.alpha * pair.t[i]),
               pair.girsanov.novikov_energy[i]] for i in range(pair.t.size)]
    _write_csv(out_dir / "couple_series.csv",
               ["t", "diff_normH", "lowmode_ratio", "novikov_energy"], series)
    dominated = all(e.value <= b.value + 3 * e.stderr
                    for e, b in zip(exp.tv_estimates, exp.bounds))
    quad = abs(exp.scaling_fit.slope - 2.0) <= 0.3
    status = "pass" if (dominated and quad) else "fail"
    return _finish(cfg, out_dir, status,
                   {"scaling_exponent": exp.scaling_fit.slope,
                    "dominated": dominated},
                   {"scaling_exponent": [1.7, 2.3], "domination_se": 3})


def _cmd_mix(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    basis = _build_basis(cfg)
    nl = _build_nonlinearity(cfg)
    noise = _build_noise(cfg, basis)
    sim = _build_simconfig(cfg, basis)
    scale = cfg["experiment"]["state_scale"]
    z = _smooth_state(basis, sim.alpha, scale, cfg.seed + 1)
    zp = _smooth_state(basis, sim.alpha, scale, cfg.seed + 2)
    rep = cpl.mixing_rate(sim, nl, noise, z, zp,
                          n_traj=cfg["experiment"]["n_traj"], threads=threads)
    _write_csv(out_dir / "mixing.csv", ["t", "delta"],
               [[rep.t[i], rep.delta[i]] for i in range(rep.t.size)])
    return _finish(cfg, out_dir, "pass" if rep.passed else "fail",
                   {"kappa": rep.kappa, "kappa_ci": list(rep.kappa_ci),
                    "noise_floor": rep.noise_floor},
                   {"kappa_positive_at": 0.95})


def _toy_observable_runs(cfg: RunConfig, horizon: float, n_traj: int,
                         seed: int, integrand):
    model = _build_toy(cfg)
    kind = cfg["model"]["kind"]
    eps = None if kind == "ou" else cfg["model"]["toy_eps"]
    return toys.simulate_toy(model, eps, cfg["integrator"]["toy_dt"], horizon,
                             seed, n_traj=n_traj, record_stride=100,
                             integrand=integrand)


def _cmd_occupation(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    kind = cfg["model"]["kind"]
    horizon = cfg["integrator"]["horizon"]
    if kind == "nlw":
        basis = _build_basis(cfg)
        nl = _build_nonlinearity(cfg)
        noise = _build_noise(cfg, basis)
        sim = _build_simconfig(cfg, basis)
        obs = {o.name: o for o in default_observables(basis, sim.alpha, (1, 2))}
        y0 = _smooth_state(basis, sim.alpha, cfg["experiment"]["state_scale"],
                           cfg.seed + 1)
        res = nlw.run_flow(sim, nl, noise, y0, n_traj=1, integrands=obs,
                           threads=threads)
        series = {k: v[0] for k, v in res.integrals.items()}
        rows = [[res.t[i]] + [series[k][i] / res.t[i] if res.t[i] > 0 else 0.0
                              for k in series] for i in range(res.t.size)]
        _write_csv(out_dir / "occupation.csv", ["t"] + list(series), rows)
        return _finish(cfg, out_dir, "pass",
                       {"averages": {k: series[k][-1] / res.t[-1] for k in series}}, {})
    t, paths, ints = _toy_observable_runs(cfg, horizon, 1, cfg.seed,
                                          integrand=lambda u: u)
    rec = erg.occupation_measure(t, {"u": paths})
    rows = [[t[i], rec.averages["u"][0, i]] for i in range(t.size)]
    _write_csv(out_dir / "occupation.csv", ["t", "avg_u"], rows)
    return _finish(cfg, out_dir, "pass", {"avg_u": rec.final("u")}, {})


def _cmd_pressure(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    kind = cfg["model"]["kind"]
    betas = cfg["experiment"]["betas"]
    if 0.0 not in betas:
        betas = sorted(betas + [0.0])
    if kind == "chain2":
        chain = erg.two_state_chain(1.0, 1.0, v=(1.0, 0.0))
        curve = erg.chain_pressure_curve(chain, betas)
    elif kind == "ou":
        ou = _build_toy(cfg)
        horizon = cfg["integrator"]["horizon"]
        n_traj = cfg["experiment"]["n_traj"]

        def estimator(beta: float) -> erg.PressureEstimate:
            t, _, ints = toys.simulate_toy(
                ou, None, cfg["integrator"]["toy_dt"], horizon,
                cfg.seed + int(1e3 * abs(beta)) + (0 if beta > 0 else 7),
                n_traj=n_traj, record_stride=10 ** 9,
                integrand=lambda u: beta * u)
            return erg.feynman_kac_estimate(ints[:, -1], horizon)

        curve = erg.pressure_curve(betas, estimator, center=0.0)
    else:
        raise ConfigError("pressure needs model kind ou or chain2")
    _write_csv(out_dir / "pressure.csv", ["beta", "Q", "stderr"],
               [[curve.betas[i], curve.values[i], curve.stderr[i]]
                for i in range(curve.betas.size)])
    rate = erg.legendre(curve)
    finite = np.isfinite(rate.values)
    _write_csv(out_dir / "rate.csv", ["p", "I"],
               [[rate.p[i], rate.values[i]] for i in range(rate.p.size) if finite[i]])
    viol = curve.convexity_violations()
    return _finish(cfg, out_dir, "pass" if viol == 0 else "fail",
                   {"convexity_violations": viol,
                    "Q": dict(zip(map(str, curve.betas), curve.values))},
                   {"convexity_violations": 0})


def _cmd_ldp1(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    kind = cfg["model"]["kind"]
    interval = tuple(cfg["experiment"]["interval"][:2])
    horizons = cfg["experiment"]["horizons"] or [8.0, 16.0, 32.0]
    n_traj = cfg["experiment"]["n_traj"]
    if kind == "ou":
        ou = _build_toy(cfg)
        betas = np.linspace(-1.2, 1.2, 49)
        curve = erg.PressureCurve(betas, np.array([ou.pressure(b) for b in betas]),
                                  np.zeros(betas.size), 0.0, math.inf, 0)
        rate = erg.legendre(curve)
        avgs = []
        for k, T in enumerate(horizons):
            _, _, ints = toys.simulate_toy(ou, None, cfg["integrator"]["toy_dt"],
                                           T, cfg.seed + k, n_traj=n_traj,
                                           record_stride=10 ** 9,
                                           integrand=lambda u: u)
            avgs.append(ints[:, -1] / T)
    elif kind == "chain2":
        chain = erg.two_state_chain(1.0, 1.0, v=(1.0, 0.0))
        curve = erg.chain_pressure_curve(chain, np.linspace(-3, 3, 61))
        rate = erg.legendre(curve)
        avgs = []
        for k, T in enumerate(horizons):
            ints = chain.sample_occupation(T, n_traj, cfg.seed + k)
            avgs.append(ints / T)
    else:
        raise ConfigError("ldp1 needs model kind ou or chain2")
    rep = erg.ldp_level1_check(horizons, avgs, interval, rate)
    _write_csv(out_dir / "ldp1.csv", ["horizon", "log_prob", "hits"],
               [[rep.horizons[i], rep.log_probs[i], rep.hits[i]]
                for i in range(rep.horizons.size)])
    status = ("inconclusive" if rep.inconclusive
              else "pass" if rep.passed else "fail")
    return _finish(cfg, out_dir, status,
                   {"empirical": rep.empirical, "target": rep.target,
                    "rel_error": rep.rel_error},
                   {"rel_error_max": 0.2, "min_hits": 50})


def _cmd_quasipotential(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    kind = cfg["model"]["kind"]
    eta = cfg["experiment"]["eta"]
    if kind in ("cubic", "doublewell"):
        model = _build_toy(cfg)
        a, b = cfg["experiment"]["from_point"], cfg["experiment"]["to_point"]
        res = rates.toy_quasipotential(model, a, b, eta=eta, seed=cfg.seed,
                                       eta_ladder=(eta / 2, eta / 4))
        oracle = rates.toy_quasipotential_oracle(model, a, b)
        _write_csv(out_dir / "quasipotential.csv", ["t", "phi"],
                   [[res.path.t[i], res.path.phis[i]]
                    for i in range(res.path.t.size)])
        ok = res.converged and (oracle == 0 or abs(res.value - oracle) / max(oracle, 1e-12) <= 0.05)
        return _finish(cfg, out_dir, "pass" if ok else "fail",
                       {"value": res.value, "oracle": oracle,
                        "endpoint_error": res.endpoint_error,
                        "eta_ladder": res.eta_ladder},
                       {"rel_error_max": 0.05})
    basis = _build_basis(cfg)
    nl = _build_nonlinearity(cfg)
    noise = _build_noise(cfg, basis)
    sim = _build_simconfig(cfg, basis)
    z1 = PhaseState.zero(basis, sim.alpha)
    z2 = PhaseState(Field.from_mode(basis, 1, cfg["experiment"]["to_point"], 1.0),
                    Field.zero(basis), sim.alpha)
    res = rates.nlw_quasipotential(basis, nl, cfg["model"]["gamma"], noise, z1,
                                   z2, eta=max(eta, 0.05))
    return _finish(cfg, out_dir, "pass" if res.converged else "fail",
                   {"value": res.value, "endpoint_error": res.endpoint_error},
                   {"eta": eta})


def _cmd_fw_graph(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    model = _build_toy(cfg)
    if not isinstance(model, toys.GradientSDE):
        raise ConfigError("fw-graph needs a gradient toy model")
    net = rates.toy_equilibrium_network(model)
    if cfg["experiment"]["use_solver"]:
        pts, stable = model.equilibria()
        n = pts.size
        V = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if i != j:
                    V[i, j] = rates.toy_quasipotential(
                        model, pts[i], pts[j], eta=0.03, seed=cfg.seed).value
        net = rates.EquilibriumNetwork(net.kind, net.points, net.stable, V)
    variant = cfg["experiment"]["chain_variant"]
    stable_net = net.restrict_to_stable()
    W = rates.w_graph_weights(stable_net, variant=variant)
    queries = {}
    for k, p in enumerate(net.points):
        v_vec = [net.V[i_s, k] for i_s in np.flatnonzero(net.stable)]
        q = rates.fw_rate(net, v_to_point=v_vec, variant=variant)
        queries[repr(float(np.atleast_1d(p)[0]))] = q.value
    payload = net.to_json_dict()
    payload["W"] = W.tolist()
    payload["rate"] = queries
    (out_dir / "network.json").write_text(json.dumps(payload, indent=2,
                                                     sort_keys=True) + "\n")
    status = "pass"
    tol = {}
    if cfg["model"]["kind"] == "cubic":
        v0 = queries.get("0.0")
        target = 4.5
        tol = {"rate_at_0": target,
               "rel_error_max": 0.07 if cfg["experiment"]["use_solver"] else 1e-9}
        if v0 is None or abs(v0 - target) / target > tol["rel_error_max"]:
            status = "fail"
    return _finish(cfg, out_dir, status, {"W": W.tolist(), "rate": queries}, tol)


def _cmd_stationary_smallnoise(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    model = _build_toy(cfg)
    flat = cfg["experiment"]["sets"]
    if len(flat) % 2:
        raise ConfigError("experiment.sets must list lo/hi pairs")
    sets = [(flat[i], flat[i + 1]) for i in range(0, len(flat), 2)]
    mode = "mc" if cfg["experiment"]["mc"] else "exact"
    rep = rates.smallnoise_stationary_probe(model, cfg["experiment"]["eps_list"],
                                            sets, mode=mode, seed=cfg.seed)
    rows = []
    for si, (lo, hi) in enumerate(rep.sets):
        for ei, e in enumerate(rep.eps):
            rows.append([lo, hi, e, rep.eps_log_mu[si, ei]])
    _write_csv(out_dir / "smallnoise.csv", ["set_lo", "set_hi", "eps",
                                            "eps_log_mu"], rows)
    if rep.inconclusive:
        status = "inconclusive"
    else:
        tol = 0.02 if mode == "exact" else 0.2
        oks = []
        for si in range(len(rep.sets)):
            tgt = rep.targets[si]
            if mode == "exact":
                oks.append(abs(rep.eps_log_mu[si, -1] - tgt) <= tol)
            else:
                denom = max(abs(tgt), 1e-12)
                oks.append(abs(rep.intercepts[si] - tgt) / denom <= tol)
        status = "pass" if all(oks) and rep.agreement_ok else "fail"
    return _finish(cfg, out_dir, status,
                   {"table": rep.eps_log_mu.tolist(),
                    "intercepts": rep.intercepts.tolist(),
                    "targets": rep.targets.tolist(),
                    "stable_mass": rep.stable_mass.tolist()},
                   {"exact_abs_tol": 0.02, "mc_rel_tol": 0.2})


def _cmd_boundary_chain(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    model = _build_toy(cfg)
    r = cfg["experiment"]["radii"]
    bc = rates.BoundaryChainConfig(*r[:5]) if len(r) >= 5 else rates.BoundaryChainConfig()
    eps = cfg["experiment"]["eps_list"][0]
    rep = rates.boundary_chain(model, bc, eps, seed=cfg.seed,
                               n_replicas=cfg["experiment"]["replicas"],
                               horizon_per_replica=cfg["experiment"]["rep_horizon"],
                               dt=cfg["integrator"]["toy_dt"])
    rows = []
    n = rep.nodes.size
    for i in range(n):
        for j in range(n):
            rows.append([rep.nodes[i], rep.nodes[j], rep.counts[i, j],
                         rep.probabilities[i, j], rep.eps_log_p[i, j],
                         rep.vtilde[i, j]])
    _write_csv(out_dir / "boundary_chain.csv",
               ["from", "to", "count", "prob", "eps_log_p", "vtilde"], rows)
    if rep.inconclusive:
        status = "inconclusive"
    else:
        ok = True
        for i in range(n):
            for j in range(n):
                if i != j and rep.vtilde[i, j] > 0 and np.isfinite(rep.vtilde[i, j]):
                    gap = abs(rep.eps_log_p[i, j] + rep.vtilde[i, j]) / rep.vtilde[i, j]
                    ok = ok and gap <= 0.25
        status = "pass" if ok else "fail"
    return _finish(cfg, out_dir, status,
                   {"counts": rep.counts.tolist(),
                    "eps_log_p": rep.eps_log_p.tolist(),
                    "vtilde": rep.vtilde.tolist()},
                   {"rel_gap_max": 0.25, "min_cell": 50})


def _cmd_selftest(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    """Fast exact oracles: every check here has a closed-form answer."""
    results = {}
    basis = SpectralBasis((math.pi,), 12)
    gram = (basis.eigenfunctions * basis.weights[:, None]).T @ basis.eigenfunctions
    results["orthonormality"] = bool(np.max(np.abs(gram - np.eye(12))) < 1e-10)
    results["lambda_1"] = bool(abs(basis.eigenvalues[0] - 1.0) < 1e-12)

    mc = cpl.maximal_coupling_discrete([0.5, 0.5], [0.75, 0.25])
    results["maximal_coupling_tv"] = bool(abs(mc.tv - 0.25) < 1e-12)

    tri = erg.fk_eigen_exact(erg.two_state_chain(1.0, 1.0, v=(1.0, 0.0)),
                             check_times=())
    results["chain_eigenvalue"] = bool(
        abs(tri.log_lam - (math.sqrt(5) - 1) / 2) < 1e-10)

    cubic = toys.builtin_cubic()
    results["cubic_potential"] = bool(
        abs(cubic.potential(1.0) - 5.0 / 12.0) < 1e-12
        and abs(cubic.potential(3.0) + 9.0 / 4.0) < 1e-12)
    results["cubic_rate"] = bool(
        abs(rates.gradient_rate_oracle(cubic.potential, 0.0) - 4.5) < 1e-6)
    results["zero_action"] = rates.action_value(
        np.linspace(0, 1, 11), np.zeros(11)) == 0.0

    for name, ok in results.items():
        print(f"{name}: {'ok' if ok else 'FAIL'}")
    status = "pass" if all(results.values()) else "fail"
    return _finish(cfg, out_dir, status, results, {})


COMMANDS = {
    "simulate": _cmd_simulate,
    "energy-audit": _cmd_energy_audit,
    "couple-fp": _cmd_couple_fp,
    "girsanov-tv": _cmd_girsanov_tv,
    "mix": _cmd_mix,
    "occupation": _cmd_occupation,
    "pressure": _cmd_pressure,
    "ldp1": _cmd_ldp1,
    "quasipotential": _cmd_quasipotential,
    "fw-graph": _cmd_fw_graph,
    "stationary-smallnoise": _cmd_stationary_smallnoise,
    "boundary-chain": _cmd_boundary_chain,
    "selftest": _cmd_selftest,
}


def dispatch(cfg: RunConfig, subcommand: str, threads: int = 1) -> int:
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return COMMANDS[subcommand](cfg, out_dir, threads)


def _experiment_flags(parser: argparse.ArgumentParser):
    for key, (typ, default) in SCHEMA["experiment"].items():
        flag = "--" + key.replace("_", "-")
        parser.add_argument(flag, dest=f"x_{key}", default=None,
                            help=f"experiment.{key} (default {default!r})")
    parser.add_argument("--dt", default=None, help="integrator.dt")
    parser.add_argument("--horizon", default=None, help="integrator.horizon")
    parser.add_argument("--noise-eps", default=None, help="noise.eps")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="wavemix",
        description="Stochastic wave-equation laboratory: simulation, coupling "
                    "diagnostics, pressure and rare-event rate experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--model", default=None,
                       help="model kind: nlw | cubic | doublewell | ou | chain2")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--set", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")
        _experiment_flags(p)
    args = parser.parse_args(argv)

    overrides = list(args.set)
    if args.model is not None:
        overrides.append(f"model.kind={args.model}")
    if args.dt is not None:
        overrides.append(f"integrator.dt={args.dt}")
    if args.horizon is not None:
        overrides.append(f"integrator.horizon={args.horizon}")
    if getattr(args, "noise_eps") is not None:
        overrides.append(f"noise.eps={args.noise_eps}")
    for key in SCHEMA["experiment"]:
        val = getattr(args, f"x_{key}")
        if val is not None:
            overrides.append(f"experiment.{key}={val}")

    try:
        cfg = parse_config(args.config, overrides,
                           seed=args.seed if args.seed is not None else 12345,
                           out=args.out if args.out is not None else "out")
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        return dispatch(cfg, args.command, threads=args.threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
