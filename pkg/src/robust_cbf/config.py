"""Scenario configuration files.

A config is an INI-style file with the sections ``scenario``, ``sim``,
``estimator``, ``barrier``, ``plant`` and ``slip``. Keys are addressed as
``section.key`` in overrides (``--set sim.duration=5``). Every key has to be
known: unknown keys are an error, never silently ignored. See the README for
the full schema.
"""

from __future__ import annotations

import configparser
from dataclasses import fields, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import plants as P
from .estimator import EstimatorConfig, iss_gains
from .filters import FilterSettings, normalize_filter
from .sim import Plant, ScenarioConfig


class ConfigError(ValueError):
    pass


PLANTS = ("actuator", "unicycle", "synthetic")

_PLANT_PARAMS = {
    "actuator": P.ActuatorParams,
    "unicycle": P.UnicycleParams,
    "synthetic": P.SyntheticParams,
}

_SLIP_CHANNELS = ("beta", "d_theta", "d_xB")
_PULSE_FIELDS = [f.name for f in fields(P.Pulse)]

SCHEMA = {
    "scenario": {"plant", "filter", "compensate", "uncertain", "name"},
    "sim": {"rate", "duration", "substeps", "x0", "seed", "x0_jitter", "slack", "slack_weight"},
    "estimator": {"lambda_diag", "lambda", "h_diag", "h", "delta_b", "delta_l"},
    "barrier": {"alpha", "alpha1", "alpha2", "alpha_h", "sigma_v"},
    "plant": {f.name for cls in _PLANT_PARAMS.values() for f in fields(cls)},
    "slip": set(_SLIP_CHANNELS),
}


# ---------------------------------------------------------------------------
# plant bundles


def make_actuator_plant(params: P.ActuatorParams = P.ActuatorParams(), alpha1: float = 2.0,
                        alpha2: float = 2.0, uncertain: bool = True) -> Plant:
    model = P.actuator_model(params)

    def actual(t, x, u):
        return P.actuator_dynamics(params, x, u, uncertain)

    def delta(t, x, u):
        return P.actuator_delta(params, x, u) if uncertain else np.zeros(4)

    chain = P.actuator_hocbf_chain(params, alpha1, alpha2)
    return Plant("actuator", model, actual, delta, lambda x: P.actuator_clf_controller(params, x),
                 chain.base, chain, tracking_error=lambda x: float((x[3] - params.x4d) ** 2),
                 x0=np.array([0.0, 0.5, 0.0, -0.2]))


def make_unicycle_plant(params: P.UnicycleParams = P.UnicycleParams(),
                        slip: P.SlipProfile = P.SlipProfile(), alpha: float = 1.0) -> Plant:
    model = P.unicycle_model(params)
    goal = np.asarray(params.goal, float)

    def delta(t, x, u):
        (beta, d_th, d_xb), _ = slip.at(t)
        return P.unicycle_delta(x, u, beta, d_th, d_xb)

    return Plant("unicycle", model, lambda t, x, u: P.unicycle_actual(x, u, slip, t), delta,
                 lambda x: P.unicycle_goal_controller(params, x), P.unicycle_edge_cbf(params, alpha),
                 tracking_error=lambda x: float(np.sum((x[:2] - goal) ** 2)), x0=np.zeros(3))


def make_synthetic_plant(params: P.SyntheticParams = P.SyntheticParams(), alpha1: float = 1.0,
                         alpha2: float = 1.0, uncertain: bool = True) -> Plant:
    model, chain, dist = P.synthetic_socp_plant(params, alpha1, alpha2)

    def delta(t, x, u):
        return np.array([dist(t)[0] if uncertain else 0.0, 0.0])

    def actual(t, x, u):
        return model(x, u) + delta(t, x, u)

    return Plant("synthetic", model, actual, delta, lambda x: P.synthetic_controller(params, x),
                 chain.base, chain, tracking_error=lambda x: float((x[0] - params.x1_target) ** 2),
                 x0=np.array([0.0, 0.0]))


# ---------------------------------------------------------------------------
# parsing helpers


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _floats(s: str) -> np.ndarray:
    try:
        return np.array([float(p) for p in s.replace(";", ",").split(",") if p.strip()], float)
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {s!r}") from exc


def _matrix(s: str) -> np.ndarray:
    rows = [r for r in s.split(";") if r.strip()]
    try:
        M = np.array([[float(v) for v in r.split(",")] for r in rows], float)
    except ValueError as exc:
        raise ConfigError(f"expected rows 'a,b;c,d', got {s!r}") from exc
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(f"matrix must be square, got {s!r}")
    return M


def _float(s: str) -> float:
    try:
        return float(s)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {s!r}") from exc


def _pulse(s: str) -> P.Pulse:
    vals = _floats(s)
    if not 1 <= vals.size <= len(_PULSE_FIELDS):
        raise ConfigError(f"slip pulse takes 1-{len(_PULSE_FIELDS)} numbers ({', '.join(_PULSE_FIELDS)}), got {s!r}")
    try:
        return P.Pulse(**dict(zip(_PULSE_FIELDS, (float(v) for v in vals))))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def read_config(path: Optional[str] = None, text: Optional[str] = None,
                overrides: Iterable[str] = ()) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh, source=str(path))
        if text is not None:
            cp.read_string(text)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot or not option:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, option, value.strip())
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(cp[section]) - SCHEMA[section]
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return cp


def _get(cp, section, key, conv, default):
    if cp.has_option(section, key):
        return conv(cp.get(section, key))
    return default


def _plant_params(cp, plant: str):
    cls = _PLANT_PARAMS[plant]
    allowed = {f.name: f for f in fields(cls)}
    kw = {}
    if cp.has_section("plant"):
        for key, raw in cp["plant"].items():
            if key not in allowed:
                raise ConfigError(f"[plant] key {key!r} does not apply to the {plant} plant")
            kw[key] = tuple(_floats(raw)) if key == "goal" else _float(raw)
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _slip(cp) -> P.SlipProfile:
    if not cp.has_section("slip"):
        return P.SlipProfile()
    return P.SlipProfile(**{k: _pulse(v) for k, v in cp["slip"].items()})


def estimator_from_parser(cp, n: int) -> EstimatorConfig:
    def sq(diag_key, full_key, default):
        if cp.has_option("estimator", full_key):
            return _matrix(cp.get("estimator", full_key))
        if cp.has_option("estimator", diag_key):
            d = _floats(cp.get("estimator", diag_key))
            return np.diag(d)
        return default

    lam = sq("lambda_diag", "lambda", None)
    H = sq("h_diag", "h", np.eye(n))
    if lam is None:
        raise ConfigError("[estimator] needs lambda_diag or lambda")
    if lam.shape != (n, n) or H.shape != (n, n):
        raise ConfigError(f"estimator matrices must be {n}x{n} for this plant")
    try:
        return EstimatorConfig(lam, H, _get(cp, "estimator", "delta_b", _float, 0.0),
                               _get(cp, "estimator", "delta_l", _float, 0.0))
    except ValueError as exc:
        raise ConfigError(f"invalid estimator: {exc}") from exc


def scenario_from_parser(cp: configparser.ConfigParser) -> ScenarioConfig:
    """Build a scenario; raises ``ConfigError`` or ``GateViolation``."""
    plant_name = _get(cp, "scenario", "plant", str.strip, None)
    if plant_name not in PLANTS:
        raise ConfigError(f"[scenario] plant must be one of {', '.join(PLANTS)}, got {plant_name!r}")
    try:
        filt = normalize_filter(_get(cp, "scenario", "filter", str, "none"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    compensate = _get(cp, "scenario", "compensate", _bool, True)
    uncertain = _get(cp, "scenario", "uncertain", _bool, True)
    params = _plant_params(cp, plant_name)

    alpha = _get(cp, "barrier", "alpha", _float, None)
    alpha1 = _get(cp, "barrier", "alpha1", _float, 2.0 if plant_name == "actuator" else 1.0)
    alpha2 = _get(cp, "barrier", "alpha2", _float, alpha1)
    alpha_h = _get(cp, "barrier", "alpha_h", _float, 1.0)
    sigma_v = _get(cp, "barrier", "sigma_v", _float, 1.0)

    try:
        if plant_name == "actuator":
            plant = make_actuator_plant(params, alpha1, alpha2, uncertain)
        elif plant_name == "unicycle":
            if not uncertain:
                raise ConfigError("the unicycle has no certain variant; drop [slip] instead")
            plant = make_unicycle_plant(params, _slip(cp), alpha if alpha is not None else alpha_h)
        else:
            plant = make_synthetic_plant(params, alpha1, alpha2, uncertain)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if plant_name != "unicycle" and cp.has_section("slip"):
        raise ConfigError("[slip] applies to the unicycle only")

    ecfg = estimator_from_parser(cp, plant.model.n)
    mu_e, gamma_val = iss_gains(ecfg.lam, ecfg.delta_l)
    # GateViolation propagates: it is a configuration error reported before simulation
    fs = FilterSettings(filt, compensate, alpha_h, sigma_v, mu_e, gamma_val, ecfg.delta_l)

    x0 = _get(cp, "sim", "x0", _floats, None)
    if x0 is not None and x0.size != plant.model.n:
        raise ConfigError(f"[sim] x0 must have {plant.model.n} entries")
    try:
        return ScenarioConfig(
            plant=plant, estimator=ecfg, filter=fs,
            rate=_get(cp, "sim", "rate", _float, 100.0),
            duration=_get(cp, "sim", "duration", _float, 10.0),
            substeps=int(_get(cp, "sim", "substeps", _float, 10)),
            x0=x0,
            seed=int(_get(cp, "sim", "seed", _float, 0)),
            x0_jitter=_get(cp, "sim", "x0_jitter", _float, 0.0),
            slack=_get(cp, "sim", "slack", _bool, False),
            slack_weight=_get(cp, "sim", "slack_weight", _float, 1e6),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path: Optional[str] = None, overrides: Iterable[str] = (), text: Optional[str] = None,
                  filter_name: Optional[str] = None) -> ScenarioConfig:
    overrides = list(overrides)
    if filter_name is not None:
        overrides.append(f"scenario.filter={filter_name}")
    return scenario_from_parser(read_config(path, text, overrides))


def bundled_dir() -> Path:
    return Path(str(resources.files("robust_cbf") / "scenarios"))


def bundled_scenarios() -> list[str]:
    return sorted(p.name for p in bundled_dir().glob("*.cfg"))


def resolve_config(name: str) -> str:
    """A path as given, or the bundled scenario of that (file) name."""
    if Path(name).exists():
        return name
    cand = bundled_dir() / name
    if not cand.suffix:
        cand = cand.with_suffix(".cfg")
    if cand.exists():
        return str(cand)
    raise ConfigError(f"config {name!r} not found (bundled: {', '.join(bundled_scenarios())})")


def with_filter(cfg: ScenarioConfig, name: str) -> ScenarioConfig:
    return replace(cfg, filter=replace(cfg.filter, name=name))
