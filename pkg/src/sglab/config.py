"""Flat dotted key = value configuration files.

Lines look like ``grid.n_points = 4096``; ``#`` starts a comment.  Values are
parsed as int, float, comma separated float lists or bare strings.  Unknown
keys are rejected so typos do not silently fall back to defaults.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

DEFAULTS = {
    "experiment.n": 1,
    "experiment.k": 0,
    "experiment.eps_list": [0.1, 0.07, 0.05, 0.035, 0.025],
    "experiment.xi_s": 1.0,
    "experiment.u_s_hat": 0.18,
    "experiment.C_tilde": 1.0,
    "experiment.T_factor": 0.85,
    "forcing.profile": "sech",
    "forcing.amplitude": 1.0,
    "forcing.center": 0.0,
    "forcing.width": 1.0,
    "grid.half_width": 40.0,
    "grid.n_points": 4096,
    "manifold.n_xi": 64,
    "manifold.n_u": 9,
    "manifold.dxi": 0.25,
    "sim.dt_factor": 0.01,
    "sim.observe_every": 0.05,
    "sim.margin": 10.0,
    "seed.fraction": 1.0,
    "seed.center": 1.0,
    "seed.width": 1.0,
    "seed.w_ratio": 0.5,
    "decomp.tol": 1e-10,
}


class ConfigError(ValueError):
    pass


def _parse_value(text: str, default):
    text = text.strip()
    if isinstance(default, list):
        return [float(t) for t in text.split(",") if t.strip()]
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config(text: str) -> dict:
    out = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        try:
            out[key] = _parse_value(val, DEFAULTS[key])
        except ValueError as e:
            raise ConfigError(f"line {no}: bad value for {key}: {val!r}") from e
    return out


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __post_init__(self):
        merged = dict(DEFAULTS)
        merged.update(self.values)
        self.values = merged
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    @property
    def n(self) -> int:
        return int(self.values["experiment.n"])

    @property
    def k(self) -> int:
        return int(self.values["experiment.k"])

    @property
    def eps_list(self) -> list:
        return list(self.values["experiment.eps_list"])

    def validate(self):
        v = self.values
        if v["experiment.k"] < 0 or v["experiment.k"] + 1 > v["experiment.n"]:
            raise ConfigError("need 0 <= k and k + 1 <= n")
        eps = v["experiment.eps_list"]
        if any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_list must be positive and strictly descending")
        if abs(v["experiment.u_s_hat"]) > v["experiment.C_tilde"]:
            raise ConfigError("|u_s| must not exceed C_tilde eps^beta")
        if v["experiment.T_factor"] > 1.0 / v["experiment.C_tilde"] + 1e-12:
            raise ConfigError("T_factor must not exceed 1 / C_tilde")
        if not 0 <= v["seed.fraction"] <= 1.0:
            raise ConfigError("seed.fraction must lie in [0, 1]")
        if v["sim.dt_factor"] > 0.5:
            raise ConfigError("dt_factor above the CFL limit 0.5")

    def T(self, eps: float) -> float:
        return self.values["experiment.T_factor"] / eps ** (0.5 * (self.k + 1))

    def u_s(self, eps: float) -> float:
        return self.values["experiment.u_s_hat"] * eps ** (0.5 * (self.k + 1))

    def with_updates(self, **kw) -> "ExperimentConfig":
        vals = dict(self.values)
        for key, val in kw.items():
            vals[key.replace("__", ".")] = val
        return ExperimentConfig(vals)

    def dumps(self) -> str:
        lines = []
        for key in sorted(self.values):
            val = self.values[key]
            if isinstance(val, list):
                val = ",".join(repr(float(x)) for x in val)
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig(parse_config(Path(path).read_text()))
