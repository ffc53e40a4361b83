"""INI-style run configuration with strict key validation.

Every accepted key and its default is listed in ``DEFAULTS``; ``auto`` means the
value is derived from other settings (for example ``b_tau = H**4``).
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .gibbs import ChainConfig
from .priors import HyperParams
from .simulation import SimDesign


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, str]] = {
    "model": {"P": "4", "H": "4"},
    "prior": {
        "a_lambda": "3",
        "b_lambda": "auto",  # a_lambda ** (1/6)
        "a_tau": "1",
        "b_tau": "auto",  # H ** 4
        "alpha_grid": "auto",  # 10 points evenly spaced in [H^-3, H^-0.1]
        "beta1": "1",
        "beta2": "5",
        "a_w": "2",
        "b_w": "2",
        "W_inf": "0.01",
        "a_sigma": "1",
        "b_sigma": "1",
        "theta_min": "-4",
        "theta_max": "4",
        "kappa_max": "4",
    },
    "chain": {
        "n_iter": "5000",
        "burn_in": "auto",  # n_iter // 3
        "thin": "3",
        "seed": "0",
        "n_chains": "1",
        "griddy_inner_draws": "10",
        "griddy_method": "exact",
        "aux_sampler": "cftp",
        "ising_steps": "1",
        "progress_every": "0",
    },
    "simulation": {
        "study": "1",
        "N": "10",
        "T": "100",
        "P_true": "3",
        "H_true": "3",
        "noise_sd": "auto",  # (1..N)/5 for study 1
        "inclusion_prob": "0.5",
        "replicates": "10",
        "study2_N": "40",
        "study2_T": "300",
        "study2_layout": "0,1;1,2;2",
    },
    "evaluate": {"empty_threshold": "0.01", "gamma_threshold": "0.5", "matching": "greedy"},
    "paths": {"data": "", "truth": "", "fit": "", "out": ""},
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, dict[str, str]] = field(default_factory=lambda: {s: dict(d) for s, d in DEFAULTS.items()})

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def text(self) -> str:
        """Canonical rendering used for hashing and for the manifest."""
        lines = []
        for sec in sorted(self.values):
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {self.values[sec][k]}" for k in sorted(self.values[sec]))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def override(self, section: str, key: str, value) -> "RunConfig":
        if key not in DEFAULTS.get(section, {}):
            raise ConfigError(f"unknown key [{section}] {key}")
        vals = {s: dict(d) for s, d in self.values.items()}
        vals[section][key] = str(value)
        return RunConfig(vals)

    # typed views -----------------------------------------------------------

    def _num(self, section: str, key: str, kind=float):
        raw = self.get(section, key)
        try:
            return kind(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from exc

    def hyperparams(self, N: int) -> HyperParams:
        pr = self.values["prior"]
        H = self._num("model", "H", int)
        P = self._num("model", "P", int)
        kw: dict = {"N": N, "P": P, "H": H}
        for key in ("a_lambda", "a_tau", "beta1", "beta2", "a_w", "b_w", "W_inf", "a_sigma", "b_sigma"):
            kw[key] = self._num("prior", key)
        kw["b_lambda"] = kw["a_lambda"] ** (1.0 / 6.0) if pr["b_lambda"] == "auto" else self._num("prior", "b_lambda")
        kw["b_tau"] = None if pr["b_tau"] == "auto" else self._num("prior", "b_tau")
        kw["alpha_grid"] = None if pr["alpha_grid"] == "auto" else _floats(pr["alpha_grid"])
        for key in ("theta_min", "theta_max", "kappa_max"):
            vals = _floats(pr[key])
            kw[key] = vals[0] if len(vals) == 1 else vals
        try:
            return HyperParams(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def chain(self) -> ChainConfig:
        ch = self.values["chain"]
        try:
            return ChainConfig(
                n_iter=self._num("chain", "n_iter", int),
                burn_in=None if ch["burn_in"] == "auto" else self._num("chain", "burn_in", int),
                thin=self._num("chain", "thin", int),
                seed=self._num("chain", "seed", int),
                n_chains=self._num("chain", "n_chains", int),
                griddy_inner_draws=self._num("chain", "griddy_inner_draws", int),
                griddy_method=ch["griddy_method"],
                aux_sampler=ch["aux_sampler"],
                ising_steps=self._num("chain", "ising_steps", int),
                progress_every=self._num("chain", "progress_every", int),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def study(self) -> int:
        s = self._num("simulation", "study", int)
        if s not in (1, 2):
            raise ConfigError("[simulation] study must be 1 or 2")
        return s

    def sim_design(self) -> SimDesign:
        sd = self.values["simulation"]["noise_sd"]
        try:
            return SimDesign(
                N=self._num("simulation", "N", int),
                T=self._num("simulation", "T", int),
                P_true=self._num("simulation", "P_true", int),
                H_true=self._num("simulation", "H_true", int),
                noise_sd=None if sd == "auto" else _floats(sd),
                inclusion_prob=self._num("simulation", "inclusion_prob"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def study2_layout(self) -> tuple[tuple[int, ...], ...]:
        raw = self.values["simulation"]["study2_layout"]
        try:
            layout = tuple(tuple(int(x) for x in block.split(",") if x.strip()) for block in raw.split(";"))
        except ValueError as exc:
            raise ConfigError(f"bad study2_layout {raw!r}") from exc
        if not layout or any(not b for b in layout) or min(min(b) for b in layout) < 0:
            raise ConfigError(f"bad study2_layout {raw!r}")
        return layout


def load_config(path: str | Path | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    for sec in parser.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]")
        for key, value in parser.items(sec):
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"unknown key [{sec}] {key}")
            cfg = cfg.override(sec, key, value.strip())
    return cfg


def default_config_text() -> str:
    return RunConfig().text()
