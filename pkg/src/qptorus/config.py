"""Run configuration: YAML schema, validation, and resolution.

A run config fully determines a solver run; every command writes the
resolved form next to its outputs so reruns are reproducible. See the
README for the schema reference.
"""

import copy
import numpy as np
import yaml

from .model import build_model, FrequencyVector, ModelError
from .harmonics import HarmonicScheme, SchemeError


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "model": {"name": "duffing", "params": {}},
    "torus": {"d": 1, "e": 1, "harmonics": [], "samples": None, "s1": 256},
    "forcing": {"terms": [], "ratios": []},
    "omega": {"base": 1.0, "intrinsic": []},
    "seed": {"source": "zero", "snapshot": None, "perturbation": 1e-3},
    "continuation": {
        "parameter": "omega1",
        "range": [1.0, 2.0],
        "step": 0.02,
        "step_bounds": [1e-6, 0.25],
        "deficit_case": 1,
        "released": None,
        "epsilon": 1e-8,
        "max_points": 100,
        "model_parameter": None,
    },
    "stability": {"enabled": False, "n_ly": 500},
    "run": {"output_dir": "out", "workers": 1, "seed": 1234,
            "amplitude_dof": 0},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if key not in out:
            raise ConfigError("unknown config key '%s'" % key)
        if isinstance(out[key], dict) and isinstance(val, dict):
            for k2, v2 in val.items():
                if k2 not in out[key]:
                    raise ConfigError("unknown config key '%s.%s'" % (key, k2))
                out[key][k2] = v2
        else:
            out[key] = val
    return out


class RunConfig:
    """Validated, resolved run configuration."""

    def __init__(self, data):
        self.data = _merge(_DEFAULTS, data)
        self._validate()

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        return cls(raw)

    def _validate(self):
        t = self.data["torus"]
        d, e = int(t["d"]), int(t["e"])
        if d < 1:
            raise ConfigError("torus dimension d must be >= 1")
        if not 0 <= e <= d:
            raise ConfigError("forcing count e must satisfy 0 <= e <= d")
        if len(t["harmonics"]) != d - 1:
            raise ConfigError(
                "need %d harmonic magnitude lists for d = %d" % (d - 1, d))
        if t["samples"] is not None and len(t["samples"]) != d - 1:
            raise ConfigError("samples list must match the torus dimension")
        if int(t["s1"]) < 2:
            raise ConfigError("s1 must be at least 2")
        f = self.data["forcing"]
        for term in f["terms"]:
            idx = int(term.get("index", 0))
            if not 1 <= idx <= e:
                raise ConfigError(
                    "forcing term index %d outside 1..e = %d" % (idx, e))
        if len(f["ratios"]) != max(e - 1, 0):
            raise ConfigError(
                "need %d forcing ratios (frequencies 2..e)" % max(e - 1, 0))
        om = self.data["omega"]
        if float(om["base"]) <= 0:
            raise ConfigError("base frequency must be positive")
        if len(om["intrinsic"]) != d - e:
            raise ConfigError(
                "need %d intrinsic frequency guesses" % (d - e))
        if self.data["seed"]["source"] not in (
                "zero", "linear", "snapshot", "periodic-lift"):
            raise ConfigError("unknown seed source")
        if int(self.data["run"]["workers"]) < 1:
            raise ConfigError("worker count must be >= 1")

    # --- builders -------------------------------------------------------
    @property
    def d(self):
        return int(self.data["torus"]["d"])

    @property
    def e(self):
        return int(self.data["torus"]["e"])

    def scheme(self):
        t = self.data["torus"]
        try:
            return HarmonicScheme(t["harmonics"], t["samples"])
        except SchemeError as err:
            raise ConfigError(str(err))

    def forcing_pairs(self):
        return [(float(term["amplitude"]), int(term["index"]))
                for term in self.data["forcing"]["terms"]]

    def model(self, override_params=None):
        m = self.data["model"]
        params = dict(m["params"])
        if override_params:
            params.update(override_params)
        try:
            return build_model(m["name"], params, self.forcing_pairs())
        except ModelError as err:
            raise ConfigError(str(err))

    def model_factory(self, parameter_name):
        if parameter_name == "omega1":
            raise ConfigError("omega1 is not a model parameter")

        def factory(p):
            return self.model({parameter_name: p})

        return factory

    def frequency_vector(self, omega1=None):
        om = self.data["omega"]
        w1 = float(om["base"]) if omega1 is None else float(omega1)
        ratios = [float(r) for r in self.data["forcing"]["ratios"]]
        omega = [w1] + [r * w1 for r in ratios]
        omega += [float(w) for w in om["intrinsic"]]
        return FrequencyVector(np.array(omega), self.e)

    def continuation_config(self):
        from .continuation import ContinuationConfig
        c = self.data["continuation"]
        released = c["released"]
        if released is None:
            case = int(c["deficit_case"])
            if case == 1:
                released = list(range(2, self.d + 1))
            elif case == 2:
                released = list(range(self.e + 1, self.d + 1))
            else:
                released = list(range(1, self.d + 1))
        lo, hi = c["step_bounds"]
        return ContinuationConfig(
            parameter=c["parameter"],
            p_range=tuple(float(v) for v in c["range"]),
            step0=float(c["step"]),
            step_min=float(lo),
            step_max=float(hi),
            deficit_case=int(c["deficit_case"]),
            released=tuple(int(i) for i in released),
            epsilon=float(c["epsilon"]),
            max_points=int(c["max_points"]),
            S1=int(self.data["torus"]["s1"]),
            workers=int(self.data["run"]["workers"]),
            amplitude_dof=int(self.data["run"]["amplitude_dof"]),
            stability=bool(self.data["stability"]["enabled"]),
            n_ly=int(self.data["stability"]["n_ly"]),
        )

    def resolved(self):
        return copy.deepcopy(self.data)

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.resolved(), fh, sort_keys=True)
