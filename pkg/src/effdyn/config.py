"""Experiment configuration: flat ``key = value`` text with dotted sections.

Example::

    study = error
    model.family = GC
    model.a = 1
    model.k_c = 1
    model.k_b = 2
    beta = 1
    T = 1
    dt = 0.0005
    paths = 4096
    seed = 12345
    out = results

Unknown keys, malformed lines and semantic problems are reported as
positioned diagnostics rather than exceptions, so ``validate`` can list every
problem at once.  Configurations round-trip exactly through ``to_text``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from .bounds import fmt
from .potentials import ModelError, make_model

STUDIES = ("constants", "mean-force", "error", "scaling", "poisson-check")

_MODEL_PARAM_KEYS = ("a", "k_c", "k_b", "k", "n")


@dataclass
class ExperimentConfig:
    study: str | None = None
    family: str | None = None
    model_params: dict = field(default_factory=dict)
    v1: str | None = None
    baths: list = field(default_factory=list)
    beta: float = 1.0
    T: float = 1.0
    dt: float | None = None
    paths: int = 4096
    seed: int = 1
    xi_min: float | None = None
    xi_max: float | None = None
    grid_m: int = 241
    sweep_parameter: str | None = None
    sweep_values: list = field(default_factory=list)
    integrator: str = "auto"
    poisson_xi: float = 1.0
    poisson_width: float | None = None
    poisson_npts: int = 2001
    start: str = "equilibrium"
    x0: list | None = None
    out: str = "out"
    threads: int = 1
    figures: bool = True

    def resolved_dt(self):
        return self.T / 2000.0 if self.dt is None else self.dt

    def build_model(self):
        params = dict(self.model_params)
        if self.family in ("TR", "DEC"):
            params["v1"] = self.v1
        if self.family == "DEC":
            params["baths"] = list(self.baths)
        return make_model(self.family, beta=self.beta, **params)

    def to_text(self, execution_fields=True):
        lines = []

        def put(key, value):
            if value is None:
                return
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = fmt(value)
            elif isinstance(value, (list, tuple)):
                if not value:
                    return
                value = ", ".join(fmt(float(v)) if isinstance(v, (int, float)) else str(v)
                                  for v in value)
            lines.append(f"{key} = {value}")

        put("study", self.study)
        put("model.family", self.family)
        for k in _MODEL_PARAM_KEYS:
            if k in self.model_params:
                v = self.model_params[k]
                put(f"model.{k}", int(v) if k == "n" else float(v))
        put("model.v1", self.v1)
        for i, w in enumerate(self.baths):
            put(f"model.w{i + 2}", w)
        put("beta", float(self.beta))
        put("T", float(self.T))
        put("dt", None if self.dt is None else float(self.dt))
        put("paths", self.paths)
        put("seed", self.seed)
        put("grid.xi_min", self.xi_min)
        put("grid.xi_max", self.xi_max)
        put("grid.m", self.grid_m)
        put("sweep.parameter", self.sweep_parameter)
        put("sweep.values", list(self.sweep_values))
        put("integrator", self.integrator)
        put("poisson.xi", float(self.poisson_xi))
        put("poisson.width", self.poisson_width)
        put("poisson.npts", self.poisson_npts)
        put("start", self.start)
        put("x0", self.x0)
        if execution_fields:
            put("out", self.out)
            put("threads", self.threads)
            put("figures", self.figures)
        return "\n".join(lines) + "\n"

    def sha256(self):
        """Hash of the experiment identity; execution fields (out, threads,
        figures) never influence results and are excluded."""
        return hashlib.sha256(self.to_text(execution_fields=False).encode()).hexdigest()[:16]


def _parse_value(key, raw, lineno, diags):
    def bad(kind):
        diags.append(f"line {lineno}: {key}: expected {kind}, got {raw!r}")
        return None

    if key in ("study",):
        return raw
    if key == "model.family":
        return raw.upper()
    if key.startswith("model.w") or key == "model.v1":
        return raw
    if key in ("sweep.parameter", "integrator", "start", "out"):
        return raw
    if key in ("paths", "seed", "grid.m", "poisson.npts", "threads", "model.n"):
        try:
            return int(raw)
        except ValueError:
            return bad("an integer")
    if key == "figures":
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        return bad("a boolean")
    if key in ("sweep.values", "x0"):
        try:
            return [float(v) for v in raw.replace(",", " ").split()]
        except ValueError:
            return bad("a list of numbers")
    try:
        return float(raw)
    except ValueError:
        return bad("a number")


def parse_config(text):
    """Parse config text; returns (config, diagnostics)."""
    cfg = ExperimentConfig()
    diags = []
    params = {}
    baths = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            diags.append(f"line {lineno}: expected 'key = value'")
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        val = _parse_value(key, raw, lineno, diags)
        if val is None:
            continue
        if key == "study":
            cfg.study = val
        elif key == "model.family":
            cfg.family = val
        elif key == "model.v1":
            cfg.v1 = val
        elif key.startswith("model.w") and key[7:].isdigit():
            baths[int(key[7:])] = val
        elif key.startswith("model.") and key[6:] in _MODEL_PARAM_KEYS:
            params[key[6:]] = val
        elif key == "beta":
            cfg.beta = val
        elif key == "T":
            cfg.T = val
        elif key == "dt":
            cfg.dt = val
        elif key == "paths":
            cfg.paths = val
        elif key == "seed":
            cfg.seed = val
        elif key == "grid.xi_min":
            cfg.xi_min = val
        elif key == "grid.xi_max":
            cfg.xi_max = val
        elif key == "grid.m":
            cfg.grid_m = val
        elif key == "sweep.parameter":
            cfg.sweep_parameter = val
        elif key == "sweep.values":
            cfg.sweep_values = val
        elif key == "integrator":
            cfg.integrator = val
        elif key == "poisson.xi":
            cfg.poisson_xi = val
        elif key == "poisson.width":
            cfg.poisson_width = val
        elif key == "poisson.npts":
            cfg.poisson_npts = val
        elif key == "start":
            cfg.start = val
        elif key == "x0":
            cfg.x0 = val
        elif key == "out":
            cfg.out = val
        elif key == "threads":
            cfg.threads = val
        elif key == "figures":
            cfg.figures = val
        else:
            diags.append(f"line {lineno}: unknown key {key!r}")
    if baths:
        order = sorted(baths)
        if order != list(range(2, 2 + len(order))):
            diags.append("model.w* keys must be consecutive starting at model.w2")
        cfg.baths = [baths[i] for i in order]
    cfg.model_params = params
    return cfg, diags


def validate(config):
    """Semantic diagnostics for a parsed config; empty list means valid."""
    diags = []
    if config.study is not None and config.study not in STUDIES:
        diags.append(f"study: unknown kind {config.study!r}; expected one of {', '.join(STUDIES)}")
    if config.beta <= 0:
        diags.append("beta: must be positive")
    if config.T <= 0:
        diags.append("T: must be positive")
    dt = config.dt
    if dt is not None:
        if dt <= 0:
            diags.append("dt: must be positive")
        elif config.T > 0:
            steps = round(config.T / dt)
            if steps < 1 or abs(steps * dt - config.T) > 1e-9 * max(1.0, config.T):
                diags.append("dt: must divide T")
    if config.paths < 2:
        diags.append("paths: need at least 2")
    if config.threads < 1:
        diags.append("threads: must be >= 1")
    if config.grid_m < 16:
        diags.append("grid.m: must be >= 16")
    if config.xi_min is not None and config.xi_max is not None \
            and not config.xi_min < config.xi_max:
        diags.append("grid.xi_min: must be below grid.xi_max")
    if config.family is None:
        diags.append("model.family: required")
    else:
        try:
            config.build_model()
        except (ModelError, KeyError, ValueError) as exc:
            if isinstance(exc, KeyError):
                diags.append(f"model: missing parameter {exc.args[0]!r}")
            else:
                diags.append(f"model: {exc}")
    if config.study == "scaling":
        if not config.sweep_parameter:
            diags.append("sweep.parameter: required for scaling studies")
        if len(config.sweep_values) < 4:
            diags.append("sweep.values: scaling studies need at least 4 values")
    if config.study == "poisson-check" and config.poisson_npts < 16:
        diags.append("poisson.npts: must be >= 16")
    if config.start not in ("equilibrium", "fixed"):
        diags.append(f"start: unknown mode {config.start!r}")
    if config.start == "fixed" and not config.x0:
        diags.append("x0: required when start = fixed")
    if config.integrator not in ("auto", "euler", "splitting"):
        diags.append(f"integrator: unknown integrator {config.integrator!r}")
    return diags


def load_config(path):
    """Read and parse a config file; returns (config, diagnostics)."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        return None, [f"cannot read config: {exc}"]
    return parse_config(text)


def override(config, seed=None, out=None, threads=None, figures=None):
    """Apply command-line overrides without mutating the original."""
    kw = {}
    if seed is not None:
        kw["seed"] = seed
    if out is not None:
        kw["out"] = out
    if threads is not None:
        kw["threads"] = threads
    if figures is not None:
        kw["figures"] = figures
    return replace(config, **kw) if kw else config
