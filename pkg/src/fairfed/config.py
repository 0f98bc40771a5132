"""Experiment configuration: flat ``key = value`` files plus overrides."""
import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional

from .errors import ConfigurationError

ALGORITHMS = ("fedavg", "mwr")
RISK_MODES = ("mean", "sum_over_groups")


@dataclass
class ExperimentConfig:
    # dataset
    dataset: str = "synthetic"
    num_groups: int = 2
    num_classes: int = 2
    per_group: int = 200
    test_per_group: int = 100
    feature_dim: int = 8
    separation: float = 3.0
    spread: List[float] = field(default_factory=lambda: [1.0])
    images_path: str = ""
    labels_path: str = ""
    limit: int = 2000
    # federation
    num_clients: int = 4
    noise_plan: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.03, 0.03])
    algorithm: str = "mwr"
    rounds: int = 12
    local_epochs: int = 1
    lr: float = 0.01
    batch_size: int = 128
    likelihood_epochs: int = 20
    # fairness
    eta_mu: float = -0.003
    eta_mu_threshold: float = 0.5
    l1_coeff: float = 1e-5
    risk_mode: str = "mean"
    uniform_weights: bool = False
    tprsd_ddof: int = 0
    # privacy
    dp_epsilon: Optional[float] = None
    dp_sensitivity: Optional[float] = None
    # run
    seed: int = 0
    gradient_diagnostic: bool = False
    halt_on_violation: bool = False
    output_dir: str = ""

    def __post_init__(self):
        if self.algorithm == "fedavg":
            self.eta_mu = 0.0
            self.l1_coeff = 0.0
            self.uniform_weights = True
        validate(self)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def validate(cfg):
    def bad(key, msg):
        raise ConfigurationError(f"{key}: {msg}")

    if cfg.dataset not in ("synthetic", "idx"):
        bad("dataset", f"expected 'synthetic' or 'idx', got {cfg.dataset!r}")
    if cfg.algorithm not in ALGORITHMS:
        bad("algorithm", f"expected one of {ALGORITHMS}, got {cfg.algorithm!r}")
    if cfg.risk_mode not in RISK_MODES:
        bad("risk_mode", f"expected one of {RISK_MODES}, got {cfg.risk_mode!r}")
    if len(cfg.noise_plan) != cfg.num_clients:
        bad("noise_plan", f"has {len(cfg.noise_plan)} entries but num_clients is {cfg.num_clients}")
    if any(v < 0 for v in cfg.noise_plan):
        bad("noise_plan", "variances must be >= 0")
    if cfg.num_clients < 2:
        bad("num_clients", "must be >= 2")
    if cfg.rounds < 1:
        bad("rounds", "must be >= 1")
    if not cfg.lr > 0:
        bad("lr", "must be > 0")
    if cfg.batch_size < 1:
        bad("batch_size", "must be >= 1")
    if cfg.local_epochs < 1:
        bad("local_epochs", "must be >= 1")
    if cfg.l1_coeff < 0:
        bad("l1_coeff", "must be >= 0")
    if not 0 <= cfg.eta_mu_threshold <= 1:
        bad("eta_mu_threshold", "must lie in [0, 1]")
    if cfg.dp_epsilon is not None and cfg.dp_epsilon < 0:
        bad("dp_epsilon", "must be >= 0")
    if cfg.dp_sensitivity is not None and not cfg.dp_sensitivity > 0:
        bad("dp_sensitivity", "must be > 0")
    if cfg.dataset == "idx" and not (cfg.images_path and cfg.labels_path):
        bad("images_path", "idx datasets need images_path and labels_path")
    if cfg.dataset == "synthetic" and len(cfg.spread) not in (1, cfg.num_groups):
        bad("spread", f"needs 1 or num_groups={cfg.num_groups} values")


def _convert(key, text):
    f = _FIELDS[key]
    text = text.strip()
    kind = f.type
    try:
        if kind == List[float]:
            return [float(v) for v in text.split(",") if v.strip()]
        if kind == Optional[float]:
            return None if text.lower() in ("", "none") else float(text)
        if kind is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {text!r}") from None


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def parse_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigurationError(f"{key}: unknown configuration key (line {lineno})")
        values[key] = _convert(key, value)
    return values


def parse_config(path=None, overrides=None):
    """Build a validated config from an optional file and a dict of overrides.

    Override values may be typed or strings; overrides win over the file.
    """
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_text(fh.read()))
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigurationError(f"{key}: unknown configuration key")
        values[key] = _convert(key, value) if isinstance(value, str) else value
    return ExperimentConfig(**values)


def format_config(cfg):
    """Render ``cfg`` so that :func:`parse_text` reproduces it exactly."""
    return "".join(f"{f} = {_format(getattr(cfg, f))}\n" for f in _FIELDS)
