"""Plain-text ``[section] key = value`` run configuration."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from ..aerodynamics import AeroCoefficients
from ..eskf import FilterConfig, ProcessNoise
from ..sensor_sim import NoiseConfig, TrajectorySpec
from ..velocity_net.training import TrainConfig
from ..velocity_net.windows import DEFAULT_PRIOR_COUNT


@dataclass(frozen=True)
class WindowConfig:
    length: int = 200
    mode: str = "online"
    stride: int = 1
    use_rotor: bool = True
    rotor_channels: str = "mean"
    prior_count: float = DEFAULT_PRIOR_COUNT

    def __post_init__(self):
        if self.length < 1 or self.stride < 1:
            raise ValueError("window length and stride must be positive")
        if self.mode not in ("online", "offline"):
            raise ValueError(f"unknown window mode {self.mode!r}")


@dataclass
class RunConfig:
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    aero: AeroCoefficients = field(default_factory=AeroCoefficients)
    train: TrainConfig = field(default_factory=TrainConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    sim: dict = field(default_factory=lambda: {"mode": "model", "coriolis": False})
    truth_variance: float = 1e-4


def _bool(raw) -> bool:
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _window(section) -> WindowConfig:
    kw = {}
    for key, raw in section.items():
        if key in ("length", "stride"):
            kw[key] = int(raw)
        elif key == "use_rotor":
            kw[key] = _bool(raw)
        elif key == "prior_count":
            kw[key] = float(raw)
        elif key in ("mode", "rotor_channels"):
            kw[key] = raw
        else:
            raise ValueError(f"unknown window key {key!r}")
    return WindowConfig(**kw)


def _filter(section) -> tuple[FilterConfig, float]:
    noise_keys = {f.name for f in fields(ProcessNoise)}
    kw, noise_kw, truth_var = {}, {}, 1e-4
    for key, raw in section.items():
        if key.startswith("q_") and key[2:] in noise_keys:
            noise_kw[key[2:]] = float(raw)
        elif key == "init":
            kw[key] = raw
        elif key == "gate":
            kw[key] = None if raw.lower() in ("none", "off", "") else float(raw)
        elif key == "truth_variance":
            truth_var = float(raw)
        elif key in FilterConfig.__dataclass_fields__ and key != "process_noise":
            kw[key] = float(raw)
        else:
            raise ValueError(f"unknown filter key {key!r}")
    return FilterConfig(process_noise=ProcessNoise(**noise_kw), **kw), truth_var


def parse_config(text: str) -> RunConfig:
    """Build a :class:`RunConfig` from ini text; absent sections keep defaults.

    Sections: ``[trajectory] [noise] [aero] [train] [window] [filter] [sim]``.
    Process-noise densities go in ``[filter]`` as ``q_acc``, ``q_gyro``,
    ``q_acc_bias`` and ``q_gyro_bias``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";",))
    parser.read_string(text)
    known = {"trajectory", "noise", "aero", "train", "window", "filter", "sim"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    cfg = RunConfig()
    if "trajectory" in parser:
        cfg.trajectory = TrajectorySpec.from_mapping(dict(parser["trajectory"]))
    if "noise" in parser:
        cfg.noise = NoiseConfig.from_mapping(dict(parser["noise"]))
    if "aero" in parser:
        cfg.aero = AeroCoefficients.from_mapping(dict(parser["aero"]))
    if "train" in parser:
        cfg.train = TrainConfig.from_mapping(dict(parser["train"]))
    if "window" in parser:
        cfg.window = _window(parser["window"])
    if "filter" in parser:
        cfg.filter, cfg.truth_variance = _filter(parser["filter"])
    if "sim" in parser:
        sim = dict(parser["sim"])
        extra = set(sim) - {"mode", "coriolis"}
        if extra:
            raise ValueError(f"unknown sim keys: {sorted(extra)}")
        cfg.sim = {"mode": sim.get("mode", "model"), "coriolis": _bool(sim.get("coriolis", "0"))}
    return cfg


def load_config(*paths) -> RunConfig:
    """Concatenate the given ini files (later sections override earlier keys) and parse."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";",))
    for path in paths:
        if path is None:
            continue
        with open(path) as fh:
            parser.read_string(fh.read(), source=str(path))
    text = []
    for name in parser.sections():
        text.append(f"[{name}]")
        text.extend(f"{k} = {v}" for k, v in parser[name].items())
    return parse_config("\n".join(text))
