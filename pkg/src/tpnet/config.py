"""Plain-text key=value experiment configs with per-stage schemas.

Unknown keys are rejected; every run writes back the fully resolved config
next to its artifacts.
"""

from dataclasses import dataclass


class ConfigError(ValueError):
    pass


STAGES = ("preprocess", "train-sc", "train-psd", "train-local", "train-tpn",
          "analyze", "gen", "describe", "tpn-responses")

# stage -> {key: default-or-None (None means required)}
SCHEMAS: dict[str, dict] = {
    "gen": {
        "kind": "moving_gaussian",  # moving_gaussian | shifting_window | edge | edge_scene
        "frames": "20",
        "size": "10",
        "width": "1.5",
        "input": "",
        "window": "100",
        "orientation": "0.0",
        "position": "0.0",
        "softness": "1.0",
        "scene_size": "300",
        "n_edges": "120",
    },
    "preprocess": {
        "input": None,
        "gaussian_width": "11.3",
        "cutoff": "",
        "cutoff_mode": "max",
    },
    "train-sc": {
        "input": None,
        "patch_size": "8",
        "n_code": "64",
        "alpha": "0.5",
        "steps": "500",
        "batch": "50",
        "lr": "0.05",
        "max_iters": "100",
    },
    "train-psd": {
        "input": None,
        "patch_size": "8",
        "n_code": "64",
        "alpha": "0.5",
        "steps": "500",
        "batch": "50",
        "lr": "0.05",
        "max_iters": "100",
        "flavor": "double_tanh",
    },
    "train-local": {
        "input": None,
        "neighborhood": "20",
        "density": "1",
        "periodicity": "20",
        "alpha": "0.5",
        "sparsity": "l1",  # l1 | group
        "sigma": "1.5",
        "group_alpha": "0.5",
        "epochs": "1",
        "lr": "0.05",
        "code_iters": "3",
        "infer_iters": "30",
        "flavor": "double_tanh",
    },
    "train-tpn": {
        "input": None,
        "n_loc": "16",
        "n_inv": "16",
        "n_tau": "3",
        "alpha": "0.02",
        "steps": "500",
        "lr": "0.02",
    },
    "analyze": {
        "model": None,
        "r2_threshold": "0.5",
        "permutations": "1000",
    },
    "describe": {
        "model": None,
    },
    "tpn-responses": {
        "model": None,
        "size": "10",
        "width": "1.5",
        "n_tau_probe": "",
    },
}


@dataclass
class ExperimentConfig:
    stage: str
    seed: int
    params: dict[str, str]

    def get(self, key: str) -> str:
        return self.params[key]

    def get_float(self, key: str) -> float:
        return float(self.params[key])

    def get_int(self, key: str) -> int:
        return int(self.params[key])

    def resolved_text(self) -> str:
        lines = [f"stage={self.stage}", f"seed={self.seed}"]
        lines += [f"{k}={v}" for k, v in sorted(self.params.items())]
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(raw: dict[str, str], seed_override: int | None = None) -> ExperimentConfig:
    raw = dict(raw)
    stage = raw.pop("stage", None)
    if stage is None:
        raise ConfigError("config must set stage=...")
    if stage not in SCHEMAS:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {sorted(SCHEMAS)}")
    seed = int(raw.pop("seed", "0"))
    if seed_override is not None:
        seed = seed_override
    schema = SCHEMAS[stage]
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys for stage {stage}: {sorted(unknown)}")
    params = {}
    for key, default in schema.items():
        if key in raw:
            params[key] = raw[key]
        elif default is None:
            raise ConfigError(f"stage {stage} requires key {key!r}")
        else:
            params[key] = default
    return ExperimentConfig(stage=stage, seed=seed, params=params)


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    with open(path) as f:
        return resolve_config(parse_config_text(f.read()), seed_override)
