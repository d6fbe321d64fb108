"""Run configuration: seed, backend bindings, hyperparameters.

Config files are YAML. The config hash is computed over canonical JSON
(sorted keys), so it does not depend on key order in the file.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .backends import DEFAULT_BINDINGS, ROLES, make_backend, stable_seed
from .bos import TEMPLATE_VERSION
from .errors import ValidationError

DEFAULT_HYPER = {
    "beta": 0.1,        # DPO temperature
    "lambda": 0.1,      # diversity weight in the ranker loss
    "k": 3,             # frames per summary bundle
    "m": 16,            # keyframe budget per video
    "l": 250,           # summary length budget in tokens
    "fps": 1.0,         # pre-selection sampling rate
    "candidates": 4,    # summaries sampled per prompt
    "stages": 3,        # curriculum stages
    "temperature": 0.7,
    "fact_gate": None,  # minimum fact score of the chosen response, or None
}

DEFAULT_DPO = {"lr": 0.5, "epochs": 1, "batch_size": 4, "vocab_size": 100, "order": 1}

DEFAULT_RANKER = {"width": 512, "layers": 2, "heads": 4, "ffn": 2048, "n_max": 256,
                  "epochs": 30, "lr": 3e-4, "batch_size": 8, "target_loss": 0.01}


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in base:
            raise ValidationError(f"unknown config key {where}{key}")
        out[key] = value
    return out


@dataclass
class RunConfig:
    seed: int = 0
    backends: dict = field(default_factory=lambda: dict(DEFAULT_BINDINGS))
    hyper: dict = field(default_factory=lambda: dict(DEFAULT_HYPER))
    dpo: dict = field(default_factory=lambda: dict(DEFAULT_DPO))
    ranker: dict = field(default_factory=lambda: dict(DEFAULT_RANKER))
    template_version: str = TEMPLATE_VERSION

    def __post_init__(self):
        missing = [r for r in ROLES if not self.backends.get(r)]
        if missing:
            raise ValidationError(f"unbound backend role(s): {', '.join(missing)}")
        unknown = sorted(set(self.backends) - set(ROLES))
        if unknown:
            raise ValidationError(f"unknown backend role(s): {', '.join(unknown)}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ValidationError("seed must be an integer")

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        extra = sorted(set(d) - {"seed", "backends", "hyper", "dpo", "ranker", "template_version"})
        if extra:
            raise ValidationError(f"unknown config section(s): {', '.join(extra)}")
        return cls(
            seed=d.get("seed", 0),
            backends=_merge(DEFAULT_BINDINGS, d.get("backends"), "backends."),
            hyper=_merge(DEFAULT_HYPER, d.get("hyper"), "hyper."),
            dpo=_merge(DEFAULT_DPO, d.get("dpo"), "dpo."),
            ranker=_merge(DEFAULT_RANKER, d.get("ranker"), "ranker."),
            template_version=d.get("template_version", TEMPLATE_VERSION),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ValidationError(f"cannot parse config {path}: {e}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "backends": dict(self.backends), "hyper": dict(self.hyper),
                "dpo": dict(self.dpo), "ranker": dict(self.ranker),
                "template_version": self.template_version}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def with_overrides(self, seed=None, backends: dict | None = None, hyper: dict | None = None) -> "RunConfig":
        d = self.to_dict()
        if seed is not None:
            d["seed"] = seed
        d["backends"].update(backends or {})
        d["hyper"].update({k: v for k, v in (hyper or {}).items() if v is not None})
        return RunConfig.from_dict(d)

    def subset_hash(self, keys: list[str], extra=None) -> str:
        """Hash of the dotted ``keys`` of this config plus ``extra``."""
        flat = self.to_dict()
        picked = {}
        for key in keys:
            node = flat
            for part in key.split("."):
                node = node[part]
            picked[key] = node
        return digest({"config": picked, "extra": extra})

    @property
    def hash(self) -> str:
        return digest(self.to_dict())

    def backend(self, role: str):
        return make_backend(role, self.backends[role])

    def derived_seed(self, *parts) -> int:
        return stable_seed(self.seed, *parts) % (2**31)


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def parse_backend_overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        role, sep, binding = item.partition("=")
        if not sep or not binding:
            raise ValidationError(f"--backend expects <role>=<binding>, got {item!r}")
        if role not in ROLES:
            raise ValidationError(f"unknown backend role {role!r}")
        out[role] = binding
    return out
