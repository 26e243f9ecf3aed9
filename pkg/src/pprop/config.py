"""Experiment configuration, fixed seed lists and the config hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

__all__ = [
    "VALIDATION_SPLIT_SEEDS",
    "TEST_SPLIT_SEEDS",
    "INIT_SEEDS",
    "MODEL_TAGS",
    "ExperimentConfig",
]

# Drawn once (numpy default_rng(20190227)) and frozen. Validation and test
# splits never share a seed.
VALIDATION_SPLIT_SEEDS = (
    2085578786, 1099306263, 566775208, 34240312, 1842562361,
    1941710351, 326542531, 20066421, 1291502486, 800882955,
    543364115, 252082615, 1597145100, 979468776, 973288043,
    58866142, 1050459275, 1815589185, 202601032, 2109517248,
)
TEST_SPLIT_SEEDS = (
    70481156, 1532159473, 2021220674, 1931282902, 317462273,
    820871181, 1860802149, 642199869, 1065443977, 925021417,
    824859750, 123903782, 674381799, 1664510079, 1401080725,
    112256564, 1909091749, 1993911086, 292846905, 956152107,
)
INIT_SEEDS = (125935834, 778398668, 731251592, 2050114959, 1427527484)

MODEL_TAGS = ("appnp", "ppnp", "gcn-vanilla", "gcn-optimized", "mlp")
SWEEP_AXES = ("k", "alpha", "ntrain")
PROPAGATION_MODES = ("never", "training", "inference", "both")

# fields that never influence results
_UNHASHED = frozenset({"out", "workers"})


@dataclass
class ExperimentConfig:
    """Everything a run matrix depends on.

    Defaults are the APPNP settings for citation graphs. ``alpha = 0.2`` is
    the recommended setting for co-authorship graphs. ``visible_size`` and
    ``stop_size`` of ``None`` mean automatic sizing (see
    :func:`pprop.experiment.resolve_split_sizes`).
    """

    model: str = "appnp"
    dataset: str | None = None
    alpha: float = 0.1
    K: int = 10
    hidden: int = 64
    n_layers: int = 2
    dropout: float = 0.5
    adj_dropout: float = 0.5
    l2: float = 0.005
    lr: float = 0.01
    bias: bool = True
    patience: int = 100
    max_epochs: int = 10_000
    train_per_class: int = 20
    stop_size: int | None = None
    visible_size: int | None = None
    visible_seed: int = 0
    mode: str = "validation"
    propagation: str = "both"
    validation_seeds: tuple = VALIDATION_SPLIT_SEEDS
    test_seeds: tuple = TEST_SPLIT_SEEDS
    init_seeds: tuple = INIT_SEEDS
    n_split_seeds: int = 20
    n_init_seeds: int = 5
    sweep_axis: str | None = None
    sweep_values: tuple = ()
    workers: int | None = None
    out: str | None = None

    def __post_init__(self):
        for name in ("validation_seeds", "test_seeds", "init_seeds", "sweep_values"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        if self.model not in MODEL_TAGS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODEL_TAGS}")
        if self.mode not in ("validation", "test"):
            raise ValueError("mode must be 'validation' or 'test'")
        if self.propagation not in PROPAGATION_MODES:
            raise ValueError(f"propagation must be one of {PROPAGATION_MODES}")
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
        if set(self.validation_seeds) & set(self.test_seeds):
            raise ValueError("validation and test split seeds must be disjoint")
        if self.n_split_seeds > len(self.split_seed_pool):
            raise ValueError("n_split_seeds exceeds the configured seed list")
        if self.n_init_seeds > len(self.init_seeds):
            raise ValueError("n_init_seeds exceeds the configured seed list")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def split_seed_pool(self) -> tuple:
        return self.validation_seeds if self.mode == "validation" else self.test_seeds

    @property
    def split_seeds(self) -> tuple:
        return self.split_seed_pool[: self.n_split_seeds]

    @property
    def run_init_seeds(self) -> tuple:
        return self.init_seeds[: self.n_init_seeds]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
