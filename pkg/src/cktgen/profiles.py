"""Dataset profiles: vocabulary, category counts and position conventions.

A profile carries everything that depends on the benchmark a model is trained
on. Two built-in profiles mirror the Ckt-Bench-101 and Ckt-Bench-301 category
tables; custom ones are loaded from a JSON vocabulary file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

N_NODE_TYPES = 26

# Subgraph vocabulary. Ids 0 and 1 are the circuit terminals.
DEFAULT_TYPE_NAMES = (
    "INPUT", "OUTPUT",
    "R", "C", "+gm", "-gm",
    "R-C_ser", "R-C_par",
    "+gm-R_par", "-gm-R_par", "+gm-C_par", "-gm-C_par",
    "+gm-R_ser", "-gm-R_ser", "+gm-C_ser", "-gm-C_ser",
    "+gm-R-C_par", "-gm-R-C_par", "+gm-R-C_ser", "-gm-R-C_ser",
    "+gm-RC_ser_par", "-gm-RC_ser_par", "+gm-RC_par_ser", "-gm-RC_par_ser",
    "R-R_ser", "C-C_par",
)

# Number of live device-parameter slots per node type (terminals have none).
DEFAULT_PARAM_COUNTS = (
    0, 0,
    1, 1, 1, 1,
    2, 2,
    2, 2, 2, 2,
    2, 2, 2, 2,
    3, 3, 3, 3,
    3, 3, 3, 3,
    2, 2,
)


@dataclass(frozen=True)
class DatasetProfile:
    """Benchmark-specific constants shared by data loading, models and metrics.

    ``main_path_positions`` lists the position ids that place a node on the
    feed-forward input-to-output path; every other position is off-path.
    When ``gnd_trigger_position`` occurs in a circuit, the nodes at
    ``gnd_positions`` are tied to a virtual ground in exported schematics.
    """

    name: str
    n_gain: int
    n_bw: int
    n_pm: int
    type_names: tuple = DEFAULT_TYPE_NAMES
    input_type: int = 0
    output_type: int = 1
    n_max: int = 10
    param_width: int = 3
    param_counts: tuple = DEFAULT_PARAM_COUNTS
    main_path_positions: tuple = (0, 1, 2, 3, 4)
    gnd_trigger_position: int | None = 6
    gnd_positions: tuple = (5, 6, 7)
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.type_names) != N_NODE_TYPES:
            raise ValueError(f"vocabulary must have {N_NODE_TYPES} types, got {len(self.type_names)}")
        if len(self.param_counts) != N_NODE_TYPES:
            raise ValueError("param_counts must list one entry per node type")
        if self.input_type == self.output_type:
            raise ValueError("INPUT and OUTPUT type ids must differ")
        for t in (self.input_type, self.output_type):
            if not 0 <= t < N_NODE_TYPES:
                raise ValueError(f"terminal type id {t} out of range")
        if any(not 0 <= c <= self.param_width for c in self.param_counts):
            raise ValueError("param_counts entries must lie in [0, param_width]")
        if min(self.n_gain, self.n_bw, self.n_pm) < 1:
            raise ValueError("category counts must be positive")

    @property
    def categories(self):
        return (self.n_gain, self.n_bw, self.n_pm)

    @property
    def n_types(self):
        return N_NODE_TYPES

    @property
    def none_type(self):
        """Padding id used by decoders; one past the real vocabulary."""
        return N_NODE_TYPES

    @property
    def n_edges_max(self):
        return self.n_max * (self.n_max - 1) // 2

    def param_mask(self, node_type):
        if not 0 <= node_type < N_NODE_TYPES:
            return (False,) * self.param_width
        k = self.param_counts[node_type]
        return (True,) * k + (False,) * (self.param_width - k)

    def is_main_path(self, position):
        return position in self.main_path_positions

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("type_names", "param_counts", "main_path_positions", "gnd_positions"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


PROFILE_101 = DatasetProfile(name="101", n_gain=4, n_bw=32, n_pm=6)
PROFILE_301 = DatasetProfile(name="301", n_gain=4, n_bw=19, n_pm=5)

PROFILES = {"101": PROFILE_101, "301": PROFILE_301}


def get_profile(name_or_path):
    """Resolve a built-in profile name or a path to a vocabulary JSON file."""
    key = str(name_or_path)
    if key in PROFILES:
        return PROFILES[key]
    path = Path(key)
    if path.exists():
        return DatasetProfile.load(path)
    raise ValueError(f"unknown profile {name_or_path!r}")
