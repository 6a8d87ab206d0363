"""Loss-rate to FEC-redundancy lookup tables, built offline by QoE sweep."""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from enhabr.errors import ConfigError, ValidationError
from enhabr.traces import with_loss

log = logging.getLogger(__name__)

DEFAULT_LOSS_GRID = tuple(round(0.005 * i, 3) for i in range(21))
DEFAULT_RATIO_GRID = tuple(round(0.05 * i, 2) for i in range(11))


@dataclass(frozen=True)
class FecPlan:
    loss_grid: tuple
    ratio_grid: tuple
    table: tuple  # redundancy ratio per loss_grid point
    scheme: str = "enhancement_aware"

    def __post_init__(self):
        for name in ("loss_grid", "ratio_grid", "table"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not self.loss_grid or not self.ratio_grid:
            raise ValidationError("grids must be non-empty")
        for name in ("loss_grid", "ratio_grid"):
            grid = getattr(self, name)
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValidationError(f"{name} must be strictly ascending")
        if len(self.table) != len(self.loss_grid):
            raise ValidationError("table must define a ratio for every loss grid point")
        missing = [v for v in self.table if v not in self.ratio_grid]
        if missing:
            raise ValidationError(f"table values {missing} are not on the ratio grid")

    @classmethod
    def constant(cls, ratio, scheme="fixed"):
        return cls((0.0,), (float(ratio),), (float(ratio),), scheme)

    def as_mapping(self):
        return dict(zip(self.loss_grid, self.table))

    def to_dict(self):
        return {
            "scheme": self.scheme,
            "loss_grid": list(self.loss_grid),
            "ratio_grid": list(self.ratio_grid),
            "table": {repr(k): v for k, v in zip(self.loss_grid, self.table)},
        }

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - {"scheme", "loss_grid", "ratio_grid", "table"}
        if unknown:
            raise ConfigError(f"unknown FEC plan keys: {sorted(unknown)}")
        loss_grid = [float(v) for v in doc["loss_grid"]]
        table = doc["table"]
        if isinstance(table, dict):
            by_loss = {float(k): float(v) for k, v in table.items()}
            if set(by_loss) != set(loss_grid):
                raise ValidationError("table keys must match loss_grid")
            table = [by_loss[p] for p in loss_grid]
        return cls(loss_grid, doc["ratio_grid"], table, doc.get("scheme", "enhancement_aware"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def lookup(plan, predicted_loss):
    """Ratio at the loss grid point nearest ``predicted_loss``.

    Ties go to the higher grid point; losses past either end of the grid
    clamp to the end entries.
    """
    if not 0.0 <= predicted_loss <= 1.0:
        raise ValidationError("predicted_loss must lie in [0, 1]")
    grid = plan.loss_grid
    hi = int(np.searchsorted(grid, predicted_loss, side="left"))
    if hi == 0:
        return plan.table[0]
    if hi == len(grid):
        return plan.table[-1]
    lo = hi - 1
    # Grid points such as 0.015 are not exact in binary; a near-tie is a tie.
    if (grid[hi] - predicted_loss) - (predicted_loss - grid[lo]) > 1e-12:
        return plan.table[lo]
    return plan.table[hi]


def _cell_qoe(args):
    from enhabr.simulator import run_session

    trace, config = args
    return run_session(trace, config).session_qoe


def build_table(training_traces, config, loss_grid=DEFAULT_LOSS_GRID,
                ratio_grid=DEFAULT_RATIO_GRID, seed=None, jobs=1, scheme=None):
    """Sweep (loss, ratio) cells over the training traces and keep the
    QoE-maximising ratio per loss point (ties go to the lower ratio).

    ``config`` is the :class:`~enhabr.simulator.SimConfig` of the scheme the
    table is for; its policy and enhancement switches are used as-is with
    FEC forced on at a constant ratio per cell. All ratios at one
    (loss, trace) point share a seed, so ratio comparisons see identical
    loss draws.
    """
    traces = list(training_traces)
    if not traces:
        raise ValidationError("need at least one training trace")
    loss_grid = tuple(float(v) for v in loss_grid)
    ratio_grid = tuple(float(v) for v in ratio_grid)
    if not loss_grid or not ratio_grid:
        raise ValidationError("grids must be non-empty")
    master = config.seed if seed is None else seed
    seeds = np.random.SeedSequence(master).spawn(len(loss_grid) * len(traces))

    cells = []
    for li, p in enumerate(loss_grid):
        for ti, trace in enumerate(traces):
            cell_seed = int(seeds[li * len(traces) + ti].generate_state(1)[0])
            lossy = with_loss(trace, p)
            for ratio in ratio_grid:
                cfg = replace(config, enable_fec=True, fec_plan=FecPlan.constant(ratio),
                              seed=cell_seed)
                cells.append((lossy, cfg))

    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            qoes = list(pool.map(_cell_qoe, cells, chunksize=4))
    else:
        qoes = [_cell_qoe(c) for c in cells]

    q = np.array(qoes).reshape(len(loss_grid), len(traces), len(ratio_grid)).mean(axis=1)
    table = []
    for li, p in enumerate(loss_grid):
        best = int(np.argmax(q[li]))  # first maximum = lowest ratio on ties
        table.append(ratio_grid[best])
        log.info("loss %.3f -> ratio %.2f (mean QoE %.1f)", p, ratio_grid[best], q[li, best])
    return FecPlan(loss_grid, ratio_grid, table, scheme or config.policy.kind)
