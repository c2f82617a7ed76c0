"""Monte Carlo random walk of 1-D diffusing molecules.

Particles start at the origin and take Gaussian increments
``drift * dt + sqrt(2 D dt) * xi``. For constant coefficients these
increments are exact, so the time step only controls snapshot granularity.

Reproducibility: particles are split into fixed blocks of
``BLOCK_SIZE``; block ``k`` draws from a PCG64 stream seeded with
``SeedSequence(rng_seed, spawn_key=(k,))``. The stream for a particle depends
only on the seed and its index, never on how blocks are scheduled, so
results are identical for any worker count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import jsonschema
import numpy as np

from .channel_models import DiffusionParams, VerticalChannelParams, diffusion_response, vertical_response
from .traces import RAW, TimeSeries

__all__ = [
    "SimConfig",
    "ConcentrationProfile",
    "SimConfigError",
    "simulate",
    "simulate_positions",
    "synthetic_trace",
    "l1_distance_to_analytic",
    "load_sim_config",
    "profile_to_trace",
    "density_at_distance",
    "SIM_CONFIG_SCHEMA",
]

BLOCK_SIZE = 1 << 16


class SimConfigError(ValueError):
    """Invalid simulation configuration; ``path`` names the offending field."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class SimConfig:
    particle_count: int
    time_step: float
    duration: float
    diffusion_coefficient: float
    drift: float = 0.0
    rng_seed: int = 0
    measurement_distance: float = 0.0
    bin_width: float = 0.05
    snapshot_times: tuple = field(default=())
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.particle_count, bool) or not isinstance(self.particle_count, (int, np.integer)):
            raise SimConfigError("must be an integer", "$.particle_count")
        if self.particle_count < 1:
            raise SimConfigError("must be >= 1", "$.particle_count")
        for name in ("time_step", "duration", "diffusion_coefficient", "bin_width"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise SimConfigError("must be a finite number > 0", f"$.{name}")
        if not math.isfinite(self.drift):
            raise SimConfigError("must be finite", "$.drift")
        if self.duration < self.time_step:
            raise SimConfigError("must be >= time_step", "$.duration")
        if not 0 <= self.rng_seed < 2**64:
            raise SimConfigError("must be a 64-bit unsigned integer", "$.rng_seed")
        if self.workers < 1:
            raise SimConfigError("must be >= 1", "$.workers")
        snaps = tuple(float(s) for s in self.snapshot_times) or (float(self.duration),)
        for i, s in enumerate(snaps):
            if not 0 < s <= self.duration * (1 + 1e-12):
                raise SimConfigError("snapshot must lie in (0, duration]", f"$.snapshot_times[{i}]")
            k = round(s / self.time_step)
            if abs(k * self.time_step - s) > 1e-9 * max(s, 1.0):
                raise SimConfigError("snapshot is not a whole number of time steps", f"$.snapshot_times[{i}]")
        if any(b <= a for a, b in zip(snaps, snaps[1:])):
            raise SimConfigError("snapshots must be strictly increasing", "$.snapshot_times")
        object.__setattr__(self, "snapshot_times", snaps)

    @property
    def snapshot_steps(self):
        return tuple(int(round(s / self.time_step)) for s in self.snapshot_times)

    def to_dict(self):
        out = asdict(self)
        out["snapshot_times"] = list(self.snapshot_times)
        return out


@dataclass(frozen=True, eq=False)
class ConcentrationProfile:
    """Histogram of particle positions at one snapshot time.

    ``concentration`` is ``count / (particle_count * bin_width)``, an estimate
    of the 1-D density; ``out_of_range`` counts particles beyond the bins.
    """

    time: float
    bin_centers: np.ndarray
    counts: np.ndarray
    particle_count: int
    bin_width: float
    out_of_range: int = 0
    mean_position: float = 0.0
    variance: float = 0.0

    @property
    def concentration(self):
        return self.counts / (self.particle_count * self.bin_width)

    def __eq__(self, other):
        if not isinstance(other, ConcentrationProfile):
            return NotImplemented
        return (
            self.time == other.time
            and np.array_equal(self.bin_centers, other.bin_centers)
            and np.array_equal(self.counts, other.counts)
            and self.out_of_range == other.out_of_range
        )


def _block_positions(cfg: SimConfig, block: int, n: int):
    ss = np.random.SeedSequence(cfg.rng_seed, spawn_key=(block,))
    rng = np.random.Generator(np.random.PCG64(ss))
    sigma = math.sqrt(2.0 * cfg.diffusion_coefficient * cfg.time_step)
    shift = cfg.drift * cfg.time_step
    x = np.zeros(n)
    out = []
    step = 0
    for target in cfg.snapshot_steps:
        while step < target:
            x += shift + sigma * rng.standard_normal(n)
            step += 1
        out.append(x.copy())
    return out


def simulate_positions(cfg: SimConfig):
    """Particle positions at every snapshot, as a list of arrays."""
    n_blocks = -(-cfg.particle_count // BLOCK_SIZE)
    sizes = [min(BLOCK_SIZE, cfg.particle_count - k * BLOCK_SIZE) for k in range(n_blocks)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            blocks = list(pool.map(lambda k: _block_positions(cfg, k, sizes[k]), range(n_blocks)))
    else:
        blocks = [_block_positions(cfg, k, sizes[k]) for k in range(n_blocks)]
    return [np.concatenate([b[i] for b in blocks]) for i in range(len(cfg.snapshot_times))]


def _histogram(cfg: SimConfig, t, x):
    w = cfg.bin_width
    spread = abs(cfg.drift) * t + 6.0 * math.sqrt(2.0 * cfg.diffusion_coefficient * t)
    k = max(int(math.ceil(spread / w)), int(math.ceil(abs(cfg.measurement_distance) / w)), 1)
    # bins centred on multiples of the bin width, so the origin is a bin centre
    edges = (np.arange(-k, k + 2) - 0.5) * w
    counts, _ = np.histogram(x, bins=edges)
    inside = int(counts.sum())
    return ConcentrationProfile(
        time=float(t),
        bin_centers=np.arange(-k, k + 1) * w,
        counts=counts,
        particle_count=cfg.particle_count,
        bin_width=w,
        out_of_range=cfg.particle_count - inside,
        mean_position=float(np.mean(x)),
        variance=float(np.var(x)),
    )


def simulate(cfg: SimConfig):
    """Run the random walk and histogram positions at each snapshot time."""
    positions = simulate_positions(cfg)
    return [_histogram(cfg, t, x) for t, x in zip(cfg.snapshot_times, positions)]


def l1_distance_to_analytic(profile: ConcentrationProfile, diffusion_coefficient, drift=0.0):
    """L1 distance between the histogram density and the 1-D pulse response.

    Each bin compares against the analytic density at its centre, shifted by
    the drift; mass outside the histogram counts toward the distance.
    """
    centers = profile.bin_centers - drift * profile.time
    analytic = np.array(
        [
            diffusion_response(DiffusionParams(1.0, diffusion_coefficient, 1, abs(c)), profile.time)
            for c in centers
        ]
    )
    inside = float(np.sum(np.abs(profile.concentration - analytic)) * profile.bin_width)
    return inside + profile.out_of_range / profile.particle_count


def profile_to_trace(profile: ConcentrationProfile) -> TimeSeries:
    """Histogram as a trace-format series of ``(bin_center, concentration)``."""
    return TimeSeries(
        profile.bin_centers,
        profile.concentration,
        trial_id=f"snapshot_t{profile.time:.9g}",
        units="concentration",
        extra={
            "snapshot_time": f"{profile.time:.9g}",
            "particle_count": str(profile.particle_count),
            "out_of_range": str(profile.out_of_range),
        },
    )


def density_at_distance(profiles, distance) -> TimeSeries:
    """Histogram density in the bin holding ``distance``, one sample per snapshot.

    This is the empirical pulse response seen by a receiver at ``distance``.
    """
    times, values = [], []
    for prof in profiles:
        i = int(np.argmin(np.abs(prof.bin_centers - distance)))
        if abs(prof.bin_centers[i] - distance) > 0.5 * prof.bin_width:
            raise ValueError(f"distance {distance} lies outside the histogram at t={prof.time}")
        times.append(prof.time)
        values.append(prof.concentration[i])
    return TimeSeries(np.array(times), np.array(values), distance_cm=float(distance), units="concentration")


def synthetic_trace(params: VerticalChannelParams, grid, noise_sigma=0.0, rng_seed=0, trial_id=None):
    """Vertical-model samples on ``grid`` plus seeded Gaussian noise."""
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("synthetic trace grid is empty")
    if np.any(grid <= 0):
        raise ValueError("synthetic trace grid times must be > 0")
    if not noise_sigma >= 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    values = vertical_response(params, grid)
    if noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        values = values + rng.normal(0.0, noise_sigma, grid.size)
    return TimeSeries(
        grid,
        values,
        trial_id=trial_id,
        distance_cm=params.distance,
        units=RAW,
    )


SIM_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "particle_count": {"type": "integer", "minimum": 1},
        "time_step": {"type": "number", "exclusiveMinimum": 0},
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "diffusion_coefficient": {"type": "number", "exclusiveMinimum": 0},
        "drift": {"type": "number"},
        "rng_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "measurement_distance": {"type": "number", "minimum": 0},
        "bin_width": {"type": "number", "exclusiveMinimum": 0},
        "snapshot_times": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "workers": {"type": "integer", "minimum": 1},
    },
    "required": ["particle_count", "time_step", "duration", "diffusion_coefficient"],
    "additionalProperties": False,
}


def _json_path(error):
    path = "$"
    for part in error.absolute_path:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


def load_sim_config(doc) -> SimConfig:
    """Build a :class:`SimConfig` from a JSON string or already-parsed dict."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SimConfigError(f"invalid JSON: {exc}") from exc
    validator = jsonschema.Draft7Validator(SIM_CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SimConfigError(err.message, _json_path(err))
    doc = dict(doc)
    if "snapshot_times" in doc:
        doc["snapshot_times"] = tuple(doc["snapshot_times"])
    return SimConfig(**doc)

