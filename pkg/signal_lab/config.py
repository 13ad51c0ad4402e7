"""
This file holds the configuration settings and constants used for the signal
malfunction laboratory.

In this module:
- Reference constants (vehicle model, signal timing, training schedule).
- Controller, ablation and feature-mode tables.
- Default dataset settings.
- Functions to safely access the tables.
- Settings classes (simulation, training, experiment) and key=value loading.
"""

import hashlib
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Any, Optional, Tuple, List

from signal_lab.utils.io_utils import parse_key_value_file


#===============================================================================
#                               CONSTANTS
#===============================================================================
# Vehicle model.
MAX_SPEED_KMH = 40.0
VEHICLE_LENGTH_M = 5.0
MIN_GAP_M = 2.5
ACCEL_MS2 = 2.0
DECEL_MS2 = 4.5
STARTUP_LOSS_S = 2.0        # Extra travel time for a vehicle leaving a queue

# Signal timing and intersection behaviour.
TICK_S = 1.0
DECISION_INTERVAL_S = 10.0
DISCHARGE_RATE = 0.5        # vehicles per lane per green tick
FOE_IGNORE_PROB = 0.05
COLLISION_BLOCK_S = 30.0
MALFUNCTION_CAPACITY_FACTOR = 0.5
LANES_PER_DIRECTION = 3
NUM_PHASES = 8
MALFUNCTION_OFF = -1        # The phase value of a blacked-out signal

# Learning.
EPISODES = 200
UPDATES_PER_EPISODE = 10
GAMMA = 0.95
LEARNING_RATE = 0.001
RMSPROP_RHO = 0.9
RMSPROP_EPSILON = 1e-8
REPLAY_CAPACITY = 5000
EPSILON_START = 1.0
EPSILON_END = 0.05
EPSILON_DECAY_EPISODES = 100
HIDDEN_LAYERS = (20, 20)
DIFFUSION_STEPS = 10
RESTART_ALPHA = 0.15        # Only used by the influence analysis
SIGMA_MIN_SPREAD = 0.1      # Below this std/mean ratio the kernel width falls back to the mean

# Datasets.
HOUR_S = 3600.0
DATASET_DURATION_S = 7200.0
GRID_ROWS = 4
GRID_COLS = 4
GRID_BLOCK_M = 300.0
ARRIVAL_RATE_PER_300S = 1200.0
SWEEP_REPEATS = 5

# Baselines.
SOTL_THETA = 3
SOTL_MIN_GREEN_S = 10.0
FIXED_SPLIT_S = 20.0


#===============================================================================
#                         CONTROLLER CONFIGURATIONS
#===============================================================================
CONTROLLERS = {
    'fixedtime': {
        'name': 'FixedTime',
        'learning': False,
    },
    'sotl': {
        'name': 'Self-Organizing Traffic Lights',
        'learning': False,
    },
    'maxpressure': {
        'name': 'MaxPressure',
        'learning': False,
    },
    'idqn': {
        'name': 'Independent Deep Q-Network',
        'learning': True,
    },
    'mallight': {
        'name': 'Influence-aware coordinated DQN',
        'learning': True,
    },
}

ABLATIONS = {
    'S': {'name': 'fixed-weight state aggregation (untrained filters)'},
    'R': {'name': 'no reward aggregation'},
    'M': {'name': 'malfunction mask replaced by all ones'},
}

FEATURE_MODES = {
    'full': {'name': 'phase one-hot + 12 lane counts', 'size': NUM_PHASES + 12},
    'lanes-only': {'name': '12 lane counts', 'size': 12},
}

OD_POLICIES = ('all', 'boundary')


#===============================================================================
#                         CONFIG HELPER FUNCTIONS
#===============================================================================
def get_controller_config(name: str) -> Dict[str, Any]:
    """
    Gets a controller's configuration if valid, otherwise throws an error and
    lists the valid controller names.

    Args:
        name (str): The controller key (e.g. 'maxpressure', 'mallight')

    Raises:
        ValueError: If name is not a known controller.

    Returns:
        Dict[str, Any]: The controller's table entry.

    Example:
        >>> get_controller_config('sotl')['learning']
        False
    """
    if name not in CONTROLLERS:
        valid = ', '.join(CONTROLLERS.keys())
        raise ValueError(
            f"Invalid controller '{name}'. "
            f"Valid controllers: {valid}"
        )
    return CONTROLLERS[name]


def get_ablation_config(key: str) -> Dict[str, Any]:
    """
    Gets an ablation variant's description.

    Args:
        key (str): One of 'S', 'R', 'M'.

    Raises:
        ValueError: If key is not a known ablation.

    Returns:
        Dict[str, Any]: The ablation's table entry.
    """
    if key not in ABLATIONS:
        valid = ', '.join(ABLATIONS.keys())
        raise ValueError(f"Invalid ablation '{key}'. Valid ablations: {valid}")
    return ABLATIONS[key]


def feature_size(mode: str) -> int:
    """
    Number of input features per intersection for a feature mode.

    Example:
        >>> feature_size('full')
        20
        >>> feature_size('lanes-only')
        12
    """
    if mode not in FEATURE_MODES:
        valid = ', '.join(FEATURE_MODES.keys())
        raise ValueError(f"Invalid features '{mode}'. Valid modes: {valid}")
    return FEATURE_MODES[mode]['size']


def _check_range(name: str, value: float, low: float, high: float,
                 low_open: bool = False, high_open: bool = False) -> None:
    """Raises ValueError if value lies outside the (half-)open range."""
    too_low = value <= low if low_open else value < low
    too_high = value >= high if high_open else value > high
    if too_low or too_high:
        left = '(' if low_open else '['
        right = ')' if high_open else ']'
        raise ValueError(
            f"Invalid {name} '{value}'. "
            f"Must be in {left}{low}, {high}{right}."
        )


#===============================================================================
#                         SETTINGS CLASSES
#===============================================================================
@dataclass(frozen=True)
class SimConfig:
    """
    Simulator settings.

    Attributes:
        tick_s: Length of one simulation tick in seconds.
        decision_interval_s: Seconds between two controller decisions.
        max_speed_kmh: Free-flow speed on every segment.
        vehicle_length_m / min_gap_m: Space one queued vehicle takes.
        accel_ms2 / decel_ms2: Kept for the record; the queue model folds them
            into the start-up loss.
        discharge_rate: Vehicles per lane per green tick.
        foe_ignore_prob: Collision probability per conflicting pair per tick at
            blacked-out intersections.
        collision_block_s: Seconds a collision blocks both lanes.
        malfunction_capacity_factor: Fraction of the normal discharge rate at
            blacked-out intersections.
        startup_loss_s: Extra travel time for a vehicle released from a queue.
        seed: Seed of the simulator's random generator.

    Example:
        >>> cfg = SimConfig(foe_ignore_prob=0.0)
        >>> cfg.ticks_per_decision
        10
    """
    tick_s: float = TICK_S
    decision_interval_s: float = DECISION_INTERVAL_S
    max_speed_kmh: float = MAX_SPEED_KMH
    vehicle_length_m: float = VEHICLE_LENGTH_M
    min_gap_m: float = MIN_GAP_M
    accel_ms2: float = ACCEL_MS2
    decel_ms2: float = DECEL_MS2
    discharge_rate: float = DISCHARGE_RATE
    foe_ignore_prob: float = FOE_IGNORE_PROB
    collision_block_s: float = COLLISION_BLOCK_S
    malfunction_capacity_factor: float = MALFUNCTION_CAPACITY_FACTOR
    startup_loss_s: float = STARTUP_LOSS_S
    seed: int = 0

    def __post_init__(self):
        _check_range('tick_s', self.tick_s, 0, float('inf'), low_open=True)
        _check_range('decision_interval_s', self.decision_interval_s, 0,
                     float('inf'), low_open=True)
        ratio = self.decision_interval_s / self.tick_s
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"Invalid tick_s '{self.tick_s}'. "
                f"It must divide decision_interval_s ({self.decision_interval_s})."
            )
        _check_range('max_speed_kmh', self.max_speed_kmh, 0, float('inf'),
                     low_open=True)
        _check_range('vehicle_length_m', self.vehicle_length_m, 0,
                     float('inf'), low_open=True)
        _check_range('min_gap_m', self.min_gap_m, 0, float('inf'))
        _check_range('accel_ms2', self.accel_ms2, 0, float('inf'), low_open=True)
        _check_range('decel_ms2', self.decel_ms2, 0, float('inf'), low_open=True)
        _check_range('discharge_rate', self.discharge_rate, 0, 1, low_open=True)
        _check_range('foe_ignore_prob', self.foe_ignore_prob, 0, 1)
        _check_range('collision_block_s', self.collision_block_s, 0, float('inf'))
        _check_range('malfunction_capacity_factor',
                     self.malfunction_capacity_factor, 0, 1)
        _check_range('startup_loss_s', self.startup_loss_s, 0, float('inf'))
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError(f"Invalid seed '{self.seed}'. Must be a 64-bit unsigned integer.")

    @property
    def ticks_per_decision(self) -> int:
        """Number of ticks in one decision interval."""
        return int(round(self.decision_interval_s / self.tick_s))

    @property
    def speed_ms(self) -> float:
        """Free-flow speed in meters per second."""
        return self.max_speed_kmh / 3.6

    def lane_capacity(self, length_m: float) -> int:
        """
        Vehicles that fit in one lane of a segment.

        Example:
            >>> SimConfig().lane_capacity(300.0)
            40
        """
        return max(1, int(length_m // (self.vehicle_length_m + self.min_gap_m)))


@dataclass(frozen=True)
class TrainConfig:
    """
    Deep-Q training schedule.

    Attributes:
        episodes: Number of training episodes.
        updates_per_episode: Full passes over the replay buffer after each episode.
        gamma: Discount factor.
        learning_rate: RMSprop learning rate.
        buffer_capacity: Replay buffer size.
        epsilon_start / epsilon_end / epsilon_decay_episodes: Linear
            exploration schedule.
        diffusion_steps: K, the number of transition-matrix powers.
        features: 'full' or 'lanes-only'.
        aggregate: False turns the agent into the independent (IDQN) pipeline.
        ablation: None or one of 'S', 'R', 'M'.
        shared: Whether all agents share one Q-network.
        sigma: Gaussian kernel width in meters (None = derived from the network).
        episode_s: Simulated seconds per episode.
        seed: Seed for initialization, exploration and shuffling.
    """
    episodes: int = EPISODES
    updates_per_episode: int = UPDATES_PER_EPISODE
    gamma: float = GAMMA
    learning_rate: float = LEARNING_RATE
    buffer_capacity: int = REPLAY_CAPACITY
    epsilon_start: float = EPSILON_START
    epsilon_end: float = EPSILON_END
    epsilon_decay_episodes: int = EPSILON_DECAY_EPISODES
    diffusion_steps: int = DIFFUSION_STEPS
    features: str = 'full'
    aggregate: bool = True
    ablation: Optional[str] = None
    shared: bool = True
    sigma: Optional[float] = None
    episode_s: float = HOUR_S
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError(f"Invalid episodes '{self.episodes}'. Must be >= 0.")
        if self.updates_per_episode < 0:
            raise ValueError(
                f"Invalid updates_per_episode '{self.updates_per_episode}'. Must be >= 0."
            )
        _check_range('gamma', self.gamma, 0, 1, high_open=True)
        _check_range('learning_rate', self.learning_rate, 0, float('inf'),
                     low_open=True)
        if self.buffer_capacity < 1:
            raise ValueError(
                f"Invalid buffer_capacity '{self.buffer_capacity}'. Must be >= 1."
            )
        _check_range('epsilon_start', self.epsilon_start, 0, 1)
        _check_range('epsilon_end', self.epsilon_end, 0, 1)
        if self.epsilon_decay_episodes < 0:
            raise ValueError(
                f"Invalid epsilon_decay_episodes '{self.epsilon_decay_episodes}'. Must be >= 0."
            )
        if self.diffusion_steps < 1:
            raise ValueError(
                f"Invalid diffusion_steps '{self.diffusion_steps}'. Must be >= 1."
            )
        feature_size(self.features)
        if self.ablation is not None:
            get_ablation_config(self.ablation)
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError(f"Invalid sigma '{self.sigma}'. Must be > 0.")
        _check_range('episode_s', self.episode_s, 0, float('inf'), low_open=True)

    def epsilon_for(self, episode: int) -> float:
        """
        Exploration rate for an episode: linear from epsilon_start to
        epsilon_end over the first epsilon_decay_episodes, then flat.

        Example:
            >>> cfg = TrainConfig()
            >>> cfg.epsilon_for(0), cfg.epsilon_for(50), cfg.epsilon_for(150)
            (1.0, 0.525, 0.05)
        """
        if self.epsilon_decay_episodes == 0 or episode >= self.epsilon_decay_episodes:
            return self.epsilon_end
        frac = episode / self.epsilon_decay_episodes
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


@dataclass(frozen=True)
class ExperimentSettings:
    """
    Everything one experiment needs: which controller, which scenario and how
    to train.

    Attributes:
        controller: A key of CONTROLLERS.
        network_path / flow_path: Optional files; when absent a grid and a
            steady flow are generated.
        grid_rows / grid_cols / grid_block_m: Generated grid shape.
        flow_rate / flow_duration_s / od_policy: Generated flow.
        malfunction: Malfunctioning intersections; None = one central node.
        seeds: One replica per seed.
        sotl_theta / sotl_min_green_s / fixed_split_s: Baseline parameters.
        alpha: Restart probability for the influence analysis.
        workers: Parallel processes for sweeps.
        checkpoint_path: Where learning controllers keep their checkpoint;
            None uses the output directory.
        resume: Continue training from an existing checkpoint.
        sim / train: Nested settings.
    """
    controller: str = 'maxpressure'
    network_path: Optional[str] = None
    flow_path: Optional[str] = None
    grid_rows: int = GRID_ROWS
    grid_cols: int = GRID_COLS
    grid_block_m: float = GRID_BLOCK_M
    flow_rate: float = ARRIVAL_RATE_PER_300S
    flow_duration_s: float = DATASET_DURATION_S
    od_policy: str = 'all'
    malfunction: Optional[Tuple[int, ...]] = None
    seeds: Tuple[int, ...] = (0,)
    sotl_theta: int = SOTL_THETA
    sotl_min_green_s: float = SOTL_MIN_GREEN_S
    fixed_split_s: float = FIXED_SPLIT_S
    alpha: float = RESTART_ALPHA
    workers: int = 1
    checkpoint_path: Optional[str] = None
    resume: bool = False
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        get_controller_config(self.controller)
        if self.od_policy not in OD_POLICIES:
            raise ValueError(
                f"Invalid od_policy '{self.od_policy}'. "
                f"Must be one of: {', '.join(OD_POLICIES)}"
            )
        if not self.seeds:
            raise ValueError("At least one seed is required.")
        if self.sotl_theta < 1:
            raise ValueError(f"Invalid sotl.theta '{self.sotl_theta}'. Must be >= 1.")
        if self.sotl_min_green_s < self.sim.decision_interval_s:
            raise ValueError(
                f"Invalid sotl.min_green_s '{self.sotl_min_green_s}'. "
                f"Must be >= the decision interval ({self.sim.decision_interval_s} s)."
            )
        if self.fixed_split_s <= 0:
            raise ValueError(f"Invalid fixed.split_s '{self.fixed_split_s}'. Must be > 0.")
        _check_range('alpha', self.alpha, 0, 1, low_open=True, high_open=True)
        if self.workers < 1:
            raise ValueError(f"Invalid workers '{self.workers}'. Must be >= 1.")
        if self.flow_rate <= 0:
            raise ValueError(f"Invalid flow.rate '{self.flow_rate}'. Must be > 0.")
        if self.flow_duration_s < 0:
            raise ValueError(
                f"Invalid flow.duration_s '{self.flow_duration_s}'. Must be >= 0."
            )

    def with_overrides(self, **changes) -> 'ExperimentSettings':
        """Returns a copy with some top-level fields replaced."""
        return replace(self, **changes)


#===============================================================================
#                         KEY=VALUE LOADING
#===============================================================================
# Flat key -> (section, field, converter). Section None is ExperimentSettings.
def _int_tuple(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(',') if part.strip())


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in {'1', 'true', 'yes', 'on'}:
        return True
    if lowered in {'0', 'false', 'no', 'off'}:
        return False
    raise ValueError(f"Invalid boolean '{text}'. Use true or false.")


def _optional_str(text: str) -> Optional[str]:
    return None if text.strip().lower() in {'', 'none'} else text.strip()


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in {'', 'none'} else float(text)


def _malfunction(text: str) -> Optional[Tuple[int, ...]]:
    lowered = text.strip().lower()
    if lowered == 'default':
        return None
    if lowered in {'', 'none'}:
        return ()
    return _int_tuple(text)


SETTINGS_KEYS = {
    'controller': (None, 'controller', str),
    'network': (None, 'network_path', _optional_str),
    'flow': (None, 'flow_path', _optional_str),
    'grid.rows': (None, 'grid_rows', int),
    'grid.cols': (None, 'grid_cols', int),
    'grid.block_m': (None, 'grid_block_m', float),
    'flow.rate': (None, 'flow_rate', float),
    'flow.duration_s': (None, 'flow_duration_s', float),
    'flow.od_policy': (None, 'od_policy', str),
    'malfunction': (None, 'malfunction', _malfunction),
    'seeds': (None, 'seeds', _int_tuple),
    'sotl.theta': (None, 'sotl_theta', int),
    'sotl.min_green_s': (None, 'sotl_min_green_s', float),
    'fixed.split_s': (None, 'fixed_split_s', float),
    'diffusion.alpha': (None, 'alpha', float),
    'workers': (None, 'workers', int),
    'checkpoint': (None, 'checkpoint_path', _optional_str),
    'resume': (None, 'resume', _bool),
    'train.episodes': ('train', 'episodes', int),
    'train.updates': ('train', 'updates_per_episode', int),
    'train.gamma': ('train', 'gamma', float),
    'train.learning_rate': ('train', 'learning_rate', float),
    'train.buffer': ('train', 'buffer_capacity', int),
    'train.epsilon_start': ('train', 'epsilon_start', float),
    'train.epsilon_end': ('train', 'epsilon_end', float),
    'train.epsilon_decay_episodes': ('train', 'epsilon_decay_episodes', int),
    'train.episode_s': ('train', 'episode_s', float),
    'diffusion.k': ('train', 'diffusion_steps', int),
    'diffusion.sigma': ('train', 'sigma', _optional_float),
    'features': ('train', 'features', str),
    'ablation': ('train', 'ablation', _optional_str),
    'idqn.shared': ('train', 'shared', _bool),
}

_SIM_CONVERTERS = {f.name: (int if f.name == 'seed' else float) for f in fields(SimConfig)}


def _sim_from_mapping(values: Dict[str, str], source: str) -> SimConfig:
    kwargs = {}
    for key, text in values.items():
        if key not in _SIM_CONVERTERS:
            valid = ', '.join(_SIM_CONVERTERS)
            raise ValueError(f"{source}: unknown simulator key '{key}'. Valid keys: {valid}")
        kwargs[key] = _SIM_CONVERTERS[key](text)
    return SimConfig(**kwargs)


def load_sim_config(path: str) -> SimConfig:
    """
    Reads a flat key=value simulator configuration whose keys are the SimConfig
    field names.

    Raises:
        ValueError: On malformed lines or unknown keys.
        FileNotFoundError: If path does not exist.
    """
    return _sim_from_mapping(parse_key_value_file(path), path)


def settings_from_mapping(values: Dict[str, str], source: str = '<config>') -> ExperimentSettings:
    """
    Builds ExperimentSettings from a flat key=value mapping. Keys prefixed with
    `sim.` override SimConfig fields; the rest are listed in SETTINGS_KEYS.

    Example:
        >>> s = settings_from_mapping({'controller': 'sotl', 'sim.seed': '3'})
        >>> s.controller, s.sim.seed
        ('sotl', 3)
    """
    top: Dict[str, Any] = {}
    train: Dict[str, Any] = {}
    sim_values: Dict[str, str] = {}
    for key, text in values.items():
        if key.startswith('sim.'):
            sim_values[key[4:]] = text
            continue
        if key not in SETTINGS_KEYS:
            valid = ', '.join(sorted(SETTINGS_KEYS))
            raise ValueError(
                f"{source}: unknown key '{key}'. Valid keys: {valid}, sim.<field>"
            )
        section, name, convert = SETTINGS_KEYS[key]
        try:
            converted = convert(text)
        except ValueError as exc:
            raise ValueError(f"{source}: invalid value for '{key}': {exc}") from exc
        (train if section == 'train' else top)[name] = converted
    return ExperimentSettings(
        sim=_sim_from_mapping(sim_values, source),
        train=TrainConfig(**train),
        **top
    )


def load_settings(path: str) -> ExperimentSettings:
    """
    Reads an experiment configuration file (flat key=value).

    Raises:
        ValueError: On malformed lines, unknown keys or invalid values.
        FileNotFoundError: If path does not exist.
    """
    return settings_from_mapping(parse_key_value_file(path), path)


def settings_to_lines(settings: ExperimentSettings) -> List[str]:
    """
    Canonical key=value lines for a settings object (sorted, used for digests
    and for writing configs back to disk).
    """
    lines = []
    for key, (section, name, _) in SETTINGS_KEYS.items():
        owner = settings.train if section == 'train' else settings
        value = getattr(owner, name)
        if isinstance(value, tuple):
            value = ','.join(str(v) for v in value)
        elif value is None:
            value = 'default' if name == 'malfunction' else 'none'
        elif isinstance(value, bool):
            value = 'true' if value else 'false'
        lines.append(f"{key}={value}")
    for f in fields(SimConfig):
        lines.append(f"sim.{f.name}={getattr(settings.sim, f.name)}")
    return sorted(lines)


# Keys that describe the method rather than the scenario.
_METHOD_KEYS = {'controller', 'ablation', 'features', 'idqn.shared', 'workers',
                'checkpoint', 'resume'}


def config_digest(settings: ExperimentSettings) -> str:
    """
    Short SHA-256 digest of the scenario part of the settings. Controller,
    ablation and feature mode are left out so that runs of different methods
    on the same scenario carry the same digest.
    """
    scenario = [line for line in settings_to_lines(settings)
                if line.split('=', 1)[0] not in _METHOD_KEYS]
    return hashlib.sha256('\n'.join(scenario).encode('utf-8')).hexdigest()[:16]
