"""
Experiment orchestration - runs a whole experiment in one place.

A run trains the controller on hour 1 of the dataset (learning controllers
only) and evaluates it on hour 2 twice: once with every signal working and
once with the configured intersections blacked out. The reduction ratio
compares the two.

The steps in question are:
- scenario loading (network, flow, malfunction set)
- training (learning controllers)
- evaluation with and without malfunctions
- metrics files, sweeps, influence analysis and reports
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from signal_lab.config import (
    ExperimentSettings, SimConfig, HOUR_S, SWEEP_REPEATS,
    config_digest, get_controller_config,
)
from signal_lab.control.controllers import (
    FixedTimeController, MaxPressureController, SignalController, SotlController, SotlParams,
)
from signal_lab.core.diffusion import (
    MalfunctionMask, influence_profile, stationary_distribution, write_influence_csv,
)
from signal_lab.core.metrics import ExperimentMetrics, reduction_ratio
from signal_lab.core.network import (
    RoadNetwork, build_edge_weights, hop_distances, load_network, transition_matrix,
)
from signal_lab.core.simulator import FlowRecord, TrafficSimulator, load_flow
from signal_lab.experiment.datasets import (
    FlowSpec, generate_flow, generate_grid, select_malfunction_nodes, split_flow,
)
from signal_lab.learning.agent import LearnedController
from signal_lab.learning.training import train
from signal_lab.utils.io_utils import read_csv_rows, write_csv_atomic
from signal_lab.utils.time_utils import decision_steps, hour_window

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    'controller', 'ablation', 'features', 'seed', 'config_digest',
    'nomal_network', 'mal_network', 'nomal_intersection', 'mal_intersection',
    'rr_intersection', 'rr_network', 'accidents',
)
SWEEP_COLUMNS = ('axis', 'value', 'runs', 'rr_mean', 'rr_std', 'rr_network_mean',
                 'rr_network_std', 'error')
SWEEP_AXES = ('k', 'malfunction-count')


#===============================================================================
#                               RESULTS
#===============================================================================
@dataclass(frozen=True)
class RunResult:
    """
    One replica of one experiment.

    Attributes:
        controller: Controller key.
        ablation: Ablation key or None.
        features: Feature mode of learning controllers.
        seed: Replica seed.
        malfunction: Blacked-out intersections of the malfunction run.
        no_malfunction: Metrics with every signal working.
        malfunction_metrics: Metrics with the malfunctions, carrying the
            intersection-level reduction ratio.
        network_rr: Network-level reduction ratio (None when undefined).
        config_digest: Scenario digest.
    """
    controller: str
    ablation: Optional[str]
    features: str
    seed: int
    malfunction: Tuple[int, ...]
    no_malfunction: ExperimentMetrics
    malfunction_metrics: ExperimentMetrics
    network_rr: Optional[float]
    config_digest: str

    @property
    def intersection_rr(self) -> Optional[float]:
        return self.malfunction_metrics.reduction_ratio

    def row(self) -> Tuple:
        """
        The metrics CSV row of this replica (columns METRIC_COLUMNS).

        Undefined ratios and a missing ablation are written as empty cells.

        Returns:
            Tuple: One value per column.
        """
        return (
            self.controller, self.ablation or '', self.features, self.seed, self.config_digest,
            self.no_malfunction.network_throughput, self.malfunction_metrics.network_throughput,
            _fmt(self.no_malfunction.intersection_throughput),
            _fmt(self.malfunction_metrics.intersection_throughput),
            _fmt(self.intersection_rr), _fmt(self.network_rr),
            self.malfunction_metrics.accidents,
        )


def _fmt(value: Optional[float]) -> str:
    return '' if value is None else repr(float(value))


def write_metrics(path: str, results: Sequence[RunResult]) -> None:
    """Metrics CSV, one row per replica (columns METRIC_COLUMNS)."""
    write_csv_atomic(path, METRIC_COLUMNS, [r.row() for r in results])


#===============================================================================
#                               EVALUATION
#===============================================================================
def evaluate(net: RoadNetwork, flow: Sequence[FlowRecord], controller: SignalController,
             malfunction: Sequence[int], sim_config: SimConfig, duration_s: float = HOUR_S,
             accident_log: Optional[str] = None) -> TrafficSimulator:
    """
    Runs a controller on a flow for duration_s and returns the finished
    simulator (ready for metrics()).
    """
    sim = TrafficSimulator(net, flow, sim_config)
    sim.inject_malfunction(malfunction)
    controller.reset()
    if isinstance(controller, LearnedController):
        controller.agent.set_mask(MalfunctionMask.from_nodes(net.num_nodes, malfunction))
    observations = sim.observe()
    for _ in range(decision_steps(duration_s, sim_config.decision_interval_s)):
        result = sim.step(controller.decide(sim.clock, observations))
        observations = result.observations
    if accident_log:
        sim.write_accident_log(accident_log)
    return sim


class ExperimentRunner:
    """
    Runs experiments for one settings object.

    Attributes:
        settings (ExperimentSettings): Controller, scenario and training.
        out_dir (Optional[str]): Where checkpoints, learning curves and
            accident logs go (nothing is written when None).
        progress (bool): Show training progress bars.

    Example:
        >>> runner = ExperimentRunner(ExperimentSettings(controller='maxpressure'))
        >>> result = runner.run(seed=0)
        >>> result.malfunction_metrics.reduction_ratio
    """

    def __init__(self, settings: Optional[ExperimentSettings] = None,
                 out_dir: Optional[str] = None, progress: bool = True):
        self.settings = settings if settings else ExperimentSettings()
        self.out_dir = out_dir
        self.progress = progress
        self.network = self._load_network()
        self.digest = config_digest(self.settings)

    def _load_network(self) -> RoadNetwork:
        s = self.settings
        if s.network_path:
            return load_network(s.network_path)
        return generate_grid(s.grid_rows, s.grid_cols, s.grid_block_m)

    def flow(self, seed: int) -> List[FlowRecord]:
        """The two-hour flow of a replica (a fixed file, or generated from the seed)."""
        s = self.settings
        if s.flow_path:
            return load_flow(s.flow_path)
        return generate_flow(self.network, FlowSpec(s.flow_rate, s.flow_duration_s, s.od_policy, seed))

    def malfunction_nodes(self) -> Tuple[int, ...]:
        """The configured set, or the most central intersection by default."""
        if self.settings.malfunction is None:
            return select_malfunction_nodes(self.network, 1)
        for node in self.settings.malfunction:
            self.network.check_node(node)
        return tuple(sorted(set(self.settings.malfunction)))

    def _path(self, name: str, seed: int) -> Optional[str]:
        if not self.out_dir:
            return None
        tag = self.settings.controller + (f"-{self.settings.train.ablation}"
                                          if self.settings.controller == 'mallight'
                                          and self.settings.train.ablation else '')
        return os.path.join(self.out_dir, f"{tag}-seed{seed}-{name}")

    def checkpoint_path(self, seed: int) -> Optional[str]:
        """
        Checkpoint file of a replica.

        An explicit settings.checkpoint_path is used as is for a single seed
        and gets a `-seed<N>` suffix before the extension otherwise. Without
        one the checkpoint goes to the output directory (or nowhere).
        """
        path = self.settings.checkpoint_path
        if not path:
            return self._path('checkpoint.json', seed)
        if len(self.settings.seeds) == 1:
            return path
        root, ext = os.path.splitext(path)
        return f"{root}-seed{seed}{ext}"

    def build_controller(self, seed: int, train_flow: Sequence[FlowRecord],
                         malfunction: Sequence[int], sim_config: SimConfig) -> SignalController:
        """
        Instantiates the configured controller, training it first if it learns.

        Raises:
            ValueError: If resume is requested without a checkpoint location.
        """
        s = self.settings
        name = s.controller
        interval = sim_config.decision_interval_s
        if name == 'fixedtime':
            return FixedTimeController(self.network.num_nodes, s.fixed_split_s, seed, interval)
        if name == 'sotl':
            return SotlController(SotlParams(s.sotl_theta, s.sotl_min_green_s, interval))
        if name == 'maxpressure':
            return MaxPressureController()
        mallight = name == 'mallight'
        train_config = replace(
            s.train,
            aggregate=mallight,
            ablation=s.train.ablation if mallight else None,
            shared=True if mallight else s.train.shared,
            seed=seed,
        )
        checkpoint = self.checkpoint_path(seed)
        if s.resume and not checkpoint:
            raise ValueError("Cannot resume without a checkpoint: set a checkpoint path or an output directory.")
        mask = MalfunctionMask.from_nodes(self.network.num_nodes, malfunction)
        result = train(train_config, self.network, train_flow, mask, sim_config,
                       checkpoint_path=checkpoint, resume=s.resume,
                       curve_path=self._path('curve.csv', seed),
                       progress=self.progress)
        return LearnedController(result.agent)

    def run(self, seed: int) -> RunResult:
        """
        One replica: train on hour 1, evaluate hour 2 without and with the
        malfunctions.

        Raises:
            ValueError: On invalid settings or data.
            FileNotFoundError: If a configured file is missing.
        """
        s = self.settings
        get_controller_config(s.controller)
        malfunction = self.malfunction_nodes()
        train_flow, test_flow = split_flow(self.flow(seed))
        sim_config = replace(s.sim, seed=seed)
        logger.info("run %s seed %d: %d intersections, malfunction %s, %d test vehicles",
                    s.controller, seed, self.network.num_nodes, list(malfunction), len(test_flow))
        controller = self.build_controller(seed, train_flow, malfunction, sim_config)
        focus = malfunction if malfunction else tuple(range(self.network.num_nodes))
        # The test hour is rebased to start at 0.
        window = hour_window(0)

        clean = evaluate(self.network, test_flow, controller, (), sim_config)
        no_mal = clean.metrics(window, focus)
        broken = evaluate(self.network, test_flow, controller, malfunction, sim_config,
                          accident_log=self._path('accidents.csv', seed))
        mal = broken.metrics(window, focus)
        mal = replace(mal, reduction_ratio=reduction_ratio(no_mal.intersection_throughput,
                                                           mal.intersection_throughput),
                      seed=seed, config_digest=self.digest)
        no_mal = replace(no_mal, seed=seed, config_digest=self.digest)
        result = RunResult(
            controller=s.controller,
            ablation=s.train.ablation if s.controller == 'mallight' else None,
            features=s.train.features,
            seed=seed,
            malfunction=malfunction,
            no_malfunction=no_mal,
            malfunction_metrics=mal,
            network_rr=reduction_ratio(no_mal.network_throughput, mal.network_throughput),
            config_digest=self.digest,
        )
        logger.info("run %s seed %d: intersection %.2f -> %.2f, RR %s",
                    s.controller, seed, no_mal.intersection_throughput,
                    mal.intersection_throughput, _fmt(result.intersection_rr) or 'undefined')
        return result

    def run_all(self) -> List[RunResult]:
        """One replica per configured seed; writes metrics.csv into out_dir."""
        results = [self.run(seed) for seed in self.settings.seeds]
        if self.out_dir:
            write_metrics(os.path.join(self.out_dir, 'metrics.csv'), results)
        return results


def run_experiment(settings: ExperimentSettings, out_dir: Optional[str] = None,
                   progress: bool = True) -> List[RunResult]:
    """
    Convenience function running every seed of an experiment.

    Args:
        settings (ExperimentSettings): The experiment.
        out_dir (Optional[str]): Output directory for metrics.csv and the
            per-run files.
        progress (bool): Show training progress bars.

    Returns:
        List[RunResult]: One result per seed.
    """
    return ExperimentRunner(settings, out_dir, progress).run_all()


#===============================================================================
#                               SWEEPS
#===============================================================================
def sweep_variant(settings: ExperimentSettings, axis: str, value: int,
                  network: RoadNetwork) -> ExperimentSettings:
    """Settings for one point of a sweep."""
    if axis == 'k':
        if value < 1:
            raise ValueError(f"Invalid diffusion steps {value}. Must be >= 1.")
        return replace(settings, train=replace(settings.train, diffusion_steps=value))
    if axis == 'malfunction-count':
        return replace(settings, malfunction=select_malfunction_nodes(network, value))
    raise ValueError(f"Invalid sweep axis '{axis}'. Valid axes: {', '.join(SWEEP_AXES)}")


def sweep_seeds(settings: ExperimentSettings) -> Tuple[int, ...]:
    """The configured seeds, or SWEEP_REPEATS consecutive seeds from the first one."""
    if len(settings.seeds) > 1:
        return settings.seeds
    return tuple(settings.seeds[0] + i for i in range(SWEEP_REPEATS))


def _run_job(job) -> Tuple[int, int, Optional[RunResult], str]:
    settings, value, seed, out_dir = job
    try:
        result = ExperimentRunner(settings, out_dir, progress=False).run(seed)
    except Exception as exc:  # pylint: disable=broad-except
        # Failed points are reported in the error column.
        return value, seed, None, f"seed {seed}: {exc}"
    if out_dir:
        write_metrics(os.path.join(out_dir, f"run-{value}-seed{seed}.csv"), [result])
    return value, seed, result, ''


def _mean_std(values: Sequence[Optional[float]]) -> Tuple[str, str]:
    defined = [v for v in values if v is not None]
    if not defined:
        return '', ''
    return repr(float(np.mean(defined))), repr(float(np.std(defined)))


def sweep(settings: ExperimentSettings, axis: str, values: Sequence[int],
          out_path: Optional[str] = None) -> List[Dict[str, str]]:
    """
    Runs the experiment for every value of an axis ('k' or
    'malfunction-count') and several seeds, and averages the reduction ratios.

    Failed runs are listed in the `error` column; the sweep continues.

    Args:
        settings (ExperimentSettings): Base experiment (settings.workers > 1
            runs the replicas in parallel processes).
        axis (str): 'k' or 'malfunction-count'.
        values (Sequence[int]): Values to sweep.
        out_path (Optional[str]): Sweep CSV destination; per-run metrics files
            are written next to it.

    Raises:
        ValueError: On an invalid axis or value.

    Returns:
        List[Dict[str, str]]: One row per value (columns SWEEP_COLUMNS).
    """
    network = ExperimentRunner(settings, progress=False).network
    variants = {value: sweep_variant(settings, axis, value, network) for value in values}
    out_dir = os.path.join(os.path.dirname(os.path.abspath(out_path)), 'runs') if out_path else None
    jobs = [(variants[value], value, seed, out_dir)
            for value in values for seed in sweep_seeds(settings)]
    logger.info("sweep over %s: %d values, %d runs", axis, len(values), len(jobs))
    if settings.workers > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            outcomes = list(pool.map(_run_job, jobs))
    else:
        outcomes = [_run_job(job) for job in jobs]

    rows = []
    for value in values:
        results = [r for v, _, r, _ in outcomes if v == value and r is not None]
        errors = [e for v, _, _, e in outcomes if v == value and e]
        for error in errors:
            logger.warning("sweep %s=%s failed: %s", axis, value, error)
        rr_mean, rr_std = _mean_std([r.intersection_rr for r in results])
        net_mean, net_std = _mean_std([r.network_rr for r in results])
        rows.append({
            'axis': axis, 'value': str(value), 'runs': str(len(results)),
            'rr_mean': rr_mean, 'rr_std': rr_std,
            'rr_network_mean': net_mean, 'rr_network_std': net_std,
            'error': '; '.join(errors),
        })
    if out_path:
        write_csv_atomic(out_path, SWEEP_COLUMNS, [[row[c] for c in SWEEP_COLUMNS] for row in rows])
    return rows


#===============================================================================
#                               INFLUENCE AND REPORTS
#===============================================================================
def influence_report(net: RoadNetwork, mask: MalfunctionMask, steps: int, alpha: float,
                     sigma: Optional[float] = None, source: Optional[int] = None,
                     out_path: Optional[str] = None) -> List[Tuple[int, float]]:
    """
    Mean restart-weighted influence of one source per hop distance.

    The source is the lowest malfunctioning intersection, or node 0 for an
    empty mask.

    Returns:
        List[Tuple[int, float]]: (hops, mean influence) sorted by hops.

    Example:
        On the uniform 4×4 grid the means for hops 1..4 never increase.
    """
    if source is None:
        source = mask.nodes[0] if mask.nodes else 0
    net.check_node(source)
    transition = transition_matrix(build_edge_weights(net, sigma))
    matrix = stationary_distribution(transition, alpha, steps)
    distances = hop_distances(net, source)
    hops = [distances[node] for node in range(net.num_nodes)]
    profile = influence_profile(matrix, source, hops)
    rows = sorted(profile.mean_by_hop.items())
    if out_path:
        write_csv_atomic(out_path, ('hops', 'mean_influence'),
                         [(hop, repr(value)) for hop, value in rows])
        write_influence_csv(os.path.splitext(out_path)[0] + '-nodes.csv', profile)
    return rows


def report(paths: Sequence[str]) -> List[Dict[str, object]]:
    """
    Aggregates metrics CSVs per controller (and ablation).

    Raises:
        ValueError: If the files carry different config digests or are empty.

    Returns:
        List[Dict[str, object]]: Per method the mean and standard deviation of
        the throughputs, reduction ratios and accidents.
    """
    rows = []
    for path in paths:
        rows += read_csv_rows(path)
    if not rows:
        raise ValueError("No metrics rows to report.")
    digests = sorted({row['config_digest'] for row in rows})
    if len(digests) > 1:
        raise ValueError(
            f"Config digest mismatch: {', '.join(digests)}. "
            f"Only runs of the same scenario can be compared."
        )
    groups: Dict[Tuple[str, str], List[Dict[str, str]]] = {}
    for row in rows:
        groups.setdefault((row['controller'], row['ablation']), []).append(row)
    summary = []
    for (controller, ablation), items in sorted(groups.items()):
        entry: Dict[str, object] = {'controller': controller, 'ablation': ablation, 'runs': len(items)}
        for column in ('nomal_intersection', 'mal_intersection', 'rr_intersection',
                       'rr_network', 'accidents'):
            values = [float(item[column]) for item in items if item[column] != '']
            entry[column] = (float(np.mean(values)), float(np.std(values))) if values else None
        summary.append(entry)
    return summary
