"""
Signal Malfunction Laboratory - Main Code

This is the quick-run script of the laboratory. Edit the configuration section
below to pick a controller, a scenario and the malfunctioning intersections.
You can run the file by using:

    `python3 main.py`
"""

from dataclasses import replace

from signal_lab.config import ExperimentSettings, TrainConfig, CONTROLLERS
from signal_lab.experiment.harness import run_experiment


def main():
    """
    Main Function - configure your experiment here and run it.
    """

    #======================================================================#
    #                          USER CONFIGURATION                          #
    #======================================================================#
    # Change these values for your experiment

    # Controller to evaluate
    CONTROLLER = 'maxpressure'      # Options: fixedtime, sotl, maxpressure, idqn, mallight
    ABLATION = None                 # mallight only. Options: None, 'S', 'R', 'M'

    # Malfunctioning intersections (None = the most central one, () = none)
    MALFUNCTION = None

    # Seeds to run (one replica each)
    SEEDS = (0,)

    # Training schedule for the learning controllers
    train = TrainConfig(
        episodes=20,                # Full schedule: 200
        ablation=ABLATION,
    )

    # Output directory for metrics, learning curves and accident logs
    OUT_DIR = None

    #======================================================================#
    #                          EXPERIMENT                                  #
    #======================================================================#
    settings = replace(
        ExperimentSettings(),
        controller=CONTROLLER,
        malfunction=MALFUNCTION,
        seeds=SEEDS,
        train=train,
    )
    print()

    results = run_experiment(settings, OUT_DIR)

    #======================================================================#
    #                        DISPLAY RESULTS                               #
    #======================================================================#
    name = CONTROLLERS[CONTROLLER]['name']

    message = f"""
╔════════════════════════════════════════════════════════════╗
║              Signal Malfunction Laboratory                 ║
╚════════════════════════════════════════════════════════════╝
⚙️  Controller: {name}
⚠️  Malfunctioning: {', '.join(str(n) for n in results[0].malfunction) or 'none'}

🚦 Throughput (test hour)
══════════════════════════════════════"""
    for r in results:
        rr = 'n/a' if r.intersection_rr is None else f"{r.intersection_rr:.1f}%"
        message += f"""
Seed {r.seed}
  Intersection  {r.no_malfunction.intersection_throughput:8.1f} -> {r.malfunction_metrics.intersection_throughput:8.1f}   RR {rr}
  Network       {r.no_malfunction.network_throughput:8d} -> {r.malfunction_metrics.network_throughput:8d}
  Accidents     {r.malfunction_metrics.accidents:8d}"""
    message += "\n══════════════════════════════════════\n"

    # Printing Messages
    print(message)
    print()

#===============================================================================
#                               Main Code
#===============================================================================
if __name__ == '__main__':
    main()
