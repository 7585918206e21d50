"""Dual-gripper rope and cloth manipulation on voxel worlds.

Local control, deadlock prediction over a virtual elastic band, and a
band-aware global planner, interleaved by a top-level task loop.
"""

from .band import Band, Blacklist, band_distance, band_length, forward_propagate, initialize_band, pull_tight, vis_check
from .controller import ControllerParams, local_controller
from .deadlock import DeadlockParams, History, predict_deadlock
from .framework import TaskSpec, compute_l_max, main_loop
from .planner import FullConfig, PlannerParams, PlanningFailure, plan_path, rrt_eb
from .scenario import ScenarioFile, load_scenario
from .simulator import DeformConfig, SimState, make_cloth, make_rope, sense_points, step
from .worldgrid import Scene, WorldGrid, build_grid, register_targets

__version__ = "0.1.0"
