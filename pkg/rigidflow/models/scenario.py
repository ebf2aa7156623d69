from __future__ import annotations
from typing import List, Optional, Sequence
import numpy as np
from rigidflow.exceptions import ConfigInvalid
from rigidflow.models.fluid import SolverParams
from rigidflow.models.geometry import BodyShape, Container


class Scenario():
    """
    Class that represents a coupled run configuration: container, body, initial fluid and solver settings
    """

    PRESETS = ("quiescent", "taylor_green", "shear", "vortex_pair")

    def __init__(self, container: Container, params: SolverParams, resolution: Optional[int] = 128,
                 shape: Optional[BodyShape] = None, position: Optional[Sequence[float]] = None,
                 angle: Optional[float] = 0.0, velocity: Optional[Sequence[float]] = None,
                 angular_velocity: Optional[float] = 0.0, preset: Optional[str] = "quiescent",
                 fluid_options: Optional[dict] = None, seed: Optional[int] = 0, name: Optional[str] = None):
        """
        Scenario class constructor

        Parameters
        ----------
        container : Container
            The planar container
        params : SolverParams
            Solver settings
        resolution : int, optional
            Cells along x, by default 128
        shape : BodyShape, optional
            Reference body, by default None (body-free run)
        position : Sequence[float], optional
            Initial center of mass, by default the container center
        angle : float, optional
            Initial rotation angle (rad), by default 0.0
        velocity : Sequence[float], optional
            Initial translational velocity (m/s), by default zero
        angular_velocity : float, optional
            Initial angular velocity (rad/s), by default 0.0
        preset : str, optional
            Initial fluid field, one of quiescent, taylor_green, shear or vortex_pair, by default quiescent
        fluid_options : dict, optional
            Preset options such as amplitude and width, by default None
        seed : int, optional
            Seed of every random draw of the run, by default 0
        name : str, optional
            Scenario name used for output directories, by default None

        Raises
        ------
        ConfigInvalid
            - Only planar containers and bodies are simulated
            - Resolution must be at least 8 cells
            - Unknown fluid preset
            - Initial position must lie inside the container
        """

        if container.dimension != 2:
            raise(ConfigInvalid("Coupled runs need a planar container"))

        if shape is not None and not shape.planar:
            raise(ConfigInvalid("Coupled runs need a planar body (disk or polygon)"))

        if int(resolution) < 8:
            raise(ConfigInvalid("Resolution must be at least 8 cells"))

        if preset not in self.PRESETS:
            raise(ConfigInvalid(f"Unknown fluid preset \"{preset}\", expected one of {', '.join(self.PRESETS)}"))

        position = container.center[:2] if position is None else np.asarray(position, dtype=float)
        if position.shape != (2,):
            raise(ConfigInvalid("Body position needs two coordinates"))
        if shape is not None and not bool(container.contains(np.append(position, 0.0))):
            raise(ConfigInvalid("Initial body position must lie inside the container"))

        velocity = np.zeros(2) if velocity is None else np.asarray(velocity, dtype=float)
        if velocity.shape != (2,):
            raise(ConfigInvalid("Body velocity needs two components"))

        self.container = container
        self.params = params
        self.resolution = int(resolution)
        self.shape = shape
        self.position = position
        self.angle = float(angle)
        self.velocity = velocity
        self.angular_velocity = float(angular_velocity)
        self.preset = preset
        self.fluid_options = dict(fluid_options) if fluid_options is not None else {}
        self.seed = int(seed)
        self.name = name if name is not None else preset

    @property
    def has_body(self) -> bool:
        return self.shape is not None

    def with_changes(self, eps: Optional[float] = None, velocity_offset: Optional[Sequence[float]] = None,
                     **params_changes) -> Scenario:
        """Copy of the scenario with another viscosity, an offset initial body velocity or other solver settings"""
        if eps is not None:
            params_changes["eps"] = eps
        scenario_dict = Scenario.to_dict(self)
        scenario_dict["solver"].update(params_changes)
        if velocity_offset is not None and self.has_body:
            scenario_dict["body"]["velocity"] = (self.velocity + np.asarray(velocity_offset, dtype=float)).tolist()
        return Scenario.from_dict(scenario_dict)

    @classmethod
    def from_dict(cls, scenario_dict: dict) -> Scenario:
        """
        Builds a scenario from its TOML table layout

        Raises
        ------
        ConfigInvalid
            - Missing container or solver tables
        """

        if "container" not in scenario_dict or "solver" not in scenario_dict:
            raise(ConfigInvalid("A scenario needs [container] and [solver] tables"))

        container = Container.from_dict(scenario_dict.get("container"))
        solver = dict(scenario_dict.get("solver"))
        resolution = solver.pop("resolution", 128)
        params = SolverParams.from_dict(solver)

        body = scenario_dict.get("body")
        shape, position, angle, velocity, angular_velocity = None, None, 0.0, None, 0.0
        if body is not None:
            shape = BodyShape.from_dict(body)
            position = body.get("position")
            angle = body.get("angle", 0.0)
            velocity = body.get("velocity")
            angular_velocity = body.get("angular_velocity", 0.0)

        fluid = dict(scenario_dict.get("fluid", {}))
        preset = fluid.pop("preset", "quiescent")

        return cls(container, params, resolution, shape, position, angle, velocity, angular_velocity, preset, fluid,
                   scenario_dict.get("seed", 0), scenario_dict.get("name"))

    @staticmethod
    def to_dict(scenario: Scenario) -> dict:
        solver = SolverParams.to_dict(scenario.params)
        solver["resolution"] = scenario.resolution
        scenario_dict = {
            "name": scenario.name,
            "seed": scenario.seed,
            "container": Container.to_dict(scenario.container),
            "solver": solver,
            "fluid": dict(scenario.fluid_options, preset=scenario.preset),
        }
        if scenario.has_body:
            body = BodyShape.to_dict(scenario.shape)
            body.update({
                "position": scenario.position.tolist(),
                "angle": scenario.angle,
                "velocity": scenario.velocity.tolist(),
                "angular_velocity": scenario.angular_velocity,
            })
            scenario_dict["body"] = body
        return scenario_dict


class SweepPlan():
    """
    Class that represents a vanishing-viscosity sweep: one scenario run for a list of viscosities
    """

    def __init__(self, scenario: Scenario, eps: Sequence[float], workers: Optional[int] = 1,
                 times: Optional[Sequence[float]] = None, speed_cutoff: Optional[float] = None,
                 perturbations: Optional[Sequence[Sequence[float]]] = None, output_dir: Optional[str] = None):
        """
        SweepPlan class constructor

        Parameters
        ----------
        scenario : Scenario
            Shared scenario
        eps : Sequence[float]
            Viscosities, distinct, non-negative and in decreasing order
        workers : int, optional
            Number of member processes, by default 1
        times : Sequence[float], optional
            Times where the Young measure is built, by default None (the scenario's final time)
        speed_cutoff : float, optional
            Speed cutoff of the concentration estimate, by default None (ten times the initial max speed)
        perturbations : Sequence[Sequence[float]], optional
            Initial body velocity offsets, one per member, by default None
        output_dir : str, optional
            Sweep directory, by default None

        Raises
        ------
        ConfigInvalid
            - Viscosities must be distinct, non-negative and decreasing
            - Workers must be positive
            - One perturbation per member
        """

        eps = [float(e) for e in eps]
        if len(eps) == 0 or any(e < 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise(ConfigInvalid("Sweep viscosities must be distinct, non-negative and in decreasing order"))

        if int(workers) < 1:
            raise(ConfigInvalid("Sweep workers must be positive"))

        if perturbations is not None and len(perturbations) != len(eps):
            raise(ConfigInvalid("Sweep perturbations need one offset per member"))

        times = [scenario.params.t_end] if times is None else [float(t) for t in times]
        if any(t < 0 or t > scenario.params.t_end for t in times):
            raise(ConfigInvalid("Measure times must lie within the scenario's time interval"))

        self.scenario = scenario
        self.eps = eps
        self.workers = int(workers)
        self.times = times
        self.speed_cutoff = None if speed_cutoff is None else float(speed_cutoff)
        self.perturbations = [list(p) for p in perturbations] if perturbations is not None else None
        self.output_dir = output_dir

    def __len__(self) -> int:
        return len(self.eps)

    def members(self) -> List[Scenario]:
        """Scenarios of the members in sweep order"""
        members = []
        for index, eps in enumerate(self.eps):
            offset = self.perturbations[index] if self.perturbations is not None else None
            member = self.scenario.with_changes(eps=eps, velocity_offset=offset)
            member.name = f"{self.scenario.name}_eps{index}"
            members.append(member)
        return members

    @classmethod
    def from_dict(cls, plan_dict: dict, scenario: Optional[Scenario] = None) -> SweepPlan:
        """
        Raises
        ------
        ConfigInvalid
            - The plan has neither a scenario table nor a resolved scenario
        """

        if scenario is None:
            if not isinstance(plan_dict.get("scenario"), dict):
                raise(ConfigInvalid("A sweep plan needs an inline [scenario] table or a scenario path"))
            scenario = Scenario.from_dict(plan_dict.get("scenario"))

        perturbations = plan_dict.get("perturbations")
        if isinstance(perturbations, dict):
            perturbations = perturbations.get("velocity")

        return cls(scenario, plan_dict.get("eps", []), plan_dict.get("workers", 1), plan_dict.get("times"),
                   plan_dict.get("speed_cutoff"), perturbations, plan_dict.get("output_dir"))

    @staticmethod
    def to_dict(plan: SweepPlan) -> dict:
        plan_dict = {
            "scenario": Scenario.to_dict(plan.scenario),
            "eps": plan.eps,
            "workers": plan.workers,
            "times": plan.times,
        }
        if plan.speed_cutoff is not None:
            plan_dict["speed_cutoff"] = plan.speed_cutoff
        if plan.perturbations is not None:
            plan_dict["perturbations"] = {"velocity": plan.perturbations}
        return plan_dict
