import pytest


SOLVER = """
[container]
lower = [0.0, 0.0]
upper = [1.0, 1.0]

[solver]
eps = {eps}
eta_pen = 0.01
t_end = {t_end}
resolution = {resolution}
{extra}
"""

BODY = """
[body]
kind = "disk"
radius = 0.1
position = {position}
velocity = {velocity}
"""


def _write(directory, name: str, text: str) -> str:
    path = directory / name
    path.write_text(text)
    return str(path)


@pytest.fixture
def scenario_file(tmp_path):
    """Writes a scenario TOML and returns its path"""

    def write(name: str, resolution: int = 16, eps: float = 0.01, t_end: float = 0.02, preset: str = "quiescent",
              body: bool = False, position: str = "[0.5, 0.5]", velocity: str = "[0.1, 0.0]", extra: str = ""):
        text = f'name = "{name}"\n' + SOLVER.format(eps=eps, t_end=t_end, resolution=resolution, extra=extra)
        if body:
            text += BODY.format(position=position, velocity=velocity)
        text += f'\n[fluid]\npreset = "{preset}"\n'
        return _write(tmp_path, f"{name}.toml", text)

    return write


@pytest.fixture
def plan_file(tmp_path, scenario_file):

    def write(eps: str = "[0.01]"):
        scenario_file("swirl", preset="taylor_green")
        return _write(tmp_path, "plan.toml", f'scenario = "swirl.toml"\neps = {eps}\nworkers = 1\n')

    return write
