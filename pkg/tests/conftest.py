import pytest

from trajtree.model import Step, Trajectory

PROMPT = "Fix the failing unit test in repo X."

O_SEARCH = "grep results: 3 matches in handlers.py"
O_EDIT = "edit applied to handlers.py"
O_DELETE = "removed handlers.py"


def make_traj(trajectory_id, actions_obs, resolved, instance_id="inst-fix-x", prompt=PROMPT):
    steps = tuple(Step(action=a, observation=o) for a, o in actions_obs)
    return Trajectory(
        instance_id=instance_id,
        trajectory_id=trajectory_id,
        prompt=prompt,
        steps=steps,
        resolved=resolved,
    )


@pytest.fixture
def fixture_trajectories():
    """Three trajectories: scores search=1/3, edit=1/2, delete=0, test=1, submit=0.

    Exactly one critical pair: under edit, chosen=test (1) vs rejected=submit (0).
    The (edit=1/2, delete=0) sibling gap is exactly 1/2 and must NOT qualify.
    """
    t1 = make_traj(
        "t1",
        [("search", O_SEARCH), ("edit", O_EDIT), ("test", None)],
        resolved=1,
    )
    t2 = make_traj(
        "t2",
        [("search", O_SEARCH), ("edit", O_EDIT), ("submit", None)],
        resolved=0,
    )
    t3 = make_traj(
        "t3",
        [("search", O_SEARCH), ("delete", O_DELETE), ("submit", None)],
        resolved=0,
    )
    return [t1, t2, t3]
