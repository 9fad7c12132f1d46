"""Built-in tool drawings.

Each drawing is a character grid (top row first) with 1 cm cells; ``M``
cells are clamped to the robot flange and define the end-effector origin.
"""

from .fea import Mesh, cell_mesh

CELL = 0.01

# Broad rectangular head on a thin neck; the right side of the head is a
# narrow arm.
TOOL1 = (
    "#########.....",
    "##############",
    "##############",
    "#########.....",
    "#########.....",
    "....###.......",
    "....###.......",
    ".....#........",
    ".....#........",
    "....MMM.......",
    "....MMM.......",
)

DRAWINGS = {"tool1": TOOL1}


def builtin_mesh(name: str) -> Mesh:
    return cell_mesh(DRAWINGS[name], CELL)
