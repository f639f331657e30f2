"""
Drag, lift and other per-step observables of a discrete flow state.

Forces on the cylinder are evaluated two ways: as boundary integrals of the
traction, and as the discrete momentum residual tested with a velocity field
that equals a unit vector on the cylinder (the volume functional). The unit
normal on the cylinder points out of the cylinder into the fluid.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Literal, Optional, Tuple

import numpy as np

from utils.form_utils import cell_integrator, facet_integrator
from utils.geometry_utils import MARKERS
from utils.mesh_utils import Mesh
from utils.scheme_utils import FieldState, Scheme
from utils.space_utils import BDMSpace, FESpace, VectorH1Space

logger = logging.getLogger(__name__)

DIRECTIONS = {"drag": (1.0, 0.0), "lift": (0.0, 1.0)}
ExtensionKind = Literal["layer", "smooth"]


class FunctionalError(ValueError):
    """An observable cannot be evaluated on the given space or mesh."""


@dataclass
class ForceSample:
    t: float
    drag_v: float
    drag_p: float
    lift_v: float
    lift_p: float
    drag_volume: float
    lift_volume: float
    div_norm: float
    energy: float

    @property
    def drag(self) -> float:
        return self.drag_v + self.drag_p

    @property
    def lift(self) -> float:
        return self.lift_v + self.lift_p

    def as_row(self) -> Tuple[float, ...]:
        """Values in trace column order."""
        return (
            self.t, self.drag, self.lift, self.drag_volume, self.lift_volume,
            self.drag_v, self.drag_p, self.div_norm, self.energy,
        )

    def as_dict(self) -> Dict[str, float]:
        out = asdict(self)
        out.update(drag=self.drag, lift=self.lift)
        return out


def drag_lift_boundary(
    velocity_space: FESpace,
    u: np.ndarray,
    pressure_space: FESpace,
    p: np.ndarray,
    nu: float,
) -> Dict[str, Tuple[float, float]]:
    """Viscous and pressure parts of the force on the cylinder, per direction.

    beta_v = int_Gamma nu D(u) n . v ds and beta_p = -int_Gamma p n . v ds.
    """
    mesh = velocity_space.mesh
    degree = 2 * velocity_space.order + 2
    facets = facet_integrator(mesh, degree, "cylinder")
    _, grads = facets.field(velocity_space, u, 0)
    pv, _ = facets.field(pressure_space, p, 0)
    if grads is None:
        raise FunctionalError(f"{velocity_space!r} has no gradients")
    n = -facets.normal
    traction = nu * (np.einsum("eqab,eqb->eqa", grads, n) + np.einsum("eqba,eqb->eqa", grads, n))
    result = {}
    for name, v in DIRECTIONS.items():
        v = np.asarray(v)
        beta_v = float(np.sum(np.einsum("eqa,a->eq", traction, v) * facets.ds))
        beta_p = float(np.sum(-pv * np.einsum("eqa,a->eq", n, v) * facets.ds))
        result[name] = (beta_v, beta_p)
    return result


def _smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - 3.0 * s**2 + 2.0 * s**3


def extension_field(
    space: FESpace,
    direction: Tuple[float, float],
    kind: ExtensionKind = "layer",
    width: Optional[float] = None,
) -> np.ndarray:
    """Discrete velocity equal to `direction` on the cylinder and zero on the rest of the boundary.

    "layer": supported on the cells touching the cylinder. "smooth":
    interpolant of direction * chi(r) with chi a cubic cutoff falling from 1
    at the cylinder to 0 at distance `width` (default: one radius).
    """
    mesh = space.mesh
    d = np.asarray(direction, dtype=float)
    const = lambda x: np.tile(d, (len(x), 1))
    if kind == "smooth":
        center, radius = mesh.cylinder_circle()
        w = radius if width is None else width
        if w <= 0:
            raise FunctionalError(f"Extension width must be positive, got {w}")

        def fn(x):
            r = np.hypot(x[:, 0] - center[0], x[:, 1] - center[1])
            return _smoothstep((r - radius) / w)[:, None] * d[None, :]

        coeffs = space.interpolate(fn)
        outer = [m for m in ("inflow", "outflow", "walls") if np.any(mesh.edge_markers == MARKERS[m])]
        if outer:
            outer_dofs = space.boundary_dofs(outer)
            if np.any(np.abs(coeffs[outer_dofs]) > 0):
                raise FunctionalError(f"Cutoff width {w} reaches the outer boundary")
        return coeffs
    if kind != "layer":
        raise FunctionalError(f"Unknown extension kind '{kind}'")
    if isinstance(space, VectorH1Space):
        dofs, values = space.boundary_values(["cylinder"], const)
        coeffs = np.zeros(space.n_dofs)
        coeffs[dofs] = values
        return coeffs
    if isinstance(space, BDMSpace):
        full = space.interpolate(const)
        cells = np.unique(mesh.edge_cells[mesh.edges_with_markers(["cylinder"]), 0])
        keep = np.unique(space.cell_dofs[cells].ravel())
        coeffs = np.zeros(space.n_dofs)
        coeffs[keep] = full[keep]
        return coeffs
    raise FunctionalError(f"No layer extension for {space!r}")


def drag_lift_volume(scheme: Scheme, state: FieldState, extensions: Dict[str, np.ndarray]) -> Dict[str, float]:
    """Force per direction from the momentum residual: omega(v) = -R(v)."""
    r = scheme.momentum_residual(state)
    return {name: -float(r @ v) for name, v in extensions.items()}


def divergence_norm(space: FESpace, u: np.ndarray, degree: Optional[int] = None) -> float:
    """||div u||_{L2}"""
    integ = cell_integrator(space.mesh, degree or 2 * space.order + 2)
    total, _ = integ.integrate(lambda chunk, i: integ.field(space, u, i)[2] ** 2)
    return math.sqrt(max(total, 0.0))


def kinetic_energy(space: FESpace, u: np.ndarray, degree: Optional[int] = None) -> float:
    """1/2 ||u||^2_{L2}"""
    integ = cell_integrator(space.mesh, degree or 2 * space.order + 2)
    total, _ = integ.integrate(lambda chunk, i: np.sum(integ.field(space, u, i)[0] ** 2, axis=-1))
    return 0.5 * total


class ForceEvaluator:
    """Computes a ForceSample for every state of a scheme."""

    def __init__(self, scheme: Scheme, extension: ExtensionKind = "layer", width: Optional[float] = None):
        self.scheme = scheme
        self.extensions = {
            name: extension_field(scheme.velocity_space, d, extension, width) for name, d in DIRECTIONS.items()
        }

    def sample(self, state: FieldState) -> ForceSample:
        s = self.scheme
        boundary = drag_lift_boundary(s.velocity_space, state.u, s.pressure_space, state.p, s.fluid.nu)
        if state.history:
            volume = drag_lift_volume(s, state, self.extensions)
        else:
            volume = {"drag": math.nan, "lift": math.nan}
        return ForceSample(
            t=state.t,
            drag_v=boundary["drag"][0],
            drag_p=boundary["drag"][1],
            lift_v=boundary["lift"][0],
            lift_p=boundary["lift"][1],
            drag_volume=volume["drag"],
            lift_volume=volume["lift"],
            div_norm=divergence_norm(s.velocity_space, state.u),
            energy=kinetic_energy(s.velocity_space, state.u),
        )


def mesh_has_cylinder(mesh: Mesh) -> bool:
    return bool(np.any(mesh.edge_markers == MARKERS["cylinder"]))
