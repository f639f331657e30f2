"""
Fully discrete Navier-Stokes schemes on the cylinder channel.

The Crank-Nicolson family (TH, gdTH, SV) lives here together with the
quasi-Newton solver, the shared state types and the time loop. The
H(div)-DG SBDF2 schemes (MCS, MCS_cf) are in utils.hdiv_dg_utils and are
created through `create_scheme`.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, Field, model_validator

from utils.assembly_utils import DirichletCondition, constrain_matrix
from utils.form_utils import (
    FluidParams,
    cell_integrator,
    convection_matrices,
    c_div_vector,
    divergence_matrix,
    forcing_vector,
    graddiv_matrix,
    mass_matrix,
    pressure_mean_vector,
    quadrature_degree,
    viscous_matrix,
)
from utils.geometry_utils import MARKER_NAMES
from utils.linsolve_utils import Factorization, SingularMatrixError, factorize
from utils.mesh_utils import Mesh, check_singular_vertices
from utils.space_utils import DGSpace, FESpace, H1Space, VectorH1Space

logger = logging.getLogger(__name__)

SchemeName = Literal["TH", "gdTH", "SV", "MCS", "MCS_cf"]
CN_SCHEMES = ("TH", "gdTH", "SV")
HDIV_SCHEMES = ("MCS", "MCS_cf")


class SchemeError(RuntimeError):
    """Invalid scheme setup or unrecoverable solver failure."""


class NumericalBlowupError(SchemeError):
    """Non-finite values in the discrete solution or residual."""

    def __init__(self, message: str, t: float, step: int):
        super().__init__(f"{message} (t={t:.6g}, step {step})")
        self.t = t
        self.step = step


class NonlinearSolverParams(BaseModel):
    refactor_threshold: float = Field(default=0.3, gt=0, lt=1)
    line_search_max_halvings: int = Field(default=20, ge=0)
    residual_tol: float = Field(default=1e-9, gt=0)
    max_iterations: int = Field(default=30, ge=1)


class SchemeConfig(BaseModel):
    scheme: SchemeName
    order: int = Field(ge=1)
    dt: float = Field(gt=0)
    t_end: float = Field(default=500.0, ge=0)
    fluid: FluidParams
    newton: NonlinearSolverParams = Field(default_factory=NonlinearSolverParams)
    initializer: Literal["stokes", "impulsive", "interpolate"] = "stokes"
    eps_elimination: bool = True

    @model_validator(mode="after")
    def _check_order(self):
        if self.scheme in CN_SCHEMES and self.order < 2:
            raise ValueError(f"{self.scheme} needs velocity order >= 2, got {self.order}")
        if self.scheme == "SV" and self.order < 4:
            raise ValueError(f"SV is only inf-sup stable on general meshes for order >= 4, got {self.order}")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class FieldState:
    t: float
    step: int
    u: np.ndarray
    p: np.ndarray
    history: List[np.ndarray] = field(default_factory=list)  # [u^{n-1}, u^{n-2}]
    sigma: Optional[np.ndarray] = None

    def copy(self) -> "FieldState":
        return FieldState(
            t=self.t,
            step=self.step,
            u=self.u.copy(),
            p=self.p.copy(),
            history=[h.copy() for h in self.history],
            sigma=None if self.sigma is None else self.sigma.copy(),
        )


@dataclass
class SolverStats:
    steps: int = 0
    newton_iterations: int = 0
    refactorizations: int = 0
    line_search_halvings: int = 0
    nonconverged_steps: int = 0

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)


VelocityData = Callable[[np.ndarray, float, str], np.ndarray]
ForcingData = Callable[[np.ndarray, float], np.ndarray]


@dataclass
class FlowProblem:
    """Boundary data, forcing and initial data of a flow problem.

    `velocity(x, t, marker)` gives the Dirichlet velocity on the named
    boundary part; every boundary part is of Dirichlet type.
    """

    velocity: VelocityData
    forcing: Optional[ForcingData] = None
    initial_velocity: Optional[Callable[[np.ndarray], np.ndarray]] = None
    convection: bool = True

    @classmethod
    def cylinder_benchmark(cls) -> "FlowProblem":
        def velocity(x, t, marker):
            out = np.zeros((len(x), 2))
            if marker != "cylinder":
                out[:, 0] = 1.0
            return out

        return cls(velocity=velocity)

    def boundary_value(self, t: float):
        """Marker-dependent boundary data at time t, in the facet-form signature."""
        return lambda x, marker: self.velocity(x, t, marker)

    def forcing_at(self, t: float):
        if self.forcing is None:
            return None
        return lambda x: self.forcing(x, t)


def boundary_markers(mesh: Mesh) -> List[str]:
    codes = np.unique(mesh.edge_markers[mesh.boundary_edges])
    return [MARKER_NAMES[int(c)] for c in codes]


def dirichlet_condition(space: FESpace, problem: FlowProblem, t: float) -> DirichletCondition:
    """Strong velocity data on every boundary part (normal moments only for BDM)."""
    dofs, values = [], []
    for marker in boundary_markers(space.mesh):
        d, v = space.boundary_values([marker], lambda x, m=marker: problem.velocity(x, t, m))
        dofs.append(d)
        values.append(v)
    if not dofs:
        return DirichletCondition(np.zeros(0, dtype=np.int64), np.zeros(0))
    dofs = np.concatenate(dofs)
    values = np.concatenate(values)
    # shared dofs between parts: keep the first occurrence
    unique, first = np.unique(dofs, return_index=True)
    return DirichletCondition(unique, values[first])


def _is_finite(*arrays: np.ndarray) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


class NewtonSolver:
    """Quasi-Newton iteration with factorization reuse and step halving.

    The factorized Jacobian is kept across calls and refreshed when the
    residual decreases by less than `refactor_threshold` per iteration or a
    line search fails with a stale factor.
    """

    def __init__(self, params: NonlinearSolverParams, stats: SolverStats):
        self.params = params
        self.stats = stats
        self.factor: Optional[Factorization] = None
        self.x_jac: Optional[np.ndarray] = None

    def reset(self) -> None:
        self.factor = None
        self.x_jac = None

    def refactor(self, x: np.ndarray, jacobian: Callable[[np.ndarray], sp.spmatrix]) -> None:
        self.factor = factorize(jacobian(x))
        self.x_jac = x.copy()
        self.stats.refactorizations += 1

    def solve(
        self,
        x: np.ndarray,
        residual: Callable[[np.ndarray], np.ndarray],
        jacobian: Callable[[np.ndarray], sp.spmatrix],
        scale: float,
        t: float = 0.0,
    ) -> Tuple[np.ndarray, bool, int]:
        """Returns (x, converged, iterations)."""
        p = self.params
        r = residual(x)
        res = float(np.linalg.norm(r))
        if not math.isfinite(res):
            raise NumericalBlowupError("Non-finite residual at the initial guess", t, self.stats.steps)
        tol = p.residual_tol * max(scale, res)
        iterations = 0
        while res > tol:
            if iterations >= p.max_iterations:
                return x, False, iterations
            if self.factor is None:
                self.refactor(x, jacobian)
            fresh = self.x_jac is not None and np.array_equal(self.x_jac, x)
            dx = self.factor.solve(-r)
            accepted = False
            step = 1.0
            for halving in range(p.line_search_max_halvings + 1):
                x_try = x + step * dx
                r_try = residual(x_try)
                res_try = float(np.linalg.norm(r_try))
                if math.isfinite(res_try) and res_try < res:
                    accepted = True
                    self.stats.line_search_halvings += halving
                    break
                step *= 0.5
            if not accepted:
                if fresh:
                    logger.warning(f"t={t:.6g}: line search failed with a fresh Jacobian (residual {res:.3e})")
                    return x, False, iterations
                self.factor = None
                continue
            iterations += 1
            self.stats.newton_iterations += 1
            if res_try > p.refactor_threshold * res:
                self.factor = None
            x, r, res = x_try, r_try, res_try
        return x, True, iterations


class Scheme:
    """Common surface of all schemes."""

    name: str = "abstract"

    def __init__(self, config: SchemeConfig, mesh: Mesh, problem: Optional[FlowProblem] = None):
        self.config = config
        self.mesh = mesh
        self.problem = problem or FlowProblem.cylinder_benchmark()
        self.fluid = config.fluid
        self.dt = config.dt
        self.stats = SolverStats()
        self.velocity_space: FESpace
        self.pressure_space: FESpace

    def initialize(self) -> FieldState:
        raise NotImplementedError

    def step(self, state: FieldState) -> FieldState:
        raise NotImplementedError

    def steady_solve(self, convection: bool = True, t: float = 0.0) -> FieldState:
        raise NotImplementedError

    def momentum_residual(self, state: FieldState) -> np.ndarray:
        """Momentum residual of the step that produced `state`, without boundary conditions.

        Tested with a velocity field v this is the discrete equation the scheme
        solved; with v nonzero on the cylinder it measures the force there.
        """
        raise NotImplementedError

    def solver_state(self) -> Dict[str, np.ndarray]:
        return {}

    def restore_solver_state(self, data: Dict[str, np.ndarray]) -> None:
        pass

    def _check_state(self, state: FieldState) -> None:
        if not _is_finite(state.u, state.p):
            raise NumericalBlowupError(f"{self.name}: non-finite solution", state.t, state.step)


class CrankNicolsonScheme(Scheme):
    """TH_k, gdTH_k and SV_k: Crank-Nicolson in time, quasi-Newton per step.

    Unknowns are [u, p, lam] with `lam` the multiplier fixing the pressure
    mean. Pressure and grad-div terms are taken at the new level only.
    """

    def __init__(self, config: SchemeConfig, mesh: Mesh, problem: Optional[FlowProblem] = None):
        if config.scheme not in CN_SCHEMES:
            raise SchemeError(f"CrankNicolsonScheme cannot run {config.scheme}")
        super().__init__(config, mesh, problem)
        self.name = f"{config.scheme}_{config.order}"
        k = config.order
        if config.scheme == "SV":
            report = check_singular_vertices(mesh)
            if not report.clean:
                raise SchemeError(
                    f"SV needs a mesh without (nearly) singular vertices; flagged {len(report.flagged)} interior "
                    f"and {len(report.boundary_flagged)} boundary vertices"
                )
        self.velocity_space = VectorH1Space(mesh, k)
        if config.scheme == "SV":
            self.pressure_space = DGSpace(mesh, k - 1)
        else:
            self.pressure_space = H1Space(mesh, k - 1)
        self.integrator = cell_integrator(mesh, quadrature_degree(k))
        self.integrator.cache(self.velocity_space, self.pressure_space)
        V, Q = self.velocity_space, self.pressure_space
        self.nu_dofs, self.np_dofs = V.n_dofs, Q.n_dofs
        self.M = mass_matrix(self.integrator, V)
        self.A = viscous_matrix(self.integrator, V, self.fluid.nu)
        self.B = divergence_matrix(self.integrator, V, Q)
        gamma = self.fluid.gamma_gd if config.scheme == "gdTH" else 0.0
        self.G = graddiv_matrix(self.integrator, V, gamma) if gamma > 0 else sp.csr_matrix((V.n_dofs, V.n_dofs))
        self.mean = pressure_mean_vector(self.integrator, Q)
        self.newton = NewtonSolver(config.newton, self.stats)
        self._forcing_cache: Dict[float, np.ndarray] = {}
        logger.info(
            f"{self.name}: {V.n_dofs} velocity dofs, {Q.n_dofs} pressure dofs, "
            f"{mesh.n_cells} cells, dt={self.dt}"
        )

    # -- pieces --------------------------------------------------------

    @property
    def n_unknowns(self) -> int:
        return self.nu_dofs + self.np_dofs + 1

    def split(self, x: np.ndarray):
        return x[: self.nu_dofs], x[self.nu_dofs: self.nu_dofs + self.np_dofs], x[-1]

    def _forcing(self, t: float) -> np.ndarray:
        if self.problem.forcing is None:
            return np.zeros(self.nu_dofs)
        if t not in self._forcing_cache:
            if len(self._forcing_cache) > 4:
                self._forcing_cache.clear()
            self._forcing_cache[t] = forcing_vector(self.integrator, self.velocity_space, self.problem.forcing_at(t))
        return self._forcing_cache[t]

    def _convection(self, u: np.ndarray, convection: bool) -> np.ndarray:
        if not convection:
            return np.zeros(self.nu_dofs)
        return c_div_vector(self.integrator, self.velocity_space, u)

    def _saddle(self, K: sp.spmatrix) -> sp.csr_matrix:
        m = sp.csr_matrix(self.mean.reshape(-1, 1))
        return sp.bmat([[K, self.B.T, None], [self.B, None, m], [None, m.T, None]], format="csr")

    def _system(
        self, K: sp.spmatrix, base: np.ndarray, condition: DirichletCondition, convection: bool, half: float
    ):
        """Residual and Jacobian closures for K u + half N(u) + B^T p + base."""
        fixed = condition.dofs

        def residual(x):
            u, p, lam = self.split(x)
            r_u = K @ u + half * self._convection(u, convection) + self.B.T @ p + base
            r_p = self.B @ u + self.mean * lam
            r_l = np.array([self.mean @ p])
            r = np.concatenate([r_u, r_p, r_l])
            r[fixed] = 0.0
            return r

        def jacobian(x):
            J = K
            if convection:
                u, _, _ = self.split(x)
                picard, newton = convection_matrices(self.integrator, self.velocity_space, u)
                J = K + half * (picard + newton)
            return constrain_matrix(self._saddle(J), fixed)

        return residual, jacobian

    def _lift(self, x: np.ndarray, condition: DirichletCondition) -> np.ndarray:
        x = x.copy()
        x[condition.dofs] = condition.values
        return x

    # -- operations ----------------------------------------------------

    def steady_solve(self, convection: bool = True, t: float = 0.0, x0: Optional[np.ndarray] = None) -> FieldState:
        """Steady problem at time t; Stokes when `convection` is False."""
        condition = dirichlet_condition(self.velocity_space, self.problem, t)
        K = self.A + self.G
        base = -self._forcing(t)
        residual, jacobian = self._system(K, base, condition, convection and self.problem.convection, 1.0)
        x = self._lift(np.zeros(self.n_unknowns) if x0 is None else x0, condition)
        solver = NewtonSolver(self.config.newton, self.stats)
        scale = max(float(np.linalg.norm(base)), 1.0)
        try:
            x, converged, iterations = solver.solve(x, residual, jacobian, scale, t)
        except SingularMatrixError as e:
            raise SchemeError(f"{self.name}: steady solve failed: {e}") from e
        if not converged:
            raise SchemeError(f"{self.name}: steady solve did not converge in {iterations} iterations")
        u, p, _ = self.split(x)
        state = FieldState(t=t, step=0, u=u.copy(), p=p.copy())
        self._check_state(state)
        return state

    def initialize(self) -> FieldState:
        init = self.config.initializer
        if init == "stokes":
            state = self.steady_solve(convection=False, t=0.0)
        elif init == "impulsive":
            state = self._impulsive()
        else:
            if self.problem.initial_velocity is None:
                raise SchemeError("initializer 'interpolate' needs FlowProblem.initial_velocity")
            u = self.velocity_space.interpolate(self.problem.initial_velocity)
            state = FieldState(t=0.0, step=0, u=u, p=np.zeros(self.np_dofs))
        logger.info(f"{self.name}: initialized with '{init}'")
        return state

    def _impulsive(self) -> FieldState:
        """Interior velocity (1, 0), boundary dofs set to the data."""
        u = self.velocity_space.interpolate(lambda x: np.tile([1.0, 0.0], (len(x), 1)))
        condition = dirichlet_condition(self.velocity_space, self.problem, 0.0)
        u[condition.dofs] = condition.values
        return FieldState(t=0.0, step=0, u=u, p=np.zeros(self.np_dofs))

    def _step_terms(self, state: FieldState, t_new: float, convection: bool):
        dt = self.dt
        u_old = state.u
        K = self.M / dt + 0.5 * self.A + self.G
        base = (
            -(self.M @ u_old) / dt
            + 0.5 * (self.A @ u_old)
            + 0.5 * self._convection(u_old, convection)
            - 0.5 * (self._forcing(t_new) + self._forcing(state.t))
        )
        return K, base

    def step(self, state: FieldState) -> FieldState:
        n = state.step + 1
        t_new = n * self.dt
        convection = self.problem.convection
        K, base = self._step_terms(state, t_new, convection)
        condition = dirichlet_condition(self.velocity_space, self.problem, t_new)
        residual, jacobian = self._system(K, base, condition, convection, 0.5)
        x0 = np.concatenate([state.u, state.p, [0.0]])
        x0 = self._lift(x0, condition)
        scale = float(np.linalg.norm(self.M @ state.u)) / self.dt
        try:
            x, converged, iterations = self.newton.solve(x0, residual, jacobian, scale, t_new)
        except SingularMatrixError as e:
            raise NumericalBlowupError(f"{self.name}: linear solve failed: {e}", t_new, n) from e
        self.stats.steps += 1
        if not converged:
            self.stats.nonconverged_steps += 1
            logger.warning(f"{self.name}: Newton did not converge at t={t_new:.6g} after {iterations} iterations")
        u, p, _ = self.split(x)
        new = FieldState(t=t_new, step=n, u=u.copy(), p=p.copy(), history=[state.u.copy()])
        self._check_state(new)
        return new

    def momentum_residual(self, state: FieldState) -> np.ndarray:
        if not state.history:
            raise SchemeError("momentum residual needs the previous time level")
        u_old = state.history[0]
        prev = FieldState(t=state.t - self.dt, step=state.step - 1, u=u_old, p=state.p)
        K, base = self._step_terms(prev, state.t, self.problem.convection)
        return K @ state.u + 0.5 * self._convection(state.u, self.problem.convection) + self.B.T @ state.p + base

    def solver_state(self) -> Dict[str, np.ndarray]:
        if self.newton.x_jac is None or self.newton.factor is None:
            return {}
        return {"x_jac": self.newton.x_jac}

    def restore_solver_state(self, data: Dict[str, np.ndarray]) -> None:
        """Rebuild the cached Jacobian factor so a restart repeats the same iterates."""
        self.newton.reset()
        if "x_jac" not in data:
            return
        x_jac = np.asarray(data["x_jac"], dtype=float)
        u, _, _ = self.split(x_jac)
        K = self.M / self.dt + 0.5 * self.A + self.G
        # constrained dofs do not depend on time
        condition = dirichlet_condition(self.velocity_space, self.problem, 0.0)
        _, jacobian = self._system(K, np.zeros(self.nu_dofs), condition, self.problem.convection, 0.5)
        self.newton.refactor(x_jac, jacobian)


def create_scheme(config: SchemeConfig, mesh: Mesh, problem: Optional[FlowProblem] = None) -> Scheme:
    if config.scheme in CN_SCHEMES:
        return CrankNicolsonScheme(config, mesh, problem)
    from utils.hdiv_dg_utils import HdivDGScheme

    return HdivDGScheme(config, mesh, problem)


StepObserver = Callable[[Scheme, FieldState], None]


def run_scheme(
    scheme: Scheme,
    state: FieldState,
    t_end: float,
    observers: Sequence[StepObserver] = (),
) -> FieldState:
    """Advance `state` to t_end, calling every observer after each step."""
    n_end = int(round(t_end / scheme.dt))
    if state.step >= n_end:
        return state
    logger.info(f"{scheme.name}: stepping from t={state.t:.6g} to t={n_end * scheme.dt:.6g} ({n_end - state.step} steps)")
    while state.step < n_end:
        state = scheme.step(state)
        for observer in observers:
            observer(scheme, state)
    return state
