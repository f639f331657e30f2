"""
H(div)-conforming DG schemes MCS_k and MCS_k^cf with SBDF2 time stepping.

Velocity is BDM_k with strongly imposed normal boundary moments; the
tangential coupling uses the symmetric interior penalty form of
int nu/2 D(u):D(v) with Nitsche boundary terms. Convection is explicit and
extrapolated (2 c(u^{n-1}) - c(u^{n-2})) with the upwind flux (MCS) or the
central flux (MCS_cf).

The pressure is eliminated through the perturbed constraint
B u - eps Mp p = 0, i.e. p = -div(u) / eps, which turns the implicit
operator into the SPD matrix  3/(2 dt) M + A_h + (1/eps) (div u, div v).
"""

import logging
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp

from utils.assembly_utils import DirichletCondition, constrain_matrix
from utils.form_utils import (
    c_cf_vector,
    c_upw_vector,
    cell_integrator,
    divergence_matrix,
    facet_integrator,
    forcing_vector,
    graddiv_matrix,
    interior_penalty_matrix,
    mass_matrix,
    nitsche_vector,
    quadrature_degree,
    upwind_matrix,
    viscous_matrix,
)
from utils.linsolve_utils import Factorization, SingularMatrixError, factorize
from utils.mesh_utils import Mesh
from utils.scheme_utils import (
    HDIV_SCHEMES,
    FieldState,
    FlowProblem,
    NumericalBlowupError,
    Scheme,
    SchemeConfig,
    SchemeError,
    dirichlet_condition,
)
from utils.space_utils import BDMSpace, DGSpace

logger = logging.getLogger(__name__)


class HdivDGScheme(Scheme):
    """SBDF2 IMEX scheme for BDM_k / P_{k-1} with eliminated or saddle-point pressure."""

    PICARD_TOL = 1e-10
    PICARD_MAX_ITERATIONS = 50

    def __init__(self, config: SchemeConfig, mesh: Mesh, problem: Optional[FlowProblem] = None):
        if config.scheme not in HDIV_SCHEMES:
            raise SchemeError(f"HdivDGScheme cannot run {config.scheme}")
        super().__init__(config, mesh, problem)
        k = config.order
        self.name = f"{config.scheme}_{k}"
        self.central = config.scheme == "MCS_cf"
        self.epsilon = float(self.fluid.epsilon_mcs)
        self.eps_elimination = config.eps_elimination
        self.velocity_space = BDMSpace(mesh, k)
        self.pressure_space = DGSpace(mesh, k - 1, piola=True)
        V, Q = self.velocity_space, self.pressure_space
        degree = quadrature_degree(k)
        self.cells = cell_integrator(mesh, degree)
        self.cells.cache(V, Q)
        self.interior = facet_integrator(mesh, degree, "interior")
        self.boundary = facet_integrator(mesh, degree, "boundary")
        nu = self.fluid.nu
        self.M = mass_matrix(self.cells, V)
        self.A_volume = viscous_matrix(self.cells, V, nu)
        self.S_interior = interior_penalty_matrix(self.interior, V, nu)
        self.S_boundary = interior_penalty_matrix(self.boundary, V, nu)
        self.A = (self.A_volume + self.S_interior + self.S_boundary).tocsr()
        self.B = divergence_matrix(self.cells, V, Q)
        self.Gd = graddiv_matrix(self.cells, V, 1.0)
        self.Mp = mass_matrix(self.cells, Q)
        self._mp_factor = factorize(self.Mp)
        self._factors: Dict[str, Factorization] = {}
        self._raw: Dict[str, sp.csr_matrix] = {}
        self._fixed = dirichlet_condition(V, self.problem, 0.0).dofs
        logger.info(
            f"{self.name}: {V.n_dofs} velocity dofs, {Q.n_dofs} pressure dofs, eps={self.epsilon:.3e}, "
            f"{'eps-elimination' if self.eps_elimination else 'saddle-point'} path"
        )

    # -- operators -----------------------------------------------------

    def _operator(self, key: str, mass_coefficient: float) -> sp.csr_matrix:
        """Unconstrained implicit operator for the given mass weight."""
        if key not in self._raw:
            K = mass_coefficient * self.M + self.A
            if self.eps_elimination:
                K = K + self.Gd / self.epsilon
            else:
                K = sp.bmat([[K, self.B.T], [self.B, -self.epsilon * self.Mp]], format="csr")
            self._raw[key] = K.tocsr()
        return self._raw[key]

    def _factor(self, key: str, mass_coefficient: float) -> Factorization:
        if key not in self._factors:
            K = self._operator(key, mass_coefficient)
            try:
                self._factors[key] = factorize(constrain_matrix(K, self._fixed))
            except SingularMatrixError as e:
                raise SchemeError(f"{self.name}: factorization of the '{key}' operator failed: {e}") from e
            self.stats.refactorizations += 1
        return self._factors[key]

    def _solve(self, key: str, mass_coefficient: float, rhs_u: np.ndarray, condition: DirichletCondition):
        K = self._operator(key, mass_coefficient)
        nu = self.velocity_space.n_dofs
        rhs = rhs_u if self.eps_elimination else np.concatenate([rhs_u, np.zeros(self.pressure_space.n_dofs)])
        g = condition.full(K.shape[0])
        rhs = rhs - K @ g
        rhs[condition.dofs] = condition.values
        x = self._factor(key, mass_coefficient).solve(rhs)
        if self.eps_elimination:
            return x, self.pressure_from_velocity(x)
        return x[:nu], x[nu:]

    def pressure_from_velocity(self, u: np.ndarray) -> np.ndarray:
        """p = -div(u) / eps projected onto the pressure space."""
        return self._mp_factor.solve(self.B @ u) / self.epsilon

    def _convection(self, u: np.ndarray, t: float) -> np.ndarray:
        if not self.problem.convection:
            return np.zeros(self.velocity_space.n_dofs)
        g = self.problem.boundary_value(t)
        fn = c_cf_vector if self.central else c_upw_vector
        return fn(self.cells, self.interior, self.boundary, self.velocity_space, u, g)

    def _data(self, t: float) -> np.ndarray:
        """Nitsche boundary data and forcing at time t."""
        V = self.velocity_space
        rhs = nitsche_vector(self.boundary, V, self.fluid.nu, self.problem.boundary_value(t))
        if self.problem.forcing is not None:
            rhs = rhs + forcing_vector(self.cells, V, self.problem.forcing_at(t))
        return rhs

    # -- operations ----------------------------------------------------

    def steady_solve(self, convection: bool = True, t: float = 0.0) -> FieldState:
        """Steady problem by Picard (Oseen) iteration with the upwind convection matrix."""
        V = self.velocity_space
        condition = dirichlet_condition(V, self.problem, t)
        data = self._data(t)
        u, p = self._solve("steady", 0.0, data, condition)
        if convection and self.problem.convection:
            g = self.problem.boundary_value(t)
            base = self._operator("steady", 0.0)
            for it in range(self.PICARD_MAX_ITERATIONS):
                C, inflow = upwind_matrix(self.cells, self.interior, self.boundary, V, u, g)
                if not self.eps_elimination:
                    C = sp.block_diag([C, sp.csr_matrix((self.pressure_space.n_dofs,) * 2)], format="csr")
                K = base + C
                rhs = data + inflow
                rhs_full = rhs if self.eps_elimination else np.concatenate([rhs, np.zeros(self.pressure_space.n_dofs)])
                A_c, b_c = condition.apply(K, rhs_full)
                try:
                    x = factorize(A_c).solve(b_c)
                except SingularMatrixError as e:
                    raise SchemeError(f"{self.name}: Oseen solve failed: {e}") from e
                u_new = x[: V.n_dofs]
                change = np.linalg.norm(u_new - u) / max(np.linalg.norm(u_new), 1e-300)
                u = u_new
                p = self.pressure_from_velocity(u) if self.eps_elimination else x[V.n_dofs:]
                if change < self.PICARD_TOL:
                    logger.info(f"{self.name}: Picard converged in {it + 1} iterations")
                    break
            else:
                raise SchemeError(f"{self.name}: Picard iteration did not converge (last change {change:.3e})")
        state = FieldState(t=t, step=0, u=u, p=p)
        self._check_state(state)
        return state

    def initialize(self) -> FieldState:
        init = self.config.initializer
        V = self.velocity_space
        if init == "stokes":
            state = self.steady_solve(convection=False, t=0.0)
        elif init == "impulsive":
            u = V.interpolate(lambda x: np.tile([1.0, 0.0], (len(x), 1)))
            condition = dirichlet_condition(V, self.problem, 0.0)
            u[condition.dofs] = condition.values
            state = FieldState(t=0.0, step=0, u=u, p=np.zeros(self.pressure_space.n_dofs))
        else:
            if self.problem.initial_velocity is None:
                raise SchemeError("initializer 'interpolate' needs FlowProblem.initial_velocity")
            u = V.interpolate(self.problem.initial_velocity)
            state = FieldState(t=0.0, step=0, u=u, p=np.zeros(self.pressure_space.n_dofs))
        logger.info(f"{self.name}: initialized with '{init}'")
        return state

    def _step_rhs(self, state: FieldState, t_new: float) -> np.ndarray:
        dt = self.dt
        if len(state.history) == 0:
            return self.M @ state.u / dt - self._convection(state.u, state.t) + self._data(t_new)
        u1, u2 = state.u, state.history[0]
        t1, t2 = state.t, state.t - dt
        explicit = 2.0 * self._convection(u1, t1) - self._convection(u2, t2)
        return self.M @ (2.0 * u1 - 0.5 * u2) / dt - explicit + self._data(t_new)

    def step(self, state: FieldState) -> FieldState:
        """One SBDF2 step; the first step is IMEX Euler."""
        n = state.step + 1
        t_new = n * self.dt
        condition = dirichlet_condition(self.velocity_space, self.problem, t_new)
        startup = len(state.history) == 0
        key, weight = ("euler", 1.0 / self.dt) if startup else ("sbdf2", 1.5 / self.dt)
        rhs = self._step_rhs(state, t_new)
        try:
            u, p = self._solve(key, weight, rhs, condition)
        except SingularMatrixError as e:
            raise NumericalBlowupError(f"{self.name}: linear solve failed: {e}", t_new, n) from e
        self.stats.steps += 1
        new = FieldState(t=t_new, step=n, u=u, p=p, history=[state.u.copy()] + state.history[:1])
        self._check_state(new)
        return new

    def momentum_residual(self, state: FieldState) -> np.ndarray:
        """Residual of the SBDF2 (or startup) equation with interior-only penalty terms.

        The Nitsche boundary terms are left out: they carry the boundary
        traction the force functional measures.
        """
        if not state.history:
            raise SchemeError("momentum residual needs the previous time level")
        dt = self.dt
        u = state.u
        t_prev = state.t - dt
        if len(state.history) >= 2:
            dudt = self.M @ (1.5 * u - 2.0 * state.history[0] + 0.5 * state.history[1]) / dt
            u1, u2 = state.history[0], state.history[1]
            explicit = 2.0 * self._convection(u1, t_prev) - self._convection(u2, t_prev - dt)
        else:
            dudt = self.M @ (u - state.history[0]) / dt
            explicit = self._convection(state.history[0], t_prev)
        r = dudt + (self.A_volume + self.S_interior) @ u + explicit + self.B.T @ state.p
        if self.problem.forcing is not None:
            r = r - forcing_vector(self.cells, self.velocity_space, self.problem.forcing_at(state.t))
        return r
