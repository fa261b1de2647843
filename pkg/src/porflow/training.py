"""Per-timestep physics-informed training with weight transfer.

Step 1 starts from variance-scaled random weights; every later step starts
from the previous step's trained weights and takes the previous network
output (detached) as its lagged state, so training marches through the
schedule exactly like the implicit time loop it mimics.  No labeled states
enter the loss: the physics term is the FVM residual of the network output,
optionally regularized by observed producer well-block pressures.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoints import CheckpointSet, StepCheckpoint
from .core import ControlSchedule, ReservoirCase, State, corey_relperm
from .errors import DivergedTraining, MissingObservation, ValidationError
from .fvm import ResidualAssembler, assemble_residual
from .network import (
    NetworkSpec,
    NormalizationBounds,
    PicnnModel,
    ScalingParams,
    build_model,
    rasterize_controls,
)
from .newton import StepDiagnostics, Trajectory

_DTYPES = {"<f8": torch.float64, "<f4": torch.float32}


@dataclass(frozen=True)
class TrainerConfig:
    lr0: float = 0.01
    lr_decay: float = 0.995
    lr_decay_every: int = 100
    smooth_l1_beta: float = 10.0
    sigma: float = 0.05
    max_epochs: int = 2000
    physics_weight: float = 1.0
    data_weight: float = 0.01
    seed: int = 0
    dtype: str = "<f8"

    def __post_init__(self):
        if min(self.lr0, self.lr_decay, self.smooth_l1_beta, self.sigma) <= 0:
            raise ValidationError("trainer parameters must be positive")
        if self.max_epochs < 1 or self.lr_decay_every < 1:
            raise ValidationError("epoch counts must be >= 1")
        if self.dtype not in _DTYPES:
            raise ValidationError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]


def smooth_l1(values, beta: float, target=0.0, reduction: str = "mean"):
    """Smooth-L1 penalty: quadratic below ``beta``, linear above, mean-reduced."""
    if beta <= 0:
        raise ValidationError("smooth-L1 beta must be > 0")
    d = values - target
    a = abs(d) if not isinstance(d, torch.Tensor) else d.abs()
    per_elem = torch.where(a < beta, 0.5 * d * d / beta, a - 0.5 * beta) if isinstance(
        d, torch.Tensor
    ) else np.where(a < beta, 0.5 * d * d / beta, a - 0.5 * beta)
    if reduction == "mean":
        return per_elem.mean()
    if reduction == "sum":
        return per_elem.sum()
    return per_elem


def physics_loss(
    state_k_nn: State,
    state_km1: State,
    controls_k: dict[str, float],
    dt: float,
    case: ReservoirCase,
    beta: float = 10.0,
    assembler: ResidualAssembler | None = None,
):
    """Smooth-L1 of the oil and water residuals, summed over the two phases.

    Residuals are in STB/day; the reduction is a mean over cells per phase.
    Differentiable with respect to the network-produced state fields.
    """
    bundle = assemble_residual(state_k_nn, state_km1, controls_k, dt, case, assembler)
    return smooth_l1(bundle.r_o, beta) + smooth_l1(bundle.r_w, beta)


def data_loss(state: State, producers, observed_wbp: dict[str, float]):
    """Mean absolute well-block-pressure misfit over producers (psia)."""
    errs = []
    for w in producers:
        if w.name not in observed_wbp:
            raise MissingObservation(f"no WBP observation for producer {w.name}")
        p_cell = state.pressure[w.j, w.i]
        diff = p_cell - observed_wbp[w.name]
        errs.append(diff.abs() if isinstance(diff, torch.Tensor) else abs(diff))
    if not errs:
        raise MissingObservation("no producers to regularize on")
    total = errs[0]
    for e in errs[1:]:
        total = total + e
    return total / len(errs)


@dataclass
class StepTrainResult:
    state: State  # detached torch fields
    epochs_used: int
    final_loss: float
    final_physics_loss: float
    final_data_loss: float | None
    wall_time: float


def train_timestep(
    model: PicnnModel,
    image: torch.Tensor,
    state_km1: State,
    controls_k: dict[str, float],
    dt: float,
    case: ReservoirCase,
    cfg: TrainerConfig,
    observations: dict[str, float] | None = None,
    assembler: ResidualAssembler | None = None,
) -> StepTrainResult:
    """Minimize the (optionally regularized) physics loss for one timestep.

    The stopping test precedes the optimizer step, so a loss already at or
    below sigma returns immediately with zero epochs used.
    """
    t0 = time.perf_counter()
    asm = assembler if assembler is not None else ResidualAssembler(case)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr0)
    sched = torch.optim.lr_scheduler.StepLR(
        opt, step_size=cfg.lr_decay_every, gamma=cfg.lr_decay
    )

    def losses():
        p, sw = model(image)
        state = State(pressure=p, sw=sw)
        l_phy = physics_loss(
            state, state_km1, controls_k, dt, case, cfg.smooth_l1_beta, asm
        )
        l_dat = None
        total = cfg.physics_weight * l_phy
        if observations is not None:
            l_dat = data_loss(state, case.producers, observations)
            total = total + cfg.data_weight * l_dat
        return total, l_phy, l_dat

    epochs_used = 0
    for _ in range(cfg.max_epochs):
        total, _, _ = losses()
        if not torch.isfinite(total):
            raise DivergedTraining("training loss became non-finite")
        if float(total.detach()) <= cfg.sigma:
            break
        opt.zero_grad()
        total.backward()
        opt.step()
        sched.step()
        epochs_used += 1

    with torch.no_grad():
        total, l_phy, l_dat = losses()
        p, sw = model(image)
    if not torch.isfinite(total):
        raise DivergedTraining("training loss became non-finite")
    return StepTrainResult(
        state=State(pressure=p.detach(), sw=sw.detach()),
        epochs_used=epochs_used,
        final_loss=float(total),
        final_physics_loss=float(l_phy),
        final_data_loss=None if l_dat is None else float(l_dat),
        wall_time=time.perf_counter() - t0,
    )


def _steady_pressure_estimate(case: ReservoirCase, schedule: ControlSchedule) -> float:
    """Maximum of a steady single-phase pressure solve at endpoint mobility.

    Rate-controlled wells inject their largest scheduled rate and BHP wells
    act as Peaceman sinks at their largest scheduled pressure, so the result
    is an upper estimate of how far the injectors can pressurize the field.
    The total mobility dips below both endpoint values at intermediate
    saturations, but only part of the field sits in that dip, so the solve
    uses the geometric mean of the smaller endpoint mobility and the dip
    minimum.
    """
    import scipy.sparse as sp
    from scipy.sparse.linalg import spsolve

    asm = ResidualAssembler(case)
    grid = case.grid
    n = grid.n_cells
    rp, fl = case.relperm, case.fluid
    sw_grid = np.linspace(rp.s_wc, 1.0 - rp.s_or, 101)
    krw, kro = corey_relperm(sw_grid, rp)
    lam_curve = krw / fl.water.viscosity + kro / fl.oil.viscosity
    lam_end = min(rp.krw0 / fl.water.viscosity, rp.kro0 / fl.oil.viscosity)
    lam = float(np.sqrt(lam_end * np.min(lam_curve)))

    idx = np.arange(n).reshape(grid.ny, grid.nx)
    diag = np.zeros(n)
    off_rows, off_cols, off_vals = [], [], []
    links = []
    if grid.nx > 1:
        links.append((idx[:, :-1].ravel(), idx[:, 1:].ravel(),
                      np.asarray(asm.faces.gx, dtype=float).ravel()))
    if grid.ny > 1:
        links.append((idx[:-1, :].ravel(), idx[1:, :].ravel(),
                      np.asarray(asm.faces.gy, dtype=float).ravel()))
    for a, b, g in links:
        t = lam * g
        off_rows += [a, b]
        off_cols += [b, a]
        off_vals += [-t, -t]
        np.add.at(diag, a, t)
        np.add.at(diag, b, t)

    rhs = np.zeros(n)
    p0 = float(np.max(case.initial_state.pressure))
    anchored = False
    for w in case.wells:
        cell = int(w.j) * grid.nx + int(w.i)
        scheduled = np.asarray(schedule.values[w.name], dtype=float)
        if w.is_injector:
            rhs[cell] += float(np.max(scheduled))
        else:
            wi_lam = lam * asm.well_indices[w.name]
            diag[cell] += wi_lam
            rhs[cell] += wi_lam * float(np.max(scheduled))
            anchored = True
    if not anchored:  # pure-injection system: pin the level at p0
        diag += 1e-9
        rhs += 1e-9 * p0

    rows = np.concatenate(off_rows + [np.arange(n)])
    cols = np.concatenate(off_cols + [np.arange(n)])
    vals = np.concatenate(off_vals + [diag])
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return float(np.max(spsolve(mat, rhs)))


def default_scaling(case: ReservoirCase, schedule: ControlSchedule) -> ScalingParams:
    """Pressure bounds from the schedule and initial condition; saturation
    window from the relperm endpoints.

    The ceiling must comfortably contain the highest reachable pressure: a
    solution pinned against the sigmoid tail trains orders of magnitude
    slower, so the injector-driven pressure rise is estimated with a steady
    single-phase solve and padded.
    """
    bhps = [
        v for w in case.producers for v in np.asarray(schedule.values[w.name])
    ]
    p_floor = (min(bhps) if bhps else float(np.min(case.initial_state.pressure))) - 200.0
    p0 = float(np.max(case.initial_state.pressure))
    rise = max(0.0, _steady_pressure_estimate(case, schedule) - p0)
    p_ceil = p0 + max(500.0, 1.3 * rise + 100.0)
    return ScalingParams(
        s_wc=case.relperm.s_wc, s_or=case.relperm.s_or, p_min=p_floor, p_max=p_ceil
    )


@dataclass
class TrainingRun:
    checkpoints: CheckpointSet
    trajectory: Trajectory  # network-predicted states recorded during training
    epochs: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    step_times: list[float] = field(default_factory=list)


def _state_to_torch(state: State, dtype) -> State:
    return State(
        pressure=torch.from_numpy(np.array(state.pressure, dtype=np.float64)).to(dtype),
        sw=torch.from_numpy(np.array(state.sw, dtype=np.float64)).to(dtype),
    )


def _weights_numpy(model: PicnnModel) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def train_all(
    case: ReservoirCase,
    schedule: ControlSchedule,
    cfg: TrainerConfig,
    net_spec: NetworkSpec | None = None,
    scaling: ScalingParams | None = None,
    bounds: NormalizationBounds | None = None,
    observations: dict[int, dict[str, float]] | None = None,
) -> TrainingRun:
    """Train one network per timestep, transferring weights between steps."""
    net_spec = net_spec or NetworkSpec()
    scaling = scaling or default_scaling(case, schedule)
    bounds = bounds or NormalizationBounds()
    dtype = cfg.torch_dtype
    model = build_model(net_spec, scaling, dtype=dtype, seed=cfg.seed)
    asm = ResidualAssembler(case)

    cs = CheckpointSet(
        network_spec=net_spec, scaling=scaling, bounds=bounds, dtype=cfg.dtype
    )
    states = [case.initial_state.to_numpy()]
    diags = []
    run = TrainingRun(checkpoints=cs, trajectory=None)
    state_prev = _state_to_torch(case.initial_state, dtype)
    for k in range(1, schedule.n_steps + 1):
        controls_k = schedule.at(k)
        image = torch.from_numpy(
            rasterize_controls(list(case.wells), controls_k, case.grid, bounds)
        ).to(dtype)
        obs_k = observations.get(k) if observations is not None else None
        try:
            result = train_timestep(
                model, image, state_prev, controls_k, schedule.dt, case, cfg,
                observations=obs_k, assembler=asm,
            )
        except DivergedTraining as exc:
            raise DivergedTraining(f"step {k}: {exc}") from exc
        cs.add(
            StepCheckpoint(
                step=k,
                weights=_weights_numpy(model),
                final_loss=result.final_loss,
                epochs_used=result.epochs_used,
                physics_loss=result.final_physics_loss,
                data_loss=result.final_data_loss,
            )
        )
        states.append(result.state.to_numpy())
        diags.append(
            StepDiagnostics(
                step=k,
                newton_iters=result.epochs_used,
                residual_norms=[result.final_loss],
                wall_time=result.wall_time,
            )
        )
        run.epochs.append(result.epochs_used)
        run.losses.append(result.final_loss)
        run.step_times.append(result.wall_time)
        state_prev = _state_to_torch(result.state.to_numpy(), dtype)
    run.trajectory = Trajectory(states=states, diagnostics=diags, dt=schedule.dt)
    return run


def infer_trajectory(
    cs: CheckpointSet, schedule: ControlSchedule, case: ReservoirCase
) -> Trajectory:
    """Sequential forward passes through a complete checkpoint set (no training)."""
    cs.verify_complete(schedule.n_steps)
    dtype = _DTYPES[cs.dtype]
    model = PicnnModel(cs.network_spec, cs.scaling).to(dtype)
    states = [case.initial_state.to_numpy()]
    diags = []
    for k in range(1, schedule.n_steps + 1):
        ckpt = cs.step_checkpoint(k)
        model.load_state_dict(
            {name: torch.from_numpy(arr).to(dtype) for name, arr in ckpt.weights.items()}
        )
        image = torch.from_numpy(
            rasterize_controls(list(case.wells), schedule.at(k), case.grid, cs.bounds)
        ).to(dtype)
        t0 = time.perf_counter()
        with torch.no_grad():
            p, sw = model(image)
        wall = time.perf_counter() - t0
        states.append(State(pressure=p.numpy(), sw=sw.numpy()))
        diags.append(
            StepDiagnostics(step=k, newton_iters=0, residual_norms=[], wall_time=wall)
        )
    return Trajectory(states=states, diagnostics=diags, dt=schedule.dt)
