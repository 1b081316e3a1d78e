"""Network-free self-supervised layout fitting.

The boundary parameters of both views are optimized directly with Adam
under the total self-supervision loss; the source/target roles swap every
iteration so both views receive photometric gradient. When cycle or
stretch consistency is enabled, each view gets an auxiliary co-optimized
parameter table initialized from its teacher, standing in for the
predictions a network would produce on the rendered or stretched images.

The photometric landscape is highly non-convex at full resolution, so
flat initializations use a coarse-to-fine schedule, upsampling the raw
parameters between stages by periodic linear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigurationError, DivergenceError
from .geometry import TAU, column_longitudes
from .layout import LayoutBoundaries, RawBoundaries, constrain, unconstrain
from .losses import LossConfig, LossReport, StretchParams, TotalInputs, total
from .rendering import Panorama
from .synth import ScenePair

VIEWS = ("a", "b")

# tuned stage presets for 256x512 scenes; coarse stages use large steps to
# escape the mutually-consistent-but-wrong valley the chamfer term creates
FLAT_SCHEDULE = ((16, 32), (32, 64), (64, 128), (128, 256), (256, 512))
FLAT_ITERATIONS = (400, 300, 300, 120, 50)
FLAT_STEP_SIZES = (0.10, 0.07, 0.04, 0.02, 0.01)
PERTURBED_SCHEDULE = ((64, 128), (128, 256), (256, 512))
PERTURBED_ITERATIONS = (300, 150, 80)
PERTURBED_STEP_SIZES = (0.03, 0.02, 0.01)


class Adam:
    """Adaptive-moment gradient descent over a dict of parameter arrays."""

    def __init__(self, step_size: float = 1e-2, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.step_size = step_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for key, p in params.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(p)
            m = self.m.get(key, np.zeros_like(p))
            v = self.v.get(key, np.zeros_like(p))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[key] = m
            self.v[key] = v
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            out[key] = p - self.step_size * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


@dataclass(frozen=True)
class FitConfig:
    """Optimization settings for direct boundary fitting."""

    loss_config: LossConfig = field(default_factory=lambda: LossConfig(
        enabled=("photo", "src_tgt", "ceil_floor", "manhattan")))
    iterations: int = 300
    step_size: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    init: str = "flat"                     # flat | perturbed-gt | user
    init_sigma: float = 0.15
    init_boundaries: dict | None = None    # view -> RawBoundaries (user init)
    schedule: tuple | None = None          # ((H, W), ...); None = scene size
    stage_iterations: tuple | None = None  # per stage; None = iterations each
    stage_step_sizes: tuple | None = None  # per stage; None = step_size each
    seed: int = 0
    use_inferred_ceiling: bool = False
    # raw parameters are projected back into [-clip, clip] after each update:
    # beyond it the sigmoid saturates into cot() blowup (walls centimeters
    # away or tens of meters out), where the masked photometric loss has a
    # spurious runaway attractor (samples dive into masked source regions)
    param_clip: float = 3.0

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigurationError("iterations must be positive")
        if self.step_size <= 0:
            raise ConfigurationError("step size must be positive")
        for rate in (self.beta1, self.beta2):
            if not (0.0 < rate < 1.0):
                raise ConfigurationError("moment decay rates must be in (0, 1)")
        if self.init not in ("flat", "perturbed-gt", "user"):
            raise ConfigurationError(f"unknown init mode '{self.init}'")
        if self.init == "user" and not self.init_boundaries:
            raise ConfigurationError("user init requires init_boundaries")

    @staticmethod
    def for_flat_init(loss_config: LossConfig | None = None,
                      seed: int = 0, **kw) -> "FitConfig":
        """Tuned coarse-to-fine preset for flat initialization."""
        return FitConfig(
            loss_config=loss_config or LossConfig(
                enabled=("photo", "src_tgt", "ceil_floor", "manhattan")),
            init="flat", schedule=FLAT_SCHEDULE,
            stage_iterations=FLAT_ITERATIONS,
            stage_step_sizes=FLAT_STEP_SIZES, seed=seed, **kw)

    @staticmethod
    def for_perturbed_init(sigma: float = 0.15,
                           loss_config: LossConfig | None = None,
                           seed: int = 0, **kw) -> "FitConfig":
        """Tuned preset for refining a perturbed or external initialization."""
        return FitConfig(
            loss_config=loss_config or LossConfig(
                enabled=("photo", "src_tgt", "ceil_floor", "manhattan")),
            init="perturbed-gt", init_sigma=sigma,
            schedule=PERTURBED_SCHEDULE,
            stage_iterations=PERTURBED_ITERATIONS,
            stage_step_sizes=PERTURBED_STEP_SIZES, seed=seed, **kw)


@dataclass
class FitResult:
    """Final boundaries per view plus the optimization trace."""

    boundaries: dict
    aux_boundaries: dict
    trajectory: list
    stages: list
    iterations_run: int
    converged: bool


def default_schedule(height: int, width: int) -> tuple:
    """Coarse-to-fine stages ending at the scene resolution."""
    stages = []
    for div in (4, 2, 1):
        if height % div == 0 and width % div == 0 and width // div >= 32:
            stages.append((height // div, width // div))
    return tuple(stages)


def _downsample_pano(pano: Panorama, height: int, width: int) -> Panorama:
    """Box-average the image; a low-res pixel is valid iff all children are."""
    H, W = pano.height, pano.width
    if H % height or W % width:
        raise ConfigurationError(
            f"stage {height}x{width} must divide scene {H}x{W}")
    fh, fw = H // height, W // width
    img = pano.image.reshape(height, fh, width, fw, 3).mean(axis=(1, 3))
    mask = pano.mask.reshape(height, fh, width, fw).all(axis=(1, 3))
    return Panorama(img, mask)


def _resample_raw(vec: np.ndarray, new_width: int) -> np.ndarray:
    """Periodic linear interpolation of per-column parameters to a new W."""
    old_u = column_longitudes(vec.shape[0])
    new_u = column_longitudes(new_width)
    return np.interp(new_u, old_u, vec, period=TAU)


@dataclass
class FitState:
    """Mutable optimizer state; single-writer per fit."""

    params: dict
    adam: Adam
    stage_panos: list
    stage_sizes: list
    stage_iters: list
    stage_steps: list
    rng: np.random.Generator
    stage: int = 0
    iteration: int = 0
    total_iteration: int = 0
    best_loss: float = np.inf
    best_params: dict | None = None
    trajectory: list = field(default_factory=list)


def _tables(cfg: FitConfig) -> list:
    tables = list(VIEWS)
    if "cycle" in cfg.loss_config.enabled:
        tables += [f"cycle_{v}" for v in VIEWS]
    if "stretch" in cfg.loss_config.enabled:
        tables += [f"stretch_{v}" for v in VIEWS]
    return tables


def _init_raw(scene: ScenePair, cfg: FitConfig, width: int,
              rng: np.random.Generator) -> dict:
    """Per-view raw parameter vectors at the first stage width."""
    raw = {}
    for view in VIEWS:
        if cfg.init == "flat":
            f = np.zeros(width)
            c = np.zeros(width)
        elif cfg.init == "perturbed-gt":
            gt = scene.gt_layout(view)
            # clip the perturbed angles to the representable raw band
            clip = cfg.param_clip if cfg.param_clip > 0 else 6.0
            sig_lo = 1.0 / (1.0 + np.exp(clip))
            lo = 0.5 * np.pi * sig_lo
            phi_f = ad.value(gt.phi_floor) + rng.normal(0.0, cfg.init_sigma,
                                                        gt.width)
            phi_c = ad.value(gt.phi_ceil) + rng.normal(0.0, cfg.init_sigma,
                                                       gt.width)
            phi_f = np.clip(phi_f, -0.5 * np.pi + lo, -lo)
            phi_c = np.clip(phi_c, lo, 0.5 * np.pi - lo)
            r = unconstrain(LayoutBoundaries(phi_f, phi_c))
            f = _resample_raw(r.phi_raw_floor, width)
            c = _resample_raw(r.phi_raw_ceil, width)
        else:
            user = cfg.init_boundaries[view]
            f = _resample_raw(np.asarray(user.phi_raw_floor, dtype=np.float64),
                              width)
            c = _resample_raw(np.asarray(user.phi_raw_ceil, dtype=np.float64),
                              width)
        raw[f"{view}.floor"] = f
        raw[f"{view}.ceil"] = c
    return raw


def init_state(scene: ScenePair, cfg: FitConfig) -> FitState:
    """Prepare stage pyramids, initial parameters, and optimizer moments."""
    sizes = list(cfg.schedule) if cfg.schedule else [
        (scene.pano_a.height, scene.pano_a.width)]
    iters = list(cfg.stage_iterations) if cfg.stage_iterations else \
        [cfg.iterations] * len(sizes)
    if len(iters) != len(sizes):
        raise ConfigurationError("stage_iterations length != schedule length")
    steps = list(cfg.stage_step_sizes) if cfg.stage_step_sizes else \
        [cfg.step_size] * len(sizes)
    if len(steps) != len(sizes):
        raise ConfigurationError("stage_step_sizes length != schedule length")
    stage_panos = [{v: _downsample_pano(scene.pano(v), h, w) for v in VIEWS}
                   for (h, w) in sizes]
    rng = np.random.default_rng(cfg.seed)
    width0 = sizes[0][1]
    raw = _init_raw(scene, cfg, width0, rng)
    for view in VIEWS:
        for aux in ("cycle", "stretch"):
            if f"{aux}_{view}" in _tables(cfg):
                raw[f"{aux}_{view}.floor"] = raw[f"{view}.floor"].copy()
                raw[f"{aux}_{view}.ceil"] = raw[f"{view}.ceil"].copy()
    adam = Adam(steps[0], cfg.beta1, cfg.beta2)
    return FitState(params=raw, adam=adam, stage_panos=stage_panos,
                    stage_sizes=sizes, stage_iters=iters, stage_steps=steps,
                    rng=rng)


def _leaf_table(params: dict, name: str) -> RawBoundaries:
    return RawBoundaries(Var(params[f"{name}.floor"]),
                         Var(params[f"{name}.ceil"]))


def fit_step(state: FitState, scene: ScenePair, cfg: FitConfig) -> LossReport:
    """One forward/backward/update cycle; mutates ``state`` in place."""
    tgt = VIEWS[state.total_iteration % 2]
    src = VIEWS[1 - state.total_iteration % 2]
    panos = state.stage_panos[state.stage]

    leaves = {name: _leaf_table(state.params, name)
              for name in _tables(cfg)}
    loss_cfg = cfg.loss_config
    stretch_k = None
    if "stretch" in loss_cfg.enabled:
        stretch_k = loss_cfg.stretch_params or StretchParams.sample(state.rng)

    inputs = TotalInputs(
        raw_tgt=leaves[tgt],
        heights=None if cfg.use_inferred_ceiling else scene.heights,
        tgt_pano=panos[tgt], src_pano=panos[src],
        pose_t_to_s=scene.warp_pose(src=src, tgt=tgt),
        pose_s_to_t=scene.frame_transfer(frm=src, to=tgt),
        raw_src=leaves[src],
        raw_cycle=leaves.get(f"cycle_{tgt}"),
        raw_stretch=leaves.get(f"stretch_{tgt}"),
        stretch_k=stretch_k,
    )
    report = total(inputs, loss_cfg)
    if not np.isfinite(report.total):
        raise DivergenceError(
            f"non-finite loss at iteration {state.total_iteration}",
            trajectory=state.trajectory)

    state.trajectory.append(report)
    if report.total < state.best_loss:
        state.best_loss = report.total
        state.best_params = {k: v.copy() for k, v in state.params.items()}

    grads = {}
    for name, table in leaves.items():
        gf = table.phi_raw_floor.grad
        gc = table.phi_raw_ceil.grad
        if gf is not None:
            grads[f"{name}.floor"] = gf
        if gc is not None:
            grads[f"{name}.ceil"] = gc
    state.params = state.adam.step(state.params, grads)
    if cfg.param_clip > 0:
        state.params = {k: np.clip(v, -cfg.param_clip, cfg.param_clip)
                        for k, v in state.params.items()}
    state.iteration += 1
    state.total_iteration += 1
    return report


def _advance_stage(state: FitState, cfg: FitConfig) -> None:
    """Adopt the stage's best iterate and upsample to the next resolution."""
    if state.best_params is not None:
        state.params = state.best_params
    new_width = state.stage_sizes[state.stage + 1][1]
    state.params = {k: _resample_raw(v, new_width)
                    for k, v in state.params.items()}
    state.adam = Adam(state.stage_steps[state.stage + 1], cfg.beta1, cfg.beta2)
    state.stage += 1
    state.iteration = 0
    state.best_loss = np.inf
    state.best_params = None


def fit_pair(scene: ScenePair, cfg: FitConfig) -> FitResult:
    """Fit both views' boundaries on a scene pair; deterministic per seed."""
    state = init_state(scene, cfg)
    stages = []
    # a non-finite loss raises DivergenceError from fit_step with the
    # trajectory attached; reaching the end means the fit converged
    for stage in range(len(state.stage_sizes)):
        for _ in range(state.stage_iters[stage]):
            fit_step(state, scene, cfg)
        stages.append((state.stage_sizes[stage], state.stage_iters[stage]))
        if stage + 1 < len(state.stage_sizes):
            _advance_stage(state, cfg)

    final = state.best_params if state.best_params is not None else state.params
    boundaries = {
        view: constrain(RawBoundaries(final[f"{view}.floor"],
                                      final[f"{view}.ceil"]))
        for view in VIEWS
    }
    aux = {}
    for name in _tables(cfg):
        if name in VIEWS:
            continue
        aux[name] = constrain(RawBoundaries(final[f"{name}.floor"],
                                            final[f"{name}.ceil"]))
    return FitResult(boundaries=boundaries, aux_boundaries=aux,
                     trajectory=state.trajectory, stages=stages,
                     iterations_run=state.total_iteration,
                     converged=True)
