"""Generative decoder: noise schedule, guided sampling, and the decode pipeline.

The reconstruction runs in [0,1] pixel space over a pluggable epsilon
predictor. Stage A upscales the low-bitrate initial reconstruction 2x under
the whole-image text condition; per-item refinement re-runs the sampler at
native resolution and composites through a soft mask, touching only the
masked region.

Both stages realize their conditional pass the same way: noise the guide
image to an intermediate timestep t_start = round(strength * T), then run a
deterministic DDIM trajectory back to 0 with classifier-free guidance. The
guide is also fed to the denoiser as condition channels, so it steers
content twice: as the start point and as conditioning.

x0 predictions are clamped to [-1, 2] before recombination; without the
clamp, early steps at tiny alpha_bar can send the trajectory far outside
the pixel range and the conv denoiser never recovers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .bitstream import CompressedImage
from .controller import DiffusionPlan, Mlp, forward, to_plan
from .errors import (
    DatasetTooSmall,
    InputOutOfRange,
    InvalidRange,
    InvalidSteps,
    InvalidTimestep,
    MalformedPayload,
    SchemaMismatch,
    ShapeMismatch,
    StageError,
)
from .features import build_features
from .initial_codec import decode_initial
from .segmentation import grid_decode, grid_to_mask, masks_for_description
from .semantics import SemanticDescription, deserialize

DEFAULT_T = 1000
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02
STAGE_A_STRENGTH = 0.6
MASKED_STRENGTH = 0.3
X0_CLAMP = (-1.0, 2.0)
BASELINE_PLAN = DiffusionPlan(steps=40, cfg=4.0)


@dataclass(frozen=True)
class NoiseSchedule:
    """beta/alpha_bar tables indexed by timestep; index 0 is the clean state
    (beta[0] = 0, alpha_bar[0] = 1) so t ranges over 0..T inclusive."""

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray


def make_schedule(
    T: int = DEFAULT_T, beta_min: float = DEFAULT_BETA_MIN, beta_max: float = DEFAULT_BETA_MAX
) -> NoiseSchedule:
    if T < 1:
        raise InvalidRange(f"schedule needs T >= 1, got {T}")
    if not (0.0 < beta_min < beta_max < 1.0):
        raise InvalidRange(f"need 0 < beta_min < beta_max < 1, got ({beta_min}, {beta_max})")
    if T == 1:
        steps = np.array([beta_min])
    else:
        steps = np.linspace(beta_min, beta_max, T)
    beta = np.concatenate([[0.0], steps])
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


def _check_t(schedule: NoiseSchedule, t: int, what: str) -> int:
    t = int(t)
    if not 0 <= t <= schedule.T:
        raise InvalidTimestep(f"{what} {t} outside [0, {schedule.T}]")
    return t


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    t = _check_t(schedule, t, "q_sample t")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeMismatch(f"q_sample shapes {x0.shape} vs {eps.shape}")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, cfg: float) -> np.ndarray:
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    if eps_uncond.shape != eps_cond.shape:
        raise ShapeMismatch(f"cfg_combine shapes {eps_uncond.shape} vs {eps_cond.shape}")
    # The cfg=0 and cfg=1 identities hold bit-exactly; the blended formula
    # would reintroduce rounding through the (cond - uncond) difference.
    if cfg == 0.0:
        return eps_uncond.copy()
    if cfg == 1.0:
        return eps_cond.copy()
    return eps_uncond + cfg * (eps_cond - eps_uncond)


def ddim_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
) -> np.ndarray:
    t = _check_t(schedule, t, "ddim_step t")
    t_prev = _check_t(schedule, t_prev, "ddim_step t_prev")
    if t_prev > t:
        raise InvalidTimestep(f"ddim_step needs t_prev <= t, got {t_prev} > {t}")
    if t_prev == t:
        return x_t
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ShapeMismatch(f"ddim_step shapes {x_t.shape} vs {eps_hat.shape}")
    ab_t = schedule.alpha_bar[t]
    ab_p = schedule.alpha_bar[t_prev]
    x0_hat = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    x0_hat = np.clip(x0_hat, X0_CLAMP[0], X0_CLAMP[1])
    # Direction term re-derived from the clamped estimate, so one divergent
    # prediction (e.g. under heavy guidance) cannot grow without bound across
    # later steps. Identical to eps_hat whenever the clamp is inactive.
    eps_used = (x_t - np.sqrt(ab_t) * x0_hat) / np.sqrt(1.0 - ab_t)
    return np.sqrt(ab_p) * x0_hat + np.sqrt(1.0 - ab_p) * eps_used


def make_step_schedule(steps: int, T: int, t_start: int | None = None) -> list[int]:
    """Evenly spaced strictly-descending timesteps from t_start down toward 0.

    The returned list excludes 0; samplers append the final hop to 0. Rounding
    collisions on short ranges are deduplicated, so the list may be shorter
    than `steps`.
    """
    if not 2 <= steps <= T:
        raise InvalidSteps(f"steps {steps} outside [2, {T}]")
    if t_start is None:
        t_start = T
    if not 1 <= t_start <= T:
        raise InvalidTimestep(f"t_start {t_start} outside [1, {T}]")
    grid = np.linspace(t_start, 0.0, steps + 1)[:-1]
    out: list[int] = []
    for v in grid:
        tv = max(1, int(round(v)))
        if not out or tv < out[-1]:
            out.append(tv)
    return out


class AnalyticGaussianDenoiser:
    """Closed-form epsilon oracle for x0 ~ N(mu, sigma0^2 I), elementwise.

    With x_t = sqrt(ab)*x0 + sqrt(1-ab)*eps, (x0, x_t) are jointly Gaussian:
        E[x0 | x_t] = mu + sqrt(ab)*sigma0^2 * (x_t - sqrt(ab)*mu) / v_t,
        v_t = ab*sigma0^2 + 1 - ab  (the marginal variance of x_t).
    Solving x_t = sqrt(ab)*E[x0|x_t] + sqrt(1-ab)*E[eps|x_t] gives
        E[eps | x_t] = sqrt(1-ab) * (x_t - sqrt(ab)*mu) / v_t,
    which is what predict returns. The condition argument is ignored: the
    oracle is its own best conditional and unconditional estimate.
    """

    def __init__(self, mu, sigma0: float, schedule: NoiseSchedule):
        if sigma0 <= 0:
            raise InvalidRange(f"sigma0 must be positive, got {sigma0}")
        self.mu = np.asarray(mu, dtype=np.float64)
        self.sigma0 = float(sigma0)
        self.schedule = schedule

    def predict(self, x_t: np.ndarray, t: int, condition=None) -> np.ndarray:
        t = _check_t(self.schedule, t, "predict t")
        ab = self.schedule.alpha_bar[t]
        v_t = ab * self.sigma0**2 + 1.0 - ab
        return np.sqrt(1.0 - ab) * (np.asarray(x_t, dtype=np.float64) - np.sqrt(ab) * self.mu) / v_t


def _predict_pair(denoiser, x: np.ndarray, t: int, condition) -> tuple[np.ndarray, np.ndarray]:
    if condition is None:
        eps_u = denoiser.predict(x, t, None)
        return eps_u, eps_u
    if hasattr(denoiser, "predict_both"):
        return denoiser.predict_both(x, t, condition)
    return denoiser.predict(x, t, None), denoiser.predict(x, t, condition)


def sample_ddim(
    x_start: np.ndarray,
    timesteps: list[int],
    denoiser,
    schedule: NoiseSchedule,
    condition=None,
    cfg: float = 1.0,
) -> np.ndarray:
    """Run the DDIM trajectory over `timesteps` (descending, 0-free) plus the
    final hop to 0, with classifier-free guidance when a condition is given."""
    x = np.asarray(x_start, dtype=np.float64)
    path = list(timesteps) + [0]
    for t, t_prev in zip(path[:-1], path[1:]):
        eps_u, eps_c = _predict_pair(denoiser, x, t, condition)
        x = ddim_step(x, cfg_combine(eps_u, eps_c, cfg), t, t_prev, schedule)
    return x


def upsample2x(img: np.ndarray) -> np.ndarray:
    """Bicubic 2x upscale, clipped back to [0,1]."""
    img = np.asarray(img, dtype=np.float64)
    out = np.stack(
        [
            ndimage.zoom(img[:, :, c], 2.0, order=3, mode="reflect", grid_mode=True)
            for c in range(img.shape[2])
        ],
        axis=2,
    )
    return np.clip(out, 0.0, 1.0)


def _sdedit_pass(
    guide: np.ndarray,
    text_embedding: np.ndarray | None,
    plan: DiffusionPlan,
    denoiser,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    strength: float,
) -> np.ndarray:
    if not 0.0 <= strength <= 1.0:
        raise InvalidRange(f"strength {strength} outside [0, 1]")
    t_start = int(round(strength * schedule.T))
    if t_start == 0:
        return guide.copy()
    timesteps = make_step_schedule(plan.steps, schedule.T, t_start)
    eps = rng.standard_normal(guide.shape)
    x = q_sample(guide, t_start, eps, schedule)
    condition = None
    if text_embedding is not None:
        condition = {"text": np.asarray(text_embedding, dtype=np.float64), "guide": guide}
    out = sample_ddim(x, timesteps, denoiser, schedule, condition, plan.cfg)
    return np.clip(out, 0.0, 1.0)


def refine_stage_a(
    x_initial: np.ndarray,
    text_embedding: np.ndarray | None,
    plan: DiffusionPlan,
    denoiser,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    strength: float = STAGE_A_STRENGTH,
) -> np.ndarray:
    """2x upscaling stage: bicubic guide, then the guided sampler."""
    guide = upsample2x(x_initial)
    return _sdedit_pass(guide, text_embedding, plan, denoiser, schedule, rng, strength)


def refine_masked(
    x_prev: np.ndarray,
    item_embedding: np.ndarray | None,
    mask: np.ndarray,
    plan: DiffusionPlan,
    denoiser,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    strength: float = MASKED_STRENGTH,
) -> np.ndarray:
    """One conditional refinement pass at native resolution, composited
    through the soft mask: masked pixels take the refined value, the rest
    keep x_prev bit-for-bit."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x_prev.shape[:2]:
        raise ShapeMismatch(f"mask {mask.shape} vs image {x_prev.shape[:2]}")
    if mask.min() < 0.0 or mask.max() > 1.0:
        raise InputOutOfRange(f"mask values in [{mask.min()}, {mask.max()}], need [0, 1]")
    if mask.max() == 0.0:
        return x_prev.copy()
    refined = _sdedit_pass(x_prev, item_embedding, plan, denoiser, schedule, rng, strength)
    m = mask[:, :, None]
    return refined * m + x_prev * (1.0 - m)


@dataclass
class DecodeReport:
    plan: DiffusionPlan
    plan_source: str  # "controller" or "override"
    mask_source: str  # "similarity" or "grid"
    timings: dict[str, float] = field(default_factory=dict)


def _condition_text(d: SemanticDescription, embedder) -> np.ndarray | None:
    text = d.overall.strip() or " ".join(d.names())
    if not text:
        return None
    return embedder.embed_text(text)


def decode(
    c: CompressedImage,
    embedder,
    denoiser,
    schedule: NoiseSchedule,
    models: tuple[Mlp, Mlp] | None = None,
    overrides: tuple[int, float] | None = None,
    seed: int = 0,
    strength_a: float = STAGE_A_STRENGTH,
    strength_masked: float = MASKED_STRENGTH,
) -> tuple[np.ndarray, DecodeReport]:
    """Full decode: initial reconstruction, plan, stage A, per-item refinement.

    The plan comes from the controller models unless explicit (steps, cfg)
    overrides are given. Masks come from the decoder-side similarity path,
    or from the bitstream grid map when one is present. Every stage failure
    is wrapped with the stage name.
    """
    timings: dict[str, float] = {}
    t_total = time.perf_counter()

    def run(stage: str, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            raise StageError(stage, exc) from exc
        timings[stage] = time.perf_counter() - t0
        return result

    d = run("semantics", lambda: deserialize(c.semantics_payload))
    x_initial = run("initial", lambda: decode_initial(c.latent_payload))
    h2, w2 = x_initial.shape[:2]
    if (2 * w2, 2 * h2) != (c.width, c.height):
        raise StageError(
            "initial",
            MalformedPayload(
                f"latent dims {w2}x{h2} do not match container {c.width}x{c.height} at 2x"
            ),
        )

    if overrides is not None:
        steps, cfg = overrides
        plan = DiffusionPlan(steps=int(steps), cfg=float(cfg))
        plan_source = "override"
        timings["features"] = 0.0
        timings["plan"] = 0.0
    else:
        if models is None:
            raise StageError("plan", SchemaMismatch("adaptive decode needs controller models"))
        m_steps, m_cfg = models
        if m_steps.schema.schema_hash() != m_cfg.schema.schema_hash():
            raise StageError("plan", SchemaMismatch("controller models use different schemas"))
        f = run("features", lambda: build_features(x_initial, d, embedder, m_steps.schema))
        sh = m_steps.schema.schema_hash()

        def make_plan():
            y_steps = forward(m_steps, f, schema_hash=sh)
            y_cfg = forward(m_cfg, f, schema_hash=sh)
            return to_plan(y_steps, y_cfg)

        plan = run("plan", make_plan)
        plan_source = "controller"

    rng = np.random.default_rng(seed)
    text_all = _condition_text(d, embedder)
    x = run(
        "stage_a",
        lambda: refine_stage_a(x_initial, text_all, plan, denoiser, schedule, rng, strength_a),
    )
    out_hw = (c.height, c.width)

    if c.grid_map_payload is not None:
        mask_source = "grid"
        g = run("masks", lambda: grid_decode(c.grid_map_payload, len(d.items)))
        masks = [grid_to_mask(g, i + 1, out_hw) for i in range(len(d.items))]
    else:
        mask_source = "similarity"
        masks = run("masks", lambda: masks_for_description(x_initial, d, embedder, out_hw))

    def refine_all():
        y = x
        for item, mask in zip(d.items, masks):
            emb = embedder.embed_text(f"{item.name} {item.detail}".strip())
            y = refine_masked(y, emb, mask, plan, denoiser, schedule, rng, strength_masked)
        return y

    x = run("refine", refine_all)
    x = np.clip(x, 0.0, 1.0)
    timings["total"] = time.perf_counter() - t_total
    report = DecodeReport(plan=plan, plan_source=plan_source, mask_source=mask_source, timings=timings)
    return x, report


class ToyDenoiser:
    """Small convolutional epsilon predictor (~100k parameters). The
    conditional branch is a 3-level UNet over the guide image plus broadcast
    text/time projections, predicting a clean-image residual on the guide
    that maps back to epsilon; the unconditional branch (used for CFG and
    fed by condition dropout during training) is a small conv stack over the
    noisy input predicting epsilon directly. A None condition selects the
    unconditional branch.

    Torch is imported on first use: scheduling and the analytic oracle above
    stay importable without it.
    """

    def __init__(self, schedule: NoiseSchedule, text_dim: int = 64, net=None):
        from . import _denoiser_net as dn

        self.schedule = schedule
        self.text_dim = text_dim
        self._net = net if net is not None else dn.build_net(text_dim)
        self._net.eval()

    def n_params(self) -> int:
        return sum(p.numel() for p in self._net.parameters())

    def _forward(self, x_rows, t: int, conds) -> np.ndarray:
        from . import _denoiser_net as dn

        return dn.predict_batch(self._net, x_rows, t, conds, self.text_dim, self.schedule.alpha_bar)

    def predict(self, x_t: np.ndarray, t: int, condition=None) -> np.ndarray:
        t = _check_t(self.schedule, t, "predict t")
        return self._forward([x_t], t, [condition])[0]

    def predict_both(self, x_t: np.ndarray, t: int, condition) -> tuple[np.ndarray, np.ndarray]:
        """Unconditional and conditional estimates in one batched forward."""
        t = _check_t(self.schedule, t, "predict t")
        out = self._forward([x_t, x_t], t, [None, condition])
        return out[0], out[1]

    def save(self, path) -> None:
        from . import _denoiser_net as dn

        dn.save_net(self._net, path)

    @classmethod
    def load(cls, path, schedule: NoiseSchedule, text_dim: int = 64) -> "ToyDenoiser":
        from . import _denoiser_net as dn

        return cls(schedule, text_dim=text_dim, net=dn.load_net(path, text_dim))


@dataclass(frozen=True)
class ToyTrainConfig:
    epochs: int = 6
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    cond_dropout: float = 0.1


def train_toy_denoiser(
    images: list[np.ndarray],
    schedule: NoiseSchedule,
    config: ToyTrainConfig = ToyTrainConfig(),
    text_embeddings: list[np.ndarray] | None = None,
    guides: list[np.ndarray] | None = None,
) -> tuple[ToyDenoiser, dict]:
    """Train the epsilon predictor on small uniform-size images.

    Guides default to a bicubic round trip through half resolution, matching
    the decode-time distribution where the sampler sees an upscaled initial
    reconstruction. Pass codec-degraded guides for a closer match.
    """
    from . import _denoiser_net as dn
    from .initial_codec import downsample_half

    if len(images) < 200:
        raise DatasetTooSmall(f"toy denoiser training needs >= 200 images, got {len(images)}")
    shape = images[0].shape
    for im in images:
        if im.shape != shape:
            raise ShapeMismatch(f"uniform image size required, got {im.shape} vs {shape}")
    if guides is None:
        guides = [upsample2x(downsample_half(im)) for im in images]
    text_dim = len(text_embeddings[0]) if text_embeddings else 64
    if text_embeddings is None:
        text_embeddings = [np.zeros(text_dim)] * len(images)

    net, history = dn.train(
        images=images,
        guides=guides,
        texts=text_embeddings,
        alpha_bar=schedule.alpha_bar,
        epochs=config.epochs,
        batch_size=config.batch_size,
        lr=config.lr,
        seed=config.seed,
        cond_dropout=config.cond_dropout,
        text_dim=text_dim,
    )
    return ToyDenoiser(schedule, text_dim=text_dim, net=net), history
