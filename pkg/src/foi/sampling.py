"""Guided denoising: branch combination rules and the Euler-ancestral loop.

Three branch noise estimates (unconditional, image-only, instruction) are
combined by classifier-free guidance.  During the disentangle phase the
instruction term is confined to the union mask, separating the editing
direction from the image-preserving direction; the remaining steps fall
back to the vanilla combination.  Sampling starts from a partially noised
encoding of the input image rather than pure noise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .capture import Branch, CaptureSession, averaged_map, open_capture
from .errors import BadFraction, MaskEmptyWarning, ShapeMismatch
from .instructions import Instruction, build_alpha_vector, resolve_token_spans
from .masks import (
    MASK_RESOLUTION,
    ExtractionParams,
    KeywordMask,
    UnionMask,
    extract_masks,
    union_and_upsample,
)
from .modulation import Modulator, build_token_mask, timestep_weight

DEFAULT_SEED = 0

PHASE_DISENTANGLE = "disentangle"
PHASE_VANILLA = "vanilla"


@dataclass(frozen=True)
class NoiseTriple:
    """The three branch noise predictions for one latent state."""

    uncond: np.ndarray
    image_only: np.ndarray
    full: np.ndarray

    def __post_init__(self):
        if not (self.uncond.shape == self.image_only.shape == self.full.shape):
            raise ShapeMismatch(
                f"branch estimates disagree on shape: {self.uncond.shape}, "
                f"{self.image_only.shape}, {self.full.shape}"
            )


@dataclass(frozen=True)
class GuidanceParams:
    """Image-preservation and instruction-strength guidance scales."""

    image_scale: float = 1.5
    text_scale: float = 7.5

    def __post_init__(self):
        if self.image_scale < 0 or self.text_scale < 0:
            raise ValueError("guidance scales must be nonnegative")


def combine_vanilla(triple: NoiseTriple, guidance: GuidanceParams) -> np.ndarray:
    """Classifier-free guided estimate from the three branches.

    Grouped per branch so that unit scales return the instruction-branch
    estimate bitwise; algebraically identical to successively
    extrapolating image-only past unconditional and full past image-only.
    """
    s_i, s_t = guidance.image_scale, guidance.text_scale
    return (
        triple.uncond * (1.0 - s_i)
        + triple.image_only * (s_i - s_t)
        + triple.full * s_t
    )


def combine_disentangled(
    triple: NoiseTriple, guidance: GuidanceParams, union: UnionMask
) -> np.ndarray:
    """Guided estimate with the instruction term confined to the union mask.

    Outside the mask only the unconditional and image-only branches
    contribute, so those pixels are independent of the instruction.  An
    all-ones mask reduces exactly to :func:`combine_vanilla`.
    """
    if union.values.shape != triple.full.shape[-2:]:
        raise ShapeMismatch(
            f"union mask {union.values.shape} does not match latent "
            f"spatial dims {triple.full.shape[-2:]}"
        )
    s_i = guidance.image_scale
    weight = guidance.text_scale * union.values
    return (
        triple.uncond * (1.0 - s_i)
        + triple.image_only * (s_i - weight)
        + triple.full * weight
    )


@dataclass(frozen=True)
class Schedule:
    """Effective step list with noise-start and disentangle-cutoff bookkeeping.

    ``timesteps``/``sigmas`` are the backend ramp truncated to the last
    ``effective_steps`` entries; ``sigmas`` carries one extra terminal 0.0
    so step ``i`` integrates from ``sigmas[i]`` to ``sigmas[i + 1]``.
    """

    configured_steps: int
    noise_start_fraction: float
    disentangle_fraction: float
    effective_steps: int
    disentangle_cutoff: int
    timesteps: np.ndarray
    sigmas: np.ndarray

    def phase(self, step_index: int) -> str:
        return PHASE_DISENTANGLE if step_index < self.disentangle_cutoff else PHASE_VANILLA


def make_schedule(
    configured_steps: int,
    noise_start_fraction: float,
    disentangle_fraction: float,
    backend,
) -> Schedule:
    """Build the effective schedule from the backend's noise ramp.

    ``effective_steps = round(configured * noise_start)`` keeps the last
    portion of the ramp (partial noising of the input image);
    ``disentangle_cutoff = floor(effective * disentangle_fraction)``.
    """
    if configured_steps < 1:
        raise BadFraction(f"configured_steps must be >= 1, got {configured_steps}")
    for name, value in (
        ("noise_start_fraction", noise_start_fraction),
        ("disentangle_fraction", disentangle_fraction),
    ):
        if not 0.0 < value <= 1.0:
            raise BadFraction(f"{name} must lie in (0, 1], got {value}")
    effective = round(configured_steps * noise_start_fraction)
    if effective < 1:
        raise BadFraction(
            f"noise_start_fraction {noise_start_fraction} yields zero effective steps"
        )
    # tiny epsilon guards against 0.7 * 80 = 55.999... style float fuzz
    cutoff = math.floor(effective * disentangle_fraction + 1e-9)
    timesteps, sigmas = backend.schedule(configured_steps)
    timesteps = np.asarray(timesteps, dtype=float)[-effective:]
    sigmas = np.concatenate([np.asarray(sigmas, dtype=float)[-effective:], [0.0]])
    return Schedule(
        configured_steps=configured_steps,
        noise_start_fraction=noise_start_fraction,
        disentangle_fraction=disentangle_fraction,
        effective_steps=effective,
        disentangle_cutoff=cutoff,
        timesteps=timesteps,
        sigmas=sigmas,
    )


def ancestral_step_sizes(sigma: float, sigma_next: float) -> tuple[float, float]:
    """Split one sigma decrement into deterministic and stochastic parts."""
    if sigma_next <= 0.0:
        return 0.0, 0.0
    sigma_up = min(
        sigma_next,
        math.sqrt(sigma_next**2 * (sigma**2 - sigma_next**2) / sigma**2),
    )
    sigma_down = math.sqrt(sigma_next**2 - sigma_up**2)
    return sigma_down, sigma_up


@dataclass(frozen=True)
class StepMeta:
    """Per-step record of the sampling loop."""

    index: int
    phase: str
    timestep: float
    t_norm: float
    xi: float
    sigma: float


@dataclass
class SampleTrace:
    """Artifacts and metadata collected during one sampling run."""

    steps: list[StepMeta] = field(default_factory=list)
    keyword_masks: list[KeywordMask] = field(default_factory=list)
    union_mask: UnionMask | None = None
    instruction: Instruction | None = None
    step0_combined: np.ndarray | None = None
    step0_attention: np.ndarray | None = None  # modulated FULL probs, (r*r, N)


def _chain_hooks(*hooks):
    live = [h for h in hooks if h is not None]
    if not live:
        return None
    if len(live) == 1:
        return live[0]

    def fanout(branch, layer, logits, probs):
        for hook in live:
            hook(branch, layer, logits, probs)

    return fanout


def sample(
    backend,
    image_latent: np.ndarray,
    instruction: Instruction,
    schedule: Schedule,
    guidance: GuidanceParams = GuidanceParams(),
    extraction: ExtractionParams = ExtractionParams(),
    seed: int = DEFAULT_SEED,
    dump_session: CaptureSession | None = None,
) -> tuple[np.ndarray, SampleTrace]:
    """Run the guided denoising loop; returns the final latent and a trace.

    The input latent is noised to the schedule's starting sigma with
    seeded noise.  At step zero an extra instruction-branch pass captures
    the grounding attention, from which the keyword masks, token mask and
    union mask are built.  Every step then predicts the branch triple
    (image-only before instruction, so the modulator has the null-branch
    logits), combines it (disentangled before the cutoff, vanilla after,
    with modulation staying active throughout), and takes one
    Euler-ancestral update with seeded per-step noise.

    With zero sub-instructions, mask extraction and modulation are
    skipped and an all-ones union keeps the combination vanilla.
    """
    latent_shape = (backend.channels, backend.latent_height, backend.latent_width)
    image_latent = np.asarray(image_latent, dtype=float)
    if image_latent.shape != latent_shape:
        raise ShapeMismatch(
            f"image latent shape {image_latent.shape} != backend latent {latent_shape}"
        )
    if instruction.subs and not instruction.resolved:
        instruction = resolve_token_spans(instruction, backend)

    tokens = backend.tokenize(instruction.composite_text)
    rng = np.random.default_rng(seed)
    z = image_latent + schedule.sigmas[0] * rng.standard_normal(latent_shape)

    union = UnionMask(np.ones((backend.latent_height, backend.latent_width)))
    modulator: Modulator | None = None
    trace = SampleTrace(instruction=instruction)

    for i in range(schedule.effective_steps):
        timestep = float(schedule.timesteps[i])
        t_norm = timestep / backend.max_timestep
        sigma = float(schedule.sigmas[i])
        if dump_session is not None:
            dump_session.start_step(i)
            if i == 0:
                dump_session.retain(0)

        if i == 0 and instruction.subs:
            grounding = open_capture(backend, {Branch.FULL}, {MASK_RESOLUTION})
            grounding.start_step(0)
            backend.predict(
                Branch.FULL, z, timestep, image_latent, tokens.ids,
                capture_hook=grounding.observe,
            )
            trace.keyword_masks = extract_masks(grounding, instruction, extraction)
            union = union_and_upsample(
                trace.keyword_masks, backend.latent_height, backend.latent_width
            )
            if union.values.sum() == 0:
                warnings.warn(
                    "union mask is empty; instruction guidance will have no effect "
                    "during the disentangle phase",
                    MaskEmptyWarning,
                    stacklevel=2,
                )
            token_mask = build_token_mask(
                trace.keyword_masks, instruction, backend.token_count
            )
            modulator = Modulator(
                token_mask, build_alpha_vector(instruction), backend.latent_projection_dim
            )
            trace.union_mask = union

        if modulator is not None:
            modulator.start_step(t_norm)

        step0_attn_session = None
        if i == 0 and instruction.subs:
            step0_attn_session = open_capture(backend, {Branch.FULL}, {MASK_RESOLUTION})
            step0_attn_session.start_step(0)

        dump_hook = dump_session.observe if dump_session is not None else None
        e_uncond = backend.predict(
            Branch.UNCOND, z, timestep, image_latent, tokens.ids,
            capture_hook=dump_hook,
        )
        e_image = backend.predict(
            Branch.IMAGE_ONLY, z, timestep, image_latent, tokens.ids,
            capture_hook=_chain_hooks(
                modulator.observe if modulator is not None else None, dump_hook
            ),
        )
        e_full = backend.predict(
            Branch.FULL, z, timestep, image_latent, tokens.ids,
            modulation_hook=modulator,
            capture_hook=_chain_hooks(
                step0_attn_session.observe if step0_attn_session is not None else None,
                dump_hook,
            ),
        )
        triple = NoiseTriple(e_uncond, e_image, e_full)

        phase = schedule.phase(i)
        if phase == PHASE_DISENTANGLE:
            combined = combine_disentangled(triple, guidance, union)
        else:
            combined = combine_vanilla(triple, guidance)

        trace.steps.append(
            StepMeta(
                index=i,
                phase=phase,
                timestep=timestep,
                t_norm=t_norm,
                xi=timestep_weight(t_norm),
                sigma=sigma,
            )
        )
        if i == 0:
            trace.step0_combined = combined.copy()
            if step0_attn_session is not None:
                trace.step0_attention = averaged_map(
                    step0_attn_session, MASK_RESOLUTION, Branch.FULL
                )

        sigma_down, sigma_up = ancestral_step_sizes(sigma, float(schedule.sigmas[i + 1]))
        z = z + combined * (sigma_down - sigma)
        if sigma_up > 0.0:
            z = z + sigma_up * rng.standard_normal(latent_shape)

    if dump_session is not None:
        # flush the trailing step so only retained steps remain in the dump
        dump_session.start_step(schedule.effective_steps)
    return z, trace
