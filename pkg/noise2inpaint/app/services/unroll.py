"""Unrolled variable splitting: alternating data-fidelity and regularizer units.

Tensor-level kernels work on (N, C, H, W) batches of peak-normalized
intensities; the Image-level wrappers (``df_update`` and friends) are the
same operators on single images in their own units.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.fft
import scipy.linalg
import torch
from torch import nn

from noise2inpaint.app.core.config import settings, torch_dtype
from noise2inpaint.app.core.errors import (
    DimensionError,
    InvalidParameterError,
    NumericError,
    UnrollError,
)
from noise2inpaint.app.schemas.unroll import DFVariant, UnrollConfig
from noise2inpaint.app.services.images import Image
from noise2inpaint.app.services.masking import MaskPartition, fill_masked
from noise2inpaint.app.services.noise import (
    ColoredCovariance,
    apply_covariance,
    apply_inverse_covariance,
)

logger = logging.getLogger(__name__)

Regularizer = Callable[[torch.Tensor], torch.Tensor]


class DataFidelity(Protocol):
    """A data-fidelity unit: argmin_x  -log p(y | x) + mu‖x − z‖²  for one likelihood.

    Only the i.i.d. Gaussian (masked or full) and colored Gaussian
    likelihoods are implemented.
    """

    def __call__(self, y: torch.Tensor, z: torch.Tensor, mu: torch.Tensor) -> torch.Tensor: ...


# ─── Quadratic data fidelity ─────────────────────────────────────────────────


def _check_mu(mu: float) -> None:
    if not mu >= 0:
        raise InvalidParameterError(f"mu must be >= 0, got {mu}")


def masked_fidelity(
    y: torch.Tensor, z: torch.Tensor, held_out: torch.Tensor, mu: torch.Tensor | float
) -> torch.Tensor:
    """x = z on J, (y + mu·z)/(1 + mu) on J^c. *held_out* broadcasts against y.

    y is never read on J: it is zeroed there before the blend.
    """
    if y.shape != z.shape:
        raise DimensionError(f"shape mismatch: {tuple(y.shape)} vs {tuple(z.shape)}")
    observed = torch.where(held_out, torch.zeros_like(y), y)
    return torch.where(held_out, z, (observed + mu * z) / (1 + mu))


def full_fidelity(y: torch.Tensor, z: torch.Tensor, mu: torch.Tensor | float) -> torch.Tensor:
    if y.shape != z.shape:
        raise DimensionError(f"shape mismatch: {tuple(y.shape)} vs {tuple(z.shape)}")
    return (y + mu * z) / (1 + mu)


def df_update(y: Image, z: Image, partition: MaskPartition, mu: float) -> Image:
    _check_mu(mu)
    if y.shape != z.shape or (y.height, y.width) != partition.shape:
        raise DimensionError(f"shape mismatch: {y.shape}, {z.shape}, {partition.shape}")
    held_out = partition.masked[:, :, None]
    observed = np.where(held_out, 0.0, y.data)
    return y.with_data(np.where(held_out, z.data, (observed + mu * z.data) / (1 + mu)))


def df_update_full(y: Image, z: Image, mu: float) -> Image:
    _check_mu(mu)
    if y.shape != z.shape:
        raise DimensionError(f"shape mismatch: {y.shape} vs {z.shape}")
    return y.with_data((y.data + mu * z.data) / (1 + mu))


# ─── Conjugate gradients ─────────────────────────────────────────────────────


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual_norms: list[float]
    converged: bool


def cg_solve(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float = 1e-6,
    max_iter: int = 200,
    x0: np.ndarray | None = None,
) -> CGResult:
    """Conjugate gradients for a symmetric positive-definite *apply_A*.

    Stops when ‖r‖ ≤ tol·‖b‖ or after *max_iter* iterations; the recursive
    residual norms (starting with ‖b − A x0‖) are kept in the result.
    """
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise NumericError("cg_solve: right-hand side is not finite")
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return CGResult(x=np.zeros_like(b), iterations=0, residual_norms=[0.0], converged=True)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - apply_A(x) if x0 is not None else b.copy()
    p = r.copy()
    rs = float(np.vdot(r, r))
    norms = [math.sqrt(rs)]
    if norms[0] <= tol * b_norm:
        return CGResult(x=x, iterations=0, residual_norms=norms, converged=True)

    for iteration in range(1, max_iter + 1):
        Ap = apply_A(p)
        curvature = float(np.vdot(p, Ap))
        if not math.isfinite(curvature):
            raise NumericError(f"cg_solve: non-finite curvature at iteration {iteration}")
        if curvature <= 0:
            raise NumericError("cg_solve: operator is not positive definite")
        alpha = rs / curvature
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = float(np.vdot(r, r))
        if not math.isfinite(rs_new):
            raise NumericError(f"cg_solve: non-finite residual at iteration {iteration}")
        norms.append(math.sqrt(rs_new))
        if norms[-1] <= tol * b_norm:
            return CGResult(x=x, iterations=iteration, residual_norms=norms, converged=True)
        p = r + (rs_new / rs) * p
        rs = rs_new

    logger.warning(
        "cg_solve did not converge in %d iterations (relative residual %.3e)",
        max_iter,
        norms[-1] / b_norm,
    )
    return CGResult(x=x, iterations=max_iter, residual_norms=norms, converged=False)


# ─── Colored data fidelity ───────────────────────────────────────────────────


def solve_colored_fidelity(
    y: np.ndarray,
    z: np.ndarray,
    cov: ColoredCovariance,
    mu: float,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> tuple[np.ndarray, list[CGResult]]:
    """Solve (K⁻¹ + mu·I) x = K⁻¹ y + mu·z per channel of H×W×C arrays."""
    if not mu > 0:
        raise InvalidParameterError(f"colored data fidelity needs mu > 0, got {mu}")
    if y.shape != z.shape:
        raise DimensionError(f"shape mismatch: {y.shape} vs {z.shape}")
    out = np.empty_like(y, dtype=np.float64)
    results = []
    for c in range(y.shape[2]):

        def apply_A(v: np.ndarray) -> np.ndarray:
            return apply_inverse_covariance(cov, v) + mu * v

        rhs = apply_inverse_covariance(cov, y[:, :, c]) + mu * z[:, :, c]
        result = cg_solve(apply_A, rhs, tol=tol, max_iter=max_iter)
        out[:, :, c] = result.x
        results.append(result)
    return out, results


def df_update_colored(
    y: Image,
    z: Image,
    cov: ColoredCovariance,
    mu: float,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> Image:
    x, _ = solve_colored_fidelity(y.data, z.data, cov, mu, tol=tol, max_iter=max_iter)
    return y.with_data(x)


def dense_covariance(cov: ColoredCovariance) -> np.ndarray:
    """K as an explicit (HW × HW) matrix over row-major flattened pixels."""
    basis = np.kron(
        scipy.fft.dct(np.eye(cov.height), type=2, norm="ortho", axis=0),
        scipy.fft.dct(np.eye(cov.width), type=2, norm="ortho", axis=0),
    )
    return basis.T @ (cov.variance.ravel()[:, None] * basis)


def df_update_colored_masked(
    y: Image, z: Image, partition: MaskPartition, cov: ColoredCovariance, mu: float
) -> Image:
    """Masked colored data fidelity by dense solve; small images only.

    x_J = z_J and (I + mu·K') x_{J^c} = y_{J^c} + mu·K' z_{J^c}, where K' is
    K restricted to J^c plus the whitening floor on its diagonal.
    """
    if not mu > 0:
        raise InvalidParameterError(f"colored data fidelity needs mu > 0, got {mu}")
    n_pixels = y.height * y.width
    if n_pixels > settings.DENSE_COLORED_MAX_PIXELS:
        raise DimensionError(
            f"masked colored fidelity supports at most {settings.DENSE_COLORED_MAX_PIXELS} "
            f"pixels, got {n_pixels}"
        )
    if y.shape != z.shape or (y.height, y.width) != partition.shape:
        raise DimensionError(f"shape mismatch: {y.shape}, {z.shape}, {partition.shape}")
    observed = partition.complement_indices
    K = dense_covariance(cov)[np.ix_(observed, observed)] + cov.floor * np.eye(observed.size)
    system = np.eye(observed.size) + mu * K

    out = z.data.copy()
    for c in range(y.channels):
        y_obs = y.data[:, :, c].ravel()[observed]
        z_obs = z.data[:, :, c].ravel()[observed]
        solution = scipy.linalg.solve(system, y_obs + mu * (K @ z_obs), assume_a="pos")
        channel = out[:, :, c].ravel()
        channel[observed] = solution
        out[:, :, c] = channel.reshape(y.height, y.width)
    return y.with_data(out)


def _colored_batch(
    y: torch.Tensor,
    z: torch.Tensor,
    mu: float,
    cov: ColoredCovariance,
    config: UnrollConfig,
    partitions: Sequence[MaskPartition] | None,
) -> torch.Tensor:
    # Inference-only unit: runs detached in numpy
    y_np = y.detach().cpu().to(torch.float64).numpy().transpose(0, 2, 3, 1)
    z_np = z.detach().cpu().to(torch.float64).numpy().transpose(0, 2, 3, 1)
    out = np.empty_like(z_np)
    for n in range(y_np.shape[0]):
        if partitions is None:
            out[n], _ = solve_colored_fidelity(
                y_np[n], z_np[n], cov, mu, tol=config.cg_tol, max_iter=config.cg_max_iter
            )
        else:
            # y at J is zeroed so Image validation never sees unobserved values
            observed = np.where(partitions[n].masked[:, :, None], 0.0, y_np[n])
            out[n] = df_update_colored_masked(
                Image(observed, peak=1.0), Image(z_np[n], peak=1.0), partitions[n], cov, mu
            ).data
    return torch.from_numpy(out.transpose(0, 3, 1, 2)).to(y.dtype)


# ─── Unrolled solver ─────────────────────────────────────────────────────────


@dataclass
class UnrollTrace:
    """Graph-attached output of one unrolled pass, plus optional detached snapshots."""

    output: torch.Tensor
    x_snapshots: list[torch.Tensor] = field(default_factory=list)
    z_snapshots: list[torch.Tensor] = field(default_factory=list)
    z_initial: torch.Tensor | None = None


def partitions_to_tensor(partitions: Sequence[MaskPartition], like: torch.Tensor) -> torch.Tensor:
    """Stack partitions into an (N, 1, H, W) boolean tensor matching *like*."""
    if len(partitions) != like.shape[0]:
        raise DimensionError(f"{len(partitions)} partitions for a batch of {like.shape[0]}")
    for partition in partitions:
        if partition.shape != tuple(like.shape[-2:]):
            raise DimensionError(f"partition {partition.shape} vs batch {tuple(like.shape[-2:])}")
    return torch.from_numpy(np.stack([p.masked for p in partitions])[:, None])


def fill_batch(
    y: torch.Tensor,
    partitions: Sequence[MaskPartition],
    config: UnrollConfig,
    seed: int = 0,
) -> torch.Tensor:
    """Network input built from J^c values only (fill_masked per batch element)."""
    held_out = partitions_to_tensor(partitions, y)
    observed = torch.where(held_out, torch.zeros_like(y), y).detach().cpu().to(torch.float64)
    filled = [
        fill_masked(Image(item.numpy().transpose(1, 2, 0), peak=1.0), partition, config.fill, seed=seed + n)
        .data.transpose(2, 0, 1)
        for n, (item, partition) in enumerate(zip(observed, partitions))
    ]
    return torch.from_numpy(np.stack(filled)).to(y.dtype)


def unroll_forward(
    y: torch.Tensor,
    partitions: Sequence[MaskPartition] | None,
    regularizer: Regularizer,
    mu: torch.Tensor | float,
    config: UnrollConfig,
    *,
    cov: ColoredCovariance | None = None,
    fill_seed: int = 0,
    trace: bool = False,
) -> tuple[torch.Tensor, UnrollTrace]:
    """Run ``config.iterations`` DF/regularizer rounds and finish on a DF step.

    z⁰ is the J^c-only fill when *partitions* are given, else y itself.
    For k = 1..K: xᵏ = DF(y, zᵏ⁻¹), zᵏ = R(xᵏ); the output is DF(y, zᴷ),
    so on J it equals the last regularizer output exactly.
    """
    if y.ndim != 4:
        raise DimensionError(f"expected (N, C, H, W) observations, got {tuple(y.shape)}")
    variant = config.df_variant
    held_out = partitions_to_tensor(partitions, y) if partitions is not None else None
    if variant == DFVariant.MASKED_QUADRATIC and held_out is None:
        raise UnrollError("masked_quadratic data fidelity needs a partition per image")
    if variant == DFVariant.COLORED_CG and cov is None:
        raise UnrollError("colored_cg data fidelity needs a noise covariance")

    if held_out is not None:
        y = torch.where(held_out, torch.zeros_like(y), y)
        z = fill_batch(y, partitions, config, seed=fill_seed)
    else:
        z = y

    def data_fidelity(z_prev: torch.Tensor) -> torch.Tensor:
        if variant == DFVariant.MASKED_QUADRATIC:
            return masked_fidelity(y, z_prev, held_out, mu)
        if variant == DFVariant.FULL_IMAGE:
            return full_fidelity(y, z_prev, mu)
        return _colored_batch(y, z_prev, float(mu), cov, config, partitions)

    result = UnrollTrace(output=z, z_initial=z.detach().clone() if trace else None)
    for _ in range(config.iterations):
        x = data_fidelity(z)
        z = regularizer(x)
        if not torch.all(torch.isfinite(z)):
            raise NumericError("regularizer produced non-finite values")
        if trace:
            result.x_snapshots.append(x.detach().clone())
            result.z_snapshots.append(z.detach().clone())
    result.output = data_fidelity(z)
    return result.output, result


def unroll_backward(
    trace: UnrollTrace, upstream: torch.Tensor, module: nn.Module
) -> dict[str, torch.Tensor]:
    """Gradients of ⟨upstream, x̂⟩ for every named parameter of *module* (μ included)."""
    if trace is None or trace.output.grad_fn is None:
        raise UnrollError("missing trace: unroll_forward output is not attached to a graph")
    if upstream.shape != trace.output.shape:
        raise DimensionError(
            f"upstream {tuple(upstream.shape)} vs output {tuple(trace.output.shape)}"
        )
    named = [(name, p) for name, p in module.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(
        trace.output,
        [p for _, p in named],
        grad_outputs=upstream,
        allow_unused=True,
        retain_graph=True,
    )
    return {
        name: torch.zeros_like(p) if g is None else g for (name, p), g in zip(named, grads)
    }


# ─── Unrolled model ──────────────────────────────────────────────────────────


class UnrolledInpainter(nn.Module):
    """One regularizer shared by every iteration plus the penalty mu = exp(mu_log)."""

    def __init__(self, regularizer: nn.Module, config: UnrollConfig, mu_init: float = 0.05) -> None:
        super().__init__()
        if not mu_init > 0:
            raise InvalidParameterError(f"mu_init must be positive, got {mu_init}")
        self.regularizer = regularizer
        self.config = config
        self.mu_log = nn.Parameter(torch.tensor(math.log(mu_init), dtype=torch_dtype()))

    @property
    def mu(self) -> torch.Tensor:
        return torch.exp(self.mu_log)

    @property
    def channels(self) -> int | None:
        return getattr(self.regularizer, "channels", None)

    def unroll(
        self,
        y: torch.Tensor,
        partitions: Sequence[MaskPartition] | None = None,
        *,
        df_variant: DFVariant | None = None,
        cov: ColoredCovariance | None = None,
        fill_seed: int = 0,
        trace: bool = False,
    ) -> tuple[torch.Tensor, UnrollTrace]:
        config = self.config
        if df_variant is not None and df_variant != config.df_variant:
            config = config.model_copy(update={"df_variant": df_variant})
        return unroll_forward(
            y, partitions, self.regularizer, self.mu, config, cov=cov, fill_seed=fill_seed, trace=trace
        )

    def forward(
        self, y: torch.Tensor, partitions: Sequence[MaskPartition] | None = None
    ) -> torch.Tensor:
        variant = DFVariant.MASKED_QUADRATIC if partitions is not None else DFVariant.FULL_IMAGE
        return self.unroll(y, partitions, df_variant=variant)[0]
