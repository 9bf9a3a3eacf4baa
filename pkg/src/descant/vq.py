"""Sliced vector quantization bottleneck.

A latent vector is split into 16 equal slices, each discretized against one
shared codebook by nearest squared distance. Gradients pass straight through
the quantization to the slices; the codebook itself is trained by exponential
moving averages with random restarts for starved entries, never by gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .errors import DimensionMismatch
from .vocab import CODEBOOK_SIZE, CODES_PER_BAR

CHECKPOINT_VERSION = 1


def slice_latent(z: Tensor, n_slices: int = CODES_PER_BAR) -> Tensor:
    """Split the last dimension into `n_slices` contiguous equal slices.

    (..., n_slices * d) -> (..., n_slices, d); concatenation inverts it.
    """
    dim = z.shape[-1]
    if dim % n_slices != 0:
        raise DimensionMismatch(f"latent dim {dim} not divisible by {n_slices}")
    return z.reshape(*z.shape[:-1], n_slices, dim // n_slices)


def concat_slices(slices: Tensor) -> Tensor:
    """Inverse of `slice_latent`."""
    return slices.reshape(*slices.shape[:-2], slices.shape[-2] * slices.shape[-1])


@dataclass
class QuantizeResult:
    """Output of one quantization pass.

    `quantized` carries straight-through gradients to the input slices;
    `commitment` is the raw mean squared slice-to-row distance and
    `commitment_loss` its beta-weighted form.
    """

    codes: Tensor
    quantized: Tensor
    commitment: Tensor
    commitment_loss: Tensor


def vqvae_loss(reconstruction_nll: Tensor, commitment: Tensor, beta: float) -> Tensor:
    """Total objective: reconstruction NLL plus beta-weighted commitment."""
    return reconstruction_nll + beta * commitment


class SlicedCodebook(nn.Module):
    """Shared codebook with EMA statistics for sliced quantization.

    `quantize`/`lookup` are pure over a snapshot of the entries; `ema_update`
    and `random_restart` mutate and expect a single writer per training step.
    """

    def __init__(
        self,
        num_codes: int = CODEBOOK_SIZE,
        dim: int = 8,
        n_slices: int = CODES_PER_BAR,
        decay: float = 0.99,
        epsilon: float = 1e-5,
        restart_threshold: float = 1.0,
        beta: float = 0.02,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if not 0.0 <= decay < 1.0:
            raise ValueError(f"decay must be in [0, 1), got {decay}")
        self.num_codes = num_codes
        self.dim = dim
        self.n_slices = n_slices
        self.decay = decay
        self.epsilon = epsilon
        self.restart_threshold = restart_threshold
        self.beta = beta
        generator = torch.Generator().manual_seed(seed)
        entries = torch.randn(num_codes, dim, generator=generator, dtype=dtype)
        self.register_buffer("entries", entries)
        self.register_buffer("ema_counts", torch.ones(num_codes, dtype=dtype))
        self.register_buffer("ema_sums", entries.clone())
        self._generator = generator

    def _check_dim(self, slices: Tensor) -> None:
        if slices.shape[-1] != self.dim:
            raise DimensionMismatch(
                f"slice dim {slices.shape[-1]} != codebook dim {self.dim}"
            )

    def lookup(self, slices: Tensor) -> Tensor:
        """Nearest-entry index per slice; ties go to the smaller index."""
        self._check_dim(slices)
        flat = slices.reshape(-1, self.dim)
        distances = torch.cdist(
            flat, self.entries.detach(), compute_mode="donot_use_mm_for_euclid_dist"
        )
        return distances.argmin(dim=1).reshape(slices.shape[:-1])

    def quantize(self, slices: Tensor) -> QuantizeResult:
        """Discretize slices and return straight-through quantized vectors."""
        codes = self.lookup(slices)
        rows = self.entries.detach()[codes]
        commitment = ((slices - rows) ** 2).sum(dim=-1).mean()
        # Forward value is exactly `rows`; gradient passes straight through.
        quantized = rows + (slices - slices.detach())
        return QuantizeResult(
            codes=codes,
            quantized=quantized,
            commitment=commitment,
            commitment_loss=self.beta * commitment,
        )

    def forward(self, z: Tensor) -> QuantizeResult:
        """Slice a flat latent, quantize, and re-concatenate."""
        result = self.quantize(slice_latent(z, self.n_slices))
        return QuantizeResult(
            codes=result.codes,
            quantized=concat_slices(result.quantized),
            commitment=result.commitment,
            commitment_loss=result.commitment_loss,
        )

    @torch.no_grad()
    def ema_update(self, slices: Tensor, codes: Tensor) -> None:
        """Fold one batch of assignments into the moving averages."""
        self._check_dim(slices)
        flat = slices.reshape(-1, self.dim).detach().to(self.entries.dtype)
        flat_codes = codes.reshape(-1)
        if flat.shape[0] == 0:
            raise ValueError("ema_update needs a non-empty batch")
        counts = torch.bincount(flat_codes, minlength=self.num_codes).to(flat.dtype)
        sums = torch.zeros_like(self.ema_sums)
        sums.index_add_(0, flat_codes, flat)
        self.ema_counts.mul_(self.decay).add_(counts, alpha=1.0 - self.decay)
        self.ema_sums.mul_(self.decay).add_(sums, alpha=1.0 - self.decay)
        self._refresh_entries()

    @torch.no_grad()
    def random_restart(self, pool: Tensor) -> int:
        """Reseed every starved entry from a uniformly sampled pool vector.

        Returns the number of restarted entries. Restarted entries get count 1,
        so `min(ema_counts) >= min(restart_threshold, 1)` afterwards.
        """
        pool = pool.reshape(-1, pool.shape[-1]).detach().to(self.entries.dtype)
        self._check_dim(pool)
        if pool.shape[0] == 0:
            raise ValueError("random_restart needs a non-empty pool")
        dead = self.ema_counts < self.restart_threshold
        n_dead = int(dead.sum())
        if n_dead == 0:
            return 0
        picks = torch.randint(
            0, pool.shape[0], (n_dead,), generator=self._generator
        )
        self.ema_counts[dead] = 1.0
        self.ema_sums[dead] = pool[picks]
        self._refresh_entries()
        return n_dead

    def _refresh_entries(self) -> None:
        denom = self.ema_counts.clamp(min=self.epsilon).unsqueeze(1)
        self.entries.copy_(self.ema_sums / denom)

    def save(self, path) -> None:
        np.savez(
            path,
            version=CHECKPOINT_VERSION,
            num_codes=self.num_codes,
            dim=self.dim,
            n_slices=self.n_slices,
            decay=self.decay,
            epsilon=self.epsilon,
            restart_threshold=self.restart_threshold,
            beta=self.beta,
            entries=self.entries.cpu().numpy(),
            ema_counts=self.ema_counts.cpu().numpy(),
            ema_sums=self.ema_sums.cpu().numpy(),
        )

    @classmethod
    def load(cls, path) -> "SlicedCodebook":
        data = np.load(path)
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported codebook version {int(data['version'])}")
        codebook = cls(
            num_codes=int(data["num_codes"]),
            dim=int(data["dim"]),
            n_slices=int(data["n_slices"]),
            decay=float(data["decay"]),
            epsilon=float(data["epsilon"]),
            restart_threshold=float(data["restart_threshold"]),
            beta=float(data["beta"]),
            dtype=torch.from_numpy(data["entries"]).dtype,
        )
        with torch.no_grad():
            codebook.entries.copy_(torch.from_numpy(data["entries"]))
            codebook.ema_counts.copy_(torch.from_numpy(data["ema_counts"]))
            codebook.ema_sums.copy_(torch.from_numpy(data["ema_sums"]))
        return codebook
