"""Transformer encoder-decoder mapping a description sequence to a token sequence.

Both self-attention stacks use skew-based relative position scores; token,
bar and beat-position embeddings are summed at the input. Training minimizes
mean per-token cross entropy with Adam (decoupled weight decay) under an
inverse-square-root schedule with constant warmup. Sampling is autoregressive
with temperature/nucleus control and a grammar mask, so every emitted
sequence decodes back to a Score.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .codec import GrammarState, TokenSequence, VocabularyIndex
from .description import Description, description_tokens
from .errors import ContextOverflow, IndexOutOfTable, NonFiniteLoss
from .vocab import (
    BOS,
    EOS,
    MAX_BARS,
    MAX_POSITIONS,
    Vocabulary,
    bin_config_hash,
    description_vocabulary,
    sequence_vocabulary,
)

CHECKPOINT_VERSION = 1
BASE_LR = 1e-4
WARMUP_STEPS = 4000


@dataclass
class ModelConfig:
    """Architecture and training-shape hyperparameters."""

    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    encoder_layers: int = 2
    decoder_layers: int = 2
    context_length: int = 128
    seq_vocab_size: int = 0
    desc_vocab_size: int = 0
    max_bar_index: int = MAX_BARS
    max_position_index: int = MAX_POSITIONS
    dropout: float = 0.0
    seed: int = 0
    init_std: float = 0.02
    code_dim: int | None = None

    @classmethod
    def desk_scale(cls, **overrides) -> "ModelConfig":
        """Small preset for tests and CPU experiments."""
        config = cls(
            seq_vocab_size=len(sequence_vocabulary()),
            desc_vocab_size=len(description_vocabulary()),
        )
        for key, value in overrides.items():
            setattr(config, key, value)
        return config

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """Full-size preset: d_model 512, 4 encoder / 6 decoder layers, context 256."""
        config = cls(
            d_model=512,
            n_heads=8,
            d_ff=2048,
            encoder_layers=4,
            decoder_layers=6,
            context_length=256,
            dropout=0.1,
            seq_vocab_size=len(sequence_vocabulary()),
            desc_vocab_size=len(description_vocabulary()),
        )
        for key, value in overrides.items():
            setattr(config, key, value)
        return config


def lr_schedule(step: int, base: float = BASE_LR, warmup: int = WARMUP_STEPS) -> float:
    """Constant `base` during warmup, then inverse-square-root decay."""
    return base / max(1.0, math.sqrt(step / warmup))


def _naive_relative_scores(q: Tensor, table: Tensor, causal: bool) -> Tensor:
    """Gather-based reference for the skewed computation (used by tests)."""
    length = q.shape[-2]
    if causal:
        # table row r <-> key-minus-query distance r - (length - 1)
        idx = torch.arange(length).unsqueeze(1) - torch.arange(length).unsqueeze(0)
        idx = (length - 1 - idx).clamp(0, length - 1)
    else:
        idx = torch.arange(length).unsqueeze(0) - torch.arange(length).unsqueeze(1)
        idx = idx + length - 1
    gathered = table[idx]  # (L, L, head_dim)
    return torch.einsum("bhld,lmd->bhlm", q, gathered)


def _skew_causal(qe: Tensor) -> Tensor:
    """(B, H, L, L) scores where column j of row i reads distance j - i <= 0."""
    b, h, l, _ = qe.shape
    padded = F.pad(qe, (1, 0))
    return padded.reshape(b, h, l + 1, l)[:, :, 1:, :]


def _skew_bidirectional(qe: Tensor) -> Tensor:
    """(B, H, L, 2L-1) -> (B, H, L, L) scores for distances j - i in (-L, L)."""
    b, h, l, _ = qe.shape
    padded = F.pad(qe, (0, 1)).reshape(b, h, 2 * l * l)
    skewed = padded[:, :, : 2 * l * l - l].reshape(b, h, l, 2 * l - 1)
    return skewed[:, :, :, l - 1 :]


class RelativeSelfAttention(nn.Module):
    """Multi-head self-attention with learned relative position scores."""

    def __init__(self, d_model: int, n_heads: int, max_len: int, causal: bool, dropout: float):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError("d_model must divide evenly into heads")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.causal = causal
        self.max_len = max_len
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        rows = max_len if causal else 2 * max_len - 1
        self.rel_table = nn.Parameter(torch.zeros(rows, self.head_dim))
        self.dropout = nn.Dropout(dropout)

    def _rel_slice(self, length: int) -> Tensor:
        center = self.max_len - 1
        if self.causal:
            return self.rel_table[center - (length - 1) : center + 1]
        return self.rel_table[center - (length - 1) : center + length]

    def _split(self, x: Tensor) -> Tensor:
        b, l, _ = x.shape
        return x.reshape(b, l, self.n_heads, self.head_dim).transpose(1, 2)

    def attention_scores(self, x: Tensor) -> Tensor:
        """Pre-softmax logits: content term plus skewed relative term."""
        q = self._split(self.q_proj(x))
        k = self._split(self.k_proj(x))
        qe = torch.matmul(q, self._rel_slice(x.shape[1]).t())
        rel = _skew_causal(qe) if self.causal else _skew_bidirectional(qe)
        return (torch.matmul(q, k.transpose(-1, -2)) + rel) / math.sqrt(self.head_dim)

    def forward(self, x: Tensor, key_padding_mask: Tensor | None = None) -> Tensor:
        b, l, d = x.shape
        v = self._split(self.v_proj(x))
        scores = self.attention_scores(x)
        if self.causal:
            future = torch.triu(torch.ones(l, l, dtype=torch.bool, device=x.device), 1)
            scores = scores.masked_fill(future, float("-inf"))
        if key_padding_mask is not None:
            scores = scores.masked_fill(key_padding_mask[:, None, None, :], float("-inf"))
        weights = self.dropout(torch.softmax(scores, dim=-1))
        out = torch.matmul(weights, v).transpose(1, 2).reshape(b, l, d)
        return self.out_proj(out)


class CrossAttention(nn.Module):
    """Standard scaled dot-product attention from decoder onto encoder memory."""

    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor, memory: Tensor, memory_padding_mask: Tensor | None) -> Tensor:
        b, l, d = x.shape
        split = lambda t: t.reshape(b, -1, self.n_heads, self.head_dim).transpose(1, 2)
        q, k, v = split(self.q_proj(x)), split(self.k_proj(memory)), split(self.v_proj(memory))
        scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        if memory_padding_mask is not None:
            scores = scores.masked_fill(memory_padding_mask[:, None, None, :], float("-inf"))
        weights = self.dropout(torch.softmax(scores, dim=-1))
        out = torch.matmul(weights, v).transpose(1, 2).reshape(b, l, d)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, d_ff), nn.ReLU(), nn.Dropout(dropout), nn.Linear(d_ff, d_model)
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class EncoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.attn = RelativeSelfAttention(
            config.d_model, config.n_heads, config.context_length, causal=False,
            dropout=config.dropout,
        )
        self.ffn = FeedForward(config.d_model, config.d_ff, config.dropout)
        self.norm1 = nn.LayerNorm(config.d_model)
        self.norm2 = nn.LayerNorm(config.d_model)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x: Tensor, key_padding_mask: Tensor | None) -> Tensor:
        x = self.norm1(x + self.dropout(self.attn(x, key_padding_mask)))
        return self.norm2(x + self.dropout(self.ffn(x)))


class DecoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.self_attn = RelativeSelfAttention(
            config.d_model, config.n_heads, config.context_length, causal=True,
            dropout=config.dropout,
        )
        self.cross_attn = CrossAttention(config.d_model, config.n_heads, config.dropout)
        self.ffn = FeedForward(config.d_model, config.d_ff, config.dropout)
        self.norm1 = nn.LayerNorm(config.d_model)
        self.norm2 = nn.LayerNorm(config.d_model)
        self.norm3 = nn.LayerNorm(config.d_model)
        self.dropout = nn.Dropout(config.dropout)

    def forward(
        self,
        x: Tensor,
        memory: Tensor,
        self_padding_mask: Tensor | None,
        memory_padding_mask: Tensor | None,
    ) -> Tensor:
        x = self.norm1(x + self.dropout(self.self_attn(x, self_padding_mask)))
        x = self.norm2(x + self.dropout(self.cross_attn(x, memory, memory_padding_mask)))
        return self.norm3(x + self.dropout(self.ffn(x)))


class DescriptionToSequenceModel(nn.Module):
    """The conditional sequence network.

    Encoder tokens carry bar embeddings only; decoder tokens additionally get
    beat-position embeddings. An optional per-token latent vector (projected
    codebook rows) is summed onto the encoder embeddings when descriptions
    combine readable features with learned codes.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.seq_vocab_size <= 0 or config.desc_vocab_size <= 0:
            raise ValueError("vocab sizes must be set (use a preset constructor)")
        self.config = config
        torch.manual_seed(config.seed)
        self.desc_embedding = nn.Embedding(config.desc_vocab_size, config.d_model)
        self.seq_embedding = nn.Embedding(config.seq_vocab_size, config.d_model)
        self.bar_embedding = nn.Embedding(config.max_bar_index + 1, config.d_model)
        self.beat_embedding = nn.Embedding(config.max_position_index + 1, config.d_model)
        self.encoder = nn.ModuleList(EncoderLayer(config) for _ in range(config.encoder_layers))
        self.decoder = nn.ModuleList(DecoderLayer(config) for _ in range(config.decoder_layers))
        self.output = nn.Linear(config.d_model, config.seq_vocab_size)
        self.code_projection = (
            nn.Linear(config.code_dim, config.d_model) if config.code_dim else None
        )
        self.input_dropout = nn.Dropout(config.dropout)
        self._init_weights(config.init_std)

    def _init_weights(self, std: float) -> None:
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Embedding)):
                nn.init.normal_(module.weight, mean=0.0, std=std)
                if isinstance(module, nn.Linear) and module.bias is not None:
                    nn.init.zeros_(module.bias)
        for module in self.modules():
            if isinstance(module, RelativeSelfAttention):
                nn.init.normal_(module.rel_table, mean=0.0, std=std)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def _check_tables(self, bars: Tensor, beats: Tensor | None = None) -> None:
        if bars.numel() and int(bars.max()) > self.config.max_bar_index:
            raise IndexOutOfTable(f"bar index {int(bars.max())} > {self.config.max_bar_index}")
        if beats is not None and beats.numel() and int(beats.max()) > self.config.max_position_index:
            raise IndexOutOfTable(
                f"beat position {int(beats.max())} > {self.config.max_position_index}"
            )

    def embed_description(
        self, ids: Tensor, bars: Tensor, injected: Tensor | None = None
    ) -> Tensor:
        """Token + bar embeddings (+ optional projected latent vectors)."""
        self._check_tables(bars)
        out = self.desc_embedding(ids) + self.bar_embedding(bars)
        if injected is not None:
            out = out + injected
        return out

    def embed_sequence(self, ids: Tensor, bars: Tensor, beats: Tensor) -> Tensor:
        """Token + bar + beat-position embeddings, summed per position."""
        self._check_tables(bars, beats)
        return self.seq_embedding(ids) + self.bar_embedding(bars) + self.beat_embedding(beats)

    def project_codes(self, code_vectors: Tensor) -> Tensor:
        if self.code_projection is None:
            raise ValueError("model was built without code_dim")
        return self.code_projection(code_vectors)

    def encode(
        self, desc_ids: Tensor, desc_bars: Tensor,
        desc_padding_mask: Tensor | None = None, injected: Tensor | None = None,
    ) -> Tensor:
        if desc_ids.shape[1] > self.config.context_length:
            raise ContextOverflow(
                f"description window {desc_ids.shape[1]} > context {self.config.context_length}"
            )
        x = self.input_dropout(self.embed_description(desc_ids, desc_bars, injected))
        for layer in self.encoder:
            x = layer(x, desc_padding_mask)
        return x

    def decode(
        self, memory: Tensor, tgt_ids: Tensor, tgt_bars: Tensor, tgt_beats: Tensor,
        tgt_padding_mask: Tensor | None = None, memory_padding_mask: Tensor | None = None,
    ) -> Tensor:
        """Log-probabilities over the next token at every prefix position."""
        if tgt_ids.shape[1] > self.config.context_length:
            raise ContextOverflow(
                f"target prefix {tgt_ids.shape[1]} > context {self.config.context_length}"
            )
        x = self.input_dropout(self.embed_sequence(tgt_ids, tgt_bars, tgt_beats))
        for layer in self.decoder:
            x = layer(x, memory, tgt_padding_mask, memory_padding_mask)
        return F.log_softmax(self.output(x), dim=-1)

    def forward(
        self,
        desc_ids: Tensor, desc_bars: Tensor,
        tgt_ids: Tensor, tgt_bars: Tensor, tgt_beats: Tensor,
        desc_padding_mask: Tensor | None = None,
        tgt_padding_mask: Tensor | None = None,
        injected: Tensor | None = None,
    ) -> Tensor:
        memory = self.encode(desc_ids, desc_bars, desc_padding_mask, injected)
        return self.decode(
            memory, tgt_ids, tgt_bars, tgt_beats, tgt_padding_mask, desc_padding_mask
        )


@dataclass
class TrainingPair:
    """One (description, sequence) example as aligned id arrays."""

    desc_ids: np.ndarray
    desc_bars: np.ndarray
    seq_ids: np.ndarray
    seq_bars: np.ndarray
    seq_beats: np.ndarray

    @classmethod
    def from_sequences(
        cls,
        desc: TokenSequence,
        seq: TokenSequence,
        desc_vocab: Vocabulary,
        seq_vocab: Vocabulary,
    ) -> "TrainingPair":
        return cls(
            desc_ids=np.array(desc.ids(desc_vocab), dtype=np.int64),
            desc_bars=np.array(desc.bar_indices, dtype=np.int64),
            seq_ids=np.array(seq.ids(seq_vocab), dtype=np.int64),
            seq_bars=np.array(seq.bar_indices, dtype=np.int64),
            seq_beats=np.array(seq.positions, dtype=np.int64),
        )


def window_tokens(
    desc: TokenSequence, seq: TokenSequence, context_length: int
) -> list[tuple[TokenSequence, TokenSequence]]:
    """Split an aligned pair into bar-grouped windows that fit the context.

    Windows keep original bar numbering and are re-wrapped in bos; eos is kept
    only on the window containing the final bar.
    """

    def groups(ts: TokenSequence) -> dict[int, list[int]]:
        by_bar: dict[int, list[int]] = {}
        for i, bar in enumerate(ts.bar_indices):
            if bar > 0:
                by_bar.setdefault(bar, []).append(i)
        return by_bar

    desc_groups, seq_groups = groups(desc), groups(seq)
    all_bars = sorted(set(desc_groups) | set(seq_groups))
    if not all_bars:
        return [(desc, seq)]
    budget = context_length - 2

    windows: list[tuple[TokenSequence, TokenSequence]] = []
    start = 0
    while start < len(all_bars):
        d_len = s_len = 0
        stop = start
        while stop < len(all_bars):
            bar = all_bars[stop]
            nd = len(desc_groups.get(bar, []))
            ns = len(seq_groups.get(bar, []))
            if stop > start and (d_len + nd > budget or s_len + ns > budget):
                break
            d_len += nd
            s_len += ns
            stop += 1

        def build(ts: TokenSequence, group_map, final: bool) -> TokenSequence:
            idx = [i for bar in all_bars[start:stop] for i in group_map.get(bar, [])]
            idx = idx[:budget]
            tokens = [BOS] + [ts.tokens[i] for i in idx] + ([EOS] if final else [])
            bars = [0] + [ts.bar_indices[i] for i in idx] + ([0] if final else [])
            beats = [0] + [ts.positions[i] for i in idx] + ([0] if final else [])
            return TokenSequence(tokens, bars, beats)

        final = stop == len(all_bars)
        windows.append((build(desc, desc_groups, final), build(seq, seq_groups, final)))
        start = stop
    return windows


def _collate(
    pairs: Sequence[TrainingPair], desc_pad: int, seq_pad: int, device=None
) -> dict[str, Tensor]:
    def pad_stack(arrays: list[np.ndarray], value: int) -> Tensor:
        width = max(len(a) for a in arrays)
        out = np.full((len(arrays), width), value, dtype=np.int64)
        for i, a in enumerate(arrays):
            out[i, : len(a)] = a
        return torch.from_numpy(out)

    return {
        "desc_ids": pad_stack([p.desc_ids for p in pairs], desc_pad),
        "desc_bars": pad_stack([p.desc_bars for p in pairs], 0),
        "seq_ids": pad_stack([p.seq_ids for p in pairs], seq_pad),
        "seq_bars": pad_stack([p.seq_bars for p in pairs], 0),
        "seq_beats": pad_stack([p.seq_beats for p in pairs], 0),
    }


@dataclass
class SamplingParams:
    temperature: float = 1.0
    top_p: float = 1.0
    seed: int = 0
    max_tokens: int = 4096


class Seq2SeqGenerator:
    """Trainer plus sampler around `DescriptionToSequenceModel`.

    sklearn-flavoured surface: `fit(pairs)` trains in place and returns self;
    `generate` samples a token sequence for a description. All state needed to
    resume (parameters, Adam moments, step counter) lives in the checkpoint.
    """

    def __init__(self, config: ModelConfig | None = None, dtype: torch.dtype = torch.float32):
        self.config = config if config is not None else ModelConfig.desk_scale()
        self.seq_vocab = sequence_vocabulary()
        self.desc_vocab = description_vocabulary()
        self.model = DescriptionToSequenceModel(self.config).to(dtype)
        self.optimizer = torch.optim.AdamW(
            self.model.parameters(),
            lr=BASE_LR,
            betas=(0.9, 0.999),
            eps=1e-6,
            weight_decay=0.01,
        )
        self.step = 0
        self._vocab_index = VocabularyIndex(self.seq_vocab)

    # -- training -----------------------------------------------------------

    def _loss(self, batch: dict[str, Tensor]) -> Tensor:
        seq_pad = self.seq_vocab.pad_id
        desc_pad = self.desc_vocab.pad_id
        inputs = batch["seq_ids"][:, :-1]
        targets = batch["seq_ids"][:, 1:]
        log_probs = self.model(
            batch["desc_ids"],
            batch["desc_bars"],
            inputs,
            batch["seq_bars"][:, :-1],
            batch["seq_beats"][:, :-1],
            desc_padding_mask=batch["desc_ids"] == desc_pad,
            tgt_padding_mask=inputs == seq_pad,
        )
        mask = targets != seq_pad
        token_nll = -log_probs.gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
        return (token_nll * mask).sum() / mask.sum()

    def train_step(self, pairs: Sequence[TrainingPair]) -> float:
        """One optimizer step on a batch; returns the mean per-token NLL."""
        self.model.train()
        batch = _collate(pairs, self.desc_vocab.pad_id, self.seq_vocab.pad_id)
        lr = lr_schedule(self.step)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad()
        loss = self._loss(batch)
        if not torch.isfinite(loss):
            raise NonFiniteLoss(
                f"loss {loss.item()} at step {self.step} (lr {lr:.3e}, "
                f"batch {batch['seq_ids'].shape})"
            )
        loss.backward()
        self.optimizer.step()
        self.step += 1
        return float(loss.detach())

    def fit(
        self,
        pairs: Sequence[TrainingPair],
        steps: int = 1000,
        batch_size: int = 8,
        log_every: int = 0,
        log_fn: Callable[[int, float, float], None] | None = None,
        target_loss: float | None = None,
        check_every: int = 100,
    ) -> "Seq2SeqGenerator":
        """Cycle over `pairs` in fixed order; optional early stop at `target_loss`."""
        cursor = 0
        for _ in range(steps):
            batch = [pairs[(cursor + i) % len(pairs)] for i in range(batch_size)]
            cursor = (cursor + batch_size) % len(pairs)
            loss = self.train_step(batch)
            if log_every and log_fn and self.step % log_every == 0:
                log_fn(self.step, lr_schedule(self.step - 1), loss)
            if target_loss is not None and self.step % check_every == 0:
                if self.evaluate_nll(pairs) < target_loss:
                    break
        return self

    @torch.no_grad()
    def evaluate_nll(self, pairs: Sequence[TrainingPair], batch_size: int = 16) -> float:
        """Mean per-token NLL over all non-padding targets of the corpus."""
        self.model.eval()
        total, count = 0.0, 0
        seq_pad = self.seq_vocab.pad_id
        for i in range(0, len(pairs), batch_size):
            batch = _collate(pairs[i : i + batch_size], self.desc_vocab.pad_id, seq_pad)
            inputs = batch["seq_ids"][:, :-1]
            targets = batch["seq_ids"][:, 1:]
            log_probs = self.model(
                batch["desc_ids"], batch["desc_bars"], inputs,
                batch["seq_bars"][:, :-1], batch["seq_beats"][:, :-1],
                desc_padding_mask=batch["desc_ids"] == self.desc_vocab.pad_id,
                tgt_padding_mask=inputs == seq_pad,
            )
            mask = targets != seq_pad
            nll = -log_probs.gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
            total += float((nll * mask).sum().to(torch.float64))
            count += int(mask.sum())
        return total / max(count, 1)

    def perplexity(self, pairs: Sequence[TrainingPair]) -> float:
        """exp(mean per-token NLL); invariant to how the corpus is batched."""
        return math.exp(self.evaluate_nll(pairs))

    # -- sampling -------------------------------------------------------------

    def _encoder_window(
        self, groups: list[tuple[list[int], list[int]]], current_bar: int
    ) -> tuple[Tensor, Tensor]:
        """Description tokens for a bar window re-centered on `current_bar`."""
        budget = self.config.context_length - 2
        n_bars = len(groups)
        if n_bars == 0:
            ids = [self.desc_vocab.bos_id, self.desc_vocab.eos_id]
            return torch.tensor([ids], dtype=torch.long), torch.zeros(1, 2, dtype=torch.long)
        start = max(0, min(current_bar - 1 - n_bars // 2, n_bars - 1))
        # Pull the window back while it still fits, then extend forward.
        chosen: list[int] = []
        width = 0
        idx = start
        while idx < n_bars and width + len(groups[idx][0]) <= budget:
            chosen.append(idx)
            width += len(groups[idx][0])
            idx += 1
        idx = start - 1
        while idx >= 0 and width + len(groups[idx][0]) <= budget:
            chosen.insert(0, idx)
            width += len(groups[idx][0])
            idx -= 1
        if not chosen:  # single oversized bar: truncate it
            chosen = [start]
        ids = [self.desc_vocab.bos_id]
        bars = [0]
        for i in chosen:
            ids.extend(groups[i][0][: budget])
            bars.extend(groups[i][1][: budget])
        ids = ids[: self.config.context_length - 1] + [self.desc_vocab.eos_id]
        bars = bars[: self.config.context_length - 1] + [0]
        return (
            torch.tensor([ids], dtype=torch.long),
            torch.tensor([bars], dtype=torch.long),
        )

    @torch.no_grad()
    def generate(
        self,
        description: Description | TokenSequence,
        max_bars: int = 32,
        sampling: SamplingParams | None = None,
    ) -> TokenSequence:
        """Sample one grammar-valid token sequence conditioned on a description.

        The decoder window slides once full; the encoder window re-centers on
        the description bars around the bar currently being generated.
        Terminates on eos, on completing `max_bars` bars, or by forced eos at
        the token cap.
        """
        sampling = sampling or SamplingParams()
        self.model.eval()
        desc_seq = (
            description_tokens(description)
            if isinstance(description, Description)
            else description
        )
        n_desc_bars = max(desc_seq.bar_indices) if desc_seq.bar_indices else 0
        max_bars = min(max_bars, n_desc_bars)

        desc_ids_all = desc_seq.ids(self.desc_vocab)
        groups: list[tuple[list[int], list[int]]] = [([], []) for _ in range(n_desc_bars)]
        for token_id, bar in zip(desc_ids_all, desc_seq.bar_indices):
            if bar > 0:
                groups[bar - 1][0].append(token_id)
                groups[bar - 1][1].append(bar)

        generator = torch.Generator().manual_seed(sampling.seed)
        state = GrammarState()
        state.step(BOS)
        tokens = [BOS]
        bars = [0]
        beats = [0]
        memory = None
        memory_bar = -1

        while True:
            current_bar = max(state.current_bar, 1)
            if memory is None or current_bar != memory_bar:
                desc_ids, desc_bars = self._encoder_window(groups, current_bar)
                memory = self.model.encode(desc_ids, desc_bars)
                memory_bar = current_bar

            window = self.config.context_length
            ids = torch.tensor(
                [[self.seq_vocab.id(t) for t in tokens[-window:]]], dtype=torch.long
            )
            bar_t = torch.tensor([bars[-window:]], dtype=torch.long)
            beat_t = torch.tensor([beats[-window:]], dtype=torch.long)
            log_probs = self.model.decode(memory, ids, bar_t, beat_t)[0, -1]

            mask = torch.from_numpy(self._vocab_index.legal_mask(state))
            if state.current_bar >= max_bars:
                # No further bars: force wrap-up once the current one is done.
                bar_kind = np.array(
                    [k == "bar" for k in self._vocab_index.kinds], dtype=bool
                )
                mask = mask & ~torch.from_numpy(bar_kind)
            logits = log_probs.masked_fill(~mask, float("-inf"))

            over_budget = len(tokens) >= sampling.max_tokens
            if over_budget and mask[self.seq_vocab.eos_id]:
                choice = self.seq_vocab.eos_id
            elif over_budget or sampling.temperature <= 0.0:
                choice = int(logits.argmax())
            else:
                scaled = logits / sampling.temperature
                probs = torch.softmax(scaled, dim=-1)
                if sampling.top_p < 1.0:
                    sorted_probs, order = torch.sort(probs, descending=True)
                    cumulative = torch.cumsum(sorted_probs, dim=-1)
                    cut = int(torch.searchsorted(cumulative, sampling.top_p)) + 1
                    keep = order[:cut]
                    trimmed = torch.zeros_like(probs)
                    trimmed[keep] = probs[keep]
                    probs = trimmed / trimmed.sum()
                choice = int(torch.multinomial(probs, 1, generator=generator))

            token = self.seq_vocab.token(choice)
            state.step(token)
            tokens.append(token)
            bars.append(state.current_bar if token != EOS else 0)
            beats.append(self._beat_of(token, beats))
            if token == EOS:
                break
        return TokenSequence(tokens, bars, beats)

    @staticmethod
    def _beat_of(token: str, beats: list[int]) -> int:
        if token == EOS:
            return 0
        if token.startswith("Bar_") or token.startswith("TimeSignature_"):
            return 0
        if token.startswith("Pos_"):
            return int(token.split("_")[1])
        return beats[-1]

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        torch.save(
            {
                "format_version": CHECKPOINT_VERSION,
                "config": asdict(self.config),
                "bin_config_hash": bin_config_hash(),
                "state_dict": self.model.state_dict(),
                "optimizer": self.optimizer.state_dict(),
                "step": self.step,
            },
            path,
        )

    @classmethod
    def load(cls, path, expected_hash: str | None = None) -> "Seq2SeqGenerator":
        payload = torch.load(path, weights_only=False)
        if payload["format_version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload['format_version']}")
        stored_hash = payload["bin_config_hash"]
        if expected_hash is not None and stored_hash != expected_hash:
            from .errors import ConfigMismatch

            raise ConfigMismatch(
                f"checkpoint bin config {stored_hash} != expected {expected_hash}"
            )
        generator = cls(ModelConfig(**payload["config"]))
        generator.model.load_state_dict(payload["state_dict"])
        generator.optimizer.load_state_dict(payload["optimizer"])
        generator.step = payload["step"]
        return generator

    def get_params(self, deep: bool = True) -> dict:
        return {"config": self.config}
