"""Small decoder-only causal LM: augmented vocabulary, embedding table, LoRA.

The model stands in for a pretrained backbone at desk scale. Word-level
tokenization over a closed vocabulary, with relation placeholder tokens
appended after the base tokens so their indices are |base|..|base|+m-1.
Attention query/value projections carry low-rank adapters; everything else is
frozen after initialization. The output head ties the embedding table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import torch
import torch.nn.functional as F
from torch import nn

_FORWARD_CALLS = 0


@lru_cache(maxsize=32)
def _causal_mask(length: int) -> torch.Tensor:
    return torch.triu(torch.ones(length, length, dtype=torch.bool), diagonal=1)


def forward_call_count() -> int:
    """Process-wide count of LM forward passes (for ablation audits)."""
    return _FORWARD_CALLS


def reset_forward_call_count() -> None:
    global _FORWARD_CALLS
    _FORWARD_CALLS = 0


class Vocabulary:
    """Closed word-level vocabulary with placeholder tokens appended at the end.

    Text is split on whitespace; a chunk that is not a known token falls back
    to its characters (used for decimal literals in flattened prompts) and
    fails if any character is unknown. Placeholder tokens are atomic: they can
    never be produced by text tokenization and may not appear in text.
    """

    def __init__(self, base_tokens: list[str], special_tokens: list[str] = ()):  # noqa: B006
        special_tokens = list(special_tokens)
        if len(set(base_tokens)) != len(base_tokens):
            raise ValueError("duplicate base tokens")
        if set(base_tokens) & set(special_tokens):
            raise ValueError("special tokens must not collide with base tokens")
        if len(set(special_tokens)) != len(special_tokens):
            raise ValueError("duplicate special tokens")
        self.tokens: list[str] = list(base_tokens) + special_tokens
        self.base_size = len(base_tokens)
        self.specials = special_tokens
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, texts: list[str], special_tokens: list[str] = (),  # noqa: B006
              include_digit_chars: bool = False) -> "Vocabulary":
        """Collect base tokens from texts in order of first appearance."""
        base: list[str] = []
        seen = set()
        for text in texts:
            for chunk in text.split():
                if chunk not in seen:
                    seen.add(chunk)
                    base.append(chunk)
        if include_digit_chars:
            for ch in "0123456789.-,":
                if ch not in seen:
                    seen.add(ch)
                    base.append(ch)
        return cls(base, list(special_tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def special_id(self, token: str) -> int:
        if token not in self.specials:
            raise KeyError(f"unknown special token {token!r}")
        return self._ids[token]

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for chunk in text.split():
            if chunk in self.specials:
                raise ValueError(f"special token {chunk!r} may not appear in text")
            if chunk in self._ids:
                ids.append(self._ids[chunk])
                continue
            try:
                ids.extend(self._ids[ch] for ch in chunk)
            except KeyError:
                raise ValueError(f"out-of-vocabulary word {chunk!r}") from None
        return ids

    def decode(self, ids: list[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)


@dataclass(frozen=True)
class DecoderConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_emb: int = 64
    d_ff: int = 256
    max_len: int = 256
    lora_rank: int = 4
    lora_alpha: float = 8.0

    def __post_init__(self):
        if self.d_emb % self.n_heads != 0:
            raise ValueError(f"d_emb {self.d_emb} not divisible by {self.n_heads} heads")
        if self.lora_rank < 0:
            raise ValueError("lora_rank must be >= 0")


class Dense(nn.Module):
    """Plain linear layer with seeded init (float64)."""

    def __init__(self, d_in: int, d_out: int, generator: torch.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(d_in)
        w = torch.empty(d_out, d_in, dtype=torch.float64)
        w.uniform_(-bound, bound, generator=generator)
        b = torch.empty(d_out, dtype=torch.float64)
        b.uniform_(-bound, bound, generator=generator)
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(b)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.weight.T + self.bias


class LoRALinear(nn.Module):
    """Linear layer with an additive low-rank adapter: W x + b + (alpha/r) B (A x).

    B starts at zero, so a freshly built model is exactly the base model.
    Only A and B are trainable; the base weight and bias stay frozen.
    """

    def __init__(self, d_in: int, d_out: int, rank: int, alpha: float,
                 generator: torch.Generator):
        super().__init__()
        self.base = Dense(d_in, d_out, generator)
        self.rank = rank
        self.scaling = alpha / rank if rank > 0 else 0.0
        self.enabled = True
        if rank > 0:
            bound = 1.0 / math.sqrt(d_in)
            a = torch.empty(rank, d_in, dtype=torch.float64)
            a.uniform_(-bound, bound, generator=generator)
            self.lora_A = nn.Parameter(a)
            self.lora_B = nn.Parameter(torch.zeros(d_out, rank, dtype=torch.float64))
        else:
            self.lora_A = None
            self.lora_B = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.base(x)
        if self.enabled and self.rank > 0:
            y = y + self.scaling * ((x @ self.lora_A.T) @ self.lora_B.T)
        return y


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: DecoderConfig, generator: torch.Generator):
        super().__init__()
        d = cfg.d_emb
        self.n_heads = cfg.n_heads
        self.head_dim = d // cfg.n_heads
        self.q_proj = LoRALinear(d, d, cfg.lora_rank, cfg.lora_alpha, generator)
        self.k_proj = Dense(d, d, generator)
        self.v_proj = LoRALinear(d, d, cfg.lora_rank, cfg.lora_alpha, generator)
        self.o_proj = Dense(d, d, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, L, d = x.shape
        def heads(t):
            return t.view(b, L, self.n_heads, self.head_dim).transpose(1, 2)
        q, k, v = heads(self.q_proj(x)), heads(self.k_proj(x)), heads(self.v_proj(x))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        att = att.masked_fill(_causal_mask(L), float("-inf"))
        att = F.softmax(att, dim=-1)
        ctx = (att @ v).transpose(1, 2).reshape(b, L, d)
        return self.o_proj(ctx)


class Block(nn.Module):
    """Pre-norm residual block: attention then a ReLU MLP."""

    def __init__(self, cfg: DecoderConfig, generator: torch.Generator):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_emb, dtype=torch.float64)
        self.attn = CausalSelfAttention(cfg, generator)
        self.ln2 = nn.LayerNorm(cfg.d_emb, dtype=torch.float64)
        self.fc1 = Dense(cfg.d_emb, cfg.d_ff, generator)
        self.fc2 = Dense(cfg.d_ff, cfg.d_emb, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(F.relu(self.fc1(self.ln2(x))))


class CausalLM(nn.Module):
    """Decoder-only LM operating on embedding matrices.

    `embed` is the bare table lookup (row i of the embedding matrix for token
    i); position information is added inside `forward_embeddings`, so callers
    can edit embedding rows before the forward pass. Logits are produced by
    tying the output head to the embedding table. After construction every
    parameter is frozen except the LoRA adapters.
    """

    def __init__(self, cfg: DecoderConfig, vocab_size: int, generator: torch.Generator):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        tok = torch.empty(vocab_size, cfg.d_emb, dtype=torch.float64)
        tok.normal_(0.0, 0.02, generator=generator)
        pos = torch.empty(cfg.max_len, cfg.d_emb, dtype=torch.float64)
        pos.normal_(0.0, 0.02, generator=generator)
        self.tok_emb = nn.Parameter(tok)
        self.pos_emb = nn.Parameter(pos)
        self.blocks = nn.ModuleList(Block(cfg, generator) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_emb, dtype=torch.float64)
        self.forward_calls = 0
        for name, p in self.named_parameters():
            p.requires_grad_("lora_A" in name or "lora_B" in name)

    def embed(self, token_ids) -> torch.Tensor:
        ids = torch.as_tensor(token_ids, dtype=torch.int64)
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValueError(
                f"token index out of range for vocabulary of size {self.vocab_size}"
            )
        return self.tok_emb.index_select(0, ids.reshape(-1)).reshape(*ids.shape, -1)

    def forward_embeddings(self, embeddings: torch.Tensor) -> torch.Tensor:
        global _FORWARD_CALLS
        squeeze = embeddings.ndim == 2
        x = embeddings.unsqueeze(0) if squeeze else embeddings
        L = x.shape[1]
        if L > self.cfg.max_len:
            raise ValueError(f"sequence length {L} exceeds context length {self.cfg.max_len}")
        _FORWARD_CALLS += 1
        self.forward_calls += 1
        x = x + self.pos_emb[:L]
        for block in self.blocks:
            x = block(x)
        logits = self.ln_f(x) @ self.tok_emb.T
        return logits.squeeze(0) if squeeze else logits

    def set_lora_enabled(self, flag: bool) -> None:
        for mod in self.modules():
            if isinstance(mod, LoRALinear):
                mod.enabled = flag


def lora_trainable(model: CausalLM) -> dict[str, nn.Parameter]:
    """Exactly the adapter matrices; base weights are never in this set."""
    return {
        name: p
        for name, p in model.named_parameters()
        if "lora_A" in name or "lora_B" in name
    }
