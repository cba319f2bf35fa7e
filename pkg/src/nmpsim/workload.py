"""LLM architectural configs and decode-step operator extraction.

Loads per-model architecture parameters (layers, hidden/FFN widths, head
counts, MoE routing) from JSON and expands one decode step into an ordered
list of GEMM operators.  Every linear operator is abstracted as an
M x K @ K x N product; attention is emitted as per-request-head GEMV tasks
with a softmax stage between score and value products.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

log = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"


class ConfigError(ValueError):
    """Raised when a model config file is malformed or violates invariants."""


class AttnKind(str, Enum):
    MHA = "MHA"
    GQA = "GQA"
    MLA = "MLA"


class Nonlinear(str, Enum):
    NONE = "none"
    SOFTMAX = "softmax"
    ACTIVATION = "activation"
    NORM = "norm"


@dataclass(frozen=True)
class MoeConfig:
    experts: int
    top_k: int


@dataclass(frozen=True)
class MlaDims:
    """Optional low-rank dimensions for MLA-style attention.

    kv_rank is the shared compressed KV latent width per token; rope_dim is
    an optional uncompressed positional slice appended to the key side.
    """

    kv_rank: int
    rope_dim: int = 0


@dataclass(frozen=True)
class ModelConfig:
    name: str
    layers: int
    hidden: int
    ffn: int
    q_heads: int
    kv_heads: int
    attn_kind: AttnKind
    moe: MoeConfig | None = None
    head_dim: int | None = None  # defaults to hidden / q_heads
    elem_bytes: int = 2  # FP16
    mla: MlaDims | None = None

    def __post_init__(self):
        for field_name in ("layers", "hidden", "ffn", "q_heads", "kv_heads"):
            if getattr(self, field_name) < 1:
                raise ConfigError(f"{field_name} must be >= 1, got {getattr(self, field_name)}")
        if self.kv_heads > self.q_heads:
            raise ConfigError("kv_heads exceeds q_heads")
        if self.head_dim is None and self.hidden % self.q_heads != 0:
            raise ConfigError(
                f"q_heads ({self.q_heads}) must divide hidden ({self.hidden}) "
                "when head_dim is defaulted"
            )
        if self.head_dim is not None and self.head_dim < 1:
            raise ConfigError("head_dim must be >= 1")
        if self.elem_bytes < 1:
            raise ConfigError("elem_bytes must be >= 1")
        if self.moe is not None:
            if self.moe.experts < 1 or not (1 <= self.moe.top_k <= self.moe.experts):
                raise ConfigError("moe requires 1 <= top_k <= experts")
        if self.mla is not None and self.mla.kv_rank < 1:
            raise ConfigError("mla.kv_rank must be >= 1")

    @property
    def resolved_head_dim(self) -> int:
        return self.head_dim if self.head_dim is not None else self.hidden // self.q_heads


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))


def resolve_model_path(name_or_path: str) -> Path:
    """Map a preset name like 'llama3-70b' or a filesystem path to a file."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    preset = PRESET_DIR / f"{name_or_path}.json"
    if preset.is_file():
        return preset
    raise FileNotFoundError(f"model config not found: {name_or_path}")


def load_model_config(path: str | Path) -> ModelConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model config not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    return model_config_from_dict(raw, source=str(path))


def model_config_from_dict(raw: dict, source: str = "<dict>") -> ModelConfig:
    try:
        moe = raw.get("moe")
        mla = raw.get("mla")
        return ModelConfig(
            name=raw["name"],
            layers=int(raw["layers"]),
            hidden=int(raw["hidden"]),
            ffn=int(raw["ffn"]),
            q_heads=int(raw["q_heads"]),
            kv_heads=int(raw["kv_heads"]),
            attn_kind=AttnKind(raw["attn_kind"]),
            moe=MoeConfig(int(moe["experts"]), int(moe["top_k"])) if moe else None,
            head_dim=int(raw["head_dim"]) if raw.get("head_dim") is not None else None,
            elem_bytes=int(raw.get("elem_bytes", 2)),
            mla=MlaDims(int(mla["kv_rank"]), int(mla.get("rope_dim", 0))) if mla else None,
        )
    except KeyError as exc:
        raise ConfigError(f"{source}: missing field {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{source}: {exc}") from exc


@dataclass(frozen=True)
class GemmOp:
    """One decode linear operator, M x K @ K x N, possibly replicated `count` times."""

    m: int
    n: int
    k: int
    tag: str
    layer: int
    nonlinear_follow: Nonlinear = Nonlinear.NONE
    count: int = 1

    def __post_init__(self):
        if min(self.m, self.n, self.k) < 1:
            raise ValueError(f"GEMM dims must be >= 1: {self}")
        if self.count < 1:
            raise ValueError("count must be >= 1")

    @property
    def macs(self) -> int:
        return self.m * self.n * self.k * self.count

    @property
    def flops(self) -> int:
        return 2 * self.macs

    @property
    def is_attention_task(self) -> bool:
        return self.tag in ("attn_qk", "attn_av")


@dataclass(frozen=True)
class OperatorGraph:
    ops: tuple[GemmOp, ...]
    batch: int
    seq_len: int
    model: ModelConfig

    @property
    def elem_bytes(self) -> int:
        return self.model.elem_bytes

    @property
    def total_flops(self) -> int:
        return sum(op.flops for op in self.ops)

    @property
    def q_per_group(self) -> int:
        """Query heads sharing one KV head (1 for MHA)."""
        return max(1, self.model.q_heads // self.model.kv_heads)


def moe_activation(cfg: ModelConfig, batch: int) -> tuple[int, int]:
    """Expected (activated experts, tokens per expert) under uniform routing.

    Deterministic expectation model: batch*top_k routed assignments spread
    uniformly; experts counted activated up to min(E, batch*top_k); per-expert
    token count is batch*top_k/E rounded up to at least 1.
    """
    assert cfg.moe is not None
    assignments = batch * cfg.moe.top_k
    active = min(cfg.moe.experts, assignments)
    per_expert = max(1, -(-assignments // cfg.moe.experts))  # ceil
    return active, per_expert


def decode_operators(cfg: ModelConfig, batch: int, seq_len: int) -> OperatorGraph:
    """Expand one decode step (KV length = seq_len) into per-layer GEMM ops.

    Emitted per layer: Q and KV projections, per-request-head QK/AV attention
    tasks (softmax between), output projection, and gate/up/down FFN
    projections (per activated expert for MoE).
    """
    if batch < 1 or seq_len < 1:
        raise ValueError("batch and seq_len must be >= 1")

    hd = cfg.resolved_head_dim
    mla = cfg.mla
    if cfg.attn_kind is AttnKind.MLA and mla is None:
        log.warning(
            "%s: MLA config without explicit low-rank dims; "
            "falling back to MHA-shaped attention operators",
            cfg.name,
        )

    if mla is not None:
        kv_proj_n = mla.kv_rank + mla.rope_dim  # shared latent (+ rope key slice)
        qk_k = mla.kv_rank + mla.rope_dim
        av_n = mla.kv_rank
        o_proj_k = cfg.q_heads * mla.kv_rank  # absorbed value-up + output weights
    else:
        kv_proj_n = 2 * hd * cfg.kv_heads
        qk_k = hd
        av_n = hd
        o_proj_k = cfg.q_heads * hd

    if cfg.moe is not None:
        expert_count, expert_m = moe_activation(cfg, batch)
    else:
        expert_count, expert_m = 1, batch

    ops: list[GemmOp] = []
    for layer in range(cfg.layers):
        ops.append(GemmOp(batch, cfg.q_heads * hd, cfg.hidden, "q_proj", layer))
        ops.append(GemmOp(batch, kv_proj_n, cfg.hidden, "kv_proj", layer))
        ops.append(
            GemmOp(1, seq_len, qk_k, "attn_qk", layer,
                   nonlinear_follow=Nonlinear.SOFTMAX, count=batch * cfg.q_heads)
        )
        ops.append(GemmOp(1, av_n, seq_len, "attn_av", layer, count=batch * cfg.q_heads))
        ops.append(GemmOp(batch, cfg.hidden, o_proj_k, "o_proj", layer))
        ops.append(
            GemmOp(expert_m, cfg.ffn, cfg.hidden, "ffn_gate", layer,
                   nonlinear_follow=Nonlinear.ACTIVATION, count=expert_count)
        )
        ops.append(
            GemmOp(expert_m, cfg.ffn, cfg.hidden, "ffn_up", layer,
                   nonlinear_follow=Nonlinear.ACTIVATION, count=expert_count)
        )
        ops.append(
            GemmOp(expert_m, cfg.hidden, cfg.ffn, "ffn_down", layer, count=expert_count)
        )
    return OperatorGraph(ops=tuple(ops), batch=batch, seq_len=seq_len, model=cfg)
