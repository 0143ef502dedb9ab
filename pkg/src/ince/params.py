"""Closed-form trainable-parameter counts for both encoders.

Normalization layers, the columnar embedder, the CLS vector and the decoder
are outside these formulas.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

from .errors import ContractViolation, ParamCountMismatch


def _positive(**kwargs) -> None:
    for name, value in kwargs.items():
        if int(value) != value or value < 1:
            raise ContractViolation(f"{name} must be a positive integer, got {value!r}")


def tp_edge_mlp(l: int, d: int, layer_index: int) -> int:
    """Edge MLP of stack layer ``layer_index`` (1-based): input 2l on the first layer, 3l after."""
    k = 2 if layer_index == 1 else 3
    return (k * l * l + l) + (d - 1) * (l * l + l)


def tp_node_mlp(l: int, d: int) -> int:
    return (2 * l * l + l) + (d - 1) * (l * l + l)


def tp_in(l: int, d: int, n: int) -> int:
    _positive(l=l, d=d, n=n)
    return sum(tp_edge_mlp(l, d, i) + tp_node_mlp(l, d) for i in range(1, n + 1))


def tp_transformer_blocks(l: int, h: int, f: int) -> dict[str, int]:
    return {
        "qkv": 3 * h * l * (l + 1),
        "multi_attention": l * (h * l + 1),
        "feed_forward": 2 * f * l + f + l,
    }


def tp_transformer(l: int, h: int, f: int, n: int) -> int:
    _positive(l=l, h=h, f=f, n=n)
    return n * sum(tp_transformer_blocks(l, h, f).values())


def normalized_tp_in(l: int, d: int, n: int, baseline_l: int | None = None) -> Fraction:
    """Exact ratio tp_in(l, d, n) / tp_in(baseline_l, 1, 1); baseline defaults to the same l."""
    return Fraction(tp_in(l, d, n), tp_in(baseline_l or l, 1, 1))


@dataclass
class BlockCount:
    block: str
    analytic: int
    constructed: int

    @property
    def ok(self) -> bool:
        return self.analytic == self.constructed


@dataclass
class ParamCountReport:
    encoder: str
    hyperparameters: dict
    analytic: int
    constructed: int
    blocks: list[BlockCount]
    baseline: int
    model_total: int | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.analytic == self.constructed and all(b.ok for b in self.blocks)

    @property
    def normalized(self) -> float:
        return self.analytic / self.baseline

    def mismatches(self) -> list[BlockCount]:
        return [b for b in self.blocks if not b.ok]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["normalized"] = self.normalized
        d["ok"] = self.ok
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        rows = [("block", "analytic", "constructed", "")]
        rows += [(b.block, str(b.analytic), str(b.constructed), "" if b.ok else "MISMATCH") for b in self.blocks]
        rows.append(("total", str(self.analytic), str(self.constructed), "" if self.ok else "MISMATCH"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = [
            f"{r[0]:<{widths[0]}}  {r[1]:>{widths[1]}}  {r[2]:>{widths[2]}}  {r[3]}".rstrip()
            for r in rows
        ]
        hp = ", ".join(f"{k}={v}" for k, v in self.hyperparameters.items())
        lines.insert(0, f"{self.encoder} encoder ({hp})")
        lines.append(f"normalized by {self.baseline}: {self.normalized:.6g}")
        if self.model_total is not None:
            lines.append(f"whole model parameters: {self.model_total}")
        return "\n".join(lines)


def _count(module) -> int:
    return int(sum(p.size for p in module.parameters().values()))


def verify_model_counts(encoder, baseline: int | None = None, model_total: int | None = None,
                        strict: bool = True) -> ParamCountReport:
    """Count the parameters of a built encoder block by block and compare to the formulas.

    The CLS vector is excluded.  With ``strict`` a mismatch raises
    :class:`ParamCountMismatch` carrying the full report.
    """
    if encoder.kind == "in":
        layers = encoder.layers
        l, d, n = encoder.latent, layers[0].depth, len(layers)
        blocks = []
        for i, layer in enumerate(layers, start=1):
            blocks.append(BlockCount(f"layer{i}.edge_mlp", tp_edge_mlp(l, d, i), _count(layer.edge_mlp)))
            blocks.append(BlockCount(f"layer{i}.node_mlp", tp_node_mlp(l, d), _count(layer.node_mlp)))
        analytic = tp_in(l, d, n)
        hp = {"l": l, "d": d, "n": n}
    elif encoder.kind == "transformer":
        layers = encoder.layers
        l, h, f, n = encoder.latent, layers[0].heads, layers[0].ff, len(layers)
        expected = tp_transformer_blocks(l, h, f)
        blocks = []
        for i, layer in enumerate(layers, start=1):
            qkv = sum(p.size for name, p in layer.parameters().items()
                      if name.split(".")[0] in ("query", "query_bias", "key", "key_bias", "value", "value_bias"))
            blocks.append(BlockCount(f"layer{i}.qkv", expected["qkv"], int(qkv)))
            blocks.append(BlockCount(f"layer{i}.multi_attention", expected["multi_attention"], _count(layer.out)))
            ff = _count(layer.ff_in) + _count(layer.ff_out)
            blocks.append(BlockCount(f"layer{i}.feed_forward", expected["feed_forward"], ff))
        analytic = tp_transformer(l, h, f, n)
        hp = {"l": l, "h": h, "f": f, "n": n}
    else:
        raise ContractViolation(f"unknown encoder kind {encoder.kind!r}")
    constructed = _count(encoder) - encoder.cls.size
    report = ParamCountReport(
        encoder.kind, hp, analytic, constructed, blocks,
        baseline if baseline is not None else tp_in(l, 1, 1), model_total,
    )
    if strict and not report.ok:
        bad = ", ".join(f"{b.block}: {b.constructed} != {b.analytic}" for b in report.mismatches())
        raise ParamCountMismatch(f"parameter count mismatch ({bad or 'total'})\n{report.to_table()}")
    return report


def analytic_report(encoder: str, l: int, d: int = 1, n: int = 1, h: int = 1, f: int = 512,
                    baseline: int | None = None) -> ParamCountReport:
    """Formula-only report (no model construction)."""
    if encoder == "in":
        blocks = []
        for i in range(1, n + 1):
            blocks.append(BlockCount(f"layer{i}.edge_mlp", tp_edge_mlp(l, d, i), tp_edge_mlp(l, d, i)))
            blocks.append(BlockCount(f"layer{i}.node_mlp", tp_node_mlp(l, d), tp_node_mlp(l, d)))
        total, hp = tp_in(l, d, n), {"l": l, "d": d, "n": n}
    elif encoder == "transformer":
        blocks = []
        for i in range(1, n + 1):
            for name, v in tp_transformer_blocks(l, h, f).items():
                blocks.append(BlockCount(f"layer{i}.{name}", v, v))
        total, hp = tp_transformer(l, h, f, n), {"l": l, "h": h, "f": f, "n": n}
    else:
        raise ContractViolation(f"unknown encoder kind {encoder!r}")
    return ParamCountReport(encoder, hp, total, total, blocks,
                            baseline if baseline is not None else tp_in(l, 1, 1))
