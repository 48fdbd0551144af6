"""Method configuration: one JSON document per retrieval method.

A config names the query/document encoder kinds, per-side head options and
regularizers, the supervision recipe, quantization, and data paths.  Relative
paths are resolved against the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .encoders import Bm25Params, EncoderKind
from .index import Quantization
from .regularization import RegularizerConfig, RegularizerKind


class ValidationError(ValueError):
    """Configuration or input invariant violation (CLI exit code 1)."""


@dataclass(frozen=True)
class SideConfig:
    encoder: EncoderKind
    activation: str = "relu"
    log_normalize: bool = True
    quality_heads: bool = False
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)


@dataclass(frozen=True)
class SupervisionConfig:
    loss: str = "contrastive"  # contrastive | margin_mse | term_mse | none
    level: str = "passage"  # passage | term
    negatives: str = "file"  # provenance note; negatives always come from the triples file
    steps: int = 100
    lr: float = 0.5


@dataclass(frozen=True)
class PathsConfig:
    vocab: Path
    collection: Path
    queries: Path
    qrels: Path | None = None
    expansions: Path | None = None
    triples: Path | None = None
    embeddings: Path | None = None
    query_heads: Path | None = None
    doc_heads: Path | None = None


@dataclass(frozen=True)
class MethodConfig:
    name: str
    query: SideConfig
    doc: SideConfig
    shared_heads: bool
    supervision: SupervisionConfig
    quantization: Quantization
    top_k: int
    bm25: Bm25Params
    paths: PathsConfig
    backbone_seed: int = 0
    backbone_dim: int = 16

    def validate(self) -> None:
        if self.doc.encoder is EncoderKind.EXP_MLP and self.paths.expansions is None:
            raise ValidationError(
                f"{self.name}: doc encoder 'exp_mlp' requires paths.expansions"
            )
        if self.query.encoder is EncoderKind.EXP_MLP and self.paths.expansions is None:
            raise ValidationError(
                f"{self.name}: query encoder 'exp_mlp' requires paths.expansions"
            )
        if self.shared_heads and self.query.encoder != self.doc.encoder:
            raise ValidationError(
                f"{self.name}: shared_heads requires identical query/doc encoder kinds"
            )
        if self.query.encoder is EncoderKind.BM25_DOC:
            raise ValidationError(f"{self.name}: query encoder cannot be 'bm25_doc'")
        if self.doc.encoder is EncoderKind.BM25_QUERY:
            raise ValidationError(f"{self.name}: doc encoder cannot be 'bm25_query'")
        if self.top_k < 0:
            raise ValidationError(f"{self.name}: top_k must be >= 0")


def _parse_side(obj: dict, name: str) -> SideConfig:
    try:
        kind = EncoderKind(obj["encoder"])
    except (KeyError, ValueError) as e:
        raise ValidationError(f"{name}: bad encoder kind: {e}") from e
    reg_obj = obj.get("regularizer", {})
    try:
        reg = RegularizerConfig(
            kind=RegularizerKind(reg_obj.get("kind", "none")),
            weight=float(reg_obj.get("weight", 0.0)),
            k=int(reg_obj.get("k", 0)),
        )
    except ValueError as e:
        raise ValidationError(f"{name}: bad regularizer: {e}") from e
    return SideConfig(
        encoder=kind,
        activation=obj.get("activation", "relu"),
        log_normalize=obj.get("log_normalize", True),
        quality_heads=obj.get("quality_heads", False),
        regularizer=reg,
    )


def load_config(path: str | Path) -> MethodConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        obj = json.load(f)
    base = path.parent

    def resolve(key: str) -> Path | None:
        value = obj.get("paths", {}).get(key)
        return (base / value).resolve() if value else None

    try:
        paths = PathsConfig(
            vocab=resolve("vocab"),
            collection=resolve("collection"),
            queries=resolve("queries"),
            qrels=resolve("qrels"),
            expansions=resolve("expansions"),
            triples=resolve("triples"),
            embeddings=resolve("embeddings"),
            query_heads=resolve("query_heads"),
            doc_heads=resolve("doc_heads"),
        )
        if paths.vocab is None or paths.collection is None or paths.queries is None:
            raise ValidationError(f"{path}: paths.vocab/collection/queries are required")
        sup = obj.get("supervision", {})
        quant = obj.get("quantization", {"mode": "exact"})
        config = MethodConfig(
            name=obj["name"],
            query=_parse_side(obj["query"], obj["name"]),
            doc=_parse_side(obj["doc"], obj["name"]),
            shared_heads=bool(obj.get("shared_heads", False)),
            supervision=SupervisionConfig(
                loss=sup.get("loss", "contrastive"),
                level=sup.get("level", "passage"),
                negatives=sup.get("negatives", "file"),
                steps=int(sup.get("steps", 100)),
                lr=float(sup.get("lr", 0.5)),
            ),
            quantization=Quantization(mode=quant.get("mode", "exact"), bits=int(quant.get("bits", 8))),
            top_k=int(obj.get("top_k", 100)),
            bm25=Bm25Params(**obj.get("bm25", {})),
            paths=paths,
            backbone_seed=int(obj.get("backbone", {}).get("seed", 0)),
            backbone_dim=int(obj.get("backbone", {}).get("dim", 16)),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise
        raise ValidationError(f"{path}: {e}") from e
    config.validate()
    return config


#: components a single ablation toggle may change
TOGGLE_KEYS = ("query_encoder", "doc_encoder", "regularizer", "shared_heads")


def apply_toggle(config: MethodConfig, toggle: str) -> MethodConfig:
    """Apply one single-component change, e.g. `query_encoder=mlp` or `regularizer=topk:50`."""
    if toggle.count("=") != 1:
        raise ValidationError(f"bad toggle {toggle!r}: expected key=value")
    key, value = toggle.split("=")
    if key not in TOGGLE_KEYS:
        raise ValidationError(
            f"toggle {toggle!r} must change exactly one of {', '.join(TOGGLE_KEYS)}"
        )
    name = f"{config.name}+{toggle}"
    if key == "query_encoder":
        out = replace(config, name=name, query=replace(config.query, encoder=EncoderKind(value)))
    elif key == "doc_encoder":
        out = replace(config, name=name, doc=replace(config.doc, encoder=EncoderKind(value)))
    elif key == "shared_heads":
        if value not in ("true", "false"):
            raise ValidationError(f"toggle {toggle!r}: value must be true or false")
        out = replace(config, name=name, shared_heads=value == "true")
    else:
        kind, _, arg = value.partition(":")
        reg_kind = RegularizerKind(kind)
        if reg_kind is RegularizerKind.TOPK:
            reg = RegularizerConfig(kind=reg_kind, k=int(arg or 0))
        else:
            reg = RegularizerConfig(kind=reg_kind, weight=float(arg or 0.0))
        out = replace(
            config,
            name=name,
            query=replace(config.query, regularizer=reg),
            doc=replace(config.doc, regularizer=reg),
        )
    if key in ("query_encoder", "doc_encoder") and out.shared_heads and out.query.encoder != out.doc.encoder:
        out = replace(out, shared_heads=False)
    out.validate()
    return out
