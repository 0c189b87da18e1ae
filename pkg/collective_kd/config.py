"""
Collective KD - Pipeline Configuration

One TOML file with sections [paths] [provider] [projection] [prf] [train]
[retrieval] [run]. Command-line overrides win over file values. Relative
paths resolve against the config file's directory.
"""

import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union, get_args, get_origin

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .codec import config_hash
from .constants import (
    DEFAULT_BETA, DEFAULT_BINARY_CUTOFF, DEFAULT_CONTEXT_WINDOW, DEFAULT_DEPTH, DEFAULT_DIM_IN,
    DEFAULT_DIM_OUT, DEFAULT_EPOCHS, DEFAULT_F_C, DEFAULT_F_E, DEFAULT_F_P, DEFAULT_INIT_SEED, DEFAULT_LEARNING_RATE,
    DEFAULT_MRT_REPETITIONS, DEFAULT_NEGATIVES_PER_QUERY, DEFAULT_PRETRAIN_EPOCHS,
    DEFAULT_PROVIDER_SEED, DEFAULT_THREADS, DEFAULT_TRAIN_SEED, RUN_TAG_PREFIX,
)
from .errors import ValidationError
from .models import (
    EmbeddingProviderConfig, NegativesSource, Objective, PrfConfig, ProviderKind, TrainConfig,
)


# ═══════════════════════════════════════════════════════════════════════════════
# SECTIONS
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass
class PathsSection:
    corpus: Optional[str] = None
    queries: Optional[str] = None
    qrels: Optional[str] = None            # training judgments (observed positives)
    eval_qrels: Optional[str] = None       # falls back to qrels
    output: str = "out"
    index: Optional[str] = None            # default <output>/index
    checkpoint: Optional[str] = None       # theta; default <output>/theta.crwt
    student: Optional[str] = None          # default <output>/student.crwt
    labels: Optional[str] = None           # default <output>/labels.tsv
    run: Optional[str] = None              # default <output>/run.trec
    embeddings: Optional[str] = None       # file_backed passages
    query_embeddings: Optional[str] = None


@dataclass
class ProviderSection:
    kind: str = ProviderKind.HASHED.value
    dim_in: int = DEFAULT_DIM_IN
    seed: int = DEFAULT_PROVIDER_SEED
    context_window: int = DEFAULT_CONTEXT_WINDOW


@dataclass
class ProjectionSection:
    dim_out: int = DEFAULT_DIM_OUT
    init_seed: int = DEFAULT_INIT_SEED


@dataclass
class PrfSection:
    f_p: int = DEFAULT_F_P
    f_c: int = DEFAULT_F_C
    f_e: int = DEFAULT_F_E
    beta: float = DEFAULT_BETA
    negatives_per_query: int = DEFAULT_NEGATIVES_PER_QUERY


@dataclass
class TrainSection:
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = DEFAULT_EPOCHS
    pretrain_epochs: int = DEFAULT_PRETRAIN_EPOCHS
    seed: int = DEFAULT_TRAIN_SEED
    objective: str = Objective.KD_KL.value
    negatives_source: str = NegativesSource.TOP100.value
    gradient_clip: Optional[float] = None


@dataclass
class RetrievalSection:
    depth: int = DEFAULT_DEPTH
    binary_cutoff: int = DEFAULT_BINARY_CUTOFF
    mrt_repetitions: int = DEFAULT_MRT_REPETITIONS


@dataclass
class RunSection:
    seed: int = 0
    threads: int = DEFAULT_THREADS
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])


_SECTIONS = {
    "paths": PathsSection,
    "provider": ProviderSection,
    "projection": ProjectionSection,
    "prf": PrfSection,
    "train": TrainSection,
    "retrieval": RetrievalSection,
    "run": RunSection,
}

# inputs each stage needs before it may start
_STAGE_INPUTS = {
    "index": ("corpus",),
    "rank": ("index", "queries"),
    "annotate": ("index", "queries", "qrels"),
    "pretrain": ("corpus", "queries", "qrels"),
    "distill": ("corpus", "queries", "labels", "checkpoint"),
    "eval": ("run", "eval_qrels"),
    "sweep": ("index", "queries", "eval_qrels"),
    "pr": ("index", "queries", "eval_qrels"),
    "compare": ("corpus", "queries", "qrels", "eval_qrels"),
    "gen-synthetic": (),
}


# ═══════════════════════════════════════════════════════════════════════════════
# PIPELINE CONFIG
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass
class PipelineConfig:
    """
    Resolved pipeline configuration

    Usage:
        config = load_config("config.toml", overrides=["prf.beta=0.5"])
        config.validate("annotate")
        meta = config.provenance()
    """
    paths: PathsSection = field(default_factory=PathsSection)
    provider: ProviderSection = field(default_factory=ProviderSection)
    projection: ProjectionSection = field(default_factory=ProjectionSection)
    prf: PrfSection = field(default_factory=PrfSection)
    train: TrainSection = field(default_factory=TrainSection)
    retrieval: RetrievalSection = field(default_factory=RetrievalSection)
    run: RunSection = field(default_factory=RunSection)
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    # ─────────────────────────────────────────────────────────────────────────
    # PATHS
    # ─────────────────────────────────────────────────────────────────────────

    def _resolve(self, value: Optional[str]) -> Optional[Path]:
        if value is None:
            return None
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def output_dir(self) -> Path:
        return self._resolve(self.paths.output)

    def path(self, name: str) -> Optional[Path]:
        """Resolved input/output path; derived outputs default under output_dir"""
        if name == "eval_qrels" and self.paths.eval_qrels is None:
            return self._resolve(self.paths.qrels)
        value = getattr(self.paths, name)
        if value is not None:
            return self._resolve(value)
        defaults = {
            "index": "index",
            "checkpoint": "theta.crwt",
            "student": "student.crwt",
            "labels": "labels.tsv",
            "run": "run.trec",
        }
        return self.output_dir / defaults[name] if name in defaults else None

    # ─────────────────────────────────────────────────────────────────────────
    # DOMAIN OBJECTS
    # ─────────────────────────────────────────────────────────────────────────

    def provider_config(self) -> EmbeddingProviderConfig:
        embeddings = self.path("embeddings")
        query_embeddings = self.path("query_embeddings")
        return EmbeddingProviderConfig(
            kind=ProviderKind(self.provider.kind),
            dim_in=self.provider.dim_in,
            seed=self.provider.seed,
            context_window=self.provider.context_window,
            path=str(embeddings) if embeddings else None,
            query_path=str(query_embeddings) if query_embeddings else None,
        )

    def prf_config(self) -> PrfConfig:
        return PrfConfig(self.prf.f_p, self.prf.f_c, self.prf.f_e, float(self.prf.beta))

    def train_config(self, pretrain: bool = False) -> TrainConfig:
        return TrainConfig(
            learning_rate=float(self.train.learning_rate),
            epochs=self.train.pretrain_epochs if pretrain else self.train.epochs,
            seed=self.train.seed,
            objective=Objective(self.train.objective),
            negatives_source=NegativesSource(self.train.negatives_source),
            gradient_clip=self.train.gradient_clip,
        )

    # ─────────────────────────────────────────────────────────────────────────
    # VALIDATION / PROVENANCE
    # ─────────────────────────────────────────────────────────────────────────

    def validate(self, stage: Optional[str] = None) -> "PipelineConfig":
        """
        Check values and, for `stage`, that its inputs exist

        Raises:
            ValidationError: on the first problem found
        """
        try:
            self.provider_config().validate()
            self.prf_config().validate()
            self.train_config().validate()
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        if self.projection.dim_out < 1:
            raise ValidationError(f"projection.dim_out must be positive, got {self.projection.dim_out}")
        if self.retrieval.depth < 1:
            raise ValidationError(f"retrieval.depth must be >= 1, got {self.retrieval.depth}")
        if self.run.threads < 1:
            raise ValidationError(f"run.threads must be >= 1, got {self.run.threads}")
        if self.prf.negatives_per_query < 1:
            raise ValidationError(f"prf.negatives_per_query must be positive, got {self.prf.negatives_per_query}")

        if stage is not None:
            if stage not in _STAGE_INPUTS:
                raise ValidationError(f"unknown stage {stage!r}")
            for name in _STAGE_INPUTS[stage]:
                target = self.path(name)
                if target is None:
                    raise ValidationError(f"{stage}: paths.{name} is not configured")
                if not target.exists():
                    raise ValidationError(f"{stage}: {name} not found at {target}")
        return self

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    def run_tag(self) -> str:
        return f"{RUN_TAG_PREFIX}-{self.config_hash()[:8]}"

    def provenance(self, **extra) -> dict:
        """Metadata embedded in every artifact: config hash, seeds, threads"""
        return {
            "config_hash": self.config_hash(),
            "run_seed": self.run.seed,
            "provider_seed": self.provider.seed,
            "train_seed": self.train.seed,
            "init_seed": self.projection.init_seed,
            "threads": self.run.threads,
            **extra,
        }


# ═══════════════════════════════════════════════════════════════════════════════
# LOADING
# ═══════════════════════════════════════════════════════════════════════════════

def _parse_value(text: str):
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


_TYPE_NAMES = {int: "an integer", float: "a number", str: "a string"}


def _coerce(name: str, value, expected, origin: str):
    """Check `value` against a section field type; ints widen to float"""
    if get_origin(expected) is Union:
        expected = next(arg for arg in get_args(expected) if arg is not type(None))
    if get_origin(expected) in (list, List):
        if not isinstance(value, list):
            raise ValidationError(f"{origin}: {name} must be a list, got {value!r}")
        (item_type,) = get_args(expected)
        return [_coerce(f"{name}[{i}]", item, item_type, origin) for i, item in enumerate(value)]
    if isinstance(value, bool):
        raise ValidationError(f"{origin}: {name} must be {_TYPE_NAMES[expected]}, got {value!r}")
    if expected is float and isinstance(value, int):
        return float(value)
    if not isinstance(value, expected):
        raise ValidationError(f"{origin}: {name} must be {_TYPE_NAMES[expected]}, got {value!r}")
    return value


def _apply(config: PipelineConfig, section: str, key: str, value, origin: str):
    if section not in _SECTIONS:
        raise ValidationError(f"{origin}: unknown section [{section}]")
    target = getattr(config, section)
    types = {f.name: f.type for f in fields(target)}
    if key not in types:
        raise ValidationError(f"{origin}: unknown key {section}.{key}")
    setattr(target, key, _coerce(f"{section}.{key}", value, types[key], origin))


def parse_override(override: str) -> Tuple[str, str, object]:
    """`section.key=value` -> (section, key, parsed value)"""
    name, sep, text = override.partition("=")
    section, dot, key = name.strip().partition(".")
    if not sep or not dot or not key:
        raise ValidationError(f"override {override!r} is not of the form section.key=value")
    return section, key, _parse_value(text.strip())


def load_config(path=None, overrides: Iterable[str] = ()) -> PipelineConfig:
    """
    Build a PipelineConfig from a TOML file plus overrides

    Args:
        path: TOML file, or None for defaults (paths relative to cwd)
        overrides: `section.key=value` strings, applied in order
    """
    config = PipelineConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from None
        config.base_dir = path.resolve().parent
        for section, values in data.items():
            if not isinstance(values, dict):
                raise ValidationError(f"{path}: top-level key {section!r} is not a section")
            for key, value in values.items():
                _apply(config, section, key, value, str(path))

    for override in overrides:
        section, key, value = parse_override(override)
        _apply(config, section, key, value, "override")
    return config
