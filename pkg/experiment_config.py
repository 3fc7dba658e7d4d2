# experiment_config.py
"""
RunConfig and its text format.

A config file holds one `key.path = value` per line (dotenv syntax, `#` starts a
comment). Values are read as JSON when they parse as JSON (numbers, booleans,
lists, null) and as plain strings otherwise:

    profile = desk
    seed = 7
    strategies = ["random", "uncertainty"]
    loop.budget = 50
    contrastive.temperature = 0.2

Resolution order: profile defaults < file < `--set` overrides.
"""

import copy
import json
import logging
from typing import Any, Dict, Iterable, List, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from active import BenchmarkConfig, LoopConfig
from config import CANDIDATE_CAP, DECISION_THRESHOLD, DEFAULT_PROFILE, OUTPUT_DIR, PROFILES
from datagen import AugmentationConfig, DatasetSpec, SplitConfig
from errors import ConfigError
from proxy import ProxyHyper
from sampler import SamplerKind
from simclr import ContrastiveHyper, EncoderConfig
from utils import derive_seed

logger = logging.getLogger(__name__)


class LoopSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    budget: int = Field(100, ge=1)
    iterations: int = Field(10, ge=1)
    candidate_cap: int = Field(CANDIDATE_CAP, ge=1)
    threshold: float = Field(DECISION_THRESHOLD, ge=0.0, le=1.0)
    save_checkpoints: bool = False


class RunConfig(BaseModel):
    """Everything `run` needs: data, the per-strategy loop settings, repetitions and output location."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    profile: str = DEFAULT_PROFILE
    seed: int = 0
    output_dir: str = OUTPUT_DIR
    repetitions: int = Field(3, ge=1)
    strategies: List[SamplerKind] = Field(
        default_factory=lambda: [SamplerKind.RANDOM, SamplerKind.UNCERTAINTY, SamplerKind.CORESET],
        min_length=1,
    )
    run_benchmark: bool = True
    jobs: int = Field(1, ge=1)
    dataset_path: Optional[str] = None

    dataset: DatasetSpec = DatasetSpec()
    split: SplitConfig = SplitConfig()
    augmentation: AugmentationConfig = AugmentationConfig()
    encoder: EncoderConfig = EncoderConfig()
    contrastive: ContrastiveHyper = ContrastiveHyper()
    proxy: ProxyHyper = ProxyHyper()
    loop: LoopSection = LoopSection()
    benchmark: BenchmarkConfig = BenchmarkConfig()

    @field_validator('profile')
    @classmethod
    def _known_profile(cls, name):
        if name not in PROFILES:
            raise ValueError(f"unknown profile '{name}', expected one of {sorted(PROFILES)}")
        return name

    @field_validator('strategies')
    @classmethod
    def _no_duplicate_strategies(cls, strategies):
        if len(set(strategies)) != len(strategies):
            raise ValueError(f"strategies are listed twice: {[s.value for s in strategies]}")
        return strategies

    @model_validator(mode='after')
    def _consistent_sections(self):
        side = self.dataset.patch_side
        if self.augmentation.max_shift >= side:
            raise ValueError(f"augmentation.max_shift={self.augmentation.max_shift} must be below dataset.patch_side={side}")
        if self.encoder.input_dim != side * side:
            raise ValueError(f"encoder.input_dim={self.encoder.input_dim} must equal dataset.patch_side**2={side * side}")
        if self.dataset_path is None:
            pool = self.dataset.pool_size - self.split.labeled_size - self.split.test_size
            if pool < 1:
                raise ValueError(
                    f"split.labeled_size + split.test_size must be below dataset.pool_size={self.dataset.pool_size}"
                )
            if self.loop.budget * self.loop.iterations > pool:
                raise ValueError(
                    f"loop.budget * loop.iterations = {self.loop.budget * self.loop.iterations} exceeds "
                    f"the unlabeled pool of {pool} patches"
                )
        return self

    def loop_config(self, sampler: SamplerKind, checkpoint_dir: Optional[str] = None) -> LoopConfig:
        return LoopConfig(
            budget=self.loop.budget,
            iterations=self.loop.iterations,
            sampler=sampler,
            candidate_cap=self.loop.candidate_cap,
            encoder=self.encoder,
            contrastive=self.contrastive,
            proxy=self.proxy,
            augmentation=self.augmentation,
            benchmark=self.benchmark,
            threshold=self.loop.threshold,
            checkpoint_dir=checkpoint_dir if self.loop.save_checkpoints else None,
            seed=self.seed,
        )

    def dataset_spec(self) -> DatasetSpec:
        """The dataset section with its seed folded into the master seed's data stream."""
        return self.dataset.model_copy(update={'seed': derive_seed(self.seed, 'data', self.dataset.seed)})

    def split_seed(self) -> int:
        return derive_seed(self.seed, 'split')


# --- Text format ---

def _decode(raw: Optional[str]) -> Any:
    if raw is None:
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _set_path(tree: Dict[str, Any], key: str, value: Any):
    parts = key.split('.')
    if any(not p for p in parts):
        raise ConfigError(f"{key}: malformed key path")
    node = tree
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"{key}: '{part}' is a value, not a section")
        node = child
    node[parts[-1]] = value


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _flatten(tree: Dict[str, Any], prefix: str = '') -> Dict[str, Any]:
    flat = {}
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, path + '.'))
        else:
            flat[path] = value
    return flat


def _parse_override(item: str) -> tuple:
    if '=' not in item:
        raise ConfigError(f"{item}: overrides take the form key.path=value")
    key, raw = item.split('=', 1)
    return key.strip(), _decode(raw.strip())


def parse_config(path: Optional[str] = None, overrides: Iterable[str] = (),
                 profile: Optional[str] = None) -> RunConfig:
    """
    Builds a validated RunConfig.

    Raises ConfigError listing every problem as `key.path: message`.
    """
    tree: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                values = dotenv_values(stream=f, interpolate=False)
        except OSError as e:
            raise ConfigError(f"{path}: {e.strerror or e}") from e
        for key, raw in values.items():
            _set_path(tree, key, _decode(raw))
    for item in overrides:
        key, value = _parse_override(item)
        _set_path(tree, key, value)

    if profile is not None:
        tree['profile'] = profile
    name = tree.get('profile', DEFAULT_PROFILE)
    if name not in PROFILES:
        raise ConfigError(f"profile: unknown profile '{name}', expected one of {sorted(PROFILES)}")
    merged = _merge(PROFILES[name], tree)

    # the encoder input width follows the patch size unless set explicitly
    side = merged.get('dataset', {}).get('patch_side', DatasetSpec().patch_side)
    if isinstance(side, int):
        merged.setdefault('encoder', {}).setdefault('input_dim', side * side)

    try:
        return RunConfig(**merged)
    except ValidationError as e:
        problems = []
        for err in e.errors():
            loc = '.'.join(str(part) for part in err['loc']) or '(config)'
            problems.append(f"{loc}: {err['msg']}")
        raise ConfigError(problems) from e


def _quote(value: str) -> str:
    """A string as a double-quoted dotenv value whose unquoted text is its JSON literal."""
    encoded = json.dumps(value)
    return '"' + encoded.replace('\\', '\\\\').replace('"', '\\"') + '"'


def emit_config(config: RunConfig) -> str:
    """
    The full config in the file format parse_config reads, every value as JSON.

    Strings are wrapped once more for dotenv, so `"123"` or a path holding a
    quote come back as the same string rather than a number or a parse error.
    """
    lines = [f"# profile defaults: {config.profile}"]
    for key, value in _flatten(config.model_dump(mode='json')).items():
        if isinstance(value, str):
            lines.append(f"{key} = {_quote(value)}")
        else:
            lines.append(f"{key} = {json.dumps(value)}")
    return '\n'.join(lines) + '\n'


def write_config(config: RunConfig, path: str):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(emit_config(config))
