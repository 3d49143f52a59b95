# -*- coding: utf-8 -*-
"""
Experiment configuration.

Config files are flat `key = value` text with dotted keys, read with
python-dotenv. Relative paths resolve against the config file's directory.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

from dotenv import dotenv_values

from .counterfactual import DISTANCES, CfConfig
from .errors import ConfigError
from .forest import ForestParams
from .lime import LimeConfig
from .mlp import ACTIVATIONS
from .recourse_attack import HYPERGRAD_MODES, AttackConfig, AttackWeights
from .scaffold import DISCRIMINATOR_PARAMS, PERTURBATIONS_PER_ROW
from .seeds import ATTACK, COUNTERFACTUAL, DISCRIMINATOR, LIME, derive_seed

logger = logging.getLogger(__name__)

EXPLAIN_MODES = ("lime", "cf", "both")
SYNTH_KINDS = ("compas", "two_basin")

KEYS = (
    "seed", "data.path", "data.schema", "split.train_fraction", "output.dir",
    "lime.n_samples", "lime.kernel_width", "lime.ridge_alpha", "lime.instances",
    "forest.n_trees", "forest.max_depth", "forest.perturbations_per_row",
    "scaffold.threshold",
    "cf.lambda_init", "cf.lambda_growth", "cf.max_lambda_rounds",
    "cf.inner_steps", "cf.learning_rate", "cf.target_threshold", "cf.tolerance",
    "cf.distance", "cf.beta", "cf.sparse_beta", "cf.proto_weight",
    "cf.dice_count", "cf.dice_diversity",
    "audit.instances", "audit.model", "audit.delta",
    "mlp.hidden", "mlp.activation",
    "attack.w_fair", "attack.w_unfair", "attack.w_delta", "attack.w_acc",
    "attack.outer_steps", "attack.learning_rate", "attack.delta_learning_rate",
    "attack.hypergrad", "attack.unroll_steps", "attack.batch_size",
    "attack.pretrain_steps", "attack.inner_rounds", "attack.inner_steps",
    "attack.seed_basin", "attack.basin_margin", "attack.basin_steepness",
    "explain.instance", "explain.mode", "explain.model",
    "synth.kind", "synth.rows",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment.

    Attributes:
        seed: Experiment-level seed; every random stream derives from it.
        source: Config file the values came from.
        data_path: Dataset CSV.
        schema_path: Schema of the dataset.
        train_fraction: Share of rows in the training split.
        output_dir: Directory of emitted artifacts.
        lime: Explainer settings.
        lime_instances: Rows explained by the attribution audit.
        forest: Discriminator hyperparameters.
        perturbations_per_row: Perturbations per real row when training
            the discriminator.
        scaffold_threshold: Routing threshold of the scaffold.
        cf: Search schedule of audits and explanations.
        distance: Audit distance (l1_mad, l2 or elastic_net).
        beta: L1 weight of the elastic_net audit distance.
        sparse_beta: L1 weight of the sparse search.
        proto_weight: Pull of the prototype-guided search.
        dice_count: Candidates of the diverse search.
        dice_diversity: Diversity weight of the diverse search.
        audit_instances: Negatives per group used by the audit.
        audit_model: Model file audited; defaults to the attack output.
        audit_delta: Shift file audited; defaults to the attack output.
        mlp_hidden: Hidden layer sizes of trained models.
        mlp_activation: Hidden activation of trained models.
        attack: Adversarial training schedule.
        explain_instance: Dataset row explained by `explain`.
        explain_mode: lime, cf or both.
        explain_model: Model file explained; defaults to the attack output.
        synth_kind: Generator used by `synth`.
        synth_rows: Rows generated by `synth`.
    """
    seed: int
    source: Optional[Path] = None
    data_path: Optional[Path] = None
    schema_path: Optional[Path] = None
    train_fraction: float = 0.8
    output_dir: Path = field(default_factory=lambda: Path("output"))
    lime: LimeConfig = LimeConfig()
    lime_instances: int = 100
    forest: ForestParams = DISCRIMINATOR_PARAMS
    perturbations_per_row: int = PERTURBATIONS_PER_ROW
    scaffold_threshold: float = 0.5
    cf: CfConfig = CfConfig()
    distance: str = "l2"
    beta: float = 0.0
    sparse_beta: float = 0.1
    proto_weight: float = 0.1
    dice_count: int = 4
    dice_diversity: float = 1.0
    audit_instances: int = 50
    audit_model: Optional[Path] = None
    audit_delta: Optional[Path] = None
    mlp_hidden: tuple[int, ...] = (16,)
    mlp_activation: str = "tanh"
    attack: AttackConfig = AttackConfig()
    explain_instance: int = 0
    explain_mode: str = "both"
    explain_model: Optional[Path] = None
    synth_kind: str = "compas"
    synth_rows: int = 5000

    def validate(self, command: str) -> None:
        """
        Check that every path the command reads exists.

        Raises:
            ConfigError: A mandatory path is missing or does not exist.
        """
        if command == "synth":
            return
        for key, path in (("data.path", self.data_path),
                          ("data.schema", self.schema_path)):
            if path is None:
                raise ConfigError(f"'{key}' is required by '{command}'")
            if not path.exists():
                raise ConfigError(f"{key}: file not found: {path}")
        for key, path in (("audit.model", self.audit_model),
                          ("audit.delta", self.audit_delta),
                          ("explain.model", self.explain_model)):
            if path is not None and not path.exists():
                raise ConfigError(f"{key}: file not found: {path}")


class _Reader:
    """Typed access to raw config values, naming the key on every error."""

    def __init__(self, values: dict[str, Optional[str]], base: Path):
        self.values = values
        self.base = base

    def raw(self, key: str) -> Optional[str]:
        value = self.values.get(key)
        if value is None:
            return None
        value = value.strip()
        return value or None

    def parse(self, key: str, convert: Callable, default):
        value = self.raw(key)
        if value is None:
            return default
        try:
            return convert(value)
        except ValueError as e:
            raise ConfigError(f"{key}: invalid value {value!r} ({e})") from e

    def integer(self, key: str, default: Optional[int]) -> Optional[int]:
        return self.parse(key, int, default)

    def number(self, key: str, default: Optional[float]) -> Optional[float]:
        return self.parse(key, float, default)

    def choice(self, key: str, choices: tuple[str, ...], default: str) -> str:
        value = (self.raw(key) or default).lower()
        if value not in choices:
            raise ConfigError(f"{key}: expected one of {', '.join(choices)}, got '{value}'")
        return value

    def path(self, key: str) -> Optional[Path]:
        value = self.raw(key)
        if value is None:
            return None
        path = Path(value).expanduser()
        return path if path.is_absolute() else self.base / path

    def ints(self, key: str, default: tuple[int, ...]) -> tuple[int, ...]:
        def convert(value: str) -> tuple[int, ...]:
            sizes = tuple(int(part) for part in value.split(",") if part.strip())
            if not sizes or min(sizes) < 1:
                raise ValueError("expected comma-separated positive integers")
            return sizes
        return self.parse(key, convert, default)


def _build(key: str, factory: Callable, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from e


def parse_config(
    values: dict[str, Optional[str]], base: Path = Path("."), source: Optional[Path] = None
) -> ExperimentConfig:
    """
    Build an ExperimentConfig from raw key-value pairs.

    Raises:
        ConfigError: Unknown key, missing seed or invalid value.
    """
    unknown = sorted(set(values) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    r = _Reader(values, base)
    seed = r.integer("seed", None)
    if seed is None:
        raise ConfigError("'seed' is required")

    lime = _build(
        "lime", LimeConfig,
        n_samples=r.integer("lime.n_samples", 5000),
        kernel_width=r.number("lime.kernel_width", None),
        ridge_alpha=r.number("lime.ridge_alpha", 1.0),
        seed=derive_seed(seed, LIME),
    )
    forest = _build(
        "forest", ForestParams,
        n_trees=r.integer("forest.n_trees", 100),
        max_depth=r.integer("forest.max_depth", DISCRIMINATOR_PARAMS.max_depth),
        seed=derive_seed(seed, DISCRIMINATOR),
    )
    cf = _build(
        "cf", CfConfig,
        lambda_init=r.number("cf.lambda_init", 0.1),
        lambda_growth=r.number("cf.lambda_growth", 10.0),
        max_lambda_rounds=r.integer("cf.max_lambda_rounds", 10),
        inner_steps=r.integer("cf.inner_steps", 1000),
        learning_rate=r.number("cf.learning_rate", 0.01),
        target_threshold=r.number("cf.target_threshold", 0.5),
        tolerance=r.number("cf.tolerance", 1e-4),
        seed=derive_seed(seed, COUNTERFACTUAL),
    )
    weights = _build(
        "attack weights", AttackWeights,
        w_fair=r.number("attack.w_fair", 1.0),
        w_unfair=r.number("attack.w_unfair", 1.0),
        w_delta=r.number("attack.w_delta", 0.5),
        w_acc=r.number("attack.w_acc", 2.0),
    )
    inner = _build(
        "attack inner search", replace, cf,
        lambda_init=1.0,
        max_lambda_rounds=r.integer("attack.inner_rounds", 3),
        inner_steps=r.integer("attack.inner_steps", 200),
    )
    attack = _build(
        "attack", AttackConfig,
        weights=weights,
        outer_steps=r.integer("attack.outer_steps", 200),
        learning_rate=r.number("attack.learning_rate", 0.05),
        delta_learning_rate=r.number("attack.delta_learning_rate", 0.05),
        hypergrad=r.choice("attack.hypergrad", HYPERGRAD_MODES, "implicit"),
        unroll_steps=r.integer("attack.unroll_steps", 20),
        cf_config=inner,
        batch_size=r.integer("attack.batch_size", 32),
        pretrain_steps=r.integer("attack.pretrain_steps", 200),
        seed=derive_seed(seed, ATTACK),
        seed_basin=r.choice("attack.seed_basin", ("true", "false"), "true") == "true",
        basin_margin=r.number("attack.basin_margin", 0.25),
        basin_steepness=r.number("attack.basin_steepness", 40.0),
    )

    train_fraction = r.number("split.train_fraction", 0.8)
    if not 0 < train_fraction < 1:
        raise ConfigError(f"split.train_fraction must be in (0, 1), got {train_fraction}")
    threshold = r.number("scaffold.threshold", 0.5)
    if not 0 <= threshold <= 1:
        raise ConfigError(f"scaffold.threshold must be in [0, 1], got {threshold}")
    positive = {
        "lime.instances": r.integer("lime.instances", 100),
        "forest.perturbations_per_row": r.integer(
            "forest.perturbations_per_row", PERTURBATIONS_PER_ROW
        ),
        "cf.dice_count": r.integer("cf.dice_count", 4),
        "audit.instances": r.integer("audit.instances", 50),
        "synth.rows": r.integer("synth.rows", 5000),
    }
    for key, value in positive.items():
        if value < 1:
            raise ConfigError(f"{key} must be >= 1, got {value}")

    return ExperimentConfig(
        seed=seed,
        source=source,
        data_path=r.path("data.path"),
        schema_path=r.path("data.schema"),
        train_fraction=train_fraction,
        output_dir=r.path("output.dir") or base / "output",
        lime=lime,
        lime_instances=positive["lime.instances"],
        forest=forest,
        perturbations_per_row=positive["forest.perturbations_per_row"],
        scaffold_threshold=threshold,
        cf=cf,
        distance=r.choice("cf.distance", DISTANCES, "l2"),
        beta=r.number("cf.beta", 0.0),
        sparse_beta=r.number("cf.sparse_beta", 0.1),
        proto_weight=r.number("cf.proto_weight", 0.1),
        dice_count=positive["cf.dice_count"],
        dice_diversity=r.number("cf.dice_diversity", 1.0),
        audit_instances=positive["audit.instances"],
        audit_model=r.path("audit.model"),
        audit_delta=r.path("audit.delta"),
        mlp_hidden=r.ints("mlp.hidden", (16,)),
        mlp_activation=r.choice("mlp.activation", ACTIVATIONS, "tanh"),
        attack=attack,
        explain_instance=r.integer("explain.instance", 0),
        explain_mode=r.choice("explain.mode", EXPLAIN_MODES, "both"),
        explain_model=r.path("explain.model"),
        synth_kind=r.choice("synth.kind", SYNTH_KINDS, "compas"),
        synth_rows=positive["synth.rows"],
    )


def load_config(path: Path) -> ExperimentConfig:
    """
    Load a config file.

    Args:
        path: Flat key-value file.

    Returns:
        ExperimentConfig: Parsed configuration.

    Raises:
        ConfigError: The file is missing or holds an invalid entry.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    config = parse_config(dotenv_values(path), base=path.resolve().parent, source=path)
    logger.debug("Loaded config %s (seed %d)", path, config.seed)
    return config
