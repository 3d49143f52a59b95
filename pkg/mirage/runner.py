# -*- coding: utf-8 -*-
"""
Experiment commands.

Each command reads an ExperimentConfig, writes its files into
`<output>/<command>/` and finishes with a manifest listing them.
"""
import logging
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .artifacts import (
    RunArtifacts, get_content_hash, load_delta, load_model, save_forest, save_model,
)
from .config import ExperimentConfig
from .counterfactual import (
    L1_MAD, L2, Dice, DistanceSpec, Prototype, SparseWachter, Wachter,
    find_counterfactual,
)
from .errors import ConfigError, NoSensitiveColumn
from .forest import discriminator_accuracy
from .lime import explain_instance, pca_project, sample_perturbations_batch
from .metrics import (
    PCA_SEPARATION_BOUND, accuracy_parity, attribution_audit, format_report,
    pca_separation, recourse_audit,
)
from .recourse_attack import train_attack, train_baseline
from .rules import one_feature_rule, xor_rule
from .scaffold import build_scaffold
from .seeds import AUGMENT, DISCRIMINATOR, LIME, SPLIT, SYNTH, derive_seed
from .synthetic import make_compas_like, make_two_basin, write_dataset
from .tabular import (
    UNCORRELATED, SplitSpec, TabularDataset, augment_uncorrelated,
    feature_correlations, group_masks, load_csv, load_schema,
    median_absolute_deviation, split, standardize, summary,
)

logger = logging.getLogger(__name__)

ATTACK_RECOURSE = "attack-recourse"
TOP_K = 3


def _load(config: ExperimentConfig) -> TabularDataset:
    return load_csv(config.data_path, load_schema(config.schema_path))


def _prepare(
    config: ExperimentConfig, raw: Optional[TabularDataset] = None
) -> tuple[TabularDataset, TabularDataset]:
    """Train and test splits standardized with train statistics."""
    raw = _load(config) if raw is None else raw
    spec = SplitSpec(config.train_fraction, derive_seed(config.seed, SPLIT))
    train, test = split(raw, spec)
    return standardize(train, train), standardize(test, train)


def _distance(config: ExperimentConfig, train: TabularDataset) -> DistanceSpec:
    if config.distance == L1_MAD:
        return DistanceSpec.l1_mad(median_absolute_deviation(train))
    if config.distance == L2:
        return DistanceSpec.l2()
    return DistanceSpec.elastic_net(config.beta)


def _input(path: Optional[Path], default: Path, key: str) -> Path:
    path = path or default
    if not path.exists():
        raise ConfigError(
            f"{key}: {path} not found; set it or run '{ATTACK_RECOURSE}' first"
        )
    return path


def run_synth(config: ExperimentConfig, out: RunArtifacts) -> None:
    make = make_compas_like if config.synth_kind == "compas" else make_two_basin
    frame, schema = make(config.synth_rows, derive_seed(config.seed, SYNTH))
    for path in write_dataset(frame, schema, out.directory, config.synth_kind):
        out.register(path)


def run_ingest(config: ExperimentConfig, out: RunArtifacts) -> None:
    info = summary(_load(config))
    logger.info("Dataset: N=%d d=%d", info["n_rows"], info["n_features"])
    out.write_json("summary.json", info)


def _unbiased_rule(train: TabularDataset):
    columns = train.columns_with_role(UNCORRELATED)
    if len(columns) == 1:
        return one_feature_rule(train, columns[0])
    return xor_rule(train, columns[0], columns[1])


def run_attack_lime(config: ExperimentConfig, out: RunArtifacts) -> None:
    """
    Scaffold a sensitive-column rule behind one or two uncorrelated columns
    and audit LIME attributions of the biased model, the scaffold and the
    innocuous model.
    """
    raw = _load(config)
    sensitive = raw.sensitive_index
    if sensitive is None:
        raise NoSensitiveColumn("attack-lime needs a column tagged sensitive")
    results = {}
    for k in (1, 2):
        augmented = augment_uncorrelated(raw, k, derive_seed(config.seed, AUGMENT, k))
        train, test = _prepare(config, augmented)
        biased = one_feature_rule(train, sensitive)
        scaffold = build_scaffold(
            train.features, biased, _unbiased_rule(train),
            replace(config.forest, seed=derive_seed(config.forest.seed, k)),
            config.perturbations_per_row, config.scaffold_threshold,
            seed=derive_seed(config.seed, DISCRIMINATOR, k),
        )
        fake = sample_perturbations_batch(
            test.features, 1, derive_seed(config.seed, DISCRIMINATOR, k, 1)
        )
        fidelity = float(np.mean(scaffold.predict(test.features) == biased.predict(test.features)))
        ood_accuracy = discriminator_accuracy(scaffold.discriminator, test.features, fake)
        logger.info("k=%d: fidelity %.4f, discriminator accuracy %.4f",
                    k, fidelity, ood_accuracy)

        indices = range(min(config.lime_instances, test.n_rows))
        tables = attribution_audit(scaffold, test, config.lime, k=TOP_K, indices=indices)
        out.write_json(f"attribution_k{k}.json", {n: t.to_dict() for n, t in tables.items()})
        out.write_text(f"attribution_k{k}.txt", "\n".join(t.to_text() for t in tables.values()))
        for name, table in tables.items():
            out.write_text(f"attribution_k{k}_{name}.dat", table.to_plot_data())

        projection = pca_project(test.features, fake, seed=derive_seed(config.seed, LIME, k))
        out.write_text(f"pca_k{k}.dat", projection.to_text())
        separation = pca_separation(projection)
        if separation <= PCA_SEPARATION_BOUND:
            logger.warning("k=%d: PCA separation %.4f is not above %.2f",
                           k, separation, PCA_SEPARATION_BOUND)
        save_forest(out.register(out.path(f"discriminator_k{k}.json")), scaffold.discriminator)

        correlations = feature_correlations(train, sensitive)
        results[f"k{k}"] = {
            "fidelity": fidelity,
            "discriminator_accuracy": ood_accuracy,
            "pca_separation_accuracy": separation,
            "pca_separation_above_bound": separation > PCA_SEPARATION_BOUND,
            "pca_explained_variance_ratio": projection.explained_variance_ratio,
            "uncorrelated_correlation": {
                train.columns[j].name: float(abs(correlations[j]))
                for j in train.columns_with_role(UNCORRELATED)
            },
            "sensitive_top1": tables["biased"].top1[sensitive],
            "scaffold_sensitive_top3": tables["scaffold"].topk[sensitive],
        }
    out.write_json("attack_lime.json", results)


def run_attack_recourse(config: ExperimentConfig, out: RunArtifacts) -> None:
    """Train the attacked model, δ and an accuracy-only baseline."""
    train, test = _prepare(config)
    masks = group_masks(train)
    result = train_attack(train, masks, config.attack, config.mlp_hidden,
                          config.mlp_activation, spec=DistanceSpec.l2())
    # same width as the attacked model, which may carry a basin unit
    baseline = train_baseline(
        train, masks, config.attack, result.model.layer_sizes[1:-1], config.mlp_activation
    )
    parity = accuracy_parity(result.model, baseline, test.features, test.labels)
    logger.info("Test accuracy %.4f (baseline %.4f)", parity.acc_model, parity.acc_baseline)

    save_model(out.register(out.path("model.json")), result.model)
    save_model(out.register(out.path("baseline.json")), baseline)
    out.write_text("delta.txt", result.delta_text())
    out.write_frame("trace.csv", result.trace_frame())
    out.write_json("parity.json", parity.to_dict())


def run_audit(config: ExperimentConfig, out: RunArtifacts) -> None:
    """Recourse audit over every search algorithm on the test split."""
    train, test = _prepare(config)
    attacked = out.directory.parent / ATTACK_RECOURSE
    model = load_model(_input(config.audit_model, attacked / "model.json", "audit.model"))
    delta = load_delta(_input(config.audit_delta, attacked / "delta.txt", "audit.delta"))
    algorithms = [
        Wachter(),
        SparseWachter(config.sparse_beta),
        Prototype.from_dataset(train, config.proto_weight),
        Dice(config.dice_count, config.dice_diversity),
    ]
    report = recourse_audit(
        model, delta, test, group_masks(test), _distance(config, train),
        config.cf, algorithms, max_instances=config.audit_instances,
    )
    out.write_json("audit.json", report.to_dict())
    out.write_text("audit.txt", format_report(report))


def run_explain(config: ExperimentConfig, out: RunArtifacts) -> None:
    """LIME attributions and/or a counterfactual for one dataset row."""
    raw = _load(config)
    train, _ = _prepare(config, raw)
    dataset = standardize(raw, train)
    index = config.explain_instance
    if not 0 <= index < dataset.n_rows:
        raise ConfigError(f"explain.instance: {index} outside 0..{dataset.n_rows - 1}")
    attacked = out.directory.parent / ATTACK_RECOURSE
    model = load_model(_input(config.explain_model, attacked / "model.json", "explain.model"))
    x = dataset.features[index]

    explanation = {"instance": index, "columns": dataset.column_names,
                   "model_prob": float(model.predict_proba(x)[0])}
    if config.explain_mode in ("lime", "both"):
        lime_config = replace(config.lime, seed=derive_seed(config.lime.seed, index))
        explanation["lime"] = explain_instance(model, x, lime_config).to_dict(index)
    if config.explain_mode in ("cf", "both"):
        result = find_counterfactual(model, x, _distance(config, train), config.cf)
        cf = result.to_dict(Wachter.name, x)
        cf["x_original"] = dataset.original_features()[index]
        cf["x_cf_original"] = result.x_cf * dataset.stds + dataset.means
        explanation["counterfactual"] = cf
    out.write_json("explain.json", explanation)


COMMANDS: dict[str, Callable[[ExperimentConfig, RunArtifacts], None]] = {
    "synth": run_synth,
    "ingest": run_ingest,
    "attack-lime": run_attack_lime,
    ATTACK_RECOURSE: run_attack_recourse,
    "audit": run_audit,
    "explain": run_explain,
}


def _config_hash(config: ExperimentConfig) -> str:
    if config.source is not None and Path(config.source).is_file():
        return get_content_hash(Path(config.source).read_text(encoding="utf-8"))
    return get_content_hash(repr(config))


def run(command: str, config: ExperimentConfig, output_dir: Optional[Path] = None) -> int:
    """
    Run one command.

    Args:
        command: One of COMMANDS.
        config: Experiment configuration.
        output_dir: Root of emitted files; defaults to `config.output_dir`.

    Returns:
        int: Exit code.

    Raises:
        ConfigError: Unknown command or invalid configuration.
        DataError: Input data violates a precondition.
        NumericError: A numerical routine failed.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command '{command}'")
    config.validate(command)
    out = RunArtifacts(Path(output_dir or config.output_dir) / command)
    logger.info("Running %s into %s", command, out.directory)
    COMMANDS[command](config, out)
    out.write_manifest(command, _config_hash(config), config.seed)
    return 0
