"""Experiment configuration: strict YAML parsing into typed sections.

Unknown keys anywhere in the document are hard errors, as are inconsistent
combinations (a Weibull posterior with a lognormal prior, a dataset on a
synthetic task). The parsed object carries everything a run needs: task,
model shape, stochasticity, prior, optimizer schedule, and output paths.
"""

from dataclasses import dataclass

import yaml

from . import models as md
from . import objective as obj
from . import prior as pr
from .errors import ConfigError

_TASKS = ("graph", "synthetic")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    output_dir: str
    seeds: tuple
    dataset: str                      # manifest path, graph task only
    graph: md.GraphModelConfig        # populated for graph tasks
    synthetic_task: md.SyntheticTaskConfig
    synthetic_model: md.SyntheticModelConfig
    train: obj.TrainSettings
    m_samples: int
    p_threshold: float
    data_seed: int

    def model_config(self):
        return self.graph if self.task == "graph" else self.synthetic_model


def _section(doc, name, allowed, where):
    raw = doc.pop(name, {})
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: section {name!r} must be a mapping")
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key {sorted(unknown)[0]!r} "
                          f"in section {name!r}")
    return raw


def _require_number(raw, keys, where, section):
    # YAML 1.1 reads 1.0e9 (no exponent sign) as a string; fail here with a
    # named key instead of deep inside the optimizer.
    for key in keys:
        value = raw.get(key)
        if value is None:
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: key {key!r} in section {section!r} "
                              f"must be a number, got {value!r}")
        raw[key] = float(value)


def _require_int(raw, keys, where, section):
    for key in keys:
        value = raw.get(key)
        if value is None:
            continue
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: key {key!r} in section {section!r} "
                              f"must be an integer, got {value!r}")


def _prior_config(raw):
    kind = raw.get("kind", "none")
    if kind == "none":
        return pr.PriorConfig(kind="none")
    return pr.PriorConfig(
        kind=kind,
        family=raw.get("family", "gamma"),
        beta=raw.get("beta"),
        sigma1=raw.get("sigma1"),
        alpha_fixed=raw.get("alpha_fixed"),
        mu_fixed=raw.get("mu_fixed"),
        d_mid=raw.get("d_mid", 1),
    )


def load_config(path):
    """Parse and validate an experiment YAML file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return parse_config(doc, where=str(path))


def parse_config(doc, where="config"):
    doc = dict(doc)
    task = doc.pop("task", None)
    if task not in _TASKS:
        raise ConfigError(f"{where}: task must be one of {_TASKS}, got {task!r}")
    dataset = doc.pop("dataset", None)
    if task == "graph" and not dataset:
        raise ConfigError(f"{where}: graph task needs a dataset manifest path")
    if task == "synthetic" and dataset:
        raise ConfigError(f"{where}: synthetic task takes no dataset "
                          f"(conflicting keys 'task' and 'dataset')")
    output_dir = doc.pop("output_dir", "runs/experiment")
    seeds = doc.pop("seeds", [0])
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) for s in seeds)):
        raise ConfigError(f"{where}: seeds must be a nonempty list of integers")
    data_seed = doc.pop("data_seed", 0)

    att = _section(doc, "attention", ("mode", "k", "sigma"), where)
    prior_raw = _section(doc, "prior",
                         ("kind", "family", "beta", "sigma1", "alpha_fixed",
                          "mu_fixed", "d_mid"), where)
    model_raw = _section(doc, "model",
                         ("heads1", "feat1", "heads2", "dropout", "l2_lambda",
                          "slope", "layout"), where)
    syn_raw = _section(doc, "synthetic",
                       ("n_keys", "n_features", "classes", "signal", "noise",
                        "train_count", "val_count", "test_count",
                        "d_k", "d_v", "dropout", "l2_lambda", "batch"), where)
    train_raw = _section(doc, "train",
                         ("lr", "beta1", "beta2", "eps", "rho", "anneal_offset",
                          "patience", "max_epochs", "eval_every"), where)
    unc_raw = _section(doc, "uncertainty", ("m_samples", "p_threshold"), where)
    if doc:
        raise ConfigError(f"{where}: unknown top-level key {sorted(doc)[0]!r}")

    _require_number(att, ("k", "sigma"), where, "attention")
    _require_number(prior_raw, ("beta", "sigma1", "alpha_fixed", "mu_fixed"),
                    where, "prior")
    _require_int(prior_raw, ("d_mid",), where, "prior")
    _require_number(model_raw, ("dropout", "l2_lambda", "slope"), where, "model")
    _require_int(model_raw, ("heads1", "feat1", "heads2"), where, "model")
    _require_number(syn_raw, ("signal", "noise", "dropout", "l2_lambda"),
                    where, "synthetic")
    _require_int(syn_raw, ("n_keys", "n_features", "classes", "train_count",
                           "val_count", "test_count", "d_k", "d_v", "batch"),
                 where, "synthetic")
    _require_number(train_raw, ("lr", "beta1", "beta2", "eps", "rho",
                                "anneal_offset"), where, "train")
    _require_int(train_raw, ("patience", "max_epochs", "eval_every"),
                 where, "train")
    _require_number(unc_raw, ("p_threshold",), where, "uncertainty")
    _require_int(unc_raw, ("m_samples",), where, "uncertainty")

    prior_cfg = _prior_config(prior_raw)
    mode = att.get("mode", "deterministic")
    stoch = dict(mode=mode, k=att.get("k"), sigma=att.get("sigma"), prior=prior_cfg)

    graph_cfg = None
    if task == "graph":
        graph_cfg = md.GraphModelConfig(**stoch, **model_raw)
    syn_model_keys = ("d_k", "d_v", "dropout", "l2_lambda", "batch")
    syn_task_raw = {k: v for k, v in syn_raw.items() if k not in syn_model_keys}
    syn_model_raw = {k: v for k, v in syn_raw.items() if k in syn_model_keys}
    synthetic_task = md.SyntheticTaskConfig(**syn_task_raw)
    synthetic_model = None
    if task == "synthetic":
        synthetic_model = md.SyntheticModelConfig(**stoch, **syn_model_raw)

    adam = obj.AdamConfig(lr=train_raw.get("lr", 0.005),
                          beta1=train_raw.get("beta1", 0.9),
                          beta2=train_raw.get("beta2", 0.999),
                          eps=train_raw.get("eps", 1e-8))
    train = obj.TrainSettings(max_epochs=train_raw.get("max_epochs", 1000),
                              patience=train_raw.get("patience", 100),
                              rho=train_raw.get("rho", 0.1),
                              anneal_offset=train_raw.get("anneal_offset", 0),
                              eval_every=train_raw.get("eval_every", 1),
                              adam=adam)

    return ExperimentConfig(
        task=task, output_dir=str(output_dir), seeds=tuple(seeds),
        dataset=dataset, graph=graph_cfg,
        synthetic_task=synthetic_task, synthetic_model=synthetic_model,
        train=train,
        m_samples=unc_raw.get("m_samples", 20),
        p_threshold=unc_raw.get("p_threshold", 0.05),
        data_seed=data_seed,
    )


def build_model(config, dataset, seed):
    """Instantiate the task model for one seed. For graph tasks, dataset is
    the loaded GraphDataset; for synthetic tasks it is the generated data."""
    if config.task == "graph":
        return md.GraphModel(dataset, config.graph, seed)
    return md.SyntheticModel(dataset, config.synthetic_model, seed)
