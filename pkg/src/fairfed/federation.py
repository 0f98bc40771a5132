"""Round orchestration: likelihood mixing, local MWR training, FedAvg.

Every client takes part in every round. The group-likelihood mixture is
computed once, before the first round, and never refreshed.
"""
import json
import os
import shutil
import tempfile
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import data as data_mod
from .config import ExperimentConfig, format_config
from .errors import ContractError, FairFedError, ShapeError
from .fairness import (ImportanceWeights, LambdaState, compute_importance, init_lambda,
                       mw_update, normalize_weights)
from .metrics import FairnessReport, fairness_summary, gradient_correlation, group_tpr
from .model import ModelParams, fit_group_likelihood, forward, gradient, group_losses, sgd_epoch
from .privacy import PrivacyBudget, privatize_likelihoods
from .rng import stream

MIXTURE_FLOOR = 1e-9


class UntrainedModelWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class MixtureLikelihoods:
    """Server-side average of the clients' per-group likelihoods.

    Components are averaged independently and are not renormalized.
    """

    per_group: np.ndarray
    client_count: int

    def degenerate_groups(self):
        return np.flatnonzero(self.per_group <= MIXTURE_FLOOR).tolist()


@dataclass(eq=False)
class ClientState:
    shard: data_mod.ClientShard
    task_model: ModelParams
    lam: LambdaState
    local_likelihoods: Optional[np.ndarray] = None

    @property
    def client_id(self):
        return self.shard.client_id


@dataclass(frozen=True)
class TrainingConfig:
    algorithm: str = "mwr"
    lr: float = 0.01
    batch_size: int = 128
    local_epochs: int = 1
    l1_coeff: float = 1e-5
    eta_mu: float = -0.003
    eta_mu_threshold: float = 0.5
    risk_mode: str = "mean"
    tprsd_ddof: int = 0
    gradient_diagnostic: bool = False

    @classmethod
    def from_experiment(cls, cfg):
        return cls(cfg.algorithm, cfg.lr, cfg.batch_size, cfg.local_epochs, cfg.l1_coeff, cfg.eta_mu,
                   cfg.eta_mu_threshold, cfg.risk_mode, cfg.tprsd_ddof, cfg.gradient_diagnostic)


@dataclass(eq=False)
class RoundRecord:
    round_index: int
    group_losses: list
    weights: List[ImportanceWeights]
    lambdas: List[np.ndarray]
    checkpoint: ModelParams
    report: FairnessReport
    gradient_spearman: Optional[np.ndarray] = None

    def log_records(self):
        out = []
        for k, client in enumerate(self.report.per_client):
            verdict = client.threshold_verdict
            rec = {
                "type": "round",
                "round": self.round_index,
                "client_id": client.client_id,
                "group_losses": self.group_losses[k].per_group.tolist(),
                "lambda": self.lambdas[k].tolist(),
                "weights_raw": self.weights[k].raw.tolist(),
                "weights_normalized": self.weights[k].normalized.tolist(),
                "tpr": client.tpr,
                "tprd": client.tprd,
                "tprsd": client.tprsd,
                "wtpr": client.wtpr,
                "btpr": client.btpr,
                "threshold": verdict.threshold,
                "threshold_satisfied": verdict.satisfied,
            }
            if self.gradient_spearman is not None:
                rec["gradient_spearman"] = self.gradient_spearman[k].tolist()
            out.append(rec)
        return out


def local_group_likelihoods(client, likelihood_model):
    """Mean predicted probability of each group over the client's training data."""
    shard = getattr(client, "shard", client)
    if not np.any(likelihood_model.flat()):
        warnings.warn(f"client {shard.client_id}: likelihood model has all-zero parameters",
                      UntrainedModelWarning, stacklevel=2)
    return forward(likelihood_model, shard.train.features).mean(axis=0)


def mix_likelihoods(client_vectors, client_probs=None):
    """Law-of-total-probability mixture of per-client group likelihoods."""
    vectors = [np.asarray(v, dtype=np.float64) for v in client_vectors]
    if not vectors:
        raise ContractError("no client likelihoods to mix")
    if any(v.shape != vectors[0].shape for v in vectors):
        raise ContractError(f"likelihood vectors differ in length: {[v.size for v in vectors]}")
    if client_probs is None:
        probs = np.full(len(vectors), 1.0 / len(vectors))
    else:
        probs = np.asarray(client_probs, dtype=np.float64)
    if probs.shape != (len(vectors),):
        raise ContractError(f"{probs.size} client probabilities for {len(vectors)} clients")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ContractError(f"client probabilities must be a distribution, got {probs}")
    mixed = probs @ np.vstack(vectors)
    return MixtureLikelihoods(np.maximum(mixed, MIXTURE_FLOOR), len(vectors))


def fedavg(client_params, sample_counts):
    """Sample-count weighted average of client models."""
    if not client_params:
        raise ContractError("nothing to aggregate")
    counts = np.asarray(sample_counts, dtype=np.float64)
    if counts.shape != (len(client_params),) or np.any(counts <= 0):
        raise ContractError(f"need one positive sample count per client, got {sample_counts}")
    shape = client_params[0].weights.shape
    if any(p.weights.shape != shape for p in client_params):
        raise ShapeError("client models differ in shape")
    share = counts / counts.sum()
    weights = np.tensordot(share, np.stack([p.weights for p in client_params]), axes=1)
    bias = share @ np.stack([p.bias for p in client_params])
    return ModelParams(weights, bias)


def _uniform_importance(train):
    raw = np.ones(train.num_groups)
    return ImportanceWeights(raw, normalize_weights(raw[train.groups], train.groups, train.num_groups))


def _client_update(client, global_model, mixture, hyper, seed, round_index):
    """Local training plus the client's lambda update; mutates ``client``."""
    train = client.shard.train
    rng = stream(seed, "train", round_index, client.client_id)
    if hyper.algorithm == "mwr":
        w = compute_importance(client.lam, mixture, train.groups)
        sgd_weights, l1 = w.raw, hyper.l1_coeff
    else:
        w = _uniform_importance(train)
        sgd_weights, l1 = None, 0.0
    local = global_model
    for _ in range(hyper.local_epochs):
        local = sgd_epoch(local, train, sgd_weights, hyper.lr, hyper.batch_size, l1, rng)
    eps = group_losses(local, train.features, train.labels, train.groups, train.num_groups,
                       mode=hyper.risk_mode)
    if hyper.algorithm == "mwr":
        client.lam = mw_update(client.lam, eps, hyper.eta_mu)
    client.task_model = local
    return local, eps, w


def run_round(clients, global_model, mixture, hyper, seed, round_index, reference=None):
    """One synchronous round over all clients.

    ``mixture=None`` with ``hyper.algorithm == "fedavg"`` runs plain FedAvg
    (unweighted local ERM, no lambda updates). ``reference`` is an optional
    :class:`FairnessReport` whose per-client best/worst TPRs set the
    best-group thresholds; by default each client's own TPRs are used.
    """
    mwr = hyper.algorithm == "mwr"
    if mwr and mixture is None:
        raise ContractError("MWR rounds need the group-likelihood mixture")
    local_models, losses, weights, lambdas = [], [], [], []
    for client in clients:
        try:
            local, eps, w = _client_update(client, global_model, mixture, hyper, seed, round_index)
        except FairFedError as exc:
            raise type(exc)(f"client {client.client_id}: {exc}") from exc
        local_models.append(local)
        losses.append(eps)
        weights.append(w)
        lambdas.append(client.lam.values.copy())

    new_global = fedavg(local_models, [len(c.shard.train) for c in clients])

    per_client = []
    for k, client in enumerate(clients):
        tpr = group_tpr(new_global, client.shard.test)
        ref = None
        if reference is not None:
            r = reference.per_client[k]
            ref = (r.btpr, r.wtpr)
        per_client.append(fairness_summary(tpr, hyper.eta_mu_threshold, client.client_id,
                                           ddof=hyper.tprsd_ddof, reference=ref))

    spearman_matrix = None
    if hyper.gradient_diagnostic:
        spearman_matrix = gradient_spearman_matrix(clients, local_models)

    record = RoundRecord(round_index, losses, weights, lambdas, new_global,
                         FairnessReport(per_client), spearman_matrix)
    return new_global, record


def last_layer_gradients(clients, models):
    """Plain cross-entropy gradient of each client's model on its own data."""
    grads = []
    for client, model in zip(clients, models):
        train = client.shard.train
        grads.append(gradient(model, train.features, train.labels, np.zeros(len(train), dtype=np.int64),
                              [1.0], 0.0))
    return grads


def gradient_spearman_matrix(clients, models):
    grads = last_layer_gradients(clients, models)
    k = len(grads)
    out = np.eye(k)
    for a in range(k):
        for b in range(a + 1, k):
            out[a, b] = out[b, a] = gradient_correlation(grads[a], grads[b])
    return out


# --- experiment driver -------------------------------------------------------

@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    startup: dict
    records: List[RoundRecord] = field(default_factory=list)
    initial_model: Optional[ModelParams] = None
    clients: List[ClientState] = field(default_factory=list)

    @property
    def final_report(self):
        return self.records[-1].report

    @property
    def final_model(self):
        return self.records[-1].checkpoint

    def report_dict(self):
        payload = self.final_report.to_dict()
        payload["algorithm"] = self.config.algorithm
        payload["seed"] = self.config.seed
        payload["rounds_completed"] = len(self.records)
        return payload


def build_shards(cfg):
    """Dataset, holdout split and noisy client shards for ``cfg``."""
    if cfg.dataset == "synthetic":
        full = data_mod.generate_synthetic(
            cfg.seed, cfg.num_groups, cfg.num_classes, cfg.per_group + cfg.test_per_group,
            cfg.feature_dim, cfg.separation, cfg.spread if len(cfg.spread) > 1 else cfg.spread[0])
    else:
        full = data_mod.load_idx(cfg.images_path, cfg.labels_path, cfg.limit)
    train, holdout = data_mod.split_holdout(full, cfg.test_per_group, cfg.seed)
    return data_mod.partition(train, cfg.num_clients, cfg.noise_plan, cfg.seed, holdout=holdout)


def _startup(cfg, shards, clients):
    """Fit likelihood models, privatize and mix. Returns (mixture, log record)."""
    record = {"type": "startup", "dp_epsilon": cfg.dp_epsilon, "local_likelihoods": None,
              "shared_likelihoods": None, "mixture": None, "degenerate_groups": [], "warnings": []}
    if cfg.algorithm == "fedavg":
        return None, record
    if cfg.uniform_weights:
        # denominator equal to the (shared) group priors gives unit importance
        priors = shards[0].train.group_priors()
        mixture = MixtureLikelihoods(priors, len(shards))
        record["mixture"] = mixture.per_group.tolist()
        return mixture, record

    local, shared = [], []
    for client in clients:
        train = client.shard.train
        model = fit_group_likelihood(train, cfg.likelihood_epochs, cfg.lr,
                                     stream(cfg.seed, "likelihood", client.client_id), cfg.batch_size)
        if not np.any(model.flat()):
            record["warnings"].append(f"client {client.client_id}: untrained likelihood model")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UntrainedModelWarning)
            vec = local_group_likelihoods(client, model)
        client.local_likelihoods = vec
        budget = None
        if cfg.dp_epsilon is not None:
            budget = PrivacyBudget(cfg.dp_epsilon, cfg.dp_sensitivity or 1.0 / len(train))
        released = privatize_likelihoods(vec, budget, stream(cfg.seed, "dp", client.client_id))
        local.append(vec.tolist())
        shared.append(released)
    mixture = mix_likelihoods(shared)
    record.update(local_likelihoods=local, shared_likelihoods=[s.tolist() for s in shared],
                  mixture=mixture.per_group.tolist(), degenerate_groups=mixture.degenerate_groups())
    return mixture, record


def run_experiment(cfg, reference=None, persist=True):
    """Run a whole experiment described by ``cfg``.

    Artifacts are written to ``cfg.output_dir`` (when set and ``persist``)
    only after the last round, via a temporary directory that is renamed
    into place.
    """
    try:
        shards = build_shards(cfg)
    except FairFedError as exc:
        raise type(exc)(f"startup: {exc}") from exc
    initial = ModelParams.random(shards[0].train.num_classes, shards[0].train.feature_dim,
                                 stream(cfg.seed, "init"))
    clients = [ClientState(s, initial, init_lambda(s.train.group_priors())) for s in shards]
    mixture, startup = _startup(cfg, shards, clients)
    hyper = TrainingConfig.from_experiment(cfg)

    result = ExperimentResult(cfg, startup, initial_model=initial, clients=clients)
    model = initial
    for t in range(1, cfg.rounds + 1):
        try:
            model, record = run_round(clients, model, mixture, hyper, cfg.seed, t, reference)
        except FairFedError as exc:
            raise type(exc)(f"round {t}: {exc}") from exc
        result.records.append(record)
        if cfg.halt_on_violation and not all(c.threshold_verdict.satisfied for c in record.report.per_client):
            break
    if persist and cfg.output_dir:
        write_artifacts(result, cfg.output_dir)
    return result


def report_csv(report):
    lines = ["client,TPRD,TPRSD,WTPR,BTPR,threshold,satisfied"]
    for c in report.per_client:
        v = c.threshold_verdict
        lines.append(f"{c.client_id},{c.tprd!r},{c.tprsd!r},{c.wtpr!r},{c.btpr!r},{v.threshold!r},"
                     f"{str(v.satisfied).lower()}")
    return "\n".join(lines) + "\n"


def write_artifacts(result, output_dir):
    output_dir = os.path.abspath(output_dir)
    parent = os.path.dirname(output_dir)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".fairfed-", dir=parent)
    try:
        with open(os.path.join(tmp, "config.echo"), "w") as fh:
            fh.write(format_config(result.config))
        with open(os.path.join(tmp, "log.jsonl"), "w") as fh:
            fh.write(json.dumps(result.startup, sort_keys=True) + "\n")
            for record in result.records:
                for rec in record.log_records():
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(os.path.join(tmp, "report.json"), "w") as fh:
            json.dump(result.report_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        with open(os.path.join(tmp, "report.csv"), "w") as fh:
            fh.write(report_csv(result.final_report))
        ckpt = os.path.join(tmp, "checkpoints")
        os.mkdir(ckpt)
        with open(os.path.join(ckpt, "round_0000.bin"), "wb") as fh:
            fh.write(result.initial_model.to_bytes())
        for record in result.records:
            with open(os.path.join(ckpt, f"round_{record.round_index:04d}.bin"), "wb") as fh:
                fh.write(record.checkpoint.to_bytes())
        if os.path.isdir(output_dir):
            shutil.rmtree(output_dir)
        os.replace(tmp, output_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
