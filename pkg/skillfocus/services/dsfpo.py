"""Skill-focused clipped policy optimization and its standard PPO baseline.

Under ``dsf_po`` the importance ratio is

    log r = [log π^d_new(d) - log π^d_old(d)]
            + Σ_k w_k · active_k(d) · [log π^c_new(c^k) - log π^c_old(c^k)]

where ``w`` is the current skill distribution with its gradient stopped and
``active_k(d)`` selects the skills whose command subset equals the one the
executed skill consumed. ``standard_ppo`` uses the joint log-ratio over every
command dimension. Both algorithms share the surrogate, entropy and value
terms, so an ablation differs only in the ratio.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from skillfocus.config import DsfPoConfig, SkillSet
from skillfocus.core.autodiff import HALF_LOG_2PI, Tape, Var
from skillfocus.core.exceptions import NonFiniteLossError, ShapeMismatchError
from skillfocus.core.layers import PolicyParams
from skillfocus.core.optim import OptimizerState, clip_grad_norm, init_optimizer, optimizer_step
from skillfocus.services.buffer import RolloutBuffer, normalize_advantages
from skillfocus.services.policy import HierarchicalPolicy, PolicyRecord

logger = logging.getLogger(__name__)

GAUSSIAN_ENTROPY_PER_DIM = HALF_LOG_2PI + 0.5


@dataclass
class UpdateStats:
    """Averages over every minibatch of one update."""

    surrogate_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    mean_ratio: float = 1.0
    grad_norm: float = 0.0
    minibatches: int = 0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class LossGraph:
    """A loss tape plus the names of its outputs."""

    tape: Tape
    algorithm: str
    clipped: bool


def surrogate_objective(log_ratios: np.ndarray, advantages: np.ndarray, clip: float) -> np.ndarray:
    """Per-sample ``min(r·A, clip(r, 1-ε, 1+ε)·A)``, computed in log space."""
    log_ratios = np.asarray(log_ratios, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    if log_ratios.shape != advantages.shape:
        raise ShapeMismatchError(
            "log ratios and advantages must be aligned",
            details={"log_ratios": list(log_ratios.shape), "advantages": list(advantages.shape)},
        )
    clipped = np.clip(log_ratios, np.log(1.0 - clip), np.log(1.0 + clip))
    chosen = np.where(advantages >= 0.0, np.minimum(log_ratios, clipped), np.maximum(log_ratios, clipped))
    return advantages * np.exp(chosen)


def surrogate_loss(log_ratios: np.ndarray, advantages: np.ndarray, clip: float) -> float:
    """Negated batch mean of :func:`surrogate_objective`."""
    return -float(np.mean(surrogate_objective(log_ratios, advantages, clip)))


def _log_ratio(tape: Tape, algorithm: str, lsm: Var, mean: Var, subset_mask: np.ndarray) -> Var:
    lpd = tape.sum(tape.mul(lsm, tape.input("onehot")), axis=1)
    index_term = tape.sub(lpd, tape.input("old_log_prob_index"))
    per_dim = tape.gaussian_log_density(tape.input("commands"), mean, tape.input("command_log_std"))
    if algorithm == "standard_ppo":
        command_term = tape.sub(tape.sum(per_dim, axis=1), tape.input("old_log_prob_command_joint"))
    elif algorithm == "dsf_po":
        per_skill = tape.matmul(per_dim, tape.const(subset_mask))
        delta = tape.sub(per_skill, tape.input("old_log_prob_command_per_skill"))
        focus = tape.mul(tape.stop_gradient(tape.exp(lsm)), tape.input("active"))
        command_term = tape.sum(tape.mul(focus, delta), axis=1)
    else:
        raise ValueError(f"Unknown algorithm '{algorithm}'")
    return tape.add(index_term, command_term)


def _entropy(tape: Tape, lsm: Var, subset_mask: np.ndarray) -> Var:
    """Mean over the batch of H(Categorical(w)) + Σ_k w_k · H(N(μ^k, Σ^k))."""
    w = tape.exp(lsm)
    categorical = tape.scale(tape.sum(tape.mul(w, lsm), axis=1), -1.0)
    command_dim = subset_mask.shape[0]
    log_std = tape.broadcast(tape.input("command_log_std"), (1, command_dim))
    per_skill = tape.add(
        tape.matmul(log_std, tape.const(subset_mask)),
        tape.const(GAUSSIAN_ENTROPY_PER_DIM * subset_mask.sum(axis=0)),
    )
    gaussian = tape.sum(tape.mul(w, per_skill), axis=1)
    return tape.mean(tape.add(categorical, gaussian))


def build_loss_graph(
    policy: HierarchicalPolicy, config: DsfPoConfig, algorithm: Optional[str] = None, clipped: bool = True
) -> LossGraph:
    """Assemble the full update loss on a fresh tape.

    Outputs: ``loss``, ``surrogate``, ``value_loss``, ``entropy``, ``log_ratio``.
    With ``clipped=False`` the surrogate is the plain ``-mean(A · r)``.
    """
    algorithm = algorithm or config.algorithm
    tape = Tape()
    logits, mean = policy.build_actor(tape, tape.input("obs"))
    lsm = tape.log_softmax(logits, axis=1)
    log_ratio = _log_ratio(tape, algorithm, lsm, mean, policy.subset_mask)
    advantages = tape.input("advantages")

    if clipped:
        clipped_ratio = tape.clip(log_ratio, np.log(1.0 - config.clip), np.log(1.0 + config.clip))
        lower = tape.minimum(log_ratio, clipped_ratio)
        upper = tape.maximum(log_ratio, clipped_ratio)
        chosen = tape.add(tape.mul(lower, tape.input("positive")), tape.mul(upper, tape.input("negative")))
    else:
        chosen = log_ratio
    surrogate = tape.scale(tape.mean(tape.mul(advantages, tape.exp(chosen))), -1.0)

    value = policy.build_critic(tape, tape.input("state"))
    error = tape.sub(value, tape.input("returns"))
    value_loss = tape.mean(tape.mul(error, error))
    entropy = _entropy(tape, lsm, policy.subset_mask)

    loss = tape.add(
        tape.add(surrogate, tape.scale(value_loss, config.value_coef)),
        tape.scale(entropy, -config.entropy_coef),
    )
    tape.output("loss", loss)
    tape.output("surrogate", surrogate)
    tape.output("value_loss", value_loss)
    tape.output("entropy", entropy)
    tape.output("log_ratio", log_ratio)
    return LossGraph(tape, algorithm, clipped)


def loss_inputs(
    policy: HierarchicalPolicy,
    params: PolicyParams,
    obs: np.ndarray,
    record: PolicyRecord,
    advantages: Optional[np.ndarray] = None,
    states: Optional[np.ndarray] = None,
    returns: Optional[np.ndarray] = None,
) -> Dict[str, np.ndarray]:
    """Bind parameters and batch arrays to the loss tape's input names."""
    record.validate()
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[None, :]
    batch = obs.shape[0]
    skills = np.asarray(record.skills, dtype=int).reshape(-1)
    if len(skills) != batch:
        raise ShapeMismatchError(
            f"Record holds {len(skills)} actions for {batch} observations",
            details={"actions": len(skills), "observations": batch},
        )
    advantages = np.zeros(batch) if advantages is None else np.asarray(advantages, dtype=np.float64)
    if states is None:
        states = np.zeros((batch, policy.layout.state_dim))
    inputs = params.as_inputs(n for n in params if not n.startswith("estimator."))
    inputs.update(
        obs=obs,
        state=np.asarray(states, dtype=np.float64),
        returns=np.zeros(batch) if returns is None else np.asarray(returns, dtype=np.float64),
        onehot=np.eye(policy.layout.num_skills)[skills],
        active=policy.skills.active_matrix(skills),
        commands=np.asarray(record.commands, dtype=np.float64).reshape(batch, -1),
        old_log_prob_index=np.asarray(record.log_prob_index, dtype=np.float64).reshape(-1),
        old_log_prob_command_per_skill=np.asarray(record.log_prob_command_per_skill, dtype=np.float64).reshape(
            batch, -1
        ),
        old_log_prob_command_joint=np.asarray(record.log_prob_command_joint, dtype=np.float64).reshape(-1),
        advantages=advantages,
        positive=(advantages >= 0.0).astype(np.float64),
        negative=(advantages < 0.0).astype(np.float64),
    )
    return inputs


class DsfPoTrainer:
    """Runs the multi-epoch minibatch update for one algorithm.

    Loss tapes are built lazily, once per (algorithm, clipped) pair.
    """

    def __init__(self, policy: HierarchicalPolicy, config: DsfPoConfig):
        self.policy = policy
        self.config = config
        self._graphs: Dict[Tuple[str, bool], LossGraph] = {}

    def graph(self, algorithm: Optional[str] = None, clipped: bool = True) -> LossGraph:
        key = (algorithm or self.config.algorithm, clipped)
        if key not in self._graphs:
            self._graphs[key] = build_loss_graph(self.policy, self.config, key[0], clipped)
        return self._graphs[key]

    def trained_names(self, params: PolicyParams):
        return self.policy.actor_names(params) + self.policy.critic_names(params)

    def init_optimizer(self, params: PolicyParams) -> OptimizerState:
        return init_optimizer(params, self.trained_names(params), lr=self.config.lr)

    # -- ratios ----------------------------------------------------------------

    def _evaluate(
        self, algorithm: str, params: PolicyParams, record: PolicyRecord, obs: np.ndarray
    ) -> Dict[str, np.ndarray]:
        graph = self.graph(algorithm, clipped=False)
        return graph.tape.forward(loss_inputs(self.policy, params, obs, record))

    def dsf_log_ratio(self, new_params: PolicyParams, old_record: PolicyRecord, obs: np.ndarray) -> np.ndarray:
        return self._evaluate("dsf_po", new_params, old_record, obs)["log_ratio"]

    def standard_ppo_log_ratio(
        self, new_params: PolicyParams, old_record: PolicyRecord, obs: np.ndarray
    ) -> np.ndarray:
        return self._evaluate("standard_ppo", new_params, old_record, obs)["log_ratio"]

    def entropy_bonus(self, params: PolicyParams, obs: np.ndarray) -> float:
        obs = np.asarray(obs, dtype=np.float64)
        batch = 1 if obs.ndim == 1 else obs.shape[0]
        k, d = self.policy.layout.num_skills, self.policy.layout.command_dim
        placeholder = PolicyRecord(
            skills=np.zeros(batch, dtype=int),
            commands=np.zeros((batch, d)),
            log_prob_index=np.zeros(batch),
            log_prob_command_per_skill=np.zeros((batch, k)),
            log_prob_command_joint=np.zeros(batch),
        )
        return float(self._evaluate(self.config.algorithm, params, placeholder, obs)["entropy"])

    def gradients(
        self,
        params: PolicyParams,
        inputs: Mapping[str, np.ndarray],
        output: str = "loss",
        algorithm: Optional[str] = None,
        clipped: bool = True,
    ) -> Dict[str, np.ndarray]:
        """Analytic gradient of one loss-graph output with respect to every bound input."""
        tape = self.graph(algorithm, clipped).tape
        tape.forward(inputs)
        return tape.backward(1.0, output)

    # -- update ----------------------------------------------------------------

    def update(
        self,
        params: PolicyParams,
        buffer: RolloutBuffer,
        optimizer: OptimizerState,
        rng: np.random.Generator,
    ) -> Tuple[PolicyParams, OptimizerState, UpdateStats]:
        """``epochs`` passes over shuffled minibatches; estimator weights are never touched."""
        config = self.config
        batch = buffer.flatten()
        advantages = batch["advantages"]
        if config.normalize_advantages:
            advantages = normalize_advantages(advantages)
        total = len(advantages)
        minibatches = min(config.minibatches, total)
        names = self.trained_names(params)
        tape = self.graph().tape

        sums = {"surrogate_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0, "mean_ratio": 0.0}
        grad_norm_sum, count = 0.0, 0
        for epoch in range(config.epochs):
            order = rng.permutation(total)
            for chunk in np.array_split(order, minibatches):
                record = buffer.record({key: value[chunk] for key, value in batch.items()})
                inputs = loss_inputs(
                    self.policy,
                    params,
                    batch["observations"][chunk],
                    record,
                    advantages=advantages[chunk],
                    states=batch["full_states"][chunk],
                    returns=batch["returns"][chunk],
                )
                out = tape.forward(inputs)
                ratio = np.exp(out["log_ratio"])
                stats = {
                    "surrogate_loss": float(out["surrogate"]),
                    "value_loss": float(out["value_loss"]),
                    "entropy": float(out["entropy"]),
                    "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip)),
                    "mean_ratio": float(np.mean(ratio)),
                }
                if not np.isfinite(out["loss"]):
                    stats.update(epoch=epoch, minibatch=count, loss=float(out["loss"]))
                    raise NonFiniteLossError("Loss became non-finite during the policy update", details=stats)

                grads = tape.backward(1.0, "loss")
                grads, norm = clip_grad_norm({name: grads[name] for name in names}, config.max_grad_norm)
                params, optimizer = optimizer_step(params, grads, optimizer)

                for key, value in stats.items():
                    sums[key] += value
                grad_norm_sum += norm
                count += 1
                logger.debug(f"epoch {epoch} minibatch {count}: {stats}")

        result = UpdateStats(**{key: value / count for key, value in sums.items()})
        result.grad_norm = grad_norm_sum / count
        result.minibatches = count
        return params, optimizer, result
