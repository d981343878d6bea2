"""Hierarchical actor, privileged critic and supervised context estimator.

The actor runs a shared feature extractor (SFE) into two heads: a linear skill
index head whose softmax gives the skill focus weights ``w``, and a linear+tanh
command head giving the mean of a diagonal Gaussian over the full command
vector. Noise is added after the squash, so sampled commands are unbounded;
the simulator clips them. The command std is a learned global per-dimension
``command_log_std``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from skillfocus.config import NetworkConfig, SkillSet
from skillfocus.core.autodiff import Tape, Var, gaussian_log_density, log_softmax
from skillfocus.core.exceptions import (
    HistoryWindowError,
    MissingRecordError,
    NonFiniteError,
    PrivilegedFieldError,
    ShapeMismatchError,
)
from skillfocus.core.layers import PolicyParams, dense, init_mlp, mlp, orthogonal
from skillfocus.core.optim import OptimizerState, optimizer_step

logger = logging.getLogger(__name__)

CONTEXT_FIELDS = ("ball_vx", "ball_vy", "slope_ax", "slope_ay", "roughness", "friction")
ACTOR_GROUPS = ("sfe.", "index_head.", "command_head.", "command_log_std")


@dataclass(frozen=True)
class ObservationLayout:
    """Column layout of the observation vectors.

    raw features: cos ψ, sin ψ, robot velocity (2), ball position relative to the
    robot (2), previous skill one-hot (K), previous command (D), user command (2).
    actor observation: raw features + estimated context z (6).
    full state: actor observation + true ball velocity (2) + true zone slope (2),
    roughness and friction.
    """

    num_skills: int
    command_dim: int
    context_dim: int = len(CONTEXT_FIELDS)

    @property
    def raw_dim(self) -> int:
        return 8 + self.num_skills + self.command_dim

    @property
    def actor_dim(self) -> int:
        return self.raw_dim + self.context_dim

    @property
    def privileged_dim(self) -> int:
        return len(CONTEXT_FIELDS)

    @property
    def state_dim(self) -> int:
        return self.actor_dim + self.privileged_dim


@dataclass
class Observation:
    """Actor observation ``o_t`` and the critic's full state ``s_t`` for one or many environments."""

    actor: np.ndarray
    full_state: np.ndarray
    raw: np.ndarray
    context: np.ndarray


@dataclass
class HierAction:
    """One high-level action with its collection-time sampling record.

    ``skill`` is 0-based internally; :attr:`skill_id` is the 1-based index.
    """

    skill: int
    command: np.ndarray
    log_prob_index: float
    log_prob_command_per_skill: np.ndarray
    log_prob_command_joint: float
    skill_focus_weights: np.ndarray
    command_mean: Optional[np.ndarray] = None

    @property
    def skill_id(self) -> int:
        return self.skill + 1


@dataclass
class PolicyRecord:
    """Batched old-policy record used by the importance ratios."""

    skills: Optional[np.ndarray] = None
    commands: Optional[np.ndarray] = None
    log_prob_index: Optional[np.ndarray] = None
    log_prob_command_per_skill: Optional[np.ndarray] = None
    log_prob_command_joint: Optional[np.ndarray] = None
    skill_focus_weights: Optional[np.ndarray] = None

    REQUIRED = ("skills", "commands", "log_prob_index", "log_prob_command_per_skill", "log_prob_command_joint")

    @classmethod
    def from_actions(cls, actions: Sequence[HierAction]) -> "PolicyRecord":
        return cls(
            skills=np.array([a.skill for a in actions], dtype=int),
            commands=np.stack([a.command for a in actions]),
            log_prob_index=np.array([a.log_prob_index for a in actions]),
            log_prob_command_per_skill=np.stack([a.log_prob_command_per_skill for a in actions]),
            log_prob_command_joint=np.array([a.log_prob_command_joint for a in actions]),
            skill_focus_weights=np.stack([a.skill_focus_weights for a in actions]),
        )

    def validate(self) -> None:
        missing = [name for name in self.REQUIRED if getattr(self, name) is None]
        if missing:
            raise MissingRecordError("Old policy record is missing fields", details={"missing": missing})


def _as_batch(array: np.ndarray, width: int, what: str) -> np.ndarray:
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 1:
        array = array[None, :]
    if array.ndim != 2 or array.shape[1] != width:
        raise ShapeMismatchError(
            f"{what} has shape {array.shape}, expected (batch, {width})",
            details={"what": what, "shape": list(array.shape), "width": width},
        )
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"{what} contains non-finite values", details={"what": what})
    return array


class HierarchicalPolicy:
    """Builds, initializes and evaluates the actor, critic and estimator networks.

    The evaluation tapes are built once and re-run with new bindings; an instance
    is owned by a single thread (the training coordinator).
    """

    def __init__(self, network: NetworkConfig, skills: SkillSet):
        self.network = network
        self.skills = skills
        self.layout = ObservationLayout(skills.num_skills, skills.command_dim, network.context_dim)
        self.subset_mask = skills.subset_mask()

        self._actor_tape = Tape()
        logits, mean = self.build_actor(self._actor_tape, self._actor_tape.input("obs"))
        self._actor_tape.output("logits", logits)
        self._actor_tape.output("mean", mean)
        self._actor_tape.output("log_w", self._actor_tape.log_softmax(logits, axis=1))

        self._critic_tape = Tape()
        self._critic_tape.output("value", self.build_critic(self._critic_tape, self._critic_tape.input("state")))

        self._estimator_tape = Tape()
        prediction = self._build_estimator(self._estimator_tape, self._estimator_tape.input("history"))
        self._estimator_tape.output("prediction", prediction)
        self._estimator_tape.output("mse", self._mse(self._estimator_tape, prediction, "target"))

        self._critic_fit_tape = Tape()
        value = self.build_critic(self._critic_fit_tape, self._critic_fit_tape.input("state"))
        self._critic_fit_tape.output("mse", self._mse(self._critic_fit_tape, value, "target"))

    # -- construction -------------------------------------------------------

    def build_actor(self, tape: Tape, obs: Var) -> Tuple[Var, Var]:
        """Append the actor to ``tape``; return (logits, command mean)."""
        features = mlp(tape, obs, "sfe", len(self.network.sfe_widths), self.network.activation)
        logits = dense(tape, features, "index_head")
        mean = tape.tanh(dense(tape, features, "command_head"))
        return logits, mean

    def build_critic(self, tape: Tape, state: Var) -> Var:
        value = mlp(tape, state, "critic", len(self.network.critic_widths), self.network.activation, with_output=True)
        return tape.sum(value, axis=1)

    def _build_estimator(self, tape: Tape, history: Var) -> Var:
        return mlp(
            tape, history, "estimator", len(self.network.estimator_widths), self.network.activation, with_output=True
        )

    @staticmethod
    def _mse(tape: Tape, prediction: Var, target_name: str) -> Var:
        error = tape.sub(prediction, tape.input(target_name))
        return tape.mean(tape.mul(error, error))

    def init_params(self, rng: np.random.Generator) -> PolicyParams:
        """Orthogonal hidden layers, 0.01-scale output heads, std = ``init_std``."""
        net = self.network
        arrays: Dict[str, np.ndarray] = {}
        arrays.update(init_mlp(rng, "sfe", self.layout.actor_dim, net.sfe_widths))
        last = net.sfe_widths[-1]
        arrays["index_head.weight"] = orthogonal(rng, (last, self.layout.num_skills), net.head_gain)
        arrays["index_head.bias"] = np.zeros(self.layout.num_skills)
        arrays["command_head.weight"] = orthogonal(rng, (last, self.layout.command_dim), net.head_gain)
        arrays["command_head.bias"] = np.zeros(self.layout.command_dim)
        arrays["command_log_std"] = np.full(self.layout.command_dim, np.log(net.init_std))
        arrays.update(init_mlp(rng, "critic", self.layout.state_dim, net.critic_widths, 1))
        arrays.update(
            init_mlp(
                rng,
                "estimator",
                self.layout.raw_dim * net.history_window,
                net.estimator_widths,
                self.layout.context_dim,
            )
        )
        return PolicyParams(arrays)

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return self.init_params(np.random.default_rng(0)).shapes()

    @staticmethod
    def actor_names(params: PolicyParams) -> List[str]:
        return [n for n in params if n.startswith(ACTOR_GROUPS)]

    @staticmethod
    def critic_names(params: PolicyParams) -> List[str]:
        return params.names("critic.")

    @staticmethod
    def estimator_names(params: PolicyParams) -> List[str]:
        return params.names("estimator.")

    # -- actor ---------------------------------------------------------------

    def _run_actor(self, params: PolicyParams, obs: np.ndarray) -> Dict[str, np.ndarray]:
        obs = _as_batch(obs, self.layout.actor_dim, "actor observation")
        inputs = params.as_inputs(n for n in self._actor_tape.input_names if n != "obs")
        inputs["obs"] = obs
        return self._actor_tape.forward(inputs)

    def actor_forward(self, params: PolicyParams, obs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (logits, command mean in [-1, 1], skill focus weights) for a batch."""
        out = self._run_actor(params, obs)
        return out["logits"], out["mean"], np.exp(out["log_w"])

    def _command_log_probs(
        self, params: PolicyParams, commands: np.ndarray, mean: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        per_dim = gaussian_log_density(commands, mean, params["command_log_std"])
        return per_dim @ self.subset_mask, per_dim.sum(axis=1)

    def sample_action(
        self, params: PolicyParams, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False
    ) -> List[HierAction]:
        """Sample one :class:`HierAction` per observation row.

        Deterministic mode takes the argmax skill and the mean command.
        """
        out = self._run_actor(params, obs)
        log_w, mean = out["log_w"], out["mean"]
        w = np.exp(log_w)
        batch, num_skills = w.shape
        if deterministic:
            skills = np.argmax(w, axis=1)
            commands = mean.copy()
        else:
            u = rng.random(batch)
            skills = np.minimum((u[:, None] >= np.cumsum(w, axis=1)).sum(axis=1), num_skills - 1)
            noise = rng.standard_normal(mean.shape)
            commands = mean + np.exp(params["command_log_std"]) * noise

        per_skill, joint = self._command_log_probs(params, commands, mean)
        rows = np.arange(batch)
        return [
            HierAction(
                skill=int(skills[i]),
                command=commands[i],
                log_prob_index=float(log_w[i, skills[i]]),
                log_prob_command_per_skill=per_skill[i],
                log_prob_command_joint=float(joint[i]),
                skill_focus_weights=w[i],
                command_mean=mean[i],
            )
            for i in rows
        ]

    def log_prob(self, params: PolicyParams, obs: np.ndarray, record: PolicyRecord) -> Tuple[np.ndarray, np.ndarray]:
        """Return (log π^d(d|o), per-skill log π^c(c^k|o)) for recorded actions."""
        if record.skills is None or record.commands is None:
            raise MissingRecordError("Record needs skills and commands", details={"missing": ["skills", "commands"]})
        out = self._run_actor(params, obs)
        commands = _as_batch(record.commands, self.layout.command_dim, "command")
        per_skill, _ = self._command_log_probs(params, commands, out["mean"])
        rows = np.arange(len(commands))
        return out["log_w"][rows, np.asarray(record.skills, dtype=int)], per_skill

    # -- critic --------------------------------------------------------------

    def _check_state(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        width = states.shape[-1] if states.ndim else 0
        if width == self.layout.actor_dim:
            raise PrivilegedFieldError(
                "Critic needs the full state; got an actor observation",
                details={"width": width, "expected": self.layout.state_dim},
            )
        return _as_batch(states, self.layout.state_dim, "full state")

    def critic_forward(self, params: PolicyParams, states: np.ndarray) -> np.ndarray:
        states = self._check_state(states)
        inputs = params.as_inputs(self.critic_names(params))
        inputs["state"] = states
        return self._critic_tape.forward(inputs)["value"]

    def critic_update(
        self, params: PolicyParams, states: np.ndarray, targets: np.ndarray, state: OptimizerState
    ) -> Tuple[PolicyParams, OptimizerState, float]:
        """One regression step of the critic towards ``targets``."""
        inputs = params.as_inputs(self.critic_names(params))
        inputs["state"] = self._check_state(states)
        inputs["target"] = np.asarray(targets, dtype=np.float64).reshape(-1)
        loss = float(self._critic_fit_tape.forward(inputs)["mse"])
        grads = self._critic_fit_tape.backward(1.0, "mse")
        params, state = optimizer_step(params, grads, state)
        return params, state, loss

    # -- estimator -----------------------------------------------------------

    def _history_inputs(self, params: PolicyParams, history: np.ndarray) -> Dict[str, np.ndarray]:
        history = np.asarray(history, dtype=np.float64)
        if history.ndim == 2:
            history = history[None]
        window = self.network.history_window
        if history.ndim != 3 or history.shape[2] != self.layout.raw_dim:
            raise ShapeMismatchError(
                f"History has shape {history.shape}, expected (batch, window, {self.layout.raw_dim})",
                details={"shape": list(history.shape)},
            )
        if history.shape[1] < window:
            raise HistoryWindowError(
                f"History window of {history.shape[1]} steps is shorter than the configured {window}",
                details={"found": history.shape[1], "expected": window},
            )
        inputs = params.as_inputs(self.estimator_names(params))
        inputs["history"] = history[:, -window:, :].reshape(history.shape[0], -1)
        return inputs

    def estimator_forward(self, params: PolicyParams, history: np.ndarray) -> np.ndarray:
        """Predict the context z (ball velocity, slope, roughness, friction) from an observation window."""
        inputs = self._history_inputs(params, history)
        inputs["target"] = np.zeros((inputs["history"].shape[0], self.layout.context_dim))
        return self._estimator_tape.forward(inputs)["prediction"]

    def estimator_loss(self, params: PolicyParams, history: np.ndarray, ground_truth: np.ndarray) -> float:
        inputs = self._history_inputs(params, history)
        inputs["target"] = _as_batch(ground_truth, self.layout.context_dim, "ground truth")
        return float(self._estimator_tape.forward(inputs)["mse"])

    def estimator_update(
        self, params: PolicyParams, history: np.ndarray, ground_truth: np.ndarray, state: OptimizerState
    ) -> Tuple[PolicyParams, OptimizerState, float]:
        """One supervised step; only ``estimator.*`` weights move. Returns the pre-step MSE."""
        loss = self.estimator_loss(params, history, ground_truth)
        grads = self._estimator_tape.backward(1.0, "mse")
        grads = {name: grads[name] for name in self.estimator_names(params)}
        params, state = optimizer_step(params, grads, state)
        return params, state, loss
