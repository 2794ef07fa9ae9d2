"""FEG mask network and the shared-trunk LSTM actor-critic, in float64 torch.

Input frames are (pseudo-laser, goal, velocity) for the three most recent
timesteps. The FEG module turns them into a (0, 1) mask that re-weights the
laser frames before the convolutional trunk.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from pseudolaser_nav.config import PolicyConfig
from pseudolaser_nav.env import Observation
from pseudolaser_nav.world import Action

logger = logging.getLogger(__name__)

DTYPE = torch.float64
FEG_CHANNELS = 5
HISTORY = 3

Hidden = tuple[torch.Tensor, torch.Tensor]


class NumericalError(FloatingPointError):
    """Non-finite activations in a forward pass.

    ``parameters`` maps each parameter name to (L2 norm, count of non-finite
    entries) at the time of the failure.
    """

    def __init__(self, message: str, parameters: dict[str, tuple[float, int]]) -> None:
        super().__init__(message)
        self.parameters = parameters

    def __str__(self) -> str:
        bad = [name for name, (_, n) in self.parameters.items() if n]
        suffix = f"; non-finite parameters: {bad}" if bad else ""
        return f"{self.args[0]}{suffix}"


def parameter_dump(model: nn.Module) -> dict[str, tuple[float, int]]:
    return {
        name: (float(p.detach().norm()), int((~torch.isfinite(p.detach())).sum()))
        for name, p in model.named_parameters()
    }


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_feg_input(obs: Observation) -> np.ndarray:
    """Tile goal and velocity along the bearing axis: shape (d_laser, 5, 3).

    Channel order per timestep is laser, goal distance, goal bearing, v, w.
    """
    d = obs.d_laser
    grid = np.empty((d, FEG_CHANNELS, HISTORY), dtype=np.float64)
    for k in range(HISTORY):
        grid[:, 0, k] = obs.lasers[k]
        grid[:, 1, k] = obs.goals[k, 0]
        grid[:, 2, k] = obs.goals[k, 1]
        grid[:, 3, k] = obs.velocities[k, 0]
        grid[:, 4, k] = obs.velocities[k, 1]
    return grid


def feg_grid(lasers: torch.Tensor, goals: torch.Tensor, velocities: torch.Tensor) -> torch.Tensor:
    """Batched tiling: (B, 3, d), (B, 3, 2), (B, 3, 2) -> (B, d, 5, 3)."""
    d = lasers.shape[-1]
    tiled = torch.cat([goals, velocities], dim=-1).unsqueeze(-1).expand(-1, -1, -1, d)
    stacked = torch.cat([lasers.unsqueeze(2), tiled], dim=2)
    return stacked.permute(0, 3, 2, 1)


class FEGModule(nn.Module):
    """Conv/deconv encoder-decoder over the bearing axis ending in a sigmoid mask."""

    def __init__(self, d_laser: int) -> None:
        super().__init__()
        if d_laser % 4:
            raise ValueError(f"FEG needs d_laser divisible by 4, got {d_laser}")
        channels_in = FEG_CHANNELS * HISTORY
        self.d_laser = d_laser
        self.encoder = nn.Sequential(
            nn.Conv1d(channels_in, 32, kernel_size=5, stride=2, padding=2),
            nn.ReLU(),
            nn.Conv1d(32, 32, kernel_size=3, stride=2, padding=1),
            nn.ReLU(),
        )
        self.decoder = nn.Sequential(
            nn.ConvTranspose1d(32, 32, kernel_size=3, stride=2, padding=1, output_padding=1),
            nn.ReLU(),
            nn.ConvTranspose1d(32, HISTORY, kernel_size=5, stride=2, padding=2, output_padding=1),
        )

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        """(B, d, 5, 3) -> mask (B, d, 3)."""
        b, d = grid.shape[0], grid.shape[1]
        if d != self.d_laser or grid.shape[2:] != (FEG_CHANNELS, HISTORY):
            raise ValueError(
                f"FEG input must be (B, {self.d_laser}, {FEG_CHANNELS}, {HISTORY}), got {tuple(grid.shape)}"
            )
        x = grid.reshape(b, d, FEG_CHANNELS * HISTORY).transpose(1, 2)
        logits = self.decoder(self.encoder(x))
        return torch.sigmoid(logits).transpose(1, 2)


def feg_forward(grid: torch.Tensor, feg: FEGModule) -> tuple[torch.Tensor, torch.Tensor]:
    """Return (mask, weighted laser), both (B, d, 3)."""
    mask = feg(grid)
    return mask, mask * grid[:, :, 0, :]


@dataclass
class PolicyOutput:
    mean: torch.Tensor
    log_std: torch.Tensor
    value: torch.Tensor
    hidden: Hidden
    mask: Optional[torch.Tensor] = None

    def distribution(self) -> "SquashedGaussian":
        return SquashedGaussian(self.mean, self.log_std)


def _conv_length(d: int) -> int:
    for _ in range(2):
        d = (d - 1) // 2 + 1
    return d


class ActorCritic(nn.Module):
    """Shared trunk with actor and critic heads.

    Architectures: ``cnn`` (no recurrence, no FEG), ``lstm`` (LSTM cell, raw
    lasers) and ``lstm_feg`` (LSTM cell on FEG-weighted lasers).
    """

    def __init__(self, d_laser: int, cfg: Optional[PolicyConfig] = None) -> None:
        super().__init__()
        cfg = cfg or PolicyConfig()
        self.d_laser = d_laser
        self.architecture = cfg.architecture
        self.hidden_size = cfg.hidden_size

        self.feg = FEGModule(d_laser) if cfg.architecture == "lstm_feg" else None
        self.conv = nn.Sequential(
            nn.Conv1d(HISTORY, 32, kernel_size=5, stride=2, padding=2),
            nn.ReLU(),
            nn.Conv1d(32, 32, kernel_size=5, stride=2, padding=2),
            nn.ReLU(),
        )
        self.features = nn.Linear(32 * _conv_length(d_laser), cfg.feature_size)
        self.merge = nn.Linear(cfg.feature_size + 4, cfg.hidden_size)
        self.lstm = nn.LSTMCell(cfg.hidden_size, cfg.hidden_size) if cfg.architecture != "cnn" else None
        self.actor = nn.Linear(cfg.hidden_size, 2)
        self.log_std = nn.Parameter(torch.full((2,), cfg.log_std_init, dtype=DTYPE))
        self.critic = nn.Linear(cfg.hidden_size, 1)
        self.to(DTYPE)

    @property
    def recurrent(self) -> bool:
        return self.lstm is not None

    def initial_hidden(self, batch: int = 1) -> Hidden:
        zeros = torch.zeros(batch, self.hidden_size, dtype=DTYPE)
        return zeros, zeros.clone()

    def forward(
        self,
        lasers: torch.Tensor,
        goals: torch.Tensor,
        velocities: torch.Tensor,
        hidden: Optional[Hidden] = None,
    ) -> PolicyOutput:
        """Batched forward: lasers (B, 3, d), goals (B, 3, 2), velocities (B, 3, 2)."""
        if hidden is None:
            hidden = self.initial_hidden(lasers.shape[0])

        mask = None
        if self.feg is not None:
            mask, weighted = feg_forward(feg_grid(lasers, goals, velocities), self.feg)
            frames = weighted.transpose(1, 2)
        else:
            frames = lasers

        x = self.conv(frames).flatten(1)
        x = F.relu(self.features(x))
        x = torch.cat([x, goals[:, -1], velocities[:, -1]], dim=1)
        x = F.relu(self.merge(x))

        if self.lstm is not None:
            h, c = self.lstm(x, hidden)
            hidden = (h, c)
            x = h

        mean = self.actor(x)
        value = self.critic(x).squeeze(-1)
        if not (torch.isfinite(mean).all() and torch.isfinite(value).all()):
            raise NumericalError("non-finite policy output", parameter_dump(self))
        return PolicyOutput(mean, self.log_std.expand_as(mean), value, hidden, mask)


def observation_tensors(observations: Sequence[Observation]) -> tuple[torch.Tensor, ...]:
    lasers = torch.as_tensor(np.stack([o.lasers for o in observations]), dtype=DTYPE)
    goals = torch.as_tensor(np.stack([o.goals for o in observations]), dtype=DTYPE)
    velocities = torch.as_tensor(np.stack([o.velocities for o in observations]), dtype=DTYPE)
    return lasers, goals, velocities


def policy_forward(
    model: ActorCritic, observations: Sequence[Observation], hidden: Optional[Hidden] = None
) -> PolicyOutput:
    return model(*observation_tensors(observations), hidden)


def _log_sigmoid_jacobian(u: torch.Tensor) -> torch.Tensor:
    return F.logsigmoid(u) + F.logsigmoid(-u)


def _log_tanh_jacobian(u: torch.Tensor) -> torch.Tensor:
    return 2.0 * (math.log(2.0) - u - F.softplus(-2.0 * u))


class SquashedGaussian:
    """Diagonal Gaussian over u; actions are (sigmoid(u0), tanh(u1))."""

    def __init__(self, mean: torch.Tensor, log_std: torch.Tensor) -> None:
        self.mean = mean
        self.log_std = log_std
        self.std = log_std.exp()

    @staticmethod
    def squash(u: torch.Tensor) -> torch.Tensor:
        return torch.stack([torch.sigmoid(u[..., 0]), torch.tanh(u[..., 1])], dim=-1)

    def sample(self, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        eps = torch.randn(self.mean.shape, generator=generator, dtype=self.mean.dtype)
        return self.mean + self.std * eps

    def log_prob(self, u: torch.Tensor) -> torch.Tensor:
        z = (u - self.mean) / self.std
        gaussian = -0.5 * z.pow(2) - self.log_std - 0.5 * math.log(2.0 * math.pi)
        jacobian = _log_sigmoid_jacobian(u[..., 0]) + _log_tanh_jacobian(u[..., 1])
        return gaussian.sum(-1) - jacobian

    def entropy(self) -> torch.Tensor:
        """Entropy of the pre-squash Gaussian."""
        return (0.5 + 0.5 * math.log(2.0 * math.pi) + self.log_std).sum(-1)

    def kl_from(self, old_mean: torch.Tensor, old_log_std: torch.Tensor) -> torch.Tensor:
        """KL(old || self); the squash is a bijection so this equals the action-space KL."""
        var_ratio = torch.exp(2.0 * (old_log_std - self.log_std))
        mean_term = ((self.mean - old_mean) / self.std).pow(2)
        return 0.5 * (var_ratio + mean_term - 1.0).sum(-1) + (self.log_std - old_log_std).sum(-1)

    def mode(self) -> torch.Tensor:
        return self.squash(self.mean)


def to_action(squashed: torch.Tensor) -> Action:
    v, w = (float(x) for x in squashed.detach().reshape(2))
    return Action(v=v, w_normalized=w).clamped()


def sample_action(
    dist: SquashedGaussian, generator: Optional[torch.Generator] = None
) -> tuple[Action, float, torch.Tensor]:
    """Draw one action from a single-row distribution; returns (action, log_prob, u)."""
    u = dist.sample(generator)
    return to_action(dist.squash(u)), float(dist.log_prob(u).reshape(())), u
