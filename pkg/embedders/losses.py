import typing as T

import torch
import torch.nn.functional as F
from torch import Tensor


class LossConfig(T.NamedTuple):
    gamma: float
    alpha: float

    def validate(self) -> 'LossConfig':
        if not self.gamma > 0:
            raise ValueError(f'gamma must be > 0, got {self.gamma}')
        if not self.alpha >= 0:
            raise ValueError(f'alpha must be >= 0, got {self.alpha}')
        return self


def adversarial_weights(neg_scores: Tensor, alpha: float) -> Tensor:
    """
    Self-adversarial weights: softmax of alpha * score over the last dimension. The
    weights are constants for backpropagation.
    """
    if neg_scores.shape[-1] == 0:
        raise ValueError('adversarial_weights needs at least one negative')
    return torch.softmax(alpha * neg_scores.detach(), dim=-1)


def ns_loss(pos_score: Tensor, neg_scores: Tensor, cfg: LossConfig) -> Tensor:
    """
    -log sigmoid(gamma - pos) - sum_i w_i log sigmoid(neg_i - gamma), per positive.
    pos_score has shape (...), neg_scores (..., n).
    """
    w = adversarial_weights(neg_scores, cfg.alpha)
    pos_term = -F.logsigmoid(cfg.gamma - pos_score)
    neg_term = -(w * F.logsigmoid(neg_scores - cfg.gamma)).sum(dim=-1)
    return pos_term + neg_term


def ns_loss_gradients(pos_score: Tensor, neg_scores: Tensor, cfg: LossConfig) -> T.Tuple[Tensor, Tensor]:
    """
    d loss / d pos_score and d loss / d neg_scores with the adversarial weights held
    constant.
    """
    w = adversarial_weights(neg_scores, cfg.alpha)
    d_pos = torch.sigmoid(pos_score - cfg.gamma)
    d_neg = -w * torch.sigmoid(cfg.gamma - neg_scores)
    return d_pos, d_neg
