"""Row-sparse Adam for embedding tables"""

import math
import typing as T

import torch


class SparseDenseAdam(torch.optim.Optimizer):
    """
    Adam over parameters whose gradients are either dense tensors or sparse COO
    tensors. For a sparse gradient only the rows it touches have their moments and
    values updated; every other row stays byte-identical. Parameters whose grad is
    None are skipped entirely, which is how frozen tables are held fixed.

    # Parameters
    params : `iterable`
        iterable of parameters to optimize or dicts defining parameter groups
    lr : `float`, optional (default: 1e-3)
    betas : `Tuple[float, float]`, optional (default: (0.9, 0.999))
    eps : `float`, optional (default: 1e-8)
    """

    def __init__(self, params: T.Iterable, lr: float = 1e-3,
                 betas: T.Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
        if not 0.0 <= lr:
            raise ValueError("Invalid learning rate: {}".format(lr))
        if not 0.0 <= eps:
            raise ValueError("Invalid epsilon value: {}".format(eps))
        if not 0.0 <= betas[0] < 1.0:
            raise ValueError("Invalid beta parameter at index 0: {}".format(betas[0]))
        if not 0.0 <= betas[1] < 1.0:
            raise ValueError("Invalid beta parameter at index 1: {}".format(betas[1]))
        defaults = dict(lr=lr, betas=betas, eps=eps)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure: T.Optional[T.Callable] = None) -> T.Optional[float]:
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad

                state = self.state[p]
                if len(state) == 0:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p, memory_format=torch.preserve_format)
                    state["exp_avg_sq"] = torch.zeros_like(p, memory_format=torch.preserve_format)

                state["step"] += 1
                exp_avg, exp_avg_sq = state["exp_avg"], state["exp_avg_sq"]
                bias_correction1 = 1 - beta1 ** state["step"]
                bias_correction2 = 1 - beta2 ** state["step"]
                step_size = group["lr"] * math.sqrt(bias_correction2) / bias_correction1

                if grad.is_sparse:
                    grad = grad.coalesce()  # the update is non-linear so indices must be unique
                    indices = grad.indices()[0]
                    values = grad.values()
                    if values.numel() == 0:
                        continue

                    #      old <- b * old + (1 - b) * new
                    # <==> old += (1 - b) * (new - old)
                    old_exp_avg = exp_avg[indices]
                    new_exp_avg = old_exp_avg + (values - old_exp_avg) * (1 - beta1)
                    old_exp_avg_sq = exp_avg_sq[indices]
                    new_exp_avg_sq = old_exp_avg_sq + (values * values - old_exp_avg_sq) * (1 - beta2)
                    exp_avg[indices] = new_exp_avg
                    exp_avg_sq[indices] = new_exp_avg_sq

                    denom = new_exp_avg_sq.sqrt().add_(group["eps"])
                    p[indices] = p[indices] - step_size * (new_exp_avg / denom)
                else:
                    exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
                    exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
                    denom = exp_avg_sq.sqrt().add_(group["eps"])
                    p.addcdiv_(exp_avg, denom, value=-step_size)

        return loss
