import numpy as np
import torch

from forgeryttt.model import ModelConfig

TINY = ModelConfig(resolution=16, base_patch=4, dims=(8, 16), depths=(1, 1), head_dim=4,
                   mlp_ratio=2.0, loc_width=8, cls_width=4, cls_patch=8, cls_dim=8, cls_depth=2,
                   cls_heads=2)


def finite_difference_check(loss_fn, params, rng, samples_per_tensor=6, eps=1e-6):
    """Compare autograd gradients with central differences on sampled entries.

    Returns the worst per-tensor relative error ||a - n|| / max(||a||, ||n||).
    ``loss_fn`` must be deterministic and run in float64.
    """
    params = list(params)
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)
    worst = {}
    with torch.no_grad():
        for (name, p), g in zip(params, analytic):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            idx = rng.choice(flat.numel(), size=min(samples_per_tensor, flat.numel()), replace=False)
            a, n = [], []
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                n.append((up - down) / (2 * eps))
                a.append(g.view(-1)[i].item())
            a, n = np.array(a), np.array(n)
            scale = max(np.linalg.norm(a), np.linalg.norm(n))
            worst[name] = 0.0 if scale < 1e-10 else float(np.linalg.norm(a - n) / scale)
    return worst
