"""Central finite-difference check of analytic gradients for every training loss.

Runs the toy configuration (d_w=4, d_h=3, one attention layer with two heads,
one document of three two-token sentences) in float64.
"""

from __future__ import annotations

from typing import Callable

import torch

from .model import HierarchicalSummarizer, ModelConfig, init_parameters
from .selfsup import CorruptedDocument, CorruptionConfig
from .trainer import finetune_loss, pretrain_loss

TOY_CONFIG = ModelConfig(vocab_size=9, d_w=4, d_h=3, n_layers=1, n_heads=2, d_ff=8)
TOY_DOC = [[3, 4], [5, 6], [7, 8]]
# gradient norms below this are treated as zero
ZERO_FLOOR = 1e-8


def toy_losses(model: HierarchicalSummarizer) -> dict[str, Callable[[], torch.Tensor]]:
    cfg = CorruptionConfig(margin=0.5)
    masked = CorruptedDocument(
        "toy", "mask", [[2], list(TOY_DOC[1]), [2]],
        labels=[1, 0, 1], masked_positions=[0, 2], gold_pool_index=[0, 1],
        pool=[list(TOY_DOC[0]), list(TOY_DOC[2])],
    )
    replaced = CorruptedDocument("toy", "replace", [list(s) for s in TOY_DOC], labels=[0, 1, 0])
    switched = CorruptedDocument("toy", "switch", [TOY_DOC[2], TOY_DOC[1], TOY_DOC[0]], labels=[1, 0, 1])

    def finetune():
        _, D, pad = model.encode_documents([TOY_DOC])
        labels = torch.tensor([[1.0, 0.0, 0.0]], dtype=D.dtype)
        return finetune_loss(model.head_scores(D, "select"), labels, pad)

    return {
        "mask": lambda: pretrain_loss(model, [masked], cfg),
        "replace": lambda: pretrain_loss(model, [replaced], cfg),
        "switch": lambda: pretrain_loss(model, [switched], cfg),
        "finetune": finetune,
    }


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = ZERO_FLOOR) -> float:
    diff = torch.linalg.vector_norm(analytic - numeric)
    scale = torch.linalg.vector_norm(analytic) + torch.linalg.vector_norm(numeric)
    return float(diff / max(float(scale), floor))


def check_loss(model: HierarchicalSummarizer, loss_fn: Callable[[], torch.Tensor], h: float = 1e-6) -> dict[str, float]:
    """Relative error between autograd and central differences, per parameter tensor."""
    model.zero_grad()
    loss_fn().backward()
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
            numeric = torch.zeros_like(p)
            flat, num_flat = p.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                num_flat[i] = (up - down) / (2 * h)
            errors[name] = relative_error(analytic, numeric)
    return errors


def run_gradcheck(seed: int = 0) -> dict[str, float]:
    """Max relative error over all parameter tensors, for each of the four losses."""
    model = init_parameters(TOY_CONFIG, seed).double()
    model.eval()
    return {name: max(check_loss(model, fn).values()) for name, fn in toy_losses(model).items()}

