"""Central-difference gradient check shared by the unit and acceptance suites."""

import numpy as np
import torch

from dialogsent.nets import AcousticModelSpec, ConvBlockSpec, TextModelSpec, build_acoustic, build_text
from dialogsent.trainer import cross_entropy


def _loss_and_grads(graph, x, y):
    module = graph.module
    for p in module.parameters():
        p.grad = None
    logits, _ = module(x)
    loss, dlogits = cross_entropy(logits.detach(), y)
    logits.backward(dlogits)
    return loss, {n: p.grad.detach().clone() for n, p in module.named_parameters()}


def _loss(graph, x, y):
    with torch.no_grad():
        logits, _ = graph.module(x)
        return cross_entropy(logits, y)[0]


def gradient_check(graph, x, y, step=1e-4, max_per_tensor=None, seed=0):
    """Relative error ||analytic - numeric|| / (||analytic|| + ||numeric||) per parameter tensor.

    Runs in float64 train mode; the caller makes the graph's dropout rates zero
    so the loss is a deterministic function of the parameters.
    """
    graph.module.double()
    graph.module.train(True)
    x = torch.as_tensor(x, dtype=torch.float64)
    y = torch.as_tensor(y)
    _, analytic = _loss_and_grads(graph, x, y)
    rng = np.random.default_rng(seed)
    errors, norms = {}, {}
    for name, p in graph.module.named_parameters():
        flat = p.data.view(-1)
        idx = np.arange(flat.numel())
        if max_per_tensor is not None and idx.size > max_per_tensor:
            idx = rng.choice(idx, max_per_tensor, replace=False)
        num = np.empty(idx.size)
        for k, i in enumerate(idx):
            orig = flat[i].item()
            flat[i] = orig + step
            plus = _loss(graph, x, y)
            flat[i] = orig - step
            minus = _loss(graph, x, y)
            flat[i] = orig
            num[k] = (plus - minus) / (2 * step)
        ana = analytic[name].view(-1).numpy()[idx]
        denom = np.linalg.norm(ana) + np.linalg.norm(num)
        errors[name] = 0.0 if denom < 1e-10 else float(np.linalg.norm(ana - num) / denom)
        norms[name] = float(np.linalg.norm(ana))
    graph.gradient_norms = norms
    return errors


def _random_classifier(graph, seed):
    # the built classifier starts at zero, which would zero every upstream gradient
    gen = torch.Generator().manual_seed(seed)
    layer = graph.module.classifier
    with torch.no_grad():
        layer.weight.copy_(torch.randn(layer.weight.shape, generator=gen) * 0.5)
        layer.bias.copy_(torch.randn(layer.bias.shape, generator=gen) * 0.1)
    return graph


def tiny_acoustic(seed=0, randomize=True):
    spec = AcousticModelSpec(blocks=(ConvBlockSpec(4, pool=(None, 2), dropout_rate=0.0),), dense_sizes=(8,))
    g = build_acoustic(spec, (12, 6, 1), seed)
    return _random_classifier(g, seed) if randomize else g


def tiny_text(seed=0, randomize=True):
    g = build_text(TextModelSpec(), (8, 300), seed)
    return _random_classifier(g, seed) if randomize else g


def acoustic_problem(seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((4, 12, 6)), np.array([0, 1, 2, 1])


def text_problem(seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((3, 8, 300)) * 0.1, np.array([2, 0, 1])
