"""Torch Sinkhorn assignment, computed here for parity testing against the
engine's implementation (same marginals: uniform rows, uniform columns with
dustbin, finished by a row normalization)."""
import numpy as np
import torch


def assignment_probs(tokens, weights, biases, dustbin_score, iters=3):
    """Assignment matrix (n, M+1) from flat tokens (n, D) and cluster params."""
    tokens = torch.as_tensor(np.asarray(tokens), dtype=torch.float64)
    weights = torch.as_tensor(np.asarray(weights), dtype=torch.float64)
    biases = torch.as_tensor(np.asarray(biases), dtype=torch.float64)
    logits = tokens @ weights.T + biases
    dustbin = torch.full((tokens.shape[0], 1), float(dustbin_score),
                         dtype=torch.float64)
    log_k = torch.cat([logits, dustbin], dim=1)

    n, cols = log_k.shape
    log_r = -torch.log(torch.tensor(float(n)))
    log_c = -torch.log(torch.tensor(float(cols)))
    u = torch.zeros(n, dtype=torch.float64)
    v = torch.zeros(cols, dtype=torch.float64)
    for _ in range(iters):
        u = log_r - torch.logsumexp(log_k + v[None, :], dim=1)
        v = log_c - torch.logsumexp(log_k + u[:, None], dim=0)
    log_p = log_k + u[:, None] + v[None, :]
    log_p = log_p - torch.logsumexp(log_p, dim=1, keepdim=True)
    return torch.exp(log_p).numpy()
