import math

import torch
import torch.nn as nn


class PosEncoding(nn.Module):
    """Frequency lift x -> [x, sin(2^k pi x), cos(2^k pi x)] for k < n_freqs."""

    def __init__(self, n_freqs, input_dim=3):
        super(PosEncoding, self).__init__()
        if n_freqs < 0:
            raise ValueError("n_freqs must be >= 0, got " + str(n_freqs))
        self.n_freqs = int(n_freqs)
        self.input_dim = int(input_dim)
        self.register_buffer("freqs", (2.0 ** torch.arange(self.n_freqs, dtype=torch.float64)) * math.pi)

    @property
    def output_dim(self):
        return self.input_dim * (2 * self.n_freqs) + self.input_dim

    def forward(self, x):
        if self.n_freqs == 0:
            return x
        scaled = (x[..., None, :] * self.freqs.to(x.dtype)[:, None]).flatten(start_dim=-2)
        return torch.cat([x, torch.sin(scaled), torch.cos(scaled)], dim=-1)
