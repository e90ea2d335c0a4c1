import logging

import numpy as np
import torch
import torch.nn as nn

logger = logging.getLogger(__name__)


class TorchMLP(nn.Module):
    """Fully connected network built from a layer-size / activation config.

    Hidden layers always get their activation; the output layer only when an
    activation other than "linear" is configured for it.
    """

    def __init__(
        self,
        network_config=None,
        input_shape=10,
        layer_key="layer_sizes",
        activation_key="activations",
        zero_output_layer=False,
        **kwargs,
    ):
        super(TorchMLP, self).__init__()

        self.input_shape = input_shape
        self.network_config = network_config
        self.layer_sizes = list(self.network_config[layer_key])
        self.activation_names = list(self.network_config[activation_key])

        self.activations = {
            "relu": torch.nn.ReLU(),
            "tanh": torch.nn.Tanh(),
            "sigmoid": torch.nn.Sigmoid(),
            "softplus": torch.nn.Softplus(),
        }

        # Build the network ------
        self.layers = nn.ModuleList()
        self.layers.append(nn.Linear(input_shape, self.layer_sizes[0]))
        if len(self.layer_sizes) > 1 or self.activation_names[0] != "linear":
            self.layers.append(self.activations[self.activation_names[0]])
        for i in range(len(self.layer_sizes) - 1):
            self.layers.append(nn.Linear(self.layer_sizes[i], self.layer_sizes[i + 1]))
            if i < (len(self.layer_sizes) - 2):
                # activations until last hidden layer are always applied
                self.layers.append(self.activations[self.activation_names[i + 1]])
            elif len(self.activation_names) >= len(self.layer_sizes) and self.activation_names[i + 1] != "linear":
                # output activation only if one is supplied
                self.layers.append(self.activations[self.activation_names[i + 1]])

        self.len_layers = len(self.layers)
        logger.debug("TorchMLP %d -> %s (%s)", input_shape, self.layer_sizes, self.activation_names)
        # -----------------------

        if zero_output_layer:
            last = self.linear_layers()[-1]
            nn.init.zeros_(last.weight)
            nn.init.zeros_(last.bias)

    def linear_layers(self):
        return [layer for layer in self.layers if isinstance(layer, nn.Linear)]

    def expected_parameter_count(self):
        sizes = [self.input_shape] + self.layer_sizes
        return int(np.sum([(sizes[i] + 1) * sizes[i + 1] for i in range(len(sizes) - 1)]))

    # Define forward pass
    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
