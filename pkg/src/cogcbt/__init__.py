"""Cognitively enhanced connectional brain templates.

Learns population templates from multi-view brain networks with an
edge-conditioned graph network, couples them to a connectome-driven echo
state network trained on delayed visual recall, and evaluates the result.
"""

from .coopt import CooptConfig, ExperimentBundle, co_train, refine_cbt
from .dgn import EccNetwork, TrainConfig, cbt_from_embeddings, centeredness_loss, ecc_forward, train_dgn
from .graphdata import MultiViewNetwork, Population, generate_synthetic_population
from .reservoir import EchoStateNetwork, EsnConfig, build_reservoir_from_connectome, vis_mc

__version__ = "0.1.0"
