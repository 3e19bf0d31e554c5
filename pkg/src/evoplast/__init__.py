"""Evolving symbolic synaptic-plasticity rules for spiking networks.

An outer Cartesian-genetic-programming loop searches over the expression of
a weight-update rule; the inner loop trains a spiking network with the
candidate rule on a task (XOR classification or cart-pole balancing) and
reports the resulting fitness.
"""

from .expr_graph import (
    Genome,
    GenomeError,
    NodeGene,
    Op,
    decode_active,
    evaluate,
    load_genome,
    mutate,
    random_genome,
    save_genome,
    to_expression_string,
)
from .snn import (
    CARTPOLE_TERMINALS,
    XOR_TERMINALS,
    LifConfig,
    LocalSignals,
    NetworkState,
    PlasticityRule,
    apply_rule,
    evolved_rule,
    forward_pass,
    make_network,
    mstdpet_rule,
    mult_rstdp_rule,
    named_rule,
)

__version__ = "0.1.0"
