"""Black-box structure-perturbation attacks on graph neural networks.

The attack side (``attack``, ``baselines``) talks to a victim only through
``QueryOracle``; the victim side (``graph``, ``models``) builds the oracles.
"""

from .attack import (
    AttackConfig,
    AttackReport,
    QueryOracle,
    TheoryParams,
    attack_graph_classification,
    bandit_attack,
    bernoulli_round,
    compute_regret,
    cw_loss,
    opge_gradient,
    round_top_b,
    theoretical_schedule,
)
from .baselines import ZooConfig, random_attack, zoo_attack
from .graph import Graph, generate_sbm, load_graph, make_graph, perturbed_graph_view
from .models import GraphQuery, ModelParams, NodeQuery, TrainConfig, forward, train
from .projection import ArmSet, ProjectionConfig, brute_force_project, project

__version__ = "0.1.0"
