"""Hyperparameter optimization by planning over a meta-learned surrogate.

The pipeline: generate or load a tabular benchmark of pre-evaluated tasks
(``meta_dataset``), meta-train an ensemble of probabilistic deep-set
surrogates on them (``surrogate``, ``ensemble``, ``meta_train``), then pick
configurations on new tasks by simulating evaluation trajectories and
selecting the most promising action (``planner``, ``hpo_loop``), reporting
normalized regret and average rank (``evaluation``).
"""

__version__ = "0.1.0"
