"""Sparse, non-redundant representative selection for active labeling."""
from repsel.classifier import ClassProbabilities, LaplacianGraph, SparseCodeMatrix, add_labeled, classify
from repsel.data import FeatureMatrix, LabeledDictionary, PoolSpec, build_pools, load_dataset, save_dataset
from repsel.embed import EmbeddingConfig, embed
from repsel.pipeline import ExperimentConfig, SyntheticSpec, aggregate_curves, gen_synthetic, run_experiment, run_trial
from repsel.redundancy import RedundancyGroups, build_groups, propagate_label
from repsel.selector import SelectionProblem, lambda0, select_representatives
from repsel.solver import SolverConfig, SolverReport, fista, prox_l1, prox_l21

__version__ = "0.1.0"
