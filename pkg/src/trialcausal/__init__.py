"""Tier-constrained lagged causal discovery for longitudinal trial data,
with bootstrap tests of regional heterogeneity and Weibull/Cox survival
models."""
from .citest import CITestResult, partial_corr, spearman
from .discovery import DiscoveryConfig, TierKnowledge, markov_blanket, run_pcmci
from .exceptions import ConfigError, ConvergenceError, DataError, TrialCausalError
from .graph import CausalGraph, LaggedEdge
from .heterogeneity import BootstrapReport, PartitionMetrics, partition_metrics, run_bootstrap
from .panel import PanelDataset, SurvivalRecord, VariableSpec, VisitRecord, build_panel, to_survival
from .survival import AftFit, CoxFit, PhParams, aft_to_ph, bic, fit_cox, fit_weibull_aft, time_ratio
from .synth import ScmSpec, builtin_topcat_like, generate

__version__ = "0.1.0"
