"""Compose autoregressive sequence models with mean-family operators and
sample the induced string distribution with particle methods, checked
against exact enumeration.
"""

from .cli import main
from .config import (
    ExperimentConfig,
    KNOWN_METHODS,
    build_expert,
    build_panel,
    build_predicate,
    config_from_dict,
    load_config,
)
from .runner import (
    SCHEMA_VERSION,
    read_records,
    run_experiment,
    summarize_records,
    write_records,
)
from .bridge import (
    TokenToByteModel,
    Tokenizer,
    as_byte_model,
    byte_log_prob,
    byte_prefix_log_prob,
)
from .ensemble import (
    CustomOperator,
    EnsembleSpec,
    ExpertPanel,
    check_annihilative,
    epsilon_shift,
    is_consensus,
    log_next_potentials,
    log_prefix_potential,
    log_string_potential,
)
from .errors import (
    DeadPrefixError,
    DegenerateRunError,
    EnsmcError,
    EnumerationBudgetError,
    ExpertUnavailableError,
    UndefinedConditionalError,
)
from .inference import (
    Diagnostics,
    Estimate,
    LocalSample,
    OptimalProposal,
    OracleShaping,
    Particle,
    PrefixPotentialShaping,
    SamplerConfig,
    ShapingProposalModel,
    ensemble_log_target,
    ess,
    importance_sample,
    local_sample,
    one_step_weight_variance,
    optimal_proposal_row,
    sis,
    smc,
)
from .lmcore import (
    EOS_KEY,
    Alphabet,
    SequenceModel,
    ancestral_sample,
    check_model,
    cond_next,
    prefix_log_prob,
    sample_with_log_prob,
    string_log_prob,
    validate_log_row,
)
from .logtools import LOG_ZERO
from .metrics import (
    as_distribution,
    compare_to_oracle,
    correlation_report,
    empirical_distribution,
    expected_accuracy,
    intersection_report,
    mixture_identity,
    rank_displacement,
)
from .oracle import (
    ExactTable,
    alpha_divergence,
    dump_table,
    enumerate_ensemble,
    kl_divergence,
    load_table,
    minimize_divergence_simplex,
    model_log_probs,
    total_variation,
)
from .remote import ModelServer, RemoteModel, check_remote
from .toy import NGramModel, PFSAModel, TableModel, fit_ngram, load_corpus

__version__ = "0.1.0"

__all__ = [
    "Alphabet",
    "CustomOperator",
    "DeadPrefixError",
    "DegenerateRunError",
    "Diagnostics",
    "EnsembleSpec",
    "EnsmcError",
    "EnumerationBudgetError",
    "EOS_KEY",
    "Estimate",
    "ExactTable",
    "ExperimentConfig",
    "ExpertPanel",
    "ExpertUnavailableError",
    "KNOWN_METHODS",
    "LocalSample",
    "LOG_ZERO",
    "ModelServer",
    "NGramModel",
    "OptimalProposal",
    "OracleShaping",
    "Particle",
    "PFSAModel",
    "PrefixPotentialShaping",
    "RemoteModel",
    "SamplerConfig",
    "SCHEMA_VERSION",
    "SequenceModel",
    "ShapingProposalModel",
    "TableModel",
    "TokenToByteModel",
    "Tokenizer",
    "UndefinedConditionalError",
    "alpha_divergence",
    "ancestral_sample",
    "as_distribution",
    "build_expert",
    "build_panel",
    "build_predicate",
    "as_byte_model",
    "byte_log_prob",
    "byte_prefix_log_prob",
    "check_annihilative",
    "check_model",
    "check_remote",
    "compare_to_oracle",
    "cond_next",
    "config_from_dict",
    "correlation_report",
    "dump_table",
    "empirical_distribution",
    "ensemble_log_target",
    "enumerate_ensemble",
    "epsilon_shift",
    "ess",
    "expected_accuracy",
    "fit_ngram",
    "importance_sample",
    "intersection_report",
    "is_consensus",
    "kl_divergence",
    "load_config",
    "load_corpus",
    "load_table",
    "local_sample",
    "main",
    "log_next_potentials",
    "log_prefix_potential",
    "log_string_potential",
    "minimize_divergence_simplex",
    "mixture_identity",
    "model_log_probs",
    "one_step_weight_variance",
    "optimal_proposal_row",
    "prefix_log_prob",
    "read_records",
    "run_experiment",
    "rank_displacement",
    "sample_with_log_prob",
    "sis",
    "smc",
    "string_log_prob",
    "summarize_records",
    "total_variation",
    "validate_log_row",
    "write_records",
]
