"""archspace: compositional search spaces over deep architectures.

Declare a search space in a small S-expression language, walk it as a
decision tree, compile any fully specified model to a shape-checked
graph IR, and search the space with random sampling, UCB tree search
(optionally over a bisected tree) or surrogate-guided SMBO.
"""

__version__ = "0.1.0"

from .core import Choice, HyperparamDomain, ModuleInstance, Shape, instantiate
from .dsl import SpaceExpr, parse, parse_file, pretty_print
from .errors import ArchspaceError
from .evaluators import (
    Evaluator,
    ExternalEvaluator,
    FunctionEvaluator,
    LinearNgramEvaluator,
    PrefixTreeEvaluator,
    TableEvaluator,
    cached,
    make_evaluator,
)
from .graph import (
    GraphIR,
    GraphNode,
    compile_model,
    from_json,
    signature_hash,
    to_json,
    total_params,
)
from .nav import (
    EnumerationResult,
    MetaChoiceNode,
    Path,
    PathStep,
    count_models,
    enumerate_paths,
    replay,
    restructure_bisect,
    sample_uniform,
    wrap_bisected,
)
from .search import (
    EvalRecord,
    SearcherConfig,
    SurrogateModel,
    UCBStats,
    featurize,
    ridge_fit,
    run_search,
    ucb_score,
)

__all__ = [
    "ArchspaceError",
    "Choice",
    "EnumerationResult",
    "EvalRecord",
    "Evaluator",
    "ExternalEvaluator",
    "FunctionEvaluator",
    "GraphIR",
    "GraphNode",
    "HyperparamDomain",
    "LinearNgramEvaluator",
    "MetaChoiceNode",
    "ModuleInstance",
    "Path",
    "PathStep",
    "PrefixTreeEvaluator",
    "SearcherConfig",
    "Shape",
    "SpaceExpr",
    "SurrogateModel",
    "TableEvaluator",
    "UCBStats",
    "cached",
    "compile_model",
    "count_models",
    "enumerate_paths",
    "featurize",
    "from_json",
    "instantiate",
    "make_evaluator",
    "parse",
    "parse_file",
    "pretty_print",
    "replay",
    "restructure_bisect",
    "ridge_fit",
    "run_search",
    "sample_uniform",
    "signature_hash",
    "to_json",
    "total_params",
    "ucb_score",
    "wrap_bisected",
]
