"""memengine: modular agent-memory engine.

Nine memory models share one interface — reset, store, recall, manage,
optimize — composed from reusable operations and low-level functions, with
deterministic offline providers, hierarchical configuration, snapshot
persistence, an HTTP session service, and replay/selection tooling.

Quick start::

    from memengine import create_model

    model = create_model("LTMemory")
    model.store("the key is under the mat", now=0.0)
    result = model.recall(model.make_query("where is the key?", now=60.0))
    print(result.context)
"""

from .client import MemoryClient, ServiceError
from .config import MemoryConfig, MODEL_KINDS, default_config, load_config_file, merge, render_prompt
from .core import (
    MemoryRecord,
    Query,
    RecallResult,
    RecordStore,
    ScoredRecord,
    Trajectory,
    TreeNode,
    TreeStore,
)
from .errors import MemEngineError
from .models import MemoryModel, create_model
from .providers import (
    HashingEmbedder,
    HttpEmbedder,
    HttpLLM,
    LLMParams,
    ProviderSpec,
    ScriptedLLM,
)

__version__ = "0.1.0"

__all__ = [
    "HashingEmbedder",
    "HttpEmbedder",
    "HttpLLM",
    "LLMParams",
    "MODEL_KINDS",
    "MemEngineError",
    "MemoryClient",
    "MemoryConfig",
    "MemoryModel",
    "MemoryRecord",
    "ProviderSpec",
    "Query",
    "RecallResult",
    "RecordStore",
    "ScoredRecord",
    "ScriptedLLM",
    "ServiceError",
    "Trajectory",
    "TreeNode",
    "TreeStore",
    "create_model",
    "default_config",
    "load_config_file",
    "merge",
    "render_prompt",
    "__version__",
]
