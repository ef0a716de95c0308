# Orchestration layer. The experiment runner lives in .manager and is imported
# from there; it depends on the solver modules, which depend on .executor.
from .executor import ThreadExecutor, resolve_thread_count, run_all

__all__ = [
    "ThreadExecutor",
    "resolve_thread_count",
    "run_all",
]
