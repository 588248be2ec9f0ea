from .blockcache import BlockCache
from .service import Backend, BackendConfig, serve, worker_loop
from .workqueue import ItemState, VersionError, WorkItem, WorkQueue

__all__ = [
    "Backend",
    "BackendConfig",
    "BlockCache",
    "ItemState",
    "VersionError",
    "WorkItem",
    "WorkQueue",
    "serve",
    "worker_loop",
]
