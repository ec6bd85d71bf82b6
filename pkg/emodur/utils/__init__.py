from .signal import Signal
from .thread_pool import ThreadPool, Worker

__all__ = ["Signal", "ThreadPool", "Worker"]
