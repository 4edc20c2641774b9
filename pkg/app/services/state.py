import threading
from abc import ABC, abstractmethod

from app.models import const


# Base class for run-state tracking
class BaseState(ABC):
    @abstractmethod
    def update_run(self, run_id: str, state: int, progress: int = 0, **kwargs):
        pass

    @abstractmethod
    def get_run(self, run_id: str):
        pass


# Memory state management; lambda sweeps update it from worker threads
class MemoryState(BaseState):
    def __init__(self):
        self._runs = {}
        self._lock = threading.Lock()

    def update_run(
        self,
        run_id: str,
        state: int = const.RUN_STATE_PROCESSING,
        progress: int = 0,
        **kwargs,
    ):
        progress = min(int(progress), 100)
        with self._lock:
            run = self._runs.get(run_id, {})
            run.update({"state": state, "progress": progress, **kwargs})
            self._runs[run_id] = run

    def get_run(self, run_id: str):
        with self._lock:
            run = self._runs.get(run_id)
            return dict(run) if run is not None else None

    def delete_run(self, run_id: str):
        with self._lock:
            self._runs.pop(run_id, None)


# Global state
state = MemoryState()
