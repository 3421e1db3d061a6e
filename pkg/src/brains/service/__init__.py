from .app import create_app
from .state import ServiceState, Snapshot

__all__ = ["create_app", "ServiceState", "Snapshot"]
