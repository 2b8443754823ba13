from .app import ServiceState, create_app, load_state

__all__ = ["ServiceState", "create_app", "load_state"]
