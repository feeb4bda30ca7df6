from .base import (
    AuthError,
    BackendError,
    Backends,
    BackendTimeout,
    GroundingBackend,
    MalformedResponse,
    MasterBackend,
    RateLimited,
    ServerError,
    UnknownQuestion,
    VisionBackend,
)
from .remote import (
    API_KEY_ENV,
    ChatClient,
    EndpointConfig,
    RemoteGrounding,
    RemoteMaster,
    RemoteVision,
    remote_generate,
)
from .scripted import NO_VISUAL_DETAIL, FixtureEntry, ScriptedBackend, ScriptedFixture

__all__ = [
    "API_KEY_ENV",
    "AuthError",
    "BackendError",
    "BackendTimeout",
    "Backends",
    "ChatClient",
    "EndpointConfig",
    "FixtureEntry",
    "GroundingBackend",
    "MalformedResponse",
    "MasterBackend",
    "NO_VISUAL_DETAIL",
    "RateLimited",
    "RemoteGrounding",
    "RemoteMaster",
    "RemoteVision",
    "ScriptedBackend",
    "ScriptedFixture",
    "ServerError",
    "UnknownQuestion",
    "VisionBackend",
    "remote_generate",
]
