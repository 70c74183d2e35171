"""Fault taxonomy shared by every gridlet service.

A Fault is an application-level failure that travels over the wire as an
XML-RPC fault struct (faultCode/faultString). Transport problems are never
Faults: clients raise TransportError for those instead.

Fault codes are stable protocol constants; clients rebuild the concrete
subclass from the code via `from_code`.
"""

from __future__ import annotations


class Fault(Exception):
    """Base class for RPC-visible failures."""

    code = 0

    _registry: dict[int, type["Fault"]] = {}

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.code in Fault._registry:
            raise TypeError(f"duplicate fault code {cls.code} for {cls.__name__}")
        Fault._registry[cls.code] = cls

    @staticmethod
    def from_code(code: int, message: str) -> "Fault":
        cls = Fault._registry.get(code)
        if cls is None:
            fault = Fault(message)
            fault.code = code
            return fault
        return cls(message)


# -- protocol / dispatch ----------------------------------------------------

class MalformedXml(Fault):
    code = 1


class MethodNotFound(Fault):
    code = 2


class Unauthorized(Fault):
    code = 3


class InvalidCredential(Fault):
    code = 4


class InvalidSession(Fault):
    code = 5


class InvalidParams(Fault):
    code = 6


class UnsupportedValue(Fault):
    code = 7


# -- acl --------------------------------------------------------------------

class InvalidScope(Fault):
    code = 8


class NotFound(Fault):
    code = 9


# -- broker -----------------------------------------------------------------

class UnknownPeer(Fault):
    code = 10


class NoFreshPeers(Fault):
    code = 11


class ForwardFailed(Fault):
    code = 12


class UnknownJob(Fault):
    code = 13


class OwnerUnreachable(Fault):
    code = 14


class NotLeader(Fault):
    code = 15


# -- worker -----------------------------------------------------------------

class DuplicateJob(Fault):
    code = 16


class InputFetchFailed(Fault):
    code = 17


class ExecutorFailed(Fault):
    code = 18


class SubmitParseError(Fault):
    code = 19


class SpawnError(Fault):
    code = 20


class Io(Fault):
    code = 21


class OutsideRoot(Fault):
    code = 22


class RangeError(Fault):
    code = 23


class BadPattern(Fault):
    code = 24


# -- monitoring -------------------------------------------------------------

class SourceUnavailable(Fault):
    code = 25


class ServerError(Fault):
    code = 26
