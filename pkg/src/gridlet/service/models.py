"""Request/response models for the JSON mirror under /api/.

Field names match the RPC struct keys one for one; byte-valued RPC params
(executable, submit_file) travel as base64 strings in JSON.
"""

from __future__ import annotations

import base64
from typing import Any

from pydantic import BaseModel, field_validator


class LoginRequest(BaseModel):
    credential: dict | str

    def credential_blob(self) -> str:
        if isinstance(self.credential, str):
            return self.credential
        import json

        return json.dumps(self.credential)


class LoginResponse(BaseModel):
    token: str


class AclAddRequest(BaseModel):
    kind: str
    effect: str
    principal: str
    scope: str


class AclRemoveRequest(BaseModel):
    entry_id: int


class MonitorReportRequest(BaseModel):
    peer_url: str
    coefficient: float
    timestamp: int
    sample: dict[str, Any] = {}


class PeerRegisterRequest(BaseModel):
    peer_id: str
    url: str


class JobSubmitRequest(BaseModel):
    job_name: str
    executable: str  # base64
    submit_file: str  # base64
    submit_file_name: str
    input_file_names: list[str]

    @field_validator("executable", "submit_file")
    @classmethod
    def _decodable(cls, value: str) -> str:
        base64.b64decode(value, validate=True)
        return value

    def executable_bytes(self) -> bytes:
        return base64.b64decode(self.executable)

    def submit_file_bytes(self) -> bytes:
        return base64.b64decode(self.submit_file)


class JobSubmitResponse(BaseModel):
    job_id: str


class JobAcceptRequest(BaseModel):
    request: dict[str, Any]
    job_id: str
    forwarder_url: str


class JobIdRequest(BaseModel):
    job_id: str


class JobStatusResponse(BaseModel):
    job_id: str
    runs: list[str]
    aggregate: str


class JobFetchRequest(BaseModel):
    job_id: str
    run_index: int
    name: str
    offset: int = 0
    length: int = 0


class FileLsRequest(BaseModel):
    path: str
    pattern: str = "*"


class FileReadRequest(BaseModel):
    path: str
    offset: int = 0
    length: int = 0


class FileMd5Request(BaseModel):
    path: str


class FileGrepRequest(BaseModel):
    target: str
    pattern: str


class BrokerSyncRequest(BaseModel):
    state: dict[str, Any]


class BrokerAnnounceRequest(BaseModel):
    url: str
    epoch: int


class RoleInfo(BaseModel):
    role: str
    leader_url: str
    epoch: int
    peer_id: str


class FaultBody(BaseModel):
    code: int
    message: str


class FaultEnvelope(BaseModel):
    fault: FaultBody


class OkResponse(BaseModel):
    ok: bool = True
