"""FastAPI application for one gridlet node.

Three surfaces:

  POST /rpc       the XML-RPC-style protocol, one call per request; a
                  bytes result is streamed raw (octet-stream, exact
                  Content-Length, X-RPC-Status: ok) when the request sent
                  X-Binary-Response: 1 and the method is binary-capable,
                  otherwise it rides base64-encoded inside the XML reply
  /api/<method>   JSON mirror of every RPC method, same field names;
                  faults come back as HTTP 400 {"fault": {code, message}}
  /ui/            the dashboard static bundle, when one is configured

Handlers run in the threadpool; the node's cores do their own locking.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from starlette.concurrency import run_in_threadpool

from .. import xrpc
from ..faults import Fault, ServerError
from ..node import GridletNode
from . import models

log = logging.getLogger(__name__)


def _rpc_response(node: GridletNode, body: bytes, token: Optional[str], binary_ok: bool) -> Response:
    method = None
    try:
        call = xrpc.decode_call(body)
        method = call.method
        result = node.handle_call(call.method, call.params, token)
    except Fault as fault:
        return Response(
            content=xrpc.encode_fault(fault.code, str(fault)),
            media_type=xrpc.XML_CONTENT_TYPE,
        )
    except Exception as exc:
        log.exception("unhandled error in %s", method)
        return Response(
            content=xrpc.encode_fault(ServerError.code, f"internal error: {exc}"),
            media_type=xrpc.XML_CONTENT_TYPE,
        )
    if (
        binary_ok
        and isinstance(result, (bytes, bytearray))
        and method in node.dispatch
        and node.dispatch[method].binary
    ):
        return Response(
            content=bytes(result),
            media_type=xrpc.BINARY_CONTENT_TYPE,
            headers={xrpc.BINARY_STATUS_HEADER: "ok"},
        )
    return Response(content=xrpc.encode_success(result), media_type=xrpc.XML_CONTENT_TYPE)


def _fault_json(fault: Fault) -> JSONResponse:
    envelope = models.FaultEnvelope(
        fault=models.FaultBody(code=fault.code, message=str(fault))
    )
    return JSONResponse(status_code=400, content=envelope.model_dump())


def create_app(node: GridletNode) -> FastAPI:
    app = FastAPI(title="gridlet node", version="0.1.0")
    # the dashboard keeps working across failover by calling the announced
    # leader, which lives on a different origin than the page it came from
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.post("/rpc")
    async def rpc(request: Request) -> Response:
        body = await request.body()
        token = request.headers.get("X-Session")
        binary_ok = request.headers.get(xrpc.BINARY_REQUEST_HEADER) == "1"
        return await run_in_threadpool(_rpc_response, node, body, token, binary_ok)

    def call(request: Request, method: str, params: list):
        token = request.headers.get("X-Session")
        return node.handle_call(method, params, token)

    def api(method: str, build_params):
        """Register POST /api/<method> driven by a pydantic request model."""

        async def endpoint(request: Request, payload_model=None):
            try:
                params = build_params(payload_model) if payload_model is not None else []
                result = await run_in_threadpool(call, request, method, params)
            except Fault as fault:
                return _fault_json(fault)
            if isinstance(result, (bytes, bytearray)):
                return Response(content=bytes(result), media_type=xrpc.BINARY_CONTENT_TYPE)
            return JSONResponse(content=result)

        return endpoint

    # -- auth / acl -------------------------------------------------------------

    @app.post("/api/auth.login", response_model=models.LoginResponse,
              responses={400: {"model": models.FaultEnvelope}})
    async def auth_login(request: Request, payload: models.LoginRequest):
        try:
            token = await run_in_threadpool(
                call, request, "auth.login", [payload.credential_blob()]
            )
        except Fault as fault:
            return _fault_json(fault)
        return models.LoginResponse(token=token)

    @app.post("/api/acl.add")
    async def acl_add(request: Request, payload: models.AclAddRequest):
        return await api("acl.add", lambda p: [p.kind, p.effect, p.principal, p.scope])(request, payload)

    @app.post("/api/acl.remove")
    async def acl_remove(request: Request, payload: models.AclRemoveRequest):
        return await api("acl.remove", lambda p: [p.entry_id])(request, payload)

    @app.get("/api/acl.list")
    @app.post("/api/acl.list")
    async def acl_list(request: Request):
        return await api("acl.list", None)(request)

    # -- monitoring / peers --------------------------------------------------------

    @app.post("/api/monitor.report")
    async def monitor_report(request: Request, payload: models.MonitorReportRequest):
        return await api(
            "monitor.report",
            lambda p: [p.peer_url, p.coefficient, p.timestamp, p.sample],
        )(request, payload)

    @app.post("/api/peer.register")
    async def peer_register(request: Request, payload: models.PeerRegisterRequest):
        return await api("peer.register", lambda p: [p.peer_id, p.url])(request, payload)

    @app.get("/api/peer.list")
    @app.post("/api/peer.list")
    async def peer_list(request: Request):
        return await api("peer.list", None)(request)

    # -- jobs ------------------------------------------------------------------------

    @app.post("/api/job.submit", response_model=models.JobSubmitResponse,
              responses={400: {"model": models.FaultEnvelope}})
    async def job_submit(request: Request, payload: models.JobSubmitRequest):
        try:
            job_id = await run_in_threadpool(
                call, request, "job.submit",
                [payload.job_name, payload.executable_bytes(), payload.submit_file_bytes(),
                 payload.submit_file_name, payload.input_file_names],
            )
        except Fault as fault:
            return _fault_json(fault)
        return models.JobSubmitResponse(job_id=job_id)

    @app.post("/api/job.accept")
    async def job_accept(request: Request, payload: models.JobAcceptRequest):
        return await api(
            "job.accept", lambda p: [p.request, p.job_id, p.forwarder_url]
        )(request, payload)

    @app.get("/api/job.status")
    async def job_status_get(request: Request, job_id: str):
        return await api("job.status", lambda p: [p])(request, job_id)

    @app.post("/api/job.status")
    async def job_status(request: Request, payload: models.JobIdRequest):
        return await api("job.status", lambda p: [p.job_id])(request, payload)

    @app.post("/api/job.kill")
    async def job_kill(request: Request, payload: models.JobIdRequest):
        return await api("job.kill", lambda p: [p.job_id])(request, payload)

    @app.get("/api/job.outputs")
    async def job_outputs_get(request: Request, job_id: str):
        return await api("job.outputs", lambda p: [p])(request, job_id)

    @app.post("/api/job.outputs")
    async def job_outputs(request: Request, payload: models.JobIdRequest):
        return await api("job.outputs", lambda p: [p.job_id])(request, payload)

    @app.post("/api/job.purge")
    async def job_purge(request: Request, payload: models.JobIdRequest):
        return await api("job.purge", lambda p: [p.job_id])(request, payload)

    @app.get("/api/job.fetch")
    async def job_fetch_get(request: Request, job_id: str, run_index: int, name: str,
                            offset: int = 0, length: int = 0):
        return await api(
            "job.fetch", lambda p: [p["job_id"], p["run_index"], p["name"], p["offset"], p["length"]]
        )(request, {"job_id": job_id, "run_index": run_index, "name": name,
                    "offset": offset, "length": length})

    @app.post("/api/job.fetch")
    async def job_fetch(request: Request, payload: models.JobFetchRequest):
        return await api(
            "job.fetch", lambda p: [p.job_id, p.run_index, p.name, p.offset, p.length]
        )(request, payload)

    # -- files ------------------------------------------------------------------------

    @app.post("/api/file.ls")
    async def file_ls(request: Request, payload: models.FileLsRequest):
        return await api("file.ls", lambda p: [p.path, p.pattern])(request, payload)

    @app.post("/api/file.read")
    async def file_read(request: Request, payload: models.FileReadRequest):
        return await api("file.read", lambda p: [p.path, p.offset, p.length])(request, payload)

    @app.post("/api/file.md5")
    async def file_md5(request: Request, payload: models.FileMd5Request):
        return await api("file.md5", lambda p: [p.path])(request, payload)

    @app.post("/api/file.grep")
    async def file_grep(request: Request, payload: models.FileGrepRequest):
        return await api("file.grep", lambda p: [p.target, p.pattern])(request, payload)

    # -- broker -------------------------------------------------------------------------

    @app.post("/api/broker.sync")
    async def broker_sync(request: Request, payload: models.BrokerSyncRequest):
        return await api("broker.sync", lambda p: [p.state])(request, payload)

    @app.post("/api/broker.announce")
    async def broker_announce(request: Request, payload: models.BrokerAnnounceRequest):
        return await api("broker.announce", lambda p: [p.url, p.epoch])(request, payload)

    @app.get("/api/broker.role", response_model=models.RoleInfo)
    @app.post("/api/broker.role", response_model=models.RoleInfo)
    async def broker_role(request: Request):
        return await api("broker.role", None)(request)

    ui_dir = node.config.ui_dir
    if ui_dir is None:
        bundled = Path(__file__).resolve().parents[3] / "frontend" / "dist"
        ui_dir = bundled if bundled.is_dir() else None
    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
