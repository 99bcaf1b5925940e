"""JSON-RPC 2.0 tool-protocol server over stdio or TCP.

Methods:
    tools/list   no params; returns every registered descriptor with its
                 published argument schema
    tools/call   {"name": ..., "arguments": {...}}

Error codes: -32700 parse error, -32600 invalid request, -32601 unknown
method or tool, -32602 invalid params (data carries the offending field
path), -32000 tool execution failure. Every request gets exactly one
response; responses are canonically serialized so goldens are byte-stable.
Connections are handled sequentially; multiple TCP connections may be open
at once.
"""

from __future__ import annotations

import json
import socketserver
import sys

from .errors import InvalidParamsError, SomaError, UnknownToolError
from .serde import canon_line
from .tools import ToolDescriptor, ToolRegistry, default_registry

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
TOOL_ERROR = -32000


def descriptor_record(d: ToolDescriptor) -> dict:
    return {
        "name": d.name,
        "description": d.description,
        "capability_tags": list(d.capability_tags),
        "applies_to": d.applies_to,
        "input_schema": d.parameter_schema,
    }


class ToolProtocolServer:
    def __init__(self, registry: ToolRegistry | None = None):
        self.registry = registry or default_registry()

    def handle_line(self, line: str) -> str:
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            return canon_line(_error(None, PARSE_ERROR, f"parse error: {exc.msg}"))
        return canon_line(self.handle_request(request))

    def handle_request(self, request) -> dict:
        if not isinstance(request, dict) or request.get("jsonrpc") != "2.0" \
                or not isinstance(request.get("method"), str):
            return _error(None, INVALID_REQUEST, "invalid request")
        req_id = request.get("id")
        method = request["method"]
        params = request.get("params") or {}

        if method == "tools/list":
            tools = [descriptor_record(d) for d in self.registry.descriptors()]
            return _result(req_id, {"tools": tools})

        if method == "tools/call":
            name = params.get("name")
            arguments = params.get("arguments")
            if not isinstance(name, str):
                return _error(req_id, INVALID_PARAMS, "missing tool name",
                              {"field": "params.name"})
            if not isinstance(arguments, dict):
                return _error(req_id, INVALID_PARAMS, "missing arguments object",
                              {"field": "params.arguments"})
            try:
                result = self.registry.invoke(name, arguments)
            except UnknownToolError:
                return _error(req_id, METHOD_NOT_FOUND, f"unknown tool: {name}")
            except InvalidParamsError as exc:
                return _error(req_id, INVALID_PARAMS, exc.message, {"field": exc.field})
            except SomaError as exc:
                return _error(req_id, TOOL_ERROR, str(exc),
                              {"error_type": type(exc).__name__})
            return _result(req_id, result)

        return _error(req_id, METHOD_NOT_FOUND, f"unknown method: {method}")

    def serve_stdio(self, stdin=None, stdout=None) -> None:
        stdin = stdin or sys.stdin
        stdout = stdout or sys.stdout
        for line in stdin:
            if not line.strip():
                continue
            stdout.write(self.handle_line(line))
            stdout.flush()

    def serve_tcp(self, host: str = "127.0.0.1", port: int = 0):
        """Serve line-delimited JSON-RPC over TCP; returns the bound server."""
        server = _TCPServer((host, port), _make_handler(self))
        return server


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def _make_handler(proto: ToolProtocolServer):
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace")
                if not line.strip():
                    continue
                self.wfile.write(proto.handle_line(line).encode())
                self.wfile.flush()

    return Handler


def _result(req_id, result: dict) -> dict:
    return {"jsonrpc": "2.0", "id": req_id, "result": result}


def _error(req_id, code: int, message: str, data: dict | None = None) -> dict:
    err: dict = {"code": code, "message": message}
    if data is not None:
        err["data"] = data
    return {"jsonrpc": "2.0", "id": req_id, "error": err}
