# Copyright 2026 The diffserve Authors
# SPDX-License-Identifier: Apache-2.0
"""Python access to the diffserve core: kernels, preprocessing and the API."""

import json

from ._core import (
    DimensionError,
    Error,
    FormatError,
    HttpServer,
    InvalidArgument,
    NotFound,
    attention,
    canny,
    conv2d,
    depth_proxy,
    gelu,
    group_norm,
    init_toy_models,
    layer_norm,
    matmul,
    silu,
)
from ._core import ApiService as _ApiService

__all__ = [
    "DimensionError",
    "Error",
    "FormatError",
    "HttpServer",
    "InvalidArgument",
    "NotFound",
    "Service",
    "attention",
    "canny",
    "conv2d",
    "depth_proxy",
    "gelu",
    "group_norm",
    "init_toy_models",
    "layer_norm",
    "matmul",
    "silu",
]


class Service:
    """The HTTP API without the socket. Responses are (status, dict)."""

    def __init__(self, models_dir=None, **options):
        self._native = _ApiService(models_dir=models_dir, **options)

    @property
    def native(self):
        return self._native

    def request(self, method, path, body=None):
        text = "" if body is None else (body if isinstance(body, str) else json.dumps(body))
        status, out = self._native.handle(method, path, text)
        return status, json.loads(out)

    def generate(self, body):
        return self.request("POST", "/generate", body)

    def preprocess(self, body):
        return self.request("POST", "/preprocess", body)

    def serve(self, host="127.0.0.1", port=0):
        """Starts an HTTP server; the caller stops it."""
        server = HttpServer(self._native, host, port)
        return server, server.start()
