# Copyright 2026 The fedngdb Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Federated neural graph database: training, retrieval and evaluation."""

import json

from ._fedngdb import (
    Benchmark,
    FedngdbError,
    Federation,
    ShardSet,
    __version__,
    dh_toy,
    expected_random_mrr,
    query_metric,
    sha256_hex,
)
from . import _fedngdb

__all__ = [
    "Benchmark",
    "FedngdbError",
    "Federation",
    "ShardSet",
    "__version__",
    "answer_query",
    "config_text",
    "dh_toy",
    "evaluate",
    "expected_random_mrr",
    "query",
    "query_metric",
    "sha256_hex",
    "train",
]


def config_text(config):
    """Renders a dict as the "key = value" config format; strings pass through."""
    if config is None:
        return ""
    if isinstance(config, str):
        return config
    lines = []
    for key, value in config.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def answer_query(triples, query):
    """Exact answer set of a query tree (nested lists) over id triples."""
    return _fedngdb.answer_query(list(triples), json.dumps(query))


def train(shards, benchmark, config=None):
    return Federation.train(shards, benchmark, config_text(config))


def evaluate(federation, benchmark, ks=(1, 3, 10), filtered=True, types=()):
    """Metrics report as a dict (rows, warnings, mode, ...)."""
    return json.loads(
        federation.evaluate_json(benchmark, list(ks), filtered, list(types)))


def query(federation, tree, k=10):
    """Answers one query tree through federated retrieval."""
    return json.loads(federation.query_json(json.dumps({"query": tree, "k": k})))
