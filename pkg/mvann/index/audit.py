# Copyright (c) 2025 mvann authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Structural checks over a built index."""

import numpy as np


class AuditError(RuntimeError):

    def __init__(self, violations):
        self.violations = list(violations)
        head = '; '.join(self.violations[:5])
        more = len(self.violations) - 5
        if more > 0:
            head += ' (and {} more)'.format(more)
        super(AuditError, self).__init__(
            '{} audit violation(s): {}'.format(len(self.violations), head))


def audit_graph(index):
    out = []
    n = len(index.dataset)
    M = index.params.M
    for node in range(n):
        if node not in index.node_layer:
            out.append('node {} is not indexed'.format(node))
    for node, top in index.node_layer.items():
        for lc, layer in enumerate(index.layers):
            if (lc <= top) != (node in layer):
                out.append('node {} with top layer {} is {} layer {}'.format(
                    node, top, 'missing from' if lc <= top else 'present on',
                    lc))
    for lc, layer in enumerate(index.layers):
        for node, adj in layer.items():
            if node not in index.node_layer:
                out.append('layer {} holds unknown node {}'.format(lc, node))
            if len(adj) > M:
                out.append('node {} has degree {} > {} on layer {}'.format(
                    node, len(adj), M, lc))
            for other, w in adj.items():
                if other == node:
                    out.append('node {} links to itself on layer {}'.format(
                        node, lc))
                elif other not in layer:
                    out.append('node {} links to node {} absent from layer '
                               '{}'.format(node, other, lc))
                elif layer[other].get(node) != w:
                    out.append('edge {}-{} on layer {} is not symmetric'
                               .format(node, other, lc))
    if index.entry_point is None:
        if index.node_layer:
            out.append('index has nodes but no entry point')
    else:
        ep_layer = index.node_layer.get(index.entry_point)
        if ep_layer is None:
            out.append('entry point {} is not indexed'.format(
                index.entry_point))
        elif ep_layer != max(index.node_layer.values()) or \
                ep_layer != index.max_layer:
            out.append('entry point {} sits on layer {}, top layer is {}'
                       .format(index.entry_point, ep_layer, index.max_layer))
    return out


def audit_ant(ant, dataset):
    out = []
    if ant.num_tokens != dataset.num_tokens:
        return ['navigation table covers {} tokens, dataset has {}'.format(
            ant.num_tokens, dataset.num_tokens)]
    if ant.offsets[0] != 0 or np.any(np.diff(ant.offsets) < 0) or \
            ant.offsets[-1] != len(ant.targets):
        return ['navigation table offsets are malformed']
    if ant.num_entries > dataset.num_tokens * ant.M:
        out.append('navigation table holds {} entries, bound is {}'.format(
            ant.num_entries, dataset.num_tokens * ant.M))
    for gid in range(ant.num_tokens):
        targets, scores = ant.entries(gid)
        owner = int(dataset.token_owner[gid])
        if len(targets) > ant.M:
            out.append('token {} lists {} targets > {}'.format(
                gid, len(targets), ant.M))
        if np.any((targets < 0) | (targets >= len(dataset))):
            out.append('token {} lists an out-of-range target'.format(gid))
        if np.any(targets == owner):
            out.append('token {} lists its own object {}'.format(gid, owner))
        for j in range(1, len(targets)):
            if (-scores[j - 1], targets[j - 1]) >= (-scores[j], targets[j]):
                out.append('token {} list is not sorted at position {}'
                           .format(gid, j))
                break
    return out


def audit_token_index(token_index):
    out = []
    n = token_index.dataset.num_tokens
    M = token_index.params.M
    if len(token_index) != n:
        out.append('token graph holds {} of {} tokens'.format(
            len(token_index), n))
    for lc, layer in enumerate(token_index.layers):
        for key, adj in layer.items():
            if len(adj) > M:
                out.append('token {} has degree {} > {} on layer {}'.format(
                    key, len(adj), M, lc))
            for other in adj:
                if other not in layer:
                    out.append('token {} links to token {} absent from layer '
                               '{}'.format(key, other, lc))
    return out


def run_audits(index, ant=None, token_index=None):
    out = audit_graph(index)
    if ant is not None:
        out.extend(audit_ant(ant, index.dataset))
    if token_index is not None:
        out.extend(audit_token_index(token_index))
    return out


def check(index, ant=None, token_index=None):
    violations = run_audits(index, ant, token_index)
    if violations:
        raise AuditError(violations)
