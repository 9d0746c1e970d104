#!/usr/bin/env python3
"""
Tests for the thread-pool helpers
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

import pytest

import parallel
from parallel import chunk_slices, map_chunks, map_items, resolve_threads


def test_chunk_slices_cover_the_range():
    slices = chunk_slices(10, 3)
    assert [(s.start, s.stop) for s in slices] == [(0, 3), (3, 7), (7, 10)]
    assert len(chunk_slices(2, 8)) == 2


def test_map_chunks_keeps_order(monkeypatch):
    monkeypatch.setattr(parallel, 'MIN_CHUNK_SIZE', 1)
    results = map_chunks(lambda s: list(range(s.start, s.stop)), 100, threads=4)
    assert len(results) == 4
    assert sum(results, []) == list(range(100))
    assert map_chunks(lambda s: s, 0, threads=4) == []


def test_map_items_keeps_order():
    assert map_items(lambda k: k * k, list(range(20)), threads=3) == [k * k for k in range(20)]


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv('CUTMG_THREADS', raising=False)
    assert resolve_threads() == 1
    monkeypatch.setenv('CUTMG_THREADS', '4')
    assert resolve_threads() == 4
    assert resolve_threads(2) == 2
    monkeypatch.setenv('CUTMG_THREADS', 'many')
    assert resolve_threads() == 1
    assert resolve_threads(0) == 1


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
