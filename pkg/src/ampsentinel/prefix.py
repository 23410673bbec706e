"""Longest-prefix-match table for IPv4 CIDR joins.

One hash map per prefix length, probed from /32 down to /0.
"""

from __future__ import annotations

import ipaddress
from typing import Generic, Iterable, Iterator, Optional, TypeVar

V = TypeVar("V")


def parse_prefix(text: str) -> tuple[int, int]:
    net = ipaddress.IPv4Network(text.strip(), strict=False)
    return int(net.network_address), net.prefixlen


def netmask(length: int) -> int:
    return (0xFFFFFFFF << (32 - length)) & 0xFFFFFFFF if length else 0


class PrefixTable(Generic[V]):
    def __init__(self, items: Iterable[tuple[str, V]] = ()):
        self._by_len: dict[int, dict[int, V]] = {}
        self._lengths: list[int] = []
        for prefix, value in items:
            self.insert(prefix, value)

    def insert(self, prefix: str, value: V) -> None:
        network, length = parse_prefix(prefix)
        table = self._by_len.setdefault(length, {})
        if network in table:
            raise ValueError(f"duplicate prefix {prefix}")
        table[network] = value
        self._lengths = sorted(self._by_len, reverse=True)

    def __len__(self) -> int:
        return sum(len(t) for t in self._by_len.values())

    def matches(self, ip: int) -> Iterator[tuple[int, V]]:
        """Every (prefix length, value) covering ``ip``, longest first."""
        for length in self._lengths:
            value = self._by_len[length].get(ip & netmask(length))
            if value is not None:
                yield length, value

    def lookup(self, ip: int) -> Optional[V]:
        for _, value in self.matches(ip):
            return value
        return None

    def overlapping(self) -> list[tuple[str, str]]:
        """Pairs of stored prefixes where one contains the other."""
        found = []
        for length, table in self._by_len.items():
            for network in table:
                for shorter in self._lengths:
                    if shorter >= length:
                        continue
                    if network & netmask(shorter) in self._by_len[shorter]:
                        outer = f"{ipaddress.IPv4Address(network & netmask(shorter))}/{shorter}"
                        found.append((outer, f"{ipaddress.IPv4Address(network)}/{length}"))
        return found
