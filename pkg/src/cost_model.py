"""
Closed-form communication-time model for 1D and 1.5D SpMM partitionings.

Times are expressed in units of nd/l (n vertices, d feature width, l the
bandwidth of one link) as exact fractions, and in seconds when the topology
carries a link bandwidth.

    1D    P stages, each broadcasting n/P rows over every link of the root:
          P * (nd / P) / (links * l) = nd / (links * l)
    1.5D  c = 2 replicas in g = P / 2 groups; each device first exchanges
          inside its group and then reduces across groups:
          2 nd / (g * intra * l) + nd / (g * cross * l)

With 6 links split 4 inside / 2 across a group the 1.5D layout is 3/2 times
slower than 1D; on a 12-link switch (12 inside, 12 across) it is 4/3 times
faster.

Typical usage example:
    topo = Topology.asymmetric_6_link()
    one_d = cost_model(n, d, 8, topo, '1D')
    one_half = cost_model(n, d, 8, topo, '1.5D')
    print(one_half.coefficient / one_d.coefficient)   # 3/2
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Optional, Tuple

import pandas as pd


STRATEGIES = ('1D', '1.5D')
TOPOLOGY_KINDS = ('asymmetric-6-link', 'switched-12-link', 'custom')


class UnsupportedStrategyError(ValueError):
    """The strategy cannot be evaluated on this topology or worker count."""


@dataclass(frozen=True)
class Topology:
    """
    Device interconnect description.

    Attributes:
        kind: 'asymmetric-6-link', 'switched-12-link' or 'custom'
        links_per_device: Links each device can drive concurrently (>= 1)
        link_bandwidth: Bytes per second of one link (None: symbolic units)
        group_link_split: (intra-group links, cross-group links) available to
            the 1.5D grouping; None when the grouping is not defined
    """
    kind: str
    links_per_device: int
    link_bandwidth: Optional[float] = None
    group_link_split: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.kind not in TOPOLOGY_KINDS:
            raise ValueError(f"Unknown topology kind {self.kind!r}; expected one of {TOPOLOGY_KINDS}")
        if self.links_per_device < 1:
            raise ValueError(f"links_per_device must be >= 1, got {self.links_per_device}")
        if self.link_bandwidth is not None and self.link_bandwidth <= 0:
            raise ValueError("link_bandwidth must be positive")
        if self.group_link_split is not None and min(self.group_link_split) < 1:
            raise ValueError(f"group_link_split needs >= 1 link each way, got {self.group_link_split}")

    @classmethod
    def asymmetric_6_link(cls, link_bandwidth: Optional[float] = None) -> 'Topology':
        """Hybrid cube-mesh: 6 links per device, 4 usable inside a group of 4, 2 across."""
        return cls('asymmetric-6-link', 6, link_bandwidth, (4, 2))

    @classmethod
    def switched_12_link(cls, link_bandwidth: Optional[float] = None) -> 'Topology':
        """Every device reaches every other through a switch with 12 links."""
        return cls('switched-12-link', 12, link_bandwidth, (12, 12))

    @classmethod
    def preset(cls, name: str, link_bandwidth: Optional[float] = None) -> 'Topology':
        presets = {'asymmetric-6-link': cls.asymmetric_6_link,
                   'switched-12-link': cls.switched_12_link}
        if name not in presets:
            raise ValueError(f"No preset named {name!r}; choose from {sorted(presets)}")
        return presets[name](link_bandwidth)


@dataclass(frozen=True)
class CommEstimate:
    """
    Estimated communication time of one SpMM.

    Attributes:
        strategy: '1D' or '1.5D'
        coefficient: Exact time in units of nd/l
        seconds: Wall time when the link bandwidth is known
        formula: Human-readable closed form
    """
    strategy: str
    coefficient: Fraction
    seconds: Optional[float]
    formula: str

    def to_dict(self) -> Dict:
        return {
            'strategy': self.strategy,
            'coefficient': str(self.coefficient),
            'seconds': self.seconds,
            'formula': self.formula,
        }


def _format(coef: Fraction) -> str:
    if coef == 0:
        return '0'
    if coef.numerator == 1:
        return f'nd/({coef.denominator}l)'
    return f'{coef.numerator}nd/({coef.denominator}l)'


def cost_model(n: int, d: int, P: int, topology: Topology, strategy: str,
               scalar_bytes: int = 4) -> CommEstimate:
    """
    Communication time of one distributed SpMM.

    Args:
        n: Number of vertices
        d: Feature width
        P: Number of devices
        topology: Interconnect description
        strategy: '1D' or '1.5D'
        scalar_bytes: Bytes per matrix entry, used for the seconds estimate

    Returns:
        CommEstimate with the exact coefficient of nd/l

    Raises:
        UnsupportedStrategyError: For an unknown strategy, an odd or too small
            P under 1.5D, or a topology without a group link split

    Example:
        >>> cost_model(1000, 64, 8, Topology.asymmetric_6_link(), '1D').formula
        'nd/(6l)'
    """
    if n < 0 or d < 0 or P < 1:
        raise ValueError(f"Need n >= 0, d >= 0 and P >= 1 (got n={n}, d={d}, P={P})")
    if strategy not in STRATEGIES:
        raise UnsupportedStrategyError(f"Unknown strategy {strategy!r}; expected one of {STRATEGIES}")

    if strategy == '1D':
        coef = Fraction(0) if P == 1 else Fraction(1, topology.links_per_device)
    else:
        if P < 2 or P % 2:
            raise UnsupportedStrategyError(f"1.5D with two replicas needs an even P >= 2, got {P}")
        if topology.group_link_split is None:
            raise UnsupportedStrategyError(f"Topology {topology.kind!r} defines no group link split for 1.5D")
        intra, cross = topology.group_link_split
        g = P // 2
        coef = Fraction(2, g * intra) + Fraction(1, g * cross)

    seconds = None
    if topology.link_bandwidth is not None:
        seconds = float(coef * n * d * scalar_bytes) / topology.link_bandwidth
    return CommEstimate(strategy, coef, seconds, _format(coef))


def strategy_ratio(P: int, topology: Topology) -> Fraction:
    """1.5D time divided by 1D time on the same topology."""
    one_d = cost_model(1, 1, P, topology, '1D').coefficient
    if one_d == 0:
        raise UnsupportedStrategyError("1D has no communication at P == 1")
    return cost_model(1, 1, P, topology, '1.5D').coefficient / one_d


def compare_topologies(n: int, d: int, P: int, topologies, scalar_bytes: int = 4) -> pd.DataFrame:
    """One row per (topology, strategy) with coefficient, formula and seconds."""
    rows = []
    for topo in topologies:
        for strategy in STRATEGIES:
            try:
                est = cost_model(n, d, P, topo, strategy, scalar_bytes)
            except UnsupportedStrategyError:
                continue
            rows.append({'topology': topo.kind, **est.to_dict()})
    return pd.DataFrame(rows, columns=['topology', 'strategy', 'coefficient', 'seconds', 'formula'])
