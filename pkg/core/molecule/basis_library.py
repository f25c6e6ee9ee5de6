from typing import Dict, List, Tuple
import logging
import math

logger = logging.getLogger(__name__)

# STO-3G contraction coefficients over normalized primitives
_STO3G_1S = (0.15432897, 0.53532814, 0.44463454)
_STO3G_2S = (-0.09996723, 0.39951283, 0.70011547)
_STO3G_2P = (0.15591627, 0.60768372, 0.39195739)

# Exponents in the standard (-1/2 Laplacian) convention: Z -> (1s, 2sp)
STO3G_EXPONENTS: Dict[int, Tuple[Tuple[float, ...], Tuple[float, ...]]] = {
    1: ((3.42525091, 0.62391373, 0.16885540), ()),
    2: ((6.36242139, 1.15892300, 0.31364979), ()),
    3: ((16.1195750, 2.9362007, 0.7946505), (0.6362897, 0.1478601, 0.0480887)),
    4: ((30.1678710, 5.4951153, 1.4871927), (1.3148331, 0.3055389, 0.0993707)),
    5: ((48.7911130, 8.8873622, 2.4052670), (2.2369561, 0.5198205, 0.1690618)),
    6: ((71.6168370, 13.0450960, 3.5305122), (2.9412494, 0.6834831, 0.2222899)),
    7: ((99.1061690, 18.0523120, 4.8856602), (3.7804559, 0.8784966, 0.2857144)),
    8: ((130.7093200, 23.8088610, 6.4436083), (5.0331513, 1.1695961, 0.3803890)),
    9: ((166.6791300, 30.3608120, 8.2168207), (6.4648032, 1.5022812, 0.4885885)),
    10: ((207.0156100, 37.7081510, 10.2052970), (8.2463151, 1.9162662, 0.6232293)),
}

# (l, exponents, absolute coefficients) for one shell
ShellData = Tuple[int, Tuple[float, ...], Tuple[float, ...]]


def primitive_norm(alpha: float, l: int) -> float:
    """Normalization constant of x^l exp(-alpha r^2) for one Cartesian component"""
    return (2.0 * alpha / math.pi) ** 0.75 * (4.0 * alpha) ** (l / 2.0)


def _absolute(exponents: Tuple[float, ...], coefficients: Tuple[float, ...], l: int) -> Tuple[float, ...]:
    return tuple(d * primitive_norm(a, l) for a, d in zip(exponents, coefficients))


def sto3g_shells(Z: int, exponent_scale: float = 1.0) -> List[ShellData]:
    """STO-3G shells for element Z, exponents multiplied by exponent_scale.

    The sp shell is split into an s and a p shell sharing exponents. Returned
    coefficients multiply raw primitives; the caller still normalizes.
    """
    if Z not in STO3G_EXPONENTS:
        raise ValueError(f"No STO-3G data for Z={Z} (available: H through Ne)")
    core, valence = STO3G_EXPONENTS[Z]
    shells: List[ShellData] = []
    core = tuple(a * exponent_scale for a in core)
    shells.append((0, core, _absolute(core, _STO3G_1S, 0)))
    if valence:
        valence = tuple(a * exponent_scale for a in valence)
        shells.append((0, valence, _absolute(valence, _STO3G_2S, 0)))
        shells.append((1, valence, _absolute(valence, _STO3G_2P, 1)))
    return shells


def even_tempered_exponents(alpha0: float, beta: float, k: int) -> List[float]:
    """Geometric exponent ladder alpha0 * beta**j, j = 0..k-1"""
    if alpha0 <= 0.0:
        raise ValueError(f"even-tempered alpha0 must be positive, got {alpha0}")
    if beta <= 1.0:
        raise ValueError(f"even-tempered beta must exceed 1, got {beta}")
    if k < 1:
        raise ValueError(f"even-tempered k must be at least 1, got {k}")
    return [alpha0 * beta ** j for j in range(k)]


def even_tempered_shells(alpha0: float, beta: float, k: int, l_max: int = 0) -> List[ShellData]:
    shells: List[ShellData] = []
    for l in range(l_max + 1):
        for alpha in even_tempered_exponents(alpha0, beta, k):
            shells.append((l, (alpha,), (primitive_norm(alpha, l),)))
    return shells
