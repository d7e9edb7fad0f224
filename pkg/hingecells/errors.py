# hingecells - cell structure of hinge-loss ReLU networks
# Copyright (C) 2024  hingecells contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

"""
Exception hierarchy. Everything raised on purpose by the library derives
from `HingeCellsError`, so callers can catch the whole family at once.
"""

import typing


class HingeCellsError(Exception):
    """Base class of all library errors"""


class ShapeError(HingeCellsError, ValueError):
    """Dimension or shape mismatch between params, data and shape"""


class DatasetError(HingeCellsError, ValueError):
    """Invalid dataset contents"""


class ParamsError(HingeCellsError, ValueError):
    """Parameter values violate an invariant (e.g. non-finite entries)"""


class UnsupportedConfiguration(HingeCellsError):
    """Operation invoked outside the mode or depth it is defined for"""


class TooManyZeros(HingeCellsError):
    """
    The signature has more zero entries than exact enumeration allows.

    Arguments:
    * `zeros` - number of zero entries found
    * `max_zeros` - configured limit
    """

    def __init__(self, zeros: int, max_zeros: int):
        super().__init__(f'{ zeros } zero signature entries exceed max_zeros={ max_zeros }')
        self.zeros = zeros
        self.max_zeros = max_zeros


class IncidenceOverflow(HingeCellsError):
    """Product incidence set larger than the configured cap"""

    def __init__(self, size: int, cap: int):
        super().__init__(f'product incidence of { size } cells exceeds cap { cap }')
        self.size = size
        self.cap = cap


class SamplingFailed(HingeCellsError):
    """Rejection sampler could not collect enough in-cell points"""

    def __init__(self, found: int, wanted: int, attempts: int):
        super().__init__(f'found { found } of { wanted } in-cell samples after { attempts } attempts')
        self.found = found
        self.wanted = wanted
        self.attempts = attempts


class NonConvergence(HingeCellsError):
    """
    Minimum-norm-point iteration ran out of major cycles. The best iterate
    is kept on the exception.
    """

    def __init__(self, cycles: int, theta, point, norm: float):
        super().__init__(f'no convergence after { cycles } major cycles, best norm { norm!r}')
        self.cycles = cycles
        self.theta = theta
        self.point = point
        self.norm = norm


class PreconditionError(HingeCellsError):
    """
    Hypothesis of a theorem check does not hold.

    Arguments:
    * `reason` - short machine-readable code, e.g. `'not_critical'`
    * `message` - human readable explanation
    """

    def __init__(self, reason: str, message: str = ''):
        super().__init__(f'{ reason }: { message }' if message else reason)
        self.reason = reason


class NotSeparable(HingeCellsError):
    """The dataset admits no separating hyperplane with positive margin"""

    def __init__(self, margin: float):
        super().__init__(f'best margin { margin!r} is not positive')
        self.margin = margin


class BudgetExceeded(HingeCellsError):
    """Exhaustive enumeration would exceed its budget"""

    def __init__(self, size: int, limit: int):
        super().__init__(f'enumeration size { size } exceeds budget { limit }')
        self.size = size
        self.limit = limit


class Divergence(HingeCellsError):
    """Loss exceeded the optimizer guard"""

    def __init__(self, step: int, loss: float):
        super().__init__(f'loss { loss!r} exceeded guard at step { step }')
        self.step = step
        self.loss = loss


class SolverError(HingeCellsError):
    """A linear program returned a non-success status"""

    def __init__(self, what: str, status: int, message: str):
        super().__init__(f'{ what }: solver status { status }: { message }')
        self.status = status


class FormatError(HingeCellsError, ValueError):
    """
    File could not be parsed.

    Arguments:
    * `path` - offending file
    * `message` - what went wrong
    * `line` - 1-based line number, when known
    * `field` - column or key name, when known
    """

    def __init__(self, path: str, message: str, line: typing.Optional[int] = None, field: typing.Optional[str] = None):
        where = str(path)
        if line is not None:
            where += f':{ line }'
        if field is not None:
            where += f' [{ field }]'
        super().__init__(f'{ where }: { message }')
        self.path = path
        self.line = line
        self.field = field
