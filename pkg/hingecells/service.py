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
Utility for running independent analysis tasks on worker threads
"""

import logging
import threading
import typing


logger = logging.getLogger(__name__)


class TaskService:
    """
    Queue of independent tasks processed by a pool of worker threads.

    Each worker repeatedly takes the next queued handler and calls it with
    no arguments. Results come back in submission order, whatever order the
    workers finish in. The first exception raised by a handler marks the
    service failed; remaining tasks are still drained and the exception is
    re-raised from `run()`.

    Example:
    ```
    service = TaskService(workers=4)
    for seed in range(8):
        service.add_task_handler(lambda seed=seed: train(seed))
    results = service.run()
    ```
    """

    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ValueError('workers must be at least 1')

        # Number of worker threads
        self.workers = workers

        # Pending handlers with their submission index
        self.events: typing.List[typing.Tuple[int, typing.Callable[[], typing.Any]]] = []

        # Results by submission index
        self.results: typing.Dict[int, typing.Any] = {}

        # First failure raised by a handler
        self.failure: typing.Optional[BaseException] = None

        self.lock = threading.Lock()
        self.submitted = 0

    def add_task_handler(self, handler: typing.Callable[[], typing.Any]) -> int:
        """
        Adds handler to the queue and returns its submission index.
        """

        with self.lock:
            index = self.submitted
            self.events.append((index, handler))
            self.submitted += 1
        return index

    def _next(self):
        with self.lock:
            if not self.events:
                return None
            return self.events.pop(0)

    def _worker(self):
        while True:
            task = self._next()
            if task is None:
                return

            index, handler = task
            try:
                result = handler()
            except Exception as e:
                logger.error('task %d failed: %s', index, e)
                with self.lock:
                    if self.failure is None:
                        self.failure = e
                continue

            with self.lock:
                self.results[index] = result

    def run(self) -> typing.List[typing.Any]:
        """
        Process every queued handler and return results in submission order.
        With a single worker everything runs on the calling thread. The first
        handler failure is re-raised once every task has run; it stays
        visible through `is_service_failure` until the next run.
        """

        with self.lock:
            self.failure = None
            self.results = {}

        count = len(self.events)
        logger.info('running %d tasks on %d workers', count, self.workers)

        if self.workers == 1:
            self._worker()
        else:
            threads = [ threading.Thread(target=self._worker, daemon=True) for _ in range(min(self.workers, max(count, 1))) ]
            for thread in threads:
                thread.start()
            for thread in threads:
                thread.join()

        if self.failure is not None:
            # partial results of a failed run are discarded
            self.results = {}
            raise self.failure

        results = [ self.results[i] for i in sorted(self.results) ]
        self.results = {}
        return results

    def is_service_failure(self) -> bool:
        return self.failure is not None

    def clear_tasks(self):
        """
        Remove all pending tasks from queue
        """

        with self.lock:
            self.events.clear()

    def get_task_count(self) -> int:
        """
        Returns pending task count
        """

        with self.lock:
            return len(self.events)
