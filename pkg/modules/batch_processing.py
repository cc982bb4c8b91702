"""
Concurrent execution of independent simulation runs.

Runs share no mutable state, so each item goes to its own worker (processes
by default, since a run is CPU bound). Results come back as
(item, result, exception) tuples in submission order.
"""
import concurrent.futures
import logging
import time
from typing import Callable, List, Optional, Tuple, TypeVar

logger = logging.getLogger(__name__)
T = TypeVar('T')
U = TypeVar('U')


class BatchProcessor:
    """
    Batch runner with configurable concurrency.
    """

    def __init__(self, max_workers: int = 4, use_processes: bool = True, timeout: Optional[float] = None):
        """
        Initialize batch processor.

        Args:
            max_workers: Maximum number of concurrent workers
            use_processes: Use a process pool (True) or a thread pool (False)
            timeout: Timeout for the whole batch in seconds, or None
        """
        self.max_workers = max(1, max_workers)
        self.use_processes = use_processes
        self.timeout = timeout

    def _executor(self, workers: int) -> concurrent.futures.Executor:
        if self.use_processes:
            return concurrent.futures.ProcessPoolExecutor(max_workers=workers)
        return concurrent.futures.ThreadPoolExecutor(max_workers=workers)

    def process_batch(self, items: List[T], process_func: Callable[[T], U], progress_callback: Optional[Callable[[int, int, float], None]] = None) -> List[Tuple[T, Optional[U], Optional[Exception]]]:
        """
        Run process_func on every item concurrently.

        Args:
            items: Items to process
            process_func: Picklable top-level function when processes are used
            progress_callback: Optional callback(done, total, fraction)

        Returns:
            List of tuples (item, result, exception), in the order of items
        """
        start_time = time.time()
        results: List[Optional[Tuple[T, Optional[U], Optional[Exception]]]] = [None] * len(items)
        if items:
            with self._executor(min(self.max_workers, len(items))) as executor:
                future_to_index = {executor.submit(process_func, item): index for index, item in enumerate(items)}
                done = 0
                for future in concurrent.futures.as_completed(future_to_index, timeout=self.timeout):
                    index = future_to_index[future]
                    try:
                        results[index] = (items[index], future.result(), None)
                    except Exception as e:
                        logger.warning(f'Error processing item {index}: {str(e)}')
                        results[index] = (items[index], None, e)
                    done += 1
                    if progress_callback:
                        progress_callback(done, len(items), done / len(items))

        batch_time = time.time() - start_time
        successful_items = sum(1 for _, _, error in results if error is None)
        failed_items = len(results) - successful_items
        success_rate = successful_items / len(results) * 100 if results else 0
        logger.info(f'Batch processed: {len(items)} items, {successful_items} successful, {failed_items} failed, {batch_time:.2f}s, {success_rate:.1f}% success rate')
        return results

