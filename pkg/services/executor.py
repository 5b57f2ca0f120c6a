"""
独立任务的并发执行: jobs == 1 时在当前进程顺序执行，否则 asyncio.gather + 进程池。
结果顺序始终与任务顺序一致。
"""
import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Sequence, TypeVar

from tqdm import tqdm

T = TypeVar('T')
R = TypeVar('R')


async def _gather(fn: Callable[[T], R], tasks: Sequence[T], jobs: int, bar: tqdm) -> List[R]:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [loop.run_in_executor(pool, fn, task) for task in tasks]
        for future in futures:
            future.add_done_callback(lambda _: bar.update(1))
        return list(await asyncio.gather(*futures))


def run_tasks(fn: Callable[[T], R], tasks: Sequence[T], jobs: int = 1, progress: bool = False, desc: str = '') -> List[R]:
    """fn 必须是模块级函数，任务必须可 pickle"""
    tasks = list(tasks)
    if not tasks:
        return []
    with tqdm(total=len(tasks), desc=desc, disable=not progress) as bar:
        if jobs <= 1 or len(tasks) == 1:
            results = []
            for task in tasks:
                results.append(fn(task))
                bar.update(1)
            return results
        logging.info(f"Dispatching {len(tasks)} {desc or 'tasks'} to {jobs} worker processes")
        return asyncio.run(_gather(fn, tasks, min(jobs, len(tasks)), bar))
