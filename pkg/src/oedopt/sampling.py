"""
随机流与并行映射模块

基于计数器的随机流：每个样本的随机数由 (种子, 标签, 索引) 唯一确定，
因此结果与工作线程数无关，可逐位复现。
"""

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Tuple, TypeVar, Union

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    """将字符串标签映射为稳定的整数"""
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"随机流键必须非负: {key}")
    return int(key)


class RandomStreams:
    """
    计数器随机流

    同一 (seed, key) 总是生成同一随机序列，子流通过追加键派生。
    """

    def __init__(self, seed: int = 0, key: Tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(key)

    def child(self, *keys: Key) -> "RandomStreams":
        """派生子流"""
        return RandomStreams(self.seed, self.key + tuple(_key_to_int(k) for k in keys))

    def generator(self, *keys: Key) -> np.random.Generator:
        """
        获取指定键的独立生成器

        Args:
            keys: 追加到当前键之后的标签或索引

        Returns:
            numpy随机数生成器
        """
        spawn_key = self.key + tuple(_key_to_int(k) for k in keys)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=spawn_key)
        return np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self) -> str:
        return f"RandomStreams(seed={self.seed}, key={self.key})"


def as_streams(rng: Union["RandomStreams", int, None]) -> RandomStreams:
    """把整数种子或None规范化为随机流"""
    if isinstance(rng, RandomStreams):
        return rng
    return RandomStreams(0 if rng is None else int(rng))


def map_indexed(fn: Callable[[int], T], count: int, workers: int = 1) -> List[T]:
    """
    按索引并行执行，结果按索引顺序返回

    Args:
        fn: 接收样本索引的函数
        count: 样本数
        workers: 工作线程数，1表示顺序执行

    Returns:
        结果列表
    """
    if workers <= 1 or count <= 1:
        return [fn(i) for i in range(count)]

    logger.debug(f"并行执行 {count} 个样本，线程数 {workers}")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, range(count)))
