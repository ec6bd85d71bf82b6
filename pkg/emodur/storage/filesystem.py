import gzip
import os
import os.path as osp

from .base import BaseStorage


def open_text(filepath, mode="r"):
    """Open a UTF-8 text file, transparently gzip-compressed if it ends with ``.gz``.

    Args:
        filepath (str): path of the file.
        mode (str): ``'r'``, ``'w'`` or ``'a'``.
    """
    if mode not in ("r", "w", "a"):
        raise ValueError(f'unsupported mode "{mode}"')
    if str(filepath).endswith(".gz"):
        return gzip.open(filepath, mode + "t", encoding="utf-8", newline="\n")
    return open(filepath, mode, encoding="utf-8", newline="\n")


class FileSystem(BaseStorage):
    """Use filesystem as storage backend.

    The id is a filename relative to ``root_dir``. Text is written as UTF-8,
    gzip-compressed when the id ends with ``.gz``.
    """

    def __init__(self, root_dir):
        self.root_dir = root_dir

    def path(self, id):
        return osp.join(self.root_dir, id)

    def write(self, id, data):
        filepath = self.path(id)
        folder = osp.dirname(filepath)
        if folder and not osp.isdir(folder):
            os.makedirs(folder, exist_ok=True)
        if isinstance(data, str):
            with open_text(filepath, "w") as fout:
                fout.write(data)
        else:
            with open(filepath, "wb") as fout:
                fout.write(data)

    def read(self, id):
        filepath = self.path(id)
        if not osp.isfile(filepath):
            raise OSError(f"artifact {filepath} not found")
        with open_text(filepath) as fin:
            return fin.read()

    def exists(self, id):
        return osp.exists(self.path(id))
