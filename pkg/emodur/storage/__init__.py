from .base import BaseStorage
from .filesystem import FileSystem, open_text

__all__ = ["BaseStorage", "FileSystem", "open_text"]
