from abc import ABCMeta, abstractmethod


class BaseStorage(metaclass=ABCMeta):
    """Base class of backend storage for run artifacts

    Artifacts are corpora, checkpoints, training logs and reports. Each one is
    addressed by an id that is relative to the backend's root.
    """

    @abstractmethod
    def write(self, id, data):
        """Abstract interface of writing data

        Args:
            id (str): unique id of the data in the storage.
            data (bytes or str): data to be stored.
        """
        return

    @abstractmethod
    def read(self, id):
        """Abstract interface of reading text data

        Args:
            id (str): unique id of the data in the storage.

        Returns:
            str: the stored text.
        """
        return ""

    @abstractmethod
    def exists(self, id):
        """Check the existence of some data

        Args:
            id (str): unique id of the data in the storage

        Returns:
            bool: whether the data exists
        """
        return False

    @abstractmethod
    def path(self, id):
        """Resolve an id into a location other libraries can open."""
        return id
