"""Exception taxonomy shared by all blockrt modules."""


class BlockRtError(Exception):
    """Base class for all blockrt errors."""


class InvalidGeometry(BlockRtError):
    """Extents, chunk sizes or region shapes that do not divide evenly."""


class OutOfPool(BlockRtError):
    """A fixed-capacity memory pool cannot satisfy an allocation."""


class DoubleFree(BlockRtError):
    """A chunk handle was freed twice (or never belonged to the pool)."""


class NotFound(BlockRtError):
    """No node of the tree covers the requested address."""


class OutOfDomain(BlockRtError):
    """An address is covered by no node, not even a boundary block."""


class InvalidRead(BlockRtError):
    """A read consulted a node that cannot produce data."""


class CyclicReference(BlockRtError):
    """A chain of reference blocks exceeded the resolution depth cap."""


class NotOwner(BlockRtError):
    """A task wrote to a block whose compute ownership lies elsewhere."""


class VirtualWrite(BlockRtError):
    """A write targeted a block without owned storage."""


class InvalidSelector(BlockRtError):
    """A joint-insertion selector picked nodes outside the parent."""


class InvalidNesting(BlockRtError):
    """A layer stack nests a message-passing layer inside a shared-memory one."""


class NonConvergence(BlockRtError):
    """Warm-up kept discovering new remote pages past the pass cap."""


class ProtocolError(BlockRtError):
    """The page-exchange protocol was violated (ownership, sizes, rounds)."""


class Deadlock(BlockRtError):
    """A rank waited past the timeout for a message that never arrived."""


class BucketOverflow(BlockRtError):
    """Integration would move a particle out of its bucket (unsupported)."""


class RunFailure(BlockRtError):
    """A task raised; carries the originating task id."""

    def __init__(self, task_id, cause):
        super().__init__(f"task {task_id} failed: {cause!r}")
        self.task_id = task_id
        self.cause = cause
