"""Worker-side guard for one guest-program run.

Invoked once per request with a scratch directory and a memory cap. Applies
resource limits, blocks network access, confines writes to the scratch
directory (by chdir plus a file-size cap), then executes the guest source
read from stdin in a fresh namespace. Exit code 0 on success, 1 on any guest
exception (traceback on stderr). The parent enforces the wall-clock timeout
by killing this process.
"""

import os
import resource
import socket
import sys
import traceback


def apply_limits(scratch_dir: str, max_memory_mb: int) -> None:
    os.chdir(scratch_dir)

    mem_bytes = max_memory_mb * 1024 * 1024
    try:
        resource.setrlimit(resource.RLIMIT_AS, (mem_bytes, mem_bytes))
    except (ValueError, OSError):
        pass
    # writes confined to small files inside the scratch dir
    try:
        resource.setrlimit(resource.RLIMIT_FSIZE, (8 * 1024 * 1024, 8 * 1024 * 1024))
    except (ValueError, OSError):
        pass
    try:
        resource.setrlimit(resource.RLIMIT_NPROC, (64, 64))
    except (ValueError, OSError):
        pass

    def no_network(*args, **kwargs):
        raise OSError("network access is disabled in the sandbox")

    socket.socket = no_network  # type: ignore[misc]
    socket.create_connection = no_network  # type: ignore[assignment]


def main() -> int:
    scratch_dir = sys.argv[1]
    max_memory_mb = int(sys.argv[2])
    source = sys.stdin.read()
    apply_limits(scratch_dir, max_memory_mb)
    namespace = {"__name__": "__main__", "__builtins__": __builtins__}
    try:
        exec(compile(source, "<guest>", "exec"), namespace)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else (0 if exc.code is None else 1)
        return code
    except BaseException:
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
