NAME = "gmmpc"
TITLE = "GMM-MPC"


def get_version() -> str:
    """Get the installed version of the package.

    Returns:
        str: Version string, e.g "1.2.3"
    """
    from importlib.metadata import version

    try:
        return version("gmm-mpc")
    except Exception:
        return "0.1.0unknown"
