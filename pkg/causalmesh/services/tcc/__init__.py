from causalmesh.services.tcc.tcc_server import ReadSet, TccServer, compatible, validate_parallel

__all__ = ["ReadSet", "TccServer", "compatible", "validate_parallel"]
