"""EVM bytecode: disassembly, control-flow graphs, loops."""
