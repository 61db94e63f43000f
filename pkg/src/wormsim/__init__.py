"""Fluid-flow simulation of multipath routing under wormhole attacks.

Submodules:
  topology     graph, paths, incidence, hop distances
  links        link delay laws and the adversary's drop-rate choice
  flow         Wardrop allocation dynamics and the equilibrium oracle
  leash        packet-leash mitigation model
  inband       in-band tunnel statistics and capture dynamics
  detection    statistical wormhole detection and routing penalties
  composition  system assembly and the simulation loop
  passivity    storage-function audits along trajectories
  plant        sampled-data integrator plant closed over the network
  config       TOML scenario schema
  cli          command-line interface
"""

__version__ = "0.1.0"
