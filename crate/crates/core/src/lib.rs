pub mod bessel;
pub mod coarse_grain;
pub mod edge_oracle;
pub mod experiments;
pub mod quadrature;
pub mod segment;
pub mod stats;
pub mod lattice;
pub mod gff;
pub mod io;
pub mod interlacements;
pub mod paths;
pub mod percolation;
pub mod rng;
