//! Joint sensor placement against attackers facing a moving-target defense:
//! attack graphs per configuration are combined with the configuration
//! schedule into a product MDP, the attacker's reachability problem is solved
//! by LP or value iteration, and detector / stealthy-sensor placements are
//! optimized by mixed-integer programming.

pub mod alloc;
pub mod milp;
pub mod model;
pub mod product;
pub mod sim;
pub mod ssp;

#[doc(hidden)]
pub mod testutil;
