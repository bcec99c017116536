//! 2D-mesh network on chip connecting the cortical columns.

mod mesh;
mod packet;
mod routing;

pub mod trace;
pub use mesh::{
    mode_histogram, Delivery, Injection, Mesh, NocError, NocStats, DEFAULT_QUEUE_DEPTH,
};
pub use packet::{Area, Coord, Packet, PacketError, PacketType, HOST_AREA};
pub use routing::{
    route_next_hops, walk, Grid, Hop, Port, RouteError, Walk, PHASE_APPROACH, PHASE_COLUMN,
    PHASE_ROW,
};
