//! Oriented-bounding-box toolkit: canonical OBB geometry, exact rotated IoU
//! via convex polygon clipping, a pixel-based differentiable IoU loss with
//! analytic gradients, a gradient-descent box-fitting harness, rotated NMS
//! with VOC2007 evaluation, and DOTA-format data plumbing.

pub mod dotaio;
pub mod evalkit;
pub mod fitkit;
pub mod geom;
pub mod piou;
pub mod polyclip;

pub use evalkit::{Detection, EvalReport, GroundTruth};
pub use geom::{AcmPointSet, GeomError, Obb, Offset5, Point, Quad};
pub use piou::{Grad5, PiouConfig, PiouError};
pub use polyclip::{iou_exact, ClipPolygon};
