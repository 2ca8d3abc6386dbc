//! UPANets: CPA/SPA attention, UPA blocks, dense UPA layers, extreme connection and the model builder.

mod attention;
mod block;
mod check;
mod context;
mod exconnect;
mod layer;
mod model;
mod params;

pub use attention::{gap, CpaLayer, SpaLayer};
pub use block::{UpaBlock, UpaBlockConfig};
pub use check::{grad_check_module, Coverage};
pub use context::{Ctx, Mode};
pub use exconnect::{ExConnect, ExcMode, Tap};
pub use layer::{plan_layer, BlockOverrides, UpaLayer, UpaLayerPlan};
pub use model::{render_summary, Model, Pass, SummaryRow, UpaNets, UpaNetsConfig, IN_CHANNELS, LAYERS};
pub use params::{BatchNormBuffers, Init, ParamStore};
