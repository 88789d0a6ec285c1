//! Stochastic insult fields, a constrained-mixture growth and remodeling
//! wall model, dilatation/distensibility maps and a DeepONet inverse model
//! for thoracic aortic aneurysm studies.

pub mod deeponet;
pub mod eval;
pub mod gnr;
pub mod grf;
pub mod maps;
pub mod par;
pub mod pipeline;
pub mod special;
pub mod store;
pub mod wall;
