//! Raster data model (luminance images, flow fields, instance labels, masks)
//! together with the PNG codecs used at the pipeline boundary.

mod flow;
mod image;
mod instance;
mod mask;

pub use self::flow::{read_flow_png, write_flow_png, FlowField, FLOW_PNG_OFFSET, FLOW_PNG_SCALE};
pub use self::image::{load_image, save_gray16, save_gray8, save_rgb8, Image};
pub use self::instance::{load_instance_map, save_instance_map, InstanceMap};
pub use self::mask::{load_mask, save_mask, Mask};

use std::path::Path;

use crate::error::Error;

pub(crate) fn codec_err(path: &Path, err: impl std::fmt::Display) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        message: err.to_string(),
    }
}
