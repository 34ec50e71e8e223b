//! Per-image preprocessing for each method.

use crate::clahe::apply_clahe;
use crate::config::{BBoxSource, ClaheOrder, Method, PipelineConfig};
use crate::error::{Error, Result};
use crate::image::{downscale, GrayImage};
use crate::mask::{apply_mask, bounding_box, crop, dilate, letterbox, resample_mask, BinaryMask};

/// Run one image through the configured method. Masks are given at their own
/// resolution and need not match the image; `mask_native_res` in the config
/// defines the resolution the dilation margin refers to.
pub fn process_image(img: &GrayImage, mask: Option<&BinaryMask>, cfg: &PipelineConfig) -> Result<GrayImage> {
    let (tw, th) = (cfg.target_width, cfg.target_height);
    let out = match cfg.method {
        Method::Baseline => downscale(img, tw, th)?,
        Method::Clahe => match cfg.clahe_order {
            ClaheOrder::BeforeDownscale => downscale(&apply_clahe(img, &cfg.clahe)?, tw, th)?,
            ClaheOrder::AfterDownscale => apply_clahe(&downscale(img, tw, th)?, &cfg.clahe)?,
        },
        Method::Masking => {
            let dilated = dilated_mask(mask, cfg)?;
            let fitted = resample_mask(&dilated, img.width(), img.height())?;
            downscale(&apply_mask(img, &fitted, 0)?, tw, th)?
        }
        Method::Cropping => {
            let mask = required(mask)?;
            let source = match cfg.bbox_source {
                BBoxSource::Dilated => dilated_mask(Some(mask), cfg)?,
                BBoxSource::Raw => mask.clone(),
            };
            let bbox = bounding_box(&source)?.rescale(source.dimensions(), img.dimensions());
            let mut cropped = crop(img, &bbox)?;
            if cfg.letterbox {
                cropped = letterbox(&cropped, 0)?;
            }
            downscale(&cropped, tw, th)?
        }
    };
    Ok(if cfg.export_8bit { out.to_eight_bit() } else { out })
}

fn required(mask: Option<&BinaryMask>) -> Result<&BinaryMask> {
    mask.ok_or_else(|| Error::InvalidArgument("method needs a lung mask".into()))
}

fn dilated_mask(mask: Option<&BinaryMask>, cfg: &PipelineConfig) -> Result<BinaryMask> {
    let mask = required(mask)?.clone().with_native_resolution(cfg.mask_native_res);
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let radius = mask.scaled_radius(cfg.margin_px);
    Ok(dilate(&mask, radius))
}
