use std::cell::RefCell;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use image::RgbImage;

use splitgcn_core::checkpoint;
use splitgcn_core::data::{crop_image, CropFrame};
use splitgcn_core::interactive::{apply_correction, initial_state, Correction, StateSnapshot};
use splitgcn_core::model::{Model, ModelConfig};
use splitgcn_core::{Result, Tensor};

type Exported = Vec<(String, Vec<usize>, Vec<f32>)>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static CACHE: RefCell<Option<(u64, Model<f32>)>> = const { RefCell::new(None) };
}

/// Read-only weights shared by all worker threads. Each thread builds its
/// own model from them on first use.
pub struct Engine {
    id: u64,
    cfg: ModelConfig,
    values: Arc<Exported>,
}

impl Engine {
    pub fn from_model(model: &Model<f32>) -> Self {
        Self {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            cfg: model.cfg.clone(),
            values: Arc::new(model.params.export()),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self::from_model(&checkpoint::from_bytes(bytes)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_model(&checkpoint::load(path)?))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn with_model<R>(&self, f: impl FnOnce(&Model<f32>) -> Result<R>) -> Result<R> {
        CACHE.with(|c| {
            let mut slot = c.borrow_mut();
            if slot.as_ref().is_none_or(|(id, _)| *id != self.id) {
                let m = Model::new(self.cfg.clone(), 0)?;
                m.params.import(&self.values)?;
                *slot = Some((self.id, m));
            }
            f(&slot.as_ref().expect("model cached").1)
        })
    }

    pub fn predict(&self, image: &RgbImage, frame: &CropFrame) -> Result<StateSnapshot> {
        let s = self.cfg.image_size;
        let crop = crop_image(image, frame);
        self.with_model(|m| {
            let t = Tensor::from_vec(crop, &[1, 3, s, s])?;
            Ok(initial_state(m, &t)?.snapshot())
        })
    }

    pub fn correct(&self, state: &StateSnapshot, c: &Correction) -> Result<StateSnapshot> {
        self.with_model(|m| Ok(apply_correction(m, &state.restore()?, c)?.snapshot()))
    }
}
