use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use image::RgbImage;

use splitgcn_core::interactive::Correction;

use crate::Current;

pub struct Session {
    pub image: Arc<RgbImage>,
    pub image_name: String,
    pub created: SystemTime,
    pub updated: SystemTime,
    pub history: Vec<Correction>,
    pub current: Option<Current>,
}

type Handle = Arc<tokio::sync::Mutex<Session>>;

/// In-memory sessions, evicting the least recently used beyond the cap.
pub struct SessionStore {
    cap: usize,
    inner: Mutex<Inner>,
}

struct Inner {
    tick: u64,
    map: HashMap<String, (u64, Handle)>,
}

impl SessionStore {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            inner: Mutex::new(Inner {
                tick: 0,
                map: HashMap::new(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("session store poisoned").map.len()
    }

    pub fn insert(&self, id: String, s: Session) {
        let mut g = self.inner.lock().expect("session store poisoned");
        while g.map.len() >= self.cap {
            let oldest = g.map.iter().min_by_key(|(_, (t, _))| *t).map(|(k, _)| k.clone());
            match oldest {
                Some(k) => {
                    log::info!("evicting session {k}");
                    g.map.remove(&k);
                }
                None => break,
            }
        }
        g.tick += 1;
        let t = g.tick;
        g.map.insert(id, (t, Arc::new(tokio::sync::Mutex::new(s))));
    }

    pub fn get(&self, id: &str) -> Option<Handle> {
        let mut g = self.inner.lock().expect("session store poisoned");
        g.tick += 1;
        let t = g.tick;
        let e = g.map.get_mut(id)?;
        e.0 = t;
        Some(e.1.clone())
    }
}
