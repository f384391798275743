//! Global cap on in-flight backend requests.

use std::sync::{Arc, Condvar, Mutex};

use super::*;

/// Counting semaphore shared by every backend wrapped with the same limit.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Arc<Self> {
        Arc::new(InFlightLimit {
            max: max.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        })
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_use.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }

    pub fn max(&self) -> usize {
        self.max
    }
}

struct Permit<'a>(&'a InFlightLimit);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_use.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Wraps a backend so every call holds a permit of `limit`.
pub struct Limited<B> {
    inner: B,
    limit: Arc<InFlightLimit>,
}

impl<B: Backend> Limited<B> {
    pub fn new(inner: B, limit: Arc<InFlightLimit>) -> Self {
        Limited { inner, limit }
    }
}

impl<B: Backend> Backend for Limited<B> {
    fn describe(&self) -> Result<DescribeResponse, BackendError> {
        let _p = self.limit.acquire();
        self.inner.describe()
    }
    fn complete(&self, req: &CompleteRequest) -> Result<CompleteResponse, BackendError> {
        let _p = self.limit.acquire();
        self.inner.complete(req)
    }
    fn attention_with_grad(
        &self,
        req: &AttentionRequest,
    ) -> Result<AttentionResponse, BackendError> {
        let _p = self.limit.acquire();
        self.inner.attention_with_grad(req)
    }
    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse, BackendError> {
        let _p = self.limit.acquire();
        self.inner.caption(req)
    }
    fn itc_score(&self, req: &ItcRequest) -> Result<ItcResponse, BackendError> {
        let _p = self.limit.acquire();
        self.inner.itc_score(req)
    }
    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, BackendError> {
        let _p = self.limit.acquire();
        self.inner.detect(req)
    }
    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        let _p = self.limit.acquire();
        self.inner.embed(req)
    }
    fn name(&self) -> String {
        self.inner.name()
    }
}
