//! HTTP client for an external diffusion server.
//!
//! `POST /v1/synthesize`, `POST /v1/finetune` and `GET /v1/finetune/{job}`
//! with the JSON bodies in [`super::wire`]. HTTP 503 is retried with
//! exponential backoff (or the server's `Retry-After`); once retries run out
//! the caller gets [`SynthError::Retryable`] with the backoff it should use.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use super::wire::{self, FineTuneAccepted, FineTuneBody, FineTuneJob, SynthesizeBody, SynthesizeResponse, WireImage};
use super::{restore_preserved, FineTuneRequest, FineTuneStatus, SynthError, SynthesisRequest, Synthesizer};
use crate::raster::Image;

const MAX_BODY_BYTES: u64 = 512 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            timeout: Duration::from_secs(120),
            retries: 3,
            backoff: Duration::from_millis(500),
            max_in_flight: 1,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Blocking JSON-over-HTTP client with bounded concurrency and 503 retry.
pub(crate) struct HttpClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    slots: Slots,
}

pub struct RemoteSynth {
    http: HttpClient,
}

impl std::fmt::Debug for RemoteSynth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteSynth")
            .field("config", &self.http.config)
            .finish()
    }
}

struct Reply {
    status: u16,
    body: String,
    retry_after: Option<Duration>,
}

enum Method<'a> {
    Get,
    Post(&'a str),
}

impl HttpClient {
    pub(crate) fn new(config: RemoteConfig) -> Result<Self, SynthError> {
        if !(config.base_url.starts_with("http://") || config.base_url.starts_with("https://")) {
            return Err(SynthError::InvalidRequest(format!(
                "remote url must start with http:// or https://, got {:?}",
                config.base_url
            )));
        }
        if config.max_in_flight == 0 {
            return Err(SynthError::InvalidRequest("max_in_flight must be at least 1".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Slots {
            free: Mutex::new(config.max_in_flight),
            cv: Condvar::new(),
        };
        Ok(HttpClient { config, agent, slots })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn send_once(&self, method: &Method<'_>, url: &str) -> Result<Reply, SynthError> {
        let result = match method {
            Method::Get => self.agent.get(url).call(),
            Method::Post(body) => self
                .agent
                .post(url)
                .header("content-type", "application/json")
                .send(*body),
        };
        let mut resp = result.map_err(|e| match e {
            ureq::Error::Timeout(_) => SynthError::Timeout(self.config.timeout),
            other => SynthError::Unreachable(format!("{url}: {other}")),
        })?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_string()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => SynthError::Timeout(self.config.timeout),
                other => SynthError::Protocol(format!("reading response from {url}: {other}")),
            })?;
        Ok(Reply {
            status,
            body,
            retry_after,
        })
    }

    pub(crate) fn get(&self, path: &str) -> Result<String, SynthError> {
        self.request(Method::Get, path)
    }

    pub(crate) fn post(&self, path: &str, json: &str) -> Result<String, SynthError> {
        self.request(Method::Post(json), path)
    }

    fn request(&self, method: Method<'_>, path: &str) -> Result<String, SynthError> {
        let url = self.url(path);
        let _slot = self.slots.acquire();
        let mut attempt = 0u32;
        loop {
            let reply = self.send_once(&method, &url)?;
            attempt += 1;
            match reply.status {
                200..=299 => return Ok(reply.body),
                503 => {
                    let wait = reply
                        .retry_after
                        .unwrap_or_else(|| self.config.backoff.saturating_mul(1 << (attempt - 1).min(16)));
                    if attempt > self.config.retries {
                        return Err(SynthError::Retryable {
                            status: reply.status,
                            attempts: attempt,
                            retry_after: reply.retry_after,
                            next_backoff: wait,
                        });
                    }
                    log::warn!("{url} busy (503), retrying in {wait:?} (attempt {attempt})");
                    thread::sleep(wait);
                }
                status => {
                    return Err(SynthError::Rejected {
                        status,
                        body: reply.body,
                    })
                }
            }
        }
    }

    pub(crate) fn parse<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, SynthError> {
        serde_json::from_str(body).map_err(|e| SynthError::Protocol(format!("bad response body: {e}")))
    }
}

impl RemoteSynth {
    pub fn new(config: RemoteConfig) -> Result<Self, SynthError> {
        Ok(RemoteSynth {
            http: HttpClient::new(config)?,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.http.config
    }

    fn job_status(&self, job_id: &str) -> Result<FineTuneStatus, SynthError> {
        let body = self.http.get(&format!("/v1/finetune/{job_id}"))?;
        let job: FineTuneJob = HttpClient::parse(&body)?;
        match job.status.to_ascii_lowercase().as_str() {
            "ready" | "done" | "succeeded" | "completed" => Ok(FineTuneStatus::Ready),
            "pending" | "queued" => Ok(FineTuneStatus::Pending {
                job_id: job_id.to_string(),
            }),
            "running" => Ok(FineTuneStatus::Running {
                job_id: job_id.to_string(),
            }),
            "failed" | "error" => Ok(FineTuneStatus::Failed {
                message: job.message.unwrap_or_default(),
            }),
            other => Err(SynthError::Protocol(format!("unknown fine-tune status {other:?}"))),
        }
    }
}

impl Synthesizer for RemoteSynth {
    fn name(&self) -> &str {
        "remote"
    }

    fn synthesize(&self, req: &SynthesisRequest) -> Result<Image, SynthError> {
        req.validate()?;
        let body = SynthesizeBody {
            image: wire::encode_image(&req.image)?,
            mask: wire::encode_mask(&req.mask)?,
            prompt: req.prompt.text().to_string(),
            strength: req.strength,
            seed: req.seed,
        };
        let json = serde_json::to_string(&body).map_err(|e| SynthError::Protocol(e.to_string()))?;
        let reply: SynthesizeResponse = HttpClient::parse(&self.http.post("/v1/synthesize", &json)?)?;
        let image = wire::decode_image(&reply.image)?;
        if image.dims() != req.image.dims() {
            return Err(SynthError::Protocol(format!(
                "server returned {:?} image for a {:?} request",
                image.dims(),
                req.image.dims()
            )));
        }
        restore_preserved(req, &image)
    }

    fn request_finetune(&self, req: &FineTuneRequest) -> Result<FineTuneStatus, SynthError> {
        req.validate()?;
        let body = FineTuneBody {
            background_views: wire::encode_views(&req.background_views)?,
            object_views: wire::encode_views(&req.object_views)?,
            prompts: req.prompts.iter().map(|p| p.text().to_string()).collect(),
            n_bg: req.n_bg,
            n_obj: req.n_obj,
            pseudo_ground_truth: req
                .pseudo_ground_truth
                .iter()
                .map(|(id, img)| {
                    Ok(WireImage {
                        id: id.0,
                        image: wire::encode_image(img)?,
                    })
                })
                .collect::<Result<_, SynthError>>()?,
        };
        let json = serde_json::to_string(&body).map_err(|e| SynthError::Protocol(e.to_string()))?;
        let accepted: FineTuneAccepted = HttpClient::parse(&self.http.post("/v1/finetune", &json)?)?;
        Ok(FineTuneStatus::Pending {
            job_id: accepted.job_id,
        })
    }

    fn finetune_status(&self, job_id: &str) -> Result<FineTuneStatus, SynthError> {
        self.job_status(job_id)
    }
}
