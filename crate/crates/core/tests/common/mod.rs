#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use fieldsmith::camera::{CameraIntrinsics, CameraPose, ViewId};
use fieldsmith::field::{Aabb, GridSpec, RadianceField, TrainConfig};
use fieldsmith::geometry::BoundingBox3D;
use fieldsmith::raster::Image;
use fieldsmith::scene_io::{CameraView, DatasetRole, SceneDataset};
use nalgebra::Vector3;

pub const SIZE: u32 = 16;

/// Views looking at the origin from the given eye positions, each with a
/// distinct smooth image.
pub fn dataset_at(eyes: &[Vector3<f64>]) -> SceneDataset {
    let intr = CameraIntrinsics::centered(12.0, SIZE, SIZE);
    let views = eyes
        .iter()
        .enumerate()
        .map(|(i, eye)| {
            let k = i as f32 / eyes.len().max(1) as f32;
            CameraView {
                id: ViewId(i as u32),
                image: Image::from_fn(SIZE as usize, SIZE as usize, |x, y| {
                    [k, x as f32 / SIZE as f32, y as f32 / SIZE as f32]
                }),
                pose: CameraPose::look_at(*eye, Vector3::zeros(), Vector3::y()).unwrap(),
                intrinsics: intr,
            }
        })
        .collect();
    SceneDataset::new(views, DatasetRole::Background).unwrap()
}

/// `n` cameras on a ring of radius 3 around the origin.
pub fn ring(n: usize) -> SceneDataset {
    let eyes: Vec<_> = (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            Vector3::new(3.0 * a.cos(), 0.4, 3.0 * a.sin())
        })
        .collect();
    dataset_at(&eyes)
}

pub fn center_box() -> BoundingBox3D {
    BoundingBox3D::axis_aligned(Vector3::zeros(), Vector3::repeat(0.5)).unwrap()
}

pub fn small_field() -> RadianceField {
    RadianceField::new(&GridSpec {
        resolution: [5, 5, 5],
        aabb: Aabb::cube(1.0).unwrap(),
        init_density_raw: -1.0,
        init_color_raw: 0.0,
        background: [0.2, 0.3, 0.4],
    })
    .unwrap()
}

pub fn small_train() -> TrainConfig {
    TrainConfig {
        rays_per_batch: 16,
        n_samples_per_ray: 8,
        ..Default::default()
    }
}

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Reply {
    pub fn json(status: u16, body: impl Into<String>) -> Self {
        Reply {
            status,
            headers: vec![("content-type".into(), "application/json".into())],
            body: body.into(),
        }
    }
}

/// Minimal HTTP/1.1 server on a loopback port. One request per
/// connection; the handler sees method, path and body.
pub struct MockServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&str, &str, &str) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handler = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                counter.fetch_add(1, Ordering::SeqCst);
                let handler = handler.clone();
                thread::spawn(move || {
                    let _ = serve(stream, &*handler);
                });
            }
        });
        MockServer { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, handler: &dyn Fn(&str, &str, &str) -> Reply) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h)?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    let reply = handler(&method, &path, &String::from_utf8_lossy(&body));
    let mut out = format!(
        "HTTP/1.1 {} X\r\ncontent-length: {}\r\nconnection: close\r\n",
        reply.status,
        reply.body.len()
    );
    for (k, v) in &reply.headers {
        out += &format!("{k}: {v}\r\n");
    }
    out += "\r\n";
    let mut stream = stream;
    stream.write_all(out.as_bytes())?;
    stream.write_all(reply.body.as_bytes())?;
    stream.flush()
}
