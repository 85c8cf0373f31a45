mod common;

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpListener;
use std::os::unix::net::UnixListener;
use std::thread;

use common::random_tensor;
use impasto_core::oracle::wire::{read_request, write_response, Op, Request, Response};
use impasto_core::oracle::{
    spot_check_lsp_gradient, Endpoint, GuidanceOracle, LspSpec, RemoteOracle, SurrogateOracle,
};
use impasto_core::{Error, Plane, Tensor};

/// Answer one request the way a worker would, backed by the surrogate.
/// Prompt "fail" yields an error response and seed 999 a NaN gradient.
fn answer(o: &mut SurrogateOracle, req: Request) -> Response {
    let h = &req.header;
    let t = &req.tensors;
    let result = match h.op {
        Op::EvalLsp => {
            if h.seed == Some(999) {
                let mut g = Tensor::zeros(t[0].height(), t[0].width(), t[0].channels());
                g.data_mut()[0] = f64::NAN;
                return Response::ok(BTreeMap::from([("lsp".into(), 0.0)]), vec![g]);
            }
            let spec = LspSpec {
                lambda_e: h.lambda_e.unwrap_or(0.0),
                lambda_sd: h.lambda_sd.unwrap_or(0.0),
                target: &t[1],
                seed: h.seed.unwrap_or(0),
            };
            o.eval_lsp(&t[0], &spec).map(|r| Response::ok(BTreeMap::from([("lsp".into(), r.loss)]), vec![r.grad]))
        }
        Op::DiffusionRoundtrip => o
            .diffusion_roundtrip(&t[0], h.t.unwrap_or(0), h.total_steps.unwrap_or(0), h.seed.unwrap_or(0))
            .map(|r| Response::ok(BTreeMap::new(), vec![r])),
        Op::SpatialDistance => o.spatial_distance(&t[0], &t[1]).map(|p| {
            let t = Tensor::from_vec(p.height(), p.width(), 1, p.into_vec()).unwrap();
            Response::ok(BTreeMap::new(), vec![t])
        }),
        Op::ClipAlign => {
            let prompt = h.prompt.clone().unwrap_or_default();
            if prompt == "fail" {
                return Response::error("text encoder unavailable");
            }
            o.clip_align(&t[0], &prompt)
                .map(|r| Response::ok(BTreeMap::from([("clip".into(), r.loss)]), vec![r.grad]))
        }
        Op::LpipsMasked => {
            let mask = t[2].channel(0);
            o.masked_lpips(&t[0], &t[1], &mask)
                .map(|r| Response::ok(BTreeMap::from([("lpips".into(), r.loss)]), vec![r.grad]))
        }
    };
    result.unwrap_or_else(|e| Response::error(e.to_string()))
}

fn serve<S: Read + Write>(stream: S, reader: impl Read) {
    let mut o = SurrogateOracle::new();
    let mut r = BufReader::new(reader);
    let mut w = BufWriter::new(stream);
    while let Ok(req) = read_request(&mut r) {
        if write_response(&mut w, &answer(&mut o, req)).is_err() {
            break;
        }
    }
}

fn spawn_tcp() -> Endpoint {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let reader = stream.try_clone().unwrap();
            thread::spawn(move || serve(stream, reader));
        }
    });
    Endpoint::Tcp(addr.to_string())
}

/// f32 transport loses precision; compare relative to the tensor scale.
fn assert_close(a: &Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape());
    let scale = b.max_abs().max(1e-12);
    assert!(a.sub(b).max_abs() / scale < 1e-6);
}

#[test]
fn remote_matches_local_surrogate() {
    let mut remote = RemoteOracle::new(spawn_tcp());
    let mut local = SurrogateOracle::new();
    // Values on the f32 grid survive the transport exactly.
    let x = random_tensor(16, 20, 3, 1).map(|v| v as f32 as f64);
    let y = random_tensor(16, 20, 3, 2).map(|v| v as f32 as f64);
    let spec = LspSpec {
        lambda_e: 1.0,
        lambda_sd: 1.0,
        target: &y,
        seed: 5,
    };
    let r = remote.eval_lsp(&x, &spec).unwrap();
    let l = local.eval_lsp(&x, &spec).unwrap();
    assert!((r.loss - l.loss).abs() <= 1e-12 * l.loss.abs().max(1.0));
    assert_close(&r.grad, &l.grad);

    assert_close(
        &remote.diffusion_roundtrip(&x, 5, 25, 0).unwrap(),
        &local.diffusion_roundtrip(&x, 5, 25, 0).unwrap(),
    );
    let dr = remote.spatial_distance(&x, &y).unwrap();
    let dl = local.spatial_distance(&x, &y).unwrap();
    assert!(dr.data().iter().zip(dl.data()).all(|(a, b)| (a - b).abs() < 1e-6 * dl.max()));
    assert!(remote.spatial_distance(&x, &x).unwrap().max() == 0.0);

    let cr = remote.clip_align(&x, "Noise-free image").unwrap();
    let cl = local.clip_align(&x, "Noise-free image").unwrap();
    assert!((cr.loss - cl.loss).abs() < 1e-12);
    assert_close(&cr.grad, &cl.grad);

    let mask = Plane::from_fn(16, 20, |r, c| ((r + c) % 3) as f64 / 2.0);
    let lr = remote.masked_lpips(&x, &y, &mask).unwrap();
    let ll = local.masked_lpips(&x, &y, &mask).unwrap();
    assert!((lr.loss - ll.loss).abs() < 1e-12 * ll.loss.max(1.0));
    assert_close(&lr.grad, &ll.grad);
}

#[test]
fn worker_errors_surface_and_connection_survives() {
    let mut remote = RemoteOracle::new(spawn_tcp());
    let x = random_tensor(16, 16, 3, 3);
    match remote.clip_align(&x, "fail") {
        Err(Error::Oracle(m)) => assert!(m.contains("text encoder unavailable")),
        other => panic!("{other:?}"),
    }
    let spec = LspSpec {
        lambda_e: 1.0,
        lambda_sd: 0.0,
        target: &x,
        seed: 999,
    };
    assert!(matches!(remote.eval_lsp(&x, &spec), Err(Error::InvalidOracle(_))));
    assert!(remote.clip_align(&x, "Noise-free image").is_ok());
    // Step counts are checked before anything is sent.
    assert!(matches!(remote.diffusion_roundtrip(&x, 0, 25, 0), Err(Error::InvalidConfig(_))));
}

#[test]
fn unix_socket_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("worker.sock");
    let listener = UnixListener::bind(&path).unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let reader = stream.try_clone().unwrap();
            thread::spawn(move || serve(stream, reader));
        }
    });
    let endpoint: Endpoint = format!("unix:{}", path.display()).parse().unwrap();
    let mut remote = RemoteOracle::new(endpoint);
    let x = random_tensor(16, 16, 1, 4);
    let out = remote.diffusion_roundtrip(&x, 5, 25, 0).unwrap();
    assert_eq!(out.shape(), x.shape());
}

#[test]
fn spot_check_over_the_wire() {
    let mut remote = RemoteOracle::new(spawn_tcp());
    let x = random_tensor(16, 16, 3, 6);
    let y = random_tensor(16, 16, 3, 7);
    let spec = LspSpec {
        lambda_e: 1.0,
        lambda_sd: 0.0,
        target: &y,
        seed: 1,
    };
    // f32 losses limit the finite-difference resolution; the worker
    // tolerance is 5e-2.
    let spots = spot_check_lsp_gradient(&mut remote, &x, &spec, 8, 1e-2, 9).unwrap();
    assert_eq!(spots.len(), 8);
    for s in spots {
        assert!(s.relative_error(1e-6) < 5e-2, "{s:?}");
    }
}

#[test]
fn dead_worker_is_an_io_error_and_reconnects() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let mut first = true;
        for stream in listener.incoming().flatten() {
            if first {
                // Hang up mid-session.
                first = false;
                drop(stream);
                continue;
            }
            let reader = stream.try_clone().unwrap();
            thread::spawn(move || serve(stream, reader));
        }
    });
    let mut remote = RemoteOracle::new(Endpoint::Tcp(addr.to_string()));
    let x = random_tensor(16, 16, 3, 8);
    assert!(remote.diffusion_roundtrip(&x, 5, 25, 0).is_err());
    assert!(remote.diffusion_roundtrip(&x, 5, 25, 0).is_ok());
}
